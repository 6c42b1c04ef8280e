// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "llmkt/eval/metrics.hpp"

using namespace llmkt::eval;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& y) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] && !y[j]) {
                den += 1;
                num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return num / den;
}

}  // namespace

TEST_CASE("rank AUC equals the pairwise count on random instances with ties") {
    std::mt19937_64 rng(20240611);
    int done = 0;
    while (done < 200) {
        const std::size_t n = 2 + rng() % 63;
        std::vector<double> s(n);
        std::vector<bool> y(n);
        const int levels = 1 + static_cast<int>(rng() % 6);  // few levels force ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = (rng() % 2) ? static_cast<double>(rng() % levels) / levels
                               : std::uniform_real_distribution<double>(0, 1)(rng);
            y[i] = rng() % 2;
        }
        const bool both = std::find(y.begin(), y.end(), true) != y.end() && std::find(y.begin(), y.end(), false) != y.end();
        if (!both) {
            CHECK_THROWS_AS(auc(s, y), MetricError);
            continue;
        }
        REQUIRE(std::abs(auc(s, y) - pairwise_auc(s, y)) <= 1e-12);
        ++done;
    }
}

TEST_CASE("small worked example") {
    std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    std::vector<bool> y{false, false, true, true};
    CHECK(auc(s, y) == doctest::Approx(0.75));
    CHECK(acc(s, y) == doctest::Approx(0.75));
    CHECK(auc(std::vector<double>{0.5, 0.5}, {true, false}) == 0.5);
}

TEST_CASE("negating scores gives one minus the AUC") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(50), neg(50);
    std::vector<bool> y(50);
    for (std::size_t i = 0; i < 50; ++i) {
        s[i] = std::round(u(rng) * 10) / 10;
        neg[i] = -s[i];
        y[i] = i % 3 == 0;
    }
    CHECK(auc(neg, y) == doctest::Approx(1.0 - auc(s, y)).epsilon(1e-12));
    std::vector<bool> flipped(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = !y[i];
    CHECK(auc(s, flipped) == doctest::Approx(1.0 - auc(s, y)).epsilon(1e-12));
}

TEST_CASE("random scores score about one half in accuracy") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    const std::size_t n = 200000;
    std::vector<double> s(n);
    std::vector<bool> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = u(rng);
        y[i] = u(rng) < 0.5;
    }
    CHECK(std::abs(acc(s, y) - 0.5) < 0.01);
    CHECK(std::abs(auc(s, y) - 0.5) < 0.01);
}

TEST_CASE("length mismatch and empty inputs are errors") {
    CHECK_THROWS_AS(auc(std::vector<double>{0.1}, {true, false}), MetricError);
    CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, {true, true}), MetricError);
    CHECK_THROWS_AS(acc(std::vector<double>{}, {}), MetricError);
    CHECK(acc(std::vector<double>{0.5, 0.49}, {true, false}) == 1.0);
}

TEST_CASE("accuracy against complemented labels sums to one") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 64;
        std::vector<double> s(n);
        std::vector<bool> y(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            do s[i] = u(rng);
            while (s[i] == 0.5);
            y[i] = rng() % 2;
            flipped[i] = !y[i];
        }
        CHECK(acc(s, y) + acc(s, flipped) == doctest::Approx(1.0).epsilon(1e-15));
    }
    std::vector<double> sure{1.0, 1.0, 0.0};
    CHECK(acc(sure, {true, true, false}) == 1.0);
    CHECK(acc(sure, {false, false, true}) == 0.0);
}
