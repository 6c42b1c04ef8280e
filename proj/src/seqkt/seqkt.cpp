// SPDX-License-Identifier: Apache-2.0
#include "llmkt/seqkt/seqkt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <map>
#include <random>

#include "llmkt/data/data.hpp"
#include "llmkt/eval/metrics.hpp"
#include "llmkt/numcore/ops.hpp"
#include "llmkt/numcore/optim.hpp"

namespace llmkt::seqkt {

using namespace numcore;

namespace {

constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

void check_step(const SeqEncoderModel& m, const SeqStep& s) {
    if (m.has_questions() && (s.question_id < 0 || s.question_id >= m.config.n_questions))
        throw ContractError("question id " + std::to_string(s.question_id) + " outside [0, " +
                            std::to_string(m.config.n_questions) + ")");
    if (m.has_concepts() && (s.concept_id < 0 || s.concept_id >= m.config.n_concepts))
        throw ContractError("concept id " + std::to_string(s.concept_id) + " outside [0, " +
                            std::to_string(m.config.n_concepts) + ")");
}

int primary_id(const SeqEncoderModel& m, const SeqStep& s) { return m.has_questions() ? s.question_id : s.concept_id; }

Tensor zeros_like_rows(std::size_t rows, std::size_t cols) { return Tensor::zeros({rows, cols}); }

// ---- DKT -------------------------------------------------------------------

/// Hidden states after each of T steps for B padded sequences (row b of step
/// t is steps[b][t]).
std::vector<Tensor> dkt_unroll(const SeqEncoderModel& m, const std::vector<std::vector<SeqStep>>& seqs,
                               std::size_t T) {
    const std::size_t B = seqs.size();
    const std::size_t H = static_cast<std::size_t>(m.config.hidden);
    Tensor h = zeros_like_rows(B, H), c = zeros_like_rows(B, H);
    std::vector<Tensor> out;
    out.reserve(T);
    std::vector<int> qi(B), ci(B);
    const int nq = m.config.n_questions, nc = m.config.n_concepts;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
            const SeqStep s = t < seqs[b].size() ? seqs[b][t] : SeqStep{0, 0, false};
            qi[b] = std::max(s.question_id, 0) + (s.correct ? nq : 0);
            ci[b] = std::max(s.concept_id, 0) + (s.correct ? nc : 0);
        }
        Tensor x;
        if (m.has_questions()) x = embedding(m.param("dkt.in_q"), qi);
        if (m.has_concepts()) {
            Tensor xc = embedding(m.param("dkt.in_c"), ci);
            x = x ? add(x, xc) : xc;
        }
        Tensor gates = add(linear(x, m.param("lstm.w_ih"), m.param("lstm.b")), linear(h, m.param("lstm.w_hh")));
        Tensor ig = sigmoid(slice_cols(gates, 0, H));
        Tensor fg = sigmoid(slice_cols(gates, H, 2 * H));
        Tensor gg = tanh(slice_cols(gates, 2 * H, 3 * H));
        Tensor og = sigmoid(slice_cols(gates, 3 * H, 4 * H));
        c = add(mul(fg, c), mul(ig, gg));
        h = mul(og, tanh(c));
        out.push_back(h);
    }
    return out;
}

struct LossParts {
    Tensor loss;
    std::size_t count = 0;
};

LossParts dkt_loss(const SeqEncoderModel& m, const std::vector<std::vector<SeqStep>>& seqs) {
    std::size_t T = 0;
    for (const auto& s : seqs) T = std::max(T, s.size());
    if (T < 2) throw ContractError("dkt: sequences need at least two steps");
    auto hs = dkt_unroll(m, seqs, T - 1);
    Tensor hcat = concat_rows(hs);  // row t*B + b
    const std::size_t B = seqs.size();
    std::vector<int> qt, ct;
    std::vector<Real> y, w;
    for (std::size_t t = 0; t + 1 < T; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
            const bool valid = t + 1 < seqs[b].size();
            const SeqStep s = valid ? seqs[b][t + 1] : SeqStep{0, 0, false};
            qt.push_back(std::max(s.question_id, 0));
            ct.push_back(std::max(s.concept_id, 0));
            y.push_back(s.correct ? 1.0 : 0.0);
            w.push_back(valid ? 1.0 : 0.0);
        }
    }
    LossParts out;
    for (Real v : w) out.count += v != 0.0;
    if (m.has_questions()) out.loss = bce_with_logits(pick(linear(hcat, m.param("head_q.w"), m.param("head_q.b")), qt), y, w);
    if (m.has_concepts()) {
        Tensor lc = bce_with_logits(pick(linear(hcat, m.param("head_c.w"), m.param("head_c.b")), ct), y, w);
        out.loss = out.loss ? add(out.loss, lc) : lc;
    }
    return out;
}

// ---- AKT-lite ----------------------------------------------------------------

struct AktPass {
    Tensor logits;      // [T, 1] main head
    Tensor aux_logits;  // [T, 1] concept head, undefined without concepts+questions
    Tensor weights;     // [T, T]
};

Tensor akt_head(const SeqEncoderModel& m, const std::string& prefix, const Tensor& z) {
    Tensor hid = gelu(linear(z, m.param(prefix + ".w1"), m.param(prefix + ".b1")));
    return linear(hid, m.param(prefix + ".w2"), m.param(prefix + ".b2"));
}

/// Row t attends over steps i < t with t - i <= max_len.
AktPass akt_pass(const SeqEncoderModel& m, std::span<const SeqStep> seq, std::size_t max_len) {
    const std::size_t T = seq.size();
    const std::size_t d = static_cast<std::size_t>(m.config.d_s);
    std::vector<int> qi(T), ci(T), ai(T);
    for (std::size_t t = 0; t < T; ++t) {
        qi[t] = std::max(seq[t].question_id, 0);
        ci[t] = std::max(seq[t].concept_id, 0);
        ai[t] = seq[t].correct ? 1 : 0;
    }
    Tensor x, ec;
    if (m.has_questions()) x = embedding(m.param("akt.emb_q"), qi);
    if (m.has_concepts()) {
        ec = embedding(m.param("akt.emb_c"), ci);
        x = x ? add(x, ec) : ec;
    }
    Tensor y = add(x, embedding(m.param("akt.emb_a"), ai));
    Tensor q = linear(x, m.param("akt.wq"));
    Tensor k = linear(x, m.param("akt.wk"));
    Tensor v = linear(y, m.param("akt.wv"));

    std::vector<Real> dist(T * T, 0.0);
    std::vector<std::uint8_t> keep(T * T, 0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < t; ++i) {
            dist[t * T + i] = static_cast<Real>(t - i);
            keep[t * T + i] = t - i <= max_len;
        }
    Tensor theta = softplus(m.param("akt.theta"));
    Tensor scores = sub(scale(linear(q, k), 1.0 / std::sqrt(static_cast<Real>(d))),
                        scale_by(Tensor::from({T, T}, std::move(dist)), theta));
    AktPass out;
    out.weights = masked_softmax_rows(scores, keep);
    Tensor h = matmul(out.weights, v);
    out.logits = akt_head(m, "head", concat_cols(h, x));
    if (m.has_questions() && m.has_concepts()) out.aux_logits = akt_head(m, "aux", concat_cols(h, ec));
    return out;
}

LossParts akt_loss(const SeqEncoderModel& m, const std::vector<std::vector<SeqStep>>& seqs, std::size_t max_len) {
    std::size_t total = 0;
    for (const auto& s : seqs) total += s.size() > 1 ? s.size() - 1 : 0;
    if (total == 0) throw ContractError("akt: sequences need at least two steps");
    LossParts out;
    out.count = total;
    for (const auto& s : seqs) {
        if (s.size() < 2) continue;
        auto pass = akt_pass(m, s, max_len);
        std::vector<Real> y(s.size()), w(s.size(), 1.0);
        w[0] = 0.0;
        for (std::size_t t = 0; t < s.size(); ++t) y[t] = s[t].correct ? 1.0 : 0.0;
        Tensor l = bce_with_logits(pass.logits, y, w);
        if (pass.aux_logits) l = add(l, bce_with_logits(pass.aux_logits, y, w));
        l = scale(l, static_cast<Real>(s.size() - 1) / static_cast<Real>(total));
        out.loss = out.loss ? add(out.loss, l) : l;
    }
    return out;
}

std::vector<SeqStep> student_steps(const data::StudentSequence& s) {
    std::vector<SeqStep> out;
    out.reserve(s.interactions.size());
    for (const auto& it : s.interactions) out.push_back(to_step(it));
    return out;
}

LossParts batch_loss(const SeqEncoderModel& m, const std::vector<std::vector<SeqStep>>& seqs, std::size_t max_len) {
    for (const auto& s : seqs)
        for (const auto& st : s) check_step(m, st);
    return m.config.kind == SeqKind::DKT ? dkt_loss(m, seqs) : akt_loss(m, seqs, max_len);
}

Real sigmoid_scalar(Real z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

NamedTensors snapshot(const NamedTensors& p) {
    NamedTensors out;
    for (const auto& [k, v] : p) out.emplace(k, v.clone(true));
    return out;
}

}  // namespace

SeqKind parse_seq_kind(std::string_view s) {
    if (s == "dkt" || s == "DKT") return SeqKind::DKT;
    if (s == "akt" || s == "akt-lite" || s == "AKT-lite") return SeqKind::AKTLite;
    throw ContractError("unknown sequence encoder '" + std::string(s) + "'");
}

std::string to_string(SeqKind k) { return k == SeqKind::DKT ? "dkt" : "akt-lite"; }

SeqStep to_step(const data::Interaction& it) {
    SeqStep s;
    s.question_id = it.question_id.value_or(-1);
    s.concept_id = it.concept_ids.empty() ? -1 : it.concept_ids.front();
    s.correct = it.correct;
    return s;
}

std::vector<Tensor> SeqEncoderModel::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [k, v] : params) out.push_back(v);
    return out;
}

const Tensor& SeqEncoderModel::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("sequence model has no parameter " + name);
    return it->second;
}

SeqEncoderModel init_seq_encoder(const SeqConfig& config, std::uint64_t seed) {
    if (config.d_s <= 0 || config.hidden <= 0) throw ContractError("d_s and hidden must be positive");
    if (config.n_questions <= 0 && config.n_concepts <= 0) throw ContractError("sequence model needs an entity set");
    SeqEncoderModel m;
    m.config = config;
    std::mt19937_64 rng(seed);
    const std::size_t d = static_cast<std::size_t>(config.d_s), H = static_cast<std::size_t>(config.hidden);
    const std::size_t nq = static_cast<std::size_t>(std::max(config.n_questions, 0));
    const std::size_t nc = static_cast<std::size_t>(std::max(config.n_concepts, 0));
    auto& p = m.params;
    if (config.kind == SeqKind::DKT) {
        if (nq) p["dkt.in_q"] = randn({2 * nq, d}, 0.1, rng);
        if (nc) p["dkt.in_c"] = randn({2 * nc, d}, 0.1, rng);
        const Real sd = 1.0 / std::sqrt(static_cast<Real>(H));
        p["lstm.w_ih"] = randn({4 * H, d}, sd, rng);
        p["lstm.w_hh"] = randn({4 * H, H}, sd, rng);
        std::vector<Real> b(4 * H, 0.0);
        std::fill(b.begin() + static_cast<std::ptrdiff_t>(H), b.begin() + static_cast<std::ptrdiff_t>(2 * H), 1.0);
        p["lstm.b"] = Tensor::from({4 * H}, b, true);
        if (nq) {
            p["head_q.w"] = randn({nq, H}, sd, rng);
            p["head_q.b"] = Tensor::zeros({nq}, true);
        }
        if (nc) {
            p["head_c.w"] = randn({nc, H}, sd, rng);
            p["head_c.b"] = Tensor::zeros({nc}, true);
        }
    } else {
        if (nq) p["akt.emb_q"] = randn({nq, d}, 0.1, rng);
        if (nc) p["akt.emb_c"] = randn({nc, d}, 0.1, rng);
        p["akt.emb_a"] = randn({2, d}, 0.1, rng);
        const Real sd = 1.0 / std::sqrt(static_cast<Real>(d));
        p["akt.wq"] = randn({d, d}, sd, rng);
        p["akt.wk"] = randn({d, d}, sd, rng);
        p["akt.wv"] = randn({d, d}, sd, rng);
        p["akt.theta"] = Tensor::from({1}, {std::log(std::expm1(0.1))}, true);
        auto head = [&](const std::string& name) {
            p[name + ".w1"] = randn({H, 2 * d}, 1.0 / std::sqrt(static_cast<Real>(2 * d)), rng);
            p[name + ".b1"] = Tensor::zeros({H}, true);
            p[name + ".w2"] = randn({1, H}, 1.0 / std::sqrt(static_cast<Real>(H)), rng);
            p[name + ".b2"] = Tensor::zeros({1}, true);
        };
        head("head");
        if (nq && nc) head("aux");
    }
    return m;
}

std::vector<Real> dkt_forward(const SeqEncoderModel& m, std::span<const SeqStep> history) {
    if (m.config.kind != SeqKind::DKT) throw ContractError("dkt_forward on a non-DKT model");
    for (const auto& s : history) check_step(m, s);
    NoGradGuard ng;
    const std::size_t H = static_cast<std::size_t>(m.config.hidden);
    Tensor h = Tensor::zeros({1, H});
    if (!history.empty()) h = dkt_unroll(m, {std::vector<SeqStep>(history.begin(), history.end())}, history.size()).back();
    const bool q = m.has_questions();
    Tensor logits = linear(h, m.param(q ? "head_q.w" : "head_c.w"), m.param(q ? "head_q.b" : "head_c.b"));
    std::vector<Real> out(logits.data().begin(), logits.data().end());
    for (auto& v : out) v = sigmoid_scalar(v);
    return out;
}

std::vector<Real> akt_attention_weights(const SeqEncoderModel& m, std::span<const SeqStep> history,
                                        const SeqStep& target) {
    if (m.config.kind != SeqKind::AKTLite) throw ContractError("akt_attention_weights on a non-AKT model");
    if (history.empty()) throw ContractError("attention needs a nonempty history");
    std::vector<SeqStep> seq(history.begin(), history.end());
    seq.push_back(target);
    for (const auto& s : seq) check_step(m, s);
    NoGradGuard ng;
    auto pass = akt_pass(m, seq, kUnlimited);
    const std::size_t T = seq.size();
    auto row = pass.weights.data().subspan((T - 1) * T, T - 1);
    return {row.begin(), row.end()};
}

Real akt_forward(const SeqEncoderModel& m, std::span<const SeqStep> history, const SeqStep& target) {
    if (m.config.kind != SeqKind::AKTLite) throw ContractError("akt_forward on a non-AKT model");
    std::vector<SeqStep> seq(history.begin(), history.end());
    seq.push_back(target);
    for (const auto& s : seq) check_step(m, s);
    NoGradGuard ng;
    auto pass = akt_pass(m, seq, kUnlimited);
    return sigmoid_scalar(pass.logits.data().back());
}

Real akt_decay(const SeqEncoderModel& m) {
    const Real raw = m.param("akt.theta").at(0);
    return raw > 30 ? raw : std::log1p(std::exp(raw));
}

void set_akt_decay(SeqEncoderModel& m, Real theta) {
    if (!(theta > 0)) throw ContractError("decay must be positive");
    auto t = m.params.at("akt.theta");
    t.mutable_data()[0] = theta > 30 ? theta : std::log(std::expm1(theta));
}

Real seq_predict(const SeqEncoderModel& m, std::span<const SeqStep> history, const SeqStep& target) {
    if (m.config.kind == SeqKind::AKTLite) return akt_forward(m, history, target);
    check_step(m, target);
    return dkt_forward(m, history)[static_cast<std::size_t>(primary_id(m, target))];
}

std::vector<Real> predict_windows(const SeqEncoderModel& m, const data::Dataset& ds,
                                  std::span<const data::HistoryWindow> windows) {
    NoGradGuard ng;
    std::vector<Real> out(windows.size(), 0.0);
    std::map<std::size_t, std::vector<std::size_t>> by_student;
    for (std::size_t i = 0; i < windows.size(); ++i) by_student[windows[i].student].push_back(i);
    for (const auto& [student, idx] : by_student) {
        const auto steps = student_steps(ds.students.at(student));
        for (const auto& s : steps) check_step(m, s);
        std::vector<std::size_t> full, truncated;
        std::size_t max_len = 0;
        for (std::size_t i : idx) {
            const auto& w = windows[i];
            if (w.history.size() == w.target_index) full.push_back(i);
            else truncated.push_back(i);
            max_len = std::max(max_len, w.history.size());
        }
        if (m.config.kind == SeqKind::AKTLite) {
            auto pass = akt_pass(m, steps, truncated.empty() ? kUnlimited : max_len);
            for (std::size_t i : idx) out[i] = sigmoid_scalar(pass.logits.data()[windows[i].target_index]);
            continue;
        }
        const bool q = m.has_questions();
        const Tensor& hw = m.param(q ? "head_q.w" : "head_c.w");
        const Tensor& hb = m.param(q ? "head_q.b" : "head_c.b");
        if (!full.empty()) {
            auto hs = dkt_unroll(m, {steps}, steps.size());
            for (std::size_t i : full) {
                const auto& w = windows[i];
                auto logits = linear(hs[w.target_index - 1], hw, hb);
                out[i] = sigmoid_scalar(logits.data()[static_cast<std::size_t>(primary_id(m, steps[w.target_index]))]);
            }
        }
        if (!truncated.empty()) {
            // Truncated windows of one student share the same length.
            std::map<std::size_t, std::vector<std::size_t>> by_len;
            for (std::size_t i : truncated) by_len[windows[i].history.size()].push_back(i);
            for (const auto& [len, group] : by_len) {
                std::vector<std::vector<SeqStep>> seqs;
                for (std::size_t i : group) {
                    const auto& w = windows[i];
                    seqs.emplace_back(steps.begin() + static_cast<std::ptrdiff_t>(w.target_index - len),
                                      steps.begin() + static_cast<std::ptrdiff_t>(w.target_index));
                }
                auto logits = linear(dkt_unroll(m, seqs, len).back(), hw, hb);
                const std::size_t n = logits.cols();
                for (std::size_t r = 0; r < group.size(); ++r) {
                    const auto& w = windows[group[r]];
                    const auto e = static_cast<std::size_t>(primary_id(m, steps[w.target_index]));
                    out[group[r]] = sigmoid_scalar(logits.data()[r * n + e]);
                }
            }
        }
    }
    return out;
}

Tensor seq_batch_loss(const SeqEncoderModel& m, const std::vector<std::vector<SeqStep>>& seqs, std::size_t max_len) {
    return batch_loss(m, seqs, max_len).loss;
}

Real seq_loss(const SeqEncoderModel& m, const data::Dataset& ds, const std::vector<std::size_t>& students,
              std::size_t max_len) {
    NoGradGuard ng;
    std::vector<std::vector<SeqStep>> seqs;
    for (std::size_t s : students) seqs.push_back(student_steps(ds.students.at(s)));
    return batch_loss(m, seqs, max_len).loss.item();
}

SeqTrainResult train_seq_encoder(const data::Dataset& ds, const std::vector<std::string>& train_ids,
                                 const std::vector<std::string>& valid_ids, const SeqConfig& config,
                                 const SeqTrainConfig& tc) {
    if (tc.epochs < 1 || tc.batch_size < 1 || tc.patience < 1 || !(tc.lr > 0))
        throw ContractError("sequence training config must be positive");
    auto resolve = [&](const std::vector<std::string>& ids) {
        std::vector<std::size_t> out;
        for (const auto& id : ids) {
            const auto s = ds.find_student(id);
            if (s == std::string::npos) throw data::DataError("unknown student " + id);
            if (ds.students[s].interactions.size() >= 2) out.push_back(s);
        }
        return out;
    };
    const auto train = resolve(train_ids);
    const auto valid = resolve(valid_ids);
    if (train.empty()) throw data::DataError("training split has no student with two interactions");
    if (valid.empty()) throw data::DataError("validation split has no student with two interactions");

    SeqTrainResult res;
    res.model = init_seq_encoder(config, tc.seed);
    auto& m = res.model;
    auto params = m.parameters();
    AdamConfig ac;
    ac.weight_decay = tc.weight_decay;
    OptimState state = OptimState::for_params(params, ac);

    std::vector<data::HistoryWindow> vwin;
    for (std::size_t s : valid) {
        auto w = data::window_histories(ds, s, tc.max_len);
        vwin.insert(vwin.end(), w.begin(), w.end());
    }
    std::vector<bool> vlabels;
    for (const auto& w : vwin) vlabels.push_back(w.label);

    std::vector<std::vector<SeqStep>> all_steps(ds.students.size());
    for (std::size_t s : train) all_steps[s] = student_steps(ds.students[s]);

    res.report.initial_loss = seq_loss(m, ds, train, tc.max_len);
    NamedTensors best = snapshot(m.params);
    int since_best = 0;
    std::mt19937_64 rng(tc.seed ^ 0x5eedULL);
    std::vector<std::size_t> order = train;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch_size)) {
            std::vector<std::vector<SeqStep>> seqs;
            for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size)); ++i)
                seqs.push_back(all_steps[order[i]]);
            zero_grads(params);
            auto lp = batch_loss(m, seqs, tc.max_len);
            if (!std::isfinite(lp.loss.item())) throw std::runtime_error("sequence training diverged (non-finite loss)");
            backward(lp.loss);
            adam_step(state, params, tc.lr);
        }
        zero_grads(params);
        m.trained = true;
        res.report.train_loss.push_back(seq_loss(m, ds, train, tc.max_len));
        const auto scores = predict_windows(m, ds, vwin);
        const Real vauc = eval::auc(scores, vlabels);
        res.report.valid_auc.push_back(vauc);
        if (res.report.best_epoch < 0 || vauc > res.report.best_valid_auc) {
            res.report.best_valid_auc = vauc;
            res.report.best_epoch = epoch;
            best = snapshot(m.params);
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            break;
        }
    }
    assign_tensors(best, m.params);
    return res;
}

IdEmbeddings extract_id_embeddings(const SeqEncoderModel& m, std::vector<std::string>* warnings) {
    if (!m.trained && warnings) warnings->push_back("extracting embeddings from an untrained sequence model");
    IdEmbeddings out;
    out.d_s = m.config.d_s;
    const std::size_t d = static_cast<std::size_t>(m.config.d_s);
    auto rows = [&](const std::string& name, int n, bool paired) {
        std::vector<std::vector<Real>> v(static_cast<std::size_t>(n), std::vector<Real>(d));
        const auto data = m.param(name).data();
        for (std::size_t i = 0; i < v.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                v[i][j] = paired ? 0.5 * (data[i * d + j] + data[(i + v.size()) * d + j]) : data[i * d + j];
        return v;
    };
    const bool dkt = m.config.kind == SeqKind::DKT;
    if (m.has_questions()) out.questions = rows(dkt ? "dkt.in_q" : "akt.emb_q", m.config.n_questions, dkt);
    if (m.has_concepts()) out.concepts = rows(dkt ? "dkt.in_c" : "akt.emb_c", m.config.n_concepts, dkt);
    return out;
}

void write_embeddings_csv(const std::filesystem::path& path, const IdEmbeddings& emb) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "kind,id,d_s,values\n";
    char buf[32];
    auto dump = [&](const char* kind, const std::vector<std::vector<Real>>& rows) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            os << kind << ',' << i << ',' << emb.d_s << ",\"";
            for (std::size_t j = 0; j < rows[i].size(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", rows[i][j]);
                os << (j ? " " : "") << buf;
            }
            os << "\"\n";
        }
    };
    dump("question", emb.questions);
    dump("concept", emb.concepts);
}

void save_seq_model(const std::filesystem::path& stem, const SeqEncoderModel& m) {
    save_tensors(std::filesystem::path(stem).concat(".ckpt"), m.params);
    nlohmann::ordered_json j;
    j["kind"] = to_string(m.config.kind);
    j["d_s"] = m.config.d_s;
    j["hidden"] = m.config.hidden;
    j["n_questions"] = m.config.n_questions;
    j["n_concepts"] = m.config.n_concepts;
    j["trained"] = m.trained;
    j["checksum"] = checksum(m.params);
    std::ofstream os(std::filesystem::path(stem).concat(".json"), std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest for " + stem.string());
    os << j.dump(2) << '\n';
}

SeqEncoderModel load_seq_model(const std::filesystem::path& stem) {
    std::ifstream is(std::filesystem::path(stem).concat(".json"), std::ios::binary);
    if (!is) throw std::runtime_error("missing sequence model manifest " + stem.string() + ".json");
    const auto j = nlohmann::json::parse(is);
    SeqConfig c;
    c.kind = parse_seq_kind(j.at("kind").get<std::string>());
    c.d_s = j.at("d_s").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.n_questions = j.at("n_questions").get<int>();
    c.n_concepts = j.at("n_concepts").get<int>();
    SeqEncoderModel m = init_seq_encoder(c, 0);
    assign_tensors(load_tensors(std::filesystem::path(stem).concat(".ckpt")), m.params);
    m.trained = j.at("trained").get<bool>();
    if (j.contains("checksum") && j["checksum"].get<std::uint64_t>() != checksum(m.params))
        throw std::runtime_error("sequence model checksum mismatch for " + stem.string());
    return m;
}

}  // namespace llmkt::seqkt
