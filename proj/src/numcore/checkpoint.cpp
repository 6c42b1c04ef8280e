// SPDX-License-Identifier: Apache-2.0
#include "llmkt/numcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace llmkt::numcore {

namespace {

constexpr char kMagic[8] = {'L', 'L', 'M', 'K', 'T', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw std::runtime_error("truncated checkpoint " + path.string());
    }
    return v;
}

void fnv(std::uint64_t& h, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<std::uint64_t>(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint64_t>(os, t.dim());
        for (auto d : t.shape()) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(Real)));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

NamedTensors load_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path.string());
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = get<std::uint64_t>(is, path);
    NamedTensors out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = get<std::uint64_t>(is, path);
        if (len > (1u << 20)) throw std::runtime_error("corrupt tensor name in " + path.string());
        std::string name(len, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("truncated checkpoint");
        const auto rank = get<std::uint64_t>(is, path);
        if (rank > 8) throw std::runtime_error("corrupt tensor rank in " + path.string());
        Shape shape(rank);
        for (auto& d : shape) d = get<std::uint64_t>(is, path);
        std::vector<Real> values(shape_numel(shape));
        if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(Real)))) {
            throw std::runtime_error("truncated tensor data for '" + name + "'");
        }
        out.emplace(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    return out;
}

void assign_tensors(const NamedTensors& src, NamedTensors& dst, const std::string& prefix) {
    for (auto& [name, t] : dst) {
        auto it = src.find(prefix + name);
        if (it == src.end()) throw std::runtime_error("checkpoint lacks tensor '" + prefix + name + "'");
        if (it->second.shape() != t.shape()) {
            throw std::runtime_error("checkpoint tensor '" + prefix + name + "' has shape " +
                                     shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
        }
        auto d = t.mutable_data();
        std::copy(it->second.data().begin(), it->second.data().end(), d.begin());
    }
}

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ull;
    for (auto d : t.shape()) fnv(h, &d, sizeof(d));
    fnv(h, t.data().data(), t.numel() * sizeof(Real));
    return h;
}

std::uint64_t checksum(const NamedTensors& tensors) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : tensors) {
        fnv(h, name.data(), name.size());
        const auto c = checksum(t);
        fnv(h, &c, sizeof(c));
    }
    return h;
}

Tensor randn(Shape shape, Real stddev, std::mt19937_64& rng, bool requires_grad) {
    std::normal_distribution<Real> dist(0.0, stddev);
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace llmkt::numcore
