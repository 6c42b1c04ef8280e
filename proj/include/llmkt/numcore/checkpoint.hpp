// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "llmkt/numcore/tensor.hpp"

namespace llmkt::numcore {

using NamedTensors = std::map<std::string, Tensor>;

/// Binary container: magic "LLMKTCKP", u32 version, u64 count, then per
/// tensor: u64 name length, name bytes, u64 rank, u64 dims, f64 values
/// (little endian, row major). Values round-trip exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

/// Copies values of `src` into same-named tensors of `dst`; throws on a
/// missing name or shape mismatch.
void assign_tensors(const NamedTensors& src, NamedTensors& dst, const std::string& prefix = "");

/// FNV-1a over shapes and raw value bytes; used to prove tensors are untouched.
std::uint64_t checksum(const Tensor& t);
std::uint64_t checksum(const NamedTensors& tensors);

Tensor randn(Shape shape, Real stddev, std::mt19937_64& rng, bool requires_grad = true);

}  // namespace llmkt::numcore
