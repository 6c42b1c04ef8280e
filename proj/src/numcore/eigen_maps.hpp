// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "llmkt/numcore/tensor.hpp"

namespace llmkt::numcore {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

inline Eigen::Map<RowMat> as_mat(Buffer& v, std::size_t r, std::size_t c) {
    return Eigen::Map<RowMat>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline Eigen::Map<const RowMat> as_cmat(std::span<const Real> v, std::size_t r, std::size_t c) {
    return Eigen::Map<const RowMat>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline Eigen::Map<const RowMat> as_cmat(const Buffer& v, std::size_t r, std::size_t c) {
    return as_cmat(std::span<const Real>(v), r, c);
}
inline Eigen::Map<RowVec> as_row(Buffer& v, std::size_t n) {
    return Eigen::Map<RowVec>(v.data(), static_cast<Eigen::Index>(n));
}
inline Eigen::Map<const RowVec> as_crow(std::span<const Real> v, std::size_t n) {
    return Eigen::Map<const RowVec>(v.data(), static_cast<Eigen::Index>(n));
}

}  // namespace llmkt::numcore
