#pragma once

#include <Eigen/Dense>

namespace motif {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Validity of each time step; contiguous and left-aligned.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

inline Mask full_mask(Eigen::Index steps) { return Mask::Constant(steps, true); }

inline Eigen::Index valid_count(const Mask& mask) { return mask.count(); }

}  // namespace motif
