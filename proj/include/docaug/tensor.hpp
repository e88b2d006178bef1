#pragma once

#include <Eigen/Core>

namespace docaug {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Additive attention mask value. exp() of it underflows to exactly zero in
// float and double, while staying finite.
inline constexpr double kMaskValue = -1e9;

}  // namespace docaug
