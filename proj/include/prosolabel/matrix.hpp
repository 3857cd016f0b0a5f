#pragma once

#include <Eigen/Dense>

namespace prosolabel {

// Row-major so that a T x D block matches the layer-major, frame-major layout
// of feature files.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace prosolabel
