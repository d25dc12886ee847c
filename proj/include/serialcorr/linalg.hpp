#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace serialcorr {

/// Indices of columns that are linearly dependent on earlier columns (empty when full rank).
std::vector<std::size_t> dependent_columns(const Eigen::MatrixXd& X, double rel_tol = 1e-10);

/// Kahan-compensated sum in index order.
double compensated_sum(const double* x, std::size_t n);

}  // namespace serialcorr
