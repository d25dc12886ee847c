#include "serialcorr/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace serialcorr {

std::vector<std::size_t> dependent_columns(const Eigen::MatrixXd& X, double rel_tol) {
    std::vector<std::size_t> dependent;
    std::vector<Eigen::VectorXd> basis;
    const double scale = X.size() > 0 ? std::max(1.0, X.cwiseAbs().maxCoeff()) : 1.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        Eigen::VectorXd v = X.col(j);
        const double norm0 = v.norm();
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) v -= q.dot(v) * q;
        const double norm = v.norm();
        if (norm <= rel_tol * std::max(norm0, scale * std::sqrt(static_cast<double>(X.rows())))) {
            dependent.push_back(static_cast<std::size_t>(j));
        } else {
            basis.push_back(v / norm);
        }
    }
    return dependent;
}

double compensated_sum(const double* x, std::size_t n) {
    double sum = 0.0, c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = x[i] - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum;
}

}  // namespace serialcorr
