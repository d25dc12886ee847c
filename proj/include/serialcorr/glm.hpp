#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "serialcorr/common.hpp"

namespace serialcorr::glm {

/// OLS fit of every column of Y (T x N) on X (T x K).
struct GLMFit {
    Eigen::MatrixXd beta;       // K x N
    Eigen::MatrixXd residuals;  // T x N, exactly Y - X beta
    Eigen::VectorXd sigma2;     // N, RSS / dof
    std::size_t dof = 0;        // T - rank(X)
};

/// Throws ValidationError listing dependent columns when X is rank deficient.
GLMFit ols_fit(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X);

/// Biased (divide-by-T), mean-removed autocovariance for lags 0..max_lag.
std::vector<double> autocovariance(std::span<const double> x, std::size_t max_lag);

/// Averages autocovariances after normalizing each by its lag-0 value, so the
/// pooled result has gamma(0) = 1. Zero-variance entries are skipped and
/// reported in `skipped` when non-null. Summation order is the input order.
std::vector<double> pool_autocov(const std::vector<std::vector<double>>& per_voxel, std::size_t* skipped = nullptr);

/// Pooled normalized autocovariance of the residual columns (T x N).
std::vector<double> pooled_autocov(const Eigen::MatrixXd& residuals, std::size_t max_lag, unsigned threads = 1);

struct ARCoeffs {
    std::vector<double> a;           // e_t = sum_k a[k-1] e_{t-k} + z_t
    double innovation_var = 1.0;
    std::vector<double> reflection;  // partial autocorrelations from Levinson-Durbin
    bool stationary = true;
    std::string scheme;              // "AR(1)", "AR(p)", ...

    std::size_t order() const { return a.size(); }
};

/// True when all roots of 1 - sum a_k z^k lie strictly outside the unit circle.
bool is_stationary(std::span<const double> a);

/// Levinson-Durbin solution of the Yule-Walker equations.
ARCoeffs yule_walker(std::span<const double> gamma, std::size_t p);

/// The AR(1) whitening scheme: a1 = gamma(1) / gamma(0).
ARCoeffs ar1_pooled_approx(std::span<const double> gamma);

struct Whitened {
    Eigen::MatrixXd Y;
    Eigen::MatrixXd X;
};

/// Applies the causal AR filter to rows t >= p of Y and X; the first p rows are dropped.
Whitened whiten(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const ARCoeffs& ar);

// --- covariance dictionary (FAST-style) ----------------------------------------------

struct CovComponent {
    enum class Kind { identity, exponential };
    Kind kind = Kind::identity;
    double decay_s = 0.0;  // exponential: Q(tau) = exp(-|tau| * TR / decay_s)
    std::string name;
};

struct CovDictionary {
    std::vector<CovComponent> components;
    std::vector<double> weights;  // lambda_j after estimation
    std::size_t iterations = 0;
    std::vector<std::vector<double>> trace;  // lambda after every iteration
    double tr_s = 1.0;

    /// V(lambda) = sum_j lambda_j Q_j as a dense T x T matrix.
    Eigen::MatrixXd covariance(std::size_t T) const;
};

/// Identity plus exponential components with decay constants 0.2 s, 1 s and 4 s.
CovDictionary default_dictionary(double tr_s);
CovDictionary dictionary_from_decays(double tr_s, const std::vector<double>& decays_s, bool with_identity = true);

/// Dense matrix for one component.
Eigen::MatrixXd component_matrix(const CovComponent& c, std::size_t T, double tr_s);

struct RemlOptions {
    std::size_t max_iterations = 64;
    double tolerance = 1e-6;  // relative step size
    std::size_t max_halvings = 20;
};

/// Restricted maximum likelihood over the dictionary weights by Fisher
/// scoring, pooling all columns of Y. Non-convergence and failures to keep
/// V positive definite raise NumericalError carrying the iteration trace.
CovDictionary reml_cov_dictionary(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, CovDictionary dictionary,
                                  const RemlOptions& opt = {});

/// Symmetric inverse square root V^{-1/2}.
Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& V);

/// Applies a full whitening matrix to data and design.
Whitened whiten_matrix(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& W);

// --- inference -----------------------------------------------------------------------

struct StatMap {
    enum class Kind { t, F };
    Kind kind = Kind::t;
    Eigen::VectorXd stat;     // NaN where undefined
    Eigen::VectorXd p;        // upper-tail p-values (one-sided for t)
    double dof1 = 1.0;
    double dof2 = 0.0;
    std::size_t missing = 0;  // voxels with zero residual variance
};

/// t map for a single-row contrast, F map (extra sum of squares) otherwise.
StatMap glm_inference(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& contrast);

struct LjungBox {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t lags = 0;
};

LjungBox ljung_box(std::span<const double> x, std::size_t lags);

}  // namespace serialcorr::glm
