#include "serialcorr/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "serialcorr/linalg.hpp"

namespace serialcorr::glm {

namespace {

std::string join_indices(const std::vector<std::size_t>& idx) {
    std::ostringstream os;
    for (std::size_t i = 0; i < idx.size(); ++i) os << (i ? ", " : "") << idx[i];
    return os.str();
}

// Durbin recursion on a normalized autocorrelation r[1..m]. Returns false when
// the Toeplitz matrix is not positive definite.
struct Durbin {
    std::vector<double> y;           // solves T_m y = -r
    std::vector<double> reflection;  // alpha_k
    double log_det = 0.0;            // log det T_{m+1} (unit diagonal)
    double final_error = 1.0;        // prediction error variance of order m
};

bool durbin(const double* r, std::size_t m, Durbin& out) {
    out.y.assign(m, 0.0);
    out.reflection.assign(m, 0.0);
    out.log_det = 0.0;
    out.final_error = 1.0;
    if (m == 0) return true;
    std::vector<double> z(m);
    double beta = 1.0;
    double alpha = -r[0];
    out.y[0] = alpha;
    out.reflection[0] = alpha;
    for (std::size_t k = 1; k <= m; ++k) {
        beta *= (1.0 - alpha * alpha);
        if (!(beta > 0.0) || !std::isfinite(beta)) return false;
        out.log_det += std::log(beta);
        if (k == m) break;
        double acc = r[k];
        for (std::size_t i = 0; i < k; ++i) acc += r[k - 1 - i] * out.y[i];
        alpha = -acc / beta;
        if (!(std::abs(alpha) < 1.0)) return false;
        for (std::size_t i = 0; i < k; ++i) z[i] = out.y[i] + alpha * out.y[k - 1 - i];
        for (std::size_t i = 0; i < k; ++i) out.y[i] = z[i];
        out.y[k] = alpha;
        out.reflection[k] = alpha;
    }
    out.final_error = beta;
    return true;
}

// First column of a Toeplitz dictionary combination.
std::vector<double> toeplitz_column(const CovDictionary& d, const std::vector<double>& w, std::size_t T) {
    std::vector<double> col(T, 0.0);
    for (std::size_t j = 0; j < d.components.size(); ++j) {
        const auto& c = d.components[j];
        if (c.kind == CovComponent::Kind::identity) {
            col[0] += w[j];
        } else {
            const double rho = std::exp(-d.tr_s / c.decay_s);
            double v = 1.0;
            for (std::size_t k = 0; k < T; ++k, v *= rho) col[k] += w[j] * v;
        }
    }
    return col;
}

// Inverse and log-determinant of a symmetric positive definite Toeplitz matrix
// (Trench's algorithm). Returns false when not positive definite.
bool toeplitz_inverse(const std::vector<double>& col, Eigen::MatrixXd& inv, double& log_det) {
    const std::size_t n = col.size();
    const double g0 = col[0];
    if (!(g0 > 0.0)) return false;
    std::vector<double> r(n > 1 ? n - 1 : 0);
    for (std::size_t k = 1; k < n; ++k) r[k - 1] = col[k] / g0;
    Durbin d;
    if (!durbin(r.data(), r.size(), d)) return false;
    log_det = static_cast<double>(n) * std::log(g0) + d.log_det;

    inv.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    if (n == 1) {
        inv(0, 0) = 1.0 / g0;
        return true;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < n - 1; ++i) dot += r[i] * d.y[i];
    const double gamma = 1.0 / (1.0 + dot);
    // 1-based v(1..n-1) = gamma * y(n-1..1)
    std::vector<double> v(n, 0.0);
    for (std::size_t i = 1; i <= n - 1; ++i) v[i] = gamma * d.y[n - 1 - i];
    auto B = [&](std::size_t i, std::size_t j) -> double& {
        return inv(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1));
    };
    auto set = [&](std::size_t i, std::size_t j, double val) {
        B(i, j) = val;
        B(j, i) = val;
        B(n + 1 - j, n + 1 - i) = val;
        B(n + 1 - i, n + 1 - j) = val;
    };
    set(1, 1, gamma);
    for (std::size_t j = 2; j <= n; ++j) set(1, j, v[n + 1 - j]);
    for (std::size_t i = 2; i <= (n - 1) / 2 + 1; ++i)
        for (std::size_t j = i; j <= n - i + 1; ++j)
            set(i, j, B(i - 1, j - 1) + (v[n + 1 - j] * v[n + 1 - i] - v[i - 1] * v[j - 1]) / gamma);
    inv /= g0;
    return true;
}

// Q m for one component, O(T) per column.
void apply_component(const CovComponent& c, double tr_s, const Eigen::MatrixXd& M, Eigen::MatrixXd& out) {
    out.resize(M.rows(), M.cols());
    if (c.kind == CovComponent::Kind::identity) {
        out = M;
        return;
    }
    const double rho = std::exp(-tr_s / c.decay_s);
    const Eigen::Index T = M.rows();
    Eigen::VectorXd f(T), b(T);
    for (Eigen::Index col = 0; col < M.cols(); ++col) {
        f(0) = M(0, col);
        for (Eigen::Index t = 1; t < T; ++t) f(t) = M(t, col) + rho * f(t - 1);
        b(T - 1) = M(T - 1, col);
        for (Eigen::Index t = T - 2; t >= 0; --t) b(t) = M(t, col) + rho * b(t + 1);
        out.col(col) = f + b - M.col(col);
    }
}

struct RemlState {
    double objective = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd gradient;
    Eigen::MatrixXd information;
};

// Restricted log-likelihood (up to a constant), its gradient and the Fisher
// information. Returns false when V is not positive definite.
bool reml_evaluate(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const CovDictionary& d,
                   const std::vector<double>& w, bool derivatives, RemlState& s) {
    const auto T = static_cast<std::size_t>(Y.rows());
    const double N = static_cast<double>(Y.cols());
    Eigen::MatrixXd Vinv;
    double log_det_v = 0.0;
    if (!toeplitz_inverse(toeplitz_column(d, w, T), Vinv, log_det_v)) return false;
    const Eigen::MatrixXd W = Vinv * X;
    const Eigen::MatrixXd G = X.transpose() * W;
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::MatrixXd Lg = llt.matrixL();
    const double log_det_g = 2.0 * Lg.diagonal().array().log().sum();
    const Eigen::MatrixXd P = Vinv - W * llt.solve(W.transpose());
    const Eigen::MatrixXd Z = P * Y;
    const double quad = (Y.array() * Z.array()).sum();
    s.objective = -0.5 * N * log_det_v - 0.5 * N * log_det_g - 0.5 * quad;
    if (!std::isfinite(s.objective)) return false;
    if (!derivatives) return true;

    const std::size_t J = d.components.size();
    std::vector<Eigen::MatrixXd> QP(J);
    s.gradient.resize(static_cast<Eigen::Index>(J));
    s.information.resize(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(J));
    Eigen::MatrixXd QZ;
    for (std::size_t j = 0; j < J; ++j) {
        apply_component(d.components[j], d.tr_s, P, QP[j]);
        apply_component(d.components[j], d.tr_s, Z, QZ);
        const double zqz = (Z.array() * QZ.array()).sum();
        s.gradient(static_cast<Eigen::Index>(j)) = -0.5 * N * QP[j].trace() + 0.5 * zqz;
    }
    for (std::size_t i = 0; i < J; ++i)
        for (std::size_t j = i; j < J; ++j) {
            const double v = 0.5 * N * (QP[i].array() * QP[j].transpose().array()).sum();
            s.information(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            s.information(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    return true;
}

std::string trace_text(const std::vector<std::vector<double>>& trace) {
    std::ostringstream os;
    os << "iteration trace:";
    for (std::size_t it = 0; it < trace.size(); ++it) {
        os << "\n  " << it << ":";
        for (double v : trace[it]) os << ' ' << v;
    }
    return os.str();
}

}  // namespace

GLMFit ols_fit(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X) {
    if (Y.rows() != X.rows()) throw ValidationError("ols_fit: Y and X row counts differ");
    if (X.cols() == 0) throw ValidationError("ols_fit: empty design");
    if (X.rows() <= X.cols()) throw ValidationError("ols_fit: need more rows than columns");
    const auto dep = dependent_columns(X);
    if (!dep.empty()) throw ValidationError("ols_fit: design is rank deficient; dependent columns: " + join_indices(dep));

    GLMFit fit;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    fit.beta = qr.solve(Y);
    fit.residuals = Y - X * fit.beta;
    fit.dof = static_cast<std::size_t>(X.rows() - X.cols());
    fit.sigma2 = fit.residuals.colwise().squaredNorm().transpose() / static_cast<double>(fit.dof);
    return fit;
}

std::vector<double> autocovariance(std::span<const double> x, std::size_t max_lag) {
    const std::size_t T = x.size();
    if (max_lag >= T) throw ValidationError("autocovariance: max_lag must be below the series length");
    const double mean = compensated_sum(x.data(), T) / static_cast<double>(T);
    std::vector<double> c(T);
    for (std::size_t t = 0; t < T; ++t) c[t] = x[t] - mean;
    std::vector<double> g(max_lag + 1, 0.0);
    for (std::size_t k = 0; k <= max_lag; ++k) {
        double s = 0.0;
        for (std::size_t t = k; t < T; ++t) s += c[t] * c[t - k];
        g[k] = s / static_cast<double>(T);
    }
    return g;
}

std::vector<double> pool_autocov(const std::vector<std::vector<double>>& per_voxel, std::size_t* skipped) {
    if (per_voxel.empty()) throw ValidationError("pool_autocov: empty mask");
    const std::size_t L = per_voxel.front().size();
    std::vector<double> sum(L, 0.0), comp(L, 0.0);
    std::size_t used = 0, skip = 0;
    for (const auto& g : per_voxel) {
        if (g.size() != L) throw ValidationError("pool_autocov: inconsistent lag counts");
        if (!(g[0] > 0.0)) {
            ++skip;
            continue;
        }
        ++used;
        for (std::size_t k = 0; k < L; ++k) {
            const double y = g[k] / g[0] - comp[k];
            const double t = sum[k] + y;
            comp[k] = (t - sum[k]) - y;
            sum[k] = t;
        }
    }
    if (skipped) *skipped = skip;
    if (used == 0) throw ValidationError("pool_autocov: every voxel has zero variance");
    for (auto& v : sum) v /= static_cast<double>(used);
    sum[0] = 1.0;
    return sum;
}

std::vector<double> pooled_autocov(const Eigen::MatrixXd& residuals, std::size_t max_lag, unsigned threads) {
    const auto N = static_cast<std::size_t>(residuals.cols());
    if (N == 0) throw ValidationError("pooled_autocov: empty mask");
    std::vector<std::vector<double>> per(N);
    parallel_for(N, threads, [&](std::size_t n) {
        const auto col = residuals.col(static_cast<Eigen::Index>(n));
        per[n] = autocovariance(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), max_lag);
    });
    return pool_autocov(per);
}

bool is_stationary(std::span<const double> a) {
    const std::size_t p = a.size();
    if (p == 0) return true;
    for (double v : a)
        if (!std::isfinite(v)) return false;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t k = 0; k < p; ++k) C(0, static_cast<Eigen::Index>(k)) = a[k];
    for (std::size_t k = 1; k < p; ++k) C(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) = 1.0;
    const Eigen::VectorXcd ev = C.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (!(std::abs(ev(i)) < 1.0)) return false;
    return true;
}

ARCoeffs yule_walker(std::span<const double> gamma, std::size_t p) {
    if (gamma.size() <= p) throw ValidationError("yule_walker: need autocovariance up to lag p");
    if (!(gamma[0] > 0.0)) throw NumericalError("yule_walker: gamma(0) must be positive");
    std::vector<double> r(p);
    for (std::size_t k = 1; k <= p; ++k) r[k - 1] = gamma[k] / gamma[0];
    // Durbin on r[1..p] with the order-p solution obtained from one extra step.
    ARCoeffs ar;
    ar.a.assign(p, 0.0);
    ar.reflection.assign(p, 0.0);
    double err = 1.0;
    std::vector<double> prev;
    for (std::size_t k = 1; k <= p; ++k) {
        double acc = r[k - 1];
        for (std::size_t i = 1; i < k; ++i) acc -= ar.a[i - 1] * r[k - 1 - i];
        const double kappa = acc / err;
        if (!(std::abs(kappa) < 1.0)) throw NumericalError("yule_walker: Toeplitz system is singular or indefinite");
        prev.assign(ar.a.begin(), ar.a.begin() + static_cast<std::ptrdiff_t>(k - 1));
        for (std::size_t i = 1; i < k; ++i) ar.a[i - 1] = prev[i - 1] - kappa * prev[k - 1 - i];
        ar.a[k - 1] = kappa;
        ar.reflection[k - 1] = kappa;
        err *= (1.0 - kappa * kappa);
    }
    ar.innovation_var = err * gamma[0];
    ar.stationary = is_stationary(ar.a);
    ar.scheme = "AR(" + std::to_string(p) + ")";
    return ar;
}

ARCoeffs ar1_pooled_approx(std::span<const double> gamma) {
    if (gamma.size() < 2) throw ValidationError("ar1_pooled_approx: need lags 0 and 1");
    ARCoeffs ar = yule_walker(gamma, 1);
    ar.scheme = "AR(1)";
    return ar;
}

Whitened whiten(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const ARCoeffs& ar) {
    if (Y.rows() != X.rows()) throw ValidationError("whiten: Y and X row counts differ");
    const auto p = static_cast<Eigen::Index>(ar.order());
    if (!is_stationary(ar.a)) throw ValidationError("whiten: AR coefficients are not stationary");
    if (Y.rows() <= p) throw ValidationError("whiten: series shorter than the AR order");
    const Eigen::Index n = Y.rows() - p;
    Whitened w;
    w.Y = Y.bottomRows(n);
    w.X = X.bottomRows(n);
    for (Eigen::Index k = 1; k <= p; ++k) {
        const double a = ar.a[static_cast<std::size_t>(k - 1)];
        w.Y.noalias() -= a * Y.middleRows(p - k, n);
        w.X.noalias() -= a * X.middleRows(p - k, n);
    }
    return w;
}

Eigen::MatrixXd CovDictionary::covariance(std::size_t T) const {
    if (weights.size() != components.size()) throw ValidationError("covariance: weights and components differ");
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T));
    for (std::size_t j = 0; j < components.size(); ++j) V += weights[j] * component_matrix(components[j], T, tr_s);
    return V;
}

CovDictionary dictionary_from_decays(double tr_s, const std::vector<double>& decays_s, bool with_identity) {
    if (!(tr_s > 0.0)) throw ValidationError("dictionary: tr_s must be positive");
    CovDictionary d;
    d.tr_s = tr_s;
    if (with_identity) d.components.push_back({CovComponent::Kind::identity, 0.0, "identity"});
    for (double decay : decays_s) {
        if (!(decay > 0.0)) throw ValidationError("dictionary: decay constants must be positive");
        std::ostringstream name;
        name << "exp_" << decay << "s";
        d.components.push_back({CovComponent::Kind::exponential, decay, name.str()});
    }
    if (d.components.empty()) throw ValidationError("dictionary: no components");
    d.weights.assign(d.components.size(), 0.0);
    return d;
}

CovDictionary default_dictionary(double tr_s) { return dictionary_from_decays(tr_s, {0.2, 1.0, 4.0}, true); }

Eigen::MatrixXd component_matrix(const CovComponent& c, std::size_t T, double tr_s) {
    const auto n = static_cast<Eigen::Index>(T);
    if (c.kind == CovComponent::Kind::identity) return Eigen::MatrixXd::Identity(n, n);
    const double rho = std::exp(-tr_s / c.decay_s);
    Eigen::MatrixXd Q(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) Q(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
    return Q;
}

CovDictionary reml_cov_dictionary(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, CovDictionary d,
                                  const RemlOptions& opt) {
    const std::size_t J = d.components.size();
    if (J == 0) throw ValidationError("reml: empty dictionary");
    if (Y.cols() == 0) throw ValidationError("reml: empty mask");
    if (Y.rows() != X.rows()) throw ValidationError("reml: Y and X row counts differ");

    const GLMFit ols = ols_fit(Y, X);
    const double pooled = ols.sigma2.mean();
    if (!(pooled > 0.0)) throw NumericalError("reml: pooled residual variance is zero");

    std::vector<double> w(J, 0.0);
    std::size_t anchor = 0;
    for (std::size_t j = 0; j < J; ++j)
        if (d.components[j].kind == CovComponent::Kind::identity) {
            anchor = j;
            break;
        }
    w[anchor] = pooled;

    d.trace.clear();
    d.trace.push_back(w);
    RemlState cur;
    if (!reml_evaluate(Y, X, d, w, true, cur)) throw NumericalError("reml: initial covariance is not positive definite");

    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
        Eigen::VectorXd step = cur.information.ldlt().solve(cur.gradient);
        if (!step.allFinite()) throw NumericalError("reml: singular Fisher information\n" + trace_text(d.trace));

        std::vector<double> trial(J);
        RemlState next;
        bool accepted = false;
        double scale = 1.0;
        for (std::size_t h = 0; h <= opt.max_halvings; ++h, scale *= 0.5) {
            for (std::size_t j = 0; j < J; ++j) trial[j] = w[j] + scale * step(static_cast<Eigen::Index>(j));
            if (reml_evaluate(Y, X, d, trial, false, next) &&
                next.objective >= cur.objective - 1e-12 * std::abs(cur.objective)) {
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw NumericalError("reml: covariance not positive definite after " + std::to_string(opt.max_halvings) +
                                 " step halvings\n" + trace_text(d.trace));

        double step_norm = 0.0, w_norm = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
            step_norm += (trial[j] - w[j]) * (trial[j] - w[j]);
            w_norm += trial[j] * trial[j];
        }
        w = trial;
        d.trace.push_back(w);
        d.iterations = it;
        if (std::sqrt(step_norm) <= opt.tolerance * std::sqrt(w_norm)) {
            d.weights = w;
            return d;
        }
        if (!reml_evaluate(Y, X, d, w, true, cur)) throw NumericalError("reml: lost positive definiteness");
    }
    throw NumericalError("reml: no convergence within " + std::to_string(opt.max_iterations) + " iterations\n" +
                         trace_text(d.trace));
}

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& V) {
    if (V.rows() != V.cols()) throw ValidationError("inverse_sqrt: matrix must be square");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V);
    if (es.info() != Eigen::Success) throw NumericalError("inverse_sqrt: eigen-decomposition failed");
    const Eigen::VectorXd ev = es.eigenvalues();
    if (!(ev.minCoeff() > 0.0)) throw NumericalError("inverse_sqrt: matrix is not positive definite");
    const Eigen::MatrixXd& U = es.eigenvectors();
    return U * ev.cwiseSqrt().cwiseInverse().asDiagonal() * U.transpose();
}

Whitened whiten_matrix(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& W) {
    if (W.cols() != Y.rows() || Y.rows() != X.rows()) throw ValidationError("whiten_matrix: shape mismatch");
    return {W * Y, W * X};
}

StatMap glm_inference(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& contrast) {
    if (contrast.cols() != X.cols())
        throw ValidationError("glm_inference: contrast has " + std::to_string(contrast.cols()) + " columns, design has " +
                              std::to_string(X.cols()));
    if (contrast.rows() == 0) throw ValidationError("glm_inference: empty contrast");
    const GLMFit fit = ols_fit(Y, X);
    const Eigen::MatrixXd G =
        (X.transpose() * X).eval().ldlt().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    const Eigen::Index N = Y.cols();
    StatMap m;
    m.stat.resize(N);
    m.p.resize(N);
    m.dof2 = static_cast<double>(fit.dof);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const Eigen::MatrixXd cb = contrast * fit.beta;  // q x N
    const double scale_ref = Y.cwiseAbs().maxCoeff();

    auto zero_variance = [&](Eigen::Index n) {
        const double ref = std::max(scale_ref, 1e-300);
        return !(fit.sigma2(n) > 1e-28 * ref * ref);
    };

    if (contrast.rows() == 1) {
        m.kind = StatMap::Kind::t;
        m.dof1 = 1.0;
        const Eigen::RowVectorXd c = contrast.row(0);
        const double var_factor = (c * G * c.transpose())(0, 0);
        boost::math::students_t dist(m.dof2);
        for (Eigen::Index n = 0; n < N; ++n) {
            if (zero_variance(n)) {
                m.stat(n) = nan;
                m.p(n) = nan;
                ++m.missing;
                continue;
            }
            const double t = var_factor > 0.0 ? cb(0, n) / std::sqrt(fit.sigma2(n) * var_factor) : 0.0;
            m.stat(n) = t;
            m.p(n) = boost::math::cdf(boost::math::complement(dist, t));
        }
        return m;
    }

    m.kind = StatMap::Kind::F;
    const Eigen::MatrixXd H = contrast * G * contrast.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(ev.size());
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > tol) {
            inv_ev(i) = 1.0 / ev(i);
            ++rank;
        }
    const Eigen::MatrixXd Hpinv = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
    m.dof1 = static_cast<double>(std::max<Eigen::Index>(rank, 1));
    boost::math::fisher_f dist(m.dof1, m.dof2);
    for (Eigen::Index n = 0; n < N; ++n) {
        if (zero_variance(n)) {
            m.stat(n) = nan;
            m.p(n) = nan;
            ++m.missing;
            continue;
        }
        if (rank == 0) {
            m.stat(n) = 0.0;
            m.p(n) = 1.0;
            continue;
        }
        const Eigen::VectorXd d = cb.col(n);
        const double F = (d.transpose() * Hpinv * d)(0, 0) / m.dof1 / fit.sigma2(n);
        m.stat(n) = F;
        m.p(n) = boost::math::cdf(boost::math::complement(dist, std::max(F, 0.0)));
    }
    return m;
}

LjungBox ljung_box(std::span<const double> x, std::size_t lags) {
    const std::size_t n = x.size();
    if (lags == 0 || lags >= n) throw ValidationError("ljung_box: lags must be in [1, n)");
    const auto g = autocovariance(x, lags);
    if (!(g[0] > 0.0)) throw ValidationError("ljung_box: zero-variance series");
    LjungBox lb;
    lb.lags = lags;
    const double nn = static_cast<double>(n);
    double q = 0.0;
    for (std::size_t k = 1; k <= lags; ++k) {
        const double rho = g[k] / g[0];
        q += rho * rho / (nn - static_cast<double>(k));
    }
    lb.statistic = nn * (nn + 2.0) * q;
    boost::math::chi_squared dist(static_cast<double>(lags));
    lb.p_value = boost::math::cdf(boost::math::complement(dist, lb.statistic));
    return lb;
}

}  // namespace serialcorr::glm
