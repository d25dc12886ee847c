#include "serialcorr/vb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/SparseCholesky>
#include <boost/math/special_functions/digamma.hpp>

namespace serialcorr::vb {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

using boost::math::digamma;

// Lagged design over the window t = start .. T-1. Block k of XL holds rows t - k.
// Row k * (p + 1) + l of R is vec(X_k' X_l).
struct LagDesign {
    std::size_t p = 0, start = 0, Ns = 0, K = 0;
    Eigen::MatrixXd XL;
    Eigen::MatrixXd R;
};

LagDesign make_lag_design(const Eigen::MatrixXd& X, std::size_t p, std::size_t start) {
    LagDesign d;
    d.p = p;
    d.start = start;
    d.Ns = static_cast<std::size_t>(X.rows()) - start;
    d.K = static_cast<std::size_t>(X.cols());
    const auto K = static_cast<Eigen::Index>(d.K);
    const auto Ns = static_cast<Eigen::Index>(d.Ns);
    const auto P1 = static_cast<Eigen::Index>(p + 1);
    d.XL.resize(Ns, K * P1);
    for (Eigen::Index k = 0; k < P1; ++k)
        d.XL.middleCols(k * K, K) = X.middleRows(static_cast<Eigen::Index>(start) - k, Ns);
    const Eigen::MatrixXd G = d.XL.transpose() * d.XL;
    d.R.resize(P1 * P1, K * K);
    for (Eigen::Index k = 0; k < P1; ++k)
        for (Eigen::Index l = 0; l < P1; ++l) {
            const Eigen::MatrixXd block = G.block(k * K, l * K, K, K);
            d.R.row(k * P1 + l) = Eigen::Map<const Eigen::RowVectorXd>(block.data(), K * K);
        }
    return d;
}

// Rows of a (P+1)^2 pair-indexed matrix restricted to lags 0..p.
Eigen::MatrixXd sub_pairs_rows(const Eigen::MatrixXd& M, std::size_t P, std::size_t p) {
    const auto P1 = static_cast<Eigen::Index>(P + 1), p1 = static_cast<Eigen::Index>(p + 1);
    Eigen::MatrixXd out(p1 * p1, M.cols());
    for (Eigen::Index k = 0; k < p1; ++k)
        for (Eigen::Index l = 0; l < p1; ++l) out.row(k * p1 + l) = M.row(k * P1 + l);
    return out;
}

// Per-voxel sufficient statistics: column kl of C is X_k' y_l, r(kl) = y_k' y_l.
struct VoxelData {
    Eigen::MatrixXd C;
    Eigen::VectorXd r;
};

VoxelData make_voxel_data(const LagDesign& d, const double* y) {
    const auto K = static_cast<Eigen::Index>(d.K);
    const auto Ns = static_cast<Eigen::Index>(d.Ns);
    const auto P1 = static_cast<Eigen::Index>(d.p + 1);
    Eigen::MatrixXd YL(Ns, P1);
    for (Eigen::Index l = 0; l < P1; ++l)
        YL.col(l) = Eigen::Map<const Eigen::VectorXd>(y + static_cast<Eigen::Index>(d.start) - l, Ns);
    const Eigen::MatrixXd CC = d.XL.transpose() * YL;
    const Eigen::MatrixXd RR = YL.transpose() * YL;
    VoxelData v;
    v.C.resize(K, P1 * P1);
    v.r.resize(P1 * P1);
    for (Eigen::Index k = 0; k < P1; ++k)
        for (Eigen::Index l = 0; l < P1; ++l) {
            v.C.col(k * P1 + l) = CC.block(k * K, l, K, 1);
            v.r(k * P1 + l) = RR(k, l);
        }
    return v;
}

VoxelData sub_voxel_data(const VoxelData& v, std::size_t P, std::size_t p) {
    VoxelData out;
    out.C = sub_pairs_rows(v.C.transpose(), P, p).transpose();
    out.r = sub_pairs_rows(v.r, P, p);
    return out;
}

struct Hyper {
    double lambda_shape0, lambda_rate0, beta_shape0, beta_rate0;
};

double gamma_log_prior(double shape0, double rate0, double shape, double rate) {
    const double elog = digamma(shape) - std::log(rate);
    return shape0 * std::log(rate0) - std::lgamma(shape0) + (shape0 - 1.0) * elog - rate0 * shape / rate;
}

double gamma_entropy(double shape, double rate) {
    return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * digamma(shape);
}

double log_det_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

struct VoxelState {
    std::size_t K = 0, p = 0, Ns = 0;
    Eigen::VectorXd mw;
    Eigen::MatrixXd Sw;
    double logdet_Sw = 0.0;
    Eigen::VectorXd ma;
    Eigen::MatrixXd Sa;
    double logdet_Sa = 0.0;
    Eigen::MatrixXd At;  // E[a~ a~'], a~ = [1, -a]
    Eigen::MatrixXd Gb;  // E_w[sum_t e_{t-k} e_{t-l}]
    double lam_shape = 0.0, lam_rate = 0.0, Elam = 1.0;
    double beta_shape = 0.0, beta_rate = 0.0, Ebeta = 1.0;
};

std::string voxel_tag(std::size_t voxel, std::size_t p) {
    return "voxel " + std::to_string(voxel) + ", order " + std::to_string(p);
}

void init_state(VoxelState& s, const LagDesign& d, const Eigen::MatrixXd& R, const VoxelData& v, std::size_t p,
                std::size_t voxel) {
    s.K = d.K;
    s.p = p;
    s.Ns = d.Ns;
    const auto P1 = static_cast<Eigen::Index>(p + 1);
    const auto K = static_cast<Eigen::Index>(d.K);
    s.At = Eigen::MatrixXd::Zero(P1, P1);
    s.At(0, 0) = 1.0;
    s.ma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    s.Sa = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    // OLS on the window sets the initial noise precision.
    const Eigen::MatrixXd H = Eigen::Map<const Eigen::MatrixXd>(R.row(0).eval().data(), K, K);
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) throw NumericalError("vb: design is singular on the fitting window");
    const Eigen::VectorXd c = v.C.col(0);
    const double rss = v.r(0) - c.dot(llt.solve(c));
    const double dof = static_cast<double>(d.Ns) - static_cast<double>(d.K);
    if (!(rss > 1e-300) || !std::isfinite(rss))
        throw NumericalError("vb: zero residual variance at " + voxel_tag(voxel, p));
    s.Elam = dof / rss;
    s.Ebeta = 1.0;
}

void update_w(VoxelState& s, const Eigen::MatrixXd& R, const VoxelData& v, std::size_t voxel) {
    const auto K = static_cast<Eigen::Index>(s.K);
    const auto P1 = static_cast<Eigen::Index>(s.p + 1);
    const Eigen::Map<const Eigen::VectorXd> vecA(s.At.data(), P1 * P1);
    Eigen::VectorXd h = R.transpose() * vecA;
    Eigen::MatrixXd H = Eigen::Map<Eigen::MatrixXd>(h.data(), K, K);
    H = 0.5 * (H + H.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) throw NumericalError("vb: q(w) precision not positive definite at " + voxel_tag(voxel, s.p));
    const Eigen::MatrixXd Hinv = llt.solve(Eigen::MatrixXd::Identity(K, K));
    s.mw = llt.solve(v.C * vecA);
    s.Sw = Hinv / s.Elam;
    s.logdet_Sw = -static_cast<double>(s.K) * std::log(s.Elam) - log_det_llt(llt);

    Eigen::MatrixXd M2 = s.Sw + s.mw * s.mw.transpose();
    const Eigen::VectorXd q = R * Eigen::Map<const Eigen::VectorXd>(M2.data(), K * K);
    const Eigen::VectorXd dv = v.C.transpose() * s.mw;
    s.Gb.resize(P1, P1);
    for (Eigen::Index k = 0; k < P1; ++k)
        for (Eigen::Index l = 0; l < P1; ++l)
            s.Gb(k, l) = v.r(k * P1 + l) - dv(k * P1 + l) - dv(l * P1 + k) + q(k * P1 + l);
    s.Gb = 0.5 * (s.Gb + s.Gb.transpose()).eval();
}

// q(a) with isotropic prior precision `prior_prec` and an extra linear term.
void update_a(VoxelState& s, double prior_prec, const Eigen::VectorXd* lin, std::size_t voxel) {
    const auto p = static_cast<Eigen::Index>(s.p);
    if (p == 0) return;
    Eigen::MatrixXd L = s.Elam * s.Gb.bottomRightCorner(p, p);
    L.diagonal().array() += prior_prec;
    Eigen::LLT<Eigen::MatrixXd> llt(L);
    if (llt.info() != Eigen::Success) throw NumericalError("vb: q(a) precision not positive definite at " + voxel_tag(voxel, s.p));
    s.Sa = llt.solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::VectorXd b = s.Elam * s.Gb.col(0).tail(p);
    if (lin) b += *lin;
    s.ma = llt.solve(b);
    s.logdet_Sa = -log_det_llt(llt);
    Eigen::VectorXd at(p + 1);
    at(0) = 1.0;
    at.tail(p) = -s.ma;
    s.At = at * at.transpose();
    s.At.bottomRightCorner(p, p) += s.Sa;
}

void update_lambda(VoxelState& s, const Hyper& h) {
    const double esz = (s.At.array() * s.Gb.array()).sum();
    s.lam_shape = h.lambda_shape0 + 0.5 * static_cast<double>(s.Ns);
    s.lam_rate = h.lambda_rate0 + 0.5 * std::max(esz, 0.0);
    s.Elam = s.lam_shape / s.lam_rate;
}

// Likelihood, q(w), q(a) entropy and q(lambda) terms of one voxel.
double voxel_terms(const VoxelState& s, const Hyper& h) {
    const double Ns = static_cast<double>(s.Ns);
    const double Elam = s.lam_shape / s.lam_rate;
    const double Eloglam = digamma(s.lam_shape) - std::log(s.lam_rate);
    const double esz = (s.At.array() * s.Gb.array()).sum();
    double F = 0.5 * Ns * (Eloglam - kLog2Pi) - 0.5 * Elam * esz;
    F += 0.5 * static_cast<double>(s.K) * (1.0 + kLog2Pi) + 0.5 * s.logdet_Sw;
    if (s.p > 0) F += 0.5 * static_cast<double>(s.p) * (1.0 + kLog2Pi) + 0.5 * s.logdet_Sa;
    F += gamma_log_prior(h.lambda_shape0, h.lambda_rate0, s.lam_shape, s.lam_rate) +
         gamma_entropy(s.lam_shape, s.lam_rate);
    return F;
}

// E[log p(a | beta)] for the isotropic prior plus the q(beta) terms.
double shrinkage_terms(const VoxelState& s, const Hyper& h) {
    if (s.p == 0) return 0.0;
    const double p = static_cast<double>(s.p);
    const double Ebeta = s.beta_shape / s.beta_rate;
    const double Elogbeta = digamma(s.beta_shape) - std::log(s.beta_rate);
    const double ea2 = s.ma.squaredNorm() + s.Sa.trace();
    return 0.5 * p * (Elogbeta - kLog2Pi) - 0.5 * Ebeta * ea2 +
           gamma_log_prior(h.beta_shape0, h.beta_rate0, s.beta_shape, s.beta_rate) +
           gamma_entropy(s.beta_shape, s.beta_rate);
}

void check_step(std::vector<double>& traj, double F, double slack, const std::string& where) {
    if (!std::isfinite(F)) throw NumericalError("vb: non-finite free energy at " + where);
    if (!traj.empty()) {
        const double prev = traj.back();
        if (F < prev - slack * std::abs(prev)) {
            std::ostringstream os;
            os.precision(17);
            os << "vb: free energy decreased from " << prev << " to " << F << " at " << where;
            throw NumericalError(os.str());
        }
    }
    traj.push_back(F);
}

bool converged(const std::vector<double>& traj, double tol) {
    if (traj.size() < 2) return false;
    const double a = traj[traj.size() - 1], b = traj[traj.size() - 2];
    return std::abs(a - b) < tol * std::abs(a);
}

VoxelPosterior to_posterior(const VoxelState& s, std::vector<double> traj, bool conv) {
    VoxelPosterior q;
    q.w_mean = s.mw;
    q.w_cov = s.Sw;
    q.a_mean = s.ma;
    q.a_cov = s.Sa;
    q.lambda_shape = s.lam_shape;
    q.lambda_rate = s.lam_rate;
    q.beta_shape = s.beta_shape;
    q.beta_rate = s.beta_rate;
    q.free_energy = std::move(traj);
    q.converged = conv;
    return q;
}

VoxelPosterior fit_voxel(const LagDesign& d, const Eigen::MatrixXd& R, const VoxelData& v, std::size_t p,
                         const VBConfig& cfg, std::size_t voxel) {
    const Hyper h{cfg.lambda_shape0, cfg.lambda_rate0, cfg.beta_shape0, cfg.beta_rate0};
    VoxelState s;
    init_state(s, d, R, v, p, voxel);
    std::vector<double> traj;
    bool conv = false;
    const std::string where = voxel_tag(voxel, p);
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        update_w(s, R, v, voxel);
        if (p > 0) {
            update_a(s, s.Ebeta, nullptr, voxel);
            s.beta_shape = h.beta_shape0 + 0.5 * static_cast<double>(p);
            s.beta_rate = h.beta_rate0 + 0.5 * (s.ma.squaredNorm() + s.Sa.trace());
            s.Ebeta = s.beta_shape / s.beta_rate;
        }
        update_lambda(s, h);
        check_step(traj, voxel_terms(s, h) + shrinkage_terms(s, h), cfg.slack, where);
        if (converged(traj, cfg.tolerance)) {
            conv = true;
            break;
        }
    }
    return to_posterior(s, std::move(traj), conv);
}

// Graph-Laplacian prior: joint coordinate ascent over the voxels of one slice.
std::vector<VoxelPosterior> fit_slice(const LagDesign& d, const Eigen::MatrixXd& R,
                                      const std::vector<VoxelData>& data, const SliceGraph& g, std::size_t p,
                                      const VBConfig& cfg) {
    const Hyper h{cfg.lambda_shape0, cfg.lambda_rate0, cfg.beta_shape0, cfg.beta_rate0};
    const std::size_t n = g.columns.size();
    Eigen::SparseMatrix<double> M = g.laplacian;
    for (Eigen::Index i = 0; i < M.rows(); ++i) M.coeffRef(i, i) += kLaplacianRidge;
    M.makeCompressed();
    double logdet_M = 0.0;
    if (p > 0) {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(M);
        if (ldlt.info() != Eigen::Success) throw NumericalError("vb: graph Laplacian factorization failed");
        logdet_M = ldlt.vectorD().array().log().sum();
    }
    std::vector<VoxelState> st(n);
    for (std::size_t i = 0; i < n; ++i) init_state(st[i], d, R, data[i], p, g.columns[i]);
    double beta_shape = h.beta_shape0 + 0.5 * static_cast<double>(n * p), beta_rate = h.beta_rate0;
    double Ebeta = 1.0;

    std::vector<double> total;
    std::vector<std::vector<double>> shares(n);
    bool conv = false;
    const std::string where = "slice starting at voxel " + std::to_string(g.columns.front()) + ", order " +
                              std::to_string(p);
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            update_w(st[i], R, data[i], g.columns[i]);
            if (p == 0) continue;
            Eigen::VectorXd lin = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
            double mii = 0.0;
            for (Eigen::SparseMatrix<double>::InnerIterator itm(M, static_cast<Eigen::Index>(i)); itm; ++itm) {
                const auto j = static_cast<std::size_t>(itm.row());
                if (j == i) mii = itm.value();
                else lin -= Ebeta * itm.value() * st[j].ma;
            }
            update_a(st[i], Ebeta * mii, &lin, g.columns[i]);
        }
        double quad = 0.0;
        if (p > 0) {
            for (std::size_t i = 0; i < n; ++i)
                for (Eigen::SparseMatrix<double>::InnerIterator itm(M, static_cast<Eigen::Index>(i)); itm; ++itm) {
                    const auto j = static_cast<std::size_t>(itm.row());
                    quad += itm.value() * st[i].ma.dot(st[j].ma);
                    if (j == i) quad += itm.value() * st[i].Sa.trace();
                }
            beta_rate = h.beta_rate0 + 0.5 * quad;
            Ebeta = beta_shape / beta_rate;
        }
        double F_slice = 0.0;
        if (p > 0) {
            const double Elogbeta = digamma(beta_shape) - std::log(beta_rate);
            F_slice = 0.5 * static_cast<double>(n * p) * (Elogbeta - kLog2Pi) + 0.5 * static_cast<double>(p) * logdet_M -
                      0.5 * Ebeta * quad + gamma_log_prior(h.beta_shape0, h.beta_rate0, beta_shape, beta_rate) +
                      gamma_entropy(beta_shape, beta_rate);
        }
        double F = F_slice;
        for (std::size_t i = 0; i < n; ++i) {
            update_lambda(st[i], h);
            st[i].beta_shape = beta_shape;
            st[i].beta_rate = beta_rate;
            const double share = voxel_terms(st[i], h) + F_slice / static_cast<double>(n);
            shares[i].push_back(share);
            F += share - F_slice / static_cast<double>(n);
        }
        check_step(total, F, cfg.slack, where);
        if (converged(total, cfg.tolerance)) {
            conv = true;
            break;
        }
    }
    std::vector<VoxelPosterior> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(to_posterior(st[i], std::move(shares[i]), conv));
    return out;
}

// Removes the OLS fit so the sufficient statistics are residual-sized; with a
// flat prior on w this is an exact reparametrization.
Eigen::MatrixXd project_out(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, Eigen::MatrixXd* beta = nullptr) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::MatrixXd B = qr.solve(Y);
    Eigen::MatrixXd out = Y - X * B;
    if (beta) *beta = std::move(B);
    return out;
}

void check_graphs(const std::vector<SliceGraph>& graphs, std::size_t N) {
    std::vector<int> seen(N, 0);
    for (const auto& g : graphs) {
        if (static_cast<std::size_t>(g.laplacian.rows()) != g.columns.size())
            throw ValidationError("vb: slice graph size mismatch");
        for (std::size_t c : g.columns) {
            if (c >= N) throw ValidationError("vb: slice graph refers to a column outside the data");
            ++seen[c];
        }
    }
    for (std::size_t i = 0; i < N; ++i)
        if (seen[i] != 1) throw ValidationError("vb: slice graphs must cover every voxel exactly once");
}

void check_shapes(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, std::size_t start, std::size_t p) {
    if (Y.rows() != X.rows()) throw ValidationError("vb: Y and X row counts differ");
    if (Y.cols() == 0) throw ValidationError("vb: no voxels");
    if (start < p) throw ValidationError("vb: first sample must be at least the AR order");
    const auto T = static_cast<std::size_t>(Y.rows());
    const auto K = static_cast<std::size_t>(X.cols());
    if (start >= T || T - start <= K + p)
        throw ValidationError("vb: too few samples (" + std::to_string(T > start ? T - start : 0) + ") for K + p = " +
                              std::to_string(K + p));
}

}  // namespace

std::string to_string(ARPrior p) { return p == ARPrior::shrinkage ? "shrinkage" : "graph_laplacian"; }
std::string to_string(Truncation t) { return t == Truncation::common ? "common" : "per_order"; }

ARPrior ar_prior_from_string(const std::string& s) {
    if (s == "shrinkage") return ARPrior::shrinkage;
    if (s == "graph_laplacian") return ARPrior::graph_laplacian;
    throw ValidationError("unknown AR prior '" + s + "' (expected shrinkage|graph_laplacian)");
}

Truncation truncation_from_string(const std::string& s) {
    if (s == "common") return Truncation::common;
    if (s == "per_order") return Truncation::per_order;
    throw ValidationError("unknown truncation '" + s + "' (expected common|per_order)");
}

std::string to_string(BFClass c) {
    switch (c) {
        case BFClass::favors_high: return "favors_high";
        case BFClass::favors_low: return "favors_low";
        case BFClass::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

void VBConfig::validate() const {
    if (max_iterations == 0) throw ValidationError("vb: max_iterations must be positive");
    if (!(tolerance > 0.0)) throw ValidationError("vb: tolerance must be positive");
    if (!(slack >= 0.0)) throw ValidationError("vb: slack must be non-negative");
    if (!(lambda_shape0 > 0.0) || !(lambda_rate0 > 0.0) || !(beta_shape0 > 0.0) || !(beta_rate0 > 0.0))
        throw ValidationError("vb: Gamma hyperparameters must be positive");
}

SliceGraph graph_laplacian_prior(const std::vector<bool>& in_mask, std::size_t nx, std::size_t ny) {
    if (in_mask.size() != nx * ny) throw ValidationError("graph_laplacian_prior: pattern size mismatch");
    std::vector<long> pos(nx * ny, -1);
    SliceGraph g;
    for (std::size_t i = 0; i < nx * ny; ++i)
        if (in_mask[i]) {
            pos[i] = static_cast<long>(g.columns.size());
            g.columns.push_back(g.columns.size());
        }
    const auto n = static_cast<Eigen::Index>(g.columns.size());
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<double> degree(g.columns.size(), 0.0);
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t i = x + nx * y;
            if (pos[i] < 0) continue;
            auto link = [&](std::size_t j) {
                if (pos[j] < 0) return;
                trip.emplace_back(pos[i], pos[j], -1.0);
                degree[static_cast<std::size_t>(pos[i])] += 1.0;
            };
            if (x > 0) link(i - 1);
            if (x + 1 < nx) link(i + 1);
            if (y > 0) link(i - nx);
            if (y + 1 < ny) link(i + nx);
        }
    for (std::size_t i = 0; i < degree.size(); ++i)
        trip.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i), degree[i]);
    g.laplacian.resize(n, n);
    g.laplacian.setFromTriplets(trip.begin(), trip.end());
    g.laplacian.makeCompressed();
    return g;
}

std::vector<SliceGraph> slice_graphs(const io::Mask& mask, Notices* notices) {
    const std::size_t nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
    std::vector<SliceGraph> out;
    std::size_t offset = 0;
    for (std::size_t z = 0; z < nz; ++z) {
        std::vector<bool> pattern(nx * ny);
        for (std::size_t i = 0; i < nx * ny; ++i) pattern[i] = mask.labels[z * nx * ny + i] != 0;
        SliceGraph g = graph_laplacian_prior(pattern, nx, ny);
        if (g.columns.empty()) {
            if (notices) notices->push_back("slice " + std::to_string(z) + " has no in-mask voxels; skipped");
            continue;
        }
        for (auto& c : g.columns) c += offset;
        offset += g.columns.size();
        out.push_back(std::move(g));
    }
    return out;
}

VBPosterior vb_fit(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const VBConfig& cfg, std::size_t first_sample,
                   const std::vector<SliceGraph>* graphs) {
    cfg.validate();
    const std::size_t p = cfg.order;
    const std::size_t start = first_sample == static_cast<std::size_t>(-1) ? p : first_sample;
    check_shapes(Y, X, start, p);
    const auto N = static_cast<std::size_t>(Y.cols());
    Eigen::MatrixXd B;
    const Eigen::MatrixXd Yc = project_out(Y, X, &B);
    const LagDesign d = make_lag_design(X, p, start);

    VBPosterior out;
    out.order = p;
    out.first_sample = start;
    out.voxels.resize(N);
    if (cfg.ar_prior == ARPrior::graph_laplacian) {
        if (!graphs) throw ValidationError("vb: graph-Laplacian prior needs slice graphs");
        check_graphs(*graphs, N);
        parallel_for(graphs->size(), cfg.threads, [&](std::size_t gi) {
            const SliceGraph& g = (*graphs)[gi];
            std::vector<VoxelData> data;
            data.reserve(g.columns.size());
            for (std::size_t c : g.columns) data.push_back(make_voxel_data(d, Yc.col(static_cast<Eigen::Index>(c)).data()));
            auto posts = fit_slice(d, d.R, data, g, p, cfg);
            for (std::size_t i = 0; i < g.columns.size(); ++i) out.voxels[g.columns[i]] = std::move(posts[i]);
        });
    } else {
        parallel_for(N, cfg.threads, [&](std::size_t n) {
            const VoxelData v = make_voxel_data(d, Yc.col(static_cast<Eigen::Index>(n)).data());
            out.voxels[n] = fit_voxel(d, d.R, v, p, cfg, n);
        });
    }
    for (std::size_t n = 0; n < N; ++n) out.voxels[n].w_mean += B.col(static_cast<Eigen::Index>(n));
    return out;
}

std::size_t EvidenceMaps::row_of(std::size_t order) const {
    for (std::size_t i = 0; i < orders.size(); ++i)
        if (orders[i] == order) return i;
    throw ValidationError("evidence maps do not contain order " + std::to_string(order));
}

EvidenceMaps evidence_scan(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const std::vector<std::size_t>& orders,
                           const VBConfig& cfg, const std::vector<SliceGraph>* graphs) {
    cfg.validate();
    if (orders.empty()) throw ValidationError("evidence_scan: no orders");
    for (std::size_t i = 1; i < orders.size(); ++i)
        if (!(orders[i] > orders[i - 1])) throw ValidationError("evidence_scan: orders must be strictly increasing");
    const std::size_t P = orders.back();
    const auto N = static_cast<std::size_t>(Y.cols());
    const std::size_t J = orders.size();
    for (std::size_t p : orders) check_shapes(Y, X, cfg.truncation == Truncation::common ? P : p, p);
    const bool spatial = cfg.ar_prior == ARPrior::graph_laplacian;
    if (spatial) {
        if (!graphs) throw ValidationError("evidence_scan: graph-Laplacian prior needs slice graphs");
        check_graphs(*graphs, N);
    }

    const Eigen::MatrixXd Yc = project_out(Y, X);
    const auto T = static_cast<std::size_t>(Y.rows());

    // Shared lagged designs: one for common truncation, one per order otherwise.
    std::vector<LagDesign> designs;
    std::vector<Eigen::MatrixXd> Rs(J);
    if (cfg.truncation == Truncation::common) {
        designs.push_back(make_lag_design(X, P, P));
        for (std::size_t j = 0; j < J; ++j) Rs[j] = sub_pairs_rows(designs[0].R, P, orders[j]);
    } else {
        for (std::size_t j = 0; j < J; ++j) {
            designs.push_back(make_lag_design(X, orders[j], orders[j]));
            Rs[j] = designs.back().R;
        }
    }

    EvidenceMaps ev;
    ev.orders = orders;
    ev.truncation = cfg.truncation;
    ev.F.resize(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(N));
    ev.noise_variance.resize(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(N));
    ev.iterations.resize(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(N));
    ev.converged.resize(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(N));
    ev.ar_means.assign(J, std::vector<std::vector<double>>(N));
    for (std::size_t j = 0; j < J; ++j)
        ev.samples.push_back(T - (cfg.truncation == Truncation::common ? P : orders[j]));

    auto store = [&](std::size_t j, std::size_t n, const VoxelPosterior& q) {
        const auto jj = static_cast<Eigen::Index>(j), nn = static_cast<Eigen::Index>(n);
        ev.F(jj, nn) = q.F();
        ev.noise_variance(jj, nn) = q.lambda_rate / q.lambda_shape;
        ev.iterations(jj, nn) = static_cast<int>(q.free_energy.size());
        ev.converged(jj, nn) = q.converged ? 1 : 0;
        ev.ar_means[j][n].assign(q.a_mean.data(), q.a_mean.data() + q.a_mean.size());
    };
    auto annotate = [&](std::size_t p, const std::exception& e) {
        return std::string(e.what()) + " (evidence scan, order " + std::to_string(p) + ")";
    };

    auto data_for = [&](std::size_t j, std::size_t n, const VoxelData* full) -> VoxelData {
        if (cfg.truncation == Truncation::common) return sub_voxel_data(*full, P, orders[j]);
        return make_voxel_data(designs[j], Yc.col(static_cast<Eigen::Index>(n)).data());
    };

    if (spatial) {
        parallel_for(graphs->size(), cfg.threads, [&](std::size_t gi) {
            const SliceGraph& g = (*graphs)[gi];
            std::vector<VoxelData> full;
            if (cfg.truncation == Truncation::common)
                for (std::size_t c : g.columns)
                    full.push_back(make_voxel_data(designs[0], Yc.col(static_cast<Eigen::Index>(c)).data()));
            for (std::size_t j = 0; j < J; ++j) {
                std::vector<VoxelData> data;
                for (std::size_t i = 0; i < g.columns.size(); ++i)
                    data.push_back(data_for(j, g.columns[i], full.empty() ? nullptr : &full[i]));
                const LagDesign& d = designs[cfg.truncation == Truncation::common ? 0 : j];
                std::vector<VoxelPosterior> posts;
                try {
                    posts = fit_slice(d, Rs[j], data, g, orders[j], cfg);
                } catch (const NumericalError& e) {
                    throw NumericalError(annotate(orders[j], e));
                }
                for (std::size_t i = 0; i < g.columns.size(); ++i) store(j, g.columns[i], posts[i]);
            }
        });
        return ev;
    }

    parallel_for(N, cfg.threads, [&](std::size_t n) {
        VoxelData full;
        if (cfg.truncation == Truncation::common)
            full = make_voxel_data(designs[0], Yc.col(static_cast<Eigen::Index>(n)).data());
        for (std::size_t j = 0; j < J; ++j) {
            const VoxelData v = data_for(j, n, &full);
            const LagDesign& d = designs[cfg.truncation == Truncation::common ? 0 : j];
            try {
                store(j, n, fit_voxel(d, Rs[j], v, orders[j], cfg, n));
            } catch (const NumericalError& e) {
                throw NumericalError(annotate(orders[j], e));
            }
        }
    });
    return ev;
}

std::vector<std::size_t> winning_order(const EvidenceMaps& ev) {
    const std::size_t N = ev.voxels();
    std::vector<std::size_t> out(N, 0);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < ev.orders.size(); ++j)
            if (ev.F(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)) >
                ev.F(static_cast<Eigen::Index>(best), static_cast<Eigen::Index>(n)))
                best = j;
        out[n] = ev.orders[best];
    }
    return out;
}

BFMap log_bayes_factor(const EvidenceMaps& ev, std::size_t p_hi, std::size_t p_lo, double threshold) {
    const auto hi = static_cast<Eigen::Index>(ev.row_of(p_hi));
    const auto lo = static_cast<Eigen::Index>(ev.row_of(p_lo));
    BFMap m;
    m.p_hi = p_hi;
    m.p_lo = p_lo;
    m.log_bf = (ev.F.row(hi) - ev.F.row(lo)).transpose();
    m.classes.resize(static_cast<std::size_t>(m.log_bf.size()));
    for (Eigen::Index n = 0; n < m.log_bf.size(); ++n) {
        const double v = m.log_bf(n);
        BFClass c = BFClass::inconclusive;
        if (v > threshold) c = BFClass::favors_high;
        else if (v < -threshold) c = BFClass::favors_low;
        m.classes[static_cast<std::size_t>(n)] = c;
        (c == BFClass::favors_high ? m.favors_high : c == BFClass::favors_low ? m.favors_low : m.inconclusive)++;
    }
    return m;
}

std::vector<std::size_t> parse_orders(const std::string& text) {
    auto parse_one = [&](const std::string& s) -> std::size_t {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
            throw ValidationError("invalid order list '" + text + "'");
        return static_cast<std::size_t>(std::stoul(s));
    };
    std::vector<std::size_t> out;
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
        const std::size_t a = parse_one(text.substr(0, dots)), b = parse_one(text.substr(dots + 2));
        if (b < a) throw ValidationError("invalid order range '" + text + "'");
        for (std::size_t p = a; p <= b; ++p) out.push_back(p);
        return out;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_one(item));
    if (out.empty()) throw ValidationError("empty order list");
    for (std::size_t i = 1; i < out.size(); ++i)
        if (!(out[i] > out[i - 1])) throw ValidationError("orders must be strictly increasing in '" + text + "'");
    return out;
}

}  // namespace serialcorr::vb
