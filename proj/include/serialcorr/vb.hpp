#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "serialcorr/common.hpp"
#include "serialcorr/dataio.hpp"

namespace serialcorr::vb {

enum class ARPrior { shrinkage, graph_laplacian };
enum class Truncation { common, per_order };

std::string to_string(ARPrior p);
std::string to_string(Truncation t);
ARPrior ar_prior_from_string(const std::string& s);
Truncation truncation_from_string(const std::string& s);

struct VBConfig {
    std::size_t order = 1;
    std::size_t max_iterations = 128;
    double tolerance = 1e-6;  // relative change of F
    double slack = 1e-8;      // allowed relative decrease of F per sweep
    ARPrior ar_prior = ARPrior::shrinkage;
    Truncation truncation = Truncation::common;
    // Gamma(shape, rate) hyperpriors on the noise precision and the AR precision.
    double lambda_shape0 = 1e-3;
    double lambda_rate0 = 1e-3;
    double beta_shape0 = 1e-3;
    double beta_rate0 = 1e-3;
    unsigned threads = 1;

    void validate() const;
};

/// Mean-field posterior of one voxel: q(w) q(a) q(lambda) q(beta).
struct VoxelPosterior {
    Eigen::VectorXd w_mean;
    Eigen::MatrixXd w_cov;
    Eigen::VectorXd a_mean;
    Eigen::MatrixXd a_cov;
    double lambda_shape = 0.0, lambda_rate = 0.0;
    double beta_shape = 0.0, beta_rate = 0.0;
    std::vector<double> free_energy;  // after every full sweep
    bool converged = false;

    double F() const { return free_energy.empty() ? 0.0 : free_energy.back(); }
    double lambda_mean() const { return lambda_shape / lambda_rate; }
};

struct VBPosterior {
    std::size_t order = 0;
    std::size_t first_sample = 0;  // likelihood runs over t = first_sample .. T-1 (0-based)
    std::vector<VoxelPosterior> voxels;
};

/// Per-slice 4-neighbourhood graph over in-mask voxels. `columns` are the
/// column indices of the slice voxels in the data matrix, in ascending voxel order.
struct SliceGraph {
    std::vector<std::size_t> columns;
    Eigen::SparseMatrix<double> laplacian;  // D - A, without ridge
};

constexpr double kLaplacianRidge = 1e-6;

/// Graph Laplacian of a 2D in-mask pattern (x fastest). Columns are the
/// positions of in-mask pixels in scan order.
SliceGraph graph_laplacian_prior(const std::vector<bool>& in_mask, std::size_t nx, std::size_t ny);

/// One graph per non-empty slice of the mask; columns refer to positions in
/// `mask.indices()`. Empty slices are skipped with a notice.
std::vector<SliceGraph> slice_graphs(const io::Mask& mask, Notices* notices = nullptr);

/// VB GLM-AR(p) fit of every column of Y (T x N). The likelihood covers
/// t = first_sample .. T-1; first_sample defaults to the order.
/// The graph-Laplacian prior needs `graphs` covering every column.
VBPosterior vb_fit(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const VBConfig& cfg,
                   std::size_t first_sample = static_cast<std::size_t>(-1),
                   const std::vector<SliceGraph>* graphs = nullptr);

struct EvidenceMaps {
    std::vector<std::size_t> orders;
    Eigen::MatrixXd F;                   // orders x voxels
    std::vector<std::size_t> samples;    // likelihood sample count per order
    Truncation truncation = Truncation::common;
    std::vector<std::vector<std::vector<double>>> ar_means;  // [order][voxel] posterior AR means
    Eigen::MatrixXd noise_variance;      // orders x voxels, 1 / E[lambda]
    Eigen::MatrixXi iterations;          // orders x voxels
    Eigen::MatrixXi converged;           // orders x voxels (0/1)

    std::size_t voxels() const { return static_cast<std::size_t>(F.cols()); }
    std::size_t row_of(std::size_t order) const;
};

EvidenceMaps evidence_scan(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const std::vector<std::size_t>& orders,
                           const VBConfig& cfg, const std::vector<SliceGraph>* graphs = nullptr);

/// Per-voxel argmax over orders; ties go to the smaller order.
std::vector<std::size_t> winning_order(const EvidenceMaps& ev);

enum class BFClass { favors_high, favors_low, inconclusive };
std::string to_string(BFClass c);

struct BFMap {
    std::size_t p_hi = 0, p_lo = 0;
    Eigen::VectorXd log_bf;
    std::vector<BFClass> classes;
    std::size_t favors_high = 0, favors_low = 0, inconclusive = 0;
};

/// log BF = F(p_hi) - F(p_lo), classified at +/- threshold on the log scale.
BFMap log_bayes_factor(const EvidenceMaps& ev, std::size_t p_hi, std::size_t p_lo, double threshold = 3.0);

/// "1..10" or "1,2,4" style order lists.
std::vector<std::size_t> parse_orders(const std::string& text);

}  // namespace serialcorr::vb
