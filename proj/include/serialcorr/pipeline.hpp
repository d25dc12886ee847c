#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "serialcorr/common.hpp"
#include "serialcorr/design.hpp"
#include "serialcorr/glm.hpp"
#include "serialcorr/physio.hpp"

// Glue shared by the command-line tool and the acceptance runner: from raw
// recordings to the analysis design of one run.
namespace serialcorr::pipeline {

struct PhysioDerived {
    std::vector<double> peaks_s;
    physio::PhaseSeries phases;
    physio::RateSeries rates;
    std::vector<double> times;
};

/// Gradient cleanup and peak detection (unless peaks are supplied), phases and
/// RV/HR series at mid-volume scan times.
PhysioDerived derive_physio(const physio::PhysioRecording& rec, std::size_t T, double tr_s);

struct AnalysisOptions {
    physio::Scheme scheme = physio::Scheme::none;
    design::ScheduleVariant schedule = design::ScheduleVariant::simple_first;
    bool reversed = false;
    design::DesignOptions design;
    physio::RetroicorOrders orders;
    // Fixed response-function delays; chosen by select_delay when absent.
    std::optional<double> delay_rrf_s;
    std::optional<double> delay_crf_s;
    unsigned threads = 1;
};

struct Analysis {
    design::DesignMatrix design;
    physio::NuisanceSet nuisance;
    std::optional<physio::DelaySelection> delays;
};

/// Design for one run. `Y` (T x N) is only used for delay selection under
/// retroicor_rf; `physio` may be empty for scheme none.
Analysis analysis_design(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& realignment,
                         const std::optional<PhysioDerived>& physio, double tr_s, const AnalysisOptions& opt);

// --- pre-whitening -------------------------------------------------------------

/// "none", "ar1" (pooled lag-1 moments), "ar<p>" (pooled Yule-Walker) or
/// "fast" (ReML over the default covariance dictionary).
struct WhitenMethod {
    enum class Kind { none, ar, fast };
    Kind kind = Kind::ar;
    std::size_t order = 1;

    std::string name() const;
};
WhitenMethod whiten_method_from_string(const std::string& s);

struct WhitenedGLM {
    glm::StatMap stats;
    std::string scheme;                // "AR(1)", "AR(4)", "FAST", "none"
    std::vector<double> coefficients;  // AR coefficients or dictionary weights
    glm::Whitened data;
};

/// OLS residuals -> pooled noise model -> whitened data -> t / F map.
WhitenedGLM whitened_glm(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& contrast,
                         const WhitenMethod& method, double tr_s, unsigned threads = 1);

// --- null simulation --------------------------------------------------------------

struct NullSimConfig {
    std::vector<double> ar{0.5, 0.2, 0.1, 0.05};
    std::size_t voxels = 10000;
    std::size_t T = 581;
    double tr_s = 0.589;
    double alpha = 0.05;
    WhitenMethod method;
    std::uint64_t seed = 1;
    unsigned threads = 1;

    void validate() const;
};

struct NullSimResult {
    std::size_t voxels = 0;
    std::size_t positives = 0;
    double fpr = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;  // 99% Clopper-Pearson interval
    double mean_t = 0.0;
    std::string scheme;
    std::vector<double> coefficients;
};

/// Pure AR noise under the task design (task regressor + constant), one-sided
/// t-test on the task column at the nominal alpha.
NullSimResult null_fpr(const NullSimConfig& cfg);

}  // namespace serialcorr::pipeline
