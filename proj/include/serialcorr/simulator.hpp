#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "serialcorr/common.hpp"
#include "serialcorr/dataio.hpp"
#include "serialcorr/design.hpp"
#include "serialcorr/physio.hpp"
#include "serialcorr/rng.hpp"

namespace serialcorr::sim {

struct TissueSpec {
    std::string name;
    int label = 0;
    double slab_fraction = 0.0;  // share of the x extent, slabs laid out in order
    std::vector<double> ar;      // AR coefficients of the voxel noise
    double innovation_sd = 10.0;
    double baseline = 1000.0;
    std::array<double, 2> cardiac_amp{0.0, 0.0};      // fractions of baseline, harmonics 1 and 2
    std::array<double, 2> respiratory_amp{0.0, 0.0};  // fractions of baseline
};

struct SimConfig {
    std::array<std::size_t, 3> dims{24, 24, 8};
    std::array<double, 3> voxel_mm{3.0, 3.0, 3.0};
    double tr_s = 0.589;
    std::size_t T = 581;
    std::vector<TissueSpec> tissues;

    double cardiac_hz = 1.04;
    double cardiac_wander = 0.05;   // relative rate excursion
    double cardiac_wander_hz = 0.03;
    double respiratory_hz = 0.31;
    double respiratory_am_depth = 0.2;  // belt amplitude modulation
    double respiratory_am_hz = 0.015;
    double physio_rate_hz = 1000.0;  // ECG and belt; tr * rate integral keeps artifact epochs aligned
    double gradient_artifact_amp = 3.0;

    double rrf_amp = 0.0;  // fraction of baseline per unit-variance RRF column
    double crf_amp = 0.0;
    double rf_lag_s = 0.0;

    double drift_amp = 0.0;  // fraction of baseline
    double motion_scale = 0.05;

    std::array<std::size_t, 3> roi_origin{7, 10, 3};
    std::array<std::size_t, 3> roi_size{4, 4, 2};
    double effect_pct = 2.0;
    design::ScheduleVariant schedule = design::ScheduleVariant::simple_first;
    bool reversed = false;

    std::uint64_t seed = 1;

    void validate() const;
    std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
};

/// Default layout: CSF | GM | WM slabs along x, physiological signals on.
SimConfig default_config();
/// Same as default_config() with every physiological amplitude set to zero.
SimConfig quiet_config();

nlohmann::json to_json(const SimConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
SimConfig config_from_json(const nlohmann::json& j);

struct SimTruth {
    SimConfig config;
    io::Mask tissue_mask;             // tissue labels
    io::Mask activation_mask;         // 1 inside the active ROI, empty for null data
    io::Volume4D signal;              // noise-free voxel series
    io::Volume4D physio_term;         // injected cardiac + respiratory + RF term
    std::vector<double> voxel_phase;  // per-voxel phase offset
    std::vector<double> task_regressor;
    std::vector<double> rrf_column, crf_column;
    std::vector<double> cardiac_phase, respiratory_phase;  // true phases at scan times
    std::vector<double> peak_times_s;
    double cardiac_alias_hz = 0.0;
    double respiratory_alias_hz = 0.0;

    nlohmann::json to_json() const;  // everything except the volumes
};

struct SimDataset {
    io::Volume4D data;
    physio::PhysioRecording recording;
    io::TableData realignment;  // 6 columns
    SimTruth truth;
};

SimDataset simulate_dataset(const SimConfig& cfg, unsigned threads = 1);

/// Stationary AR(p) noise for one entity: innovation stream 0, 500 burn-in samples.
std::vector<double> ar_noise(const rng::CounterRng& rng, std::uint32_t entity, std::span<const double> a, double sd,
                             std::size_t T);

/// simulate_dataset with the task effect forced to zero.
SimDataset null_dataset(SimConfig cfg, unsigned threads = 1);

/// Realignment columns as a T x 6 matrix.
Eigen::MatrixXd realignment_matrix(const io::TableData& t);

/// Writes data.nii, tissue_mask.nii, activation_mask.nii, physio.csv,
/// truth_peaks.txt, realignment.csv, truth_signal.nii and truth.json into `dir`.
void write_dataset(const SimDataset& d, const std::filesystem::path& dir);

/// Reads a dataset directory: data.nii, tissue_mask.nii, realignment.csv and,
/// when present, physio.csv (time_s, cardiac, respiratory on one clock) and an
/// optional peaks.txt of R-peak times. Truth files are not loaded.
struct LoadedDataset {
    io::Volume4D data;
    io::Mask tissue_mask;
    physio::PhysioRecording recording;
    bool has_physio = false;
    Eigen::MatrixXd realignment;
};
LoadedDataset read_dataset(const std::filesystem::path& dir);

}  // namespace serialcorr::sim
