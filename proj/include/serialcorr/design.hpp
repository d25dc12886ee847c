#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "serialcorr/common.hpp"
#include "serialcorr/dataio.hpp"
#include "serialcorr/linalg.hpp"

namespace serialcorr::physio {
struct NuisanceSet;
}

namespace serialcorr::design {

enum class HrfVariant { canonical, temporal_derivative, dispersion_derivative };

/// Double-gamma parameters; defaults are the standard SPM12 values
/// (response delay 6 s, undershoot delay 16 s, unit dispersions, ratio 6, 32 s).
struct HrfParams {
    double response_delay_s = 6.0;
    double undershoot_delay_s = 16.0;
    double response_dispersion = 1.0;
    double undershoot_dispersion = 1.0;
    double ratio = 6.0;
    double onset_s = 0.0;
    double length_s = 32.0;
};

struct HRFKernel {
    double dt_s = 0.0;
    std::vector<double> samples;  // samples[i] = h(i * dt_s), i * dt_s in [0, length]
    HrfVariant variant = HrfVariant::canonical;
};

/// Unnormalized double-gamma value at time t (seconds).
double double_gamma(double t, const HrfParams& p = {});

/// The canonical kernel (unit peak) followed by its raw temporal and
/// dispersion derivatives, all scaled by the same normalization constant.
std::vector<HRFKernel> canonical_hrf(double dt_s, const HrfParams& p = {});

struct Condition {
    std::string name;
    std::vector<double> onsets_s;
    double duration_s = 0.0;
};

struct TaskSchedule {
    std::vector<Condition> conditions;
    double run_length_s = 0.0;  // 0 when unknown

    void validate() const;
};

enum class ScheduleVariant { simple_first, complex_first };

/// The finger-tapping run: [rest, A, B, rest, B, A] x 3 + rest, 18 s blocks,
/// with A = simple (simple_first) or complex (complex_first); `reversed`
/// swaps the two movement conditions.
TaskSchedule default_task_schedule(ScheduleVariant variant = ScheduleVariant::simple_first, bool reversed = false);

/// Boxcar on a 16-bins-per-TR microtime grid convolved with the kernel and
/// sampled at t = k * tr_s. When the kernel step divides TR it is used as the
/// microtime step directly; otherwise the kernel is linearly resampled.
std::vector<double> block_regressor(const Condition& condition, std::size_t T, double tr_s, const HRFKernel& kernel);

enum class ColumnGroup { task, motion, physio, drift, constant };
std::string to_string(ColumnGroup g);
ColumnGroup group_from_string(const std::string& s);

struct DesignMatrix {
    Eigen::MatrixXd X;  // T x K
    std::vector<std::string> names;
    std::vector<ColumnGroup> groups;
    double tr_s = 1.0;
    Notices warnings;

    std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(X.cols()); }
    std::vector<std::size_t> columns_in(ColumnGroup g) const;
    void append(const std::string& name, ColumnGroup g, std::span<const double> values);
    void validate() const;
};

enum class DerivativeMode { raw, orthogonalized };

struct DesignOptions {
    std::optional<double> dct_cutoff_s;  // high-pass drift basis, off by default
    DerivativeMode derivatives = DerivativeMode::raw;
    HrfParams hrf;
};

/// Task regressors: for every condition, canonical, temporal and dispersion
/// derivative columns (in that order), named "<cond>_hrf", "<cond>_dt", "<cond>_dd".
DesignMatrix task_columns(const TaskSchedule& schedule, std::size_t T, double tr_s, const DesignOptions& opt = {});

/// Discrete cosine drift basis with periods longer than cutoff_s (DC excluded).
Eigen::MatrixXd dct_basis(std::size_t T, double tr_s, double cutoff_s);

/// Column order: task | motion | physio | drift | constant.
/// Motion and physio columns come from the nuisance set (the Volterra scheme
/// already carries its 24 motion columns).
DesignMatrix build_design(const DesignMatrix& task, const physio::NuisanceSet& nuisance, std::size_t T, double tr_s,
                          const DesignOptions& opt = {});

/// Keeps rows offset, offset + factor, ...; nuisance/drift columns are re-centred.
DesignMatrix downsample_design(const DesignMatrix& d, std::size_t factor, std::size_t offset = 0);

/// CSV export/import with "group:name" headers.
io::TableData to_table(const DesignMatrix& d);
DesignMatrix from_table(const io::TableData& t, double tr_s);

}  // namespace serialcorr::design
