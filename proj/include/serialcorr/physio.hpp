#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "serialcorr/common.hpp"

namespace serialcorr::physio {

constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Nuisance schemes, named as on the command line.
enum class Scheme { none, retroicor, retroicor_rf, retroicor_volterra };
std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

/// Peripheral recordings. Sample i of a waveform is taken at t0_s + i / rate
/// seconds relative to the start of the first scan.
struct PhysioRecording {
    std::vector<double> cardiac;
    double cardiac_rate_hz = 0.0;
    std::vector<double> cardiac_peaks_s;  // optional; takes precedence over the waveform
    std::vector<double> respiratory;
    double respiratory_rate_hz = 0.0;
    double t0_s = 0.0;

    void validate() const;
};

/// Per-scan phases in [0, 2 pi).
struct PhaseSeries {
    std::vector<double> cardiac;
    std::vector<double> respiratory;
};

/// Scan reference times k * tr + ref_fraction * tr (mid-volume by default).
std::vector<double> scan_times(std::size_t T, double tr_s, double ref_fraction = 0.5);

/// Linear interpolation of a uniformly sampled signal at time t, clamped at the ends.
double sample_at(std::span<const double> x, double rate_hz, double t0_s, double t);

// --- ECG gradient artefact cleanup -----------------------------------------------

/// Hamming-windowed sinc low-pass, odd length spanning `support_s`, unit DC gain.
std::vector<double> lowpass_fir(double cutoff_hz, double rate_hz, double support_s = 0.5);

/// Zero-phase FIR application (centred kernel, replicate edges).
std::vector<double> apply_fir(std::span<const double> x, std::span<const double> taps);

/// Linear-interpolation resampling starting at the first sample.
std::vector<double> resample_linear(std::span<const double> x, double rate_in_hz, double rate_out_hz);

struct GradientCleanupOptions {
    std::size_t template_half_width = 4;  // epochs on each side of the current one
    double lowpass_hz = 40.0;
    double fir_support_s = 0.5;
    double output_rate_hz = 100.0;
};

/// Removes a TR-locked gradient artefact: per-epoch offset, then a moving
/// average template over the current and neighbouring epochs; low-pass; 100 Hz.
/// The recording must start at the first scan and cover scan_count * tr_s.
std::vector<double> correct_gradient_artifact(std::span<const double> ecg, double rate_hz, double tr_s,
                                              std::size_t scan_count, const GradientCleanupOptions& opt = {});

struct PeakOptions {
    double threshold_fraction = 0.6;
    double percentile = 90.0;
    double refractory_s = 0.3;
};

/// R-peak times (seconds from the first sample) of a cleaned ECG. The
/// amplitude reference is the given percentile of the per-window maxima over
/// consecutive refractory-length windows; local maxima above
/// threshold_fraction times that reference are kept, and within a refractory
/// period only the largest survives. Peak times are refined by parabolic
/// interpolation.
std::vector<double> detect_cardiac_peaks(std::span<const double> ecg, double rate_hz, const PeakOptions& opt = {});

// --- phases and RETROICOR ----------------------------------------------------------

/// Cardiac phase 2 pi (t - t_k) / (t_{k+1} - t_k); outside the peak range the
/// nearest inter-beat interval is extrapolated.
double cardiac_phase(std::span<const double> peaks_s, double t);

/// Histogram-equalized respiratory phase (100-bin cumulative histogram of the
/// belt over the run, sign from a 1 s central difference).
std::vector<double> respiratory_phase(std::span<const double> belt, double rate_hz, double t0_s,
                                      std::span<const double> times, std::size_t bins = 100);

PhaseSeries physio_phases(std::span<const double> peaks_s, std::span<const double> belt, double belt_rate_hz,
                          double belt_t0_s, std::span<const double> times);

struct RetroicorOrders {
    int cardiac = 3;
    int respiratory = 4;
    int interaction = 1;
};

struct NamedColumns {
    Eigen::MatrixXd values;  // T x M
    std::vector<std::string> names;
};

/// Fourier expansion in cardiac/respiratory phase plus interaction terms,
/// mean-centred: 2c + 2r + 4i columns.
NamedColumns retroicor_regressors(const PhaseSeries& phases, const RetroicorOrders& orders = {});

// --- rate-based regressors -------------------------------------------------------

struct RateSeries {
    std::vector<double> rv;  // belt standard deviation in the window
    std::vector<double> hr;  // beats per minute
};

RateSeries rv_hr_series(std::span<const double> belt, double belt_rate_hz, double belt_t0_s,
                        std::span<const double> peaks_s, std::span<const double> times, double window_s = 6.0);

/// Respiration response function, t in seconds.
double rrf(double t);
/// Cardiac response function, t in seconds.
double crf(double t);

/// Convolves a per-scan series with a response kernel on a 1 s grid (60 s
/// support, edge-replicated padding) and samples the result at t_k - delay_s.
/// No centring; mostly useful on its own for tests.
std::vector<double> convolve_response(std::span<const double> series, std::span<const double> times,
                                      const std::function<double(double)>& kernel, double delay_s,
                                      double support_s = 60.0);

/// Mean-centred RRF (from RV) and CRF (from HR) columns at the given delays.
NamedColumns response_function_regressors(std::span<const double> rv, std::span<const double> hr,
                                          std::span<const double> times, double delay_rrf_s, double delay_crf_s);

struct DelaySelection {
    double delay_rrf_s = 0.0;
    double delay_crf_s = 0.0;
    std::vector<double> delays;
    std::vector<std::size_t> counts_rrf;
    std::vector<std::size_t> counts_crf;
    double alpha = 1e-3;
    Notices warnings;
};

/// Default delay grid in seconds.
std::vector<double> default_delays();

/// Chooses the delay with the most voxels whose F-test on the added response
/// column reaches p < alpha. Ties go to delay 0, then to smaller |delay|, then
/// to the negative delay.
DelaySelection select_delay(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& base_design,
                            std::span<const double> rv, std::span<const double> hr, std::span<const double> times,
                            const std::vector<double>& delays = default_delays(), double alpha = 1e-3,
                            unsigned threads = 1);

/// Index of the winning delay under the documented tie-break rule.
std::size_t pick_delay(const std::vector<double>& delays, const std::vector<std::size_t>& counts);

/// [rp, backward-difference rp, rp^2, diff^2], all mean-centred: T x 24.
NamedColumns volterra_motion(const Eigen::MatrixXd& rp);

/// Mean-centres every column in place.
void center_columns(Eigen::MatrixXd& m);

/// A named bundle of nuisance regressors: motion (6 or 24 columns) and
/// physiological columns (0 / 18 / 20 / 18).
struct NuisanceSet {
    Scheme scheme = Scheme::none;
    NamedColumns motion;
    NamedColumns physio;
    RetroicorOrders orders;
    std::optional<double> delay_rrf_s;
    std::optional<double> delay_crf_s;

    std::size_t rows() const;
};

struct NuisanceInputs {
    Eigen::MatrixXd realignment;  // T x 6
    std::optional<PhaseSeries> phases;
    std::optional<RateSeries> rates;
    std::vector<double> times;
    double delay_rrf_s = 0.0;
    double delay_crf_s = 0.0;
    RetroicorOrders orders;
};

NuisanceSet build_nuisance(Scheme scheme, const NuisanceInputs& in);

}  // namespace serialcorr::physio
