#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "serialcorr/common.hpp"
#include "serialcorr/dataio.hpp"

namespace serialcorr::spectra {

struct SpectrumCurve {
    std::vector<double> freq_hz;  // uniform grid on [0, 1 / (2 tr)]
    std::vector<double> mean;
    std::vector<double> stddev;   // across contributing voxels (sample std, 0 for one voxel)
    std::size_t count = 0;
    std::size_t order = 0;        // AR order for per-order curves
    bool low_count = false;

    io::TableData to_table() const;
};

/// S(f) = innovation_var / |1 - sum_k a_k exp(-i 2 pi f k tr)|^2 on n_freq points.
SpectrumCurve ar_spectrum(std::span<const double> a, double innovation_var, double tr_s, std::size_t n_freq = 512);

/// Process variance recovered from a power curve: 2 tr times the trapezoid integral over [0, Nyquist].
double spectrum_power(const SpectrumCurve& c, double tr_s);

/// Variance of the AR process from its MA(infinity) weights.
double ar_process_variance(std::span<const double> a, double innovation_var);

/// One-sided DFT amplitude (2/T, DC and Nyquist 1/T), by default after a linear detrend.
std::vector<double> amplitude_spectrum(std::span<const double> x, bool detrend = true);

/// Mean and std of amplitude spectra over the columns of R (T x N).
SpectrumCurve residual_spectrum(const Eigen::MatrixXd& R, double tr_s, unsigned threads = 1, bool detrend = true);

/// |f - fs round(f / fs)|.
double alias_frequency(double f_hz, double fs_hz);

/// Voxels grouped by winning order; each group averages its per-voxel AR spectra.
/// Groups with fewer than `min_count` voxels are flagged low_count.
std::vector<SpectrumCurve> spectra_by_order(const std::vector<std::vector<double>>& ar_means,
                                            std::span<const double> innovation_var,
                                            std::span<const std::size_t> order_map, double tr_s,
                                            std::size_t n_freq = 512, std::size_t min_count = 10);

/// Max / min of the centred moving average (width bins) of a curve,
/// excluding the DC and Nyquist bins.
double smoothed_flatness(std::span<const double> values, std::size_t width = 8);

/// Index of the largest value in [lo_hz, hi_hz].
std::size_t peak_index(const SpectrumCurve& c, double lo_hz, double hi_hz);

}  // namespace serialcorr::spectra
