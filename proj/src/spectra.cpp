#include "serialcorr/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <numbers>

#include "serialcorr/glm.hpp"
#include "serialcorr/linalg.hpp"

namespace serialcorr::spectra {

namespace {

std::vector<double> grid(std::size_t n, double nyquist) {
    std::vector<double> f(n);
    for (std::size_t j = 0; j < n; ++j) f[j] = nyquist * static_cast<double>(j) / static_cast<double>(n - 1);
    return f;
}

// Mean and sample std of rows of `values` (one vector per voxel), in input order.
void reduce(const std::vector<std::vector<double>>& values, SpectrumCurve& c) {
    const std::size_t n = values.size();
    const std::size_t m = values.front().size();
    c.mean.assign(m, 0.0);
    c.stddev.assign(m, 0.0);
    c.count = n;
    std::vector<double> col(n);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = values[i][j];
        const double mean = compensated_sum(col.data(), n) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = (col[i] - mean) * (col[i] - mean);
        c.mean[j] = mean;
        c.stddev[j] = n > 1 ? std::sqrt(compensated_sum(col.data(), n) / static_cast<double>(n - 1)) : 0.0;
    }
}

}  // namespace

io::TableData SpectrumCurve::to_table() const {
    io::TableData t;
    t.add("freq_hz", freq_hz);
    t.add("mean", mean);
    t.add("std", stddev);
    t.add("n", std::vector<double>(freq_hz.size(), static_cast<double>(count)));
    return t;
}

SpectrumCurve ar_spectrum(std::span<const double> a, double innovation_var, double tr_s, std::size_t n_freq) {
    if (!(tr_s > 0.0)) throw ValidationError("ar_spectrum: tr_s must be positive");
    if (n_freq < 2) throw ValidationError("ar_spectrum: need at least two frequencies");
    if (!(innovation_var >= 0.0)) throw ValidationError("ar_spectrum: innovation variance must be non-negative");
    if (!glm::is_stationary(a)) throw ValidationError("ar_spectrum: AR coefficients are not stationary");
    SpectrumCurve c;
    c.freq_hz = grid(n_freq, 0.5 / tr_s);
    c.mean.resize(n_freq);
    c.stddev.assign(n_freq, 0.0);
    c.count = 1;
    c.order = a.size();
    for (std::size_t j = 0; j < n_freq; ++j) {
        std::complex<double> d(1.0, 0.0);
        const double w = 2.0 * std::numbers::pi * c.freq_hz[j] * tr_s;
        for (std::size_t k = 0; k < a.size(); ++k) d -= a[k] * std::polar(1.0, -w * static_cast<double>(k + 1));
        c.mean[j] = innovation_var / std::norm(d);
    }
    return c;
}

double spectrum_power(const SpectrumCurve& c, double tr_s) {
    double s = 0.0;
    for (std::size_t j = 1; j < c.freq_hz.size(); ++j)
        s += 0.5 * (c.mean[j] + c.mean[j - 1]) * (c.freq_hz[j] - c.freq_hz[j - 1]);
    return 2.0 * tr_s * s;
}

double ar_process_variance(std::span<const double> a, double innovation_var) {
    if (!glm::is_stationary(a)) throw ValidationError("ar_process_variance: AR coefficients are not stationary");
    // psi_j = sum_k a_k psi_{j-k}, psi_0 = 1; truncated once the weights are negligible.
    std::vector<double> psi{1.0};
    double sum = 1.0;
    for (std::size_t j = 1; j < 1000000; ++j) {
        double v = 0.0;
        for (std::size_t k = 1; k <= a.size() && k <= j; ++k) v += a[k - 1] * psi[j - k];
        psi.push_back(v);
        sum += v * v;
        if (j > 10 * a.size() + 10) {
            double tail = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) tail += std::abs(psi[j - k]);
            if (tail < 1e-17 * sum) break;
        }
    }
    return innovation_var * sum;
}

std::vector<double> amplitude_spectrum(std::span<const double> x, bool detrend) {
    const std::size_t T = x.size();
    if (T < 8) throw ValidationError("amplitude_spectrum: need at least 8 samples");
    std::vector<double> y(x.begin(), x.end());
    if (detrend) {
        const double tbar = 0.5 * static_cast<double>(T - 1);
        double sxx = 0.0, sxy = 0.0;
        const double mean = compensated_sum(y.data(), T) / static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) {
            const double d = static_cast<double>(t) - tbar;
            sxx += d * d;
            sxy += d * (y[t] - mean);
        }
        const double slope = sxy / sxx;
        for (std::size_t t = 0; t < T; ++t) y[t] -= mean + slope * (static_cast<double>(t) - tbar);
    }
    std::vector<double> cosv(T), sinv(T);
    for (std::size_t i = 0; i < T; ++i) {
        const double w = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(T);
        cosv[i] = std::cos(w);
        sinv[i] = std::sin(w);
    }
    const std::size_t nb = T / 2 + 1;
    std::vector<double> amp(nb);
    for (std::size_t k = 0; k < nb; ++k) {
        double re = 0.0, im = 0.0;
        std::size_t idx = 0;
        for (std::size_t t = 0; t < T; ++t) {
            re += y[t] * cosv[idx];
            im -= y[t] * sinv[idx];
            idx += k;
            if (idx >= T) idx -= T;
        }
        const bool edge = k == 0 || (T % 2 == 0 && k == T / 2);
        amp[k] = (edge ? 1.0 : 2.0) * std::hypot(re, im) / static_cast<double>(T);
    }
    return amp;
}

SpectrumCurve residual_spectrum(const Eigen::MatrixXd& R, double tr_s, unsigned threads, bool detrend) {
    if (R.cols() == 0) throw ValidationError("residual_spectrum: empty mask");
    if (!(tr_s > 0.0)) throw ValidationError("residual_spectrum: tr_s must be positive");
    const auto T = static_cast<std::size_t>(R.rows());
    if (T < 8) throw ValidationError("residual_spectrum: need at least 8 samples");
    const auto N = static_cast<std::size_t>(R.cols());
    std::vector<std::vector<double>> amps(N);
    parallel_for(N, threads, [&](std::size_t n) {
        const auto col = R.col(static_cast<Eigen::Index>(n));
        amps[n] = amplitude_spectrum(std::span<const double>(col.data(), T), detrend);
    });
    SpectrumCurve c;
    const std::size_t nb = T / 2 + 1;
    c.freq_hz.resize(nb);
    for (std::size_t k = 0; k < nb; ++k) c.freq_hz[k] = static_cast<double>(k) / (static_cast<double>(T) * tr_s);
    reduce(amps, c);
    return c;
}

double alias_frequency(double f_hz, double fs_hz) {
    if (!(f_hz >= 0.0) || !(fs_hz > 0.0)) throw ValidationError("alias_frequency: frequencies must be positive");
    return std::abs(f_hz - fs_hz * std::round(f_hz / fs_hz));
}

std::vector<SpectrumCurve> spectra_by_order(const std::vector<std::vector<double>>& ar_means,
                                            std::span<const double> innovation_var,
                                            std::span<const std::size_t> order_map, double tr_s, std::size_t n_freq,
                                            std::size_t min_count) {
    if (ar_means.size() != order_map.size() || innovation_var.size() != order_map.size())
        throw ValidationError("spectra_by_order: coefficient, variance and order map sizes differ");
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t n = 0; n < order_map.size(); ++n) groups[order_map[n]].push_back(n);
    std::vector<SpectrumCurve> out;
    for (const auto& [order, members] : groups) {
        std::vector<std::vector<double>> curves;
        curves.reserve(members.size());
        for (std::size_t n : members) {
            if (ar_means[n].size() != order)
                throw ValidationError("spectra_by_order: voxel " + std::to_string(n) + " has " +
                                      std::to_string(ar_means[n].size()) + " coefficients, order map says " +
                                      std::to_string(order));
            curves.push_back(ar_spectrum(ar_means[n], innovation_var[n], tr_s, n_freq).mean);
        }
        SpectrumCurve c;
        c.freq_hz = grid(n_freq, 0.5 / tr_s);
        reduce(curves, c);
        c.order = order;
        c.low_count = members.size() < min_count;
        out.push_back(std::move(c));
    }
    return out;
}

double smoothed_flatness(std::span<const double> values, std::size_t width) {
    if (values.size() < width + 2 || width == 0) throw ValidationError("smoothed_flatness: curve too short");
    const std::size_t lo = 1, hi = values.size() - 1;  // [lo, hi)
    double mx = -std::numeric_limits<double>::infinity(), mn = std::numeric_limits<double>::infinity();
    for (std::size_t i = lo; i + width <= hi; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += values[i + j];
        s /= static_cast<double>(width);
        mx = std::max(mx, s);
        mn = std::min(mn, s);
    }
    return mx / mn;
}

std::size_t peak_index(const SpectrumCurve& c, double lo_hz, double hi_hz) {
    std::size_t best = c.freq_hz.size();
    for (std::size_t j = 0; j < c.freq_hz.size(); ++j) {
        if (c.freq_hz[j] < lo_hz || c.freq_hz[j] > hi_hz) continue;
        if (best == c.freq_hz.size() || c.mean[j] > c.mean[best]) best = j;
    }
    if (best == c.freq_hz.size()) throw ValidationError("peak_index: no frequencies in range");
    return best;
}

}  // namespace serialcorr::spectra
