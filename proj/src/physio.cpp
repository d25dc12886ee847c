#include "serialcorr/physio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>

namespace serialcorr::physio {

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::none: return "none";
        case Scheme::retroicor: return "retroicor";
        case Scheme::retroicor_rf: return "retroicor_rf";
        case Scheme::retroicor_volterra: return "retroicor_volterra";
    }
    return "none";
}

Scheme scheme_from_string(const std::string& s) {
    if (s == "none") return Scheme::none;
    if (s == "retroicor") return Scheme::retroicor;
    if (s == "retroicor_rf") return Scheme::retroicor_rf;
    if (s == "retroicor_volterra") return Scheme::retroicor_volterra;
    throw ValidationError("unknown nuisance scheme '" + s + "' (expected none|retroicor|retroicor_rf|retroicor_volterra)");
}

void PhysioRecording::validate() const {
    if (!cardiac.empty() && !(cardiac_rate_hz > 0.0)) throw ValidationError("physio: cardiac rate must be positive");
    if (!respiratory.empty() && !(respiratory_rate_hz > 0.0))
        throw ValidationError("physio: respiratory rate must be positive");
    for (double v : cardiac)
        if (!std::isfinite(v)) throw ValidationError("physio: cardiac waveform has non-finite samples");
    for (double v : respiratory)
        if (!std::isfinite(v)) throw ValidationError("physio: respiratory waveform has non-finite samples");
    for (std::size_t i = 1; i < cardiac_peaks_s.size(); ++i)
        if (!(cardiac_peaks_s[i] > cardiac_peaks_s[i - 1]))
            throw ValidationError("physio: peak times must be strictly increasing");
}

std::vector<double> scan_times(std::size_t T, double tr_s, double ref_fraction) {
    std::vector<double> t(T);
    for (std::size_t k = 0; k < T; ++k) t[k] = (static_cast<double>(k) + ref_fraction) * tr_s;
    return t;
}

double sample_at(std::span<const double> x, double rate_hz, double t0_s, double t) {
    if (x.empty()) throw ValidationError("sample_at: empty signal");
    const double pos = (t - t0_s) * rate_hz;
    if (pos <= 0.0) return x.front();
    const double last = static_cast<double>(x.size() - 1);
    if (pos >= last) return x.back();
    const auto i = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(i);
    return (1.0 - f) * x[i] + f * x[i + 1];
}

// --- ECG cleanup -----------------------------------------------------------------

std::vector<double> lowpass_fir(double cutoff_hz, double rate_hz, double support_s) {
    if (!(cutoff_hz > 0.0) || !(rate_hz > 2.0 * cutoff_hz)) throw ValidationError("lowpass_fir: cutoff must be below Nyquist");
    auto n = static_cast<std::size_t>(std::lround(support_s * rate_hz));
    if (n % 2 == 0) ++n;
    const double M = static_cast<double>(n - 1) / 2.0;
    const double fc = cutoff_hz / rate_hz;
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double m = static_cast<double>(i) - M;
        const double sinc = m == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
        const double w = n == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
        h[i] = sinc * w;
    }
    const double sum = std::accumulate(h.begin(), h.end(), 0.0);
    for (double& v : h) v /= sum;
    return h;
}

std::vector<double> apply_fir(std::span<const double> x, std::span<const double> taps) {
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
    std::vector<double> out(x.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -half; k <= half; ++k) {
            const std::ptrdiff_t j = std::clamp<std::ptrdiff_t>(i - k, 0, n - 1);
            acc += taps[static_cast<std::size_t>(k + half)] * x[static_cast<std::size_t>(j)];
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

std::vector<double> resample_linear(std::span<const double> x, double rate_in_hz, double rate_out_hz) {
    if (x.empty()) return {};
    const double duration = static_cast<double>(x.size() - 1) / rate_in_hz;
    const auto n = static_cast<std::size_t>(std::floor(duration * rate_out_hz + 1e-9)) + 1;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = sample_at(x, rate_in_hz, 0.0, static_cast<double>(i) / rate_out_hz);
    return out;
}

std::vector<double> correct_gradient_artifact(std::span<const double> ecg, double rate_hz, double tr_s,
                                              std::size_t scan_count, const GradientCleanupOptions& opt) {
    if (!(rate_hz >= 200.0)) throw ValidationError("correct_gradient_artifact: ECG rate must be >= 200 Hz");
    if (!(tr_s > 0.0) || scan_count == 0) throw ValidationError("correct_gradient_artifact: invalid TR or scan count");
    const double epoch_samples = tr_s * rate_hz;
    const auto L = static_cast<std::size_t>(std::floor(epoch_samples));
    const auto needed = static_cast<std::size_t>(std::llround(static_cast<double>(scan_count - 1) * epoch_samples)) + L;
    if (ecg.size() < needed)
        throw ValidationError("correct_gradient_artifact: recording (" + std::to_string(ecg.size()) +
                              " samples) is shorter than the run (" + std::to_string(needed) + " samples)");

    std::vector<std::size_t> start(scan_count);
    for (std::size_t n = 0; n < scan_count; ++n)
        start[n] = static_cast<std::size_t>(std::llround(static_cast<double>(n) * epoch_samples));

    // Offset-removed epochs.
    std::vector<std::vector<double>> epochs(scan_count, std::vector<double>(L));
    for (std::size_t n = 0; n < scan_count; ++n) {
        double mean = 0.0;
        for (std::size_t i = 0; i < L; ++i) mean += ecg[start[n] + i];
        mean /= static_cast<double>(L);
        for (std::size_t i = 0; i < L; ++i) epochs[n][i] = ecg[start[n] + i] - mean;
    }

    std::vector<double> cleaned(ecg.begin(), ecg.end());
    const std::size_t hw = opt.template_half_width;
    for (std::size_t n = 0; n < scan_count; ++n) {
        const std::size_t lo = n >= hw ? n - hw : 0;
        const std::size_t hi = std::min(scan_count - 1, n + hw);
        const double count = static_cast<double>(hi - lo + 1);
        for (std::size_t i = 0; i < L; ++i) {
            double tmpl = 0.0;
            for (std::size_t m = lo; m <= hi; ++m) tmpl += epochs[m][i];
            cleaned[start[n] + i] = epochs[n][i] - tmpl / count;
        }
    }
    const auto taps = lowpass_fir(opt.lowpass_hz, rate_hz, opt.fir_support_s);
    const auto filtered = apply_fir(cleaned, taps);
    return resample_linear(filtered, rate_hz, opt.output_rate_hz);
}

namespace {

double percentile(std::vector<double> v, double pct) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const std::size_t j = std::min(i + 1, v.size() - 1);
    const double f = pos - static_cast<double>(i);
    return (1.0 - f) * v[i] + f * v[j];
}

}  // namespace

std::vector<double> detect_cardiac_peaks(std::span<const double> ecg, double rate_hz, const PeakOptions& opt) {
    if (!(rate_hz > 0.0)) throw ValidationError("detect_cardiac_peaks: rate must be positive");
    const std::size_t n = ecg.size();
    std::vector<double> x(ecg.begin(), ecg.end());
    const double median = percentile(x, 50.0);
    for (double& v : x) v -= median;

    const auto window = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.refractory_s * rate_hz)));
    std::vector<double> window_max;
    for (std::size_t s = 0; s < n; s += window) {
        const std::size_t e = std::min(n, s + window);
        window_max.push_back(*std::max_element(x.begin() + static_cast<std::ptrdiff_t>(s), x.begin() + static_cast<std::ptrdiff_t>(e)));
    }
    const double threshold = opt.threshold_fraction * percentile(window_max, opt.percentile);

    std::vector<std::size_t> picks;
    if (threshold > 0.0) {
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (!(x[i] > threshold && x[i] > x[i - 1] && x[i] >= x[i + 1])) continue;
            if (!picks.empty() && static_cast<double>(i - picks.back()) < opt.refractory_s * rate_hz) {
                if (x[i] > x[picks.back()]) picks.back() = i;
                continue;
            }
            picks.push_back(i);
        }
    }
    if (picks.size() < 2) throw ValidationError("detect_cardiac_peaks: fewer than 2 peaks; cannot define cardiac phase");

    std::vector<double> times;
    times.reserve(picks.size());
    for (std::size_t i : picks) {
        const double a = x[i - 1], b = x[i], c = x[i + 1];
        const double denom = a - 2.0 * b + c;
        const double shift = denom < 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
        times.push_back((static_cast<double>(i) + shift) / rate_hz);
    }
    return times;
}

// --- phases ----------------------------------------------------------------------

namespace {

double wrap_phase(double phi) {
    double r = std::fmod(phi, kTwoPi);
    if (r < 0.0) r += kTwoPi;
    if (r >= kTwoPi) r = 0.0;
    return r;
}

}  // namespace

double cardiac_phase(std::span<const double> peaks, double t) {
    if (peaks.size() < 2) throw ValidationError("cardiac_phase: at least two peaks are required");
    const auto it = std::upper_bound(peaks.begin(), peaks.end(), t);
    std::size_t k = 0;
    if (it == peaks.begin()) {
        k = 0;
    } else if (it == peaks.end()) {
        k = peaks.size() - 2;
    } else {
        k = static_cast<std::size_t>(it - peaks.begin()) - 1;
    }
    const double period = peaks[k + 1] - peaks[k];
    return wrap_phase(kTwoPi * (t - peaks[k]) / period);
}

std::vector<double> respiratory_phase(std::span<const double> belt, double rate_hz, double t0_s,
                                      std::span<const double> times, std::size_t bins) {
    if (belt.empty()) throw ValidationError("respiratory_phase: empty belt recording");
    if (bins == 0) throw ValidationError("respiratory_phase: bins must be positive");
    const auto [lo_it, hi_it] = std::minmax_element(belt.begin(), belt.end());
    const double lo = *lo_it, hi = *hi_it;
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    auto bin_of = [&](double b) {
        const auto i = static_cast<std::ptrdiff_t>(std::floor((b - lo) / width));
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(bins) - 1));
    };
    std::vector<double> counts(bins, 0.0);
    for (double b : belt) counts[bin_of(b)] += 1.0;
    // below[i] = samples in bins 0 .. i-1; the cumulative value is interpolated within a bin.
    std::vector<double> below(bins + 1, 0.0);
    for (std::size_t i = 0; i < bins; ++i) below[i + 1] = below[i] + counts[i];
    const double total = below.back();
    auto cumulative_at = [&](double b) {
        const std::size_t i = bin_of(b);
        const double frac = std::clamp((b - lo) / width - static_cast<double>(i), 0.0, 1.0);
        return below[i] + frac * counts[i];
    };

    std::vector<double> phase(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double b = sample_at(belt, rate_hz, t0_s, times[k]);
        const double db = sample_at(belt, rate_hz, t0_s, times[k] + 0.5) - sample_at(belt, rate_hz, t0_s, times[k] - 0.5);
        const double sign = db >= 0.0 ? 1.0 : -1.0;
        phase[k] = wrap_phase(std::numbers::pi * cumulative_at(b) / total * sign);
    }
    return phase;
}

PhaseSeries physio_phases(std::span<const double> peaks_s, std::span<const double> belt, double belt_rate_hz,
                          double belt_t0_s, std::span<const double> times) {
    PhaseSeries p;
    p.cardiac.resize(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) p.cardiac[k] = cardiac_phase(peaks_s, times[k]);
    p.respiratory = respiratory_phase(belt, belt_rate_hz, belt_t0_s, times);
    return p;
}

void center_columns(Eigen::MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j).array() -= m.col(j).mean();
}

NamedColumns retroicor_regressors(const PhaseSeries& phases, const RetroicorOrders& orders) {
    if (phases.cardiac.size() != phases.respiratory.size())
        throw ValidationError("retroicor: cardiac and respiratory phases differ in length");
    if (orders.cardiac < 0 || orders.respiratory < 0 || orders.interaction < 0)
        throw ValidationError("retroicor: orders must be non-negative");
    const auto T = static_cast<Eigen::Index>(phases.cardiac.size());
    const int M = 2 * orders.cardiac + 2 * orders.respiratory + 4 * orders.interaction;
    NamedColumns out;
    out.values.resize(T, M);
    int col = 0;
    auto add = [&](const std::string& name, auto&& fn) {
        for (Eigen::Index t = 0; t < T; ++t) out.values(t, col) = fn(static_cast<std::size_t>(t));
        out.names.push_back(name);
        ++col;
    };
    const auto& c = phases.cardiac;
    const auto& r = phases.respiratory;
    for (int m = 1; m <= orders.cardiac; ++m) {
        add("card_cos" + std::to_string(m), [&](std::size_t t) { return std::cos(m * c[t]); });
        add("card_sin" + std::to_string(m), [&](std::size_t t) { return std::sin(m * c[t]); });
    }
    for (int m = 1; m <= orders.respiratory; ++m) {
        add("resp_cos" + std::to_string(m), [&](std::size_t t) { return std::cos(m * r[t]); });
        add("resp_sin" + std::to_string(m), [&](std::size_t t) { return std::sin(m * r[t]); });
    }
    for (int m = 1; m <= orders.interaction; ++m) {
        const std::string s = std::to_string(m);
        add("int_cos_plus" + s, [&](std::size_t t) { return std::cos(m * (c[t] + r[t])); });
        add("int_sin_plus" + s, [&](std::size_t t) { return std::sin(m * (c[t] + r[t])); });
        add("int_cos_minus" + s, [&](std::size_t t) { return std::cos(m * (c[t] - r[t])); });
        add("int_sin_minus" + s, [&](std::size_t t) { return std::sin(m * (c[t] - r[t])); });
    }
    center_columns(out.values);
    return out;
}

// --- rates and response functions ------------------------------------------------

RateSeries rv_hr_series(std::span<const double> belt, double belt_rate_hz, double belt_t0_s,
                        std::span<const double> peaks_s, std::span<const double> times, double window_s) {
    if (belt.empty()) throw ValidationError("rv_hr_series: empty belt recording");
    const std::size_t T = times.size();
    RateSeries out;
    out.rv.resize(T);
    out.hr.assign(T, std::numeric_limits<double>::quiet_NaN());
    const double half = window_s / 2.0;
    for (std::size_t k = 0; k < T; ++k) {
        const double lo_t = times[k] - half, hi_t = times[k] + half;
        const auto lo = static_cast<std::ptrdiff_t>(std::ceil((lo_t - belt_t0_s) * belt_rate_hz - 1e-9));
        const auto hi = static_cast<std::ptrdiff_t>(std::floor((hi_t - belt_t0_s) * belt_rate_hz + 1e-9));
        const std::ptrdiff_t a = std::max<std::ptrdiff_t>(lo, 0);
        const std::ptrdiff_t b = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(belt.size()) - 1);
        double mean = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::ptrdiff_t i = a; i <= b; ++i) {
            mean += belt[static_cast<std::size_t>(i)];
            ++n;
        }
        if (n > 0) {
            mean /= static_cast<double>(n);
            for (std::ptrdiff_t i = a; i <= b; ++i) {
                const double d = belt[static_cast<std::size_t>(i)] - mean;
                sq += d * d;
            }
            out.rv[k] = std::sqrt(sq / static_cast<double>(n));
        } else {
            out.rv[k] = 0.0;
        }
        const auto first = std::lower_bound(peaks_s.begin(), peaks_s.end(), lo_t);
        const auto last = std::upper_bound(peaks_s.begin(), peaks_s.end(), hi_t);
        const auto beats = last - first;
        if (beats >= 2) {
            const double ibi = (*(last - 1) - *first) / static_cast<double>(beats - 1);
            out.hr[k] = 60.0 / ibi;
        }
    }
    // Carry the nearest defined heart rate into empty windows.
    std::vector<std::size_t> defined;
    for (std::size_t k = 0; k < T; ++k)
        if (!std::isnan(out.hr[k])) defined.push_back(k);
    if (defined.empty() && T > 0) throw ValidationError("rv_hr_series: no window contains two beats");
    for (std::size_t k = 0; k < T; ++k) {
        if (!std::isnan(out.hr[k])) continue;
        const auto it = std::lower_bound(defined.begin(), defined.end(), k);
        std::size_t pick = 0;
        if (it == defined.end()) {
            pick = defined.back();
        } else if (it == defined.begin()) {
            pick = *it;
        } else {
            const std::size_t right = *it, left = *(it - 1);
            pick = (k - left) <= (right - k) ? left : right;
        }
        out.hr[k] = out.hr[pick];
    }
    return out;
}

double rrf(double t) {
    if (t <= 0.0) return 0.0;
    return 0.6 * std::pow(t, 2.1) * std::exp(-t / 1.6) - 0.0023 * std::pow(t, 3.54) * std::exp(-t / 4.25);
}

double crf(double t) {
    if (t <= 0.0) return 0.0;
    return 0.6 * std::pow(t, 2.7) * std::exp(-t / 1.6) -
           16.0 / std::sqrt(18.0 * std::numbers::pi) * std::exp(-(t - 12.0) * (t - 12.0) / 18.0);
}

std::vector<double> convolve_response(std::span<const double> series, std::span<const double> times,
                                      const std::function<double(double)>& kernel, double delay_s, double support_s) {
    if (series.size() != times.size() || series.empty())
        throw ValidationError("convolve_response: series and times must be non-empty and of equal length");
    const auto support = static_cast<std::size_t>(std::lround(support_s));
    const double max_shift = std::abs(delay_s) + 1.0;
    const double start = times.front() - static_cast<double>(support) - max_shift;
    const double stop = times.back() + max_shift;
    const auto n = static_cast<std::size_t>(std::ceil(stop - start)) + 1;

    // Per-scan series on the 1 s grid, edge replicated.
    auto series_at = [&](double t) {
        if (t <= times.front()) return series.front();
        if (t >= times.back()) return series.back();
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
        const double f = (t - times[i]) / (times[i + 1] - times[i]);
        return (1.0 - f) * series[i] + f * series[i + 1];
    };
    std::vector<double> u(n), k(support), c(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) u[j] = series_at(start + static_cast<double>(j));
    for (std::size_t i = 0; i < support; ++i) k[i] = kernel(static_cast<double>(i));
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < support; ++i) acc += k[i] * (j >= i ? u[j - i] : u.front());
        c[j] = acc;
    }
    std::vector<double> out(times.size());
    for (std::size_t t = 0; t < times.size(); ++t) out[t] = sample_at(c, 1.0, start, times[t] - delay_s);
    return out;
}

NamedColumns response_function_regressors(std::span<const double> rv, std::span<const double> hr,
                                          std::span<const double> times, double delay_rrf_s, double delay_crf_s) {
    if (rv.size() != times.size() || hr.size() != times.size())
        throw ValidationError("response_function_regressors: RV/HR length must match the scan count");
    auto centred = [](std::span<const double> x) {
        std::vector<double> v(x.begin(), x.end());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        for (double& e : v) e -= mean;
        return v;
    };
    const auto rv_c = centred(rv);
    const auto hr_c = centred(hr);
    const auto a = convolve_response(rv_c, times, rrf, delay_rrf_s);
    const auto b = convolve_response(hr_c, times, crf, delay_crf_s);
    NamedColumns out;
    out.values.resize(static_cast<Eigen::Index>(times.size()), 2);
    for (std::size_t t = 0; t < times.size(); ++t) {
        out.values(static_cast<Eigen::Index>(t), 0) = a[t];
        out.values(static_cast<Eigen::Index>(t), 1) = b[t];
    }
    center_columns(out.values);
    out.names = {"rrf", "crf"};
    return out;
}

std::vector<double> default_delays() { return {-12.0, -8.0, -4.0, 0.0, 4.0, 8.0, 12.0}; }

std::size_t pick_delay(const std::vector<double>& delays, const std::vector<std::size_t>& counts) {
    std::size_t best = 0;
    auto better = [&](std::size_t i, std::size_t j) {
        if (counts[i] != counts[j]) return counts[i] > counts[j];
        const double ai = std::abs(delays[i]), aj = std::abs(delays[j]);
        if (ai != aj) return ai < aj;  // covers the preference for 0
        return delays[i] < delays[j];
    };
    for (std::size_t i = 1; i < delays.size(); ++i)
        if (better(i, best)) best = i;
    return best;
}

DelaySelection select_delay(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& base_design, std::span<const double> rv,
                            std::span<const double> hr, std::span<const double> times, const std::vector<double>& delays,
                            double alpha, unsigned threads) {
    const Eigen::Index T = Y.rows();
    const Eigen::Index K = base_design.cols();
    if (base_design.rows() != T) throw ValidationError("select_delay: design rows do not match data");
    if (delays.empty()) throw ValidationError("select_delay: empty delay grid");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("select_delay: alpha must be in (0, 1)");
    if (T <= K + 1) throw ValidationError("select_delay: not enough scans for the F-test");
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(base_design);
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(T, K);
    const Eigen::MatrixXd Yr = Y - Q * (Q.transpose() * Y);
    const Eigen::VectorXd rss0 = Yr.colwise().squaredNorm().transpose();
    const double dof = static_cast<double>(T - K - 1);
    const double f_crit = boost::math::quantile(boost::math::complement(boost::math::fisher_f(1.0, dof), alpha));

    auto count_for = [&](const Eigen::VectorXd& c) -> std::size_t {
        const Eigen::VectorXd cr = c - Q * (Q.transpose() * c);
        const double cc = cr.squaredNorm();
        if (!(cc > 1e-12 * std::max(1.0, c.squaredNorm()))) return 0;
        const Eigen::VectorXd proj = Yr.transpose() * cr;
        std::size_t count = 0;
        for (Eigen::Index n = 0; n < proj.size(); ++n) {
            const double ss = proj(n) * proj(n) / cc;
            const double rss1 = rss0(n) - ss;
            if (!(rss1 > 0.0)) continue;
            if (ss / (rss1 / dof) > f_crit) ++count;
        }
        return count;
    };

    DelaySelection sel;
    sel.delays = delays;
    sel.alpha = alpha;
    sel.counts_rrf.assign(delays.size(), 0);
    sel.counts_crf.assign(delays.size(), 0);
    parallel_for(delays.size(), threads, [&](std::size_t i) {
        const auto cols = response_function_regressors(rv, hr, times, delays[i], delays[i]);
        sel.counts_rrf[i] = count_for(cols.values.col(0));
        sel.counts_crf[i] = count_for(cols.values.col(1));
    });
    auto choose = [&](const std::vector<std::size_t>& counts, const char* name) {
        if (std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 0; })) {
            sel.warnings.push_back(std::string("select_delay: no supra-threshold voxels for ") + name + "; using delay 0");
            return 0.0;
        }
        return delays[pick_delay(delays, counts)];
    };
    sel.delay_rrf_s = choose(sel.counts_rrf, "RRF");
    sel.delay_crf_s = choose(sel.counts_crf, "CRF");
    return sel;
}

NamedColumns volterra_motion(const Eigen::MatrixXd& rp) {
    if (!rp.allFinite()) throw ValidationError("volterra_motion: non-finite realignment parameters");
    const Eigen::Index T = rp.rows(), P = rp.cols();
    Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(T, P);
    if (T > 1) diff.bottomRows(T - 1) = rp.bottomRows(T - 1) - rp.topRows(T - 1);
    NamedColumns out;
    out.values.resize(T, 4 * P);
    out.values << rp, diff, rp.array().square().matrix(), diff.array().square().matrix();
    const char* prefix[4] = {"rp", "drp", "rp_sq", "drp_sq"};
    for (int b = 0; b < 4; ++b)
        for (Eigen::Index j = 0; j < P; ++j) out.names.push_back(std::string(prefix[b]) + std::to_string(j + 1));
    center_columns(out.values);
    return out;
}

std::size_t NuisanceSet::rows() const {
    if (motion.values.size() > 0) return static_cast<std::size_t>(motion.values.rows());
    return static_cast<std::size_t>(physio.values.rows());
}

NuisanceSet build_nuisance(Scheme scheme, const NuisanceInputs& in) {
    NuisanceSet set;
    set.scheme = scheme;
    set.orders = in.orders;
    const Eigen::Index T = in.realignment.rows();
    if (in.realignment.cols() != 6) throw ValidationError("nuisance: realignment table must have 6 columns");
    if (scheme == Scheme::retroicor_volterra) {
        set.motion = volterra_motion(in.realignment);
    } else {
        set.motion.values = in.realignment;
        center_columns(set.motion.values);
        for (int j = 1; j <= 6; ++j) set.motion.names.push_back("rp" + std::to_string(j));
    }
    set.physio.values.resize(T, 0);
    if (scheme == Scheme::none) return set;

    if (!in.phases) throw ValidationError("nuisance: scheme '" + to_string(scheme) + "' requires physiological phases");
    if (static_cast<Eigen::Index>(in.phases->cardiac.size()) != T)
        throw ValidationError("nuisance: phase series length does not match the realignment table");
    set.physio = retroicor_regressors(*in.phases, in.orders);
    if (scheme == Scheme::retroicor_rf) {
        if (!in.rates) throw ValidationError("nuisance: scheme 'retroicor_rf' requires RV/HR series");
        const auto rf = response_function_regressors(in.rates->rv, in.rates->hr, in.times, in.delay_rrf_s, in.delay_crf_s);
        Eigen::MatrixXd both(T, set.physio.values.cols() + 2);
        both << set.physio.values, rf.values;
        set.physio.values = std::move(both);
        set.physio.names.insert(set.physio.names.end(), rf.names.begin(), rf.names.end());
        set.delay_rrf_s = in.delay_rrf_s;
        set.delay_crf_s = in.delay_crf_s;
    }
    return set;
}

}  // namespace serialcorr::physio
