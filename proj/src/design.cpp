#include "serialcorr/design.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "serialcorr/physio.hpp"

namespace serialcorr::design {

namespace {

double gamma_pdf(double t, double shape, double scale) {
    if (t <= 0.0) return 0.0;
    return std::exp((shape - 1.0) * std::log(t) - t / scale - std::lgamma(shape) - shape * std::log(scale));
}

// Peak of the canonical double gamma, located on a 1 ms grid and refined by a parabola.
double canonical_peak(const HrfParams& p) {
    const double step = 1e-3;
    std::size_t best = 0;
    double best_v = -1.0;
    const auto n = static_cast<std::size_t>(p.length_s / step);
    for (std::size_t i = 0; i <= n; ++i) {
        const double v = double_gamma(static_cast<double>(i) * step, p);
        if (v > best_v) {
            best_v = v;
            best = i;
        }
    }
    if (best == 0 || best == n) return best_v;
    const double t = static_cast<double>(best) * step;
    const double a = double_gamma(t - step, p), b = best_v, c = double_gamma(t + step, p);
    const double denom = a - 2.0 * b + c;
    if (denom >= 0.0) return b;
    const double shift = 0.5 * (a - c) / denom;
    return double_gamma(t + shift * step, p);
}

}  // namespace

double double_gamma(double t, const HrfParams& p) {
    const double u = t - p.onset_s;
    return gamma_pdf(u, p.response_delay_s / p.response_dispersion, p.response_dispersion) -
           gamma_pdf(u, p.undershoot_delay_s / p.undershoot_dispersion, p.undershoot_dispersion) / p.ratio;
}

std::vector<HRFKernel> canonical_hrf(double dt_s, const HrfParams& p) {
    if (!(dt_s > 0.0) || dt_s > 1.0) throw ValidationError("canonical_hrf: dt_s must be in (0, 1]");
    const auto n = static_cast<std::size_t>(std::floor(p.length_s / dt_s + 1e-9)) + 1;
    const double scale = 1.0 / canonical_peak(p);
    HrfParams shifted = p;
    shifted.onset_s += 1.0;
    HrfParams dispersed = p;
    dispersed.response_dispersion += 0.01;

    std::vector<HRFKernel> out(3);
    out[0].variant = HrfVariant::canonical;
    out[1].variant = HrfVariant::temporal_derivative;
    out[2].variant = HrfVariant::dispersion_derivative;
    for (auto& k : out) {
        k.dt_s = dt_s;
        k.samples.resize(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt_s;
        const double h = double_gamma(t, p);
        out[0].samples[i] = scale * h;
        out[1].samples[i] = scale * (h - double_gamma(t, shifted)) / 1.0;
        out[2].samples[i] = scale * (h - double_gamma(t, dispersed)) / 0.01;
    }
    return out;
}

void TaskSchedule::validate() const {
    std::set<std::string> names;
    for (const auto& c : conditions) {
        if (!names.insert(c.name).second) throw ValidationError("schedule: duplicate condition '" + c.name + "'");
        if (!(c.duration_s > 0.0)) throw ValidationError("schedule: duration of '" + c.name + "' must be positive");
        for (std::size_t i = 0; i < c.onsets_s.size(); ++i) {
            if (c.onsets_s[i] < 0.0) throw ValidationError("schedule: negative onset in '" + c.name + "'");
            if (i > 0 && !(c.onsets_s[i] > c.onsets_s[i - 1]))
                throw ValidationError("schedule: onsets of '" + c.name + "' must be strictly increasing");
        }
    }
}

TaskSchedule default_task_schedule(ScheduleVariant variant, bool reversed) {
    constexpr double block = 18.0;
    bool simple_is_a = variant == ScheduleVariant::simple_first;
    if (reversed) simple_is_a = !simple_is_a;
    // Template positions: rest, A, B, rest, B, A; three repetitions; a closing rest.
    Condition simple{"simple", {}, block};
    Condition complex{"complex", {}, block};
    const int pattern[6] = {0, 1, 2, 0, 2, 1};
    int index = 0;
    for (int rep = 0; rep < 3; ++rep) {
        for (int pos : pattern) {
            const double onset = block * index++;
            if (pos == 0) continue;
            const bool is_simple = (pos == 1) == simple_is_a;
            (is_simple ? simple : complex).onsets_s.push_back(onset);
        }
    }
    ++index;  // final rest block
    TaskSchedule s;
    s.conditions = {simple, complex};
    s.run_length_s = block * index;
    return s;
}

std::vector<double> block_regressor(const Condition& condition, std::size_t T, double tr_s, const HRFKernel& kernel) {
    if (!(tr_s > 0.0)) throw ValidationError("block_regressor: tr_s must be positive");
    if (kernel.samples.empty() || !(kernel.dt_s > 0.0)) throw ValidationError("block_regressor: empty kernel");
    const double run_end = static_cast<double>(T) * tr_s;
    for (double onset : condition.onsets_s)
        if (onset >= run_end)
            throw ValidationError("block_regressor: onset " + std::to_string(onset) + " s of '" + condition.name +
                                  "' is beyond the run end");

    std::vector<double> out(T, 0.0);
    if (condition.onsets_s.empty()) return out;

    // Microtime grid: the kernel step when it divides TR, else TR / 16.
    const double ratio = tr_s / kernel.dt_s;
    std::size_t bins = 16;
    std::vector<double> h;
    if (std::abs(ratio - std::round(ratio)) * kernel.dt_s < 1e-9 && std::round(ratio) >= 1.0) {
        bins = static_cast<std::size_t>(std::round(ratio));
        h = kernel.samples;
    } else {
        const double dt = tr_s / static_cast<double>(bins);
        const double length = kernel.dt_s * static_cast<double>(kernel.samples.size() - 1);
        const auto n = static_cast<std::size_t>(std::floor(length / dt + 1e-9)) + 1;
        h.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double pos = static_cast<double>(i) * dt / kernel.dt_s;
            const auto i0 = std::min(static_cast<std::size_t>(pos), kernel.samples.size() - 1);
            const std::size_t i1 = std::min(i0 + 1, kernel.samples.size() - 1);
            const double f = pos - static_cast<double>(i0);
            h[i] = (1.0 - f) * kernel.samples[i0] + f * kernel.samples[i1];
        }
    }
    const double dt = tr_s / static_cast<double>(bins);

    // Prefix sums of the kernel: C[n] = h[0] + ... + h[n-1].
    std::vector<double> C(h.size() + 1, 0.0);
    for (std::size_t i = 0; i < h.size(); ++i) C[i + 1] = C[i] + h[i];
    const auto L = static_cast<std::ptrdiff_t>(h.size());
    auto prefix = [&](std::ptrdiff_t n) { return C[std::clamp<std::ptrdiff_t>(n, 0, L)]; };

    for (double onset : condition.onsets_s) {
        const auto on = static_cast<std::ptrdiff_t>(std::ceil(onset / dt - 1e-9));
        const auto off = static_cast<std::ptrdiff_t>(std::ceil((onset + condition.duration_s) / dt - 1e-9));
        for (std::size_t k = 0; k < T; ++k) {
            const auto j = static_cast<std::ptrdiff_t>(k * bins);
            // sum_{m = on}^{off - 1} h[j - m]
            out[k] += dt * (prefix(j - on + 1) - prefix(j - off + 1));
        }
    }
    return out;
}

std::string to_string(ColumnGroup g) {
    switch (g) {
        case ColumnGroup::task: return "task";
        case ColumnGroup::motion: return "motion";
        case ColumnGroup::physio: return "physio";
        case ColumnGroup::drift: return "drift";
        case ColumnGroup::constant: return "constant";
    }
    return "task";
}

ColumnGroup group_from_string(const std::string& s) {
    if (s == "task") return ColumnGroup::task;
    if (s == "motion") return ColumnGroup::motion;
    if (s == "physio") return ColumnGroup::physio;
    if (s == "drift") return ColumnGroup::drift;
    if (s == "constant") return ColumnGroup::constant;
    throw ValidationError("design: unknown column group '" + s + "'");
}

std::vector<std::size_t> DesignMatrix::columns_in(ColumnGroup g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (groups[i] == g) out.push_back(i);
    return out;
}

void DesignMatrix::append(const std::string& name, ColumnGroup g, std::span<const double> values) {
    if (X.cols() > 0 && static_cast<std::size_t>(X.rows()) != values.size())
        throw ValidationError("design: column '" + name + "' has the wrong length");
    const Eigen::Index k = X.cols();
    X.conservativeResize(static_cast<Eigen::Index>(values.size()), k + 1);
    for (std::size_t t = 0; t < values.size(); ++t) X(static_cast<Eigen::Index>(t), k) = values[t];
    names.push_back(name);
    groups.push_back(g);
}

void DesignMatrix::validate() const {
    if (names.size() != cols() || groups.size() != cols()) throw ValidationError("design: column metadata mismatch");
    std::set<std::string> seen;
    for (const auto& n : names)
        if (!seen.insert(n).second) throw ValidationError("design: duplicate column name '" + n + "'");
    if (columns_in(ColumnGroup::constant).size() != 1)
        throw ValidationError("design: exactly one constant column is required");
    if (!X.allFinite()) throw ValidationError("design: non-finite entries");
}

DesignMatrix task_columns(const TaskSchedule& schedule, std::size_t T, double tr_s, const DesignOptions& opt) {
    schedule.validate();
    const auto kernels = canonical_hrf(tr_s / 16.0 <= 1.0 ? tr_s / 16.0 : 1.0, opt.hrf);
    DesignMatrix d;
    d.tr_s = tr_s;
    const char* suffix[3] = {"_hrf", "_dt", "_dd"};
    for (const auto& c : schedule.conditions) {
        std::vector<Eigen::VectorXd> cols;
        for (const auto& k : kernels) {
            const auto v = block_regressor(c, T, tr_s, k);
            cols.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        }
        if (opt.derivatives == DerivativeMode::orthogonalized) {
            for (std::size_t i = 1; i < cols.size(); ++i)
                for (std::size_t j = 0; j < i; ++j) {
                    const double nn = cols[j].squaredNorm();
                    if (nn > 0.0) cols[i] -= cols[j].dot(cols[i]) / nn * cols[j];
                }
        }
        for (std::size_t i = 0; i < cols.size(); ++i)
            d.append(c.name + suffix[i], ColumnGroup::task, std::span(cols[i].data(), T));
    }
    if (d.X.cols() == 0) d.X.resize(static_cast<Eigen::Index>(T), 0);
    return d;
}

Eigen::MatrixXd dct_basis(std::size_t T, double tr_s, double cutoff_s) {
    if (!(cutoff_s > 0.0)) throw ValidationError("dct_basis: cutoff must be positive");
    const auto n = static_cast<std::size_t>(std::floor(2.0 * static_cast<double>(T) * tr_s / cutoff_s + 1.0));
    const std::size_t cols = n > 1 ? n - 1 : 0;
    Eigen::MatrixXd B(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(cols));
    for (std::size_t k = 1; k <= cols; ++k)
        for (std::size_t t = 0; t < T; ++t)
            B(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k - 1)) =
                std::sqrt(2.0 / static_cast<double>(T)) *
                std::cos(std::numbers::pi * static_cast<double>((2 * t + 1) * k) / (2.0 * static_cast<double>(T)));
    return B;
}

DesignMatrix build_design(const DesignMatrix& task, const physio::NuisanceSet& nuisance, std::size_t T, double tr_s,
                          const DesignOptions& opt) {
    auto check_rows = [&](Eigen::Index rows, const char* what) {
        if (static_cast<std::size_t>(rows) != T)
            throw ValidationError(std::string("build_design: ") + what + " columns do not have T rows");
    };
    if (task.cols() > 0) check_rows(task.X.rows(), "task");
    if (nuisance.motion.values.cols() > 0) check_rows(nuisance.motion.values.rows(), "motion");
    if (nuisance.physio.values.cols() > 0) check_rows(nuisance.physio.values.rows(), "physio");

    DesignMatrix d;
    d.tr_s = tr_s;
    d.X.resize(static_cast<Eigen::Index>(T), 0);
    auto add_block = [&](const Eigen::MatrixXd& m, const std::vector<std::string>& names, ColumnGroup g) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const Eigen::VectorXd col = m.col(j);
            d.append(names[static_cast<std::size_t>(j)], g, std::span(col.data(), T));
        }
    };
    add_block(task.X, task.names, ColumnGroup::task);
    add_block(nuisance.motion.values, nuisance.motion.names, ColumnGroup::motion);
    add_block(nuisance.physio.values, nuisance.physio.names, ColumnGroup::physio);
    if (opt.dct_cutoff_s) {
        const Eigen::MatrixXd B = dct_basis(T, tr_s, *opt.dct_cutoff_s);
        std::vector<std::string> names;
        for (Eigen::Index j = 0; j < B.cols(); ++j) names.push_back("dct" + std::to_string(j + 1));
        add_block(B, names, ColumnGroup::drift);
    }
    const std::vector<double> ones(T, 1.0);
    d.append("constant", ColumnGroup::constant, ones);

    if (d.cols() >= T)
        throw ValidationError("build_design: K = " + std::to_string(d.cols()) + " columns but only T = " +
                              std::to_string(T) + " scans");
    d.validate();
    const auto dep = dependent_columns(d.X);
    if (!dep.empty()) {
        std::string msg = "design is rank deficient; dependent columns:";
        for (auto j : dep) msg += " " + std::to_string(j) + "(" + d.names[j] + ")";
        d.warnings.push_back(msg);
    }
    return d;
}

DesignMatrix downsample_design(const DesignMatrix& d, std::size_t factor, std::size_t offset) {
    if (factor < 1 || offset >= factor) throw ValidationError("downsample_design: invalid factor/offset");
    const std::size_t T = d.rows();
    if (offset >= T) throw ValidationError("downsample_design: offset beyond the last row");
    const std::size_t T2 = (T - offset + factor - 1) / factor;
    DesignMatrix out = d;
    out.tr_s = d.tr_s * static_cast<double>(factor);
    out.X.resize(static_cast<Eigen::Index>(T2), d.X.cols());
    for (std::size_t k = 0; k < T2; ++k) out.X.row(static_cast<Eigen::Index>(k)) = d.X.row(static_cast<Eigen::Index>(offset + k * factor));
    for (std::size_t j = 0; j < out.cols(); ++j) {
        const auto g = out.groups[j];
        if (g == ColumnGroup::motion || g == ColumnGroup::physio || g == ColumnGroup::drift) {
            auto col = out.X.col(static_cast<Eigen::Index>(j));
            col.array() -= col.mean();
        }
    }
    return out;
}

io::TableData to_table(const DesignMatrix& d) {
    io::TableData t;
    for (std::size_t j = 0; j < d.cols(); ++j) {
        const Eigen::VectorXd c = d.X.col(static_cast<Eigen::Index>(j));
        t.add(to_string(d.groups[j]) + ":" + d.names[j], std::vector<double>(c.data(), c.data() + c.size()));
    }
    return t;
}

DesignMatrix from_table(const io::TableData& t, double tr_s) {
    t.validate();
    DesignMatrix d;
    d.tr_s = tr_s;
    d.X.resize(static_cast<Eigen::Index>(t.rows()), 0);
    for (std::size_t j = 0; j < t.names.size(); ++j) {
        const auto& label = t.names[j];
        const auto colon = label.find(':');
        if (colon == std::string::npos) throw ValidationError("design csv: header '" + label + "' is not group:name");
        d.append(label.substr(colon + 1), group_from_string(label.substr(0, colon)), t.columns[j]);
    }
    d.validate();
    return d;
}

}  // namespace serialcorr::design
