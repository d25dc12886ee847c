#include "serialcorr/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "serialcorr/glm.hpp"
#include "serialcorr/spectra.hpp"

namespace serialcorr::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kBurnIn = 500;

enum Stream : std::uint32_t {
    innovations = 0,
    voxel_phase = 1,
    drift_phase = 2,
    motion = 3,
    ecg_noise = 4,
    belt_noise = 5,
    global_phase = 6,
};

constexpr std::uint32_t kGlobalEntity = 0xFFFFFF00u;

struct CardiacModel {
    double f0, wander, fw, phi0;

    double phase(double t) const {
        const double w = fw > 0.0 ? wander / (kTwoPi * fw) * (1.0 - std::cos(kTwoPi * fw * t)) : 0.0;
        return kTwoPi * f0 * (t + w) + phi0;
    }
    double rate(double t) const { return f0 * (1.0 + wander * std::sin(kTwoPi * fw * t)); }

    // Times where the phase crosses a multiple of 2 pi, within [t0, t1].
    std::vector<double> beats(double t0, double t1) const {
        std::vector<double> out;
        auto k = static_cast<long>(std::ceil(phase(t0) / kTwoPi));
        double t = t0;
        for (;; ++k) {
            const double target = kTwoPi * static_cast<double>(k);
            for (int it = 0; it < 50; ++it) {
                const double step = (phase(t) - target) / (kTwoPi * rate(t));
                t -= step;
                if (std::abs(step) < 1e-13) break;
            }
            if (t > t1) break;
            if (t >= t0) out.push_back(t);
            t += 0.5 / f0;
        }
        return out;
    }
};

std::vector<io::Mask> make_masks(const SimConfig& cfg, bool active) {
    io::Mask tissue(cfg.dims, 0);
    io::Mask act(cfg.dims, 0);
    for (const auto& t : cfg.tissues) tissue.names.push_back(t.name);
    act.names = {"active"};
    // Slab boundaries along x from cumulative fractions.
    std::vector<std::size_t> bounds{0};
    double acc = 0.0;
    for (const auto& t : cfg.tissues) {
        acc += t.slab_fraction;
        bounds.push_back(static_cast<std::size_t>(std::lround(acc * static_cast<double>(cfg.dims[0]))));
    }
    bounds.back() = cfg.dims[0];
    for (std::size_t z = 0; z < cfg.dims[2]; ++z)
        for (std::size_t y = 0; y < cfg.dims[1]; ++y)
            for (std::size_t x = 0; x < cfg.dims[0]; ++x) {
                int label = 0;
                for (std::size_t i = 0; i < cfg.tissues.size(); ++i)
                    if (x >= bounds[i] && x < bounds[i + 1]) label = cfg.tissues[i].label;
                tissue.labels[tissue.voxel_index(x, y, z)] = label;
                const bool in_roi = x >= cfg.roi_origin[0] && x < cfg.roi_origin[0] + cfg.roi_size[0] &&
                                    y >= cfg.roi_origin[1] && y < cfg.roi_origin[1] + cfg.roi_size[1] &&
                                    z >= cfg.roi_origin[2] && z < cfg.roi_origin[2] + cfg.roi_size[2];
                if (active && in_roi) act.labels[act.voxel_index(x, y, z)] = 1;
            }
    return {tissue, act};
}

std::vector<double> unit_std(std::vector<double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double& x : v) {
        x -= mean;
        ss += x * x;
    }
    const double sd = std::sqrt(ss / static_cast<double>(v.size()));
    if (sd > 0.0)
        for (double& x : v) x /= sd;
    return v;
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ValidationError(where + ": unknown key '" + k + "'");
}

}  // namespace

void SimConfig::validate() const {
    for (auto d : dims)
        if (d == 0) throw ValidationError("sim: grid dimensions must be positive");
    if (!(tr_s > 0.0)) throw ValidationError("sim: tr_s must be positive");
    if (T < 16) throw ValidationError("sim: need at least 16 scans");
    if (tissues.empty()) throw ValidationError("sim: no tissues");
    double frac = 0.0;
    std::set<int> labels;
    for (const auto& t : tissues) {
        if (t.label <= 0 || !labels.insert(t.label).second)
            throw ValidationError("sim: tissue labels must be positive and unique");
        if (!(t.slab_fraction > 0.0)) throw ValidationError("sim: slab fractions must be positive");
        if (!glm::is_stationary(t.ar)) throw ValidationError("sim: AR coefficients of '" + t.name + "' are not stationary");
        if (!(t.innovation_sd >= 0.0) || !(t.baseline > 0.0))
            throw ValidationError("sim: tissue '" + t.name + "' needs sd >= 0 and baseline > 0");
        frac += t.slab_fraction;
    }
    if (std::abs(frac - 1.0) > 1e-9) throw ValidationError("sim: slab fractions must sum to 1");
    if (!(cardiac_hz > 0.0) || !(respiratory_hz > 0.0)) throw ValidationError("sim: physiological rates must be positive");
    if (!(cardiac_wander >= 0.0 && cardiac_wander < 1.0)) throw ValidationError("sim: cardiac_wander must be in [0, 1)");
    if (!(respiratory_am_depth >= 0.0 && respiratory_am_depth < 1.0))
        throw ValidationError("sim: respiratory_am_depth must be in [0, 1)");
    if (!(physio_rate_hz >= 200.0)) throw ValidationError("sim: physio_rate_hz must be at least 200");
    for (int i = 0; i < 3; ++i)
        if (roi_origin[i] + roi_size[i] > dims[i]) throw ValidationError("sim: activation ROI exceeds the grid");
    if (!(effect_pct >= 0.0)) throw ValidationError("sim: effect_pct must be non-negative");
}

SimConfig default_config() {
    SimConfig c;
    TissueSpec csf{"CSF", 1, 1.0 / 6.0, {0.3, 0.1, 0.1, 0.1, 0.2}, 12.0, 1500.0, {0.02, 0.01}, {0.015, 0.005}};
    TissueSpec gm{"GM", 2, 5.0 / 12.0, {0.35, 0.15, 0.2}, 10.0, 1000.0, {0.012, 0.006}, {0.008, 0.003}};
    TissueSpec wm{"WM", 3, 5.0 / 12.0, {0.3}, 8.0, 800.0, {0.006, 0.003}, {0.004, 0.0015}};
    c.tissues = {csf, gm, wm};
    return c;
}

SimConfig quiet_config() {
    SimConfig c = default_config();
    for (auto& t : c.tissues) {
        t.cardiac_amp = {0.0, 0.0};
        t.respiratory_amp = {0.0, 0.0};
    }
    return c;
}

nlohmann::json to_json(const SimConfig& c) {
    nlohmann::json j;
    j["dims"] = c.dims;
    j["voxel_mm"] = c.voxel_mm;
    j["tr_s"] = c.tr_s;
    j["T"] = c.T;
    j["tissues"] = nlohmann::json::array();
    for (const auto& t : c.tissues)
        j["tissues"].push_back({{"name", t.name},
                                {"label", t.label},
                                {"slab_fraction", t.slab_fraction},
                                {"ar", t.ar},
                                {"innovation_sd", t.innovation_sd},
                                {"baseline", t.baseline},
                                {"cardiac_amp", t.cardiac_amp},
                                {"respiratory_amp", t.respiratory_amp}});
    j["cardiac_hz"] = c.cardiac_hz;
    j["cardiac_wander"] = c.cardiac_wander;
    j["cardiac_wander_hz"] = c.cardiac_wander_hz;
    j["respiratory_hz"] = c.respiratory_hz;
    j["respiratory_am_depth"] = c.respiratory_am_depth;
    j["respiratory_am_hz"] = c.respiratory_am_hz;
    j["physio_rate_hz"] = c.physio_rate_hz;
    j["gradient_artifact_amp"] = c.gradient_artifact_amp;
    j["rrf_amp"] = c.rrf_amp;
    j["crf_amp"] = c.crf_amp;
    j["rf_lag_s"] = c.rf_lag_s;
    j["drift_amp"] = c.drift_amp;
    j["motion_scale"] = c.motion_scale;
    j["roi_origin"] = c.roi_origin;
    j["roi_size"] = c.roi_size;
    j["effect_pct"] = c.effect_pct;
    j["schedule"] = c.schedule == design::ScheduleVariant::simple_first ? "simple_first" : "complex_first";
    j["reversed"] = c.reversed;
    j["seed"] = c.seed;
    return j;
}

SimConfig config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> keys{
        "dims", "voxel_mm", "tr_s", "T", "tissues", "cardiac_hz", "cardiac_wander", "cardiac_wander_hz",
        "respiratory_hz", "respiratory_am_depth", "respiratory_am_hz", "physio_rate_hz",
        "gradient_artifact_amp", "rrf_amp", "crf_amp", "rf_lag_s", "drift_amp", "motion_scale", "roi_origin",
        "roi_size", "effect_pct", "schedule", "reversed", "seed", "physio"};
    static const std::set<std::string> tissue_keys{"name", "label", "slab_fraction", "ar", "innovation_sd",
                                                   "baseline", "cardiac_amp", "respiratory_amp"};
    check_keys(j, keys, "sim config");
    SimConfig c = default_config();
    try {
        if (j.contains("physio") && !j.at("physio").get<bool>()) c = quiet_config();
        read_key(j, "dims", c.dims);
        read_key(j, "voxel_mm", c.voxel_mm);
        read_key(j, "tr_s", c.tr_s);
        read_key(j, "T", c.T);
        if (j.contains("tissues")) {
            const auto defaults = c.tissues;
            c.tissues.clear();
            for (const auto& jt : j.at("tissues")) {
                check_keys(jt, tissue_keys, "sim config tissue");
                TissueSpec t;
                read_key(jt, "name", t.name);
                for (const auto& d : defaults)
                    if (d.name == t.name) t = d;
                read_key(jt, "label", t.label);
                read_key(jt, "slab_fraction", t.slab_fraction);
                read_key(jt, "ar", t.ar);
                read_key(jt, "innovation_sd", t.innovation_sd);
                read_key(jt, "baseline", t.baseline);
                read_key(jt, "cardiac_amp", t.cardiac_amp);
                read_key(jt, "respiratory_amp", t.respiratory_amp);
                c.tissues.push_back(t);
            }
        }
        read_key(j, "cardiac_hz", c.cardiac_hz);
        read_key(j, "cardiac_wander", c.cardiac_wander);
        read_key(j, "cardiac_wander_hz", c.cardiac_wander_hz);
        read_key(j, "respiratory_hz", c.respiratory_hz);
        read_key(j, "respiratory_am_depth", c.respiratory_am_depth);
        read_key(j, "respiratory_am_hz", c.respiratory_am_hz);
        read_key(j, "physio_rate_hz", c.physio_rate_hz);
        read_key(j, "gradient_artifact_amp", c.gradient_artifact_amp);
        read_key(j, "rrf_amp", c.rrf_amp);
        read_key(j, "crf_amp", c.crf_amp);
        read_key(j, "rf_lag_s", c.rf_lag_s);
        read_key(j, "drift_amp", c.drift_amp);
        read_key(j, "motion_scale", c.motion_scale);
        read_key(j, "roi_origin", c.roi_origin);
        read_key(j, "roi_size", c.roi_size);
        read_key(j, "effect_pct", c.effect_pct);
        if (j.contains("schedule")) {
            const auto s = j.at("schedule").get<std::string>();
            if (s == "simple_first") c.schedule = design::ScheduleVariant::simple_first;
            else if (s == "complex_first") c.schedule = design::ScheduleVariant::complex_first;
            else throw ValidationError("sim config: schedule must be simple_first or complex_first");
        }
        read_key(j, "reversed", c.reversed);
        read_key(j, "seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("sim config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json SimTruth::to_json() const {
    nlohmann::json j;
    j["config"] = sim::to_json(config);
    j["tissue_ar"] = nlohmann::json::object();
    for (const auto& t : config.tissues) j["tissue_ar"][t.name] = t.ar;
    j["activation_voxels"] = activation_mask.indices();
    j["voxel_phase"] = voxel_phase;
    j["task_regressor"] = task_regressor;
    j["rrf_column"] = rrf_column;
    j["crf_column"] = crf_column;
    j["cardiac_phase"] = cardiac_phase;
    j["respiratory_phase"] = respiratory_phase;
    j["peak_times_s"] = peak_times_s;
    j["cardiac_alias_hz"] = cardiac_alias_hz;
    j["respiratory_alias_hz"] = respiratory_alias_hz;
    return j;
}

std::vector<double> ar_noise(const rng::CounterRng& rng, std::uint32_t entity, std::span<const double> a, double sd,
                             std::size_t T) {
    const std::size_t p = a.size();
    std::vector<double> e(kBurnIn + T, 0.0);
    for (std::size_t i = 0; i < kBurnIn + T; ++i) {
        double s = sd * rng.normal(entity, static_cast<std::uint32_t>(i), innovations);
        for (std::size_t k = 1; k <= p && k <= i; ++k) s += a[k - 1] * e[i - k];
        e[i] = s;
    }
    return {e.begin() + static_cast<std::ptrdiff_t>(kBurnIn), e.end()};
}

SimDataset simulate_dataset(const SimConfig& cfg, unsigned threads) {
    cfg.validate();
    const rng::CounterRng rng(cfg.seed);
    const std::size_t T = cfg.T;
    const double tr = cfg.tr_s;
    const double duration = static_cast<double>(T) * tr;
    const std::size_t nvox = cfg.voxels();

    SimDataset out;
    SimTruth& truth = out.truth;
    truth.config = cfg;
    const bool active = cfg.effect_pct > 0.0;
    auto masks = make_masks(cfg, active);
    truth.tissue_mask = masks[0];
    truth.activation_mask = masks[1];

    // Physiological processes.
    const auto g0 = rng.uniform2(kGlobalEntity, 0, global_phase);
    const auto g1 = rng.uniform2(kGlobalEntity, 1, global_phase);
    const CardiacModel cardiac{cfg.cardiac_hz, cfg.cardiac_wander, cfg.cardiac_wander_hz, kTwoPi * g0[0]};
    const double resp_phi0 = kTwoPi * g0[1];
    const double am_phi0 = kTwoPi * g1[0];
    auto resp_phase = [&](double t) { return kTwoPi * cfg.respiratory_hz * t + resp_phi0; };
    auto resp_amp = [&](double t) {
        return 1.0 + cfg.respiratory_am_depth * std::sin(kTwoPi * cfg.respiratory_am_hz * t + am_phi0);
    };
    truth.peak_times_s = cardiac.beats(0.0, duration);

    const auto times = physio::scan_times(T, tr, 0.5);
    truth.cardiac_phase.resize(T);
    truth.respiratory_phase.resize(T);
    for (std::size_t k = 0; k < T; ++k) {
        truth.cardiac_phase[k] = std::fmod(cardiac.phase(times[k]), kTwoPi);
        truth.respiratory_phase[k] = std::fmod(resp_phase(times[k]), kTwoPi);
    }
    truth.cardiac_alias_hz = spectra::alias_frequency(cfg.cardiac_hz, 1.0 / tr);
    truth.respiratory_alias_hz = spectra::alias_frequency(cfg.respiratory_hz, 1.0 / tr);

    // Recordings.
    physio::PhysioRecording& rec = out.recording;
    rec.t0_s = 0.0;
    rec.cardiac_rate_hz = cfg.physio_rate_hz;
    rec.respiratory_rate_hz = cfg.physio_rate_hz;
    const auto n_ecg = static_cast<std::size_t>(std::floor(duration * cfg.physio_rate_hz)) + 1;
    rec.cardiac.assign(n_ecg, 0.0);
    const double pulse_sd = 0.012;
    const auto all_beats = cardiac.beats(-1.0, duration + 1.0);
    for (double b : all_beats) {
        const auto lo = static_cast<long>(std::floor((b - 5.0 * pulse_sd) * cfg.physio_rate_hz));
        const auto hi = static_cast<long>(std::ceil((b + 5.0 * pulse_sd) * cfg.physio_rate_hz));
        for (long i = std::max(lo, 0L); i <= hi && i < static_cast<long>(n_ecg); ++i) {
            const double d = static_cast<double>(i) / cfg.physio_rate_hz - b;
            rec.cardiac[static_cast<std::size_t>(i)] += std::exp(-0.5 * d * d / (pulse_sd * pulse_sd));
        }
    }
    for (std::size_t i = 0; i < n_ecg; ++i) {
        const double t = static_cast<double>(i) / cfg.physio_rate_hz;
        const double tau = std::fmod(t, tr);
        rec.cardiac[i] += cfg.gradient_artifact_amp * std::sin(kTwoPi * 20.0 * tau) * std::exp(-tau / 0.1);
        rec.cardiac[i] += 0.02 * rng.normal(kGlobalEntity, static_cast<std::uint32_t>(i), ecg_noise);
    }
    const std::size_t n_belt = n_ecg;
    rec.respiratory.resize(n_belt);
    for (std::size_t i = 0; i < n_belt; ++i) {
        const double t = static_cast<double>(i) / cfg.physio_rate_hz;
        const double phi = resp_phase(t);
        rec.respiratory[i] = resp_amp(t) * (std::cos(phi) + 0.2 * std::cos(2.0 * phi)) +
                             0.01 * rng.normal(kGlobalEntity, static_cast<std::uint32_t>(i), belt_noise);
    }

    // Slow physiological regressors from the realized recordings.
    truth.rrf_column.assign(T, 0.0);
    truth.crf_column.assign(T, 0.0);
    if (cfg.rrf_amp != 0.0 || cfg.crf_amp != 0.0) {
        const auto rates = physio::rv_hr_series(rec.respiratory, rec.respiratory_rate_hz, rec.t0_s, truth.peak_times_s, times);
        const auto rf = physio::response_function_regressors(rates.rv, rates.hr, times, cfg.rf_lag_s, cfg.rf_lag_s);
        std::vector<double> a(T), b(T);
        for (std::size_t k = 0; k < T; ++k) {
            a[k] = rf.values(static_cast<Eigen::Index>(k), 0);
            b[k] = rf.values(static_cast<Eigen::Index>(k), 1);
        }
        truth.rrf_column = unit_std(a);
        truth.crf_column = unit_std(b);
    }

    // Task regressor scaled to unit peak.
    const auto schedule = design::default_task_schedule(cfg.schedule, cfg.reversed);
    truth.task_regressor.assign(T, 0.0);
    {
        std::vector<design::Condition> conds;
        for (const auto& c : schedule.conditions) {
            auto cc = c;
            cc.onsets_s.erase(std::remove_if(cc.onsets_s.begin(), cc.onsets_s.end(),
                                             [&](double o) { return o >= duration; }),
                              cc.onsets_s.end());
            conds.push_back(cc);
        }
        const auto kernels = design::canonical_hrf(tr / 16.0);
        for (const auto& c : conds) {
            const auto r = design::block_regressor(c, T, tr, kernels[0]);
            for (std::size_t k = 0; k < T; ++k) truth.task_regressor[k] += r[k];
        }
        double peak = 0.0;
        for (double v : truth.task_regressor) peak = std::max(peak, std::abs(v));
        if (peak > 0.0)
            for (double& v : truth.task_regressor) v /= peak;
    }

    // Realignment parameters: smoothed random walks, not injected into the data.
    {
        Eigen::MatrixXd rp(static_cast<Eigen::Index>(T), 6);
        for (int j = 0; j < 6; ++j) {
            double walk = 0.0;
            std::vector<double> raw(T);
            for (std::size_t k = 0; k < T; ++k) {
                walk += rng.normal(kGlobalEntity - 1 - static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k), motion);
                raw[k] = walk;
            }
            const double scale = cfg.motion_scale / 10.0 * (j < 3 ? 1.0 : 0.02);
            for (std::size_t k = 0; k < T; ++k) {
                double s = 0.0;
                int n = 0;
                for (long d = -4; d <= 4; ++d) {
                    const long i = static_cast<long>(k) + d;
                    if (i < 0 || i >= static_cast<long>(T)) continue;
                    s += raw[static_cast<std::size_t>(i)];
                    ++n;
                }
                rp(static_cast<Eigen::Index>(k), j) = scale * s / n;
            }
        }
        static const char* names[6] = {"trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z"};
        for (int j = 0; j < 6; ++j) {
            std::vector<double> col(T);
            for (std::size_t k = 0; k < T; ++k) col[k] = rp(static_cast<Eigen::Index>(k), j);
            out.realignment.add(names[j], std::move(col));
        }
    }

    // Voxel series.
    const std::array<std::size_t, 4> dims4{cfg.dims[0], cfg.dims[1], cfg.dims[2], T};
    out.data = io::Volume4D(dims4, cfg.voxel_mm, tr);
    truth.signal = io::Volume4D(dims4, cfg.voxel_mm, tr);
    truth.physio_term = io::Volume4D(dims4, cfg.voxel_mm, tr);
    truth.voxel_phase.assign(nvox, 0.0);
    std::vector<double> cphase(T), rphase(T);
    for (std::size_t k = 0; k < T; ++k) {
        cphase[k] = cardiac.phase(times[k]);
        rphase[k] = resp_phase(times[k]);
    }
    const double effect = cfg.effect_pct / 100.0;

    parallel_for(nvox, threads, [&](std::size_t v) {
        const int label = truth.tissue_mask.labels[v];
        const TissueSpec* tissue = nullptr;
        for (const auto& t : cfg.tissues)
            if (t.label == label) tissue = &t;
        const auto vv = static_cast<std::uint32_t>(v);
        if (!tissue) return;
        const auto th = rng.uniform2(vv, 0, voxel_phase);
        const double theta_c = kTwoPi * th[0], theta_r = kTwoPi * th[1];
        truth.voxel_phase[v] = theta_c;
        const bool in_roi = truth.activation_mask.labels[v] != 0;
        std::array<double, 4> drift_phase{};
        if (cfg.drift_amp != 0.0)
            for (std::uint32_t j = 0; j < 4; j += 2) {
                const auto u = rng.uniform2(vv, j, Stream::drift_phase);
                drift_phase[j] = kTwoPi * u[0];
                drift_phase[j + 1] = kTwoPi * u[1];
            }

        const auto e = ar_noise(rng, vv, tissue->ar, tissue->innovation_sd, T);
        for (std::size_t k = 0; k < T; ++k) {
            double phys = 0.0;
            for (int m = 1; m <= 2; ++m) {
                phys += tissue->cardiac_amp[static_cast<std::size_t>(m - 1)] * std::cos(m * cphase[k] + theta_c);
                phys += tissue->respiratory_amp[static_cast<std::size_t>(m - 1)] * std::cos(m * rphase[k] + theta_r);
            }
            phys += cfg.rrf_amp * truth.rrf_column[k] + cfg.crf_amp * truth.crf_column[k];
            double drift = 0.0;
            if (cfg.drift_amp != 0.0)
                for (int j = 1; j <= 4; ++j)
                    drift += cfg.drift_amp / j *
                             std::cos(std::numbers::pi * j * (static_cast<double>(k) + 0.5) / static_cast<double>(T) +
                                      drift_phase[static_cast<std::size_t>(j - 1)]);
            const double task = in_roi ? effect * truth.task_regressor[k] : 0.0;
            const double clean = tissue->baseline * (1.0 + task + phys + drift);
            truth.signal.at(v, k) = clean;
            truth.physio_term.at(v, k) = tissue->baseline * phys;
            out.data.at(v, k) = clean + e[k];
        }
    });
    return out;
}

SimDataset null_dataset(SimConfig cfg, unsigned threads) {
    cfg.effect_pct = 0.0;
    return simulate_dataset(cfg, threads);
}

Eigen::MatrixXd realignment_matrix(const io::TableData& t) {
    if (t.columns.size() != 6) throw ValidationError("realignment table must have 6 columns");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), 6);
    for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t k = 0; k < t.rows(); ++k)
            m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = t.columns[j][k];
    return m;
}

void write_dataset(const SimDataset& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    io::write_volume(d.data, dir / "data.nii");
    io::write_mask(d.truth.tissue_mask, d.data.voxel_size_mm, dir / "tissue_mask.nii");
    io::write_mask(d.truth.activation_mask, d.data.voxel_size_mm, dir / "activation_mask.nii");
    io::TableData phys;
    std::vector<double> time(d.recording.cardiac.size());
    for (std::size_t k = 0; k < time.size(); ++k)
        time[k] = d.recording.t0_s + static_cast<double>(k) / d.recording.cardiac_rate_hz;
    phys.add("time_s", std::move(time));
    phys.add("cardiac", d.recording.cardiac);
    phys.add("respiratory", d.recording.respiratory);
    io::write_table(phys, dir / "physio.csv");
    io::write_column_file(d.truth.peak_times_s, dir / "truth_peaks.txt");
    io::write_table(d.realignment, dir / "realignment.csv");
    io::write_volume(d.truth.signal, dir / "truth_signal.nii");
    std::ofstream js(dir / "truth.json", std::ios::binary);
    if (!js) throw ValidationError("cannot write " + (dir / "truth.json").string());
    js << d.truth.to_json().dump(2) << '\n';
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
    LoadedDataset out;
    out.data = io::read_volume(dir / "data.nii");
    std::vector<std::string> names;
    const auto truth_path = dir / "truth.json";
    if (std::filesystem::exists(truth_path)) {
        std::ifstream in(truth_path);
        const auto j = nlohmann::json::parse(in, nullptr, false);
        if (!j.is_discarded() && j.contains("config"))
            for (const auto& t : j["config"]["tissues"]) names.push_back(t.value("name", ""));
    }
    out.tissue_mask = io::read_mask(dir / "tissue_mask.nii", names);
    out.tissue_mask.check_matches(out.data);
    out.has_physio = std::filesystem::exists(dir / "physio.csv");
    if (out.has_physio) {
        const auto t = io::read_table(dir / "physio.csv");
        const auto& time = t.column("time_s");
        if (time.size() < 2) throw ValidationError("physio.csv needs at least two samples");
        const double raw = static_cast<double>(time.size() - 1) / (time.back() - time.front());
        const double rate = std::round(raw * 1e6) / 1e6;
        out.recording.t0_s = time.front();
        out.recording.cardiac = t.column("cardiac");
        out.recording.respiratory = t.column("respiratory");
        out.recording.cardiac_rate_hz = rate;
        out.recording.respiratory_rate_hz = rate;
        if (std::filesystem::exists(dir / "peaks.txt")) out.recording.cardiac_peaks_s = io::read_column_file(dir / "peaks.txt");
        out.recording.validate();
    }
    out.realignment = realignment_matrix(io::read_table(dir / "realignment.csv"));
    if (static_cast<std::size_t>(out.realignment.rows()) != out.data.frames())
        throw ValidationError("realignment table length does not match the number of scans");
    return out;
}

}  // namespace serialcorr::sim
