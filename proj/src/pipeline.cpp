#include "serialcorr/pipeline.hpp"

#include <cmath>

#include <boost/math/special_functions/beta.hpp>

#include "serialcorr/rng.hpp"
#include "serialcorr/simulator.hpp"

namespace serialcorr::pipeline {

PhysioDerived derive_physio(const physio::PhysioRecording& rec, std::size_t T, double tr_s) {
    rec.validate();
    PhysioDerived out;
    out.times = physio::scan_times(T, tr_s, 0.5);
    if (!rec.cardiac_peaks_s.empty()) {
        out.peaks_s = rec.cardiac_peaks_s;
    } else {
        if (std::abs(rec.t0_s) > 1e-9)
            throw ValidationError("ECG cleanup needs a recording that starts at the first scan (t0 = 0)");
        physio::GradientCleanupOptions opt;
        const auto clean = physio::correct_gradient_artifact(rec.cardiac, rec.cardiac_rate_hz, tr_s, T, opt);
        out.peaks_s = physio::detect_cardiac_peaks(clean, opt.output_rate_hz);
    }
    if (out.peaks_s.size() < 2) throw ValidationError("fewer than two cardiac peaks in the recording");
    out.phases = physio::physio_phases(out.peaks_s, rec.respiratory, rec.respiratory_rate_hz, rec.t0_s, out.times);
    out.rates = physio::rv_hr_series(rec.respiratory, rec.respiratory_rate_hz, rec.t0_s, out.peaks_s, out.times);
    return out;
}

Analysis analysis_design(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& realignment,
                         const std::optional<PhysioDerived>& physio, double tr_s, const AnalysisOptions& opt) {
    const auto T = static_cast<std::size_t>(realignment.rows());
    if (Y.size() > 0 && static_cast<std::size_t>(Y.rows()) != T)
        throw ValidationError("data and realignment table differ in length");
    const auto schedule = design::default_task_schedule(opt.schedule, opt.reversed);
    const auto task = design::task_columns(schedule, T, tr_s, opt.design);

    physio::NuisanceInputs in;
    in.realignment = realignment;
    in.orders = opt.orders;
    in.times = physio::scan_times(T, tr_s, 0.5);
    if (opt.scheme != physio::Scheme::none) {
        if (!physio) throw ValidationError("scheme '" + physio::to_string(opt.scheme) + "' needs physiological recordings");
        in.phases = physio->phases;
        in.rates = physio->rates;
    }

    Analysis a;
    if (opt.scheme == physio::Scheme::retroicor_rf) {
        double d_rrf = opt.delay_rrf_s.value_or(0.0), d_crf = opt.delay_crf_s.value_or(0.0);
        if (!opt.delay_rrf_s || !opt.delay_crf_s) {
            const auto base = design::build_design(task, physio::build_nuisance(physio::Scheme::retroicor, in), T, tr_s,
                                                   opt.design);
            a.delays = physio::select_delay(Y, base.X, physio->rates.rv, physio->rates.hr, in.times,
                                            physio::default_delays(), 1e-3, opt.threads);
            if (!opt.delay_rrf_s) d_rrf = a.delays->delay_rrf_s;
            if (!opt.delay_crf_s) d_crf = a.delays->delay_crf_s;
        }
        in.delay_rrf_s = d_rrf;
        in.delay_crf_s = d_crf;
    }
    a.nuisance = physio::build_nuisance(opt.scheme, in);
    a.design = design::build_design(task, a.nuisance, T, tr_s, opt.design);
    return a;
}


std::string WhitenMethod::name() const {
    switch (kind) {
        case Kind::none: return "none";
        case Kind::fast: return "fast";
        case Kind::ar: return "ar" + std::to_string(order);
    }
    return "none";
}

WhitenMethod whiten_method_from_string(const std::string& s) {
    WhitenMethod m;
    if (s == "none") {
        m.kind = WhitenMethod::Kind::none;
        m.order = 0;
    } else if (s == "fast") {
        m.kind = WhitenMethod::Kind::fast;
        m.order = 0;
    } else if (s.size() > 2 && s.compare(0, 2, "ar") == 0 &&
               s.find_first_not_of("0123456789", 2) == std::string::npos && s.size() < 6) {
        m.order = std::stoul(s.substr(2));
        if (m.order == 0) throw ValidationError("whitening order must be positive");
    } else {
        throw ValidationError("unknown whitening method '" + s + "' (none, ar<p>, fast)");
    }
    return m;
}

WhitenedGLM whitened_glm(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& X, const Eigen::MatrixXd& contrast,
                         const WhitenMethod& method, double tr_s, unsigned threads) {
    WhitenedGLM out;
    switch (method.kind) {
        case WhitenMethod::Kind::none:
            out.scheme = "none";
            out.data = {Y, X};
            break;
        case WhitenMethod::Kind::ar: {
            const auto fit = glm::ols_fit(Y, X);
            const auto gamma = glm::pooled_autocov(fit.residuals, method.order, threads);
            const auto ar = method.order == 1 ? glm::ar1_pooled_approx(gamma) : glm::yule_walker(gamma, method.order);
            out.scheme = ar.scheme;
            out.coefficients = ar.a;
            out.data = glm::whiten(Y, X, ar);
            break;
        }
        case WhitenMethod::Kind::fast: {
            const auto dict = glm::reml_cov_dictionary(Y, X, glm::default_dictionary(tr_s));
            out.scheme = "FAST";
            out.coefficients = dict.weights;
            const Eigen::MatrixXd W = glm::inverse_sqrt(dict.covariance(static_cast<std::size_t>(Y.rows())));
            out.data = glm::whiten_matrix(Y, X, W);
            break;
        }
    }
    out.stats = glm::glm_inference(out.data.Y, out.data.X, contrast);
    return out;
}

void NullSimConfig::validate() const {
    if (!glm::is_stationary(ar)) throw ValidationError("nullsim: AR coefficients are not stationary");
    if (voxels == 0) throw ValidationError("nullsim: need at least one voxel");
    if (T < 32) throw ValidationError("nullsim: need at least 32 scans");
    if (!(tr_s > 0.0)) throw ValidationError("nullsim: tr_s must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("nullsim: alpha must be in (0, 1)");
}

NullSimResult null_fpr(const NullSimConfig& cfg) {
    cfg.validate();
    const rng::CounterRng rng(cfg.seed);
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(cfg.T), static_cast<Eigen::Index>(cfg.voxels));
    parallel_for(cfg.voxels, cfg.threads, [&](std::size_t v) {
        const auto e = sim::ar_noise(rng, static_cast<std::uint32_t>(v), cfg.ar, 1.0, cfg.T);
        for (std::size_t t = 0; t < cfg.T; ++t) Y(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)) = e[t];
    });

    const auto task = design::task_columns(design::default_task_schedule(), cfg.T, cfg.tr_s);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(cfg.T), 2);
    X.col(0).setZero();
    for (std::size_t j = 0; j < task.cols(); ++j)
        if (task.names[j].size() > 4 && task.names[j].substr(task.names[j].size() - 4) == "_hrf")
            X.col(0) += task.X.col(static_cast<Eigen::Index>(j));
    X.col(1).setOnes();
    Eigen::MatrixXd c(1, 2);
    c << 1.0, 0.0;

    const auto w = whitened_glm(Y, X, c, cfg.method, cfg.tr_s, cfg.threads);
    NullSimResult r;
    r.scheme = w.scheme;
    r.coefficients = w.coefficients;
    double tsum = 0.0;
    for (Eigen::Index v = 0; v < w.stats.p.size(); ++v) {
        if (std::isnan(w.stats.p(v))) continue;
        ++r.voxels;
        tsum += w.stats.stat(v);
        if (w.stats.p(v) < cfg.alpha) ++r.positives;
    }
    if (r.voxels == 0) throw NumericalError("nullsim: no valid voxels");
    r.fpr = static_cast<double>(r.positives) / static_cast<double>(r.voxels);
    r.mean_t = tsum / static_cast<double>(r.voxels);
    const double n = static_cast<double>(r.voxels), k = static_cast<double>(r.positives);
    r.ci_lo = r.positives == 0 ? 0.0 : boost::math::ibeta_inv(k, n - k + 1.0, 0.005);
    r.ci_hi = r.positives == r.voxels ? 1.0 : boost::math::ibeta_inv(k + 1.0, n - k, 0.995);
    return r;
}

}  // namespace serialcorr::pipeline
