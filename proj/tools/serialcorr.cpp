// serialcorr command-line tool.

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "serialcorr/common.hpp"
#include "serialcorr/dataio.hpp"
#include "serialcorr/design.hpp"
#include "serialcorr/glm.hpp"
#include "serialcorr/manifest.hpp"
#include "serialcorr/physio.hpp"
#include "serialcorr/pipeline.hpp"
#include "serialcorr/simulator.hpp"
#include "serialcorr/spectra.hpp"
#include "serialcorr/summary.hpp"
#include "serialcorr/vb.hpp"

namespace fs = std::filesystem;
using namespace serialcorr;
using json = nlohmann::json;

namespace {

// Options shared by the subcommands that analyse a dataset directory.
struct DataOpts {
    std::string data;
    std::string mask;
    std::string scheme = "none";
    std::size_t downsample = 1;
    std::optional<double> delay_rrf, delay_crf;
    std::optional<double> dct_cutoff;
    std::string schedule = "simple_first";
    bool reversed = false;
};

struct Common {
    std::string out;
    std::string config;
    unsigned threads = 1;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--out", c.out, "Output directory")->required();
    sub->add_option("--config", c.config, "JSON config file");
    sub->add_option("--threads", c.threads, "Worker threads (results do not depend on it)")->capture_default_str();
}

void add_data(CLI::App* sub, DataOpts& d) {
    sub->add_option("--data", d.data, "Dataset directory (data.nii, tissue_mask.nii, realignment.csv, physio.csv)")
        ->required();
    sub->add_option("--mask", d.mask, "Analysis mask NIfTI (default: <data>/tissue_mask.nii)");
    sub->add_option("--scheme", d.scheme, "Nuisance scheme: none, retroicor, retroicor_rf, retroicor_volterra")
        ->capture_default_str();
    sub->add_option("--downsample", d.downsample, "Keep every n-th volume")->capture_default_str();
    sub->add_option("--delay-rrf", d.delay_rrf, "RRF delay in s (default: chosen from the delay grid)");
    sub->add_option("--delay-crf", d.delay_crf, "CRF delay in s (default: chosen from the delay grid)");
    sub->add_option("--dct-cutoff", d.dct_cutoff, "High-pass DCT cutoff in s (default: off)");
    sub->add_option("--schedule", d.schedule, "Task schedule: simple_first or complex_first")->capture_default_str();
    sub->add_flag("--reversed", d.reversed, "Swap the two movement conditions");
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    const auto j = json::parse(read_text(p), nullptr, false);
    if (j.is_discarded()) throw ValidationError("malformed JSON in " + p.string());
    return j;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + p.string());
    out << text;
}

// Effective option values of a subcommand, for the manifest.
json effective_options(const CLI::App* sub) {
    json j = json::object();
    for (const auto* opt : sub->get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "out" || name == "config" || name == "threads") continue;
        if (opt->count() > 0) {
            const auto& r = opt->results();
            j[name] = r.size() == 1 ? json(r.front()) : json(r);
        } else {
            j[name] = opt->get_default_str();
        }
    }
    return j;
}

io::Volume4D map_volume(const io::Volume4D& like, const std::vector<std::size_t>& voxels, const Eigen::VectorXd& v,
                        double fill = 0.0) {
    io::Volume4D out({like.nx(), like.ny(), like.nz(), 1}, like.voxel_size_mm, like.tr_s);
    std::fill(out.data.begin(), out.data.end(), fill);
    for (std::size_t i = 0; i < voxels.size(); ++i) out.at(voxels[i], 0) = v(static_cast<Eigen::Index>(i));
    return out;
}

std::string order_tag(std::size_t p) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "p%02zu", p);
    return buf;
}

// A dataset loaded for analysis, with its design.
struct Prepared {
    sim::LoadedDataset ds;
    io::Mask mask;
    std::vector<std::size_t> voxels;
    Eigen::MatrixXd Y;  // after downsampling
    pipeline::Analysis analysis;
    std::optional<pipeline::PhysioDerived> physio;
    double tr_s = 0.0;
};

Prepared prepare(const DataOpts& d, unsigned threads, manifest::RunManifest& m) {
    Prepared p;
    const fs::path dir(d.data);
    p.ds = sim::read_dataset(dir);
    for (const char* f : {"data.nii", "tissue_mask.nii", "realignment.csv", "physio.csv", "peaks.txt"})
        if (fs::exists(dir / f)) m.add_input(dir / f);
    if (!d.mask.empty()) {
        p.mask = io::read_mask(d.mask);
        p.mask.check_matches(p.ds.data);
        m.add_input(d.mask);
    } else {
        p.mask = p.ds.tissue_mask;
    }
    p.voxels = p.mask.indices();
    if (p.voxels.empty()) throw ValidationError("analysis mask is empty");
    if (d.downsample == 0) throw ValidationError("--downsample must be at least 1");

    const std::size_t T = p.ds.data.frames();
    const double tr = p.ds.data.tr_s;
    pipeline::AnalysisOptions ao;
    ao.scheme = physio::scheme_from_string(d.scheme);
    if (d.schedule == "simple_first") ao.schedule = design::ScheduleVariant::simple_first;
    else if (d.schedule == "complex_first") ao.schedule = design::ScheduleVariant::complex_first;
    else throw ValidationError("--schedule must be simple_first or complex_first");
    ao.reversed = d.reversed;
    ao.design.dct_cutoff_s = d.dct_cutoff;
    ao.delay_rrf_s = d.delay_rrf;
    ao.delay_crf_s = d.delay_crf;
    ao.threads = threads;
    if (ao.scheme != physio::Scheme::none) {
        if (!p.ds.has_physio) throw ValidationError("scheme '" + d.scheme + "' needs physio.csv");
        p.physio = pipeline::derive_physio(p.ds.recording, T, tr);
    }
    const Eigen::MatrixXd Yfull = io::gather(p.ds.data, p.voxels);
    p.analysis = pipeline::analysis_design(Yfull, p.ds.realignment, p.physio, tr, ao);
    m.scheme = d.scheme;
    if (p.analysis.nuisance.delay_rrf_s) m.delay_rrf_s = p.analysis.nuisance.delay_rrf_s;
    if (p.analysis.nuisance.delay_crf_s) m.delay_crf_s = p.analysis.nuisance.delay_crf_s;
    for (const auto& w : p.analysis.design.warnings) m.notices.push_back(w);
    if (p.analysis.delays)
        for (const auto& w : p.analysis.delays->warnings) m.notices.push_back(w);

    if (d.downsample > 1) {
        p.analysis.design = design::downsample_design(p.analysis.design, d.downsample);
        p.Y = io::gather(io::downsample_time(p.ds.data, d.downsample), p.voxels);
        p.tr_s = tr * static_cast<double>(d.downsample);
    } else {
        p.Y = Yfull;
        p.tr_s = tr;
    }
    return p;
}

void write_design(const Prepared& p, const fs::path& out) { io::write_table(design::to_table(p.analysis.design), out); }

// --- subcommands --------------------------------------------------------------------

void run_simulate(const Common& c, std::optional<std::uint64_t> seed, manifest::RunManifest& m) {
    sim::SimConfig cfg = sim::default_config();
    if (!c.config.empty()) {
        cfg = sim::config_from_json(read_json(c.config));
        m.add_input(c.config);
    }
    if (seed) cfg.seed = *seed;
    cfg.validate();
    m.config = sim::to_json(cfg);
    m.seed = cfg.seed;
    const auto d = sim::simulate_dataset(cfg, c.threads);
    sim::write_dataset(d, c.out);
}

void run_regressors(const Common& c, const DataOpts& d, manifest::RunManifest& m) {
    const auto p = prepare(d, c.threads, m);
    const fs::path out(c.out);
    write_design(p, out / "design.csv");
    if (p.physio) {
        io::TableData t;
        t.add("time_s", p.physio->times);
        t.add("cardiac_phase", p.physio->phases.cardiac);
        t.add("respiratory_phase", p.physio->phases.respiratory);
        t.add("rv", p.physio->rates.rv);
        t.add("hr", p.physio->rates.hr);
        io::write_table(t, out / "physio.csv");
        io::write_column_file(p.physio->peaks_s, out / "detected_peaks.txt");
    }
    if (p.analysis.delays) {
        const auto& s = *p.analysis.delays;
        io::TableData t;
        std::vector<double> rrf(s.counts_rrf.begin(), s.counts_rrf.end()), crf(s.counts_crf.begin(), s.counts_crf.end());
        t.add("delay_s", s.delays);
        t.add("voxels_rrf", rrf);
        t.add("voxels_crf", crf);
        io::write_table(t, out / "delay_selection.csv");
    }
}

struct VbOpts {
    std::string orders = "1..10";
    std::string truncation = "common";
    std::string prior = "shrinkage";
    std::size_t max_iter = 128;
    double tol = 1e-6;
};

void run_fit_vb(const Common& c, const DataOpts& d, const VbOpts& v, manifest::RunManifest& m) {
    const auto p = prepare(d, c.threads, m);
    const auto orders = vb::parse_orders(v.orders);
    vb::VBConfig cfg;
    cfg.truncation = vb::truncation_from_string(v.truncation);
    cfg.ar_prior = vb::ar_prior_from_string(v.prior);
    cfg.max_iterations = v.max_iter;
    cfg.tolerance = v.tol;
    cfg.threads = c.threads;
    cfg.validate();
    m.truncation = v.truncation;

    std::vector<vb::SliceGraph> graphs;
    if (cfg.ar_prior == vb::ARPrior::graph_laplacian) graphs = vb::slice_graphs(p.mask, &m.notices);
    const auto ev = vb::evidence_scan(p.Y, p.analysis.design.X, orders, cfg,
                                      cfg.ar_prior == vb::ARPrior::graph_laplacian ? &graphs : nullptr);
    const fs::path out(c.out);
    write_design(p, out / "design.csv");
    io::write_mask(p.mask, p.ds.data.voxel_size_mm, out / "analysis_mask.nii");
    for (std::size_t r = 0; r < orders.size(); ++r)
        io::write_volume(map_volume(p.ds.data, p.voxels, ev.F.row(static_cast<Eigen::Index>(r)).transpose()),
                         out / ("evidence_" + order_tag(orders[r]) + ".nii"));
    const auto win = vb::winning_order(ev);
    Eigen::VectorXd wv(static_cast<Eigen::Index>(win.size()));
    for (std::size_t i = 0; i < win.size(); ++i) wv(static_cast<Eigen::Index>(i)) = static_cast<double>(win[i]);
    io::write_volume(map_volume(p.ds.data, p.voxels, wv), out / "winning_order.nii");

    // Long-format posterior summary: one row per (voxel, order).
    const std::size_t pmax = orders.back();
    io::TableData t;
    std::vector<double> vox, ord, nvar, iters, conv;
    std::vector<std::vector<double>> coef(pmax);
    std::size_t not_converged = 0;
    for (std::size_t i = 0; i < p.voxels.size(); ++i)
        for (std::size_t r = 0; r < orders.size(); ++r) {
            const auto ri = static_cast<Eigen::Index>(r), ii = static_cast<Eigen::Index>(i);
            vox.push_back(static_cast<double>(p.voxels[i]));
            ord.push_back(static_cast<double>(orders[r]));
            nvar.push_back(ev.noise_variance(ri, ii));
            iters.push_back(ev.iterations(ri, ii));
            conv.push_back(ev.converged(ri, ii));
            if (!ev.converged(ri, ii)) ++not_converged;
            const auto& a = ev.ar_means[r][i];
            for (std::size_t k = 0; k < pmax; ++k) coef[k].push_back(k < a.size() ? a[k] : 0.0);
        }
    t.add("voxel", vox);
    t.add("order", ord);
    t.add("noise_variance", nvar);
    t.add("iterations", iters);
    t.add("converged", conv);
    for (std::size_t k = 0; k < pmax; ++k) t.add("a" + std::to_string(k + 1), coef[k]);
    io::write_table(t, out / "ar_posterior.csv");
    if (not_converged > 0)
        m.notices.push_back(std::to_string(not_converged) + " voxel fits stopped at the iteration limit");
}

// Evidence maps written by fit-vb, keyed by order.
struct FitDir {
    io::Mask mask;
    std::vector<std::size_t> voxels;
    std::vector<std::size_t> orders;
    io::Volume4D like;
    vb::EvidenceMaps ev;
};

FitDir read_fit(const fs::path& dir, manifest::RunManifest& m) {
    FitDir f;
    f.mask = io::read_mask(dir / "analysis_mask.nii");
    m.add_input(dir / "analysis_mask.nii");
    f.voxels = f.mask.indices();
    for (std::size_t p = 0; p <= 99; ++p) {
        const auto path = dir / ("evidence_" + order_tag(p) + ".nii");
        if (fs::exists(path)) f.orders.push_back(p);
    }
    if (f.orders.empty()) throw ValidationError("no evidence_pNN.nii files in " + dir.string());
    f.ev.orders = f.orders;
    f.ev.F.resize(static_cast<Eigen::Index>(f.orders.size()), static_cast<Eigen::Index>(f.voxels.size()));
    for (std::size_t r = 0; r < f.orders.size(); ++r) {
        const auto path = dir / ("evidence_" + order_tag(f.orders[r]) + ".nii");
        m.add_input(path);
        const auto vol = io::read_volume(path);
        if (vol.voxels() != f.mask.voxels()) throw ValidationError(path.string() + " does not match the analysis mask");
        f.like = vol;
        for (std::size_t i = 0; i < f.voxels.size(); ++i)
            f.ev.F(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = vol.at(f.voxels[i], 0);
    }
    return f;
}

void run_select_order(const Common& c, const std::string& fit, const std::string& compare, double threshold,
                      manifest::RunManifest& m) {
    const auto f = read_fit(fit, m);
    const auto win = vb::winning_order(f.ev);
    const fs::path out(c.out);
    Eigen::VectorXd wv(static_cast<Eigen::Index>(win.size()));
    for (std::size_t i = 0; i < win.size(); ++i) wv(static_cast<Eigen::Index>(i)) = static_cast<double>(win[i]);
    io::write_volume(map_volume(f.like, f.voxels, wv), out / "winning_order.nii");
    std::map<std::size_t, std::size_t> counts;
    for (auto w : win) ++counts[w];
    io::TableData t;
    std::vector<double> ord, n, pct;
    for (auto p : f.orders) {
        ord.push_back(static_cast<double>(p));
        n.push_back(static_cast<double>(counts[p]));
        pct.push_back(100.0 * static_cast<double>(counts[p]) / static_cast<double>(win.size()));
    }
    t.add("order", ord);
    t.add("voxels", n);
    t.add("percent", pct);
    io::write_table(t, out / "order_counts.csv");

    if (!compare.empty()) {
        const auto pair = vb::parse_orders(compare);
        if (pair.size() != 2) throw ValidationError("--compare takes two orders, e.g. 1,3");
        const auto bf = vb::log_bayes_factor(f.ev, pair[1], pair[0], threshold);
        const std::string tag = order_tag(bf.p_hi) + "_vs_" + order_tag(bf.p_lo);
        io::write_volume(map_volume(f.like, f.voxels, bf.log_bf), out / ("log_bf_" + tag + ".nii"));
        std::ostringstream csv;
        csv << "class,voxels\n"
            << "favors_" << order_tag(bf.p_hi) << "," << bf.favors_high << "\n"
            << "favors_" << order_tag(bf.p_lo) << "," << bf.favors_low << "\n"
            << "inconclusive," << bf.inconclusive << "\n";
        write_text(out / ("bayes_factor_" + tag + ".csv"), csv.str());
    }
}

Eigen::MatrixXd task_contrast(const design::DesignMatrix& d, const std::string& spec) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(d.cols()));
    if (spec == "task") {
        for (std::size_t j = 0; j < d.cols(); ++j)
            if (d.names[j].size() > 4 && d.names[j].substr(d.names[j].size() - 4) == "_hrf") c(0, static_cast<Eigen::Index>(j)) = 1.0;
        return c;
    }
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        const std::string name = item.substr(0, eq);
        double w = 1.0;
        if (eq != std::string::npos) {
            try {
                w = std::stod(item.substr(eq + 1));
            } catch (const std::exception&) {
                throw ValidationError("bad contrast weight in '" + item + "'");
            }
        }
        const auto it = std::find(d.names.begin(), d.names.end(), name);
        if (it == d.names.end()) throw ValidationError("contrast refers to unknown column '" + name + "'");
        c(0, it - d.names.begin()) = w;
    }
    return c;
}

void write_spectrum(const spectra::SpectrumCurve& s, const fs::path& p) { io::write_table(s.to_table(), p); }

void run_whiten(const Common& c, const DataOpts& d, const std::string& method, const std::string& contrast,
                std::size_t lb_lags, manifest::RunManifest& m) {
    const auto p = prepare(d, c.threads, m);
    const auto wm = pipeline::whiten_method_from_string(method);
    const auto C = task_contrast(p.analysis.design, contrast);
    const auto w = pipeline::whitened_glm(p.Y, p.analysis.design.X, C, wm, p.tr_s, c.threads);
    const fs::path out(c.out);
    // NIfTI outputs hold finite values only: missing t is 0 and missing p is 1.
    const Eigen::VectorXd tv = w.stats.stat.unaryExpr([](double x) { return std::isfinite(x) ? x : 0.0; });
    const Eigen::VectorXd pv_map = w.stats.p.unaryExpr([](double x) { return std::isfinite(x) ? x : 1.0; });
    io::write_volume(map_volume(p.ds.data, p.voxels, tv), out / "tmap.nii");
    io::write_volume(map_volume(p.ds.data, p.voxels, pv_map, 1.0), out / "pmap.nii");

    const auto fit = glm::ols_fit(w.data.Y, w.data.X);
    std::vector<double> vox, q, pv;
    std::size_t pass = 0;
    for (std::size_t i = 0; i < p.voxels.size(); ++i) {
        const Eigen::VectorXd r = fit.residuals.col(static_cast<Eigen::Index>(i));
        const auto lb = glm::ljung_box(std::span(r.data(), static_cast<std::size_t>(r.size())), lb_lags);
        vox.push_back(static_cast<double>(p.voxels[i]));
        q.push_back(lb.statistic);
        pv.push_back(lb.p_value);
        if (lb.p_value >= 0.05) ++pass;
    }
    io::TableData t;
    t.add("voxel", vox);
    t.add("statistic", q);
    t.add("p_value", pv);
    io::write_table(t, out / "ljung_box.csv");
    const auto spec = spectra::residual_spectrum(fit.residuals, p.tr_s, c.threads);
    write_spectrum(spec, out / "whitened_residual_spectrum.csv");

    json j;
    j["method"] = wm.name();
    j["scheme"] = w.scheme;
    j["coefficients"] = w.coefficients;
    j["dof"] = w.stats.dof2;
    j["missing_voxels"] = w.stats.missing;
    j["ljung_box"] = {{"lags", lb_lags},
                      {"alpha", 0.05},
                      {"pass_fraction", static_cast<double>(pass) / static_cast<double>(p.voxels.size())}};
    j["spectrum_flatness"] = spectra::smoothed_flatness(spec.mean);
    write_text(out / "whitening.json", j.dump(2) + "\n");
}

void run_spectra(const Common& c, const DataOpts& d, const std::string& fit, std::size_t n_freq,
                 manifest::RunManifest& m) {
    const auto p = prepare(d, c.threads, m);
    const fs::path out(c.out);
    const auto ols = glm::ols_fit(p.Y, p.analysis.design.X);
    write_spectrum(spectra::residual_spectrum(ols.residuals, p.tr_s, c.threads), out / "residual_spectrum.csv");
    for (int label = 1; label <= p.mask.max_label(); ++label) {
        std::vector<Eigen::Index> cols;
        for (std::size_t i = 0; i < p.voxels.size(); ++i)
            if (p.mask.labels[p.voxels[i]] == label) cols.push_back(static_cast<Eigen::Index>(i));
        if (cols.empty()) continue;
        Eigen::MatrixXd R(ols.residuals.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) R.col(static_cast<Eigen::Index>(k)) = ols.residuals.col(cols[k]);
        write_spectrum(spectra::residual_spectrum(R, p.tr_s, c.threads),
                       out / ("residual_spectrum_" + p.mask.label_name(label) + ".csv"));
    }

    json alias;
    alias["sampling_hz"] = 1.0 / p.tr_s;
    std::optional<pipeline::PhysioDerived> phys = p.physio;
    if (!phys && p.ds.has_physio) phys = pipeline::derive_physio(p.ds.recording, p.ds.data.frames(), p.ds.data.tr_s);
    if (phys) {
        const auto& pk = phys->peaks_s;
        const double f_card = static_cast<double>(pk.size() - 1) / (pk.back() - pk.front());
        alias["cardiac_hz"] = f_card;
        alias["cardiac_alias_hz"] = spectra::alias_frequency(f_card, 1.0 / p.tr_s);
        // Respiratory rate: mean phase advance of the belt phase series.
        const auto& ph = phys->phases.respiratory;
        double turns = 0.0;
        for (std::size_t k = 1; k < ph.size(); ++k) {
            double dphi = ph[k] - ph[k - 1];
            if (dphi < -M_PI) dphi += 2.0 * M_PI;
            if (dphi > M_PI) dphi -= 2.0 * M_PI;
            turns += dphi / (2.0 * M_PI);
        }
        const double f_resp = turns / (phys->times.back() - phys->times.front());
        alias["respiratory_hz"] = f_resp;
        alias["respiratory_alias_hz"] = spectra::alias_frequency(f_resp, 1.0 / p.tr_s);
    }
    write_text(out / "alias.json", alias.dump(2) + "\n");

    if (!fit.empty()) {
        const fs::path fdir(fit);
        const auto t = io::read_table(fdir / "ar_posterior.csv");
        m.add_input(fdir / "ar_posterior.csv");
        const auto vf = read_fit(fdir, m);
        const auto win = vb::winning_order(vf.ev);
        std::map<std::size_t, std::size_t> pos;
        for (std::size_t i = 0; i < vf.voxels.size(); ++i) pos[vf.voxels[i]] = i;
        std::vector<std::vector<double>> means(vf.voxels.size());
        std::vector<double> var(vf.voxels.size(), 0.0);
        const auto& vox = t.column("voxel");
        const auto& ord = t.column("order");
        const auto& nv = t.column("noise_variance");
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const auto v = static_cast<std::size_t>(vox[r]);
            const auto it = pos.find(v);
            if (it == pos.end()) throw ValidationError("ar_posterior.csv names a voxel outside the analysis mask");
            const auto o = static_cast<std::size_t>(ord[r]);
            if (o != win[it->second]) continue;
            std::vector<double> a(o);
            for (std::size_t k = 0; k < o; ++k) a[k] = t.column("a" + std::to_string(k + 1))[r];
            means[it->second] = std::move(a);
            var[it->second] = nv[r];
        }
        const auto curves = spectra::spectra_by_order(means, var, win, p.tr_s, n_freq);
        for (const auto& cv : curves) {
            if (cv.count == 0) continue;
            write_spectrum(cv, out / ("ar_spectrum_" + order_tag(cv.order) + ".csv"));
            if (cv.low_count)
                m.notices.push_back("order " + std::to_string(cv.order) + " spectrum averages only " +
                                    std::to_string(cv.count) + " voxels");
        }
    }
}

void run_summarize(const Common& c, const std::vector<std::string>& maps, const std::string& rois,
                   const std::string& names, std::size_t max_order, std::size_t cutoff, manifest::RunManifest& m) {
    std::vector<std::string> label_names;
    if (!names.empty()) {
        std::stringstream ss(names);
        std::string s;
        while (std::getline(ss, s, ',')) label_names.push_back(s);
    }
    const auto mask = io::read_mask(rois, label_names);
    m.add_input(rois);
    std::vector<std::vector<std::size_t>> runs;
    for (const auto& path : maps) {
        const auto vol = io::read_volume(path);
        m.add_input(path);
        if (vol.voxels() != mask.voxels()) throw ValidationError(path + " does not match the ROI mask");
        std::vector<std::size_t> o(vol.voxels(), 0);
        for (std::size_t v = 0; v < vol.voxels(); ++v) {
            const double x = vol.at(v, 0);
            if (std::isfinite(x) && x >= 0.5) o[v] = static_cast<std::size_t>(std::lround(x));
        }
        runs.push_back(std::move(o));
    }
    const auto dist = summary::order_distribution(runs, mask, max_order, &m.notices);
    const fs::path out(c.out);
    write_text(out / "order_distribution.csv", dist.to_csv());
    std::string csv = "roi,percent_above\n";
    for (const auto& r : summary::threshold_summary(dist, cutoff))
        csv += r.roi + "," + io::format_number(r.percent_above) + "\n";
    write_text(out / ("threshold_above_" + std::to_string(cutoff) + ".csv"), csv);
}

void run_nullsim(const Common& c, pipeline::NullSimConfig cfg, std::size_t truth_order, const std::string& whiten,
                 manifest::RunManifest& m) {
    if (truth_order == 0 || truth_order > cfg.ar.size())
        throw ValidationError("--truth-order must be between 1 and the number of AR coefficients");
    cfg.ar.resize(truth_order);
    cfg.method = pipeline::whiten_method_from_string(whiten);
    cfg.threads = c.threads;
    m.seed = cfg.seed;
    const auto r = pipeline::null_fpr(cfg);
    json j;
    j["truth_ar"] = cfg.ar;
    j["whitening"] = cfg.method.name();
    j["scheme"] = r.scheme;
    j["estimated_coefficients"] = r.coefficients;
    j["voxels"] = r.voxels;
    j["positives"] = r.positives;
    j["alpha"] = cfg.alpha;
    j["fpr"] = r.fpr;
    j["fpr_ci99"] = {r.ci_lo, r.ci_hi};
    j["mean_t"] = r.mean_t;
    write_text(fs::path(c.out) / "report.json", j.dump(2) + "\n");
}

// Prepends "--key value" tokens from a JSON config so that explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    if (args.size() < 2 || args[1] == "simulate") return args;
    std::string path;
    for (std::size_t i = 2; i + 1 < args.size(); ++i)
        if (args[i] == "--config") path = args[i + 1];
    for (std::size_t i = 2; i < args.size(); ++i)
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    if (path.empty()) return args;
    const auto j = read_json(path);
    if (!j.is_object()) throw ValidationError("config " + path + " must be a JSON object");
    std::vector<std::string> out{args[0], args[1]};
    for (const auto& [k, v] : j.items()) {
        if (v.is_boolean()) {
            if (v.get<bool>()) out.push_back("--" + k);
        } else if (v.is_array()) {
            for (const auto& x : v) {
                out.push_back("--" + k);
                out.push_back(x.is_string() ? x.get<std::string>() : x.dump());
            }
        } else {
            out.push_back("--" + k);
            out.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        }
    }
    out.insert(out.end(), args.begin() + 2, args.end());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serialcorr: serial-correlation modelling for fMRI time series"};
    app.require_subcommand(1, 1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    Common common;
    DataOpts data;
    VbOpts vbo;
    std::optional<std::uint64_t> seed;
    std::string fit_dir, compare, whiten = "ar1", contrast = "task", rois, roi_names;
    double bf_threshold = 3.0;
    std::size_t lb_lags = 10, n_freq = 512, max_order = 10, cutoff = 5, truth_order = 4;
    std::vector<std::string> maps;
    pipeline::NullSimConfig null_cfg;
    std::string null_ar = "0.5,0.2,0.1,0.05";

    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset with ground truth");
    add_common(simulate, common);
    simulate->add_option("--seed", seed, "Override the config seed");

    auto* regressors = app.add_subcommand("regressors", "Build the design matrix and physiological regressors");
    add_common(regressors, common);
    add_data(regressors, data);

    auto* fitvb = app.add_subcommand("fit-vb", "VB GLM-AR(p) evidence scan over model orders");
    add_common(fitvb, common);
    add_data(fitvb, data);
    fitvb->add_option("--orders", vbo.orders, "Orders, e.g. 1..10 or 1,2,4")->capture_default_str();
    fitvb->add_option("--truncation", vbo.truncation, "common or per_order")->capture_default_str();
    fitvb->add_option("--prior", vbo.prior, "AR prior: shrinkage or graph_laplacian")->capture_default_str();
    fitvb->add_option("--max-iter", vbo.max_iter, "VB sweep limit")->capture_default_str();
    fitvb->add_option("--tol", vbo.tol, "Relative free-energy tolerance")->capture_default_str();

    auto* select = app.add_subcommand("select-order", "Winning orders and log Bayes factors from fit-vb output");
    add_common(select, common);
    select->add_option("--fit", fit_dir, "fit-vb output directory")->required();
    select->add_option("--compare", compare, "Two orders for a log Bayes factor map, e.g. 1,3");
    select->add_option("--bf-threshold", bf_threshold, "|log BF| above which evidence counts")->capture_default_str();

    auto* whiten_cmd = app.add_subcommand("whiten", "Pre-whitened GLM inference with whiteness diagnostics");
    add_common(whiten_cmd, common);
    add_data(whiten_cmd, data);
    whiten_cmd->add_option("--whiten", whiten, "none, ar1, ar<p> or fast")->capture_default_str();
    whiten_cmd->add_option("--contrast", contrast, "'task' (all *_hrf columns) or name=weight,...")
        ->capture_default_str();
    whiten_cmd->add_option("--lb-lags", lb_lags, "Ljung-Box lags")->capture_default_str();

    auto* spectra_cmd = app.add_subcommand("spectra", "Residual and AR-model spectra");
    add_common(spectra_cmd, common);
    add_data(spectra_cmd, data);
    spectra_cmd->add_option("--fit", fit_dir, "fit-vb output directory for per-order AR spectra");
    spectra_cmd->add_option("--n-freq", n_freq, "Frequency bins of AR spectra")->capture_default_str();

    auto* summarize = app.add_subcommand("summarize", "ROI-wise distributions of winning orders across runs");
    add_common(summarize, common);
    summarize->add_option("--maps", maps, "winning_order.nii of each run")->required();
    summarize->add_option("--rois", rois, "ROI label mask NIfTI")->required();
    summarize->add_option("--roi-names", roi_names, "Comma-separated names of labels 1, 2, ...");
    summarize->add_option("--max-order", max_order, "Largest order in the maps")->capture_default_str();
    summarize->add_option("--cutoff", cutoff, "Report the percentage of voxels above this order")->capture_default_str();

    auto* nullsim = app.add_subcommand("nullsim", "False-positive rate of pre-whitening on null AR data");
    add_common(nullsim, common);
    nullsim->add_option("--whiten", whiten, "none, ar1, ar<p> or fast")->capture_default_str();
    nullsim->add_option("--truth-order", truth_order, "Use the first p coefficients of --ar")->capture_default_str();
    nullsim->add_option("--ar", null_ar, "True AR coefficients")->capture_default_str();
    nullsim->add_option("--voxels", null_cfg.voxels, "Voxel draws")->capture_default_str();
    nullsim->add_option("--scans", null_cfg.T, "Scans per voxel")->capture_default_str();
    nullsim->add_option("--tr", null_cfg.tr_s, "Repetition time in s")->capture_default_str();
    nullsim->add_option("--alpha", null_cfg.alpha, "Nominal one-sided level")->capture_default_str();
    nullsim->add_option("--seed", null_cfg.seed, "Random seed")->capture_default_str();

    std::vector<std::string> args(argv, argv + argc);
    try {
        args = expand_config(args);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    manifest::RunManifest m;
    m.command = sub->get_name();
    m.started = manifest::utc_timestamp();
    try {
        fs::create_directories(common.out);
        if (fs::exists(fs::path(common.out) / manifest::kFileName)) fs::remove(fs::path(common.out) / manifest::kFileName);
        m.config = effective_options(sub);
        if (!common.config.empty() && m.command != "simulate") m.add_input(common.config);
        if (m.command == "simulate") {
            run_simulate(common, seed, m);
        } else if (m.command == "regressors") {
            run_regressors(common, data, m);
        } else if (m.command == "fit-vb") {
            run_fit_vb(common, data, vbo, m);
        } else if (m.command == "select-order") {
            run_select_order(common, fit_dir, compare, bf_threshold, m);
        } else if (m.command == "whiten") {
            run_whiten(common, data, whiten, contrast, lb_lags, m);
        } else if (m.command == "spectra") {
            run_spectra(common, data, fit_dir, n_freq, m);
        } else if (m.command == "summarize") {
            run_summarize(common, maps, rois, roi_names, max_order, cutoff, m);
        } else if (m.command == "nullsim") {
            null_cfg.ar.clear();
            std::stringstream ss(null_ar);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                try {
                    null_cfg.ar.push_back(std::stod(tok));
                } catch (const std::exception&) {
                    throw ValidationError("--ar: '" + tok + "' is not a number");
                }
            }
            run_nullsim(common, null_cfg, truth_order, whiten, m);
        }
        m.collect_outputs(common.out);
        m.finished = manifest::utc_timestamp();
        m.write(common.out);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
