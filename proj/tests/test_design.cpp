#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "serialcorr/common.hpp"
#include "serialcorr/design.hpp"
#include "serialcorr/physio.hpp"

using namespace serialcorr;

namespace {

// Independent double gamma: gamma densities via tgamma, SPM default shape.
double oracle_hrf(double t) {
    if (t <= 0.0) return 0.0;
    auto g = [](double x, double k) { return std::pow(x, k - 1.0) * std::exp(-x) / std::tgamma(k); };
    return g(t, 6.0) - g(t, 16.0) / 6.0;
}

double oracle_peak() {
    double best = 0.0;
    for (int i = 0; i <= 32000; ++i) best = std::max(best, oracle_hrf(i * 1e-3));
    return best;
}

// Boxcar convolution by direct quadrature on a 1 ms grid, sampled at t = k * tr.
std::vector<double> oracle_block(double onset, double duration, std::size_t T, double tr) {
    const double dt = 1e-3, peak = oracle_peak();
    std::vector<double> out(T, 0.0);
    for (std::size_t k = 0; k < T; ++k) {
        const double t = static_cast<double>(k) * tr;
        double acc = 0.0;
        for (double s = onset; s < onset + duration - dt / 2; s += dt) acc += oracle_hrf(t - s - dt / 2) * dt;
        out[k] = acc / peak;
    }
    return out;
}

Eigen::MatrixXd random_rp(std::size_t T, unsigned seed) {
    std::mt19937 g(seed);
    std::normal_distribution<double> n(0.0, 0.1);
    Eigen::MatrixXd rp(static_cast<Eigen::Index>(T), 6);
    for (Eigen::Index i = 0; i < rp.size(); ++i) rp.data()[i] = n(g);
    return rp;
}

physio::NuisanceInputs nuisance_inputs(std::size_t T, double tr) {
    physio::NuisanceInputs in;
    in.realignment = random_rp(T, 5);
    in.times = physio::scan_times(T, tr);
    physio::PhaseSeries ph;
    physio::RateSeries rates;
    for (std::size_t k = 0; k < T; ++k) {
        const double t = in.times[k];
        ph.cardiac.push_back(std::fmod(t * 2.0 * M_PI * 1.1, 2.0 * M_PI));
        ph.respiratory.push_back(std::fmod(t * 2.0 * M_PI * 0.27, 2.0 * M_PI));
        rates.rv.push_back(1.0 + 0.3 * std::sin(0.05 * t));
        rates.hr.push_back(66.0 + 4.0 * std::cos(0.031 * t));
    }
    in.phases = ph;
    in.rates = rates;
    return in;
}

}  // namespace

TEST_CASE("canonical HRF shape") {
    const auto k = design::canonical_hrf(0.01);
    REQUIRE(k.size() == 3);
    CHECK(k[0].samples.size() == 3201);
    CHECK(k[0].samples[0] == 0.0);
    const auto it = std::max_element(k[0].samples.begin(), k[0].samples.end());
    const double t_peak = static_cast<double>(it - k[0].samples.begin()) * 0.01;
    CHECK(std::abs(t_peak - 5.0) <= 0.01 + 1e-12);
    CHECK(*it == doctest::Approx(1.0).epsilon(1e-6));

    const double peak = oracle_peak();
    double maxerr = 0.0;
    for (std::size_t i = 0; i < k[0].samples.size(); ++i)
        maxerr = std::max(maxerr, std::abs(k[0].samples[i] - oracle_hrf(i * 0.01) / peak));
    CHECK(maxerr < 1e-6);

    // Temporal derivative: (h(t) - h(t - 1)) integrates to the last second of h.
    double integral = 0.0, tail = 0.0;
    for (std::size_t i = 0; i + 1 < k[1].samples.size(); ++i) integral += k[1].samples[i] * 0.01;
    for (int i = 0; i < 10000; ++i) tail += oracle_hrf(31.0 + (i + 0.5) * 1e-4) * 1e-4 / peak;
    CHECK(std::abs(integral - tail) < 1e-3);

    CHECK_THROWS_AS(design::canonical_hrf(0.0), ValidationError);
    CHECK_THROWS_AS(design::canonical_hrf(1.5), ValidationError);
}

TEST_CASE("finger-tapping schedule") {
    const auto s = design::default_task_schedule();
    CHECK(s.run_length_s == 342.0);
    REQUIRE(s.conditions.size() == 2);
    CHECK(s.conditions[0].name == "simple");
    CHECK(s.conditions[0].onsets_s == std::vector<double>{18, 90, 126, 198, 234, 306});
    CHECK(s.conditions[1].onsets_s == std::vector<double>{36, 72, 144, 180, 252, 288});
    for (const auto& c : s.conditions) {
        CHECK(c.onsets_s.size() == 6);
        CHECK(c.duration_s == 18.0);
    }
    const auto r = design::default_task_schedule(design::ScheduleVariant::simple_first, true);
    CHECK(r.conditions[0].onsets_s == s.conditions[1].onsets_s);
    CHECK(r.conditions[1].onsets_s == s.conditions[0].onsets_s);
    const auto c = design::default_task_schedule(design::ScheduleVariant::complex_first, false);
    CHECK(c.conditions[0].onsets_s == r.conditions[0].onsets_s);
}

TEST_CASE("block regressors") {
    const auto k = design::canonical_hrf(0.589 / 16.0);
    const double tr = 0.589;
    const std::size_t T = 200;

    SUBCASE("empty onsets give zeros") {
        const auto col = design::block_regressor({"x", {}, 18.0}, T, tr, k[0]);
        CHECK(std::all_of(col.begin(), col.end(), [](double v) { return v == 0.0; }));
    }
    SUBCASE("18 s block matches a dense convolution oracle") {
        const auto col = design::block_regressor({"x", {10.0}, 18.0}, T, tr, k[0]);
        const auto ref = oracle_block(10.0, 18.0, T, tr);
        double maxerr = 0.0;
        for (std::size_t i = 0; i < T; ++i) maxerr = std::max(maxerr, std::abs(col[i] - ref[i]));
        CHECK(maxerr < 0.01 * *std::max_element(ref.begin(), ref.end()));
        // Plateau peak of a long block: where h crosses zero, about 12 s after onset.
        const auto imax = static_cast<double>(std::max_element(col.begin(), col.end()) - col.begin());
        CHECK(imax * tr - 10.0 == doctest::Approx(12.07).epsilon(0.06));
    }
    SUBCASE("short block peaks 4-8 s after onset") {
        const auto col = design::block_regressor({"x", {10.0}, 2.0}, T, tr, k[0]);
        const auto imax = static_cast<double>(std::max_element(col.begin(), col.end()) - col.begin());
        CHECK(imax * tr - 10.0 >= 4.0);
        CHECK(imax * tr - 10.0 <= 8.0);
    }
    SUBCASE("linearity") {
        const auto a = design::block_regressor({"x", {10.0}, 18.0}, T, tr, k[0]);
        const auto b = design::block_regressor({"x", {50.0}, 18.0}, T, tr, k[0]);
        const auto ab = design::block_regressor({"x", {10.0, 50.0}, 18.0}, T, tr, k[0]);
        for (std::size_t i = 0; i < T; ++i) CHECK(ab[i] == doctest::Approx(a[i] + b[i]).epsilon(1e-12));
    }
    SUBCASE("non-dividing kernel step uses the resampled microtime grid") {
        const auto coarse = design::canonical_hrf(0.05);
        const auto a = design::block_regressor({"x", {10.0}, 18.0}, T, tr, coarse[0]);
        const auto b = design::block_regressor({"x", {10.0}, 18.0}, T, tr, k[0]);
        double maxerr = 0.0;
        for (std::size_t i = 0; i < T; ++i) maxerr = std::max(maxerr, std::abs(a[i] - b[i]));
        CHECK(maxerr < 1e-3 * *std::max_element(b.begin(), b.end()));
    }
    CHECK_THROWS_AS(design::block_regressor({"x", {500.0}, 18.0}, T, tr, k[0]), ValidationError);
}

TEST_CASE("task columns are named and reproducible") {
    const auto s = design::default_task_schedule();
    const auto a = design::task_columns(s, 581, 0.589);
    const auto b = design::task_columns(s, 581, 0.589);
    CHECK(a.names == std::vector<std::string>{"simple_hrf", "simple_dt", "simple_dd", "complex_hrf", "complex_dt",
                                              "complex_dd"});
    CHECK(a.X == b.X);
}

TEST_CASE("design column counts per scheme") {
    const std::size_t T = 581;
    const double tr = 0.589;
    const auto task = design::task_columns(design::default_task_schedule(), T, tr);
    const auto in = nuisance_inputs(T, tr);
    auto count = [&](physio::Scheme s) {
        const auto d = design::build_design(task, physio::build_nuisance(s, in), T, tr);
        CHECK(d.columns_in(design::ColumnGroup::constant).size() == 1);
        CHECK(d.groups.back() == design::ColumnGroup::constant);
        CHECK(d.X.leftCols(6) == task.X);
        for (std::size_t j = 1; j < d.groups.size(); ++j) CHECK(d.groups[j] >= d.groups[j - 1]);
        return d.cols();
    };
    CHECK(count(physio::Scheme::none) == 13);
    CHECK(count(physio::Scheme::retroicor) == 31);
    CHECK(count(physio::Scheme::retroicor_rf) == 33);
    CHECK(count(physio::Scheme::retroicor_volterra) == 49);

    design::DesignOptions opt;
    opt.dct_cutoff_s = 128.0;
    const auto d = design::build_design(task, physio::build_nuisance(physio::Scheme::none, in), T, tr, opt);
    // Periods 2 T tr / k longer than 128 s: k < 2 * 342.2 / 128.
    CHECK(d.columns_in(design::ColumnGroup::drift).size() == 5);
}

TEST_CASE("dependent columns warn; too many columns fail") {
    const std::size_t T = 200;
    const double tr = 2.0;
    const auto task = design::task_columns(design::default_task_schedule(), T, tr);
    physio::NuisanceInputs in;
    in.realignment = random_rp(T, 1);
    in.realignment.col(2) = in.realignment.col(0);
    const auto d = design::build_design(task, physio::build_nuisance(physio::Scheme::none, in), T, tr);
    CHECK_FALSE(d.warnings.empty());

    physio::NuisanceInputs small;
    small.realignment = random_rp(7, 1);
    const auto task7 = design::task_columns(design::TaskSchedule{}, 7, tr);
    CHECK_THROWS_AS(design::build_design(task7, physio::build_nuisance(physio::Scheme::none, small), 7, tr),
                    ValidationError);
}

TEST_CASE("CSV export round trip and downsampling") {
    const std::size_t T = 581;
    const double tr = 0.589;
    const auto task = design::task_columns(design::default_task_schedule(), T, tr);
    const auto d = design::build_design(task, physio::build_nuisance(physio::Scheme::retroicor, nuisance_inputs(T, tr)),
                                        T, tr);
    const auto t = design::to_table(d);
    CHECK(t.names.front() == "task:simple_hrf");
    CHECK(t.names.back() == "constant:constant");
    const auto back = design::from_table(io::parse_table(io::format_table(t)), tr);
    CHECK(back.X == d.X);
    CHECK(back.names == d.names);
    CHECK(back.groups == d.groups);

    const auto ds = design::downsample_design(d, 4);
    CHECK(ds.rows() == 146);
    CHECK(ds.tr_s == doctest::Approx(4 * tr));
    for (auto j : ds.columns_in(design::ColumnGroup::task))
        CHECK(ds.X(10, static_cast<Eigen::Index>(j)) == d.X(40, static_cast<Eigen::Index>(j)));
    for (auto j : ds.columns_in(design::ColumnGroup::physio))
        CHECK(std::abs(ds.X.col(static_cast<Eigen::Index>(j)).mean()) < 1e-10);
}
