#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "serialcorr/common.hpp"
#include "serialcorr/spectra.hpp"

using namespace serialcorr;

namespace {

Eigen::MatrixXd ar_noise(const std::vector<double>& a, std::size_t T, std::size_t N, unsigned seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd E(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
    const std::size_t burn = 500;
    std::vector<double> x(T + burn, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < T + burn; ++t) {
            double v = nd(g);
            for (std::size_t k = 1; k <= a.size() && k <= t; ++k) v += a[k - 1] * x[t - k];
            x[t] = v;
        }
        for (std::size_t t = 0; t < T; ++t) E(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) = x[t + burn];
    }
    return E;
}

// Process variance via the impulse response of the AR filter.
double impulse_variance(const std::vector<double>& a, double var) {
    std::vector<double> psi(20000, 0.0);
    psi[0] = 1.0;
    double s = 1.0;
    for (std::size_t j = 1; j < psi.size(); ++j) {
        for (std::size_t k = 1; k <= a.size() && k <= j; ++k) psi[j] += a[k - 1] * psi[j - k];
        s += psi[j] * psi[j];
    }
    return var * s;
}

}  // namespace

TEST_CASE("AR power spectra") {
    const auto flat = spectra::ar_spectrum({}, 1.0, 0.589);
    CHECK(flat.freq_hz.size() == 512);
    CHECK(flat.freq_hz.back() == doctest::Approx(1.0 / (2 * 0.589)));
    for (double v : flat.mean) CHECK(v == doctest::Approx(1.0));

    const std::vector<double> a1{0.9};
    const auto s = spectra::ar_spectrum(a1, 1.0, 0.589);
    CHECK(s.mean.front() / s.mean.back() == doctest::Approx(361.0).epsilon(1e-10));

    // AR(2) with poles at +-2 pi f0 tr.
    const double tr = 1.0, f0 = 0.2, r = 0.95, th = 2.0 * M_PI * f0 * tr;
    const std::vector<double> a2{2.0 * r * std::cos(th), -r * r};
    const auto s2 = spectra::ar_spectrum(a2, 1.0, tr);
    const auto ip = spectra::peak_index(s2, 0.0, 0.5);
    const double step = s2.freq_hz[1] - s2.freq_hz[0];
    CHECK(std::abs(s2.freq_hz[ip] - f0) <= step);

    for (const auto& a : std::vector<std::vector<double>>{{0.5}, {0.9}, {0.3, 0.2}, {0.5, 0.2, 0.1, 0.05}, a2}) {
        const auto c = spectra::ar_spectrum(a, 2.5, 0.589);
        const double oracle = impulse_variance(a, 2.5);
        CHECK(spectra::spectrum_power(c, 0.589) == doctest::Approx(oracle).epsilon(0.01));
        CHECK(spectra::ar_process_variance(a, 2.5) == doctest::Approx(oracle).epsilon(1e-8));
    }
    CHECK_THROWS_AS(spectra::ar_spectrum(std::vector<double>{1.05}, 1.0, 1.0), ValidationError);
}

TEST_CASE("residual amplitude spectra") {
    SUBCASE("pure tone at an exact bin") {
        const std::size_t T = 256;
        const double A = 3.7;
        Eigen::MatrixXd R(T, 1), R2(T, 1);
        for (std::size_t t = 0; t < T; ++t) {
            R(t, 0) = A * std::cos(2.0 * M_PI * 20.0 * (t + 0.5) / T);
            R2(t, 0) = A * std::cos(2.0 * M_PI * 20.0 * t / T + 0.3);
        }
        CHECK(std::abs(spectra::residual_spectrum(R, 1.0).mean[20] - A) < 1e-10);
        CHECK(std::abs(spectra::residual_spectrum(R2, 1.0, 1, false).mean[20] - A) < 1e-10);
    }
    SUBCASE("white noise is flat, AR noise is not until whitened") {
        const std::size_t T = 4096;
        const auto W = ar_noise({}, T, 100, 1);
        CHECK(spectra::smoothed_flatness(spectra::residual_spectrum(W, 1.0).mean) < 1.5);

        const std::vector<double> a{0.6, 0.2};
        const auto E = ar_noise(a, 1024, 100, 2);
        CHECK(spectra::smoothed_flatness(spectra::residual_spectrum(E, 1.0).mean) > 1.5);
        Eigen::MatrixXd Z = E.bottomRows(1022);
        Z -= a[0] * E.middleRows(1, 1022) + a[1] * E.topRows(1022);
        CHECK(spectra::smoothed_flatness(spectra::residual_spectrum(Z, 1.0).mean) < 1.5);
    }
    SUBCASE("aliased cardiac tone") {
        const std::size_t T = 581;
        const double tr = 0.589;
        Eigen::MatrixXd R(T, 3);
        for (std::size_t t = 0; t < T; ++t)
            for (Eigen::Index n = 0; n < 3; ++n) R(t, n) = std::cos(2.0 * M_PI * 1.04 * t * tr + n);
        const auto c = spectra::residual_spectrum(R, tr);
        CHECK(c.count == 3);
        const auto ip = spectra::peak_index(c, 0.0, 1.0 / (2 * tr));
        CHECK(c.freq_hz[ip] == doctest::Approx(0.66).epsilon(0.005));
        CHECK(std::abs(c.freq_hz[ip] - spectra::alias_frequency(1.04, 1.0 / tr)) <= 1.0 / (T * tr));
    }
    SUBCASE("threads do not change the curve") {
        const auto E = ar_noise({0.3}, 300, 37, 4);
        const auto a = spectra::residual_spectrum(E, 1.0, 1), b = spectra::residual_spectrum(E, 1.0, 3);
        CHECK(a.mean == b.mean);
        CHECK(a.stddev == b.stddev);
    }
    CHECK_THROWS_AS(spectra::residual_spectrum(Eigen::MatrixXd(100, 0), 1.0), ValidationError);
    CHECK_THROWS_AS(spectra::residual_spectrum(Eigen::MatrixXd::Ones(4, 2), 1.0), ValidationError);
}

TEST_CASE("alias frequencies") {
    CHECK(spectra::alias_frequency(0.31, 1.0 / 0.589) == doctest::Approx(0.31));
    CHECK(spectra::alias_frequency(1.04, 1.0 / 0.589) == doctest::Approx(0.658).epsilon(1e-3));
    CHECK(std::abs(spectra::alias_frequency(0.31, 1.0 / 2.356) - 0.1) < 0.02);
    std::mt19937 g(1);
    std::uniform_real_distribution<double> u(0.01, 5.0);
    for (int i = 0; i < 1000; ++i) {
        const double f = u(g), fs = u(g);
        const double a = spectra::alias_frequency(f, fs);
        CHECK(a >= 0.0);
        CHECK(a <= fs / 2 + 1e-12);
        CHECK(spectra::alias_frequency(a, fs) == doctest::Approx(a).epsilon(1e-12));
    }
}

TEST_CASE("spectra grouped by winning order") {
    const double tr = 0.589;
    std::vector<std::vector<double>> means{{0.4}, {0.4}, {0.4}};
    std::vector<double> var{1.0, 1.0, 1.0};
    std::vector<std::size_t> order{1, 1, 1};
    auto curves = spectra::spectra_by_order(means, var, order, tr, 64, 2);
    REQUIRE(curves.size() == 1);
    const auto single = spectra::ar_spectrum(means[0], 1.0, tr, 64);
    for (std::size_t i = 0; i < 64; ++i) CHECK(curves[0].mean[i] == doctest::Approx(single.mean[i]).epsilon(1e-12));
    CHECK(curves[0].count == 3);
    CHECK_FALSE(curves[0].low_count);

    means = {{0.4}, {0.1, 0.2}, {0.3}, {0.2, 0.1}, {0.5}};
    var = {1, 1, 1, 1, 1};
    order = {1, 2, 1, 2, 1};
    curves = spectra::spectra_by_order(means, var, order, tr, 64, 3);
    REQUIRE(curves.size() == 2);
    CHECK(curves[0].order == 1);
    CHECK(curves[0].count == 3);
    CHECK(curves[1].order == 2);
    CHECK(curves[1].count == 2);
    CHECK(curves[1].low_count);

    const auto t = curves[0].to_table();
    CHECK(t.names == std::vector<std::string>{"freq_hz", "mean", "std", "n"});
}
