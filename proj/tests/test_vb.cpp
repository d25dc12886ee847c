#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "serialcorr/common.hpp"
#include "serialcorr/vb.hpp"

using namespace serialcorr;

namespace {

Eigen::MatrixXd ar_noise(const std::vector<double>& a, std::size_t T, std::size_t N, unsigned seed, double sd = 1.0) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> nd(0.0, sd);
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

Eigen::MatrixXd design(std::size_t T) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(T), 2);
    for (std::size_t t = 0; t < T; ++t) X(static_cast<Eigen::Index>(t), 0) = std::sin(2.0 * M_PI * t / 61.0);
    X.col(1).setOnes();
    return X;
}

double fraction(const std::vector<std::size_t>& v, auto pred) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), pred)) / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("p = 0 reduces to least squares") {
    const std::size_t T = 120;
    const auto X = design(T);
    Eigen::MatrixXd Y = ar_noise({}, T, 10, 1, 2.0);
    Y.colwise() += X * Eigen::Vector2d(3.0, 100.0);
    vb::VBConfig cfg;
    cfg.order = 0;
    const auto post = vb::vb_fit(Y, X, cfg);
    for (Eigen::Index n = 0; n < Y.cols(); ++n) {
        const Eigen::VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * Y.col(n));
        const auto& v = post.voxels[static_cast<std::size_t>(n)];
        CHECK((v.w_mean - ols).norm() <= 1e-8 * ols.norm());
        const double s2 = (Y.col(n) - X * ols).squaredNorm() / static_cast<double>(T - 2);
        CHECK(v.lambda_mean() == doctest::Approx(1.0 / s2).epsilon(0.02));
    }
}

TEST_CASE("AR(1) coefficient recovery") {
    const std::size_t T = 580, N = 500;
    const auto X = design(T);
    const auto Y = ar_noise({0.8}, T, N, 2);
    vb::VBConfig cfg;
    cfg.order = 1;
    const auto post = vb::vb_fit(Y, X, cfg);
    std::size_t good = 0;
    for (const auto& v : post.voxels) good += std::abs(v.a_mean(0) - 0.8) <= 0.05;
    CHECK(static_cast<double>(good) / N >= 0.90);
}

TEST_CASE("free energy never decreases") {
    std::mt19937 g(5);
    std::uniform_int_distribution<int> order(0, 4);
    std::uniform_real_distribution<double> coef(-0.6, 0.6);
    std::size_t checked = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t T = 40 + static_cast<std::size_t>(inst % 7) * 10;
        const int p = order(g);
        std::vector<double> a;
        if (inst % 2) a = {coef(g)};
        Eigen::MatrixXd Y = ar_noise(a, T, 1, 1000 + static_cast<unsigned>(inst), 0.1 + inst % 5);
        const auto X = design(T);
        vb::VBConfig cfg;
        cfg.order = static_cast<std::size_t>(p);
        const auto post = vb::vb_fit(Y, X, cfg);
        const auto& F = post.voxels[0].free_energy;
        for (std::size_t i = 1; i < F.size(); ++i) {
            CHECK(F[i] >= F[i - 1] - 1e-8 * std::abs(F[i - 1]));
            ++checked;
        }
        for (double f : F) REQUIRE(std::isfinite(f));
    }
    CHECK(checked > 1000);
}

TEST_CASE("evidence scan and order selection") {
    const std::size_t T = 580;
    const auto X = design(T);
    const std::vector<std::size_t> orders{1, 2, 3, 4, 5, 6};
    vb::VBConfig cfg;

    SUBCASE("white noise favours order 1 over higher orders") {
        const auto Y = ar_noise({}, T, 200, 3);
        const auto ev = vb::evidence_scan(Y, X, orders, cfg);
        for (std::size_t r = 1; r < orders.size(); ++r) {
            std::size_t wins = 0;
            for (Eigen::Index n = 0; n < ev.F.cols(); ++n) wins += ev.F(0, n) >= ev.F(static_cast<Eigen::Index>(r), n);
            CHECK(wins > 100);
        }
    }
    SUBCASE("AR(3) truth is recovered within one order") {
        const auto Y = ar_noise({0.35, 0.15, 0.2}, T, 200, 4, 10.0);
        const auto ev = vb::evidence_scan(Y, X, orders, cfg);
        const auto win = vb::winning_order(ev);
        CHECK(fraction(win, [](std::size_t p) { return p >= 2 && p <= 4; }) >= 0.70);
        // Scale invariance of the argmax.
        const auto ev2 = vb::evidence_scan(Y * 0.1, X, orders, cfg);
        CHECK(vb::winning_order(ev2) == win);
        // Thread count does not change anything.
        cfg.threads = 3;
        const auto ev3 = vb::evidence_scan(Y, X, orders, cfg);
        CHECK(ev3.F == ev.F);
    }
    SUBCASE("truncation modes") {
        const auto Y = ar_noise({0.3}, T, 3, 5);
        const auto common = vb::evidence_scan(Y, X, orders, cfg);
        for (auto s : common.samples) CHECK(s == T - 6);
        cfg.truncation = vb::Truncation::per_order;
        const auto per = vb::evidence_scan(Y, X, orders, cfg);
        for (std::size_t i = 0; i < orders.size(); ++i) CHECK(per.samples[i] == T - orders[i]);
    }
    SUBCASE("Bayes factors") {
        const auto Y4 = ar_noise({0.5, 0.2, 0.1, 0.05}, T, 200, 6);
        const auto ev = vb::evidence_scan(Y4, X, {1, 4}, cfg);
        const auto same = vb::log_bayes_factor(ev, 4, 4);
        CHECK(same.log_bf.cwiseAbs().maxCoeff() == 0.0);
        CHECK(same.inconclusive == 200);
        const auto bf = vb::log_bayes_factor(ev, 4, 1);
        CHECK(bf.favors_high >= 120);
        CHECK(bf.favors_high + bf.favors_low + bf.inconclusive == 200);
        for (Eigen::Index n = 0; n < bf.log_bf.size(); ++n) {
            const double d = ev.F(1, n) - ev.F(0, n);
            CHECK(bf.log_bf(n) == d);
            const auto expected = d > 3.0 ? vb::BFClass::favors_high
                                          : (d < -3.0 ? vb::BFClass::favors_low : vb::BFClass::inconclusive);
            CHECK(bf.classes[static_cast<std::size_t>(n)] == expected);
        }
    }
    SUBCASE("downsampled AR(1) data does not support order 4") {
        const auto full = ar_noise({0.5}, 4 * 146, 200, 7);
        Eigen::MatrixXd Y(146, 200);
        for (Eigen::Index t = 0; t < 146; ++t) Y.row(t) = full.row(4 * t);
        const auto ev = vb::evidence_scan(Y, design(146), {1, 4}, cfg);
        const auto bf = vb::log_bayes_factor(ev, 4, 1);
        CHECK(bf.favors_low + bf.inconclusive >= 160);
    }
}

TEST_CASE("winning order tie-break") {
    vb::EvidenceMaps ev;
    ev.orders = {1, 2, 3};
    ev.F.resize(3, 2);
    ev.F << -10, 4, -5, 4, -7, 4;
    CHECK(vb::winning_order(ev) == std::vector<std::size_t>{2, 1});
}

TEST_CASE("graph Laplacian prior") {
    const auto one = vb::graph_laplacian_prior({true}, 1, 1);
    CHECK(one.laplacian.nonZeros() <= 1);
    CHECK(Eigen::MatrixXd(one.laplacian)(0, 0) == 0.0);
    const auto two = vb::graph_laplacian_prior({true, true, false}, 3, 1);
    Eigen::MatrixXd L2(two.laplacian), ref(2, 2);
    ref << 1, -1, -1, 1;
    CHECK(L2 == ref);

    std::vector<bool> pattern(20);
    for (std::size_t i = 0; i < 20; ++i) pattern[i] = (i * 7) % 3 != 0;
    const auto g = vb::graph_laplacian_prior(pattern, 5, 4);
    Eigen::MatrixXd L(g.laplacian);
    CHECK(L.rowwise().sum().cwiseAbs().maxCoeff() == 0.0);
    CHECK((L - L.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::MatrixXd R = L + vb::kLaplacianRidge * Eigen::MatrixXd::Identity(L.rows(), L.cols());
    CHECK(R.llt().info() == Eigen::Success);

    io::Mask mask({3, 2, 3}, 0);
    mask.labels[0] = 1;
    mask.labels[1] = 1;
    mask.labels[14] = 1;
    Notices notes;
    const auto graphs = vb::slice_graphs(mask, &notes);
    CHECK(graphs.size() == 2);
    CHECK(notes.size() == 1);
    CHECK(graphs[1].columns == std::vector<std::size_t>{2});
}

TEST_CASE("spatial prior improves smooth AR maps") {
    const std::size_t nx = 12, ny = 12, T = 150, N = nx * ny;
    const auto X = design(T);
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
    std::vector<double> truth(N);
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            const std::size_t i = y * nx + x;
            truth[i] = 0.2 + 0.5 * static_cast<double>(x) / static_cast<double>(nx - 1);
            Y.col(static_cast<Eigen::Index>(i)) = ar_noise({truth[i]}, T, 1, 100 + static_cast<unsigned>(i));
        }
    std::vector<vb::SliceGraph> graphs{vb::graph_laplacian_prior(std::vector<bool>(N, true), nx, ny)};
    vb::VBConfig cfg;
    cfg.order = 1;
    const auto voxelwise = vb::vb_fit(Y, X, cfg);
    cfg.ar_prior = vb::ARPrior::graph_laplacian;
    const auto spatial = vb::vb_fit(Y, X, cfg, static_cast<std::size_t>(-1), &graphs);
    double mse_v = 0.0, mse_s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        mse_v += std::pow(voxelwise.voxels[i].a_mean(0) - truth[i], 2);
        mse_s += std::pow(spatial.voxels[i].a_mean(0) - truth[i], 2);
    }
    CHECK(mse_s < mse_v);
}

TEST_CASE("configuration parsing") {
    CHECK(vb::parse_orders("1..4") == std::vector<std::size_t>{1, 2, 3, 4});
    CHECK(vb::parse_orders("1,2,4") == std::vector<std::size_t>{1, 2, 4});
    CHECK_THROWS_AS(vb::parse_orders("3..1"), ValidationError);
    CHECK_THROWS_AS(vb::parse_orders("a"), ValidationError);
    CHECK(vb::truncation_from_string("per_order") == vb::Truncation::per_order);
    CHECK(vb::ar_prior_from_string("graph_laplacian") == vb::ARPrior::graph_laplacian);
    vb::VBConfig bad;
    bad.tolerance = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK_THROWS_AS(vb::vb_fit(Eigen::MatrixXd::Ones(5, 1), Eigen::MatrixXd::Ones(5, 1), [] {
        vb::VBConfig c;
        c.order = 6;
        return c;
    }()),
                    ValidationError);
}
