#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "serialcorr/common.hpp"
#include "serialcorr/glm.hpp"

using namespace serialcorr;

namespace {

// AR(p) noise with unit innovations, 1000-sample burn-in, one column per voxel.
Eigen::MatrixXd ar_noise(const std::vector<double>& a, std::size_t T, std::size_t N, unsigned seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd E(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
    const std::size_t burn = 1000, p = a.size();
    std::vector<double> x(T + burn, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < T + burn; ++t) {
            double v = nd(g);
            for (std::size_t k = 1; k <= p && k <= t; ++k) v += a[k - 1] * x[t - k];
            x[t] = v;
        }
        for (std::size_t t = 0; t < T; ++t) E(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(n)) = x[t + burn];
    }
    return E;
}

// Theoretical autocorrelation of an AR(p) from the Yule-Walker forward equations.
std::vector<double> ar_autocorrelation(const std::vector<double>& a, std::size_t max_lag) {
    const auto p = static_cast<Eigen::Index>(a.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(p, p);
    Eigen::VectorXd b(p);
    for (Eigen::Index k = 1; k <= p; ++k) {
        b(k - 1) = a[static_cast<std::size_t>(k - 1)];  // a_k * rho_0
        for (Eigen::Index j = 1; j <= p; ++j) {
            const Eigen::Index lag = std::abs(k - j);
            if (lag > 0) A(k - 1, lag - 1) -= a[static_cast<std::size_t>(j - 1)];
        }
    }
    const Eigen::VectorXd rho = A.partialPivLu().solve(b);
    std::vector<double> r(max_lag + 1, 0.0);
    r[0] = 1.0;
    for (std::size_t k = 1; k <= max_lag; ++k) {
        if (k <= a.size()) {
            r[k] = rho(static_cast<Eigen::Index>(k - 1));
        } else {
            for (std::size_t j = 1; j <= a.size(); ++j) r[k] += a[j - 1] * r[k - j];
        }
    }
    return r;
}

Eigen::MatrixXd random_design(std::size_t T, std::size_t K, unsigned seed) {
    std::mt19937 g(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(K));
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = nd(g);
    X.col(static_cast<Eigen::Index>(K) - 1).setOnes();
    return X;
}

double lag1(const Eigen::VectorXd& x) {
    const Eigen::VectorXd c = x.array() - x.mean();
    return c.head(c.size() - 1).dot(c.tail(c.size() - 1)) / c.squaredNorm();
}

}  // namespace

TEST_CASE("OLS") {
    SUBCASE("exact fit") {
        const auto X = random_design(30, 4, 1);
        Eigen::VectorXd w0(4);
        w0 << 1.5, -2.0, 0.25, 10.0;
        const auto fit = glm::ols_fit(X * w0, X);
        CHECK((fit.beta.col(0) - w0).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(fit.residuals.cwiseAbs().maxCoeff() < 1e-10);
        CHECK(fit.dof == 26);
    }
    SUBCASE("constant-only design gives the mean") {
        Eigen::MatrixXd Y(5, 1);
        Y << 1, 2, 3, 4, 10;
        const auto fit = glm::ols_fit(Y, Eigen::MatrixXd::Ones(5, 1));
        CHECK(fit.beta(0, 0) == doctest::Approx(4.0));
    }
    SUBCASE("normal-equations oracle") {
        const auto X = random_design(20, 3, 2);
        const auto Y = ar_noise({}, 20, 5, 3);
        const auto fit = glm::ols_fit(Y, X);
        const Eigen::MatrixXd XtX = X.transpose() * X;
        const Eigen::MatrixXd ref = XtX.fullPivLu().solve(X.transpose() * Y);
        CHECK((fit.beta - ref).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((fit.residuals - (Y - X * fit.beta)).cwiseAbs().maxCoeff() < 1e-12);
        const Eigen::VectorXd s2 = fit.residuals.colwise().squaredNorm().transpose() / 17.0;
        CHECK((fit.sigma2 - s2).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("rank deficiency names the column") {
        auto X = random_design(20, 4, 4);
        X.col(2) = 2.0 * X.col(0) - X.col(1);
        CHECK_THROWS_WITH_AS(glm::ols_fit(Eigen::MatrixXd::Ones(20, 1), X), doctest::Contains("2"), ValidationError);
    }
}

TEST_CASE("pooled autocovariance") {
    SUBCASE("white noise") {
        const auto E = ar_noise({}, 10000, 1000, 5);
        const auto g = glm::pooled_autocov(E, 5, 1);
        CHECK(g[0] == doctest::Approx(1.0));
        for (std::size_t k = 1; k <= 5; ++k) CHECK(std::abs(g[k]) < 0.05);
        // Thread count does not change the reduction.
        CHECK(glm::pooled_autocov(E, 5, 3) == g);
    }
    SUBCASE("exact AR(1) input") {
        std::vector<std::vector<double>> per_voxel;
        for (double s : {1.0, 4.0, 0.3}) {
            std::vector<double> v;
            for (int k = 0; k <= 6; ++k) v.push_back(s * std::pow(0.5, k));
            per_voxel.push_back(v);
        }
        const auto g = glm::pool_autocov(per_voxel);
        for (int k = 0; k <= 6; ++k) CHECK(g[static_cast<std::size_t>(k)] == doctest::Approx(std::pow(0.5, k)));
    }
    SUBCASE("single voxel equals its normalized autocovariance") {
        const auto E = ar_noise({0.4}, 300, 1, 6);
        const std::vector<double> x(E.data(), E.data() + E.size());
        auto a = glm::autocovariance(x, 4);
        const auto g = glm::pooled_autocov(E, 4);
        for (std::size_t k = 0; k <= 4; ++k) CHECK(g[k] == doctest::Approx(a[k] / a[0]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(glm::pooled_autocov(Eigen::MatrixXd(10, 0), 2), ValidationError);
}

TEST_CASE("Yule-Walker and the AR(1) scheme") {
    const std::vector<double> white{1.0, 0.0, 0.0, 0.0};
    const auto w = glm::yule_walker(white, 3);
    for (double a : w.a) CHECK(a == 0.0);
    CHECK(w.innovation_var == doctest::Approx(1.0));

    const std::vector<double> g05{1.0, 0.5, 0.25, 0.125};
    CHECK(glm::yule_walker(g05, 1).a[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(glm::ar1_pooled_approx(g05).a[0] == 0.5);
    CHECK(glm::ar1_pooled_approx(white).a[0] == 0.0);
    CHECK(glm::ar1_pooled_approx(std::vector<double>{2.0, 0.4}).a[0] == doctest::Approx(0.2));
    CHECK(glm::ar1_pooled_approx(g05).scheme == "AR(1)");

    // AR(4) truth seen through the AR(1) lens: a1 = rho(1) = 0.7499 (2e6-sample simulation: 0.74984).
    const auto rho = ar_autocorrelation({0.5, 0.2, 0.1, 0.05}, 4);
    CHECK(std::abs(glm::ar1_pooled_approx(rho).a[0] - 0.7499) < 1e-3);
    const auto back = glm::yule_walker(rho, 4);
    CHECK(back.a[0] == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(back.a[3] == doctest::Approx(0.05).epsilon(1e-9));

    const auto E = ar_noise({0.5, 0.2, 0.1}, 50000, 1, 7);
    const auto est = glm::yule_walker(glm::pooled_autocov(E, 3), 3);
    CHECK(std::abs(est.a[0] - 0.5) < 0.02);
    CHECK(std::abs(est.a[1] - 0.2) < 0.02);
    CHECK(std::abs(est.a[2] - 0.1) < 0.02);
    CHECK(est.stationary);

    CHECK_THROWS_AS(glm::yule_walker(std::vector<double>{1.0, 1.0, 1.0}, 2), NumericalError);
    CHECK(glm::is_stationary(std::vector<double>{0.5, 0.2}));
    CHECK_FALSE(glm::is_stationary(std::vector<double>{1.1}));
    CHECK_FALSE(glm::is_stationary(std::vector<double>{0.5, 0.6}));
}

TEST_CASE("AR whitening") {
    SUBCASE("a = 0 is the identity") {
        const auto X = random_design(50, 3, 1);
        const auto Y = ar_noise({}, 50, 4, 2);
        glm::ARCoeffs zero;
        zero.a = {0.0};
        const auto w = glm::whiten(Y, X, zero);
        CHECK(w.Y.rows() == 49);
        CHECK((glm::ols_fit(w.Y, w.X).beta - glm::ols_fit(Y.bottomRows(49), X.bottomRows(49)).beta).cwiseAbs().maxCoeff() <
              1e-10);
    }
    SUBCASE("exact AR covariance becomes innovation_var * I") {
        const std::vector<double> a{0.5, 0.2, 0.1, 0.05};
        const std::size_t T = 60;
        const auto rho = ar_autocorrelation(a, T);
        // Variance of the process with unit innovations: 1 / (1 - sum a_k rho_k).
        double s = 0.0;
        for (std::size_t k = 1; k <= 4; ++k) s += a[k - 1] * rho[k];
        const double var = 1.0 / (1.0 - s);
        Eigen::MatrixXd V(T, T);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) V(i, j) = var * rho[i > j ? i - j : j - i];
        glm::ARCoeffs ar;
        ar.a = a;
        const auto W = glm::whiten(Eigen::MatrixXd::Identity(T, T), Eigen::MatrixXd::Identity(T, T), ar).Y;
        const Eigen::MatrixXd S = W * V * W.transpose();
        CHECK((S - Eigen::MatrixXd::Identity(T - 4, T - 4)).cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("estimated AR(1) leaves white innovations") {
        const auto E = ar_noise({0.9}, 20000, 1, 9);
        const auto ar = glm::yule_walker(glm::pooled_autocov(E, 1), 1);
        const auto w = glm::whiten(E, Eigen::MatrixXd::Ones(20000, 1), ar);
        CHECK(std::abs(lag1(w.Y.col(0))) < 0.02);
    }
    SUBCASE("whitened OLS is unbiased") {
        const std::size_t T = 200, N = 1000;
        const auto X = random_design(T, 2, 3);
        Eigen::VectorXd w0(2);
        w0 << 0.7, 3.0;
        Eigen::MatrixXd Y = ar_noise({0.6, 0.2}, T, N, 4);
        Y.colwise() += X * w0;
        glm::ARCoeffs ar;
        ar.a = {0.6, 0.2};
        const auto w = glm::whiten(Y, X, ar);
        const auto fit = glm::ols_fit(w.Y, w.X);
        const Eigen::VectorXd err = fit.beta.row(0).transpose().array() - w0(0);
        const double se = std::sqrt((err.array() - err.mean()).square().sum() / (N - 1) / N);
        CHECK(std::abs(err.mean()) < 2.0 * se);
    }
    SUBCASE("true whitening passes Ljung-Box") {
        const std::size_t T = 400, N = 1000;
        const auto E = ar_noise({0.5, 0.2, 0.1, 0.05}, T, N, 10);
        glm::ARCoeffs ar;
        ar.a = {0.5, 0.2, 0.1, 0.05};
        const auto w = glm::whiten(E, Eigen::MatrixXd::Ones(T, 1), ar);
        std::size_t ok = 0;
        for (Eigen::Index n = 0; n < w.Y.cols(); ++n) {
            const Eigen::VectorXd c = w.Y.col(n);
            if (glm::ljung_box(std::vector<double>(c.data(), c.data() + c.size()), 10).p_value >= 0.05) ++ok;
        }
        CHECK(ok >= 940);
    }
    glm::ARCoeffs bad;
    bad.a = {1.2};
    CHECK_THROWS_AS(glm::whiten(Eigen::MatrixXd::Ones(10, 1), Eigen::MatrixXd::Ones(10, 1), bad), ValidationError);
}

TEST_CASE("ReML covariance dictionary") {
    SUBCASE("identity only: closed form") {
        const std::size_t T = 120;
        const auto X = random_design(T, 3, 2);
        const auto Y = ar_noise({0.3}, T, 20, 3);
        const auto d = glm::reml_cov_dictionary(Y, X, glm::dictionary_from_decays(0.589, {}, true));
        const auto fit = glm::ols_fit(Y, X);
        CHECK(d.weights[0] == doctest::Approx(fit.sigma2.mean()).epsilon(1e-6));
    }
    SUBCASE("white data: identity weight carries the variance") {
        const std::size_t T = 2000;
        const auto X = random_design(T, 2, 4);
        const Eigen::MatrixXd Y = 2.0 * ar_noise({}, T, 1000, 5);
        const auto d = glm::reml_cov_dictionary(Y, X, glm::default_dictionary(0.589));
        REQUIRE(d.weights.size() == 4);
        double total = 0.0;
        for (double w : d.weights) total += w;
        CHECK(total == doctest::Approx(4.0).epsilon(0.05));
        for (std::size_t j = 1; j < 4; ++j) CHECK(std::abs(d.weights[j]) < 0.05 * d.weights[0]);
    }
    SUBCASE("AR(1)-like data: fitted lag-1 ratio") {
        const std::size_t T = 600;
        const auto X = random_design(T, 2, 6);
        const auto Y = ar_noise({0.5}, T, 100, 7);
        const auto d = glm::reml_cov_dictionary(Y, X, glm::default_dictionary(0.589));
        const auto V = d.covariance(T);
        const double fitted = V(300, 301) / V(300, 300);
        const auto g = glm::pooled_autocov(glm::ols_fit(Y, X).residuals, 1);
        CHECK(std::abs(fitted - g[1]) < 0.05);
        const Eigen::MatrixXd W = glm::inverse_sqrt(V);
        CHECK((W * V * W - Eigen::MatrixXd::Identity(T, T)).cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("non-convergence carries the trace") {
        const auto X = random_design(200, 2, 6);
        const auto Y = ar_noise({0.5}, 200, 10, 7);
        glm::RemlOptions opt;
        opt.max_iterations = 1;
        opt.tolerance = 1e-300;
        try {
            glm::reml_cov_dictionary(Y, X, glm::default_dictionary(0.589), opt);
            FAIL("expected NumericalError");
        } catch (const NumericalError& e) {
            CHECK(std::string(e.what()).find("iteration") != std::string::npos);
        }
    }
}

TEST_CASE("t and F inference") {
    SUBCASE("zero contrast and zero-variance voxels") {
        const auto X = random_design(40, 2, 1);
        Eigen::MatrixXd Y = ar_noise({}, 40, 3, 2);
        Y.col(1) = X.col(1) * 5.0;
        Eigen::MatrixXd c = Eigen::MatrixXd::Zero(1, 2);
        const auto s = glm::glm_inference(Y, X, c);
        CHECK(s.stat(0) == 0.0);
        CHECK(std::isnan(s.stat(1)));
        CHECK(s.missing == 1);
        CHECK(s.dof2 == 38.0);
    }
    SUBCASE("null FPR and power") {
        const std::size_t T = 100, N = 100000;
        const auto X = random_design(T, 2, 11);
        Eigen::MatrixXd c(1, 2);
        c << 1.0, 0.0;
        Eigen::MatrixXd Y = ar_noise({}, T, N, 12);
        const auto s = glm::glm_inference(Y, X, c);
        std::size_t pos = 0;
        for (Eigen::Index n = 0; n < s.p.size(); ++n) pos += s.p(n) < 0.05;
        const double fpr = static_cast<double>(pos) / N;
        CHECK(fpr >= 0.045);
        CHECK(fpr <= 0.055);

        // Effect sized so that the expected t is 5.
        const Eigen::MatrixXd XtXi = (X.transpose() * X).inverse();
        const double beta = 5.0 * std::sqrt(XtXi(0, 0));
        Eigen::MatrixXd Y1 = Y.leftCols(1000);
        Y1.colwise() += beta * X.col(0);
        const auto s1 = glm::glm_inference(Y1, X, c);
        std::size_t hits = 0;
        for (Eigen::Index n = 0; n < s1.p.size(); ++n) hits += s1.p(n) < 0.05;
        CHECK(hits > 990);
    }
    SUBCASE("F is scale invariant") {
        const auto X = random_design(80, 4, 3);
        const auto Y = ar_noise({0.2}, 80, 20, 4);
        Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 4);
        c(0, 0) = 1.0;
        c(1, 1) = 1.0;
        const auto a = glm::glm_inference(Y, X, c);
        const auto b = glm::glm_inference(Y * 317.0, X, c);
        CHECK(a.kind == glm::StatMap::Kind::F);
        for (Eigen::Index n = 0; n < a.stat.size(); ++n) CHECK(b.stat(n) == doctest::Approx(a.stat(n)).epsilon(1e-8));
    }
    SUBCASE("under-whitening inflates the FPR") {
        const std::size_t T = 581, N = 4000;
        Eigen::MatrixXd X(T, 2);
        for (std::size_t t = 0; t < T; ++t) X(t, 0) = std::sin(2.0 * M_PI * t * 0.589 / 36.0);
        X.col(1).setOnes();
        Eigen::MatrixXd c(1, 2);
        c << 1.0, 0.0;
        const auto Y = ar_noise({0.5, 0.2, 0.1, 0.05}, T, N, 13);
        const auto ar = glm::ar1_pooled_approx(glm::pooled_autocov(glm::ols_fit(Y, X).residuals, 1));
        const auto w = glm::whiten(Y, X, ar);
        const auto s = glm::glm_inference(w.Y, w.X, c);
        std::size_t pos = 0;
        for (Eigen::Index n = 0; n < s.p.size(); ++n) pos += s.p(n) < 0.05;
        CHECK(static_cast<double>(pos) / N > 0.06);
    }
    CHECK_THROWS_AS(glm::glm_inference(Eigen::MatrixXd::Ones(10, 1), Eigen::MatrixXd::Ones(10, 1),
                                       Eigen::MatrixXd::Ones(1, 2)),
                    ValidationError);
}

TEST_CASE("Ljung-Box") {
    const auto E = ar_noise({}, 500, 1, 1);
    const auto A = ar_noise({0.6}, 500, 1, 1);
    const auto lw = glm::ljung_box(std::vector<double>(E.data(), E.data() + 500), 10);
    const auto la = glm::ljung_box(std::vector<double>(A.data(), A.data() + 500), 10);
    CHECK(lw.lags == 10);
    CHECK(la.p_value < 1e-6);
    CHECK(la.statistic > lw.statistic);
}
