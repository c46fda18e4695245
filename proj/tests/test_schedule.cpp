#include <doctest.h>

#include <cmath>

#include "opq/rng.hpp"
#include "opq/schedule.hpp"

using namespace opq;

TEST_CASE("schedule endpoints are bit-accurate") {
    auto tab = build_schedule();
    CHECK(tab.T == 1000);
    CHECK(tab.beta_at(1) == 8.5e-4);
    CHECK(tab.beta_at(1000) == 1.2e-2);
    CHECK(std::fabs(tab.beta_at(500) - 4.804e-3) < 1e-6);
    // long-double re-evaluation of the sqrt-space interpolation at t=500
    long double u0 = std::sqrt(static_cast<long double>(8.5e-4));
    long double u1 = std::sqrt(static_cast<long double>(1.2e-2));
    long double u = u0 + (499.0L / 999.0L) * (u1 - u0);
    CHECK(std::fabs(tab.beta_at(500) - static_cast<double>(u * u)) < 1e-15);
}

TEST_CASE("schedule invariants") {
    auto tab = build_schedule();
    for (int t = 1; t <= tab.T; ++t) {
        CHECK(tab.beta_at(t) > 0.0);
        CHECK(tab.beta_at(t) < 1.0);
        double a = tab.a_at(t), s = tab.sigma_at(t);
        CHECK(std::fabs(a * a + s * s - 1.0) < 1e-12);
        if (t > 1) {
            CHECK(tab.alpha_bar_at(t) < tab.alpha_bar_at(t - 1));
            CHECK(tab.lam_at(t) < tab.lam_at(t - 1));
        }
    }
    CHECK(half_log_snr(tab, 1) == tab.lam_at(1));
    CHECK(std::fabs(tab.lam_at(1) - 3.535) < 5e-4);
    // lam from alpha_bar directly: lam = 0.5 ln(abar / (1 - abar))
    for (int t : {1, 250, 500, 750, 1000}) {
        double ab = tab.alpha_bar_at(t);
        CHECK(tab.lam_at(t) == doctest::Approx(0.5 * std::log(ab / (1.0 - ab))).epsilon(1e-10));
    }
}

TEST_CASE("schedule rejects bad configuration and timesteps") {
    CHECK_THROWS(build_schedule(1, 1e-4, 1e-2));
    CHECK_THROWS(build_schedule(100, 0.0, 1e-2));
    CHECK_THROWS(build_schedule(100, 1e-2, 1e-4));
    CHECK_THROWS(build_schedule(100, 1e-4, 1.0));
    auto tab = build_schedule(100, 1e-4, 1e-2);
    CHECK_THROWS(tab.beta_at(0));
    CHECK_THROWS(tab.beta_at(101));
    TensorT<double> z({2}, 1.0), e({2}, 0.0);
    CHECK_THROWS(forward_diffuse(z, 0, e, tab));
    CHECK_THROWS(forward_diffuse(z, 101, e, tab));
    CHECK_THROWS(forward_diffuse(z, 5, TensorT<double>({3}, 0.0), tab));
}

TEST_CASE("degenerate constant-beta schedule") {
    auto tab = build_schedule(10, 5e-3, 5e-3);
    for (int t = 1; t <= 10; ++t) CHECK(tab.beta_at(t) == doctest::Approx(5e-3).epsilon(1e-14));
}

TEST_CASE("forward_diffuse branches and affinity") {
    auto tab = build_schedule();
    Rng rng(21);
    auto z0 = TensorT<double>::random_uniform({3, 4, 4}, rng, -2.0, 2.0);
    auto zero = TensorT<double>({3, 4, 4}, 0.0);
    int t = 600;
    auto noiseless = forward_diffuse(z0, t, zero, tab);
    for (size_t i = 0; i < z0.numel(); ++i)
        CHECK(noiseless.data[i] == tab.a_at(t) * z0.data[i]);
    auto eps = TensorT<double>::random_normal({3, 4, 4}, rng);
    auto pure = forward_diffuse(zero, t, eps, tab);
    for (size_t i = 0; i < eps.numel(); ++i) CHECK(pure.data[i] == tab.sigma_at(t) * eps.data[i]);

    // superposition in both arguments
    auto z1 = TensorT<double>::random_uniform({3, 4, 4}, rng, -1.0, 1.0);
    auto e1 = TensorT<double>::random_normal({3, 4, 4}, rng);
    double al = 0.3, be = -1.7;
    TensorT<double> zc({3, 4, 4}), ec({3, 4, 4});
    for (size_t i = 0; i < zc.numel(); ++i) {
        zc.data[i] = al * z0.data[i] + be * z1.data[i];
        ec.data[i] = al * eps.data[i] + be * e1.data[i];
    }
    auto lhs = forward_diffuse(zc, t, ec, tab);
    auto r0 = forward_diffuse(z0, t, eps, tab);
    auto r1 = forward_diffuse(z1, t, e1, tab);
    for (size_t i = 0; i < lhs.numel(); ++i)
        CHECK(std::fabs(lhs.data[i] - (al * r0.data[i] + be * r1.data[i])) < 1e-12);
}

TEST_CASE("forward_diffuse matches its sampling statistics") {
    auto tab = build_schedule();
    const int t = 500, draws = 100000;
    const int n = 64;
    TensorT<double> z0({n}, 1.3);
    Rng rng(22);
    double s1 = 0, s2 = 0;
    for (int d = 0; d < draws; ++d) {
        auto eps = TensorT<double>::random_normal({n}, rng);
        auto zt = forward_diffuse(z0, t, eps, tab);
        for (int i = 0; i < n; ++i) {
            s1 += zt.data[i];
            s2 += zt.data[i] * zt.data[i];
        }
    }
    double cnt = static_cast<double>(draws) * n;
    double mean = s1 / cnt;
    double var = s2 / cnt - mean * mean;
    CHECK(std::fabs(mean / (tab.a_at(t) * 1.3) - 1.0) < 0.01);
    CHECK(std::fabs(var / (1.0 - tab.alpha_bar_at(t)) - 1.0) < 0.01);
}
