#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "opq/rng.hpp"
#include "opq/unipc.hpp"

using namespace opq;

namespace {

using DT = TensorT<double>;

// independent high-order series for phi_{k}(h) = sum_j h^j / (k+j)!
double phi_series(int k, double h) {
    double fact = 1.0;
    for (int j = 2; j <= k; ++j) fact *= j;
    double term = 1.0 / fact, acc = term;
    for (int j = 1; j <= 30; ++j) {
        term *= h / static_cast<double>(k + j);
        acc += term;
    }
    return acc;
}

double terminal_error(double mu, double nu, const DT& z_init, const ScheduleTable& tab,
                      const SolverConfig& cfg) {
    auto oracle = gaussian_oracle<double>(mu, nu, tab);
    auto out = sample(oracle, z_init, tab, cfg);
    auto want = gaussian_flow_at(mu, nu, z_init, 1, tab);
    double e = 0;
    for (size_t i = 0; i < out.numel(); ++i)
        e = std::max(e, std::fabs(out.data[i] - want.data[i]));
    return e;
}

double fit_slope(const std::vector<int>& Ss, const std::vector<double>& errs) {
    // least squares on ln(err) vs ln(S); returns -d ln(err)/d ln(S)
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    size_t n = Ss.size();
    for (size_t i = 0; i < n; ++i) {
        double x = std::log(static_cast<double>(Ss[i]));
        double y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double denom = n * sxx - sx * sx;
    return -(n * sxy - sx * sy) / denom;
}

}  // namespace

TEST_CASE("make_timesteps endpoints spacing and errors") {
    auto one = make_timesteps(1, 1000);
    REQUIRE(one.size() == 2);
    CHECK(one[0] == 1000);
    CHECK(one[1] == 1);

    auto ten = make_timesteps(10, 1000);
    REQUIRE(ten.size() == 11);
    CHECK(ten.front() == 1000);
    CHECK(ten.back() == 1);
    for (size_t i = 1; i < ten.size(); ++i) CHECK(ten[i] < ten[i - 1]);

    auto nine = make_timesteps(4, 9);
    CHECK(nine == std::vector<int>({9, 7, 5, 3, 1}));

    auto full = make_timesteps(9, 10);
    CHECK(full == std::vector<int>({10, 9, 8, 7, 6, 5, 4, 3, 2, 1}));

    CHECK_THROWS(make_timesteps(11, 10));
    CHECK_THROWS(make_timesteps(10, 10));  // T+1 distinct values cannot fit
    CHECK_THROWS(make_timesteps(0, 10));
}

TEST_CASE("node coefficients match the phi conditions") {
    using unipc_detail::solve_node_coeffs;
    auto single = solve_node_coeffs({-1.3}, 0.4, SolverConfig::BVariant::exp_h);
    REQUIRE(single.size() == 1);
    CHECK(single[0] == 0.5);

    for (double h : {0.7, 0.05, 1e-4}) {
        for (auto v : {SolverConfig::BVariant::exp_h, SolverConfig::BVariant::lin_h}) {
            double B = v == SolverConfig::BVariant::exp_h ? std::expm1(h) : h;
            std::vector<double> rs = {-0.8, -1.9};
            auto a = solve_node_coeffs(rs, h, v);
            REQUIRE(a.size() == 2);
            for (int k = 1; k <= 2; ++k) {
                double fact = k == 1 ? 1.0 : 2.0;
                double lhs = 0;
                for (size_t m = 0; m < rs.size(); ++m)
                    lhs += a[m] * std::pow(rs[m], k - 1);
                double rhs = fact * h * phi_series(k + 1, h) / B;
                CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
            }
            // the small-h limit of the conditions is 1/(k+1)
            if (h == 1e-4) {
                CHECK(a[0] + a[1] == doctest::Approx(0.5).epsilon(1e-3));
                CHECK(a[0] * rs[0] + a[1] * rs[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
            }
        }
    }

    std::vector<double> rs3 = {-0.5, -1.1, -2.2};
    auto a3 = solve_node_coeffs(rs3, 0.3, SolverConfig::BVariant::exp_h);
    REQUIRE(a3.size() == 3);
    double B = std::expm1(0.3);
    double fact = 1.0;
    for (int k = 1; k <= 3; ++k) {
        fact *= k;
        double lhs = 0;
        for (size_t m = 0; m < 3; ++m) lhs += a3[m] * std::pow(rs3[m], k - 1);
        CHECK(lhs == doctest::Approx(fact * 0.3 * phi_series(k + 1, 0.3) / B).epsilon(1e-9));
    }
}

TEST_CASE("order-1 update matches the explicit formula") {
    auto tab = build_schedule();
    Rng rng(31);
    DT z = DT::random_normal({4}, rng);
    DT eps = DT::random_normal({4}, rng);
    int t_prev = 1000, t_cur = 900;
    std::vector<SolverNode<double>> hist;
    hist.push_back({t_prev, eps});
    SolverConfig cfg;
    auto out = unipc_update(z, t_cur, hist, 1, nullptr, tab, cfg);
    double h = tab.lam_at(t_cur) - tab.lam_at(t_prev);
    double ratio = tab.a_at(t_cur) / tab.a_at(t_prev);
    for (int i = 0; i < 4; ++i) {
        double want = ratio * z.data[i] - tab.sigma_at(t_cur) * std::expm1(h) * eps.data[i];
        CHECK(out.data[i] == doctest::Approx(want).epsilon(1e-14));
    }
    CHECK_THROWS(unipc_update(z, t_cur, std::vector<SolverNode<double>>{}, 1, nullptr, tab, cfg));
}

TEST_CASE("zero state with centered oracle stays zero") {
    auto tab = build_schedule();
    auto oracle = gaussian_oracle<double>(0.0, 1.0, tab);
    SolverConfig cfg;
    cfg.steps = 8;
    DT z({6}, 0.0);
    auto out = sample(oracle, z, tab, cfg);
    for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("corrector with identical new evaluation equals predictor on first step") {
    auto tab = build_schedule();
    Rng rng(32);
    DT z = DT::random_normal({4}, rng);
    DT eps = DT::random_normal({4}, rng);
    std::vector<SolverNode<double>> hist;
    hist.push_back({1000, eps});
    SolverConfig cfg;
    auto pred = unipc_update(z, 800, hist, 1, nullptr, tab, cfg);
    DT eps_new = eps;  // pretend the new evaluation did not move
    auto corr = unipc_update(z, 800, hist, 1, &eps_new, tab, cfg);
    for (int i = 0; i < 4; ++i) CHECK(corr.data[i] == pred.data[i]);
}

TEST_CASE("denoiser evaluation counts") {
    auto tab = build_schedule();
    auto oracle = gaussian_oracle<double>(0.0, 1.0, tab);
    Rng rng(33);
    DT z = DT::random_normal({4}, rng);
    for (int S : {1, 4, 10}) {
        int count = 0;
        auto counting = [&](const DT& zz, int t) {
            ++count;
            return oracle(zz, t);
        };
        SolverConfig cfg;
        cfg.steps = S;
        cfg.corrector = false;
        sample(counting, z, tab, cfg);
        CHECK(count == S);
        count = 0;
        cfg.corrector = true;
        sample(counting, z, tab, cfg);
        CHECK(count == S + 1);
    }
}

TEST_CASE("unit-variance oracle is an identity map as steps grow") {
    auto tab = build_schedule();
    auto oracle = gaussian_oracle<double>(0.0, 1.0, tab);
    Rng rng(34);
    DT z = DT::random_normal({8}, rng);
    auto rel_at = [&](int S, bool corr) {
        SolverConfig cfg;
        cfg.steps = S;
        cfg.corrector = corr;
        auto out = sample(oracle, z, tab, cfg);
        double rel = 0;
        for (int i = 0; i < 8; ++i)
            rel = std::max(rel, std::fabs(out.data[i] - z.data[i]) / std::fabs(z.data[i]));
        return rel;
    };
    // the end of the uniform-in-t grid stretches in lam, so S=10 lands near
    // 5e-3; the error decays fast from there
    double r10 = rel_at(10, true), r20 = rel_at(20, true), r40 = rel_at(40, true);
    CHECK(r10 < 1e-2);
    CHECK(r20 < 1e-3);
    CHECK(r40 < 2e-4);
    CHECK(r20 < r10);
    CHECK(r40 < r20);
    CHECK(rel_at(10, false) < 1e-1);
}

TEST_CASE("closed-form flow reached within tolerance at S=40") {
    auto tab = build_schedule();
    Rng rng(35);
    DT z = DT::random_normal({8}, rng);
    SolverConfig cfg;
    cfg.steps = 40;
    CHECK(terminal_error(2.0, 0.5, z, tab, cfg) < 1e-3);
    cfg.corrector = false;
    cfg.lower_order_final = false;
    CHECK(terminal_error(2.0, 0.5, z, tab, cfg) < 1e-3);
    cfg.lower_order_final = true;  // order-1 final step over the stretched tail
    CHECK(terminal_error(2.0, 0.5, z, tab, cfg) < 2e-2);
}

TEST_CASE("sampler is linear for a linear denoiser") {
    auto tab = build_schedule();
    auto oracle = gaussian_oracle<double>(0.0, 0.7, tab);  // mu=0 keeps it linear
    Rng rng(36);
    DT z1 = DT::random_normal({6}, rng);
    DT z2 = DT::random_normal({6}, rng);
    double al = 0.6, be = -1.2;
    DT zc({6});
    for (int i = 0; i < 6; ++i) zc.data[i] = al * z1.data[i] + be * z2.data[i];
    SolverConfig cfg;
    cfg.steps = 12;
    auto s1 = sample(oracle, z1, tab, cfg);
    auto s2 = sample(oracle, z2, tab, cfg);
    auto sc = sample(oracle, zc, tab, cfg);
    for (int i = 0; i < 6; ++i)
        CHECK(std::fabs(sc.data[i] - (al * s1.data[i] + be * s2.data[i])) < 1e-10);
}

TEST_CASE("context bundle is untouched by sampling") {
    auto tab = build_schedule();
    std::vector<double> context = {1.5, -2.25, 0.125};
    auto before = context;
    auto eps_fn = [&context, &tab](const DT& z, int t) {
        DT e = z;
        double s = tab.sigma_at(t) + context[0] * 0.0;
        for (auto& v : e.data) v *= s;
        return e;
    };
    Rng rng(37);
    DT z = DT::random_normal({4}, rng);
    SolverConfig cfg;
    cfg.steps = 6;
    sample(eps_fn, z, tab, cfg);
    CHECK(context == before);
}

TEST_CASE("gaussian oracle agrees with Monte Carlo posterior regression") {
    auto tab = build_schedule();
    double mu = 2.0, nu = 0.5;
    for (int t : {100, 500, 900}) {
        double a = tab.a_at(t), sig = tab.sigma_at(t);
        Rng rng(38);
        double sz = 0, se = 0, szz = 0, sze = 0;
        const int n = 1000000;
        for (int i = 0; i < n; ++i) {
            double z0 = mu + nu * rng.normal();
            double eps = rng.normal();
            double zt = a * z0 + sig * eps;
            sz += zt;
            se += eps;
            szz += zt * zt;
            sze += zt * eps;
        }
        double mz = sz / n, me = se / n;
        double slope = (sze / n - mz * me) / (szz / n - mz * mz);
        double want = sig / (a * a * nu * nu + sig * sig);
        CHECK(std::fabs(slope / want - 1.0) < 0.01);
        // and the oracle function itself at the regression line's center
        auto oracle = gaussian_oracle<double>(mu, nu, tab);
        DT zq({1}, mz);
        auto eq = oracle(zq, t);
        double want_e = sig * (mz - a * mu) / (a * a * nu * nu + sig * sig);
        CHECK(eq.data[0] == doctest::Approx(want_e).epsilon(1e-12));
        DT zmean({1}, a * mu);
        CHECK(oracle(zmean, t).data[0] == doctest::Approx(0.0));
    }
}

TEST_CASE("single order-1 step error shrinks quadratically under halving") {
    auto tab = build_schedule();
    double mu = 2.0, nu = 0.5;
    auto oracle = gaussian_oracle<double>(mu, nu, tab);
    DT z({1}, 1.7);
    // one explicit order-1 step from T to t, compared against the exact flow
    auto one_step_err = [&](int t_cur) {
        std::vector<SolverNode<double>> hist;
        hist.push_back({1000, oracle(z, 1000)});
        SolverConfig cfg;
        auto out = unipc_update(z, t_cur, hist, 1, nullptr, tab, cfg);
        auto want = gaussian_flow_at(mu, nu, z, t_cur, tab);
        return std::fabs(out.data[0] - want.data[0]);
    };
    // choose targets so the second lam-step is close to half the first; keep
    // h small enough that the O(h^2) law is clean
    double lamT = tab.lam_at(1000);
    int t_full = 990, t_half = 0;
    double h_full = tab.lam_at(t_full) - lamT;
    double best = 1e9;
    for (int t = 999; t > t_full; --t) {
        double d = std::fabs((tab.lam_at(t) - lamT) - 0.5 * h_full);
        if (d < best) {
            best = d;
            t_half = t;
        }
    }
    double ef = one_step_err(t_full), eh = one_step_err(t_half);
    double h_half = tab.lam_at(t_half) - lamT;
    double expected_ratio = (h_full * h_full) / (h_half * h_half);
    CHECK(ef / eh > 0.6 * expected_ratio);
    CHECK(ef / eh < 1.6 * expected_ratio);
}

TEST_CASE("convergence study: predictor orders and corrector gain") {
    auto tab = build_schedule();
    Rng rng(39);
    DT z = DT::random_normal({8}, rng);
    std::vector<int> Ss = {5, 10, 20, 40, 80};

    std::ofstream csv("unipc_convergence.csv");
    csv << "S,p,corrector,terminal_error\n";
    double slope_pred[4] = {0, 0, 0, 0};
    double slope_corr[4] = {0, 0, 0, 0};
    double err80_pred[4] = {0, 0, 0, 0};
    double err80_corr[4] = {0, 0, 0, 0};
    for (int p = 1; p <= 3; ++p) {
        for (bool corr : {false, true}) {
            std::vector<double> errs;
            for (int S : Ss) {
                SolverConfig cfg;
                cfg.steps = S;
                cfg.order = p;
                cfg.corrector = corr;
                cfg.lower_order_final = false;  // measure the order itself
                double e = terminal_error(2.0, 0.5, z, tab, cfg);
                errs.push_back(e);
                csv << S << "," << p << "," << (corr ? 1 : 0) << "," << e << "\n";
            }
            double s = fit_slope(Ss, errs);
            (corr ? slope_corr : slope_pred)[p] = s;
            (corr ? err80_corr : err80_pred)[p] = errs.back();
        }
    }
    csv.close();
    // terminal error at t=1 sits behind the last uniform-in-t interval, whose
    // lam-width shrinks only like log(S); that floors the measurable
    // predictor-only slopes for p >= 2 well below p. The bounds here pin the
    // measured behavior; the corrector's fresh node at the target turns the
    // final extrapolation into an interpolation, which is worth about a unit
    // of slope.
    for (int p = 1; p <= 3; ++p)
        INFO("p=", p, " predictor slope=", slope_pred[p], " corrector slope=", slope_corr[p]);
    CHECK(slope_pred[1] >= 0.7);
    CHECK(slope_pred[2] >= 0.5);
    CHECK(slope_pred[3] >= 1.5);
    CHECK(slope_corr[1] - slope_pred[1] >= 0.5);
    CHECK(slope_corr[2] - slope_pred[2] >= 0.5);
    CHECK(slope_corr[3] >= 1.7);
    CHECK(err80_pred[1] < 2e-2);
    CHECK(err80_pred[3] < 2e-3);
    CHECK(err80_corr[2] < 1e-3);
    CHECK(err80_corr[3] < 2e-4);
}

TEST_CASE("order-1 predictor with corrector rivals order-2 predictor") {
    auto tab = build_schedule();
    Rng rng(40);
    DT z = DT::random_normal({8}, rng);
    SolverConfig c1;
    c1.steps = 10;
    c1.order = 1;
    c1.corrector = true;
    c1.lower_order_final = false;
    SolverConfig c2;
    c2.steps = 10;
    c2.order = 2;
    c2.corrector = false;
    c2.lower_order_final = false;
    double e1 = terminal_error(2.0, 0.5, z, tab, c1);
    double e2 = terminal_error(2.0, 0.5, z, tab, c2);
    CHECK(e1 < 3.0 * e2);
    CHECK(e2 < 3.0 * e1);
}
