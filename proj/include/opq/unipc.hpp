#pragma once

#include <cmath>
#include <type_traits>
#include <utility>
#include <vector>

#include "opq/schedule.hpp"

namespace opq {

// Multistep predictor-corrector solver for the diffusion ODE in
// noise-prediction form. The trajectory runs t = T down to 1 along timesteps
// from make_timesteps; h_i = lam(t_i) - lam(t_{i-1}) is positive since lam
// rises as t falls.
struct SolverConfig {
    int steps = 10;
    int order = 3;  // 1..3
    enum class BVariant { exp_h, lin_h };
    BVariant b_variant = BVariant::exp_h;
    bool corrector = true;
    bool lower_order_final = true;
};

// S+1 timesteps from T down to 1, uniform in t, rounded to distinct integers.
std::vector<int> make_timesteps(int S, int T);

namespace unipc_detail {

double b_of_h(double h, SolverConfig::BVariant v);

// Coefficients a_m for history nodes at relative positions r_m: a one-element
// system pins a_1 = 1/2 (the effective-order-2 case); larger systems solve the
// Vandermonde conditions sum_m a_m r_m^(k-1) = k! h phi_{k+1}(h) / B(h).
std::vector<double> solve_node_coeffs(const std::vector<double>& rs, double h,
                                      SolverConfig::BVariant v);

}  // namespace unipc_detail

template <class S>
struct SolverNode {
    int t;
    TensorT<S> eps;
};

// One multistep update from z_prev at hist.back().t to t_cur, using the last
// `q` history nodes (q >= 1). extra_node, when present, joins the node set at
// r = 1 (the corrector's re-solve with the fresh evaluation).
template <class S>
TensorT<S> unipc_update(const TensorT<S>& z_prev, int t_cur,
                        const std::vector<SolverNode<S>>& hist, int q,
                        const std::type_identity_t<TensorT<S>>* extra_node,
                        const ScheduleTable& table, const SolverConfig& cfg) {
    check(!hist.empty(), "unipc_update: empty history");
    check(q >= 1 && q <= static_cast<int>(hist.size()), "unipc_update: bad effective order");
    int t_prev = hist.back().t;
    const TensorT<S>& eps_prev = hist.back().eps;
    double lam_prev = table.lam_at(t_prev);
    double h = table.lam_at(t_cur) - lam_prev;
    double ratio = table.a_at(t_cur) / table.a_at(t_prev);
    double sig = table.sigma_at(t_cur);
    double eh1 = std::expm1(h);

    TensorT<S> z = z_prev;
    for (size_t i = 0; i < z.numel(); ++i)
        z.data[i] = static_cast<S>(ratio * z_prev.data[i] - sig * eh1 * eps_prev.data[i]);

    std::vector<double> rs;
    std::vector<const TensorT<S>*> nodes;
    for (int m = 1; m < q; ++m) {
        const auto& node = hist[hist.size() - 1 - static_cast<size_t>(m)];
        rs.push_back((table.lam_at(node.t) - lam_prev) / h);
        nodes.push_back(&node.eps);
    }
    if (extra_node != nullptr) {
        rs.push_back(1.0);
        nodes.push_back(extra_node);
    }
    if (!rs.empty()) {
        auto coeff = unipc_detail::solve_node_coeffs(rs, h, cfg.b_variant);
        double B = unipc_detail::b_of_h(h, cfg.b_variant);
        for (size_t m = 0; m < rs.size(); ++m) {
            double w = sig * B * coeff[m] / rs[m];
            const TensorT<S>& em = *nodes[m];
            for (size_t i = 0; i < z.numel(); ++i)
                z.data[i] -= static_cast<S>(w * (em.data[i] - eps_prev.data[i]));
        }
    }
    assert_finite(z, "unipc_update");
    return z;
}

// Full trajectory. eps_fn(z, t) -> noise estimate of z's shape; any
// conditioning is pre-bound by the caller and never touched here. Denoiser
// evaluations: S predictor-only, S+1 with the corrector (its evaluation at the
// predicted point is pushed into history and reused, never repeated).
template <class S, class EpsFn>
TensorT<S> sample(EpsFn&& eps_fn, const TensorT<S>& z_init, const ScheduleTable& table,
                  const SolverConfig& cfg) {
    check(cfg.steps >= 1, "sample: steps must be >= 1");
    check(cfg.order >= 1 && cfg.order <= 3, "sample: order must be 1..3");
    auto ts = make_timesteps(cfg.steps, table.T);

    auto eval = [&](const TensorT<S>& z, int t) {
        TensorT<S> e = eps_fn(z, t);
        check(e.same_shape(z), "sample: denoiser returned shape " + shape_str(e) +
                                   " for input " + shape_str(z));
        return e;
    };

    TensorT<S> z = z_init;
    std::vector<SolverNode<S>> hist;
    hist.push_back({ts[0], eval(z, ts[0])});
    for (int i = 1; i <= cfg.steps; ++i) {
        if (hist.back().t != ts[i - 1]) hist.push_back({ts[i - 1], eval(z, ts[i - 1])});
        int q = std::min(cfg.order, static_cast<int>(hist.size()));
        if (cfg.lower_order_final && i == cfg.steps) q = 1;
        TensorT<S> z_pred = unipc_update(z, ts[i], hist, q, nullptr,
                                         table, cfg);
        if (cfg.corrector) {
            TensorT<S> eps_new = eval(z_pred, ts[i]);
            z = unipc_update(z, ts[i], hist, q, &eps_new, table, cfg);
            hist.push_back({ts[i], std::move(eps_new)});
        } else {
            z = std::move(z_pred);
        }
        while (static_cast<int>(hist.size()) > cfg.order)
            hist.erase(hist.begin());
    }
    return z;
}

// Exact posterior noise for data ~ N(mu, nu^2): eps(z,t) = sigma_t (z - a_t mu)
// / (a_t^2 nu^2 + sigma_t^2). Test harness for convergence studies.
template <class S>
auto gaussian_oracle(double mu, double nu, const ScheduleTable& table) {
    check(nu > 0.0, "gaussian_oracle: nu must be positive");
    return [mu, nu, &table](const TensorT<S>& z, int t) {
        double a = table.a_at(t), sig = table.sigma_at(t);
        double denom = a * a * nu * nu + sig * sig;
        TensorT<S> e = z;
        for (auto& v : e.data)
            v = static_cast<S>(sig * (static_cast<double>(v) - a * mu) / denom);
        return e;
    };
}

// Closed-form solution of the flow for the same Gaussian data: quantiles are
// preserved, so z(t) = a_t mu + sqrt(a_t^2 nu^2 + sigma_t^2) * c with c fixed
// by the initial condition at t = T.
template <class S>
TensorT<S> gaussian_flow_at(double mu, double nu, const TensorT<S>& z_init, int t,
                            const ScheduleTable& table) {
    double aT = table.a_at(table.T), sT = table.sigma_at(table.T);
    double stdT = std::sqrt(aT * aT * nu * nu + sT * sT);
    double at = table.a_at(t), st = table.sigma_at(t);
    double stdt = std::sqrt(at * at * nu * nu + st * st);
    TensorT<S> out = z_init;
    for (auto& v : out.data)
        v = static_cast<S>(at * mu + stdt * (static_cast<double>(v) - aT * mu) / stdT);
    return out;
}

}  // namespace opq
