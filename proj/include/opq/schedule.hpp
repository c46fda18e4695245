#pragma once

#include <vector>

#include "opq/tensor.hpp"

namespace opq {

// Precomputed noise-schedule table. All quantities double precision; timestep
// arguments are 1-based (t in 1..T).
struct ScheduleTable {
    int T = 0;
    std::vector<double> beta;       // per-step variance
    std::vector<double> alpha_bar;  // cumulative retention
    std::vector<double> a;          // sqrt(alpha_bar)
    std::vector<double> sigma;      // sqrt(1 - alpha_bar)
    std::vector<double> lam;        // ln(a/sigma), half-log-SNR

    double beta_at(int t) const { return at(beta, t); }
    double alpha_bar_at(int t) const { return at(alpha_bar, t); }
    double a_at(int t) const { return at(a, t); }
    double sigma_at(int t) const { return at(sigma, t); }
    double lam_at(int t) const { return at(lam, t); }

  private:
    double at(const std::vector<double>& v, int t) const;
};

// beta_t interpolates linearly in sqrt space:
// beta_t = (sqrt(beta_min) + (t-1)/(T-1) * (sqrt(beta_max) - sqrt(beta_min)))^2
ScheduleTable build_schedule(int T = 1000, double beta_min = 8.5e-4, double beta_max = 1.2e-2);

double half_log_snr(const ScheduleTable& table, int t);

// z_t = a[t] * z0 + sigma[t] * eps
template <class S>
TensorT<S> forward_diffuse(const TensorT<S>& z0, int t, const TensorT<S>& eps,
                           const ScheduleTable& table) {
    check(z0.same_shape(eps), "forward_diffuse: eps shape " + shape_str(eps) +
                                  " != z0 shape " + shape_str(z0));
    S a = static_cast<S>(table.a_at(t));
    S sig = static_cast<S>(table.sigma_at(t));
    TensorT<S> z = z0;
    for (size_t i = 0; i < z.numel(); ++i) z.data[i] = a * z0.data[i] + sig * eps.data[i];
    return z;
}

}  // namespace opq
