#include "opq/schedule.hpp"

#include <cmath>

#include "opq/common.hpp"

namespace opq {

double ScheduleTable::at(const std::vector<double>& v, int t) const {
    check(t >= 1 && t <= T, "schedule: timestep " + std::to_string(t) + " outside 1.." +
                                std::to_string(T));
    return v[static_cast<size_t>(t - 1)];
}

ScheduleTable build_schedule(int T, double beta_min, double beta_max) {
    check(T >= 2, "build_schedule: T must be >= 2");
    check(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0,
          "build_schedule: need 0 < beta_min <= beta_max < 1");
    ScheduleTable tab;
    tab.T = T;
    tab.beta.resize(T);
    tab.alpha_bar.resize(T);
    tab.a.resize(T);
    tab.sigma.resize(T);
    tab.lam.resize(T);
    double u0 = std::sqrt(beta_min);
    double u1 = std::sqrt(beta_max);
    double cum = 1.0;
    for (int t = 1; t <= T; ++t) {
        double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
        double u = u0 + frac * (u1 - u0);
        double b = u * u;
        cum *= 1.0 - b;
        int i = t - 1;
        tab.beta[i] = b;
        tab.alpha_bar[i] = cum;
        tab.a[i] = std::sqrt(cum);
        tab.sigma[i] = std::sqrt(1.0 - cum);
        tab.lam[i] = std::log(tab.a[i] / tab.sigma[i]);
    }
    return tab;
}

double half_log_snr(const ScheduleTable& table, int t) { return table.lam_at(t); }

}  // namespace opq
