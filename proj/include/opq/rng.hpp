#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "opq/common.hpp"

namespace opq {

// mt19937_64 engine with hand-pinned output transforms. The standard pins the
// engine sequence exactly; the distribution transforms are pinned here so that
// every draw is reproducible from the seed alone, independent of the standard
// library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    // uniform in [0, 1)
    double u01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * u01(); }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        check(hi >= lo, "uniform_int: empty range");
        uint64_t n = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t v = static_cast<uint64_t>(u01() * static_cast<double>(n));
        if (v >= n) v = n - 1;
        return lo + static_cast<int>(v);
    }

    // standard normal via Box-Muller, second value cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = u01(), u2 = u01();
        double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), u1 < 1
        double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    float normalf() { return static_cast<float>(normal()); }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace opq
