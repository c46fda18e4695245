#include "opq/unipc.hpp"

#include <cmath>

#include "opq/common.hpp"

namespace opq {

std::vector<int> make_timesteps(int S, int T) {
    check(S >= 1, "make_timesteps: need at least one step");
    check(S <= T, "make_timesteps: " + std::to_string(S) + " steps exceed T = " +
                      std::to_string(T));
    std::vector<int> ts(static_cast<size_t>(S) + 1);
    for (int j = 0; j <= S; ++j) {
        double exact = static_cast<double>(T) -
                       static_cast<double>(static_cast<long long>(j) * (T - 1)) / S;
        ts[static_cast<size_t>(j)] = static_cast<int>(std::llround(exact));
    }
    for (int j = 1; j <= S; ++j) {
        auto& t = ts[static_cast<size_t>(j)];
        if (t >= ts[static_cast<size_t>(j - 1)]) t = ts[static_cast<size_t>(j - 1)] - 1;
        check(t >= 1, "make_timesteps: cannot fit " + std::to_string(S) +
                          " distinct steps into T = " + std::to_string(T));
    }
    check(ts.front() == T && ts.back() == 1, "make_timesteps: endpoint drift");
    return ts;
}

namespace unipc_detail {

double b_of_h(double h, SolverConfig::BVariant v) {
    return v == SolverConfig::BVariant::exp_h ? std::expm1(h) : h;
}

namespace {

// phi_{k+1}(h) with phi_1 = (e^h - 1)/h, phi_{j+1} = (phi_j - 1/j!)/h.
// Series fallback below |h| ~ 1e-3 where the recurrence starts cancelling.
double phi(int k1, double h) {
    if (std::fabs(h) < 1e-3) {
        double fact = 1.0;
        for (int j = 2; j <= k1; ++j) fact *= j;  // k1!
        double term = 1.0 / fact;                 // h^0 / k1!
        double acc = term;
        for (int j = 1; j <= 8; ++j) {
            term *= h / static_cast<double>(k1 + j);
            acc += term;
        }
        return acc;
    }
    double p = std::expm1(h) / h;
    double fact = 1.0;  // j! during round j
    for (int j = 1; j < k1; ++j) {
        p = (p - 1.0 / fact) / h;
        fact *= j + 1;
    }
    return p;
}

// Gaussian elimination with partial pivoting; n <= 3 here.
std::vector<double> solve_dense(std::vector<std::vector<double>> A, std::vector<double> b) {
    size_t n = b.size();
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::fabs(A[r][col]) > std::fabs(A[piv][col])) piv = r;
        std::swap(A[col], A[piv]);
        std::swap(b[col], b[piv]);
        check(std::fabs(A[col][col]) > 1e-14, "unipc: singular coefficient system");
        for (size_t r = col + 1; r < n; ++r) {
            double f = A[r][col] / A[col][col];
            for (size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (size_t ri = n; ri-- > 0;) {
        double acc = b[ri];
        for (size_t c = ri + 1; c < n; ++c) acc -= A[ri][c] * x[c];
        x[ri] = acc / A[ri][ri];
    }
    return x;
}

}  // namespace

std::vector<double> solve_node_coeffs(const std::vector<double>& rs, double h,
                                      SolverConfig::BVariant v) {
    size_t n = rs.size();
    check(n >= 1 && n <= 3, "unipc: node count must be 1..3");
    if (n == 1) return {0.5};
    double B = b_of_h(h, v);
    std::vector<std::vector<double>> A(n, std::vector<double>(n));
    std::vector<double> g(n);
    double fact = 1.0;
    for (size_t k = 1; k <= n; ++k) {
        fact *= static_cast<double>(k);  // k!
        for (size_t m = 0; m < n; ++m) A[k - 1][m] = std::pow(rs[m], static_cast<double>(k - 1));
        g[k - 1] = fact * h * phi(static_cast<int>(k) + 1, h) / B;
    }
    return solve_dense(std::move(A), std::move(g));
}

}  // namespace unipc_detail
}  // namespace opq
