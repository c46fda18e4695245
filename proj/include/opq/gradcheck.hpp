#pragma once

#include <cmath>
#include <string>

#include "opq/nn.hpp"

namespace opq {

struct GradCheckReport {
    double max_rel = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
    double analytic = 0.0;
    double fd = 0.0;
};

// Central finite-difference check over every scalar of every registered
// parameter, double precision. loss_fn must rebuild the graph from the current
// parameter values and return a scalar Var. Parameters are restored exactly.
template <class LossFn>
GradCheckReport grad_check(ParamSetT<double>& ps, LossFn loss_fn, double h = 1e-6) {
    ps.zero_grads();
    VarT<double> root = loss_fn();
    check(root.val().numel() == 1, "grad_check: loss must be scalar");
    backward(root, 1.0);

    std::vector<std::vector<double>> analytic;
    for (auto& v : ps.vars) {
        v.node()->ensure_grad();
        analytic.push_back(v.node()->grad.data);
    }

    GradCheckReport rep;
    for (size_t pi = 0; pi < ps.vars.size(); ++pi) {
        auto& val = ps.vars[pi].node()->val;
        for (size_t i = 0; i < val.numel(); ++i) {
            double saved = val.data[i];
            val.data[i] = saved + h;
            double lp = loss_fn().val().data[0];
            val.data[i] = saved - h;
            double lm = loss_fn().val().data[0];
            val.data[i] = saved;
            double fd = (lp - lm) / (2.0 * h);
            double a = analytic[pi][i];
            // the additive floor keeps finite-difference roundoff (~1e-10 at
            // h=1e-6) from registering as 100% error on near-zero gradients
            double rel = std::fabs(a - fd) / (std::max(std::fabs(a), std::fabs(fd)) + 1e-2);
            if (rel > rep.max_rel) {
                rep.max_rel = rel;
                rep.worst_param = ps.names[pi];
                rep.worst_index = i;
                rep.analytic = a;
                rep.fd = fd;
            }
        }
    }
    return rep;
}

}  // namespace opq
