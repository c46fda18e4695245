#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "opq/autodiff.hpp"
#include "opq/rng.hpp"

namespace opq {

// Ordered, named registry of trainable leaves. Order is creation order and is
// the serialization order; lookup by name is for checkpoint loading.
template <class S>
struct ParamSetT {
    std::vector<std::string> names;
    std::vector<VarT<S>> vars;
    std::unordered_map<std::string, size_t> by_name;

    VarT<S> add(const std::string& name, TensorT<S> init) {
        check(!by_name.count(name), "param '" + name + "' registered twice");
        VarT<S> v = make_leaf<S>(std::move(init), true);
        by_name[name] = names.size();
        names.push_back(name);
        vars.push_back(v);
        return v;
    }
    bool has(const std::string& name) const { return by_name.count(name) != 0; }
    VarT<S> get(const std::string& name) const {
        auto it = by_name.find(name);
        check(it != by_name.end(), "param '" + name + "' not found");
        return vars[it->second];
    }
    size_t size() const { return vars.size(); }
    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& v : vars) n += v.val().numel();
        return n;
    }
    void zero_grads() {
        for (auto& v : vars) v.node()->zero_grad();
    }
};

using ParamSet = ParamSetT<float>;

// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
// Value snapshots for rollback on diverged training steps.
template <class S>
std::vector<std::vector<S>> snapshot_params(const ParamSetT<S>& ps) {
    std::vector<std::vector<S>> out;
    out.reserve(ps.vars.size());
    for (const auto& v : ps.vars) out.push_back(v.val().data);
    return out;
}

template <class S>
void restore_params(ParamSetT<S>& ps, const std::vector<std::vector<S>>& vals) {
    check(vals.size() == ps.vars.size(), "restore_params: snapshot size mismatch");
    for (size_t i = 0; i < ps.vars.size(); ++i) ps.vars[i].val().data = vals[i];
}

template <class S>
bool params_finite(const ParamSetT<S>& ps) {
    for (const auto& v : ps.vars) {
        long double acc = 0;
        for (S x : v.val().data) acc += std::fabs(static_cast<long double>(x));
        if (!std::isfinite(static_cast<double>(acc))) return false;
    }
    return true;
}

template <class S>
TensorT<S> fan_in_uniform(const std::vector<int>& shape, int fan_in, Rng& rng) {
    check(fan_in > 0, "fan_in_uniform: fan_in must be positive");
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    TensorT<S> t(shape);
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
    return t;
}

template <class S>
struct Conv2dT {
    VarT<S> w, b;
    int pad = 0;
    VarT<S> fwd(VarT<S> x) const { return conv2d(x, w, b, pad); }
};

template <class S>
Conv2dT<S> make_conv2d(ParamSetT<S>& ps, const std::string& prefix, int cin, int cout, int k,
                       int pad, Rng& rng, bool zero_init = false) {
    Conv2dT<S> c;
    c.pad = pad;
    if (zero_init) {
        c.w = ps.add(prefix + ".w", TensorT<S>({cout, cin, k, k}, S(0)));
        c.b = ps.add(prefix + ".b", TensorT<S>({cout}, S(0)));
    } else {
        int fan_in = cin * k * k;
        c.w = ps.add(prefix + ".w", fan_in_uniform<S>({cout, cin, k, k}, fan_in, rng));
        c.b = ps.add(prefix + ".b", fan_in_uniform<S>({cout}, fan_in, rng));
    }
    return c;
}

template <class S>
struct GroupNormT {
    VarT<S> gamma, beta;
    int groups = 1;
    VarT<S> fwd(VarT<S> x) const { return group_norm(x, groups, gamma, beta); }
};

template <class S>
GroupNormT<S> make_group_norm(ParamSetT<S>& ps, const std::string& prefix, int channels,
                              int groups) {
    GroupNormT<S> g;
    g.groups = groups;
    g.gamma = ps.add(prefix + ".gamma", TensorT<S>({channels}, S(1)));
    g.beta = ps.add(prefix + ".beta", TensorT<S>({channels}, S(0)));
    return g;
}

template <class S>
struct LinearT {
    VarT<S> w, b;
    VarT<S> fwd(VarT<S> x) const { return linear(x, w, b); }
};

template <class S>
LinearT<S> make_linear(ParamSetT<S>& ps, const std::string& prefix, int nin, int nout, Rng& rng,
                       bool zero_init = false) {
    LinearT<S> l;
    if (zero_init) {
        l.w = ps.add(prefix + ".w", TensorT<S>({nout, nin}, S(0)));
        l.b = ps.add(prefix + ".b", TensorT<S>({nout}, S(0)));
    } else {
        l.w = ps.add(prefix + ".w", fan_in_uniform<S>({nout, nin}, nin, rng));
        l.b = ps.add(prefix + ".b", fan_in_uniform<S>({nout}, nin, rng));
    }
    return l;
}

template <class S>
struct LayerNormVecT {
    VarT<S> gamma, beta;
    VarT<S> fwd(VarT<S> x) const { return layer_norm_vec(x, gamma, beta); }
};

template <class S>
LayerNormVecT<S> make_layer_norm_vec(ParamSetT<S>& ps, const std::string& prefix, int n) {
    LayerNormVecT<S> l;
    l.gamma = ps.add(prefix + ".gamma", TensorT<S>({n}, S(1)));
    l.beta = ps.add(prefix + ".beta", TensorT<S>({n}, S(0)));
    return l;
}

}  // namespace opq
