#pragma once

#include <functional>
#include <vector>

#include "icl/losses.hpp"
#include "icl/model.hpp"

namespace icl::testutil {

// Micro network for finite-difference checks: well under 500 parameters.
inline NetConfig tiny_net_config(int n_classes = 4) {
    NetConfig cfg;
    cfg.n_classes = n_classes;
    cfg.input = Shape{1, 4, 4};
    cfg.base_channels = 2;
    cfg.n_stages = 2;
    cfg.blocks_per_stage = 1;
    cfg.partition_block = -1;
    cfg.label_embed = true;
    return cfg;
}

inline LabelConditionedNet make_tiny_net(std::uint64_t seed = 11, int n_classes = 4) {
    Rng rng = Rng::seeded(seed, 1);
    LabelConditionedNet net(tiny_net_config(n_classes), rng);
    // Jitter the (zero-initialized) biases: with exact-zero biases a ReLU
    // pre-activation can land bitwise on the kink, where central differences
    // straddle the subgradient and any finite-difference check misreports.
    for (auto& p : net.params())
        if (p.name.ends_with(".b"))
            for (auto& w : *p.w) w += rng.normal(0.0, 0.05);
    return net;
}

inline Batch random_batch(int n, Shape shape, int n_classes, std::uint64_t seed) {
    Rng rng = Rng::seeded(seed, 2);
    Batch b;
    b.x.resize(n, shape.c, shape.h, shape.w);
    for (auto& v : b.x.v) v = rng.normal(0.0, 0.6);
    b.labels.resize(n);
    for (auto& y : b.labels) y = static_cast<int>(rng.uniform_int(0, n_classes - 1));
    return b;
}

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_param;
};

// Central finite differences of `objective` against the gradients accumulated
// by `compute_analytic` (which must zero + fill the grad buffers itself).
inline FdReport finite_difference_check(std::vector<ParamView> params,
                                        const std::function<void()>& compute_analytic,
                                        const std::function<double()>& objective,
                                        double eps = 1e-5) {
    compute_analytic();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(*p.g);

    FdReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& w = *params[pi].w;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double orig = w[j];
            w[j] = orig + eps;
            const double lp = objective();
            w[j] = orig - eps;
            const double lm = objective();
            w[j] = orig;
            const double num = (lp - lm) / (2.0 * eps);
            const double ana = analytic[pi][j];
            const double err = std::abs(ana - num) / std::max(1e-6, std::abs(ana) + std::abs(num));
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = params[pi].name + "[" + std::to_string(j) + "]";
            }
        }
    }
    return rep;
}

}  // namespace icl::testutil
