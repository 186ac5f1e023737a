#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hr3d/autodiff.hpp"

// Central finite differences in double precision against the tape's
// gradients.  make_root must be deterministic (own any rng it needs) so
// rebuilding the graph under perturbation is exact.
inline double fd_max_rel_err(
    const std::vector<hr3d::TensorD>& params,
    const std::function<hr3d::GraphD::NodeId(hr3d::GraphD&, const std::vector<hr3d::GraphD::NodeId>&)>&
        make_root,
    double step = 1e-5) {
    auto eval = [&](const std::vector<hr3d::TensorD>& ps, std::vector<hr3d::TensorD>* grads) {
        hr3d::GraphD g;
        std::vector<hr3d::GraphD::NodeId> ids;
        ids.reserve(ps.size());
        for (const auto& p : ps) ids.push_back(g.leaf(p, grads != nullptr));
        auto root = make_root(g, ids);
        const double out = g.value(root)[0];
        if (grads) {
            g.backward(root);
            for (auto id : ids) grads->push_back(g.grad(id));
        }
        return out;
    };

    std::vector<hr3d::TensorD> analytic;
    eval(params, &analytic);

    double max_err = 0;
    std::vector<hr3d::TensorD> ps = params;
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
        for (std::int64_t i = 0; i < ps[pi].numel(); ++i) {
            const double orig = ps[pi][i];
            ps[pi][i] = orig + step;
            const double fp = eval(ps, nullptr);
            ps[pi][i] = orig - step;
            const double fm = eval(ps, nullptr);
            ps[pi][i] = orig;
            const double fd = (fp - fm) / (2 * step);
            const double an = analytic[pi][i];
            const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}
