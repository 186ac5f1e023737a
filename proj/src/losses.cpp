#include "hr3d/losses.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "hr3d/common.hpp"
#include "hr3d/simd.hpp"

namespace hr3d {

namespace {

template <typename T>
void require_congruent(const TensorT<T>& scores, const LabelVolume& truth) {
    const Shape& s = scores.shape();
    if (s.rank() != 4) throw DataError("loss: scores must be (C,D,H,W), got " + s.str());
    const Shape& l = truth.labels.shape();
    if (s[1] != l[0] || s[2] != l[1] || s[3] != l[2]) {
        throw DataError("loss: scores " + s.str() + " and labels " + l.str() + " disagree spatially");
    }
    if (s[0] != truth.num_classes) {
        throw DataError("loss: scores have " + std::to_string(s[0]) + " channels but labels expect " +
                        std::to_string(truth.num_classes) + " classes");
    }
}

}  // namespace

template <typename T>
typename GraphT<T>::NodeId op_cross_entropy(GraphT<T>& g, typename GraphT<T>::NodeId scores,
                                            const LabelVolume& truth) {
    const TensorT<T>& p = g.value(scores);
    require_congruent(p, truth);
    const std::int64_t c = p.shape()[0];
    const std::int64_t n = p.numel() / c;
    const T floor = static_cast<T>(kLogFloor);

    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    for (std::int64_t v = 0; v < n; ++v) {
        const T pv = p[truth.labels[v] * n + v];
        acc[v & 7] -= std::log(pv > floor ? pv : floor);
    }
    TensorT<T> out(Shape(std::vector<std::int64_t>{}));
    out[0] = (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) /
             static_cast<T>(n);
    check_finite_span(out.data(), 1, "cross_entropy");

    const bool ng = g.needs_grad(scores);
    auto labels = std::make_shared<TensorI>(truth.labels);
    auto id = g.push(std::move(out), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, scores, id, labels, n, floor] {
            const T gy = g.grad(id)[0];
            const TensorT<T>& pv = g.value(scores);
            TensorT<T> gp(pv.shape());
            const T scale = -gy / static_cast<T>(n);
            for (std::int64_t v = 0; v < n; ++v) {
                const std::int64_t at = (*labels)[v] * n + v;
                if (pv[at] > floor) gp[at] = scale / pv[at];
            }
            g.accumulate_grad(scores, gp);
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_dice_loss(GraphT<T>& g, typename GraphT<T>::NodeId scores,
                                        const LabelVolume& truth, DiceMode mode) {
    const TensorT<T>& p = g.value(scores);
    require_congruent(p, truth);
    const std::int64_t c = p.shape()[0];
    const std::int64_t n = p.numel() / c;
    const T eps = mode == DiceMode::kSmooth ? static_cast<T>(kDiceSmoothEps) : T(0);

    std::vector<std::int64_t> count(static_cast<std::size_t>(c), 0);
    for (std::int64_t v = 0; v < n; ++v) ++count[static_cast<std::size_t>(truth.labels[v])];

    // Per class: overlap sum Σ δ(y=c)·p, squared-score sum Σ p².
    std::vector<T> overlap(static_cast<std::size_t>(c)), denom(static_cast<std::size_t>(c));
    std::vector<T> dice(static_cast<std::size_t>(c), T(0));
    std::vector<bool> active(static_cast<std::size_t>(c));
    std::int64_t n_active = 0;
    T dice_sum = T(0);
    for (std::int64_t ci = 0; ci < c; ++ci) {
        const T* plane = p.data() + ci * n;
        T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
        for (std::int64_t v = 0; v < n; ++v) {
            if (truth.labels[v] == ci) acc[v & 7] += plane[v];
        }
        overlap[static_cast<std::size_t>(ci)] =
            ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
        denom[static_cast<std::size_t>(ci)] =
            sumsq_blocked(plane, n) + static_cast<T>(count[static_cast<std::size_t>(ci)]) + eps;
        const bool on = mode == DiceMode::kSmooth || count[static_cast<std::size_t>(ci)] > 0;
        active[static_cast<std::size_t>(ci)] = on;
        if (on) {
            dice[static_cast<std::size_t>(ci)] =
                (T(2) * overlap[static_cast<std::size_t>(ci)] + eps) / denom[static_cast<std::size_t>(ci)];
            dice_sum += dice[static_cast<std::size_t>(ci)];
            ++n_active;
        }
    }
    if (n_active == 0) throw DataError("dice loss: no active classes");

    TensorT<T> out(Shape(std::vector<std::int64_t>{}));
    out[0] = T(1) - dice_sum / static_cast<T>(n_active);
    check_finite_span(out.data(), 1, "dice_loss");

    const bool ng = g.needs_grad(scores);
    auto labels = std::make_shared<TensorI>(truth.labels);
    auto dice_v = std::make_shared<std::vector<T>>(std::move(dice));
    auto denom_v = std::make_shared<std::vector<T>>(std::move(denom));
    auto active_v = std::make_shared<std::vector<bool>>(std::move(active));
    auto id = g.push(std::move(out), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, scores, id, labels, dice_v, denom_v, active_v, c, n, n_active] {
            const T gy = g.grad(id)[0];
            const TensorT<T>& pv = g.value(scores);
            TensorT<T> gp(pv.shape());
            const T outer = -gy / static_cast<T>(n_active);
            for (std::int64_t ci = 0; ci < c; ++ci) {
                if (!(*active_v)[static_cast<std::size_t>(ci)]) continue;
                const T d = (*dice_v)[static_cast<std::size_t>(ci)];
                const T inv_den = T(2) / (*denom_v)[static_cast<std::size_t>(ci)];
                const T* plane = pv.data() + ci * n;
                T* dst = gp.data() + ci * n;
                for (std::int64_t v = 0; v < n; ++v) {
                    const T delta = (*labels)[v] == ci ? T(1) : T(0);
                    dst[v] = outer * inv_den * (delta - d * plane[v]);
                }
            }
            g.accumulate_grad(scores, gp);
        });
    }
    return id;
}

double dcs_metric(const LabelVolume& pred, const LabelVolume& truth, std::int64_t cls) {
    if (pred.labels.shape() != truth.labels.shape()) {
        throw DataError("dcs: label volumes " + pred.labels.shape().str() + " and " +
                        truth.labels.shape().str() + " differ");
    }
    std::int64_t np = 0, nt = 0, ni = 0;
    for (std::int64_t v = 0; v < pred.labels.numel(); ++v) {
        const bool ip = pred.labels[v] == cls;
        const bool it = truth.labels[v] == cls;
        np += ip;
        nt += it;
        ni += (ip && it);
    }
    if (np + nt == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(np + nt);
}

double mean_dcs(const LabelVolume& pred, const LabelVolume& truth) {
    std::vector<bool> present(static_cast<std::size_t>(truth.num_classes), false);
    for (std::int64_t v = 0; v < truth.labels.numel(); ++v) {
        present[static_cast<std::size_t>(truth.labels[v])] = true;
    }
    double sum = 0;
    std::int64_t n = 0;
    for (std::int64_t cls = 0; cls < truth.num_classes; ++cls) {
        if (!present[static_cast<std::size_t>(cls)]) continue;
        sum += dcs_metric(pred, truth, cls);
        ++n;
    }
    return sum / static_cast<double>(n);
}

#define HR3D_INSTANTIATE_LOSSES(T)                                                               \
    template GraphT<T>::NodeId op_cross_entropy(GraphT<T>&, GraphT<T>::NodeId,                   \
                                                const LabelVolume&);                             \
    template GraphT<T>::NodeId op_dice_loss(GraphT<T>&, GraphT<T>::NodeId, const LabelVolume&,   \
                                            DiceMode);

HR3D_INSTANTIATE_LOSSES(float)
HR3D_INSTANTIATE_LOSSES(double)

#undef HR3D_INSTANTIATE_LOSSES

}  // namespace hr3d
