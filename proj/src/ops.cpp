#include "hr3d/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "hr3d/common.hpp"
#include "hr3d/simd.hpp"

namespace hr3d {

namespace {

template <typename T>
void require_channel_param(const TensorT<T>& p, std::int64_t c, const char* name) {
    if (p.shape().rank() != 1 || p.shape()[0] != c) {
        throw DataError(std::string(name) + " must be shaped (" + std::to_string(c) + "), got " +
                        p.shape().str());
    }
}

template <typename T>
void require_spatial(const TensorT<T>& x, const char* who) {
    if (x.shape().rank() < 2) {
        throw DataError(std::string(who) + ": input needs a channel axis plus spatial dims, got " +
                        x.shape().str());
    }
}

}  // namespace

template <typename T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                           double eps, BnStats<T>* stats_out) {
    require_spatial(x, "batchnorm");
    const std::int64_t c = x.shape()[0];
    const std::int64_t n = x.numel() / c;
    require_channel_param(gamma, c, "gamma");
    require_channel_param(beta, c, "beta");
    if (eps <= 0) throw DataError("batchnorm: eps must be positive");

    TensorT<T> out(x.shape());
    TensorT<T> mean(Shape{c}), var(Shape{c});
    for (std::int64_t ci = 0; ci < c; ++ci) {
        const T* plane = x.data() + ci * n;
        T* dst = out.data() + ci * n;
        const T mu = sum_blocked(plane, n) / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) dst[i] = plane[i] - mu;
        const T v = sumsq_blocked(dst, n) / static_cast<T>(n);
        const T istd = T(1) / std::sqrt(v + static_cast<T>(eps));
        const T a = gamma[ci] * istd;
        const T b = beta[ci];
        for (std::int64_t i = 0; i < n; ++i) dst[i] = dst[i] * a + b;
        mean[ci] = mu;
        var[ci] = v;
    }
    if (stats_out) {
        stats_out->mean = std::move(mean);
        stats_out->var = std::move(var);
    }
    return out;
}

template <typename T>
TensorT<T> batchnorm_infer(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                           const TensorT<T>& running_mean, const TensorT<T>& running_var,
                           double eps) {
    require_spatial(x, "batchnorm");
    const std::int64_t c = x.shape()[0];
    const std::int64_t n = x.numel() / c;
    require_channel_param(gamma, c, "gamma");
    require_channel_param(beta, c, "beta");
    require_channel_param(running_mean, c, "running_mean");
    require_channel_param(running_var, c, "running_var");

    TensorT<T> out(x.shape());
    for (std::int64_t ci = 0; ci < c; ++ci) {
        if (running_var[ci] < T(0)) {
            throw DataError("batchnorm: negative running variance for channel " + std::to_string(ci));
        }
        const T istd = T(1) / std::sqrt(running_var[ci] + static_cast<T>(eps));
        const T a = gamma[ci] * istd;
        const T b = beta[ci] - running_mean[ci] * a;
        const T* plane = x.data() + ci * n;
        T* dst = out.data() + ci * n;
        for (std::int64_t i = 0; i < n; ++i) dst[i] = plane[i] * a + b;
    }
    return out;
}

template <typename T>
void batchnorm_update_running(TensorT<T>& running_mean, TensorT<T>& running_var,
                              const BnStats<T>& batch, double momentum) {
    if (!running_mean.same_shape(batch.mean) || !running_var.same_shape(batch.var)) {
        throw DataError("batchnorm running-stat shape mismatch");
    }
    const T m = static_cast<T>(momentum);
    for (std::int64_t i = 0; i < running_mean.numel(); ++i) {
        running_mean[i] = m * running_mean[i] + (T(1) - m) * batch.mean[i];
        running_var[i] = m * running_var[i] + (T(1) - m) * batch.var[i];
    }
}

template <typename T>
TensorT<T> dropout_mask(Rng& rng, double keep_prob, const Shape& shape) {
    if (!(keep_prob > 0.0) || keep_prob > 1.0) {
        throw DataError("dropout: keep probability must be in (0,1]");
    }
    TensorT<T> mask(shape);
    if (keep_prob == 1.0) {
        for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = T(1);
        return mask;
    }
    const T scale = static_cast<T>(1.0 / keep_prob);
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        mask[i] = rng.uniform(0.0, 1.0) < keep_prob ? scale : T(0);
    }
    return mask;
}

template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& x) {
    require_spatial(x, "softmax");
    const std::int64_t c = x.shape()[0];
    if (c < 2) throw DataError("softmax: needs at least 2 channels");
    const std::int64_t n = x.numel() / c;

    TensorT<T> out(x.shape());
    std::vector<T> m(static_cast<std::size_t>(n));
    std::memcpy(m.data(), x.data(), static_cast<std::size_t>(n) * sizeof(T));
    for (std::int64_t ci = 1; ci < c; ++ci) {
        const T* plane = x.data() + ci * n;
        for (std::int64_t i = 0; i < n; ++i) m[i] = plane[i] > m[i] ? plane[i] : m[i];
    }
    std::vector<T> s(static_cast<std::size_t>(n), T(0));
    for (std::int64_t ci = 0; ci < c; ++ci) {
        const T* plane = x.data() + ci * n;
        T* dst = out.data() + ci * n;
        for (std::int64_t i = 0; i < n; ++i) {
            dst[i] = std::exp(plane[i] - m[i]);
            s[i] += dst[i];
        }
    }
    for (std::int64_t i = 0; i < n; ++i) s[i] = T(1) / s[i];
    for (std::int64_t ci = 0; ci < c; ++ci) {
        T* dst = out.data() + ci * n;
        for (std::int64_t i = 0; i < n; ++i) dst[i] *= s[i];
    }
    return out;
}

template <typename T>
TensorT<T> pad_channels(const TensorT<T>& x, std::int64_t out_channels) {
    require_spatial(x, "pad_channels");
    const std::int64_t c = x.shape()[0];
    if (out_channels < c) {
        throw DataError("pad_channels: cannot shrink " + std::to_string(c) + " channels to " +
                        std::to_string(out_channels));
    }
    std::vector<std::int64_t> dims = x.shape().dims();
    dims[0] = out_channels;
    TensorT<T> out{Shape(dims)};
    std::memcpy(out.data(), x.data(), static_cast<std::size_t>(x.numel()) * sizeof(T));
    return out;
}

// ---- tape ops ----

template <typename T>
typename GraphT<T>::NodeId op_conv3d(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                     typename GraphT<T>::NodeId w, int dilation, Padding padding,
                                     ConvAlgo algo) {
    const bool ng = g.needs_grad(x) || g.needs_grad(w);
    auto id = g.push(conv3d_forward(g.value(x), g.value(w), dilation, padding, algo), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, x, w, id, dilation, padding, algo] {
            const TensorT<T>& gy = g.grad(id);
            if (g.needs_grad(x)) {
                g.accumulate_grad(
                    x, conv3d_grad_input(gy, g.value(x).shape(), g.value(w), dilation, padding, algo));
            }
            if (g.needs_grad(w)) {
                g.accumulate_grad(
                    w, conv3d_grad_weights(gy, g.value(x), g.value(w).shape(), dilation, padding, algo));
            }
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_batchnorm_train(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                              typename GraphT<T>::NodeId gamma,
                                              typename GraphT<T>::NodeId beta, double eps,
                                              BnStats<T>* stats_out) {
    BnStats<T> stats;
    TensorT<T> y = batchnorm_train(g.value(x), g.value(gamma), g.value(beta), eps, &stats);
    const bool ng = g.needs_grad(x) || g.needs_grad(gamma) || g.needs_grad(beta);
    auto mean = std::make_shared<TensorT<T>>(stats.mean);
    auto var = std::make_shared<TensorT<T>>(stats.var);
    if (stats_out) *stats_out = std::move(stats);
    auto id = g.push(std::move(y), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, x, gamma, beta, id, eps, mean, var] {
            const TensorT<T>& gy = g.grad(id);
            const TensorT<T>& xv = g.value(x);
            const TensorT<T>& gv = g.value(gamma);
            const std::int64_t c = xv.shape()[0];
            const std::int64_t n = xv.numel() / c;
            TensorT<T> gx(xv.shape());
            TensorT<T> dgamma(Shape{c}), dbeta(Shape{c});
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T* gyp = gy.data() + ci * n;
                const T* xp = xv.data() + ci * n;
                const T mu = (*mean)[ci];
                const T istd = T(1) / std::sqrt((*var)[ci] + static_cast<T>(eps));
                const T s1 = sum_blocked(gyp, n);
                const T s2 = (dot_blocked(gyp, xp, n) - mu * s1) * istd;  // sum gy*xhat
                dbeta[ci] = s1;
                dgamma[ci] = s2;
                const T a = gv[ci] * istd;
                const T m1 = s1 / static_cast<T>(n);
                const T m2 = s2 / static_cast<T>(n);
                T* dst = gx.data() + ci * n;
                for (std::int64_t i = 0; i < n; ++i) {
                    const T xhat = (xp[i] - mu) * istd;
                    dst[i] = a * (gyp[i] - m1 - xhat * m2);
                }
            }
            if (g.needs_grad(x)) g.accumulate_grad(x, gx);
            if (g.needs_grad(gamma)) g.accumulate_grad(gamma, dgamma);
            if (g.needs_grad(beta)) g.accumulate_grad(beta, dbeta);
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_dropout(GraphT<T>& g, typename GraphT<T>::NodeId x, double keep_prob,
                                      Rng& rng) {
    auto mask = std::make_shared<TensorT<T>>(dropout_mask<T>(rng, keep_prob, g.value(x).shape()));
    const bool ng = g.needs_grad(x);
    auto id = g.push(mul(g.value(x), *mask), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, x, id, mask] {
            g.accumulate_grad(x, mul(g.grad(id), *mask));
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_softmax_channels(GraphT<T>& g, typename GraphT<T>::NodeId x) {
    const bool ng = g.needs_grad(x);
    auto id = g.push(softmax_channels(g.value(x)), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, x, id] {
            const TensorT<T>& gy = g.grad(id);
            const TensorT<T>& y = g.value(id);
            const std::int64_t c = y.shape()[0];
            const std::int64_t n = y.numel() / c;
            std::vector<T> dot(static_cast<std::size_t>(n), T(0));
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T* gp = gy.data() + ci * n;
                const T* yp = y.data() + ci * n;
                for (std::int64_t i = 0; i < n; ++i) dot[i] += gp[i] * yp[i];
            }
            TensorT<T> gx(y.shape());
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T* gp = gy.data() + ci * n;
                const T* yp = y.data() + ci * n;
                T* dst = gx.data() + ci * n;
                for (std::int64_t i = 0; i < n; ++i) dst[i] = yp[i] * (gp[i] - dot[i]);
            }
            g.accumulate_grad(x, gx);
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_pad_channels(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                           std::int64_t out_channels) {
    const bool ng = g.needs_grad(x);
    auto id = g.push(pad_channels(g.value(x), out_channels), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, x, id] {
            const TensorT<T>& gy = g.grad(id);
            const TensorT<T>& xv = g.value(x);
            TensorT<T> gx(xv.shape());
            std::memcpy(gx.data(), gy.data(), static_cast<std::size_t>(gx.numel()) * sizeof(T));
            g.accumulate_grad(x, gx);
        });
    }
    return id;
}

#define HR3D_INSTANTIATE_OPS(T)                                                                    \
    template struct BnStats<T>;                                                                    \
    template TensorT<T> batchnorm_train(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                        double, BnStats<T>*);                                      \
    template TensorT<T> batchnorm_infer(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                        const TensorT<T>&, const TensorT<T>&, double);             \
    template void batchnorm_update_running(TensorT<T>&, TensorT<T>&, const BnStats<T>&, double);   \
    template TensorT<T> dropout_mask<T>(Rng&, double, const Shape&);                               \
    template TensorT<T> softmax_channels(const TensorT<T>&);                                       \
    template TensorT<T> pad_channels(const TensorT<T>&, std::int64_t);                             \
    template GraphT<T>::NodeId op_conv3d(GraphT<T>&, GraphT<T>::NodeId, GraphT<T>::NodeId, int,    \
                                         Padding, ConvAlgo);                                       \
    template GraphT<T>::NodeId op_batchnorm_train(GraphT<T>&, GraphT<T>::NodeId,                   \
                                                  GraphT<T>::NodeId, GraphT<T>::NodeId, double,    \
                                                  BnStats<T>*);                                    \
    template GraphT<T>::NodeId op_dropout(GraphT<T>&, GraphT<T>::NodeId, double, Rng&);            \
    template GraphT<T>::NodeId op_softmax_channels(GraphT<T>&, GraphT<T>::NodeId);                 \
    template GraphT<T>::NodeId op_pad_channels(GraphT<T>&, GraphT<T>::NodeId, std::int64_t);

HR3D_INSTANTIATE_OPS(float)
HR3D_INSTANTIATE_OPS(double)

#undef HR3D_INSTANTIATE_OPS

}  // namespace hr3d
