#include "hr3d/autodiff.hpp"

#include <memory>

#include "hr3d/common.hpp"
#include "hr3d/simd.hpp"

namespace hr3d {

template <typename T>
void GraphT<T>::accumulate_grad(NodeId id, const TensorT<T>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (g.shape() != n.value.shape()) {
        throw DataError("accumulate_grad: gradient shape " + g.shape().str() +
                        " does not match value shape " + n.value.shape().str());
    }
    if (n.grad.shape().numel() == 0) {
        n.grad = g;
    } else {
        axpy(n.grad.data(), T(1), g.data(), g.numel());
    }
}

template <typename T>
void GraphT<T>::backward(NodeId root) {
    Node& r = nodes_[static_cast<std::size_t>(root)];
    if (r.value.numel() != 1) {
        throw DataError("backward: root must be scalar, got shape " + r.value.shape().str());
    }
    TensorT<T> seed(r.value.shape());
    seed[0] = T(1);
    accumulate_grad(root, seed);
    for (std::int64_t i = static_cast<std::int64_t>(root); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward && n.needs_grad && n.grad.shape().numel() != 0) n.backward();
    }
}

template <typename T>
typename GraphT<T>::NodeId op_add(GraphT<T>& g, typename GraphT<T>::NodeId a,
                                  typename GraphT<T>::NodeId b) {
    const bool ng = g.needs_grad(a) || g.needs_grad(b);
    auto id = g.push(add(g.value(a), g.value(b)), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, a, b, id] {
            const TensorT<T>& gy = g.grad(id);
            if (g.needs_grad(a)) g.accumulate_grad(a, gy);
            if (g.needs_grad(b)) g.accumulate_grad(b, gy);
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_relu(GraphT<T>& g, typename GraphT<T>::NodeId x) {
    const bool ng = g.needs_grad(x);
    auto id = g.push(max0(g.value(x)), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, x, id] {
            const TensorT<T>& gy = g.grad(id);
            const TensorT<T>& xv = g.value(x);
            TensorT<T> gx(xv.shape());
            for (std::int64_t i = 0; i < xv.numel(); ++i) gx[i] = xv[i] > T(0) ? gy[i] : T(0);
            g.accumulate_grad(x, gx);
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_sum_all(GraphT<T>& g, typename GraphT<T>::NodeId x) {
    const TensorT<T>& v = g.value(x);
    TensorT<T> out(Shape(std::vector<std::int64_t>{}));
    out[0] = sum_blocked(v.data(), v.numel());
    const bool ng = g.needs_grad(x);
    auto id = g.push(std::move(out), ng, nullptr);
    if (ng) {
        g.set_backward(id, [&g, x, id] {
            const T gy = g.grad(id)[0];
            g.accumulate_grad(x, TensorT<T>::full(g.value(x).shape(), gy));
        });
    }
    return id;
}

template <typename T>
typename GraphT<T>::NodeId op_weighted_sum(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                           TensorT<T> weights) {
    const TensorT<T>& v = g.value(x);
    if (!v.same_shape(weights)) {
        throw DataError("op_weighted_sum: weight shape " + weights.shape().str() +
                        " does not match " + v.shape().str());
    }
    TensorT<T> out(Shape(std::vector<std::int64_t>{}));
    out[0] = dot_blocked(v.data(), weights.data(), v.numel());
    const bool ng = g.needs_grad(x);
    auto id = g.push(std::move(out), ng, nullptr);
    if (ng) {
        auto w = std::make_shared<TensorT<T>>(std::move(weights));
        g.set_backward(id, [&g, x, id, w] {
            const T gy = g.grad(id)[0];
            g.accumulate_grad(x, mul_scalar(*w, gy));
        });
    }
    return id;
}

#define HR3D_INSTANTIATE_GRAPH(T)                                                                 \
    template class GraphT<T>;                                                                     \
    template GraphT<T>::NodeId op_add(GraphT<T>&, GraphT<T>::NodeId, GraphT<T>::NodeId);          \
    template GraphT<T>::NodeId op_relu(GraphT<T>&, GraphT<T>::NodeId);                            \
    template GraphT<T>::NodeId op_sum_all(GraphT<T>&, GraphT<T>::NodeId);                         \
    template GraphT<T>::NodeId op_weighted_sum(GraphT<T>&, GraphT<T>::NodeId, TensorT<T>);

HR3D_INSTANTIATE_GRAPH(float)
HR3D_INSTANTIATE_GRAPH(double)

#undef HR3D_INSTANTIATE_GRAPH

}  // namespace hr3d
