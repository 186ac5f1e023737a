#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hr3d/tensor.hpp"

namespace hr3d {

// Reverse-mode tape.  Nodes are appended in evaluation order, which is a
// topological order by construction, so backward() is a single reverse
// sweep.  Ops are free functions (ops.hpp, losses.hpp) that push nodes and
// capture ids in their backward closures; the graph object must therefore
// stay put once ops reference it.
template <typename T>
class GraphT {
  public:
    using NodeId = std::int32_t;

    GraphT() = default;
    GraphT(const GraphT&) = delete;
    GraphT& operator=(const GraphT&) = delete;

    NodeId leaf(TensorT<T> value, bool needs_grad = false) {
        return push(std::move(value), needs_grad, nullptr);
    }

    NodeId push(TensorT<T> value, bool needs_grad, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(value), TensorT<T>(), needs_grad, std::move(backward)});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    // Ops attach the closure after push so it can capture the node's own id.
    void set_backward(NodeId id, std::function<void()> backward) {
        nodes_[static_cast<std::size_t>(id)].backward = std::move(backward);
    }

    const TensorT<T>& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool needs_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    // Gradient accumulated so far; zeros if the node was never reached.
    const TensorT<T>& grad(NodeId id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.shape().numel() == 0) n.grad = TensorT<T>(n.value.shape());
        return n.grad;
    }

    bool has_grad(NodeId id) const {
        return nodes_[static_cast<std::size_t>(id)].grad.shape().numel() != 0;
    }

    void accumulate_grad(NodeId id, const TensorT<T>& g);

    // Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse.
    // root must hold a single element.
    void backward(NodeId root);

    std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

  private:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        bool needs_grad;
        std::function<void()> backward;
    };

    std::vector<Node> nodes_;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

// Core arithmetic ops shared by the layer library and the losses.
template <typename T>
typename GraphT<T>::NodeId op_add(GraphT<T>& g, typename GraphT<T>::NodeId a,
                                  typename GraphT<T>::NodeId b);
template <typename T>
typename GraphT<T>::NodeId op_relu(GraphT<T>& g, typename GraphT<T>::NodeId x);
template <typename T>
typename GraphT<T>::NodeId op_sum_all(GraphT<T>& g, typename GraphT<T>::NodeId x);
// Inner product with a constant weighting; gives loss-like scalars with
// non-degenerate gradients for checks.
template <typename T>
typename GraphT<T>::NodeId op_weighted_sum(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                           TensorT<T> weights);

}  // namespace hr3d
