#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "hr3d/common.hpp"
#include "hr3d/rng.hpp"

namespace hr3d {

// Dense shape, row-major with the last dimension fastest.  Volumes are
// (channels, depth, height, width); conv weights are
// (c_out, c_in, kd, kh, kw).
class Shape {
  public:
    Shape() = default;
    Shape(std::initializer_list<std::int64_t> dims);
    explicit Shape(std::vector<std::int64_t> dims);

    std::int64_t rank() const { return static_cast<std::int64_t>(dims_.size()); }
    std::int64_t operator[](std::int64_t axis) const { return dims_[static_cast<std::size_t>(axis)]; }
    const std::vector<std::int64_t>& dims() const { return dims_; }

    std::int64_t numel() const { return numel_; }

    // Row-major strides in elements.
    std::vector<std::int64_t> strides() const;
    std::int64_t flat_index(const std::vector<std::int64_t>& idx) const;

    bool operator==(const Shape& other) const { return dims_ == other.dims_; }
    bool operator!=(const Shape& other) const { return !(*this == other); }

    std::string str() const;

  private:
    void validate();

    std::vector<std::int64_t> dims_;
    std::int64_t numel_ = 0;
};

template <typename T>
class TensorT {
  public:
    using value_type = T;

    TensorT() = default;
    explicit TensorT(const Shape& shape) : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), T(0)) {}
    TensorT(const Shape& shape, std::vector<T> data);

    static TensorT zeros(const Shape& shape) { return TensorT(shape); }
    static TensorT full(const Shape& shape, T value);

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at(const std::vector<std::int64_t>& idx) { return data_[static_cast<std::size_t>(shape_.flat_index(idx))]; }
    const T& at(const std::vector<std::int64_t>& idx) const {
        return data_[static_cast<std::size_t>(shape_.flat_index(idx))];
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;
using TensorI = TensorT<std::int64_t>;

// Pointwise ops.  Binary ops require equal shapes; the only broadcasting
// supported anywhere is scalar-with-tensor.
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> max0(const TensorT<T>& a);  // elementwise max(x, 0), i.e. ReLU
template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s);
template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s);

// Reductions over a sorted list of axes; an empty axis list reduces over
// everything.  Reduced axes are removed from the shape (a full reduction
// yields a rank-0 tensor holding one element).
template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& t, const std::vector<std::int64_t>& axes = {});
template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& t, const std::vector<std::int64_t>& axes = {});
template <typename T>
TensorT<T> reduce_max(const TensorT<T>& t, const std::vector<std::int64_t>& axes = {});

// Argmax over exactly one axis (ties take the lowest index).  A rank-1
// tensor may omit the axis.
template <typename T>
TensorI argmax(const TensorT<T>& t, std::int64_t axis);
template <typename T>
std::int64_t argmax_flat(const TensorT<T>& t);

enum class Dist { kUniform, kNormal };

// Deterministic fill in flat order: uniform(a, b) or normal(mu, sigma).
template <typename T>
TensorT<T> random_fill(Rng& rng, Dist dist, double p0, double p1, const Shape& shape);

// Debug-build finiteness gate (release builds check only at loss
// evaluation; see the trainer).
template <typename T>
inline void debug_check_finite(const TensorT<T>& t, const char* what) {
#ifndef NDEBUG
    check_finite_span(t.data(), t.numel(), what);
#else
    (void)t;
    (void)what;
#endif
}

}  // namespace hr3d
