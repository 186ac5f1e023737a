#include "hr3d/tensor.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace hr3d {

Shape::Shape(std::initializer_list<std::int64_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() {
    numel_ = 1;
    for (std::int64_t d : dims_) {
        if (d < 1) throw DataError("Shape: every extent must be >= 1, got " + std::to_string(d));
        if (numel_ > std::numeric_limits<std::int64_t>::max() / d) {
            throw DataError("Shape: element count overflows the addressable range");
        }
        numel_ *= d;
    }
}

std::vector<std::int64_t> Shape::strides() const {
    std::vector<std::int64_t> s(dims_.size(), 1);
    for (std::int64_t i = rank() - 2; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i + 1)] * dims_[static_cast<std::size_t>(i + 1)];
    }
    return s;
}

std::int64_t Shape::flat_index(const std::vector<std::int64_t>& idx) const {
    if (static_cast<std::int64_t>(idx.size()) != rank()) {
        throw DataError("Shape::flat_index: index rank mismatch");
    }
    std::int64_t flat = 0;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= dims_[i]) throw DataError("Shape::flat_index: index out of range");
        flat = flat * dims_[i] + idx[i];
    }
    return flat;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ")";
    return os.str();
}

template <typename T>
TensorT<T>::TensorT(const Shape& shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_.numel()) {
        throw DataError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_.str());
    }
}

template <typename T>
TensorT<T> TensorT<T>::full(const Shape& shape, T value) {
    TensorT t(shape);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw DataError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    debug_check_finite(out, "add");
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    debug_check_finite(out, "mul");
    return out;
}

template <typename T>
TensorT<T> max0(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + s;
    debug_check_finite(out, "add_scalar");
    return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    debug_check_finite(out, "mul_scalar");
    return out;
}

namespace {

// Shared reduction driver: walks the input in flat order and maps every
// element onto its output slot, so the per-slot accumulation order is the
// documented row-major order.
struct ReducePlan {
    Shape out_shape;
    std::vector<std::int64_t> out_stride_per_axis;  // 0 on reduced axes
    std::int64_t reduced_count = 1;
};

ReducePlan plan_reduction(const Shape& in, const std::vector<std::int64_t>& axes) {
    std::vector<bool> reduced(static_cast<std::size_t>(in.rank()), false);
    if (axes.empty()) {
        std::fill(reduced.begin(), reduced.end(), true);
    } else {
        for (std::int64_t ax : axes) {
            if (ax < 0 || ax >= in.rank()) throw DataError("reduce: axis out of range");
            if (reduced[static_cast<std::size_t>(ax)]) throw DataError("reduce: duplicate axis");
            reduced[static_cast<std::size_t>(ax)] = true;
        }
    }
    ReducePlan plan;
    std::vector<std::int64_t> out_dims;
    for (std::int64_t i = 0; i < in.rank(); ++i) {
        if (!reduced[static_cast<std::size_t>(i)]) out_dims.push_back(in[i]);
        else plan.reduced_count *= in[i];
    }
    plan.out_shape = Shape(std::move(out_dims.empty() ? std::vector<std::int64_t>{} : out_dims));
    // Per-input-axis stride into the output tensor.
    std::vector<std::int64_t> out_strides = plan.out_shape.strides();
    plan.out_stride_per_axis.assign(static_cast<std::size_t>(in.rank()), 0);
    std::size_t kept = 0;
    for (std::int64_t i = 0; i < in.rank(); ++i) {
        if (!reduced[static_cast<std::size_t>(i)]) {
            plan.out_stride_per_axis[static_cast<std::size_t>(i)] = out_strides[kept];
            ++kept;
        }
    }
    return plan;
}

template <typename T, typename Fold>
TensorT<T> run_reduction(const TensorT<T>& t, const std::vector<std::int64_t>& axes, T init, Fold fold) {
    ReducePlan plan = plan_reduction(t.shape(), axes);
    TensorT<T> out = TensorT<T>::full(plan.out_shape, init);
    const std::int64_t rank = t.shape().rank();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    const std::int64_t n = t.numel();
    std::int64_t out_flat = 0;
    for (std::int64_t flat = 0; flat < n; ++flat) {
        fold(out[out_flat], t[flat]);
        // Increment the multi-index, maintaining the output offset.
        for (std::int64_t ax = rank - 1; ax >= 0; --ax) {
            auto uax = static_cast<std::size_t>(ax);
            ++idx[uax];
            out_flat += plan.out_stride_per_axis[uax];
            if (idx[uax] < t.shape()[ax]) break;
            out_flat -= plan.out_stride_per_axis[uax] * t.shape()[ax];
            idx[uax] = 0;
        }
    }
    return out;
}

}  // namespace

template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& t, const std::vector<std::int64_t>& axes) {
    return run_reduction<T>(t, axes, T(0), [](T& acc, T v) { acc += v; });
}

template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& t, const std::vector<std::int64_t>& axes) {
    ReducePlan plan = plan_reduction(t.shape(), axes);
    TensorT<T> sum = reduce_sum(t, axes);
    return mul_scalar(sum, T(1) / static_cast<T>(plan.reduced_count));
}

template <typename T>
TensorT<T> reduce_max(const TensorT<T>& t, const std::vector<std::int64_t>& axes) {
    return run_reduction<T>(t, axes, std::numeric_limits<T>::lowest(),
                            [](T& acc, T v) { acc = v > acc ? v : acc; });
}

template <typename T>
TensorI argmax(const TensorT<T>& t, std::int64_t axis) {
    if (axis < 0 || axis >= t.shape().rank()) throw DataError("argmax: axis out of range");
    const std::vector<std::int64_t>& dims = t.shape().dims();
    std::vector<std::int64_t> out_dims;
    for (std::int64_t i = 0; i < t.shape().rank(); ++i) {
        if (i != axis) out_dims.push_back(dims[static_cast<std::size_t>(i)]);
    }
    Shape out_shape(out_dims.empty() ? std::vector<std::int64_t>{} : out_dims);
    TensorI out(out_shape);

    const std::vector<std::int64_t> strides = t.shape().strides();
    const std::int64_t axis_len = dims[static_cast<std::size_t>(axis)];
    const std::int64_t axis_stride = strides[static_cast<std::size_t>(axis)];
    // outer runs over everything before the axis, inner over everything after.
    std::int64_t inner = 1;
    for (std::int64_t i = axis + 1; i < t.shape().rank(); ++i) inner *= dims[static_cast<std::size_t>(i)];
    std::int64_t outer = t.numel() / (axis_len * inner);

    std::int64_t out_flat = 0;
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in, ++out_flat) {
            const std::int64_t base = o * axis_len * inner + in;
            T best = t[base];
            std::int64_t best_idx = 0;
            for (std::int64_t a = 1; a < axis_len; ++a) {
                const T v = t[base + a * axis_stride];
                if (v > best) {  // strict: ties keep the lowest index
                    best = v;
                    best_idx = a;
                }
            }
            out[out_flat] = best_idx;
        }
    }
    return out;
}

template <typename T>
std::int64_t argmax_flat(const TensorT<T>& t) {
    T best = t[0];
    std::int64_t best_idx = 0;
    for (std::int64_t i = 1; i < t.numel(); ++i) {
        if (t[i] > best) {
            best = t[i];
            best_idx = i;
        }
    }
    return best_idx;
}

template <typename T>
TensorT<T> random_fill(Rng& rng, Dist dist, double p0, double p1, const Shape& shape) {
    TensorT<T> out(shape);
    const std::int64_t n = out.numel();
    if (dist == Dist::kUniform) {
        for (std::int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(rng.uniform(p0, p1));
    } else {
        for (std::int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(rng.normal(p0, p1));
    }
    return out;
}

#define HR3D_INSTANTIATE(T)                                                                       \
    template class TensorT<T>;                                                                    \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                                \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                                \
    template TensorT<T> max0(const TensorT<T>&);                                                  \
    template TensorT<T> add_scalar(const TensorT<T>&, T);                                         \
    template TensorT<T> mul_scalar(const TensorT<T>&, T);                                         \
    template TensorT<T> reduce_sum(const TensorT<T>&, const std::vector<std::int64_t>&);          \
    template TensorT<T> reduce_mean(const TensorT<T>&, const std::vector<std::int64_t>&);         \
    template TensorT<T> reduce_max(const TensorT<T>&, const std::vector<std::int64_t>&);          \
    template TensorI argmax(const TensorT<T>&, std::int64_t);                                     \
    template std::int64_t argmax_flat(const TensorT<T>&);                                         \
    template TensorT<T> random_fill(Rng&, Dist, double, double, const Shape&);

HR3D_INSTANTIATE(float)
HR3D_INSTANTIATE(double)
template class TensorT<std::int64_t>;

#undef HR3D_INSTANTIATE

}  // namespace hr3d
