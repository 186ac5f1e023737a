#include "hr3d/conv3d.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "hr3d/simd.hpp"

namespace hr3d {

namespace {

struct ConvDims {
    std::int64_t c_in, c_out, k;       // kernel extent, 1 or 3
    std::int64_t d, h, w;              // input spatial
    std::int64_t od, oh, ow;           // output spatial
    int r;                             // dilation
    Padding padding;
};

ConvDims resolve_dims(const Shape& input, const Shape& weights, int dilation, Padding padding) {
    if (input.rank() != 4) throw DataError("conv3d: input must be (C,D,H,W), got " + input.str());
    if (weights.rank() != 5) throw DataError("conv3d: weights must be (C_out,C_in,k,k,k), got " + weights.str());
    const std::int64_t k = weights[2];
    if (k != weights[3] || k != weights[4] || (k != 1 && k != 3)) {
        throw DataError("conv3d: kernel extent must be 1 or 3 in every spatial dim, got " + weights.str());
    }
    if (weights[1] != input[0]) {
        throw DataError("conv3d: channel mismatch, input has " + std::to_string(input[0]) +
                        " channels but weights expect " + std::to_string(weights[1]));
    }
    if (dilation < 1) throw DataError("conv3d: dilation must be >= 1");

    ConvDims cd;
    cd.c_in = input[0];
    cd.c_out = weights[0];
    cd.k = k;
    cd.d = input[1];
    cd.h = input[2];
    cd.w = input[3];
    cd.r = dilation;
    cd.padding = padding;
    const std::int64_t shrink = (k == 3 && padding == Padding::kValid) ? 2 * dilation : 0;
    cd.od = cd.d - shrink;
    cd.oh = cd.h - shrink;
    cd.ow = cd.w - shrink;
    if (cd.od < 1 || cd.oh < 1 || cd.ow < 1) {
        throw DataError("conv3d: input " + input.str() + " is spatially smaller than the dilated kernel (r=" +
                        std::to_string(dilation) + ") under valid padding");
    }
    return cd;
}

// Copies (C, D, H, W) into a zero border of `b` voxels per side.
template <typename T>
void zero_embed(const TensorT<T>& src, std::int64_t b, std::vector<T>& dst, std::int64_t& ed,
                std::int64_t& eh, std::int64_t& ew) {
    const Shape& s = src.shape();
    const std::int64_t c = s[0], d = s[1], h = s[2], w = s[3];
    ed = d + 2 * b;
    eh = h + 2 * b;
    ew = w + 2 * b;
    dst.assign(static_cast<std::size_t>(c * ed * eh * ew), T(0));
    const T* in = src.data();
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t z = 0; z < d; ++z) {
            for (std::int64_t y = 0; y < h; ++y) {
                const T* srow = in + ((ci * d + z) * h + y) * w;
                T* drow = dst.data() + ((ci * ed + (z + b)) * eh + (y + b)) * ew + b;
                std::memcpy(drow, srow, static_cast<std::size_t>(w) * sizeof(T));
            }
        }
    }
}

// Valid 3^3 dilated convolution over a raw buffer: in (C_in, Di, Hi, Wi),
// out (C_out, Di-2r, Hi-2r, Wi-2r).  All inner loops have uniform bounds.
template <typename T>
void valid_core3(const T* in, std::int64_t c_in, std::int64_t di, std::int64_t hi, std::int64_t wi,
                 const T* wts, std::int64_t c_out, int r, T* out) {
    const std::int64_t od = di - 2 * r, oh = hi - 2 * r, ow = wi - 2 * r;
    std::vector<T> acc(static_cast<std::size_t>(ow));
    for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t z = 0; z < od; ++z) {
            for (std::int64_t y = 0; y < oh; ++y) {
                std::fill(acc.begin(), acc.end(), T(0));
                for (std::int64_t ci = 0; ci < c_in; ++ci) {
                    const T* wk = wts + (co * c_in + ci) * 27;
                    const T* plane = in + ci * di * hi * wi;
                    for (int i = 0; i < 3; ++i) {
                        for (int j = 0; j < 3; ++j) {
                            const T* row = plane + (z + i * r) * hi * wi + (y + j * r) * wi;
                            const T* w3 = wk + (i * 3 + j) * 3;
                            axpy(acc.data(), w3[0], row, ow);
                            axpy(acc.data(), w3[1], row + r, ow);
                            axpy(acc.data(), w3[2], row + 2 * r, ow);
                        }
                    }
                }
                std::memcpy(out + ((co * od + z) * oh + y) * ow, acc.data(),
                            static_cast<std::size_t>(ow) * sizeof(T));
            }
        }
    }
}

// 1x1x1 convolution: a pure channel mix, identical for both paddings.
// Column-chunked so the input slab stays cache-resident across output channels.
template <typename T>
void pointwise_core(const T* in, std::int64_t c_in, std::int64_t spatial, const T* wts,
                    std::int64_t c_out, T* out) {
    constexpr std::int64_t kChunk = 4096;
    for (std::int64_t s0 = 0; s0 < spatial; s0 += kChunk) {
        const std::int64_t sc = std::min(kChunk, spatial - s0);
        for (std::int64_t co = 0; co < c_out; ++co) {
            T* dst = out + co * spatial + s0;
            std::fill(dst, dst + sc, T(0));
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
                axpy(dst, wts[co * c_in + ci], in + ci * spatial + s0, sc);
            }
        }
    }
}

// Kernel flipped in all spatial dims with channel axes swapped, so that
// grad-input is itself a valid convolution.
template <typename T>
std::vector<T> flip_transpose(const T* wts, std::int64_t c_out, std::int64_t c_in) {
    std::vector<T> ft(static_cast<std::size_t>(c_out * c_in * 27));
    for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
            const T* src = wts + (co * c_in + ci) * 27;
            T* dst = ft.data() + (ci * c_out + co) * 27;
            for (int t = 0; t < 27; ++t) dst[t] = src[26 - t];
        }
    }
    return ft;
}

template <typename T>
struct Scratch {
    static std::vector<T>& embed() {
        thread_local std::vector<T> buf;
        return buf;
    }
    static std::vector<T>& col() {
        thread_local std::vector<T> buf;
        return buf;
    }
    static std::vector<T>& aux() {
        thread_local std::vector<T> buf;
        return buf;
    }
};

// ---- split-and-merge path: gather into a (C_in*27, S) matrix, then GEMM.

// Rank-update of R consecutive C rows from one B row slice.  R is a compile
// time constant so the row loop unrolls while the B slice stays hot in L1.
template <typename T, int R>
void gemm_tile(const T* a, const T* b, T* c, std::int64_t ib, std::int64_t kb, std::int64_t ke,
               std::int64_t jb, std::int64_t nb, std::int64_t k_dim, std::int64_t n,
               std::int64_t ldc) {
    T* cr[R];
    for (int r = 0; r < R; ++r) cr[r] = c + (ib + r) * ldc + jb;
    for (std::int64_t k = kb; k < ke; ++k) {
        const T* brow = b + k * n + jb;
        for (int r = 0; r < R; ++r) axpy(cr[r], a[(ib + r) * k_dim + k], brow, nb);
    }
}

// C[M,N] = A[M,K] * B[K,N] with C rows `ldc` apart; fixed ascending k-order
// per output element.  Blocked so a B panel is reused across eight C rows
// instead of being re-streamed once per row.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k_dim, std::int64_t n,
          std::int64_t ldc) {
    constexpr std::int64_t kNB = 512;
    constexpr std::int64_t kKB = 256;
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        std::fill(crow, crow + n, T(0));
    }
    for (std::int64_t jb = 0; jb < n; jb += kNB) {
        const std::int64_t nb = std::min(kNB, n - jb);
        for (std::int64_t kb = 0; kb < k_dim; kb += kKB) {
            const std::int64_t ke = std::min(kb + kKB, k_dim);
            std::int64_t ib = 0;
            for (; ib + 8 <= m; ib += 8) gemm_tile<T, 8>(a, b, c, ib, kb, ke, jb, nb, k_dim, n, ldc);
            for (; ib + 4 <= m; ib += 4) gemm_tile<T, 4>(a, b, c, ib, kb, ke, jb, nb, k_dim, n, ldc);
            for (; ib < m; ++ib) gemm_tile<T, 1>(a, b, c, ib, kb, ke, jb, nb, k_dim, n, ldc);
        }
    }
}

// col rows are ordered (ci, i, j, k); columns are the output voxels of the
// z-window [z0, z0+od), row-major.  d_full is the source depth per channel.
template <typename T>
void vol2col(const T* base, std::int64_t c_in, std::int64_t d_full, std::int64_t hi,
             std::int64_t wi, std::int64_t z0, std::int64_t od, std::int64_t oh, std::int64_t ow,
             int r, T* col) {
    const std::int64_t s = od * oh * ow;
    std::int64_t row_idx = 0;
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                for (int k = 0; k < 3; ++k, ++row_idx) {
                    T* dst = col + row_idx * s;
                    for (std::int64_t z = 0; z < od; ++z) {
                        for (std::int64_t y = 0; y < oh; ++y) {
                            const T* src = base + (ci * d_full + z0 + z + i * r) * hi * wi +
                                           (y + j * r) * wi + k * r;
                            std::memcpy(dst, src, static_cast<std::size_t>(ow) * sizeof(T));
                            dst += ow;
                        }
                    }
                }
            }
        }
    }
}

// Column budget for the gathered matrix, in elements.
constexpr std::int64_t kColBudget = std::int64_t(32) << 20;

std::int64_t z_chunk_for(std::int64_t k_rows, std::int64_t oh, std::int64_t ow, std::int64_t od,
                         std::int64_t budget) {
    return std::clamp(budget / std::max<std::int64_t>(1, k_rows * oh * ow), std::int64_t(1), od);
}

bool use_split_merge(const ConvDims& cd, ConvAlgo algo) {
    if (algo == ConvAlgo::kDirect) return false;
    if (algo == ConvAlgo::kSplitMerge) return true;
    // Auto: the gather pays off once the channel mix dominates the taps.
    return cd.c_in * cd.c_out >= 512;
}

}  // namespace

Shape conv3d_output_shape(const Shape& input_shape, const Shape& weights_shape, int dilation,
                          Padding padding) {
    ConvDims cd = resolve_dims(input_shape, weights_shape, dilation, padding);
    return Shape{cd.c_out, cd.od, cd.oh, cd.ow};
}

template <typename T>
TensorT<T> conv3d_forward(const TensorT<T>& input, const TensorT<T>& weights, int dilation,
                          Padding padding, ConvAlgo algo) {
    ConvDims cd = resolve_dims(input.shape(), weights.shape(), dilation, padding);
    TensorT<T> out(Shape{cd.c_out, cd.od, cd.oh, cd.ow});

    if (cd.k == 1) {
        pointwise_core(input.data(), cd.c_in, cd.d * cd.h * cd.w, weights.data(), cd.c_out, out.data());
        debug_check_finite(out, "conv3d_forward");
        return out;
    }

    const T* base = input.data();
    std::int64_t hi = cd.h, wi = cd.w;
    if (padding == Padding::kSame) {
        std::int64_t ed, eh, ew;
        zero_embed(input, cd.r, Scratch<T>::embed(), ed, eh, ew);
        base = Scratch<T>::embed().data();
        hi = eh;
        wi = ew;
    }

    if (use_split_merge(cd, algo)) {
        const std::int64_t s = cd.od * cd.oh * cd.ow;
        const std::int64_t k_rows = cd.c_in * 27;
        const std::int64_t zc = z_chunk_for(k_rows, cd.oh, cd.ow, cd.od, kColBudget);
        auto& col = Scratch<T>::col();
        col.resize(static_cast<std::size_t>(k_rows * zc * cd.oh * cd.ow));
        for (std::int64_t z0 = 0; z0 < cd.od; z0 += zc) {
            const std::int64_t zn = std::min(zc, cd.od - z0);
            vol2col(base, cd.c_in, cd.od + 2 * cd.r, hi, wi, z0, zn, cd.oh, cd.ow, cd.r,
                    col.data());
            gemm(weights.data(), col.data(), out.data() + z0 * cd.oh * cd.ow, cd.c_out, k_rows,
                 zn * cd.oh * cd.ow, s);
        }
    } else {
        valid_core3(base, cd.c_in, cd.od + 2 * cd.r, hi, wi, weights.data(), cd.c_out, cd.r, out.data());
    }
    debug_check_finite(out, "conv3d_forward");
    return out;
}

template <typename T>
TensorT<T> conv3d_grad_input(const TensorT<T>& grad_out, const Shape& input_shape,
                             const TensorT<T>& weights, int dilation, Padding padding, ConvAlgo algo) {
    ConvDims cd = resolve_dims(input_shape, weights.shape(), dilation, padding);
    const Shape expect{cd.c_out, cd.od, cd.oh, cd.ow};
    if (grad_out.shape() != expect) {
        throw DataError("conv3d_grad_input: grad shape " + grad_out.shape().str() +
                        " does not match forward output " + expect.str());
    }

    TensorT<T> grad_in(input_shape);
    if (cd.k == 1) {
        // Transposed channel mix.
        std::vector<T> wt(static_cast<std::size_t>(cd.c_in * cd.c_out));
        for (std::int64_t co = 0; co < cd.c_out; ++co) {
            for (std::int64_t ci = 0; ci < cd.c_in; ++ci) wt[ci * cd.c_out + co] = weights[co * cd.c_in + ci];
        }
        pointwise_core(grad_out.data(), cd.c_out, cd.d * cd.h * cd.w, wt.data(), cd.c_in, grad_in.data());
        return grad_in;
    }

    // grad w.r.t. the (conceptually) padded input is a valid convolution of
    // the zero-embedded grad_out with the flipped, channel-transposed kernel.
    std::vector<T> ft = flip_transpose(weights.data(), cd.c_out, cd.c_in);
    std::int64_t ed, eh, ew;
    zero_embed(grad_out, 2 * cd.r, Scratch<T>::embed(), ed, eh, ew);

    if (use_split_merge(cd, algo)) {
        // Gather only the window that survives the border crop and write it
        // straight into grad_in.
        const std::int64_t off = (padding == Padding::kSame) ? cd.r : 0;
        const std::int64_t s = cd.d * cd.h * cd.w;
        const std::int64_t k_rows = cd.c_out * 27;
        const std::int64_t zc = z_chunk_for(k_rows, cd.h, cd.w, cd.d, kColBudget);
        auto& col = Scratch<T>::col();
        col.resize(static_cast<std::size_t>(k_rows * zc * cd.h * cd.w));
        const T* base = Scratch<T>::embed().data() + off * ew + off;
        for (std::int64_t z0 = 0; z0 < cd.d; z0 += zc) {
            const std::int64_t zn = std::min(zc, cd.d - z0);
            vol2col(base, cd.c_out, ed, eh, ew, off + z0, zn, cd.h, cd.w, cd.r, col.data());
            gemm(ft.data(), col.data(), grad_in.data() + z0 * cd.h * cd.w, cd.c_in, k_rows,
                 zn * cd.h * cd.w, s);
        }
        return grad_in;
    }

    const std::int64_t gd = ed - 2 * cd.r, gh = eh - 2 * cd.r, gw = ew - 2 * cd.r;
    auto& padded_grad = Scratch<T>::aux();
    padded_grad.resize(static_cast<std::size_t>(cd.c_in * gd * gh * gw));
    valid_core3(Scratch<T>::embed().data(), cd.c_out, ed, eh, ew, ft.data(), cd.c_in, cd.r,
                padded_grad.data());

    if (padding == Padding::kValid) {
        // gd == d exactly.
        std::memcpy(grad_in.data(), padded_grad.data(),
                    static_cast<std::size_t>(grad_in.numel()) * sizeof(T));
    } else {
        // Crop the r-voxel border back off.
        for (std::int64_t ci = 0; ci < cd.c_in; ++ci) {
            for (std::int64_t z = 0; z < cd.d; ++z) {
                for (std::int64_t y = 0; y < cd.h; ++y) {
                    const T* src = padded_grad.data() +
                                   ((ci * gd + z + cd.r) * gh + y + cd.r) * gw + cd.r;
                    T* dst = grad_in.data() + ((ci * cd.d + z) * cd.h + y) * cd.w;
                    std::memcpy(dst, src, static_cast<std::size_t>(cd.w) * sizeof(T));
                }
            }
        }
    }
    return grad_in;
}

template <typename T>
TensorT<T> conv3d_grad_weights(const TensorT<T>& grad_out, const TensorT<T>& input,
                               const Shape& weights_shape, int dilation, Padding padding,
                               ConvAlgo algo) {
    ConvDims cd = resolve_dims(input.shape(), weights_shape, dilation, padding);
    const Shape expect{cd.c_out, cd.od, cd.oh, cd.ow};
    if (grad_out.shape() != expect) {
        throw DataError("conv3d_grad_weights: grad shape " + grad_out.shape().str() +
                        " does not match forward output " + expect.str());
    }

    TensorT<T> gw(weights_shape);
    const std::int64_t s = cd.od * cd.oh * cd.ow;

    if (cd.k == 1) {
        for (std::int64_t co = 0; co < cd.c_out; ++co) {
            for (std::int64_t ci = 0; ci < cd.c_in; ++ci) {
                gw[co * cd.c_in + ci] =
                    dot_blocked(grad_out.data() + co * s, input.data() + ci * s, s);
            }
        }
        return gw;
    }

    const T* base = input.data();
    std::int64_t hi = cd.h, wi = cd.w;
    if (padding == Padding::kSame) {
        std::int64_t ed, eh, ew;
        zero_embed(input, cd.r, Scratch<T>::embed(), ed, eh, ew);
        base = Scratch<T>::embed().data();
        hi = eh;
        wi = ew;
    }

    if (use_split_merge(cd, algo)) {
        // Small chunks keep the grad_out slab cache-resident across the
        // (tap row, out channel) dot products.
        const std::int64_t k_rows = cd.c_in * 27;
        const std::int64_t zc = z_chunk_for(k_rows, cd.oh, cd.ow, cd.od, std::int64_t(1) << 22);
        auto& col = Scratch<T>::col();
        col.resize(static_cast<std::size_t>(k_rows * zc * cd.oh * cd.ow));
        for (std::int64_t z0 = 0; z0 < cd.od; z0 += zc) {
            const std::int64_t zn = std::min(zc, cd.od - z0);
            const std::int64_t sc = zn * cd.oh * cd.ow;
            vol2col(base, cd.c_in, cd.od + 2 * cd.r, hi, wi, z0, zn, cd.oh, cd.ow, cd.r,
                    col.data());
            for (std::int64_t krow = 0; krow < k_rows; ++krow) {
                const T* crow = col.data() + krow * sc;
                std::int64_t co = 0;
                for (; co + 8 <= cd.c_out; co += 8) {
                    const T* rows[8];
                    for (int r = 0; r < 8; ++r)
                        rows[r] = grad_out.data() + (co + r) * s + z0 * cd.oh * cd.ow;
                    T part[8];
                    dot_blocked_rows<8>(rows, crow, sc, part);
                    for (int r = 0; r < 8; ++r) gw[(co + r) * k_rows + krow] += part[r];
                }
                for (; co < cd.c_out; ++co) {
                    gw[co * k_rows + krow] +=
                        dot_blocked(grad_out.data() + co * s + z0 * cd.oh * cd.ow, crow, sc);
                }
            }
        }
    } else {
        for (std::int64_t co = 0; co < cd.c_out; ++co) {
            const T* gplane = grad_out.data() + co * s;
            for (std::int64_t ci = 0; ci < cd.c_in; ++ci) {
                const T* iplane = base + ci * (cd.od + 2 * cd.r) * hi * wi;
                T* dst = gw.data() + (co * cd.c_in + ci) * 27;
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) {
                        for (int k = 0; k < 3; ++k) {
                            T acc = T(0);
                            for (std::int64_t z = 0; z < cd.od; ++z) {
                                for (std::int64_t y = 0; y < cd.oh; ++y) {
                                    const T* grow = gplane + (z * cd.oh + y) * cd.ow;
                                    const T* irow =
                                        iplane + (z + i * cd.r) * hi * wi + (y + j * cd.r) * wi + k * cd.r;
                                    acc += dot_blocked(grow, irow, cd.ow);
                                }
                            }
                            dst[i * 9 + j * 3 + k] = acc;
                        }
                    }
                }
            }
        }
    }
    return gw;
}

#define HR3D_INSTANTIATE_CONV(T)                                                                   \
    template TensorT<T> conv3d_forward(const TensorT<T>&, const TensorT<T>&, int, Padding,        \
                                       ConvAlgo);                                                 \
    template TensorT<T> conv3d_grad_input(const TensorT<T>&, const Shape&, const TensorT<T>&,     \
                                          int, Padding, ConvAlgo);                                \
    template TensorT<T> conv3d_grad_weights(const TensorT<T>&, const TensorT<T>&, const Shape&,   \
                                            int, Padding, ConvAlgo);

HR3D_INSTANTIATE_CONV(float)
HR3D_INSTANTIATE_CONV(double)

#undef HR3D_INSTANTIATE_CONV

}  // namespace hr3d
