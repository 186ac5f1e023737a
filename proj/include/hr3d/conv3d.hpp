#pragma once

#include "hr3d/tensor.hpp"

namespace hr3d {

enum class Padding {
    kValid,  // output extent shrinks by 2*dilation per spatial dim (3^3 kernels)
    kSame,   // zero padding, output extent equals input extent
};

enum class ConvAlgo {
    kDirect,      // strided-tap loop nest (reference)
    kSplitMerge,  // gather into a column matrix, then matrix multiply
    kAuto,        // pick per layer width
};

// Dilated 3D convolution, centered: tap (i,j,k) of a 3^3 kernel reads the
// input at offset ((i-1)*r, (j-1)*r, (k-1)*r) from the output voxel, so a
// one-hot center kernel is the identity map.  Input is (C_in, D, H, W),
// weights are (C_out, C_in, k, k, k) with k in {1, 3}.
template <typename T>
TensorT<T> conv3d_forward(const TensorT<T>& input, const TensorT<T>& weights, int dilation,
                          Padding padding, ConvAlgo algo = ConvAlgo::kAuto);

// Gradient of a scalar objective w.r.t. the convolution input.
template <typename T>
TensorT<T> conv3d_grad_input(const TensorT<T>& grad_out, const Shape& input_shape,
                             const TensorT<T>& weights, int dilation, Padding padding,
                             ConvAlgo algo = ConvAlgo::kAuto);

// Gradient w.r.t. the kernel weights.
template <typename T>
TensorT<T> conv3d_grad_weights(const TensorT<T>& grad_out, const TensorT<T>& input,
                               const Shape& weights_shape, int dilation, Padding padding,
                               ConvAlgo algo = ConvAlgo::kAuto);

// Output spatial shape for the given padding policy.
Shape conv3d_output_shape(const Shape& input_shape, const Shape& weights_shape, int dilation,
                          Padding padding);

}  // namespace hr3d
