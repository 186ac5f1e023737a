#pragma once

#include <cstdint>

#include "hr3d/autodiff.hpp"
#include "hr3d/conv3d.hpp"
#include "hr3d/rng.hpp"
#include "hr3d/tensor.hpp"

namespace hr3d {

// Per-channel batch statistics of one forward pass; the trainer folds these
// into the running stats at its sync point.
template <typename T>
struct BnStats {
    TensorT<T> mean;  // (C)
    TensorT<T> var;   // (C), population
};

// ---- raw kernels (no tape), used by the streaming inference path ----

// Normalise with per-channel batch stats computed from x itself; gamma/beta
// shaped (C).  Optionally reports the stats.
template <typename T>
TensorT<T> batchnorm_train(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                           double eps, BnStats<T>* stats_out = nullptr);

// Normalise with frozen running stats.
template <typename T>
TensorT<T> batchnorm_infer(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                           const TensorT<T>& running_mean, const TensorT<T>& running_var,
                           double eps);

// In-place EMA fold: running = momentum*running + (1-momentum)*batch.
template <typename T>
void batchnorm_update_running(TensorT<T>& running_mean, TensorT<T>& running_var,
                              const BnStats<T>& batch, double momentum);

// Inverted dropout: kept elements scaled by 1/keep_prob.  keep_prob == 1 is
// the identity and consumes no rng state.
template <typename T>
TensorT<T> dropout_mask(Rng& rng, double keep_prob, const Shape& shape);

// Channel-axis softmax of (C,...) with max subtraction.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& x);

// Appends zero channels: (C,D,H,W) -> (out_channels,D,H,W).
template <typename T>
TensorT<T> pad_channels(const TensorT<T>& x, std::int64_t out_channels);

// ---- tape ops ----

template <typename T>
typename GraphT<T>::NodeId op_conv3d(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                     typename GraphT<T>::NodeId w, int dilation, Padding padding,
                                     ConvAlgo algo = ConvAlgo::kAuto);

template <typename T>
typename GraphT<T>::NodeId op_batchnorm_train(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                              typename GraphT<T>::NodeId gamma,
                                              typename GraphT<T>::NodeId beta, double eps,
                                              BnStats<T>* stats_out = nullptr);

template <typename T>
typename GraphT<T>::NodeId op_dropout(GraphT<T>& g, typename GraphT<T>::NodeId x, double keep_prob,
                                      Rng& rng);

template <typename T>
typename GraphT<T>::NodeId op_softmax_channels(GraphT<T>& g, typename GraphT<T>::NodeId x);

template <typename T>
typename GraphT<T>::NodeId op_pad_channels(GraphT<T>& g, typename GraphT<T>::NodeId x,
                                           std::int64_t out_channels);

}  // namespace hr3d
