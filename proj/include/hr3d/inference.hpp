#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hr3d/io.hpp"
#include "hr3d/labels.hpp"
#include "hr3d/network.hpp"
#include "hr3d/tensor.hpp"

namespace hr3d {

// Zero-pad the input by `pad` voxels per face before the forward pass and
// crop the same border off the output.  Volumes wider than `tile` are run
// in overlapping tiles (overlap 2*pad) whose interiors are stitched;
// tile 0 disables tiling.
struct PaddingPolicy {
    std::int64_t pad{16};
    std::int64_t tile{0};
};

struct Prediction {
    LabelVolume labels;
    Tensor scores;  // (C,d,h,w), softmax per voxel
};

// Core path: no checkpoint validation, no intensity mapping.  mc_rng
// enables dropout sampling for stochastic forwards.  tiles_out, when given,
// receives the number of forward passes.
Prediction predict_with(const ArchitectureSpec& spec, const ParameterStore& params,
                        const Tensor& image, const PaddingPolicy& policy,
                        Rng* mc_rng = nullptr, std::int64_t* tiles_out = nullptr);

// Validates the checkpoint against its architecture, applies the stored
// intensity standardisation when present, then predicts.
Prediction predict(const Checkpoint& ckpt, const Tensor& image, const PaddingPolicy& policy);

struct UncertaintyMap {
    LabelVolume majority;
    Tensor disagreement;  // (d,h,w), fraction of samples voting against the majority
    std::int64_t samples{0};
};

// Majority vote over congruent label maps; ties break toward the lower
// class id.  disagreement = (samples - majority count) / samples.
UncertaintyMap fuse_label_samples(std::vector<TensorI> samples, std::int64_t num_classes);

// M stochastic dropout forwards fused by per-voxel majority vote; ties go
// to the lower class id.  Sample i draws from child stream i of `seed`.
// The shared sub-dropout features are computed once and only the layers
// from dropout onward are resampled.
UncertaintyMap mc_sample_predict(const Checkpoint& ckpt, const Tensor& image, std::int64_t M,
                                 std::uint64_t seed, const PaddingPolicy& policy = {});

// Reference implementation running the full network per sample; must agree
// bit-for-bit with mc_sample_predict.
UncertaintyMap mc_sample_predict_naive(const Checkpoint& ckpt, const Tensor& image,
                                       std::int64_t M, std::uint64_t seed,
                                       const PaddingPolicy& policy = {});

struct AccuracyPoint {
    double threshold{0};
    double accuracy{0};
    double retained{0};  // fraction of voxels with disagreement < threshold
    bool defined{false};  // false when no voxel passes the threshold
};

std::vector<AccuracyPoint> accuracy_vs_uncertainty(const UncertaintyMap& map,
                                                   const LabelVolume& truth,
                                                   const std::vector<double>& thresholds);

// Mean majority-vote DCS over a dataset split for each sample count; the
// per-sample label volumes are generated once at max(counts) and shared, so
// count M uses the first M samples.
std::vector<std::pair<std::int64_t, double>> samples_vs_dcs(
    const Checkpoint& ckpt, const DatasetManifest& data, const std::string& split,
    const std::vector<std::int64_t>& counts, std::uint64_t seed, const PaddingPolicy& policy = {});

}  // namespace hr3d
