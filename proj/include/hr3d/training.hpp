#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hr3d/io.hpp"
#include "hr3d/labels.hpp"
#include "hr3d/losses.hpp"
#include "hr3d/network.hpp"
#include "hr3d/rng.hpp"
#include "hr3d/tensor.hpp"

namespace hr3d {

// ---- intensity standardisation ----------------------------------------------
// Foreground = voxels above a threshold drawn between the volume minimum and
// mean (training) or fixed at the mean (test).  Foreground deciles are mapped
// piecewise-linearly onto reference landmarks learned from the training set,
// then the volume is z-scored against its foreground statistics.

enum class IntensityMode { kTrain, kTest };

struct IntensityModel {
    std::vector<float> landmarks;  // reference foreground deciles, p10..p90

    bool trained() const { return !landmarks.empty(); }
};

IntensityModel learn_intensity_model(const std::vector<const Tensor*>& train_images);
Tensor standardize_intensity(const Tensor& volume, const IntensityModel& model,
                             IntensityMode mode, Rng& rng);

Tensor intensity_to_tensor(const IntensityModel& m);
IntensityModel intensity_from_tensor(const Tensor& t);

inline constexpr const char* kIntensityKey = "intensity.landmarks";

// ---- augmentation -------------------------------------------------------------

struct SpatialTransform {
    std::array<double, 3> angles_deg{0, 0, 0};  // axial, coronal, sagittal; applied in this order
    double scale{1.0};
};

struct AugmentationConfig {
    double rotate_deg{10.0};
    double scale_lo{0.9};
    double scale_hi{1.1};
    bool enabled{true};
};

// Image (c,d,h,w) resampled trilinearly with zero fill, labels (d,h,w) by
// clamped nearest neighbour.  The identity transform is a bit-exact no-op.
std::pair<Tensor, TensorI> apply_spatial_transform(const Tensor& image, const TensorI& labels,
                                                   const SpatialTransform& t);

std::pair<Tensor, TensorI> augment_subvolume(const Tensor& image, const TensorI& labels,
                                             const AugmentationConfig& cfg, Rng& rng);

// ---- subvolume sampling --------------------------------------------------------

struct SubvolumeSample {
    Tensor image;
    TensorI labels;
    std::array<std::int64_t, 3> origin{0, 0, 0};
};

SubvolumeSample sample_subvolume(const Tensor& image, const TensorI& labels, std::int64_t size,
                                 Rng& rng);

// ---- optimiser ------------------------------------------------------------------

struct AdamConfig {
    double lr{0.01};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
};

struct AdamState {
    AdamConfig cfg;
    std::int64_t t{0};
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

// One bias-corrected update over every entry of grads.  Throws NumericError
// on non-finite gradients.
void adam_step(ParameterStore& params, const std::map<std::string, Tensor>& grads,
               AdamState& state);

// ---- one training step's gradients ----------------------------------------------

struct StepGradients {
    double loss{0};
    double train_dcs{0};  // hard mean DCS of the step's subvolume
    std::map<std::string, Tensor> grads;
    std::vector<std::pair<std::string, BnStats<float>>> bn_stats;
};

StepGradients compute_gradients(const ArchitectureSpec& spec, const ParameterStore& store,
                                const Tensor& image, const LabelVolume& truth,
                                const std::string& loss_kind, DiceMode dice_mode,
                                Rng& dropout_rng);

// ---- training loop ----------------------------------------------------------------

struct TrainConfig {
    Variant arch{Variant::kDefault};
    std::string loss{"dice"};  // dice | xent
    std::int64_t subvolume{24};
    std::int64_t iters{500};
    std::int64_t workers{1};
    std::int64_t val_every{50};
    std::int64_t patience{0};       // 0 disables plateau stopping
    double target_train_dcs{-1.0};  // early stop once the smoothed train DCS reaches this
    std::uint64_t seed{1};
    AdamConfig adam;
    AugmentationConfig augment;
    DiceMode dice_mode{DiceMode::kExcludeAbsent};
    bool standardize{true};
};

struct TrainResult {
    Checkpoint best;
    double best_val_dcs{-1.0};
    double final_train_dcs{0.0};  // smoothed over the last 25 steps
    std::int64_t steps_run{0};
    std::string metrics_path;
    std::string checkpoint_path;
};

TrainResult train(const DatasetManifest& data, const TrainConfig& cfg, const std::string& out_dir);

}  // namespace hr3d
