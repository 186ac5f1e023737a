#pragma once

#include <cstdint>

#include "hr3d/autodiff.hpp"
#include "hr3d/labels.hpp"
#include "hr3d/tensor.hpp"

namespace hr3d {

// Mean soft Dice handling of classes missing from the ground truth:
// kExcludeAbsent drops them from the class average (their score channels
// get zero gradient); kSmooth keeps every class and adds a small epsilon
// to numerator and denominator instead.
enum class DiceMode { kExcludeAbsent, kSmooth };

inline constexpr double kDiceSmoothEps = 1e-5;
inline constexpr double kLogFloor = 1e-12;

// Mean voxel-wise negative log-likelihood of the true class; scores are
// per-voxel channel distributions (C,D,H,W).
template <typename T>
typename GraphT<T>::NodeId op_cross_entropy(GraphT<T>& g, typename GraphT<T>::NodeId scores,
                                            const LabelVolume& truth);

// One minus the class-averaged soft Dice overlap.
template <typename T>
typename GraphT<T>::NodeId op_dice_loss(GraphT<T>& g, typename GraphT<T>::NodeId scores,
                                        const LabelVolume& truth,
                                        DiceMode mode = DiceMode::kExcludeAbsent);

// Hard per-class overlap 2|P∩T|/(|P|+|T|) of two label maps; 1 when the
// class is absent from both.
double dcs_metric(const LabelVolume& pred, const LabelVolume& truth, std::int64_t cls);

// Average of dcs_metric over the classes present in the truth volume.
double mean_dcs(const LabelVolume& pred, const LabelVolume& truth);

}  // namespace hr3d
