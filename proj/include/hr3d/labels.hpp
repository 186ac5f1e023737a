#pragma once

#include <cstdint>

#include "hr3d/tensor.hpp"

namespace hr3d {

// Per-voxel class ids, 0-based, shape (D,H,W).
struct LabelVolume {
    TensorI labels;
    std::int64_t num_classes = 0;

    LabelVolume() = default;
    LabelVolume(TensorI l, std::int64_t c) : labels(std::move(l)), num_classes(c) { validate(); }

    void validate() const {
        if (labels.shape().rank() != 3) {
            throw DataError("labels must be (D,H,W), got " + labels.shape().str());
        }
        if (num_classes < 2) throw DataError("label volume needs at least 2 classes");
        for (std::int64_t i = 0; i < labels.numel(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw DataError("label " + std::to_string(labels[i]) + " out of range [0," +
                                std::to_string(num_classes) + ") at flat index " + std::to_string(i));
            }
        }
    }
};

}  // namespace hr3d
