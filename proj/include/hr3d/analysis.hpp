#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hr3d/inference.hpp"
#include "hr3d/io.hpp"
#include "hr3d/network.hpp"

namespace hr3d {

// Bitmask over the residual blocks in layer order: bit b set means the
// convolutional branch of block b is on the path, clear means the identity
// skip is taken.
using PathSubset = std::uint32_t;

// Extent (voxels per side) of the receptive field along one path through
// the network.  Convs outside residual blocks always contribute; a 3^3 conv
// at dilation r grows the extent by 2r, 1^3 convs add nothing.
std::int64_t receptive_field_of_path(const ArchitectureSpec& spec, PathSubset subset);

struct RFHistogram {
    std::map<std::int64_t, std::int64_t> counts;  // extent -> number of paths
    std::int64_t paths{0};                        // total = 2^blocks
};

// Exact enumeration over all 2^n residual paths (guarded to n <= 24).
RFHistogram rf_histogram(const ArchitectureSpec& spec);

// Empirical receptive-field extent: forward an all-ones volume sized to the
// analytic maximum, push a unit gradient into the centre voxel of the last
// conv output (layers past it are pointwise and cannot widen the footprint)
// and report the bounding-box extent of the nonzero input gradient.  With
// strictly positive weights this meets the analytic extent; on a fitted
// model it reports the effective footprint, which may be smaller.
std::int64_t numeric_rf_probe(const ArchitectureSpec& spec, const ParameterStore& params);

struct BorderPoint {
    std::int64_t border{0};
    double mean_dcs{0};
    double std_err{0};           // sample stddev across volumes / sqrt(n)
    std::int64_t total_voxels{0};  // summed interior voxels actually scored
};

// Mean DCS over a dataset split when only the centred interior at distance
// >= b from every face is scored, for each requested border b.
std::vector<BorderPoint> border_effect_curve_with(const ArchitectureSpec& spec,
                                                  const ParameterStore& params,
                                                  const DatasetManifest& data,
                                                  const std::string& split,
                                                  const std::vector<std::int64_t>& borders,
                                                  const PaddingPolicy& policy);

// Checkpoint-level wrapper: validates the checkpoint and applies its stored
// intensity standardisation before predicting.
std::vector<BorderPoint> border_effect_curve(const Checkpoint& ckpt, const DatasetManifest& data,
                                             const std::string& split,
                                             const std::vector<std::int64_t>& borders,
                                             const PaddingPolicy& policy);

// Smallest border whose DCS the rest of the curve stays within `tol` of;
// falls back to the last border when nothing settles.
std::int64_t detect_plateau(const std::vector<BorderPoint>& curve, double tol = 0.01);

void write_rf_histogram_csv(const RFHistogram& hist, const std::string& path);
void write_border_curve_csv(const std::vector<BorderPoint>& curve, const std::string& path);

}  // namespace hr3d
