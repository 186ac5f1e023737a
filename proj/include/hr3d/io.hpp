#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hr3d/network.hpp"
#include "hr3d/tensor.hpp"

namespace hr3d {

// ---- volume files ----------------------------------------------------------
// Text header followed by a raw little-endian payload:
//   hr3dvol 1
//   dtype f32|u16
//   dims <d> <h> <w>
//   channels <c>
//   spacing <sx> <sy> <sz>
//   bytes <n>
//   data
// f32 volumes hold (c,d,h,w) image data, u16 volumes hold (d,h,w) labels.

enum class VoxelType { kF32, kU16 };

struct Volume {
    VoxelType dtype{VoxelType::kF32};
    Tensor image;    // when dtype == kF32
    TensorI labels;  // when dtype == kU16
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
};

struct VolumeHeader {
    VoxelType dtype{VoxelType::kF32};
    std::int64_t channels{1};
    Shape spatial;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
};

VolumeHeader read_volume_header(const std::string& path);
Volume read_volume(const std::string& path);
void write_volume(const std::string& path, const Volume& v);

Volume make_image_volume(Tensor image, std::array<double, 3> spacing = {1, 1, 1});
Volume make_label_volume(TensorI labels, std::array<double, 3> spacing = {1, 1, 1});

// ---- dataset manifest ------------------------------------------------------

struct ManifestEntry {
    std::string image;
    std::string label;
    std::string split;  // train | validation | test
};

struct DatasetManifest {
    std::int64_t num_classes{0};
    std::vector<ManifestEntry> entries;
    std::string root;  // directory the manifest was loaded from

    std::vector<ManifestEntry> split(const std::string& name) const;
    std::string resolve(const std::string& rel) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& m);

// ---- synthetic data --------------------------------------------------------

struct SyntheticSpec {
    std::int64_t size{32};
    std::int64_t num_classes{3};
    std::int64_t train_count{2};
    std::int64_t val_count{1};
    std::int64_t test_count{1};
    std::uint64_t seed{1};
    double noise_sigma{0.05};
    double outer_frac{0.30};  // outermost semi-axis as a fraction of volume size
    double min_radius{2.5};   // innermost semi-axis in voxels
};

// Writes volumes plus manifest.json into out_dir and returns the manifest path.
std::string generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

// ---- flat key=value configuration ------------------------------------------

using Config = std::map<std::string, std::string>;

Config load_config(const std::string& path);
std::string canonical_config(const Config& c);
void save_config(const std::string& path, const Config& c);

// ---- parameter checkpoints -------------------------------------------------
// Archive of named tensors: text manifest (name, dtype, shape, byte offset,
// length) then concatenated little-endian buffers. Byte-exact round trip.

struct Checkpoint {
    Variant variant{Variant::kDefault};
    std::int64_t num_classes{0};
    std::int64_t in_channels{1};
    ParameterStore params;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the architecture and checks the stored tensors cover it with the
// expected shapes. Throws DataError on mismatch.
ArchitectureSpec checkpoint_architecture(const Checkpoint& c);

}  // namespace hr3d
