#include "hr3d/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hr3d/common.hpp"
#include "hr3d/training.hpp"

namespace hr3d {

namespace {

Tensor zero_pad3(const Tensor& x, std::int64_t p) {
    if (p == 0) return x;
    const std::int64_t c = x.shape()[0], d = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out = Tensor::zeros(Shape{c, d + 2 * p, h + 2 * p, w + 2 * p});
    const std::int64_t oh = h + 2 * p, ow = w + 2 * p, od = d + 2 * p;
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t z = 0; z < d; ++z)
            for (std::int64_t y = 0; y < h; ++y)
                std::memcpy(out.data() + ((ch * od + z + p) * oh + y + p) * ow + p,
                            x.data() + ((ch * d + z) * h + y) * w,
                            sizeof(float) * static_cast<std::size_t>(w));
    return out;
}

Tensor crop3(const Tensor& x, std::int64_t p) {
    if (p == 0) return x;
    const std::int64_t c = x.shape()[0], d = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out(Shape{c, d - 2 * p, h - 2 * p, w - 2 * p});
    const std::int64_t nd = d - 2 * p, nh = h - 2 * p, nw = w - 2 * p;
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t z = 0; z < nd; ++z)
            for (std::int64_t y = 0; y < nh; ++y)
                std::memcpy(out.data() + ((ch * nd + z) * nh + y) * nw,
                            x.data() + ((ch * d + z + p) * h + y + p) * w + p,
                            sizeof(float) * static_cast<std::size_t>(nw));
    return out;
}

// Tile origins along one axis: stride tile-2*halo, last tile flush with the
// end.  Each origin also carries the half-open interval of output voxels it
// is responsible for; intervals partition [0, extent).
struct AxisTile {
    std::int64_t origin;
    std::int64_t keep_begin;
    std::int64_t keep_end;
};

std::vector<AxisTile> axis_tiles(std::int64_t extent, std::int64_t tile, std::int64_t halo) {
    std::vector<AxisTile> out;
    if (tile <= 0 || extent <= tile) {
        out.push_back({0, 0, extent});
        return out;
    }
    const std::int64_t stride = tile - 2 * halo;
    std::int64_t covered = 0;
    std::int64_t o = 0;
    for (;;) {
        const bool last = o >= extent - tile;
        if (last) o = extent - tile;
        const std::int64_t begin = std::max<std::int64_t>(covered, o == 0 ? 0 : o + halo);
        const std::int64_t end = last ? extent : o + tile - halo;
        out.push_back({o, begin, end});
        covered = end;
        if (last) break;
        o += stride;
    }
    return out;
}

Tensor slice3(const Tensor& x, std::int64_t z0, std::int64_t y0, std::int64_t x0,
              std::int64_t size) {
    const std::int64_t c = x.shape()[0], d = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    (void)d;
    Tensor out(Shape{c, size, size, size});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t z = 0; z < size; ++z)
            for (std::int64_t y = 0; y < size; ++y)
                std::memcpy(out.data() + ((ch * size + z) * size + y) * size,
                            x.data() + ((ch * d + z0 + z) * h + y0 + y) * w + x0,
                            sizeof(float) * static_cast<std::size_t>(size));
    return out;
}

// Scores for the padded frame, tiled when the frame exceeds the tile size.
Tensor forward_padded(const ArchitectureSpec& spec, const ParameterStore& params,
                      const Tensor& padded, std::int64_t tile, std::int64_t halo, Rng* mc_rng,
                      std::int64_t* tiles_out) {
    const std::int64_t d = padded.shape()[1], h = padded.shape()[2], w = padded.shape()[3];
    const bool tiled = tile > 0 && (d > tile || h > tile || w > tile);
    if (!tiled) {
        if (tiles_out) *tiles_out = 1;
        return forward_inference(spec, params, padded, mc_rng != nullptr, mc_rng);
    }
    if (d < tile || h < tile || w < tile)
        throw DataError("tiling needs every padded extent to reach the tile size");
    if (tile <= 2 * halo)
        throw DataError("tile size must exceed twice the padding halo");

    const auto tz = axis_tiles(d, tile, halo);
    const auto ty = axis_tiles(h, tile, halo);
    const auto tx = axis_tiles(w, tile, halo);
    Tensor scores;  // allocated after the first tile reveals C
    std::int64_t count = 0;
    for (const auto& az : tz)
        for (const auto& ay : ty)
            for (const auto& ax : tx) {
                Tensor in = slice3(padded, az.origin, ay.origin, ax.origin, tile);
                Tensor out = forward_inference(spec, params, std::move(in),
                                               mc_rng != nullptr, mc_rng);
                ++count;
                const std::int64_t cc = out.shape()[0];
                if (scores.numel() == 0) scores = Tensor(Shape{cc, d, h, w});
                for (std::int64_t ch = 0; ch < cc; ++ch)
                    for (std::int64_t z = az.keep_begin; z < az.keep_end; ++z)
                        for (std::int64_t y = ay.keep_begin; y < ay.keep_end; ++y) {
                            const std::int64_t n = ax.keep_end - ax.keep_begin;
                            std::memcpy(
                                scores.data() + ((ch * d + z) * h + y) * w + ax.keep_begin,
                                out.data() +
                                    ((ch * tile + z - az.origin) * tile + y - ay.origin) * tile +
                                    ax.keep_begin - ax.origin,
                                sizeof(float) * static_cast<std::size_t>(n));
                        }
            }
    if (tiles_out) *tiles_out = count;
    return scores;
}

}  // namespace

Prediction predict_with(const ArchitectureSpec& spec, const ParameterStore& params,
                        const Tensor& image, const PaddingPolicy& policy, Rng* mc_rng,
                        std::int64_t* tiles_out) {
    if (image.shape().rank() != 4 || image.shape()[0] != spec.in_channels)
        throw DataError("predict expects a (" + std::to_string(spec.in_channels) +
                        ",d,h,w) image");
    if (policy.pad < 0) throw DataError("padding must be non-negative");

    Tensor padded = zero_pad3(image, policy.pad);
    Tensor scores = forward_padded(spec, params, padded, policy.tile, policy.pad, mc_rng, tiles_out);
    scores = crop3(scores, policy.pad);

    Prediction p;
    p.labels = LabelVolume{argmax(scores, 0), spec.num_classes};
    p.scores = std::move(scores);
    return p;
}

Prediction predict(const Checkpoint& ckpt, const Tensor& image, const PaddingPolicy& policy) {
    ArchitectureSpec spec = checkpoint_architecture(ckpt);
    Tensor in = image;
    if (ckpt.params.has(kIntensityKey)) {
        Rng unused(0);
        in = standardize_intensity(image, intensity_from_tensor(ckpt.params.get(kIntensityKey)),
                                   IntensityMode::kTest, unused);
    }
    return predict_with(spec, ckpt.params, in, policy);
}

// ---- Monte Carlo sampling -----------------------------------------------------

UncertaintyMap fuse_label_samples(std::vector<TensorI> sample_labels, std::int64_t num_classes) {
    if (sample_labels.empty()) throw UsageError("vote fusion needs at least one sample");
    if (num_classes < 2) throw UsageError("vote fusion needs at least two classes");
    const std::int64_t m = static_cast<std::int64_t>(sample_labels.size());
    const Shape& sh = sample_labels[0].shape();
    for (const auto& s : sample_labels)
        if (!(s.shape() == sh)) throw DataError("vote fusion needs congruent label maps");
    const std::int64_t n = sh.numel();

    std::vector<std::int32_t> counts(static_cast<std::size_t>(n * num_classes), 0);
    for (const auto& s : sample_labels)
        for (std::int64_t i = 0; i < n; ++i)
            ++counts[static_cast<std::size_t>(s[i] * n + i)];

    UncertaintyMap out;
    out.samples = m;
    out.majority = LabelVolume{TensorI(sh), num_classes};
    out.disagreement = Tensor(sh);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        std::int32_t best_count = counts[static_cast<std::size_t>(i)];
        for (std::int64_t c = 1; c < num_classes; ++c) {
            const std::int32_t k = counts[static_cast<std::size_t>(c * n + i)];
            if (k > best_count) {
                best_count = k;
                best = c;
            }
        }
        out.majority.labels[i] = best;
        out.disagreement[i] =
            static_cast<float>(static_cast<double>(m - best_count) / static_cast<double>(m));
    }
    return out;
}

namespace {

Tensor standardized_input(const Checkpoint& ckpt, const Tensor& image) {
    if (!ckpt.params.has(kIntensityKey)) return image;
    Rng unused(0);
    return standardize_intensity(image, intensity_from_tensor(ckpt.params.get(kIntensityKey)),
                                 IntensityMode::kTest, unused);
}

void require_mc(const Checkpoint& ckpt, std::int64_t m) {
    if (m < 1) throw UsageError("Monte Carlo sampling needs at least one sample");
    if (ckpt.variant != Variant::kDropout)
        throw DataError("Monte Carlo sampling needs a dropout-variant checkpoint");
}

// Per-sample label maps; sample i draws from parent.child(i).  The layers
// below dropout are shared across samples whenever the volume runs in a
// single pass; tiled volumes fall back to full per-sample passes because
// the cached features would not cross tile seams.
std::vector<TensorI> mc_sample_labels(const ArchitectureSpec& spec, const ParameterStore& params,
                                      const Tensor& in, std::int64_t m, const Rng& parent,
                                      const PaddingPolicy& policy) {
    std::vector<TensorI> votes;
    votes.reserve(static_cast<std::size_t>(m));

    const std::int64_t d = in.shape()[1], h = in.shape()[2], w = in.shape()[3];
    const bool tiled =
        policy.tile > 0 && (d + 2 * policy.pad > policy.tile || h + 2 * policy.pad > policy.tile ||
                            w + 2 * policy.pad > policy.tile);
    if (tiled) {
        for (std::int64_t i = 0; i < m; ++i) {
            Rng r = parent.child(static_cast<std::uint64_t>(i));
            Prediction p = predict_with(spec, params, in, policy, &r);
            votes.push_back(std::move(p.labels.labels));
        }
        return votes;
    }

    const std::int64_t split = dropout_layer_index(spec);
    Tensor trunk =
        forward_inference(spec, params, zero_pad3(in, policy.pad), false, nullptr, 0, split);
    for (std::int64_t i = 0; i < m; ++i) {
        Rng r = parent.child(static_cast<std::uint64_t>(i));
        Tensor scores = forward_inference(spec, params, trunk, true, &r, split, -1);
        votes.push_back(argmax(crop3(scores, policy.pad), 0));
    }
    return votes;
}

}  // namespace

UncertaintyMap mc_sample_predict(const Checkpoint& ckpt, const Tensor& image, std::int64_t M,
                                 std::uint64_t seed, const PaddingPolicy& policy) {
    require_mc(ckpt, M);
    ArchitectureSpec spec = checkpoint_architecture(ckpt);
    Tensor in = standardized_input(ckpt, image);
    Rng master(seed);
    return fuse_label_samples(mc_sample_labels(spec, ckpt.params, in, M, master, policy),
                      spec.num_classes);
}

UncertaintyMap mc_sample_predict_naive(const Checkpoint& ckpt, const Tensor& image,
                                       std::int64_t M, std::uint64_t seed,
                                       const PaddingPolicy& policy) {
    require_mc(ckpt, M);
    ArchitectureSpec spec = checkpoint_architecture(ckpt);
    Tensor in = standardized_input(ckpt, image);

    Rng master(seed);
    std::vector<TensorI> votes;
    votes.reserve(static_cast<std::size_t>(M));
    for (std::int64_t i = 0; i < M; ++i) {
        Rng r = master.child(static_cast<std::uint64_t>(i));
        Prediction p = predict_with(spec, ckpt.params, in, policy, &r);
        votes.push_back(std::move(p.labels.labels));
    }
    return fuse_label_samples(std::move(votes), spec.num_classes);
}

// ---- uncertainty curves ---------------------------------------------------------

std::vector<AccuracyPoint> accuracy_vs_uncertainty(const UncertaintyMap& map,
                                                   const LabelVolume& truth,
                                                   const std::vector<double>& thresholds) {
    if (!(map.majority.labels.shape() == truth.labels.shape()))
        throw DataError("uncertainty map and truth have different shapes");
    const std::int64_t n = truth.labels.numel();

    std::vector<AccuracyPoint> out;
    out.reserve(thresholds.size());
    for (const double t : thresholds) {
        std::int64_t kept = 0, correct = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (map.disagreement[i] < t) {
                ++kept;
                correct += map.majority.labels[i] == truth.labels[i];
            }
        }
        AccuracyPoint p;
        p.threshold = t;
        p.retained = static_cast<double>(kept) / static_cast<double>(n);
        p.defined = kept > 0;
        p.accuracy = p.defined ? static_cast<double>(correct) / static_cast<double>(kept) : 0.0;
        out.push_back(p);
    }
    return out;
}

std::vector<std::pair<std::int64_t, double>> samples_vs_dcs(
    const Checkpoint& ckpt, const DatasetManifest& data, const std::string& split,
    const std::vector<std::int64_t>& counts, std::uint64_t seed, const PaddingPolicy& policy) {
    if (counts.empty()) return {};
    std::int64_t max_m = 0;
    for (const std::int64_t m : counts) {
        if (m < 1) throw UsageError("sample counts must be positive");
        max_m = std::max(max_m, m);
    }
    require_mc(ckpt, max_m);
    ArchitectureSpec spec = checkpoint_architecture(ckpt);

    const auto entries = data.split(split);
    if (entries.empty()) throw DataError("dataset split '" + split + "' is empty");

    // per volume: all max_m sample label maps, generated once
    std::vector<std::vector<TensorI>> sampled;
    std::vector<TensorI> truths;
    Rng master(seed);
    std::int64_t vol_idx = 0;
    for (const auto& e : entries) {
        Volume img = read_volume(data.resolve(e.image));
        Volume lab = read_volume(data.resolve(e.label));
        Tensor in = standardized_input(ckpt, img.image);
        Rng vol_rng = master.child(static_cast<std::uint64_t>(vol_idx++));
        sampled.push_back(mc_sample_labels(spec, ckpt.params, in, max_m, vol_rng, policy));
        truths.push_back(std::move(lab.labels));
    }

    std::vector<std::pair<std::int64_t, double>> table;
    for (const std::int64_t m : counts) {
        double acc = 0;
        for (std::size_t v = 0; v < sampled.size(); ++v) {
            std::vector<TensorI> first(sampled[v].begin(), sampled[v].begin() + m);
            UncertaintyMap fused = fuse_label_samples(std::move(first), data.num_classes);
            acc += mean_dcs(fused.majority, LabelVolume{truths[v], data.num_classes});
        }
        table.emplace_back(m, acc / static_cast<double>(sampled.size()));
    }
    return table;
}

}  // namespace hr3d
