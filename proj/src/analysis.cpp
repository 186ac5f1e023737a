#include "hr3d/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "hr3d/common.hpp"
#include "hr3d/conv3d.hpp"
#include "hr3d/losses.hpp"
#include "hr3d/simd.hpp"
#include "hr3d/training.hpp"

namespace hr3d {

namespace {

// Per-conv extent growth along one path: base covers the always-on layers,
// block_growth[b] the two convs inside residual block b.
struct PathGrowth {
    std::int64_t base{1};
    std::vector<std::int64_t> block_growth;
};

PathGrowth path_growth(const ArchitectureSpec& spec) {
    PathGrowth g;
    bool in_block = false;
    std::int64_t cur = 0;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::kResidualBegin:
                in_block = true;
                cur = 0;
                break;
            case LayerKind::kResidualEnd:
                g.block_growth.push_back(cur);
                in_block = false;
                break;
            case LayerKind::kConv: {
                const std::int64_t grow =
                    static_cast<std::int64_t>(l.kernel - 1) * static_cast<std::int64_t>(l.dilation);
                if (in_block)
                    cur += grow;
                else
                    g.base += grow;
                break;
            }
            default:
                break;
        }
    }
    return g;
}

}  // namespace

std::int64_t receptive_field_of_path(const ArchitectureSpec& spec, PathSubset subset) {
    const PathGrowth g = path_growth(spec);
    const std::size_t n = g.block_growth.size();
    if (n < 32 && (subset >> n) != 0)
        throw UsageError("path mask selects more residual blocks than the network has");
    std::int64_t extent = g.base;
    for (std::size_t b = 0; b < n; ++b)
        if (subset & (PathSubset{1} << b)) extent += g.block_growth[b];
    return extent;
}

RFHistogram rf_histogram(const ArchitectureSpec& spec) {
    const PathGrowth g = path_growth(spec);
    const std::size_t n = g.block_growth.size();
    if (n > 24) throw UsageError("path enumeration capped at 24 residual blocks");

    RFHistogram h;
    h.paths = std::int64_t{1} << n;
    for (std::uint32_t s = 0; s < (std::uint32_t{1} << n); ++s) {
        std::int64_t extent = g.base;
        for (std::size_t b = 0; b < n; ++b)
            if (s & (std::uint32_t{1} << b)) extent += g.block_growth[b];
        ++h.counts[extent];
    }
    return h;
}

// ---- numeric probe --------------------------------------------------------------

namespace {

Tensor slice_channels(const Tensor& x, std::int64_t c) {
    if (x.shape()[0] == c) return x;
    Tensor out(Shape{c, x.shape()[1], x.shape()[2], x.shape()[3]});
    std::memcpy(out.data(), x.data(), sizeof(float) * static_cast<std::size_t>(out.numel()));
    return out;
}

}  // namespace

std::int64_t numeric_rf_probe(const ArchitectureSpec& spec, const ParameterStore& params) {
    flush_denormals_in_this_thread();
    std::int64_t last_conv = -1;
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::kConv) last_conv = static_cast<std::int64_t>(i);
    if (last_conv < 0) throw UsageError("probe needs at least one conv layer");

    const std::int64_t full_mask =
        (std::int64_t{1} << path_growth(spec).block_growth.size()) - 1;
    const std::int64_t e = receptive_field_of_path(spec, static_cast<PathSubset>(full_mask));

    // forward, keeping the input of every layer for the backward sweep
    std::vector<Tensor> act(static_cast<std::size_t>(last_conv) + 1);
    std::vector<std::int64_t> begin_of_end(spec.layers.size(), -1);
    {
        std::vector<std::int64_t> begins;
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            if (spec.layers[i].kind == LayerKind::kResidualBegin)
                begins.push_back(static_cast<std::int64_t>(i));
            if (spec.layers[i].kind == LayerKind::kResidualEnd) {
                if (begins.empty()) throw DataError("probe: unmatched residual end");
                begin_of_end[i] = begins.back();
                begins.pop_back();
            }
        }
    }

    Tensor x = Tensor::full(Shape{spec.in_channels, e, e, e}, 1.0f);
    Tensor skip;
    for (std::int64_t i = 0; i <= last_conv; ++i) {
        act[static_cast<std::size_t>(i)] = x;
        const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
        switch (l.kind) {
            case LayerKind::kConv:
                x = conv3d_forward(x, params.get(l.name + ".w"), l.dilation, Padding::kSame);
                break;
            case LayerKind::kBatchNorm:
                x = batchnorm_infer(x, params.get(l.name + ".gamma"), params.get(l.name + ".beta"),
                                    params.get(l.name + ".running_mean"),
                                    params.get(l.name + ".running_var"), kBnEps);
                break;
            case LayerKind::kRelu:
                x = max0(x);
                break;
            case LayerKind::kDropout:
            case LayerKind::kSoftmax:
                break;
            case LayerKind::kResidualBegin:
                skip = x;
                break;
            case LayerKind::kResidualEnd: {
                Tensor s = skip.shape()[0] != x.shape()[0] ? pad_channels(skip, x.shape()[0])
                                                           : std::move(skip);
                x = add(x, s);
                skip = Tensor();
                break;
            }
        }
    }

    // unit gradient at the centre voxel of the last conv output, channel 0
    Tensor g = Tensor::zeros(x.shape());
    const std::int64_t d = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    g[((0 * d + d / 2) * h + h / 2) * w + w / 2] = 1.0f;

    std::vector<std::pair<std::int64_t, Tensor>> pending;  // begin index -> skip gradient
    for (std::int64_t i = last_conv; i >= 0; --i) {
        const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
        const Tensor& in = act[static_cast<std::size_t>(i)];
        switch (l.kind) {
            case LayerKind::kConv:
                g = conv3d_grad_input(g, in.shape(), params.get(l.name + ".w"), l.dilation,
                                      Padding::kSame);
                break;
            case LayerKind::kBatchNorm: {
                const Tensor& gamma = params.get(l.name + ".gamma");
                const Tensor& var = params.get(l.name + ".running_var");
                const std::int64_t c = g.shape()[0], sp = g.shape()[1] * g.shape()[2] * g.shape()[3];
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const float s = gamma[ch] / std::sqrt(var[ch] + static_cast<float>(kBnEps));
                    for (std::int64_t v = 0; v < sp; ++v) g[ch * sp + v] *= s;
                }
                break;
            }
            case LayerKind::kRelu:
                for (std::int64_t v = 0; v < g.numel(); ++v)
                    if (!(in[v] > 0.0f)) g[v] = 0.0f;
                break;
            case LayerKind::kDropout:
            case LayerKind::kSoftmax:
                break;
            case LayerKind::kResidualEnd: {
                const std::int64_t b = begin_of_end[static_cast<std::size_t>(i)];
                pending.emplace_back(b, g);  // skip branch; conv branch continues as g
                break;
            }
            case LayerKind::kResidualBegin:
                for (auto it = pending.begin(); it != pending.end(); ++it) {
                    if (it->first == i) {
                        g = add(g, slice_channels(it->second, g.shape()[0]));
                        pending.erase(it);
                        break;
                    }
                }
                break;
        }
    }

    std::int64_t lo[3] = {e, e, e}, hi[3] = {-1, -1, -1};
    const std::int64_t c = g.shape()[0];
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t z = 0; z < e; ++z)
            for (std::int64_t y = 0; y < e; ++y)
                for (std::int64_t xx = 0; xx < e; ++xx)
                    if (g[((ch * e + z) * e + y) * e + xx] != 0.0f) {
                        lo[0] = std::min(lo[0], z);
                        lo[1] = std::min(lo[1], y);
                        lo[2] = std::min(lo[2], xx);
                        hi[0] = std::max(hi[0], z);
                        hi[1] = std::max(hi[1], y);
                        hi[2] = std::max(hi[2], xx);
                    }
    if (hi[0] < 0) return 0;
    std::int64_t ext = 0;
    for (int a = 0; a < 3; ++a) ext = std::max(ext, hi[a] - lo[a] + 1);
    return ext;
}

// ---- border effects -------------------------------------------------------------

namespace {

TensorI crop_labels(const TensorI& t, std::int64_t b) {
    const std::int64_t d = t.shape()[0], h = t.shape()[1], w = t.shape()[2];
    TensorI out(Shape{d - 2 * b, h - 2 * b, w - 2 * b});
    const std::int64_t nd = d - 2 * b, nh = h - 2 * b, nw = w - 2 * b;
    for (std::int64_t z = 0; z < nd; ++z)
        for (std::int64_t y = 0; y < nh; ++y)
            std::memcpy(out.data() + (z * nh + y) * nw,
                        t.data() + ((z + b) * h + y + b) * w + b,
                        sizeof(std::int64_t) * static_cast<std::size_t>(nw));
    return out;
}

std::vector<BorderPoint> curve_from_predictions(const std::vector<TensorI>& preds,
                                                const std::vector<TensorI>& truths,
                                                std::int64_t num_classes,
                                                const std::vector<std::int64_t>& borders) {
    std::vector<BorderPoint> curve;
    for (const std::int64_t b : borders) {
        if (b < 0) throw UsageError("border sizes must be non-negative");
        BorderPoint pt;
        pt.border = b;
        std::vector<double> per_vol;
        for (std::size_t v = 0; v < preds.size(); ++v) {
            const Shape& sh = truths[v].shape();
            if (sh[0] <= 2 * b || sh[1] <= 2 * b || sh[2] <= 2 * b)
                throw DataError("border " + std::to_string(b) +
                                " leaves no interior in a " + sh.str() + " volume");
            TensorI p = crop_labels(preds[v], b);
            TensorI t = crop_labels(truths[v], b);
            pt.total_voxels += p.numel();
            per_vol.push_back(
                mean_dcs(LabelVolume{std::move(p), num_classes}, LabelVolume{std::move(t), num_classes}));
        }
        const double n = static_cast<double>(per_vol.size());
        double mean = 0;
        for (const double d : per_vol) mean += d;
        mean /= n;
        double var = 0;
        for (const double d : per_vol) var += (d - mean) * (d - mean);
        pt.mean_dcs = mean;
        pt.std_err = per_vol.size() > 1 ? std::sqrt(var / (n - 1.0)) / std::sqrt(n) : 0.0;
        curve.push_back(pt);
    }
    return curve;
}

}  // namespace

std::vector<BorderPoint> border_effect_curve_with(const ArchitectureSpec& spec,
                                                  const ParameterStore& params,
                                                  const DatasetManifest& data,
                                                  const std::string& split,
                                                  const std::vector<std::int64_t>& borders,
                                                  const PaddingPolicy& policy) {
    const auto entries = data.split(split);
    if (entries.empty()) throw DataError("dataset split '" + split + "' is empty");
    if (borders.empty()) throw UsageError("no border sizes given");

    std::vector<TensorI> preds, truths;
    for (const auto& e : entries) {
        Volume img = read_volume(data.resolve(e.image));
        Volume lab = read_volume(data.resolve(e.label));
        Tensor in = img.image;
        if (params.has(kIntensityKey)) {
            Rng unused(0);
            in = standardize_intensity(in, intensity_from_tensor(params.get(kIntensityKey)),
                                       IntensityMode::kTest, unused);
        }
        preds.push_back(predict_with(spec, params, in, policy).labels.labels);
        truths.push_back(std::move(lab.labels));
    }
    return curve_from_predictions(preds, truths, data.num_classes, borders);
}

std::vector<BorderPoint> border_effect_curve(const Checkpoint& ckpt, const DatasetManifest& data,
                                             const std::string& split,
                                             const std::vector<std::int64_t>& borders,
                                             const PaddingPolicy& policy) {
    ArchitectureSpec spec = checkpoint_architecture(ckpt);
    if (ckpt.num_classes != data.num_classes)
        throw DataError("checkpoint classes do not match the dataset");
    return border_effect_curve_with(spec, ckpt.params, data, split, borders, policy);
}

std::int64_t detect_plateau(const std::vector<BorderPoint>& curve, double tol) {
    if (curve.empty()) throw UsageError("empty border curve");
    for (std::size_t i = 0; i < curve.size(); ++i) {
        bool settled = true;
        for (std::size_t j = i + 1; j < curve.size(); ++j)
            if (std::abs(curve[j].mean_dcs - curve[i].mean_dcs) > tol) settled = false;
        if (settled) return curve[i].border;
    }
    return curve.back().border;
}

void write_rf_histogram_csv(const RFHistogram& hist, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "extent,count\n";
    for (const auto& [extent, count] : hist.counts) out << extent << "," << count << "\n";
    if (!out) throw DataError("failed writing " + path);
}

void write_border_curve_csv(const std::vector<BorderPoint>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "border,mean_dcs,stderr\n";
    char line[128];
    for (const auto& p : curve) {
        std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g\n", static_cast<long long>(p.border),
                      p.mean_dcs, p.std_err);
        out << line;
    }
    if (!out) throw DataError("failed writing " + path);
}

}  // namespace hr3d
