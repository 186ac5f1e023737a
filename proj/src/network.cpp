#include "hr3d/network.hpp"

#include <algorithm>
#include <cmath>

#include "hr3d/common.hpp"
#include "hr3d/simd.hpp"

namespace hr3d {

Variant variant_from_string(const std::string& s) {
    if (s == "default") return Variant::kDefault;
    if (s == "dropout") return Variant::kDropout;
    if (s == "nores") return Variant::kNoRes;
    throw UsageError("unknown architecture variant '" + s + "' (default, dropout, nores)");
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::kDefault: return "default";
        case Variant::kDropout: return "dropout";
        case Variant::kNoRes: return "nores";
    }
    return "default";
}

std::int64_t ArchitectureSpec::residual_block_count() const {
    std::int64_t n = 0;
    for (const auto& l : layers) n += (l.kind == LayerKind::kResidualBegin);
    return n;
}

std::int64_t ArchitectureSpec::conv_count(int dilation) const {
    std::int64_t n = 0;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::kConv && l.kernel == 3 && l.dilation == dilation) ++n;
    }
    return n;
}

std::vector<int> ArchitectureSpec::block_dilations() const {
    std::vector<int> out;
    bool in_block = false;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::kResidualBegin) in_block = true;
        if (l.kind == LayerKind::kResidualEnd) in_block = false;
        if (in_block && l.kind == LayerKind::kConv) out.push_back(l.dilation);
    }
    return out;
}

void ParameterStore::add(const std::string& name, Tensor t) {
    if (has(name)) throw DataError("parameter '" + name + "' registered twice");
    order_.push_back(name);
    tensors_.push_back(std::move(t));
}

bool ParameterStore::has(const std::string& name) const { return index_of(name) >= 0; }

std::int64_t ParameterStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < order_.size(); ++i) {
        if (order_[i] == name) return static_cast<std::int64_t>(i);
    }
    return -1;
}

Tensor& ParameterStore::get(const std::string& name) {
    const std::int64_t i = index_of(name);
    if (i < 0) throw DataError("unknown parameter '" + name + "'");
    return tensors_[static_cast<std::size_t>(i)];
}

const Tensor& ParameterStore::get(const std::string& name) const {
    const std::int64_t i = index_of(name);
    if (i < 0) throw DataError("unknown parameter '" + name + "'");
    return tensors_[static_cast<std::size_t>(i)];
}

bool ParameterStore::is_trainable(const std::string& name) {
    if (name.rfind("intensity.", 0) == 0) return false;
    const auto ends_with = [&](const char* suffix) {
        const std::string s(suffix);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return !ends_with(".running_mean") && !ends_with(".running_var");
}

std::vector<std::string> ParameterStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& n : order_) {
        if (is_trainable(n)) out.push_back(n);
    }
    return out;
}

ArchitectureSpec build_highres3dnet(Variant variant, std::int64_t num_classes,
                                    std::int64_t in_channels) {
    if (num_classes < 2) throw DataError("network needs at least 2 classes");
    if (in_channels < 1) throw DataError("network needs at least 1 input channel");

    ArchitectureSpec spec;
    spec.num_classes = num_classes;
    spec.in_channels = in_channels;
    spec.variant = variant;
    const bool residual = variant != Variant::kNoRes;

    auto conv = [&](const std::string& name, int kernel, int dilation, std::int64_t ci,
                    std::int64_t co) {
        spec.layers.push_back({LayerKind::kConv, name, kernel, dilation, ci, co, 1.0});
    };
    auto bn = [&](const std::string& name, std::int64_t c) {
        spec.layers.push_back({LayerKind::kBatchNorm, name, 0, 1, c, c, 1.0});
    };
    auto relu = [&] { spec.layers.push_back({LayerKind::kRelu, "", 0, 1, 0, 0, 1.0}); };

    conv("conv_in", 3, 1, in_channels, 16);

    const int stage_dilation[3] = {1, 2, 4};
    const std::int64_t stage_width[3] = {16, 32, 64};
    std::int64_t cur = 16;
    for (int s = 0; s < 3; ++s) {
        const std::int64_t width = stage_width[s];
        const int r = stage_dilation[s];
        for (int b = 0; b < 3; ++b) {
            const std::string p = "s" + std::to_string(s + 1) + "b" + std::to_string(b + 1);
            if (residual) spec.layers.push_back({LayerKind::kResidualBegin, "", 0, 1, 0, 0, 1.0});
            bn(p + ".bn1", cur);
            relu();
            conv(p + ".conv1", 3, r, cur, width);
            bn(p + ".bn2", width);
            relu();
            conv(p + ".conv2", 3, r, width, width);
            if (residual) spec.layers.push_back({LayerKind::kResidualEnd, "", 0, 1, 0, 0, 1.0});
            cur = width;
        }
    }

    if (variant == Variant::kDropout) {
        conv("head.conv", 1, 1, cur, 80);
        relu();
        spec.layers.push_back({LayerKind::kDropout, "", 0, 1, 0, 0, kDropoutKeep});
        cur = 80;
    }
    conv("classifier", 1, 1, cur, num_classes);
    spec.layers.push_back({LayerKind::kSoftmax, "", 0, 1, 0, 0, 1.0});
    return spec;
}

ParameterStore init_parameters(const ArchitectureSpec& spec, Rng& rng) {
    ParameterStore store;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::kConv) {
            const double fan_in = static_cast<double>(l.kernel) * l.kernel * l.kernel * l.c_in;
            const double sigma = std::sqrt(2.0 / fan_in);
            store.add(l.name + ".w",
                      random_fill<float>(rng, Dist::kNormal, 0.0, sigma,
                                         Shape{l.c_out, l.c_in, l.kernel, l.kernel, l.kernel}));
        } else if (l.kind == LayerKind::kBatchNorm) {
            store.add(l.name + ".gamma", Tensor::full(Shape{l.c_in}, 1.0f));
            store.add(l.name + ".beta", Tensor(Shape{l.c_in}));
            store.add(l.name + ".running_mean", Tensor(Shape{l.c_in}));
            store.add(l.name + ".running_var", Tensor::full(Shape{l.c_in}, 1.0f));
        }
    }
    return store;
}

std::int64_t count_parameters(const ParameterStore& store) {
    std::int64_t n = 0;
    for (const auto& name : store.trainable_names()) n += store.get(name).numel();
    return n;
}

TapeNet forward_train(Graph& g, const ArchitectureSpec& spec, const ParameterStore& store,
                      const Tensor& input, Rng& dropout_rng) {
    if (input.shape().rank() != 4 || input.shape()[0] != spec.in_channels) {
        throw DataError("forward: input must be (" + std::to_string(spec.in_channels) +
                        ",D,H,W), got " + input.shape().str());
    }
    TapeNet net;
    auto param = [&](const std::string& name) {
        auto id = g.leaf(store.get(name), true);
        net.params.emplace_back(name, id);
        return id;
    };

    Graph::NodeId cur = g.leaf(input, false);
    Graph::NodeId skip = -1;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::kConv:
                cur = op_conv3d(g, cur, param(l.name + ".w"), l.dilation, Padding::kSame);
                break;
            case LayerKind::kBatchNorm: {
                BnStats<float> stats;
                cur = op_batchnorm_train(g, cur, param(l.name + ".gamma"), param(l.name + ".beta"),
                                         kBnEps, &stats);
                net.bn_stats.emplace_back(l.name, std::move(stats));
                break;
            }
            case LayerKind::kRelu:
                cur = op_relu(g, cur);
                break;
            case LayerKind::kDropout:
                cur = op_dropout(g, cur, l.keep_prob, dropout_rng);
                break;
            case LayerKind::kSoftmax:
                cur = op_softmax_channels(g, cur);
                break;
            case LayerKind::kResidualBegin:
                skip = cur;
                break;
            case LayerKind::kResidualEnd: {
                const std::int64_t want = g.value(cur).shape()[0];
                const std::int64_t have = g.value(skip).shape()[0];
                Graph::NodeId s = skip;
                if (have != want) s = op_pad_channels(g, s, want);
                cur = op_add(g, cur, s);
                skip = -1;
                break;
            }
        }
    }
    net.scores = cur;
    return net;
}

Tensor forward_inference(const ArchitectureSpec& spec, const ParameterStore& store, Tensor x,
                         bool sample_dropout, Rng* rng, std::int64_t layer_begin,
                         std::int64_t layer_end) {
    flush_denormals_in_this_thread();
    const std::int64_t n_layers = static_cast<std::int64_t>(spec.layers.size());
    if (layer_end < 0) layer_end = n_layers;
    if (layer_begin < 0 || layer_begin > layer_end || layer_end > n_layers) {
        throw DataError("forward: bad layer range");
    }
    if (layer_begin == 0 && (x.shape().rank() != 4 || x.shape()[0] != spec.in_channels)) {
        throw DataError("forward: input must be (" + std::to_string(spec.in_channels) +
                        ",D,H,W), got " + x.shape().str());
    }
    if (sample_dropout && rng == nullptr) {
        throw DataError("forward: Monte Carlo dropout needs an rng");
    }

    Tensor skip;
    bool have_skip = false;
    for (std::int64_t i = layer_begin; i < layer_end; ++i) {
        const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
        switch (l.kind) {
            case LayerKind::kConv:
                x = conv3d_forward(x, store.get(l.name + ".w"), l.dilation, Padding::kSame);
                break;
            case LayerKind::kBatchNorm:
                x = batchnorm_infer(x, store.get(l.name + ".gamma"), store.get(l.name + ".beta"),
                                    store.get(l.name + ".running_mean"),
                                    store.get(l.name + ".running_var"), kBnEps);
                break;
            case LayerKind::kRelu:
                x = max0(x);
                break;
            case LayerKind::kDropout:
                if (sample_dropout) x = mul(x, dropout_mask<float>(*rng, l.keep_prob, x.shape()));
                break;
            case LayerKind::kSoftmax:
                x = softmax_channels(x);
                break;
            case LayerKind::kResidualBegin:
                skip = x;
                have_skip = true;
                break;
            case LayerKind::kResidualEnd: {
                if (!have_skip) throw DataError("forward: layer range splits a residual block");
                Tensor s = skip.shape()[0] != x.shape()[0] ? pad_channels(skip, x.shape()[0])
                                                           : std::move(skip);
                x = add(x, s);
                skip = Tensor();
                have_skip = false;
                break;
            }
        }
    }
    if (have_skip) throw DataError("forward: layer range splits a residual block");
    return x;
}

std::int64_t dropout_layer_index(const ArchitectureSpec& spec) {
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::kDropout) return static_cast<std::int64_t>(i);
    }
    return -1;
}

}  // namespace hr3d
