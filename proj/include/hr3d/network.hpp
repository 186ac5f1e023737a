#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hr3d/autodiff.hpp"
#include "hr3d/ops.hpp"
#include "hr3d/rng.hpp"
#include "hr3d/tensor.hpp"

namespace hr3d {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;
inline constexpr double kDropoutKeep = 0.5;

enum class LayerKind { kConv, kBatchNorm, kRelu, kDropout, kSoftmax, kResidualBegin, kResidualEnd };

struct LayerSpec {
    LayerKind kind;
    std::string name;          // parameter name prefix for conv / batchnorm
    int kernel = 0;            // conv: 1 or 3
    int dilation = 1;          // conv
    std::int64_t c_in = 0;     // conv / batchnorm channel count
    std::int64_t c_out = 0;    // conv
    double keep_prob = 1.0;    // dropout
};

enum class Variant { kDefault, kDropout, kNoRes };

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

struct ArchitectureSpec {
    std::vector<LayerSpec> layers;
    std::int64_t num_classes = 0;
    std::int64_t in_channels = 1;
    Variant variant = Variant::kDefault;

    std::int64_t residual_block_count() const;
    std::int64_t conv_count(int dilation) const;  // 3^3 convs at the given dilation
    // Dilations of the two convs inside each residual block, in block order.
    std::vector<int> block_dilations() const;
};

// Named tensors in a stable insertion order.  Trainable parameters (conv
// weights, batchnorm gamma/beta) and non-trainable buffers (running stats,
// preprocessing state) share the store; buffers are suffixed ".running_mean",
// ".running_var" or live under "intensity.".
class ParameterStore {
  public:
    void add(const std::string& name, Tensor t);
    bool has(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::vector<std::string> trainable_names() const;
    static bool is_trainable(const std::string& name);

  private:
    std::vector<std::string> order_;
    std::vector<Tensor> tensors_;
    std::int64_t index_of(const std::string& name) const;
};

ArchitectureSpec build_highres3dnet(Variant variant, std::int64_t num_classes,
                                    std::int64_t in_channels = 1);

// He-normal conv weights, gamma 1, beta 0, running stats (0, 1).
ParameterStore init_parameters(const ArchitectureSpec& spec, Rng& rng);

std::int64_t count_parameters(const ParameterStore& store);

// Training-mode tape forward: per-layer batch statistics are captured for
// the trainer's running-stat fold, parameters become differentiable leaves.
struct TapeNet {
    Graph::NodeId scores = -1;
    std::vector<std::pair<std::string, Graph::NodeId>> params;  // encounter order
    std::vector<std::pair<std::string, BnStats<float>>> bn_stats;
};

TapeNet forward_train(Graph& g, const ArchitectureSpec& spec, const ParameterStore& store,
                      const Tensor& input, Rng& dropout_rng);

// Streaming no-tape forward over layers [layer_begin, layer_end).  Uses
// running statistics for batchnorm; dropout is active only when
// sample_dropout is set (Monte Carlo mode), otherwise the identity.
// layer_end of -1 means end of stack.  Range boundaries must not split a
// residual block.
Tensor forward_inference(const ArchitectureSpec& spec, const ParameterStore& store, Tensor x,
                         bool sample_dropout = false, Rng* rng = nullptr,
                         std::int64_t layer_begin = 0, std::int64_t layer_end = -1);

// Index of the first dropout layer, or -1 when the stack has none.
std::int64_t dropout_layer_index(const ArchitectureSpec& spec);

}  // namespace hr3d
