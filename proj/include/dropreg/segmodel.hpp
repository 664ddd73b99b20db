#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dropreg/checkpoint.hpp"
#include "dropreg/ops.hpp"
#include "dropreg/regularizers.hpp"
#include "dropreg/tensor.hpp"

namespace dropreg {

struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t num_classes = 21;
    std::vector<std::size_t> stage_widths = {16, 32, 64};
    std::size_t blocks_per_stage = 2;
    std::vector<int> pyramid_rates = {1, 2, 4};  // plus a global-average branch
    std::size_t decoder_width = 32;
    std::size_t output_stride = 8;

    void validate() const;
};

// The three insertion points. BackboneBlocks applies after every residual
// block's post-addition activation, SppOutput after pyramid fusion,
// DecoderOutput after the last decoder feature map (before the classifier).
enum class HookSite : std::size_t { BackboneBlocks = 0, SppOutput = 1, DecoderOutput = 2 };

using HookSpecs = std::array<RegularizerSpec, 3>;

inline RegularizerSpec& hook_at(HookSpecs& hooks, HookSite site) {
    return hooks[static_cast<std::size_t>(site)];
}
inline const RegularizerSpec& hook_at(const HookSpecs& hooks, HookSite site) {
    return hooks[static_cast<std::size_t>(site)];
}

enum class ParamGroupId { Backbone, Head };

// Partition of the trainable parameters with per-group LR multipliers:
// pretrained-style backbone at 1x, freshly initialized heads at 10x.
struct ParameterGroup {
    ParamGroupId id = ParamGroupId::Backbone;
    double lr_multiplier = 1.0;
    std::vector<NamedTensor> params;
};

// Scaled-down encoder/pyramid/decoder segmentation network: residual
// backbone, multi-rate dilated pyramid with 1x1 fusion, low-level-skip
// decoder, logits restored to input resolution.
class SegModel {
  public:
    SegModel(const ModelConfig& config, const HookSpecs& hooks, std::uint64_t seed);

    // Regularizers run only in Train mode; eval is deterministic.
    Tensor forward(ComputationTape* tape, const Tensor& input, RegularizerMode mode,
                   int epoch = 0, int batch_index = 0);

    const ModelConfig& config() const { return config_; }
    const HookSpecs& hooks() const { return hooks_; }

    std::vector<NamedTensor> named_parameters() const;  // trainable leaves
    std::vector<NamedTensor> named_buffers() const;     // BN running statistics
    std::array<ParameterGroup, 2> parameter_groups() const;
    std::size_t parameter_count() const;

    // Copies values into same-named tensors. strict requires exact coverage;
    // otherwise the name intersection is loaded (partial backbone bootstrap).
    void load_state(const std::vector<NamedTensor>& state, bool strict = true);

  private:
    struct ConvLayer {
        Tensor weight;  // (out, in, k, k)
        Tensor bias;    // invalid when BN follows
        int stride = 1, padding = 0, dilation = 1;
    };
    struct ConvBn {
        ConvLayer conv;
        ops::BatchNormState bn;
        std::string bn_name;
    };
    struct ResidualBlock {
        ConvBn c1, c2;
        bool has_projection = false;
        ConvBn projection;
    };

    ConvLayer make_conv(const std::string& name, ParamGroupId group, std::size_t in,
                        std::size_t out, std::size_t k, int stride, int padding, int dilation,
                        bool bias, std::uint64_t seed);
    ConvBn make_conv_bn(const std::string& name, ParamGroupId group, std::size_t in,
                        std::size_t out, std::size_t k, int stride, int padding, int dilation,
                        std::uint64_t seed);

    void index_bn_states();
    Tensor run_conv(ComputationTape* tape, const ConvLayer& layer, const Tensor& x);
    Tensor run_conv_bn(ComputationTape* tape, ConvBn& layer, const Tensor& x,
                       RegularizerMode mode, bool relu_after = true);

    ModelConfig config_;
    HookSpecs hooks_;

    ConvBn stem_;
    std::vector<std::vector<ResidualBlock>> stages_;
    std::vector<int> stage_strides_;
    std::vector<int> stage_dilations_;
    std::vector<ConvBn> pyramid_branches_;
    ConvLayer global_branch_;  // 1x1 conv on pooled features, no BN
    ConvBn fuse_;
    ConvBn low_reducer_;
    ConvBn decoder1_, decoder2_;
    ConvLayer classifier_;

    struct Registered {
        std::string name;
        Tensor tensor;
        ParamGroupId group;
    };
    std::vector<Registered> params_;
    std::vector<ops::BatchNormState*> bn_states_;
    std::vector<std::string> bn_names_;
    std::size_t param_cursor_ = 0;  // per-parameter init stream index
};

}  // namespace dropreg
