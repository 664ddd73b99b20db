#include "dropreg/segmodel.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dropreg/errors.hpp"
#include "dropreg/rng.hpp"

namespace dropreg {

void ModelConfig::validate() const {
    if (in_channels == 0 || num_classes < 2) throw ConfigError("model: need inputs and >= 2 classes");
    if (stage_widths.empty()) throw ConfigError("model: stage_widths must be nonempty");
    for (std::size_t w : stage_widths)
        if (w == 0) throw ConfigError("model: stage widths must be positive");
    if (blocks_per_stage == 0) throw ConfigError("model: blocks_per_stage must be >= 1");
    if (pyramid_rates.empty()) throw ConfigError("model: pyramid_rates must be nonempty");
    std::vector<int> rates = pyramid_rates;
    std::sort(rates.begin(), rates.end());
    for (std::size_t i = 0; i < rates.size(); ++i) {
        if (rates[i] < 1) throw ConfigError("model: pyramid rates must be >= 1");
        if (i > 0 && rates[i] == rates[i - 1]) throw ConfigError("model: pyramid rates must be distinct");
    }
    if (decoder_width == 0) throw ConfigError("model: decoder_width must be positive");
    if (output_stride < 2 || (output_stride & (output_stride - 1)) != 0)
        throw ConfigError("model: output_stride must be a power of two >= 2, got " +
                          std::to_string(output_stride));
}

SegModel::ConvLayer SegModel::make_conv(const std::string& name, ParamGroupId group,
                                        std::size_t in, std::size_t out, std::size_t k,
                                        int stride, int padding, int dilation, bool bias,
                                        std::uint64_t seed) {
    ConvLayer layer;
    layer.stride = stride;
    layer.padding = padding;
    layer.dilation = dilation;

    // He-style init, one keyed stream per parameter so construction order
    // produces identical weights for identical seeds.
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
    KeyedRng rng(seed, 0xC09FULL, param_cursor_++);
    layer.weight = Tensor::zeros({out, in, k, k}, true);
    for (double& v : layer.weight.values()) v = rng.normal(0.0, stddev);
    params_.push_back({name + ".weight", layer.weight, group});

    if (bias) {
        layer.bias = Tensor::zeros({1, out, 1, 1}, true);
        params_.push_back({name + ".bias", layer.bias, group});
    }
    return layer;
}

SegModel::ConvBn SegModel::make_conv_bn(const std::string& name, ParamGroupId group,
                                        std::size_t in, std::size_t out, std::size_t k,
                                        int stride, int padding, int dilation,
                                        std::uint64_t seed) {
    ConvBn layer;
    layer.conv = make_conv(name + ".conv", group, in, out, k, stride, padding, dilation,
                           /*bias=*/false, seed);
    layer.bn = ops::BatchNormState::make(out);
    params_.push_back({name + ".bn.gamma", layer.bn.gamma, group});
    params_.push_back({name + ".bn.shift", layer.bn.shift, group});
    layer.bn_name = name + ".bn";
    return layer;
}

// BN states live inside the layer structs; pointers are only taken once the
// whole structure has reached its final storage.
void SegModel::index_bn_states() {
    auto add = [this](ConvBn& layer) {
        bn_states_.push_back(&layer.bn);
        bn_names_.push_back(layer.bn_name);
    };
    add(stem_);
    for (auto& stage : stages_) {
        for (ResidualBlock& block : stage) {
            add(block.c1);
            add(block.c2);
            if (block.has_projection) add(block.projection);
        }
    }
    for (ConvBn& branch : pyramid_branches_) add(branch);
    add(fuse_);
    add(low_reducer_);
    add(decoder1_);
    add(decoder2_);
}

SegModel::SegModel(const ModelConfig& config, const HookSpecs& hooks, std::uint64_t seed)
    : config_(config), hooks_(hooks) {
    config_.validate();
    for (const RegularizerSpec& spec : hooks_) spec.validate();

    const auto& widths = config_.stage_widths;

    stem_ = make_conv_bn("backbone.stem", ParamGroupId::Backbone, config_.in_channels,
                         widths[0], 3, 2, 1, 1, seed);

    // Stage strides: downsample until the target output stride is reached,
    // switch to dilation beyond it (first stage never strides).
    std::size_t current_os = 2;
    int dilation = 1;
    std::size_t in_c = widths[0];
    for (std::size_t si = 0; si < widths.size(); ++si) {
        int stride = 1;
        if (si > 0) {
            if (current_os < config_.output_stride) {
                stride = 2;
                current_os *= 2;
            } else {
                dilation *= 2;
            }
        }
        stage_strides_.push_back(stride);
        stage_dilations_.push_back(dilation);

        std::vector<ResidualBlock> blocks;
        for (std::size_t bi = 0; bi < config_.blocks_per_stage; ++bi) {
            const std::string name = "backbone.stage" + std::to_string(si) + ".block" +
                                     std::to_string(bi);
            const int block_stride = bi == 0 ? stride : 1;
            ResidualBlock block;
            block.c1 = make_conv_bn(name + ".c1", ParamGroupId::Backbone, in_c, widths[si], 3,
                                    block_stride, dilation, dilation, seed);
            block.c2 = make_conv_bn(name + ".c2", ParamGroupId::Backbone, widths[si], widths[si],
                                    3, 1, dilation, dilation, seed);
            if (block_stride != 1 || in_c != widths[si]) {
                block.has_projection = true;
                block.projection = make_conv_bn(name + ".proj", ParamGroupId::Backbone, in_c,
                                                widths[si], 1, block_stride, 0, 1, seed);
            }
            blocks.push_back(std::move(block));
            in_c = widths[si];
        }
        stages_.push_back(std::move(blocks));
    }

    const std::size_t feat_c = widths.back();
    for (std::size_t ri = 0; ri < config_.pyramid_rates.size(); ++ri) {
        const int rate = config_.pyramid_rates[ri];
        pyramid_branches_.push_back(make_conv_bn("pyramid.branch" + std::to_string(ri),
                                                 ParamGroupId::Head, feat_c, feat_c, 3, 1,
                                                 rate, rate, seed));
    }
    // Pooled features are 1x1 maps, so this branch skips BN.
    global_branch_ = make_conv("pyramid.global", ParamGroupId::Head, feat_c, feat_c, 1, 1, 0, 1,
                               /*bias=*/true, seed);

    const std::size_t concat_c = feat_c * (config_.pyramid_rates.size() + 1);
    fuse_ = make_conv_bn("pyramid.fuse", ParamGroupId::Head, concat_c, feat_c, 1, 1, 0, 1, seed);

    const std::size_t low_c = std::max<std::size_t>(8, config_.decoder_width / 2);
    low_reducer_ = make_conv_bn("decoder.reduce", ParamGroupId::Head, widths[0], low_c, 1, 1, 0,
                                1, seed);
    decoder1_ = make_conv_bn("decoder.c1", ParamGroupId::Head, feat_c + low_c,
                             config_.decoder_width, 3, 1, 1, 1, seed);
    decoder2_ = make_conv_bn("decoder.c2", ParamGroupId::Head, config_.decoder_width,
                             config_.decoder_width, 3, 1, 1, 1, seed);
    classifier_ = make_conv("decoder.classifier", ParamGroupId::Head, config_.decoder_width,
                            config_.num_classes, 1, 1, 0, 1, /*bias=*/true, seed);
    index_bn_states();
}

Tensor SegModel::run_conv(ComputationTape* tape, const ConvLayer& layer, const Tensor& x) {
    return ops::conv2d(tape, x, layer.weight, layer.bias, layer.stride, layer.padding,
                       layer.dilation);
}

Tensor SegModel::run_conv_bn(ComputationTape* tape, ConvBn& layer, const Tensor& x,
                             RegularizerMode mode, bool relu_after) {
    layer.bn.mode = mode == RegularizerMode::Train ? ops::BatchNormState::Mode::Training
                                                   : ops::BatchNormState::Mode::Inference;
    Tensor out = ops::batchnorm2d(tape, run_conv(tape, layer.conv, x), layer.bn);
    return relu_after ? ops::relu(tape, out) : out;
}

Tensor SegModel::forward(ComputationTape* tape, const Tensor& input, RegularizerMode mode,
                         int epoch, int batch_index) {
    const Shape4& s = input.shape();
    if (s.c != config_.in_channels)
        throw ConfigError("forward: input " + s.str() + " vs " +
                          std::to_string(config_.in_channels) + " configured channels");
    if (s.h % config_.output_stride != 0 || s.w % config_.output_stride != 0)
        throw ConfigError("forward: input " + s.str() + " not divisible by output stride " +
                          std::to_string(config_.output_stride));

    const RegularizerSpec& backbone_hook = hook_at(hooks_, HookSite::BackboneBlocks);
    const RegularizerSpec& spp_hook = hook_at(hooks_, HookSite::SppOutput);
    const RegularizerSpec& decoder_hook = hook_at(hooks_, HookSite::DecoderOutput);

    Tensor x = run_conv_bn(tape, stem_, input, mode);

    Tensor low_level;
    int block_layer_id = 100;
    for (std::size_t si = 0; si < stages_.size(); ++si) {
        for (ResidualBlock& block : stages_[si]) {
            Tensor skip = block.has_projection
                              ? run_conv_bn(tape, block.projection, x, mode, /*relu_after=*/false)
                              : x;
            Tensor h = run_conv_bn(tape, block.c1, x, mode);
            h = run_conv_bn(tape, block.c2, h, mode, /*relu_after=*/false);
            x = ops::relu(tape, ops::add(tape, h, skip));
            x = apply_regularizer(tape, x, backbone_hook, mode, epoch, block_layer_id++,
                                  batch_index);
        }
        if (si == 0) low_level = x;
    }

    std::vector<Tensor> branches;
    for (ConvBn& branch : pyramid_branches_)
        branches.push_back(run_conv_bn(tape, branch, x, mode));
    Tensor pooled = ops::global_avg_pool(tape, x);
    pooled = ops::relu(tape, run_conv(tape, global_branch_, pooled));
    branches.push_back(ops::bilinear_upsample(tape, pooled, x.shape().h, x.shape().w));

    Tensor fused = run_conv_bn(tape, fuse_, ops::concat_channels(tape, branches), mode);
    fused = apply_regularizer(tape, fused, spp_hook, mode, epoch, 200, batch_index);

    Tensor up = ops::bilinear_upsample(tape, fused, low_level.shape().h, low_level.shape().w);
    Tensor low = run_conv_bn(tape, low_reducer_, low_level, mode);
    Tensor d = ops::concat_channels(tape, {up, low});
    d = run_conv_bn(tape, decoder1_, d, mode);
    d = run_conv_bn(tape, decoder2_, d, mode);
    d = apply_regularizer(tape, d, decoder_hook, mode, epoch, 300, batch_index);

    Tensor logits = run_conv(tape, classifier_, d);
    return ops::bilinear_upsample(tape, logits, s.h, s.w);
}

std::vector<NamedTensor> SegModel::named_parameters() const {
    std::vector<NamedTensor> out;
    out.reserve(params_.size());
    for (const Registered& r : params_) out.push_back({r.name, r.tensor});
    return out;
}

std::vector<NamedTensor> SegModel::named_buffers() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < bn_states_.size(); ++i) {
        const ops::BatchNormState& bn = *bn_states_[i];
        const std::size_t c = bn.channels();
        out.push_back({bn_names_[i] + ".running_mean",
                       Tensor::from_values({1, c, 1, 1}, bn.running_mean)});
        out.push_back({bn_names_[i] + ".running_var",
                       Tensor::from_values({1, c, 1, 1}, bn.running_var)});
    }
    return out;
}

std::array<ParameterGroup, 2> SegModel::parameter_groups() const {
    std::array<ParameterGroup, 2> groups;
    groups[0].id = ParamGroupId::Backbone;
    groups[0].lr_multiplier = 1.0;
    groups[1].id = ParamGroupId::Head;
    groups[1].lr_multiplier = 10.0;
    for (const Registered& r : params_) {
        ParameterGroup& g = r.group == ParamGroupId::Backbone ? groups[0] : groups[1];
        g.params.push_back({r.name, r.tensor});
    }
    return groups;
}

std::size_t SegModel::parameter_count() const {
    std::size_t total = 0;
    for (const Registered& r : params_) total += r.tensor.size();
    return total;
}

void SegModel::load_state(const std::vector<NamedTensor>& state, bool strict) {
    std::map<std::string, Tensor> own;
    for (const Registered& r : params_) own.emplace(r.name, r.tensor);
    for (std::size_t i = 0; i < bn_states_.size(); ++i) {
        // Buffers are loaded through temporary views and written back below.
        own.emplace(bn_names_[i] + ".running_mean", Tensor());
        own.emplace(bn_names_[i] + ".running_var", Tensor());
    }

    std::size_t matched = 0;
    for (const NamedTensor& nt : state) {
        auto it = own.find(nt.name);
        if (it == own.end()) {
            if (strict) throw ConfigError("load_state: unknown tensor '" + nt.name + "'");
            continue;
        }
        ++matched;
        if (it->second.valid()) {
            if (!(it->second.shape() == nt.tensor.shape()))
                throw ConfigError("load_state: shape mismatch for '" + nt.name + "': " +
                                  it->second.shape().str() + " vs " + nt.tensor.shape().str());
            it->second.values() = nt.tensor.values();
        } else {
            // Running-statistics buffer.
            for (std::size_t i = 0; i < bn_states_.size(); ++i) {
                if (nt.name == bn_names_[i] + ".running_mean")
                    bn_states_[i]->running_mean = nt.tensor.values();
                else if (nt.name == bn_names_[i] + ".running_var")
                    bn_states_[i]->running_var = nt.tensor.values();
            }
        }
    }
    if (strict && matched != own.size())
        throw ConfigError("load_state: checkpoint covers " + std::to_string(matched) + " of " +
                          std::to_string(own.size()) + " tensors");
}

}  // namespace dropreg
