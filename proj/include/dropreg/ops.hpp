#pragma once

#include <cstddef>
#include <vector>

#include "dropreg/labelmap.hpp"
#include "dropreg/tensor.hpp"

namespace dropreg::ops {

// Every op takes the tape as an optional first argument; passing nullptr (or
// an output that needs no gradient) skips recording, which is how inference
// runs. Gradients accumulate into each tensor's grad buffer.

// weight is (outC, inC, kH, kW); bias is (1, outC, 1, 1) or an invalid Tensor
// for none. Output spatial extent per axis:
// floor((in + 2*padding - dilation*(kernel-1) - 1)/stride) + 1.
Tensor conv2d(ComputationTape* tape, const Tensor& input, const Tensor& weight,
              const Tensor& bias, int stride, int padding, int dilation = 1);

struct BatchNormState {
    enum class Mode { Training, Inference };

    Tensor gamma;  // (1,C,1,1), trainable scale
    Tensor shift;  // (1,C,1,1), trainable shift
    std::vector<double> running_mean;
    std::vector<double> running_var;  // strictly positive
    double momentum = 0.1;
    double epsilon = 1e-5;
    Mode mode = Mode::Training;

    static BatchNormState make(std::size_t channels, double momentum = 0.1,
                               double epsilon = 1e-5);
    std::size_t channels() const { return running_mean.size(); }
};

// Training mode normalizes with batch statistics over (N,H,W) and updates the
// running stats; inference mode is a deterministic affine transform of the
// running stats. Training requires N*H*W >= 2.
Tensor batchnorm2d(ComputationTape* tape, const Tensor& input, BatchNormState& state);

Tensor relu(ComputationTape* tape, const Tensor& input);

// align-corners-false; upsampling only (out >= in per axis).
Tensor bilinear_upsample(ComputationTape* tape, const Tensor& input,
                         std::size_t out_h, std::size_t out_w);

// Mean over non-ignored pixels of -log softmax(logits)[label]; stabilized by
// per-pixel max subtraction. targets.size() must equal the batch extent.
Tensor softmax_cross_entropy_map(ComputationTape* tape, const Tensor& logits,
                                 const std::vector<LabelMap>& targets,
                                 int ignore_index = kIgnoreLabel);

Tensor add(ComputationTape* tape, const Tensor& a, const Tensor& b);
Tensor mul(ComputationTape* tape, const Tensor& a, const Tensor& b);
Tensor sum(ComputationTape* tape, const Tensor& input);
Tensor concat_channels(ComputationTape* tape, const std::vector<Tensor>& parts);
Tensor global_avg_pool(ComputationTape* tape, const Tensor& input);

// Multiply by a constant (non-differentiated) mask. The full variant wants
// one factor per element; the plane variant one factor per (batch, channel).
Tensor apply_mask(ComputationTape* tape, const Tensor& input,
                  const std::vector<double>& mask);
Tensor apply_plane_mask(ComputationTape* tape, const Tensor& input,
                        const std::vector<double>& plane_factors);

// Per-pixel argmax over channels.
std::vector<LabelMap> argmax_channels(const Tensor& logits);

}  // namespace dropreg::ops
