#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dropreg/tensor.hpp"

namespace dropreg {

enum class DropMethod { None, Vanilla, Channel, DropBlock, UOut };

DropMethod parse_drop_method(const std::string& name);
const char* drop_method_name(DropMethod method);

struct Schedule {
    enum class Kind { Constant, LinearRamp };
    Kind kind = Kind::Constant;
    int ramp_epochs = 30;  // epochs until the target probability is reached
};

// Which stochastic transform, with what strength, under which schedule.
// For UOut, p is reused as the half-width beta of the uniform noise.
struct RegularizerSpec {
    DropMethod method = DropMethod::None;
    double p = 0.2;
    int block_size = 3;  // DropBlock only; odd
    Schedule schedule;
    std::uint64_t seed = 0;

    void validate() const;
};

// Multiplier applied to activations at train time. Identity masks carry no
// buffer; PerPlane masks hold one factor per (batch, channel) pair.
struct DropMask {
    enum class Layout { Identity, Full, PerPlane };
    Layout layout = Layout::Identity;
    std::vector<double> values;
    DropMethod method = DropMethod::None;
    double effective_p = 0.0;
    int epoch = 0;
};

// Effective probability at a given epoch: constant schedules return p,
// linear ramps return p * min(epoch / ramp_epochs, 1).
double scheduled_p(const RegularizerSpec& spec, int epoch);

// Block-seed probability for a feature map of h x w:
// p/b^2 * (h*w) / ((h-b+1)*(w-b+1)).
double dropblock_gamma(double p, int block_size, std::size_t h, std::size_t w);

// Masks are pure functions of (spec.seed, epoch, layer_id, batch_index) and
// the input shape, so generation order never matters.
DropMask make_mask(const RegularizerSpec& spec, const Shape4& shape, int epoch,
                   int layer_id = 0, int batch_index = 0);

Tensor apply_mask(ComputationTape* tape, const Tensor& input, const DropMask& mask);

enum class RegularizerMode { Train, Eval };

// Convenience wrapper: eval mode (or a None method) returns the input tensor
// itself, which keeps inference bitwise identical to the unregularized graph.
Tensor apply_regularizer(ComputationTape* tape, const Tensor& input,
                         const RegularizerSpec& spec, RegularizerMode mode, int epoch,
                         int layer_id = 0, int batch_index = 0);

// Instrumentation: number of masks generated since the last reset.
std::uint64_t mask_generation_count();
void reset_mask_generation_count();

}  // namespace dropreg
