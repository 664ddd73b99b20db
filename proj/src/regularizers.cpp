#include "dropreg/regularizers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "dropreg/errors.hpp"
#include "dropreg/ops.hpp"
#include "dropreg/rng.hpp"

namespace dropreg {
namespace {

std::atomic<std::uint64_t> g_mask_count{0};

void fill_dropblock_plane(KeyedRng& rng, double p, int block_size, std::size_t h,
                          std::size_t w, double* plane) {
    const std::size_t b = static_cast<std::size_t>(block_size);
    const std::size_t valid_h = h - b + 1;
    const std::size_t valid_w = w - b + 1;
    const double gamma = dropblock_gamma(p, block_size, h, w);

    std::fill(plane, plane + h * w, 1.0);
    for (std::size_t y = 0; y < valid_h; ++y) {
        for (std::size_t x = 0; x < valid_w; ++x) {
            if (!rng.bernoulli(gamma)) continue;
            for (std::size_t dy = 0; dy < b; ++dy)
                std::fill(plane + (y + dy) * w + x, plane + (y + dy) * w + x + b, 0.0);
        }
    }

    std::size_t kept = 0;
    for (std::size_t i = 0; i < h * w; ++i) kept += plane[i] != 0.0;
    if (kept == 0) return;  // fully dropped plane stays all-zero
    const double rescale = static_cast<double>(h * w) / static_cast<double>(kept);
    for (std::size_t i = 0; i < h * w; ++i) plane[i] *= rescale;
}

}  // namespace

DropMethod parse_drop_method(const std::string& name) {
    if (name == "none") return DropMethod::None;
    if (name == "vanilla") return DropMethod::Vanilla;
    if (name == "channel") return DropMethod::Channel;
    if (name == "dropblock") return DropMethod::DropBlock;
    if (name == "uout") return DropMethod::UOut;
    throw ConfigError("unknown regularizer method '" + name +
                      "' (none|vanilla|channel|dropblock|uout)");
}

const char* drop_method_name(DropMethod method) {
    switch (method) {
        case DropMethod::None: return "none";
        case DropMethod::Vanilla: return "vanilla";
        case DropMethod::Channel: return "channel";
        case DropMethod::DropBlock: return "dropblock";
        case DropMethod::UOut: return "uout";
    }
    return "none";
}

void RegularizerSpec::validate() const {
    if (!(p >= 0.0 && p < 1.0))
        throw ConfigError(std::string(drop_method_name(method)) + ": p must be in [0,1), got " +
                          std::to_string(p));
    if (method == DropMethod::DropBlock && (block_size < 1 || block_size % 2 == 0))
        throw ConfigError("dropblock: block_size must be odd and >= 1, got " +
                          std::to_string(block_size));
    if (schedule.kind == Schedule::Kind::LinearRamp && schedule.ramp_epochs < 1)
        throw ConfigError("schedule: linear ramp needs >= 1 epochs, got " +
                          std::to_string(schedule.ramp_epochs));
}

// Seed probability compensating for block area and the shrunken valid
// center region, generalized per axis for h != w.
double dropblock_gamma(double p, int block_size, std::size_t h, std::size_t w) {
    const double b = static_cast<double>(block_size);
    const double valid_h = static_cast<double>(h - block_size + 1);
    const double valid_w = static_cast<double>(w - block_size + 1);
    return p / (b * b) * (static_cast<double>(h) * static_cast<double>(w)) / (valid_h * valid_w);
}

double scheduled_p(const RegularizerSpec& spec, int epoch) {
    spec.validate();
    if (spec.schedule.kind == Schedule::Kind::Constant) return spec.p;
    const double frac = static_cast<double>(epoch) / static_cast<double>(spec.schedule.ramp_epochs);
    return spec.p * std::min(frac, 1.0);
}

DropMask make_mask(const RegularizerSpec& spec, const Shape4& shape, int epoch,
                   int layer_id, int batch_index) {
    spec.validate();
    g_mask_count.fetch_add(1, std::memory_order_relaxed);

    DropMask mask;
    mask.method = spec.method;
    mask.epoch = epoch;
    const double p = scheduled_p(spec, epoch);
    mask.effective_p = p;
    if (spec.method == DropMethod::None) return mask;

    KeyedRng rng(spec.seed, static_cast<std::uint64_t>(epoch),
                 static_cast<std::uint64_t>(layer_id), static_cast<std::uint64_t>(batch_index));

    switch (spec.method) {
        case DropMethod::Vanilla: {
            if (p == 0.0) return mask;
            mask.layout = DropMask::Layout::Full;
            mask.values.resize(shape.size());
            const double keep_scale = 1.0 / (1.0 - p);
            for (double& v : mask.values) v = rng.bernoulli(p) ? 0.0 : keep_scale;
            break;
        }
        case DropMethod::Channel: {
            if (p == 0.0) return mask;
            mask.layout = DropMask::Layout::PerPlane;
            mask.values.resize(shape.n * shape.c);
            const double keep_scale = 1.0 / (1.0 - p);
            for (double& v : mask.values) v = rng.bernoulli(p) ? 0.0 : keep_scale;
            break;
        }
        case DropMethod::DropBlock: {
            if (spec.block_size > static_cast<int>(std::min(shape.h, shape.w)))
                throw ConfigError("dropblock: block_size " + std::to_string(spec.block_size) +
                                  " exceeds feature map " + shape.str());
            if (p == 0.0) return mask;
            mask.layout = DropMask::Layout::Full;
            mask.values.resize(shape.size());
            for (std::size_t nc = 0; nc < shape.n * shape.c; ++nc)
                fill_dropblock_plane(rng, p, spec.block_size, shape.h, shape.w,
                                     mask.values.data() + nc * shape.plane());
            break;
        }
        case DropMethod::UOut: {
            if (p == 0.0) return mask;
            mask.layout = DropMask::Layout::PerPlane;
            mask.values.resize(shape.n * shape.c);
            // x + x*r with r ~ U[-beta, beta]; zero-mean noise, no rescaling.
            for (double& v : mask.values) v = 1.0 + rng.uniform(-p, p);
            break;
        }
        case DropMethod::None: break;
    }
    return mask;
}

Tensor apply_mask(ComputationTape* tape, const Tensor& input, const DropMask& mask) {
    switch (mask.layout) {
        case DropMask::Layout::Identity: return input;
        case DropMask::Layout::Full: return ops::apply_mask(tape, input, mask.values);
        case DropMask::Layout::PerPlane: return ops::apply_plane_mask(tape, input, mask.values);
    }
    return input;
}

Tensor apply_regularizer(ComputationTape* tape, const Tensor& input, const RegularizerSpec& spec,
                         RegularizerMode mode, int epoch, int layer_id, int batch_index) {
    if (mode == RegularizerMode::Eval || spec.method == DropMethod::None) return input;
    return apply_mask(tape, input, make_mask(spec, input.shape(), epoch, layer_id, batch_index));
}

std::uint64_t mask_generation_count() { return g_mask_count.load(std::memory_order_relaxed); }

void reset_mask_generation_count() { g_mask_count.store(0, std::memory_order_relaxed); }

}  // namespace dropreg
