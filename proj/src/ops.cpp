#include "dropreg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dropreg/errors.hpp"
#include "dropreg/kernels.hpp"

namespace dropreg::ops {
namespace {

std::size_t conv_extent(std::size_t in, int pad, int dilation, std::size_t kernel, int stride) {
    const long long span = static_cast<long long>(in) + 2LL * pad -
                           static_cast<long long>(dilation) * (static_cast<long long>(kernel) - 1) - 1;
    if (span < 0) return 0;
    return static_cast<std::size_t>(span / stride) + 1;
}

// Gathers one sample's windows into col (K x P), K = inC*kH*kW, P = OH*OW.
void im2col(const double* in, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, int stride, int pad, int dilation,
            std::size_t oh, std::size_t ow, double* col) {
    const std::size_t p = oh * ow;
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < channels; ++ci) {
        const double* plane = in + ci * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx, ++row) {
                double* dst = col + row * p;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long long iy = static_cast<long long>(oy) * stride - pad +
                                         static_cast<long long>(ky) * dilation;
                    if (iy < 0 || iy >= static_cast<long long>(h)) {
                        std::fill(dst, dst + ow, 0.0);
                        dst += ow;
                        continue;
                    }
                    const double* src_row = plane + static_cast<std::size_t>(iy) * w;
                    long long ix = -pad + static_cast<long long>(kx) * dilation;
                    if (stride == 1) {
                        // Contiguous run; pad only at the ends.
                        for (std::size_t ox = 0; ox < ow; ++ox, ++ix)
                            dst[ox] = (ix >= 0 && ix < static_cast<long long>(w))
                                          ? src_row[static_cast<std::size_t>(ix)]
                                          : 0.0;
                    } else {
                        for (std::size_t ox = 0; ox < ow; ++ox, ix += stride)
                            dst[ox] = (ix >= 0 && ix < static_cast<long long>(w))
                                          ? src_row[static_cast<std::size_t>(ix)]
                                          : 0.0;
                    }
                    dst += ow;
                }
            }
        }
    }
}

// Transpose of im2col: scatter-adds col-shaped gradients back into the image.
void col2im_add(const double* col, std::size_t channels, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, int stride, int pad, int dilation,
                std::size_t oh, std::size_t ow, double* out) {
    const std::size_t p = oh * ow;
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < channels; ++ci) {
        double* plane = out + ci * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx, ++row) {
                const double* src = col + row * p;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long long iy = static_cast<long long>(oy) * stride - pad +
                                         static_cast<long long>(ky) * dilation;
                    if (iy < 0 || iy >= static_cast<long long>(h)) {
                        src += ow;
                        continue;
                    }
                    double* dst_row = plane + static_cast<std::size_t>(iy) * w;
                    long long ix = -pad + static_cast<long long>(kx) * dilation;
                    for (std::size_t ox = 0; ox < ow; ++ox, ix += stride) {
                        if (ix >= 0 && ix < static_cast<long long>(w))
                            dst_row[static_cast<std::size_t>(ix)] += src[ox];
                    }
                    src += ow;
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(ComputationTape* tape, const Tensor& input, const Tensor& weight,
              const Tensor& bias, int stride, int padding, int dilation) {
    const Shape4& xs = input.shape();
    const Shape4& ws = weight.shape();
    if (xs.c != ws.c)
        throw ConfigError("conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                          " channels but weight " + ws.str() + " expects " + std::to_string(ws.c));
    if (stride < 1 || padding < 0 || dilation < 1)
        throw ConfigError("conv2d: invalid stride/padding/dilation");
    if (bias.valid() && !(bias.shape() == Shape4{1, ws.n, 1, 1}))
        throw ConfigError("conv2d: bias shape " + bias.shape().str() + " does not match " +
                          std::to_string(ws.n) + " output channels");

    const std::size_t oh = conv_extent(xs.h, padding, dilation, ws.h, stride);
    const std::size_t ow = conv_extent(xs.w, padding, dilation, ws.w, stride);
    if (oh == 0 || ow == 0)
        throw ConfigError("conv2d: no valid window for input " + xs.str() + " with weight " +
                          ws.str() + " (stride " + std::to_string(stride) + ", padding " +
                          std::to_string(padding) + ", dilation " + std::to_string(dilation) + ")");

    const std::size_t out_c = ws.n;
    const std::size_t k = ws.c * ws.h * ws.w;
    const std::size_t p = oh * ow;
    Tensor out = Tensor::zeros({xs.n, out_c, oh, ow});

    const auto& kern = kernels::active();
    std::vector<double> col(k * p);
    for (std::size_t n = 0; n < xs.n; ++n) {
        im2col(input.data() + n * xs.c * xs.plane(), xs.c, xs.h, xs.w, ws.h, ws.w,
               stride, padding, dilation, oh, ow, col.data());
        double* out_n = out.data() + n * out_c * p;
        if (bias.valid()) {
            for (std::size_t oc = 0; oc < out_c; ++oc)
                std::fill(out_n + oc * p, out_n + (oc + 1) * p, bias.data()[oc]);
        }
        kern.matmul_nn(weight.data(), col.data(), out_n, out_c, k, p);
    }
    check_finite(out, "conv2d");

    const bool needs_grad = input.requires_grad() || weight.requires_grad() ||
                            (bias.valid() && bias.requires_grad());
    out.set_requires_grad(needs_grad);
    if (tape && needs_grad) {
        tape->record(out, [input, weight, bias, out, stride, padding, dilation, oh, ow]() mutable {
            const Shape4 xs = input.shape();
            const Shape4 ws = weight.shape();
            const std::size_t out_c = ws.n;
            const std::size_t k = ws.c * ws.h * ws.w;
            const std::size_t p = oh * ow;
            const auto& kern = kernels::active();
            const bool need_col = weight.requires_grad() || input.requires_grad();
            std::vector<double> col(need_col ? k * p : 0);
            std::vector<double> col_grad(input.requires_grad() ? k * p : 0);
            for (std::size_t n = 0; n < xs.n; ++n) {
                const double* g = out.grad().data() + n * out_c * p;
                if (need_col)
                    im2col(input.data() + n * xs.c * xs.plane(), xs.c, xs.h, xs.w, ws.h, ws.w,
                           stride, padding, dilation, oh, ow, col.data());
                if (weight.requires_grad())
                    kern.matmul_nt(g, col.data(), weight.grad().data(), out_c, p, k);
                if (bias.valid() && bias.requires_grad()) {
                    double* gb = bias.grad().data();
                    for (std::size_t oc = 0; oc < out_c; ++oc) {
                        double acc = 0.0;
                        const double* row = g + oc * p;
                        for (std::size_t j = 0; j < p; ++j) acc += row[j];
                        gb[oc] += acc;
                    }
                }
                if (input.requires_grad()) {
                    std::fill(col_grad.begin(), col_grad.end(), 0.0);
                    kern.matmul_tn(weight.data(), g, col_grad.data(), k, out_c, p);
                    col2im_add(col_grad.data(), xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding,
                               dilation, oh, ow, input.grad().data() + n * xs.c * xs.plane());
                }
            }
        });
    }
    return out;
}

BatchNormState BatchNormState::make(std::size_t channels, double momentum, double epsilon) {
    BatchNormState s;
    s.gamma = Tensor::full({1, channels, 1, 1}, 1.0, true);
    s.shift = Tensor::zeros({1, channels, 1, 1}, true);
    s.running_mean.assign(channels, 0.0);
    s.running_var.assign(channels, 1.0);
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
}

Tensor batchnorm2d(ComputationTape* tape, const Tensor& input, BatchNormState& state) {
    const Shape4& xs = input.shape();
    const std::size_t channels = state.channels();
    if (xs.c != channels)
        throw ConfigError("batchnorm2d: input " + xs.str() + " vs state with " +
                          std::to_string(channels) + " channels");

    const std::size_t plane = xs.plane();
    const std::size_t m = xs.n * plane;
    const bool training = state.mode == BatchNormState::Mode::Training;
    if (training && m < 2)
        throw ConfigError("batchnorm2d: degenerate batch, " + std::to_string(m) +
                          " element(s) per channel in training mode");

    std::vector<double> mean(channels, 0.0), var(channels, 0.0);
    if (training) {
        for (std::size_t n = 0; n < xs.n; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
                const double* src = input.data() + (n * channels + c) * plane;
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                mean[c] += acc;
            }
        }
        for (std::size_t c = 0; c < channels; ++c) mean[c] /= static_cast<double>(m);
        for (std::size_t n = 0; n < xs.n; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
                const double* src = input.data() + (n * channels + c) * plane;
                const double mu = mean[c];
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = src[i] - mu;
                    acc += d * d;
                }
                var[c] += acc;
            }
        }
        for (std::size_t c = 0; c < channels; ++c) var[c] /= static_cast<double>(m);
        for (std::size_t c = 0; c < channels; ++c) {
            state.running_mean[c] =
                (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
            state.running_var[c] =
                (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<double> invstd(channels);
    for (std::size_t c = 0; c < channels; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + state.epsilon);

    Tensor out = Tensor::zeros(xs);
    auto xhat = std::make_shared<std::vector<double>>(input.size());
    for (std::size_t n = 0; n < xs.n; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double* src = input.data() + (n * channels + c) * plane;
            double* xh = xhat->data() + (n * channels + c) * plane;
            double* dst = out.data() + (n * channels + c) * plane;
            const double mu = mean[c];
            const double is = invstd[c];
            const double g = state.gamma.data()[c];
            const double b = state.shift.data()[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = (src[i] - mu) * is;
                xh[i] = v;
                dst[i] = v * g + b;
            }
        }
    }
    check_finite(out, "batchnorm2d");

    Tensor gamma = state.gamma;
    Tensor shift = state.shift;
    const bool needs_grad =
        input.requires_grad() || gamma.requires_grad() || shift.requires_grad();
    out.set_requires_grad(needs_grad);
    if (tape && needs_grad) {
        tape->record(out, [input, gamma, shift, out, xhat, invstd, training]() mutable {
            const Shape4 xs = input.shape();
            const std::size_t channels = xs.c;
            const std::size_t plane = xs.plane();
            const double m = static_cast<double>(xs.n * plane);
            const std::vector<double>& g = out.grad();

            std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
            for (std::size_t n = 0; n < xs.n; ++n) {
                for (std::size_t c = 0; c < channels; ++c) {
                    const double* grow = g.data() + (n * channels + c) * plane;
                    const double* xh = xhat->data() + (n * channels + c) * plane;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        s1 += grow[i];
                        s2 += grow[i] * xh[i];
                    }
                    sum_dy[c] += s1;
                    sum_dy_xhat[c] += s2;
                }
            }
            if (shift.requires_grad()) shift.accumulate_grad(sum_dy.data(), channels);
            if (gamma.requires_grad()) gamma.accumulate_grad(sum_dy_xhat.data(), channels);

            if (input.requires_grad()) {
                std::vector<double>& gx = input.grad();
                for (std::size_t n = 0; n < xs.n; ++n) {
                    for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t base = (n * channels + c) * plane;
                        const double gam = gamma.data()[c];
                        const double is = invstd[c];
                        if (training) {
                            const double sdy = sum_dy[c];
                            const double sdyx = sum_dy_xhat[c];
                            const double scale = gam * is / m;
                            for (std::size_t i = 0; i < plane; ++i)
                                gx[base + i] += scale * (m * g[base + i] - sdy -
                                                         (*xhat)[base + i] * sdyx);
                        } else {
                            // Inference is an affine map of the input.
                            for (std::size_t i = 0; i < plane; ++i)
                                gx[base + i] += gam * is * g[base + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu(ComputationTape* tape, const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    kernels::active().relu_fwd(input.data(), out.data(), input.size());
    out.set_requires_grad(input.requires_grad());
    if (tape && input.requires_grad()) {
        tape->record(out, [input, out]() mutable {
            kernels::active().relu_bwd(input.data(), out.grad().data(), input.grad().data(),
                                       input.size());
        });
    }
    return out;
}

namespace {

struct AxisLerp {
    std::size_t lo, hi;
    double frac;
};

std::vector<AxisLerp> lerp_coords(std::size_t in, std::size_t out) {
    std::vector<AxisLerp> coords(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        if (src <= 0.0) {
            coords[i] = {0, 0, 0.0};
            continue;
        }
        std::size_t lo = static_cast<std::size_t>(src);
        if (lo >= in - 1) {
            coords[i] = {in - 1, in - 1, 0.0};
            continue;
        }
        coords[i] = {lo, lo + 1, src - static_cast<double>(lo)};
    }
    return coords;
}

}  // namespace

Tensor bilinear_upsample(ComputationTape* tape, const Tensor& input, std::size_t out_h,
                         std::size_t out_w) {
    const Shape4& xs = input.shape();
    if (out_h < xs.h || out_w < xs.w)
        throw ConfigError("bilinear_upsample: downsampling " + xs.str() + " to (" +
                          std::to_string(out_h) + "," + std::to_string(out_w) +
                          ") is unsupported");

    const auto ys = lerp_coords(xs.h, out_h);
    const auto xcs = lerp_coords(xs.w, out_w);
    Tensor out = Tensor::zeros({xs.n, xs.c, out_h, out_w});
    for (std::size_t n = 0; n < xs.n; ++n) {
        for (std::size_t c = 0; c < xs.c; ++c) {
            const double* src = input.data() + (n * xs.c + c) * xs.plane();
            double* dst = out.data() + (n * xs.c + c) * out_h * out_w;
            for (std::size_t y = 0; y < out_h; ++y) {
                const AxisLerp& ay = ys[y];
                const double* row0 = src + ay.lo * xs.w;
                const double* row1 = src + ay.hi * xs.w;
                for (std::size_t x = 0; x < out_w; ++x) {
                    const AxisLerp& ax = xcs[x];
                    // Nested lerp keeps constants exact.
                    const double top = row0[ax.lo] + ax.frac * (row0[ax.hi] - row0[ax.lo]);
                    const double bot = row1[ax.lo] + ax.frac * (row1[ax.hi] - row1[ax.lo]);
                    dst[y * out_w + x] = top + ay.frac * (bot - top);
                }
            }
        }
    }

    out.set_requires_grad(input.requires_grad());
    if (tape && input.requires_grad()) {
        tape->record(out, [input, out, ys, xcs, out_h, out_w]() mutable {
            const Shape4 xs = input.shape();
            std::vector<double>& gx = input.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t n = 0; n < xs.n; ++n) {
                for (std::size_t c = 0; c < xs.c; ++c) {
                    const std::size_t sbase = (n * xs.c + c) * xs.plane();
                    const std::size_t obase = (n * xs.c + c) * out_h * out_w;
                    for (std::size_t y = 0; y < out_h; ++y) {
                        const AxisLerp& ay = ys[y];
                        for (std::size_t x = 0; x < out_w; ++x) {
                            const AxisLerp& ax = xcs[x];
                            const double gv = g[obase + y * out_w + x];
                            gx[sbase + ay.lo * xs.w + ax.lo] += (1.0 - ay.frac) * (1.0 - ax.frac) * gv;
                            gx[sbase + ay.lo * xs.w + ax.hi] += (1.0 - ay.frac) * ax.frac * gv;
                            gx[sbase + ay.hi * xs.w + ax.lo] += ay.frac * (1.0 - ax.frac) * gv;
                            gx[sbase + ay.hi * xs.w + ax.hi] += ay.frac * ax.frac * gv;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy_map(ComputationTape* tape, const Tensor& logits,
                                 const std::vector<LabelMap>& targets, int ignore_index) {
    const Shape4& ls = logits.shape();
    if (targets.size() != ls.n)
        throw EvalError("softmax_cross_entropy_map: " + std::to_string(targets.size()) +
                        " label maps for batch of " + std::to_string(ls.n));
    for (const LabelMap& t : targets) {
        if (t.height != ls.h || t.width != ls.w)
            throw EvalError("softmax_cross_entropy_map: label map " + std::to_string(t.height) +
                            "x" + std::to_string(t.width) + " vs logits " + ls.str());
    }

    const std::size_t num_classes = ls.c;
    const std::size_t plane = ls.plane();
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < ls.n; ++n) {
        const double* lbase = logits.data() + n * num_classes * plane;
        double* pbase = probs->data() + n * num_classes * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const int label = targets[n].values[i];
            double mx = lbase[i];
            for (std::size_t k = 1; k < num_classes; ++k)
                mx = std::max(mx, lbase[k * plane + i]);
            double z = 0.0;
            for (std::size_t k = 0; k < num_classes; ++k) {
                const double e = std::exp(lbase[k * plane + i] - mx);
                pbase[k * plane + i] = e;
                z += e;
            }
            const double inv_z = 1.0 / z;
            for (std::size_t k = 0; k < num_classes; ++k) pbase[k * plane + i] *= inv_z;
            if (label == ignore_index) continue;
            if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
                throw DataError("softmax_cross_entropy_map: label " + std::to_string(label) +
                                " >= " + std::to_string(num_classes) + " classes at pixel (" +
                                std::to_string(n) + "," + std::to_string(i / ls.w) + "," +
                                std::to_string(i % ls.w) + ")");
            total += std::log(z) - (lbase[static_cast<std::size_t>(label) * plane + i] - mx);
            ++count;
        }
    }
    if (count == 0) throw DataError("softmax_cross_entropy_map: every pixel is ignored");

    Tensor loss = Tensor::scalar(total / static_cast<double>(count));
    loss.set_requires_grad(logits.requires_grad());
    if (tape && logits.requires_grad()) {
        tape->record(loss, [logits, loss, probs, targets, ignore_index, count]() mutable {
            const Shape4 ls = logits.shape();
            const std::size_t plane = ls.plane();
            const double upstream = loss.grad()[0] / static_cast<double>(count);
            std::vector<double>& gx = logits.grad();
            for (std::size_t n = 0; n < ls.n; ++n) {
                const std::size_t nbase = n * ls.c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const int label = targets[n].values[i];
                    if (label == ignore_index) continue;
                    for (std::size_t k = 0; k < ls.c; ++k) {
                        const double onehot = (static_cast<std::size_t>(label) == k) ? 1.0 : 0.0;
                        gx[nbase + k * plane + i] +=
                            upstream * ((*probs)[nbase + k * plane + i] - onehot);
                    }
                }
            }
        });
    }
    return loss;
}

Tensor add(ComputationTape* tape, const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        throw ConfigError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = Tensor::zeros(a.shape());
    kernels::active().add(a.data(), b.data(), out.data(), a.size());
    const bool needs = a.requires_grad() || b.requires_grad();
    out.set_requires_grad(needs);
    if (tape && needs) {
        tape->record(out, [a, b, out]() mutable {
            const double* g = out.grad().data();
            if (a.requires_grad()) a.accumulate_grad(g, a.size());
            if (b.requires_grad()) b.accumulate_grad(g, b.size());
        });
    }
    return out;
}

Tensor mul(ComputationTape* tape, const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        throw ConfigError("mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = Tensor::zeros(a.shape());
    kernels::active().mul(a.data(), b.data(), out.data(), a.size());
    const bool needs = a.requires_grad() || b.requires_grad();
    out.set_requires_grad(needs);
    if (tape && needs) {
        tape->record(out, [a, b, out]() mutable {
            const std::vector<double>& g = out.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += b.data()[i] * g[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += a.data()[i] * g[i];
            }
        });
    }
    return out;
}

Tensor sum(ComputationTape* tape, const Tensor& input) {
    double acc = 0.0;
    for (double v : input.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    out.set_requires_grad(input.requires_grad());
    if (tape && input.requires_grad()) {
        tape->record(out, [input, out]() mutable {
            const double g = out.grad()[0];
            std::vector<double>& gx = input.grad();
            for (double& v : gx) v += g;
        });
    }
    return out;
}

Tensor concat_channels(ComputationTape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ConfigError("concat_channels: no inputs");
    const Shape4 first = parts.front().shape();
    std::size_t total_c = 0;
    bool needs = false;
    for (const Tensor& t : parts) {
        const Shape4& s = t.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ConfigError("concat_channels: mismatched shapes " + first.str() + " vs " +
                              s.str());
        total_c += s.c;
        needs = needs || t.requires_grad();
    }

    Tensor out = Tensor::zeros({first.n, total_c, first.h, first.w});
    const std::size_t plane = first.plane();
    for (std::size_t n = 0; n < first.n; ++n) {
        std::size_t c_off = 0;
        for (const Tensor& t : parts) {
            const std::size_t tc = t.shape().c;
            std::memcpy(out.data() + (n * total_c + c_off) * plane,
                        t.data() + n * tc * plane, tc * plane * sizeof(double));
            c_off += tc;
        }
    }

    out.set_requires_grad(needs);
    if (tape && needs) {
        tape->record(out, [parts, out, total_c, plane, first]() mutable {
            const std::vector<double>& g = out.grad();
            for (std::size_t n = 0; n < first.n; ++n) {
                std::size_t c_off = 0;
                for (const Tensor& t : parts) {
                    const std::size_t tc = t.shape().c;
                    if (t.requires_grad()) {
                        double* gx = t.grad().data() + n * tc * plane;
                        const double* gsrc = g.data() + (n * total_c + c_off) * plane;
                        for (std::size_t i = 0; i < tc * plane; ++i) gx[i] += gsrc[i];
                    }
                    c_off += tc;
                }
            }
        });
    }
    return out;
}

Tensor global_avg_pool(ComputationTape* tape, const Tensor& input) {
    const Shape4& xs = input.shape();
    Tensor out = Tensor::zeros({xs.n, xs.c, 1, 1});
    const std::size_t plane = xs.plane();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
        const double* src = input.data() + nc * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        out.data()[nc] = acc * inv;
    }
    out.set_requires_grad(input.requires_grad());
    if (tape && input.requires_grad()) {
        tape->record(out, [input, out, plane, inv]() mutable {
            std::vector<double>& gx = input.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t nc = 0; nc < g.size(); ++nc) {
                const double gv = g[nc] * inv;
                double* dst = gx.data() + nc * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += gv;
            }
        });
    }
    return out;
}

Tensor apply_mask(ComputationTape* tape, const Tensor& input, const std::vector<double>& mask) {
    if (mask.size() != input.size())
        throw ConfigError("apply_mask: mask size " + std::to_string(mask.size()) +
                          " vs tensor " + input.shape().str());
    Tensor out = Tensor::zeros(input.shape());
    kernels::active().mul(input.data(), mask.data(), out.data(), input.size());
    out.set_requires_grad(input.requires_grad());
    if (tape && input.requires_grad()) {
        tape->record(out, [input, out, mask]() mutable {
            std::vector<double>& gx = input.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += mask[i] * g[i];
        });
    }
    return out;
}

Tensor apply_plane_mask(ComputationTape* tape, const Tensor& input,
                        const std::vector<double>& plane_factors) {
    const Shape4& xs = input.shape();
    if (plane_factors.size() != xs.n * xs.c)
        throw ConfigError("apply_plane_mask: " + std::to_string(plane_factors.size()) +
                          " factors for tensor " + xs.str());
    Tensor out = Tensor::zeros(xs);
    const std::size_t plane = xs.plane();
    for (std::size_t nc = 0; nc < plane_factors.size(); ++nc) {
        const double f = plane_factors[nc];
        const double* src = input.data() + nc * plane;
        double* dst = out.data() + nc * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * f;
    }
    out.set_requires_grad(input.requires_grad());
    if (tape && input.requires_grad()) {
        tape->record(out, [input, out, plane_factors, plane]() mutable {
            std::vector<double>& gx = input.grad();
            const std::vector<double>& g = out.grad();
            for (std::size_t nc = 0; nc < plane_factors.size(); ++nc) {
                const double f = plane_factors[nc];
                const std::size_t base = nc * plane;
                for (std::size_t i = 0; i < plane; ++i) gx[base + i] += f * g[base + i];
            }
        });
    }
    return out;
}

std::vector<LabelMap> argmax_channels(const Tensor& logits) {
    const Shape4& ls = logits.shape();
    const std::size_t plane = ls.plane();
    std::vector<LabelMap> maps;
    maps.reserve(ls.n);
    for (std::size_t n = 0; n < ls.n; ++n) {
        LabelMap map(ls.h, ls.w);
        const double* base = logits.data() + n * ls.c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            std::size_t best = 0;
            double best_v = base[i];
            for (std::size_t k = 1; k < ls.c; ++k) {
                const double v = base[k * plane + i];
                if (v > best_v) {
                    best_v = v;
                    best = k;
                }
            }
            map.values[i] = static_cast<std::uint8_t>(best);
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

}  // namespace dropreg::ops
