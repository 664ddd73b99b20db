#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dropreg/checkpoint.hpp"

#include <cmath>

#include "dropreg/errors.hpp"
#include "dropreg/ops.hpp"
#include "support/oracles.hpp"

using namespace dropreg;
using namespace dropreg::testing;

namespace {

// Scalar probe: sum(out * w) with a fixed random weighting, so every output
// coordinate influences the loss.
Tensor probe_loss(ComputationTape* tape, const Tensor& out, const Tensor& weights) {
    return ops::sum(tape, ops::mul(tape, out, weights));
}

}  // namespace

TEST_CASE("conv2d 1x1 kernel scales per pixel") {
    Tensor input = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor weight = Tensor::from_values({1, 1, 1, 1}, {2.0});
    Tensor bias = Tensor::zeros({1, 1, 1, 1});
    Tensor out = ops::conv2d(nullptr, input, weight, bias, 1, 0);
    CHECK(out.shape() == Shape4{1, 1, 3, 3});
    for (double v : out.values()) CHECK(v == 2.0);
}

TEST_CASE("conv2d with zero weights annihilates") {
    KeyedRng rng(3);
    Tensor input = random_tensor({2, 3, 5, 7}, rng);
    Tensor weight = Tensor::zeros({4, 3, 3, 3});
    Tensor out = ops::conv2d(nullptr, input, weight, Tensor(), 2, 1);
    CHECK(out.shape() == Shape4{2, 4, 3, 4});
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d output extent contract") {
    KeyedRng rng(4);
    Tensor input = random_tensor({1, 2, 11, 9}, rng);
    Tensor weight = random_tensor({3, 2, 3, 3}, rng);
    // floor((11 + 2*2 - 2*(3-1) - 1)/2) + 1 = 6 ; floor((9+4-4-1)/2)+1 = 5
    Tensor out = ops::conv2d(nullptr, input, weight, Tensor(), 2, 2, 2);
    CHECK(out.shape() == Shape4{1, 3, 6, 5});
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
    Tensor input = Tensor::zeros({1, 3, 4, 4});
    Tensor weight = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_WITH_AS(ops::conv2d(nullptr, input, weight, Tensor(), 1, 1),
                         doctest::Contains("(1,3,4,4)"), ConfigError);
    CHECK_THROWS_AS(ops::conv2d(nullptr, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1, 2, 5, 5}),
                                Tensor(), 1, 0),
                    ConfigError);
}

TEST_CASE("conv2d is linear in its input") {
    KeyedRng rng(5);
    Tensor weight = random_tensor({4, 3, 3, 3}, rng);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor y = random_tensor({2, 3, 8, 8}, rng);
    const double a = 1.7, b = -0.4;
    Tensor combo = Tensor::zeros({2, 3, 8, 8});
    for (std::size_t i = 0; i < combo.size(); ++i)
        combo.data()[i] = a * x.data()[i] + b * y.data()[i];

    Tensor out_combo = ops::conv2d(nullptr, combo, weight, Tensor(), 1, 1);
    Tensor out_x = ops::conv2d(nullptr, x, weight, Tensor(), 1, 1);
    Tensor out_y = ops::conv2d(nullptr, y, weight, Tensor(), 1, 1);
    for (std::size_t i = 0; i < out_combo.size(); ++i)
        CHECK(std::abs(out_combo.data()[i] - (a * out_x.data()[i] + b * out_y.data()[i])) < 1e-10);
}

TEST_CASE("conv2d dilated backward matches finite differences") {
    KeyedRng rng(6);
    Tensor input = random_tensor({2, 4, 8, 8}, rng, 1.0, true);
    Tensor weight = random_tensor({6, 4, 3, 3}, rng, 0.5, true);
    Tensor bias = random_tensor({1, 6, 1, 1}, rng, 0.1, true);

    auto forward = [&]() {
        Tensor out = ops::conv2d(nullptr, input, weight, bias, 1, 2, 2);
        double acc = 0.0;
        for (double v : out.values()) acc += v;
        return acc;
    };

    ComputationTape tape;
    Tensor out = ops::conv2d(&tape, input, weight, bias, 1, 2, 2);
    Tensor loss = ops::sum(&tape, out);
    tape.backward(loss);

    CHECK(max_rel_error(weight.grad(), finite_difference(weight, forward)) < 1e-4);
    CHECK(max_rel_error(input.grad(), finite_difference(input, forward)) < 1e-4);
    CHECK(max_rel_error(bias.grad(), finite_difference(bias, forward)) < 1e-4);
}

TEST_CASE("batchnorm2d is a fixed point on normalized input") {
    KeyedRng rng(7);
    const Shape4 shape{4, 2, 5, 5};
    Tensor input = random_tensor(shape, rng);
    // Normalize each channel exactly over (N,H,W).
    const std::size_t m = shape.n * shape.plane();
    for (std::size_t c = 0; c < shape.c; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t n = 0; n < shape.n; ++n)
            for (std::size_t i = 0; i < shape.plane(); ++i)
                mean += input.data()[(n * shape.c + c) * shape.plane() + i];
        mean /= static_cast<double>(m);
        for (std::size_t n = 0; n < shape.n; ++n)
            for (std::size_t i = 0; i < shape.plane(); ++i) {
                double& v = input.data()[(n * shape.c + c) * shape.plane() + i];
                v -= mean;
                var += v * v;
            }
        var /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var);
        for (std::size_t n = 0; n < shape.n; ++n)
            for (std::size_t i = 0; i < shape.plane(); ++i)
                input.data()[(n * shape.c + c) * shape.plane() + i] *= inv;
    }

    auto state = ops::BatchNormState::make(2, 0.1, 1e-12);
    Tensor out = ops::batchnorm2d(nullptr, input, state);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(std::abs(out.data()[i] - input.data()[i]) < 1e-6);
}

TEST_CASE("batchnorm2d training statistics match gamma and shift") {
    KeyedRng rng(8);
    const Shape4 shape{3, 4, 6, 6};
    Tensor input = random_tensor(shape, rng, 2.5);
    auto state = ops::BatchNormState::make(4);
    state.gamma.values() = {1.5, 0.5, 2.0, 1.0};
    state.shift.values() = {0.3, -0.7, 0.0, 4.0};

    Tensor out = ops::batchnorm2d(nullptr, input, state);
    const std::size_t m = shape.n * shape.plane();
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t n = 0; n < shape.n; ++n)
            for (std::size_t i = 0; i < shape.plane(); ++i)
                mean += out.data()[(n * shape.c + c) * shape.plane() + i];
        mean /= static_cast<double>(m);
        for (std::size_t n = 0; n < shape.n; ++n)
            for (std::size_t i = 0; i < shape.plane(); ++i) {
                const double d = out.data()[(n * shape.c + c) * shape.plane() + i] - mean;
                var += d * d;
            }
        var /= static_cast<double>(m);
        CHECK(std::abs(mean - state.shift.data()[c]) < 1e-6);
        CHECK(std::abs(var - state.gamma.data()[c] * state.gamma.data()[c]) < 1e-4);
    }
}

TEST_CASE("batchnorm2d inference on a constant channel is zero") {
    Tensor input = Tensor::full({1, 1, 4, 4}, 3.25);
    auto state = ops::BatchNormState::make(1);
    state.mode = ops::BatchNormState::Mode::Inference;
    state.running_mean = {3.25};
    state.running_var = {1.0};
    Tensor out = ops::batchnorm2d(nullptr, input, state);
    for (double v : out.values()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("batchnorm2d rejects a degenerate training batch") {
    Tensor input = Tensor::zeros({1, 2, 1, 1});
    auto state = ops::BatchNormState::make(2);
    CHECK_THROWS_WITH_AS(ops::batchnorm2d(nullptr, input, state),
                         doctest::Contains("degenerate"), ConfigError);
}

TEST_CASE("batchnorm2d training backward matches finite differences") {
    KeyedRng rng(9);
    Tensor input = random_tensor({2, 3, 4, 4}, rng, 1.3, true);
    auto state = ops::BatchNormState::make(3);
    state.gamma.values() = {1.2, 0.8, 1.0};
    state.shift.values() = {0.1, -0.2, 0.5};
    Tensor probe = random_tensor({2, 3, 4, 4}, rng);

    auto forward = [&]() {
        auto fresh = ops::BatchNormState::make(3);
        fresh.gamma.values() = state.gamma.values();
        fresh.shift.values() = state.shift.values();
        Tensor out = ops::batchnorm2d(nullptr, input, fresh);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out.data()[i] * probe.data()[i];
        return acc;
    };

    ComputationTape tape;
    Tensor out = ops::batchnorm2d(&tape, input, state);
    Tensor loss = probe_loss(&tape, out, probe);
    tape.backward(loss);

    CHECK(max_rel_error(input.grad(), finite_difference(input, forward)) < 1e-4);
    CHECK(max_rel_error(state.gamma.grad(), finite_difference(state.gamma, forward)) < 1e-4);
    CHECK(max_rel_error(state.shift.grad(), finite_difference(state.shift, forward)) < 1e-4);
}

TEST_CASE("bilinear_upsample keeps constants and single pixels") {
    Tensor constant = Tensor::full({1, 2, 3, 3}, 0.625);
    Tensor up = ops::bilinear_upsample(nullptr, constant, 7, 5);
    for (double v : up.values()) CHECK(v == 0.625);

    Tensor pixel = Tensor::full({1, 1, 1, 1}, -2.5);
    Tensor up2 = ops::bilinear_upsample(nullptr, pixel, 2, 2);
    CHECK(up2.shape() == Shape4{1, 1, 2, 2});
    for (double v : up2.values()) CHECK(v == -2.5);
}

TEST_CASE("bilinear_upsample rejects downsampling") {
    Tensor input = Tensor::zeros({1, 1, 4, 4});
    CHECK_THROWS_AS(ops::bilinear_upsample(nullptr, input, 3, 4), ConfigError);
}

TEST_CASE("bilinear_upsample backward matches finite differences") {
    KeyedRng rng(10);
    Tensor input = random_tensor({1, 2, 4, 4}, rng, 1.0, true);
    Tensor probe = random_tensor({1, 2, 9, 9}, rng);

    auto forward = [&]() {
        Tensor out = ops::bilinear_upsample(nullptr, input, 9, 9);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out.data()[i] * probe.data()[i];
        return acc;
    };

    ComputationTape tape;
    Tensor loss = probe_loss(&tape, ops::bilinear_upsample(&tape, input, 9, 9), probe);
    tape.backward(loss);
    CHECK(max_rel_error(input.grad(), finite_difference(input, forward)) < 1e-4);
}

TEST_CASE("softmax cross entropy on uniform logits is ln K") {
    Tensor logits = Tensor::zeros({1, 2, 3, 3});
    LabelMap target(3, 3, 1);
    Tensor loss = ops::softmax_cross_entropy_map(nullptr, logits, {target});
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("softmax cross entropy saturates with a +30 margin") {
    KeyedRng rng(11);
    const std::size_t k = 4;
    Tensor logits = Tensor::zeros({1, k, 2, 2});
    LabelMap target(2, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        target.values[i] = static_cast<std::uint8_t>(rng.uniform_int(k));
        for (std::size_t c = 0; c < k; ++c)
            logits.data()[c * 4 + i] = c == target.values[i] ? 30.0 : 0.0;
    }
    CHECK(ops::softmax_cross_entropy_map(nullptr, logits, {target}).item() < 1e-9);
}

TEST_CASE("softmax cross entropy is invariant to per-pixel logit shifts") {
    KeyedRng rng(12);
    Tensor logits = random_tensor({1, 3, 4, 4}, rng, 2.0);
    LabelMap target = random_label_map(4, 4, 3, rng, 0.1);
    const double base = ops::softmax_cross_entropy_map(nullptr, logits, {target}).item();

    Tensor shifted = logits.clone();
    KeyedRng rng2(13);
    for (std::size_t i = 0; i < 16; ++i) {
        const double c = rng2.normal() * 5.0;
        for (std::size_t ch = 0; ch < 3; ++ch) shifted.data()[ch * 16 + i] += c;
    }
    const double after = ops::softmax_cross_entropy_map(nullptr, shifted, {target}).item();
    CHECK(std::abs(base - after) < 1e-10);
}

TEST_CASE("softmax cross entropy error paths") {
    Tensor logits = Tensor::zeros({1, 3, 2, 2});
    LabelMap all_ignored(2, 2, kIgnoreLabel);
    CHECK_THROWS_AS(ops::softmax_cross_entropy_map(nullptr, logits, {all_ignored}), DataError);

    LabelMap bad(2, 2, 3);  // label == K
    CHECK_THROWS_WITH_AS(ops::softmax_cross_entropy_map(nullptr, logits, {bad}),
                         doctest::Contains("label 3"), DataError);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
    KeyedRng rng(14);
    Tensor logits = random_tensor({1, 3, 2, 2}, rng, 1.5, true);
    LabelMap target = random_label_map(2, 2, 3, rng, 0.2);

    auto forward = [&]() {
        return ops::softmax_cross_entropy_map(nullptr, logits, {target}).item();
    };

    ComputationTape tape;
    Tensor loss = ops::softmax_cross_entropy_map(&tape, logits, {target});
    tape.backward(loss);
    CHECK(max_rel_error(logits.grad(), finite_difference(logits, forward)) < 1e-4);
}

TEST_CASE("backward of sum is all ones; of sum of squares is 2x") {
    KeyedRng rng(15);
    Tensor x = random_tensor({2, 3, 4, 5}, rng, 1.0, true);

    ComputationTape tape;
    Tensor loss = ops::sum(&tape, x);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);

    Tensor y = random_tensor({1, 2, 3, 3}, rng, 1.0, true);
    ComputationTape tape2;
    Tensor loss2 = ops::sum(&tape2, ops::mul(&tape2, y, y));
    tape2.backward(loss2);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.grad()[i] == doctest::Approx(2.0 * y.data()[i]).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root recorded on the tape") {
    Tensor x = Tensor::zeros({1, 1, 2, 2}, true);
    ComputationTape tape;
    Tensor out = ops::relu(&tape, x);
    CHECK_THROWS_AS(tape.backward(out), std::logic_error);

    Tensor detached = Tensor::scalar(1.0, true);
    CHECK_THROWS_AS(tape.backward(detached), std::logic_error);
}

TEST_CASE("repeated backward accumulates additively") {
    Tensor x = Tensor::full({1, 1, 1, 2}, 3.0, true);
    ComputationTape tape;
    Tensor loss = ops::sum(&tape, x);
    tape.backward(loss);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("composite conv-bn-relu-loss graph passes a gradient check") {
    KeyedRng rng(16);
    Tensor input = random_tensor({2, 2, 8, 8}, rng, 1.0, true);
    Tensor weight = random_tensor({3, 2, 3, 3}, rng, 0.5, true);
    auto bn = ops::BatchNormState::make(3);
    LabelMap t0 = random_label_map(8, 8, 3, rng, 0.1);
    LabelMap t1 = random_label_map(8, 8, 3, rng, 0.1);

    auto forward = [&]() {
        auto fresh = ops::BatchNormState::make(3);
        fresh.gamma.values() = bn.gamma.values();
        fresh.shift.values() = bn.shift.values();
        Tensor h = ops::conv2d(nullptr, input, weight, Tensor(), 1, 1);
        h = ops::relu(nullptr, ops::batchnorm2d(nullptr, h, fresh));
        return ops::softmax_cross_entropy_map(nullptr, h, {t0, t1}).item();
    };

    ComputationTape tape;
    Tensor h = ops::conv2d(&tape, input, weight, Tensor(), 1, 1);
    h = ops::relu(&tape, ops::batchnorm2d(&tape, h, bn));
    Tensor loss = ops::softmax_cross_entropy_map(&tape, h, {t0, t1});
    tape.backward(loss);

    CHECK(max_rel_error(weight.grad(), finite_difference(weight, forward)) < 1e-4);
    CHECK(max_rel_error(input.grad(), finite_difference(input, forward)) < 1e-4);
}

TEST_CASE("randomized gradient sweep across ops") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        KeyedRng rng(seed, 0xF00D);
        const std::size_t h = 3 + rng.uniform_int(4);
        const std::size_t w = 3 + rng.uniform_int(4);
        Tensor x = random_tensor({1, 2, h, w}, rng, 1.0, true);
        Tensor weight = random_tensor({2, 2, 3, 3}, rng, 0.6, true);
        Tensor probe = Tensor();

        auto forward = [&]() {
            Tensor o = ops::conv2d(nullptr, x, weight, Tensor(), 1, 1);
            o = ops::relu(nullptr, o);
            o = ops::bilinear_upsample(nullptr, o, h + 2, w + 3);
            o = ops::global_avg_pool(nullptr, o);
            double acc = 0.0;
            for (std::size_t i = 0; i < o.size(); ++i) acc += o.data()[i] * probe.data()[i];
            return acc;
        };

        ComputationTape tape;
        Tensor o = ops::conv2d(&tape, x, weight, Tensor(), 1, 1);
        o = ops::relu(&tape, o);
        o = ops::bilinear_upsample(&tape, o, h + 2, w + 3);
        o = ops::global_avg_pool(&tape, o);
        probe = random_tensor(o.shape(), rng);
        Tensor loss = probe_loss(&tape, o, probe);
        tape.backward(loss);

        CHECK(max_rel_error(x.grad(), finite_difference(x, forward)) < 1e-4);
        CHECK(max_rel_error(weight.grad(), finite_difference(weight, forward)) < 1e-4);
    }
}

TEST_CASE("concat_channels splits gradients back to its parts") {
    KeyedRng rng(17);
    Tensor a = random_tensor({2, 2, 3, 3}, rng, 1.0, true);
    Tensor b = random_tensor({2, 1, 3, 3}, rng, 1.0, true);
    Tensor probe = random_tensor({2, 3, 3, 3}, rng);

    auto forward = [&]() {
        Tensor o = ops::concat_channels(nullptr, {a, b});
        double acc = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) acc += o.data()[i] * probe.data()[i];
        return acc;
    };

    ComputationTape tape;
    Tensor loss = probe_loss(&tape, ops::concat_channels(&tape, {a, b}), probe);
    tape.backward(loss);
    CHECK(max_rel_error(a.grad(), finite_difference(a, forward)) < 1e-4);
    CHECK(max_rel_error(b.grad(), finite_difference(b, forward)) < 1e-4);
}

TEST_CASE("tensor record IO is lossless") {
    KeyedRng rng(18);
    Tensor t = random_tensor({2, 3, 4, 5}, rng, 3.0);
    std::stringstream buf;
    write_tensor(buf, t);
    Tensor back = read_tensor(buf);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());
}
