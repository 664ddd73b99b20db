// Acceptance suite: one self-contained check per criterion, each printing a
// single [PASS]/[FAIL] line. Run all, or one via --criterion N.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>  // IWYU pragma: keep
#include <string>
#include <vector>

#include "dropreg/harness.hpp"
#include "dropreg/ops.hpp"
#include "dropreg/variance_lab.hpp"
#include "support/oracles.hpp"

using namespace dropreg;
using namespace dropreg::testing;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void require(bool condition, const std::string& what) {
        if (!condition) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "dropreg_acceptance";
    fs::create_directories(dir);
    return dir;
}

double median_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

// ---- criterion 1: gradient suite --------------------------------------

Check criterion_gradients() {
    Check check;
    double worst_op = 0.0;

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        KeyedRng rng(seed, 0xACC1);
        const std::size_t h = 4 + rng.uniform_int(4);
        const std::size_t w = 4 + rng.uniform_int(4);
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int dilation = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(3));

        Tensor x = random_tensor({2, 2, h, w}, rng, 1.0, true);
        Tensor weight = random_tensor({3, 2, 3, 3}, rng, 0.5, true);
        auto bn = ops::BatchNormState::make(3);
        std::vector<LabelMap> targets;
        Tensor probe;

        auto build = [&](ComputationTape* tape, ops::BatchNormState& state) {
            Tensor o = ops::conv2d(tape, x, weight, Tensor(), stride, pad, dilation);
            o = ops::relu(tape, ops::batchnorm2d(tape, o, state));
            o = ops::bilinear_upsample(tape, o, h + 2, w + 2);
            return o;
        };
        auto loss_fn = [&]() {
            auto fresh = ops::BatchNormState::make(3);
            Tensor o = build(nullptr, fresh);
            double acc = 0.0;
            for (std::size_t i = 0; i < o.size(); ++i) acc += o.data()[i] * probe.data()[i];
            return acc;
        };

        ComputationTape tape;
        Tensor out = build(&tape, bn);
        probe = random_tensor(out.shape(), rng);
        Tensor loss = ops::sum(&tape, ops::mul(&tape, out, probe));
        tape.backward(loss);

        worst_op = std::max(worst_op, max_rel_error(x.grad(), finite_difference(x, loss_fn)));
        worst_op =
            std::max(worst_op, max_rel_error(weight.grad(), finite_difference(weight, loss_fn)));

        // Pixelwise softmax cross entropy against its own finite differences.
        Tensor logits = random_tensor({1, 3, 4, 4}, rng, 1.5, true);
        LabelMap target = random_label_map(4, 4, 3, rng, 0.1);
        auto ce = [&]() { return ops::softmax_cross_entropy_map(nullptr, logits, {target}).item(); };
        ComputationTape tape2;
        tape2.backward(ops::softmax_cross_entropy_map(&tape2, logits, {target}));
        worst_op = std::max(worst_op, max_rel_error(logits.grad(), finite_difference(logits, ce)));
    }
    check.require(worst_op < 1e-4,
                  "op-level gradient error " + std::to_string(worst_op) + " >= 1e-4");

    // Full model with hooks active at frozen mask keys.
    double worst_model = 0.0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        ModelConfig cfg;
        cfg.num_classes = 3;
        cfg.stage_widths = {4, 8};
        cfg.blocks_per_stage = 1;
        cfg.pyramid_rates = {1, 2};
        cfg.decoder_width = 8;
        cfg.output_stride = 4;
        HookSpecs hooks;
        hook_at(hooks, HookSite::BackboneBlocks).method = DropMethod::UOut;
        hook_at(hooks, HookSite::SppOutput).method = DropMethod::Channel;
        SegModel model(cfg, hooks, seed + 50);

        KeyedRng rng(seed, 0xACC2);
        Tensor x = random_tensor({2, 3, 8, 8}, rng, 0.5);
        std::vector<LabelMap> targets = {random_label_map(8, 8, 3, rng, 0.1),
                                         random_label_map(8, 8, 3, rng, 0.1)};
        auto loss_fn = [&]() {
            Tensor logits = model.forward(nullptr, x, RegularizerMode::Train, 2, 1);
            return ops::softmax_cross_entropy_map(nullptr, logits, targets).item();
        };
        ComputationTape tape;
        Tensor logits = model.forward(&tape, x, RegularizerMode::Train, 2, 1);
        tape.backward(ops::softmax_cross_entropy_map(&tape, logits, targets));

        const NamedTensor stem = model.named_parameters().front();
        KeyedRng pick(seed, 0xACC3);
        for (int probe = 0; probe < 3; ++probe) {
            const std::size_t idx = pick.uniform_int(stem.tensor.size());
            worst_model = std::max(
                worst_model,
                rel_error(stem.tensor.grad()[idx], finite_difference_at(stem.tensor, idx, loss_fn)));
        }
    }
    check.require(worst_model < 1e-3,
                  "model-level gradient error " + std::to_string(worst_model) + " >= 1e-3");
    check.note("op worst " + std::to_string(worst_op) + ", model worst " +
               std::to_string(worst_model));
    return check;
}

// ---- criterion 2: variance-shift reproduction --------------------------

Check criterion_variance_shift() {
    Check check;
    ShiftScenario dropout;
    dropout.keep_p = 0.9;
    const ShiftReport d = monte_carlo_shift(dropout, ShiftMethod::Dropout);
    check.require(std::abs(d.monte_carlo - 0.9) <= 0.01,
                  "dropout shift " + std::to_string(d.monte_carlo) + " not within 0.9 +- 0.01");

    ShiftScenario uout;
    uout.beta = 0.1;
    const ShiftReport u = monte_carlo_shift(uout, ShiftMethod::UOut);
    check.require(std::abs(u.monte_carlo - u.closed_form) <= 0.005,
                  "uout shift " + std::to_string(u.monte_carlo) + " not within 0.005 of " +
                      std::to_string(u.closed_form));
    check.require(std::abs(u.closed_form - 0.99668) < 5e-6,
                  "uout closed form is not 1/(1 + beta^2/3)");
    // The naive 1/(1 + beta^2) value 0.99010 does not match the derived form.
    check.require(std::abs(u.closed_form - 1.0 / 1.01) > 0.005,
                  "closed form unexpectedly matches 1/(1+beta^2)");
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "dropout %.4f, uout %.5f (closed %.5f; 1/(1+b^2)=0.99010 differs by %.5f)",
                  d.monte_carlo, u.monte_carlo, u.closed_form,
                  std::abs(u.closed_form - 1.0 / 1.01));
    check.note(buf);
    return check;
}

// ---- criterion 3: mask statistics --------------------------------------

Check criterion_mask_statistics() {
    Check check;

    RegularizerSpec vanilla;
    vanilla.method = DropMethod::Vanilla;
    vanilla.p = 0.2;
    vanilla.seed = 101;
    DropMask vmask = make_mask(vanilla, {1, 1, 1000, 1000}, 0);
    std::size_t dropped = 0;
    for (double v : vmask.values) dropped += v == 0.0;
    const double rate = static_cast<double>(dropped) / 1e6;
    check.require(std::abs(rate - 0.2) < 0.002,
                  "vanilla drop rate " + std::to_string(rate) + " off 0.2 by >= 0.002");

    RegularizerSpec channel;
    channel.method = DropMethod::Channel;
    channel.p = 0.2;
    channel.seed = 102;
    KeyedRng rng(1);
    for (int draw = 0; draw < 50; ++draw) {
        const Shape4 shape{2, 8, 6, 6};
        Tensor x = random_tensor(shape, rng);
        Tensor out = apply_mask(nullptr, x, make_mask(channel, shape, 0, 0, draw));
        for (std::size_t nc = 0; nc < 16; ++nc) {
            // Exhaustive plane-constancy: every pixel scales by one factor.
            double factor = -1.0;
            bool constant = true;
            for (std::size_t i = 0; i < shape.plane(); ++i) {
                const double xi = x.data()[nc * shape.plane() + i];
                const double oi = out.data()[nc * shape.plane() + i];
                const double f = oi == 0.0 && xi == 0.0 ? factor : oi / xi;
                if (factor < 0.0) factor = f;
                constant = constant && (std::abs(f - factor) < 1e-12 || (oi == 0.0 && xi == 0.0));
            }
            check.require(constant, "channel mask not plane-constant");
        }
    }

    RegularizerSpec block;
    block.method = DropMethod::DropBlock;
    block.p = 0.1;
    block.block_size = 3;
    block.seed = 103;
    double block_dropped = 0.0;
    for (int draw = 0; draw < 10000; ++draw) {
        DropMask mask = make_mask(block, {1, 1, 10, 10}, 0, 0, draw);
        for (double v : mask.values) block_dropped += v == 0.0;
    }
    const double block_rate = block_dropped / 1e6;
    check.require(std::abs(block_rate - 0.1) / 0.1 < 0.15,
                  "dropblock fraction " + std::to_string(block_rate) +
                      " beyond 15% relative of 0.1");

    // Every zero must belong to a fully zero 3x3 square.
    for (int draw = 0; draw < 200; ++draw) {
        DropMask mask = make_mask(block, {1, 1, 10, 10}, 0, 1, draw);
        for (std::size_t y = 0; y < 10; ++y) {
            for (std::size_t x = 0; x < 10; ++x) {
                if (mask.values[y * 10 + x] != 0.0) continue;
                bool covered = false;
                for (std::size_t by = y >= 2 ? y - 2 : 0; by + 3 <= 10 && by <= y && !covered; ++by)
                    for (std::size_t bx = x >= 2 ? x - 2 : 0; bx + 3 <= 10 && bx <= x; ++bx) {
                        bool all = true;
                        for (std::size_t dy = 0; dy < 3; ++dy)
                            for (std::size_t dx = 0; dx < 3; ++dx)
                                all = all && mask.values[(by + dy) * 10 + bx + dx] == 0.0;
                        covered = covered || all;
                    }
                check.require(covered, "dropblock zero outside any 3x3 zero square");
            }
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "vanilla rate %.4f, dropblock fraction %.4f", rate, block_rate);
    check.note(buf);
    return check;
}

// ---- criterion 4: mIoU oracle ------------------------------------------

Check criterion_miou_oracle() {
    Check check;
    KeyedRng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t k = 2 + rng.uniform_int(3);
        LabelMap pred = random_label_map(8, 8, k, rng, 0.08);
        LabelMap truth = random_label_map(8, 8, k, rng, 0.08);
        const double lib = image_miou(pred, truth, k);
        const double oracle = bruteforce_miou(pred, truth, k);
        if (lib != oracle) {
            check.require(false, "mismatch vs brute force at trial " + std::to_string(trial));
            break;
        }
    }

    LabelMap self = random_label_map(8, 8, 4, rng, 0.0);
    check.require(image_miou(self, self, 4) == 1.0, "identity mIoU is not exactly 1");

    LabelMap truth(2, 2);
    truth.values = {0, 0, 1, 1};
    LabelMap pred(2, 2, 0);
    check.require(image_miou(pred, truth, 2) == 0.25, "hand-counted 2x2 case is not 0.25");
    return check;
}

// ---- criterion 5: schedules ---------------------------------------------

Check criterion_schedules() {
    Check check;
    check.require(poly_lr(7e-3, 0, 1000, 0.9) == 7e-3, "poly_lr(0) != 7e-3");
    check.require(poly_lr(7e-3, 1000, 1000, 0.9) == 0.0, "poly_lr(M) != 0");
    const double midpoint = poly_lr(7e-3, 500, 1000, 0.9);
    const double expected = 7e-3 * std::pow(0.5, 0.9);
    check.require(std::abs(midpoint - expected) <= 1e-7,
                  "poly_lr midpoint " + std::to_string(midpoint) + " != 7e-3 * 0.5^0.9");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "midpoint 7e-3*0.5^0.9 = %.8g", midpoint);
    check.note(buf);

    RegularizerSpec spec;
    spec.method = DropMethod::Channel;
    spec.p = 0.2;
    spec.schedule.kind = Schedule::Kind::LinearRamp;
    spec.schedule.ramp_epochs = 30;
    check.require(scheduled_p(spec, 0) == 0.0, "scheduled_p(0) != 0");
    check.require(scheduled_p(spec, 30) == 0.2, "scheduled_p(30) != 0.2");
    check.require(scheduled_p(spec, 15) == 0.1, "scheduled_p(15) != 0.1");
    return check;
}

// ---- criterion 6: determinism --------------------------------------------

ExperimentConfig small_experiment(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.name = "determinism";
    cfg.train.epochs = 5;
    cfg.train.batch_size = 2;
    cfg.train.seed = seed;
    cfg.train.subsample_fraction = 0.25;
    cfg.train.synthetic.canvas = 16;
    cfg.train.synthetic.seed = 11;
    cfg.train.synthetic_train_count = 8;
    cfg.train.synthetic_val_count = 3;
    cfg.train.augment.crop_size = 16;
    cfg.model.num_classes = 5;
    cfg.model.stage_widths = {4, 8};
    cfg.model.blocks_per_stage = 1;
    cfg.model.pyramid_rates = {1, 2};
    cfg.model.decoder_width = 8;
    cfg.model.output_stride = 4;
    return cfg;
}

Check criterion_determinism() {
    Check check;
    const fs::path base = work_dir() / "determinism";
    fs::remove_all(base);

    ExperimentConfig cfg = small_experiment(23);
    run_experiment(cfg, (base / "run_a").string());
    run_experiment(cfg, (base / "run_b").string());
    check.require(slurp((base / "run_a/metrics.csv").string()) ==
                      slurp((base / "run_b/metrics.csv").string()),
                  "two identical-seed runs differ in metrics.csv");
    check.require(!slurp((base / "run_a/metrics.csv").string()).empty(), "empty metrics");

    ExperimentConfig matrix_base = small_experiment(29);
    matrix_base.train.epochs = 2;
    const auto configs = table2_matrix(false, matrix_base.train, matrix_base.model);
    run_matrix(configs, 1, (base / "p1").string());
    run_matrix(configs, 4, (base / "p4").string());
    check.require(slurp((base / "p1/summary.csv").string()) ==
                      slurp((base / "p4/summary.csv").string()),
                  "matrix parallelism 1 vs 4 summary differs");
    for (const auto& exp : configs) {
        check.require(slurp((base / "p1" / exp.name / "metrics.csv").string()) ==
                          slurp((base / "p4" / exp.name / "metrics.csv").string()),
                      "matrix parallelism metrics differ for " + exp.name);
    }
    check.note("16-row matrix identical at parallelism 1 and 4");
    return check;
}

// ---- criterion 7: directional reproduction -------------------------------

ExperimentConfig headline_config(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.train.epochs = 100;
    cfg.train.batch_size = 4;
    cfg.train.seed = seed;
    cfg.train.subsample_fraction = 0.1;
    cfg.train.synthetic.canvas = 48;
    cfg.train.synthetic.seed = 77;
    cfg.train.synthetic.noise_amplitude = 0.12;
    cfg.train.synthetic_train_count = 160;
    cfg.train.synthetic_val_count = 32;
    cfg.train.augment.crop_size = 48;
    cfg.train.augment.scale_min = 0.9;
    cfg.train.augment.scale_max = 1.1;
    cfg.model.num_classes = 5;
    cfg.schedule_epochs = 30;
    return cfg;
}

Check criterion_directional() {
    Check check;
    const fs::path base = work_dir() / "directional";
    fs::remove_all(base);

    std::vector<double> none_val, chan_val, none_gap;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ExperimentConfig none = headline_config(seed);
        none.name = "none";
        const std::string none_dir = (base / ("none_s" + std::to_string(seed))).string();
        ExperimentResult rn = run_experiment(none, none_dir);

        auto [train_data, val_data] = build_datasets(none.train);
        SegModel best = load_model_checkpoint(none_dir);
        const EvalResult train_eval = evaluate_dataset(best, train_data, none.train.augment);
        none_val.push_back(rn.best.val_summary.mean);
        none_gap.push_back(train_eval.summary.mean - rn.best.val_summary.mean);

        ExperimentConfig chan = headline_config(seed);
        chan.name = "all-chandrop";
        chan.scheduled = true;
        for (HookSite site : {HookSite::BackboneBlocks, HookSite::SppOutput,
                              HookSite::DecoderOutput})
            hook_at(chan.hooks, site).method = DropMethod::Channel;
        ExperimentResult rc =
            run_experiment(chan, (base / ("chan_s" + std::to_string(seed))).string());
        chan_val.push_back(rc.best.val_summary.mean);

        char buf[128];
        std::snprintf(buf, sizeof(buf), "seed %llu: none %.4f (gap %.4f) vs chandrop %.4f",
                      static_cast<unsigned long long>(seed), none_val.back(), none_gap.back(),
                      chan_val.back());
        std::cout << "  " << buf << "\n";
    }

    const double none_median = median_of(none_val);
    const double chan_median = median_of(chan_val);
    const double gap_median = median_of(none_gap);
    check.require(chan_median > none_median,
                  "median scheduled all-chandrop " + std::to_string(chan_median) +
                      " does not exceed none " + std::to_string(none_median));
    check.require(gap_median >= 0.1,
                  "median none train/val gap " + std::to_string(gap_median) + " < 0.1");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "medians: none %.4f, chandrop %.4f, gap %.4f", none_median,
                  chan_median, gap_median);
    check.note(buf);
    return check;
}

// ---- criterion 8: memorization smoke test ---------------------------------

Check criterion_memorization() {
    Check check;
    ExperimentConfig cfg;
    cfg.name = "memorize";
    cfg.train.epochs = 200;
    cfg.train.batch_size = 1;
    cfg.train.seed = 3;
    cfg.train.subsample_fraction = 1.0;
    cfg.train.synthetic.canvas = 32;
    cfg.train.synthetic.seed = 21;
    cfg.train.synthetic_train_count = 1;
    cfg.train.synthetic_val_count = 1;
    cfg.train.augment.crop_size = 32;
    cfg.train.augment.scale_min = cfg.train.augment.scale_max = 1.0;
    cfg.train.augment.flip_prob = 0.0;
    cfg.train.augment.blur_min = cfg.train.augment.blur_max = 0.0;
    cfg.model.num_classes = 5;

    const fs::path dir = work_dir() / "memorize";
    fs::remove_all(dir);
    ExperimentResult result = run_experiment(cfg, dir.string());
    double min_loss = 1e9;
    for (const EpochMetrics& m : result.history) min_loss = std::min(min_loss, m.train_loss);
    check.require(min_loss < 0.01,
                  "single-sample train loss only reached " + std::to_string(min_loss));
    check.note("min train loss " + std::to_string(min_loss));
    return check;
}

// ---- criterion 9: data pipeline -------------------------------------------

Check criterion_datapipe() {
    Check check;

    SyntheticSceneSpec sspec;
    sspec.canvas = 24;
    sspec.seed = 13;
    std::vector<LabelMap> labels;
    for (std::size_t i = 0; i < 60; ++i)
        labels.push_back(generate_synthetic_sample(sspec, i).label);
    std::vector<std::size_t> histogram(sspec.num_classes(), 0);
    for (const LabelMap& l : labels) ++histogram[dominant_class(l, sspec.num_classes())];
    const auto picked = stratified_subsample(labels, 0.1, 31, sspec.num_classes());
    std::vector<std::size_t> picked_hist(sspec.num_classes(), 0);
    for (std::size_t idx : picked) ++picked_hist[dominant_class(labels[idx], sspec.num_classes())];
    for (std::size_t cls = 0; cls < sspec.num_classes(); ++cls) {
        const std::size_t expect =
            static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(histogram[cls])));
        check.require(picked_hist[cls] == expect,
                      "stratum " + std::to_string(cls) + " picked " +
                          std::to_string(picked_hist[cls]) + " expected " + std::to_string(expect));
    }

    // Alignment: intensity and label centroids of single-shape scenes stay
    // within one pixel across augmentation draws.
    double worst_drift = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        KeyedRng setup(trial, 0xCE27);
        ShapeInstance shape;
        shape.kind = static_cast<ShapeKind>(setup.uniform_int(4));
        shape.class_id = static_cast<std::uint8_t>(static_cast<int>(shape.kind) + 1);
        shape.size = setup.uniform(5.0, 9.0);
        shape.cx = setup.uniform(12.0, 28.0);
        shape.cy = setup.uniform(12.0, 28.0);

        SamplePair pair;
        pair.label = LabelMap(40, 40, 0);
        rasterize_shape(shape, pair.label);
        pair.image = Tensor::zeros({1, 3, 40, 40});
        for (std::size_t y = 0; y < 40; ++y)
            for (std::size_t x = 0; x < 40; ++x)
                if (pair.label.at(y, x) != 0)
                    for (std::size_t c = 0; c < 3; ++c) pair.image.at(0, c, y, x) = 1.0;

        AugmentSpec aug;
        aug.crop_size = 40;
        aug.norm_mean = {0, 0, 0};
        aug.norm_std = {1, 1, 1};
        aug.blur_min = aug.blur_max = 0.0;
        KeyedRng rng(trial, 0xA9);
        SamplePair out = augment_pair(pair, aug, rng);

        double lx = 0, ly = 0, lm = 0, ix = 0, iy = 0, iw = 0;
        for (std::size_t y = 0; y < 40; ++y)
            for (std::size_t x = 0; x < 40; ++x) {
                if (out.label.at(y, x) == shape.class_id) {
                    lx += static_cast<double>(x);
                    ly += static_cast<double>(y);
                    lm += 1.0;
                }
                const double v = out.image.at(0, 0, y, x);
                ix += v * static_cast<double>(x);
                iy += v * static_cast<double>(y);
                iw += v;
            }
        if (lm < 4.0 || iw < 4.0) continue;
        worst_drift = std::max({worst_drift, std::abs(lx / lm - ix / iw),
                                std::abs(ly / lm - iy / iw)});
    }
    check.require(worst_drift <= 1.0,
                  "centroid drift " + std::to_string(worst_drift) + " px > 1 px");

    // Label value sets never grow under augmentation.
    AugmentSpec aug;
    aug.crop_size = 48;
    for (std::uint64_t trial = 0; trial < 25; ++trial) {
        SamplePair pair = generate_synthetic_sample(sspec, trial);
        std::vector<bool> allowed(256, false);
        for (std::uint8_t v : pair.label.values) allowed[v] = true;
        allowed[kIgnoreLabel] = true;
        KeyedRng rng(trial, 0xF11);
        SamplePair out = augment_pair(pair, aug, rng);
        for (std::uint8_t v : out.label.values)
            check.require(allowed[v], "augmentation invented label " + std::to_string(v));
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "centroid drift max %.3f px", worst_drift);
    check.note(buf);
    return check;
}

struct Criterion {
    int id;
    const char* title;
    std::function<Check()> run;
};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
    }

    const std::vector<Criterion> criteria = {
        {1, "gradient suite (ops + full model finite differences)", criterion_gradients},
        {2, "variance-shift reproduction (dropout 0.9, uout 0.99668)", criterion_variance_shift},
        {3, "mask statistics (vanilla, channel, dropblock)", criterion_mask_statistics},
        {4, "mIoU oracle (brute-force equality, 500 random pairs)", criterion_miou_oracle},
        {5, "schedules (poly lr, scheduled dropout probability)", criterion_schedules},
        {6, "determinism (repeat runs and matrix parallelism)", criterion_determinism},
        {7, "directional reproduction (none vs scheduled all-chandrop)", criterion_directional},
        {8, "memorization smoke test (single sample, 200 epochs)", criterion_memorization},
        {9, "data pipeline (subsample counts, alignment, label sets)", criterion_datapipe},
    };

    int failures = 0;
    for (const Criterion& criterion : criteria) {
        if (only != 0 && criterion.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Check result;
        try {
            result = criterion.run();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail = std::string("exception: ") + e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d: %s (%.1fs%s%s)\n", result.ok ? "PASS" : "FAIL",
                    criterion.id, criterion.title, seconds, result.detail.empty() ? "" : "; ",
                    result.detail.c_str());
        std::fflush(stdout);
        failures += result.ok ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
