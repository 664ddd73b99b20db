#include "dropreg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "dropreg/errors.hpp"
#include "dropreg/kernels.hpp"
#include "dropreg/rng.hpp"

namespace dropreg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json regularizer_to_json(const RegularizerSpec& spec) {
    return {{"method", drop_method_name(spec.method)},
            {"p", spec.p},
            {"block_size", spec.block_size}};
}

RegularizerSpec regularizer_from_json(const json& j) {
    RegularizerSpec spec;
    if (j.is_string()) {
        spec.method = parse_drop_method(j.get<std::string>());
        return spec;
    }
    spec.method = parse_drop_method(j.value("method", "none"));
    spec.p = j.value("p", spec.p);
    spec.block_size = j.value("block_size", spec.block_size);
    spec.validate();
    return spec;
}

json model_to_json(const ModelConfig& m) {
    return {{"in_channels", m.in_channels},
            {"num_classes", m.num_classes},
            {"stage_widths", m.stage_widths},
            {"blocks_per_stage", m.blocks_per_stage},
            {"pyramid_rates", m.pyramid_rates},
            {"decoder_width", m.decoder_width},
            {"output_stride", m.output_stride}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.in_channels = j.value("in_channels", m.in_channels);
    m.num_classes = j.value("num_classes", m.num_classes);
    m.stage_widths = j.value("stage_widths", m.stage_widths);
    m.blocks_per_stage = j.value("blocks_per_stage", m.blocks_per_stage);
    m.pyramid_rates = j.value("pyramid_rates", m.pyramid_rates);
    m.decoder_width = j.value("decoder_width", m.decoder_width);
    m.output_stride = j.value("output_stride", m.output_stride);
    return m;
}

json hooks_to_json(const HookSpecs& hooks) {
    return {{"resnet", regularizer_to_json(hook_at(hooks, HookSite::BackboneBlocks))},
            {"spp", regularizer_to_json(hook_at(hooks, HookSite::SppOutput))},
            {"decoder", regularizer_to_json(hook_at(hooks, HookSite::DecoderOutput))}};
}

HookSpecs hooks_from_json(const json& j) {
    HookSpecs hooks;
    if (j.contains("resnet")) hook_at(hooks, HookSite::BackboneBlocks) = regularizer_from_json(j["resnet"]);
    if (j.contains("spp")) hook_at(hooks, HookSite::SppOutput) = regularizer_from_json(j["spp"]);
    if (j.contains("decoder")) hook_at(hooks, HookSite::DecoderOutput) = regularizer_from_json(j["decoder"]);
    return hooks;
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.base_lr = j.value("base_lr", t.base_lr);
    t.momentum = j.value("momentum", t.momentum);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.head_lr_multiplier = j.value("head_lr_multiplier", t.head_lr_multiplier);
    t.lr_power = j.value("lr_power", t.lr_power);
    t.seed = j.value("seed", t.seed);
    const std::string source = j.value("dataset", "synthetic");
    if (source == "voc") {
        t.dataset = TrainConfig::Source::Voc;
    } else if (source == "synthetic") {
        t.dataset = TrainConfig::Source::Synthetic;
    } else {
        throw ConfigError("train.dataset must be 'voc' or 'synthetic', got '" + source + "'");
    }
    t.dataset_dir = j.value("dataset_dir", t.dataset_dir);
    t.subsample_fraction = j.value("subsample_fraction", t.subsample_fraction);
    t.backbone_checkpoint = j.value("backbone_checkpoint", t.backbone_checkpoint);

    if (j.contains("synthetic")) {
        const json& s = j["synthetic"];
        t.synthetic.canvas = s.value("canvas", t.synthetic.canvas);
        t.synthetic.shape_classes = s.value("shape_classes", t.synthetic.shape_classes);
        t.synthetic.min_shapes = s.value("min_shapes", t.synthetic.min_shapes);
        t.synthetic.max_shapes = s.value("max_shapes", t.synthetic.max_shapes);
        t.synthetic.noise_amplitude = s.value("noise_amplitude", t.synthetic.noise_amplitude);
        t.synthetic.seed = s.value("seed", t.synthetic.seed);
        t.synthetic_train_count = s.value("train_count", t.synthetic_train_count);
        t.synthetic_val_count = s.value("val_count", t.synthetic_val_count);
    }
    if (j.contains("augment")) {
        const json& a = j["augment"];
        t.augment.crop_size = a.value("crop_size", t.augment.crop_size);
        t.augment.scale_min = a.value("scale_min", t.augment.scale_min);
        t.augment.scale_max = a.value("scale_max", t.augment.scale_max);
        t.augment.flip_prob = a.value("flip_prob", t.augment.flip_prob);
        t.augment.blur_min = a.value("blur_min", t.augment.blur_min);
        t.augment.blur_max = a.value("blur_max", t.augment.blur_max);
        t.augment.norm_mean = a.value("norm_mean", t.augment.norm_mean);
        t.augment.norm_std = a.value("norm_std", t.augment.norm_std);
    }
    return t;
}

json train_to_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"base_lr", t.base_lr},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"head_lr_multiplier", t.head_lr_multiplier},
            {"lr_power", t.lr_power},
            {"seed", t.seed},
            {"dataset", t.dataset == TrainConfig::Source::Voc ? "voc" : "synthetic"},
            {"dataset_dir", t.dataset_dir},
            {"subsample_fraction", t.subsample_fraction},
            {"backbone_checkpoint", t.backbone_checkpoint},
            {"synthetic",
             {{"canvas", t.synthetic.canvas},
              {"shape_classes", t.synthetic.shape_classes},
              {"min_shapes", t.synthetic.min_shapes},
              {"max_shapes", t.synthetic.max_shapes},
              {"noise_amplitude", t.synthetic.noise_amplitude},
              {"seed", t.synthetic.seed},
              {"train_count", t.synthetic_train_count},
              {"val_count", t.synthetic_val_count}}},
            {"augment",
             {{"crop_size", t.augment.crop_size},
              {"scale_min", t.augment.scale_min},
              {"scale_max", t.augment.scale_max},
              {"flip_prob", t.augment.flip_prob},
              {"blur_min", t.augment.blur_min},
              {"blur_max", t.augment.blur_max},
              {"norm_mean", t.augment.norm_mean},
              {"norm_std", t.augment.norm_std}}}};
}

// True when `candidate` beats `incumbent` under the best-epoch rule.
bool better_epoch(const EpochMetrics& candidate, const EpochMetrics& incumbent) {
    if (candidate.val_summary.mean != incumbent.val_summary.mean)
        return candidate.val_summary.mean > incumbent.val_summary.mean;
    return candidate.val_loss < incumbent.val_loss;
}

std::vector<NamedTensor> snapshot_state(const SegModel& model, const SgdOptimizer& opt) {
    std::vector<NamedTensor> state;
    for (const NamedTensor& nt : model.named_parameters())
        state.push_back({nt.name, nt.tensor.clone()});
    for (const NamedTensor& nt : model.named_buffers()) state.push_back(nt);
    for (const NamedTensor& nt : opt.velocity_state()) state.push_back(nt);
    return state;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (!(head_lr_multiplier > 0.0)) throw ConfigError("train: head_lr_multiplier must be positive");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
        throw ConfigError("train: subsample_fraction must be in (0,1]");
    if (dataset == Source::Voc && dataset_dir.empty())
        throw ConfigError("train: voc dataset needs dataset_dir");
    if (dataset == Source::Synthetic) synthetic.validate();
}

void ExperimentConfig::validate() const {
    if (name.empty()) throw ConfigError("experiment: name must be nonempty");
    for (const RegularizerSpec& spec : hooks) spec.validate();
    if (scheduled && schedule_epochs < 1)
        throw ConfigError("experiment: schedule_epochs must be >= 1");
    train.validate();
    model.validate();
}

double poly_lr(double base_lr, std::size_t iteration, std::size_t max_iterations, double power) {
    if (max_iterations < 1) throw ConfigError("poly_lr: max_iterations must be >= 1");
    if (iteration > max_iterations)
        throw ConfigError("poly_lr: iteration " + std::to_string(iteration) + " beyond " +
                          std::to_string(max_iterations));
    const double frac = 1.0 - static_cast<double>(iteration) / static_cast<double>(max_iterations);
    return base_lr * std::pow(frac, power);
}

SgdOptimizer::SgdOptimizer(const std::array<ParameterGroup, 2>& groups, double momentum,
                           double weight_decay, double head_lr_multiplier)
    : momentum_(momentum), weight_decay_(weight_decay) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double mult = groups[g].id == ParamGroupId::Head ? head_lr_multiplier : 1.0;
        for (const NamedTensor& nt : groups[g].params)
            entries_.push_back({nt.name, nt.tensor, Tensor::zeros(nt.tensor.shape()), mult, g});
    }
}

void SgdOptimizer::zero_grad() {
    for (Entry& e : entries_) e.param.zero_grad();
}

void SgdOptimizer::step(double base_lr) {
    const auto& kern = kernels::active();
    for (Entry& e : entries_) {
        const double lr = base_lr * e.multiplier;
        kern.sgd_update(e.param.data(), e.param.grad().data(), e.velocity.data(), e.param.size(),
                        momentum_, weight_decay_, lr);
        last_lrs_[e.group] = lr;
    }
}

std::vector<NamedTensor> SgdOptimizer::velocity_state() const {
    std::vector<NamedTensor> state;
    state.reserve(entries_.size());
    for (const Entry& e : entries_) state.push_back({"velocity." + e.name, e.velocity.clone()});
    return state;
}

void SgdOptimizer::load_velocity(const std::vector<NamedTensor>& state) {
    std::map<std::string, Tensor> incoming;
    for (const NamedTensor& nt : state) incoming.emplace(nt.name, nt.tensor);
    for (Entry& e : entries_) {
        const auto it = incoming.find("velocity." + e.name);
        if (it == incoming.end()) continue;
        if (!(it->second.shape() == e.velocity.shape()))
            throw ConfigError("velocity shape mismatch for " + e.name);
        e.velocity.values() = it->second.values();
    }
}

HookSpecs effective_hooks(const ExperimentConfig& config) {
    HookSpecs hooks = config.hooks;
    for (RegularizerSpec& spec : hooks) {
        spec.seed = config.train.seed;
        spec.schedule.kind =
            config.scheduled ? Schedule::Kind::LinearRamp : Schedule::Kind::Constant;
        spec.schedule.ramp_epochs = config.schedule_epochs;
    }
    return hooks;
}

EvalResult evaluate_dataset(SegModel& model, const Dataset& data, const AugmentSpec& augment) {
    AugmentSpec eval_aug = augment;
    eval_aug.mode = AugmentSpec::Mode::Eval;
    KeyedRng unused(0);

    EvalResult result;
    const std::size_t k = model.config().num_classes;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SamplePair pair = augment_pair(data.sample(i), eval_aug, unused);
        const Tensor logits = model.forward(nullptr, pair.image, RegularizerMode::Eval);
        const Tensor loss = ops::softmax_cross_entropy_map(nullptr, logits, {pair.label});
        const std::vector<LabelMap> pred = ops::argmax_channels(logits);
        result.per_image_miou.push_back(image_miou(pred[0], pair.label, k));
        result.per_image_loss.push_back(loss.item());
    }
    result.summary = dataset_summary(result.per_image_miou, result.per_image_loss);
    return result;
}

EpochMetrics train_epoch(SegModel& model, SgdOptimizer& optimizer, const Dataset& train_data,
                         const Dataset& val_data, const ExperimentConfig& config, int epoch,
                         std::size_t num_batches, std::size_t max_iterations) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig& tc = config.train;
    const std::size_t n = train_data.size();
    if (n == 0) throw DataError("train_epoch: empty training set");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    KeyedRng shuffle_rng(tc.seed, static_cast<std::uint64_t>(epoch), 0xba7c4ULL);
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

    AugmentSpec train_aug = tc.augment;
    train_aug.mode = AugmentSpec::Mode::Train;
    const std::size_t crop = train_aug.crop_size;
    const std::size_t bs = static_cast<std::size_t>(tc.batch_size);

    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    for (std::size_t start = 0; start < n; start += bs, ++batch_count) {
        const std::size_t b = batch_count;
        const std::size_t take = std::min(bs, n - start);

        Tensor batch = Tensor::zeros({take, 3, crop, crop});
        std::vector<LabelMap> labels(take);
        for (std::size_t j = 0; j < take; ++j) {
            const std::size_t idx = order[start + j];
            KeyedRng aug_rng(tc.seed, static_cast<std::uint64_t>(epoch), idx, 0xa06ULL);
            SamplePair pair = augment_pair(train_data.sample(idx), train_aug, aug_rng);
            std::copy(pair.image.values().begin(), pair.image.values().end(),
                      batch.data() + j * 3 * crop * crop);
            labels[j] = std::move(pair.label);
        }

        ComputationTape tape;
        optimizer.zero_grad();
        Tensor logits = model.forward(&tape, batch, RegularizerMode::Train, epoch,
                                      static_cast<int>(b));
        Tensor loss = ops::softmax_cross_entropy_map(&tape, logits, labels);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw TrainingDiverged("training diverged: non-finite loss at epoch " +
                                       std::to_string(epoch) + " batch " + std::to_string(b),
                                   static_cast<int>(b));
        tape.backward(loss);

        const std::size_t iteration = static_cast<std::size_t>(epoch - 1) * num_batches + b;
        optimizer.step(poly_lr(tc.base_lr, iteration, max_iterations, tc.lr_power));
        loss_sum += loss_value;
    }

    const EvalResult val = evaluate_dataset(model, val_data, tc.augment);

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = loss_sum / static_cast<double>(batch_count);
    metrics.val_loss = val.summary.mean_loss;
    metrics.val_summary = val.summary;
    double eff = 0.0;
    for (const RegularizerSpec& spec : effective_hooks(config)) {
        if (spec.method == DropMethod::None) continue;
        eff = std::max(eff, scheduled_p(spec, epoch));
    }
    metrics.effective_p = eff;
    metrics.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

std::pair<Dataset, Dataset> build_datasets(const TrainConfig& config) {
    config.validate();
    Dataset train = [&] {
        if (config.dataset == TrainConfig::Source::Voc)
            return Dataset::voc(config.dataset_dir, "train");
        if (!config.dataset_dir.empty()) {
            const SyntheticManifest m =
                load_synthetic_manifest(config.dataset_dir + "/synthetic.json");
            return Dataset::synthetic(m.spec, m.train_count, 0);
        }
        return Dataset::synthetic(config.synthetic, config.synthetic_train_count, 0);
    }();
    Dataset val = [&] {
        if (config.dataset == TrainConfig::Source::Voc)
            return Dataset::voc(config.dataset_dir, "val");
        if (!config.dataset_dir.empty()) {
            const SyntheticManifest m =
                load_synthetic_manifest(config.dataset_dir + "/synthetic.json");
            return Dataset::synthetic(m.spec, m.val_count, m.train_count);
        }
        return Dataset::synthetic(config.synthetic, config.synthetic_val_count,
                                  config.synthetic_train_count);
    }();

    if (config.subsample_fraction < 1.0) {
        const std::vector<std::size_t> picked = stratified_subsample(
            train.all_labels(), config.subsample_fraction, config.seed, train.num_classes());
        train = train.subset(picked);
    }
    return {std::move(train), std::move(val)};
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
    config.validate();
    fs::create_directories(out_dir);

    auto [train_data, val_data] = build_datasets(config.train);
    if (train_data.num_classes() != config.model.num_classes)
        throw ConfigError("experiment '" + config.name + "': dataset has " +
                          std::to_string(train_data.num_classes()) + " classes but model expects " +
                          std::to_string(config.model.num_classes));

    SegModel model(config.model, effective_hooks(config), config.train.seed);
    if (!config.train.backbone_checkpoint.empty()) {
        const std::string& prefix = config.train.backbone_checkpoint;
        std::vector<NamedTensor> state =
            load_parameter_blob(prefix + ".blob", prefix + ".manifest.json");
        std::vector<NamedTensor> backbone;
        for (NamedTensor& nt : state)
            if (nt.name.rfind("backbone.", 0) == 0) backbone.push_back(std::move(nt));
        model.load_state(backbone, /*strict=*/false);
    }

    SgdOptimizer optimizer(model.parameter_groups(), config.train.momentum,
                           config.train.weight_decay, config.train.head_lr_multiplier);

    const std::size_t num_batches =
        (train_data.size() + config.train.batch_size - 1) / config.train.batch_size;
    const std::size_t max_iterations = static_cast<std::size_t>(config.train.epochs) * num_batches;

    ExperimentResult result;
    std::vector<NamedTensor> best_state;
    try {
        for (int epoch = 1; epoch <= config.train.epochs; ++epoch) {
            EpochMetrics m = train_epoch(model, optimizer, train_data, val_data, config, epoch,
                                         num_batches, max_iterations);
            result.history.push_back(m);
            if (result.history.size() == 1 || better_epoch(m, result.best)) {
                result.best = m;
                result.best_epoch = epoch;
                best_state = snapshot_state(model, optimizer);
            }
        }
    } catch (...) {
        if (!result.history.empty())
            emit_metrics(result.history, out_dir + "/metrics.csv", out_dir + "/metrics.json");
        throw;
    }

    emit_metrics(result.history, out_dir + "/metrics.csv", out_dir + "/metrics.json");
    save_parameter_blob(out_dir + "/checkpoint.blob", out_dir + "/checkpoint.manifest.json",
                        best_state);
    json meta = {{"name", config.name},
                 {"best_epoch", result.best_epoch},
                 {"scheduled", config.scheduled},
                 {"schedule_epochs", config.schedule_epochs},
                 {"model", model_to_json(config.model)},
                 {"hooks", hooks_to_json(config.hooks)},
                 {"train", train_to_json(config.train)}};
    std::ofstream meta_out(out_dir + "/checkpoint.meta.json");
    if (!meta_out) throw IoError("cannot write " + out_dir + "/checkpoint.meta.json");
    meta_out << meta.dump(2) << "\n";

    // Qualitative probes: best-epoch segmentations of a fixed validation
    // subset, colorized against the ground truth.
    std::vector<NamedTensor> model_state;
    for (const NamedTensor& nt : best_state)
        if (nt.name.rfind("velocity.", 0) != 0) model_state.push_back(nt);
    model.load_state(model_state, /*strict=*/true);

    AugmentSpec eval_aug = config.train.augment;
    eval_aug.mode = AugmentSpec::Mode::Eval;
    KeyedRng unused(0);
    const Palette palette = voc_palette(std::max<std::size_t>(config.model.num_classes, 32));
    const std::size_t probes = std::min<std::size_t>(2, val_data.size());
    for (std::size_t i = 0; i < probes; ++i) {
        const SamplePair pair = augment_pair(val_data.sample(i), eval_aug, unused);
        const Tensor logits = model.forward(nullptr, pair.image, RegularizerMode::Eval);
        const std::vector<LabelMap> pred = ops::argmax_channels(logits);
        write_png(out_dir + "/probe" + std::to_string(i) + "_pred.png",
                  colorize_labels(pred[0], palette));
        write_png(out_dir + "/probe" + std::to_string(i) + "_truth.png",
                  colorize_labels(pair.label, palette));
    }
    return result;
}

SegModel load_model_checkpoint(const std::string& dir) {
    std::ifstream meta_in(dir + "/checkpoint.meta.json");
    if (!meta_in) throw IoError("cannot open " + dir + "/checkpoint.meta.json");
    json meta;
    try {
        meta_in >> meta;
    } catch (const json::exception& e) {
        throw IoError("checkpoint meta parse error: " + std::string(e.what()));
    }

    ModelConfig model_cfg = model_from_json(meta.at("model"));
    HookSpecs hooks = hooks_from_json(meta.value("hooks", json::object()));
    SegModel model(model_cfg, hooks, 0);

    std::vector<NamedTensor> state =
        load_parameter_blob(dir + "/checkpoint.blob", dir + "/checkpoint.manifest.json");
    std::vector<NamedTensor> model_state;
    for (NamedTensor& nt : state)
        if (nt.name.rfind("velocity.", 0) != 0) model_state.push_back(std::move(nt));
    model.load_state(model_state, /*strict=*/true);
    return model;
}

std::vector<ExperimentConfig> table2_matrix(bool scheduled, const TrainConfig& base_train,
                                            const ModelConfig& base_model) {
    struct Row {
        const char* name;
        DropMethod resnet, spp, decoder;
    };
    const DropMethod kNone = DropMethod::None;
    const DropMethod kChan = DropMethod::Channel;
    const DropMethod kBlock = DropMethod::DropBlock;
    const DropMethod kUout = DropMethod::UOut;
    // decoder-dropblock pairs a Channel hook on the backbone with DropBlock
    // on the decoder; the matrix is reproduced verbatim.
    const Row rows[] = {
        {"none", kNone, kNone, kNone},
        {"resnet-chandrop", kChan, kNone, kNone},
        {"spp-chandrop", kNone, kChan, kNone},
        {"decoder-chandrop", kNone, kNone, kChan},
        {"upper-chandrop", kNone, kChan, kChan},
        {"all-chandrop", kChan, kChan, kChan},
        {"resnet-dropblock", kBlock, kNone, kNone},
        {"spp-dropblock", kNone, kBlock, kNone},
        {"decoder-dropblock", kChan, kNone, kBlock},
        {"upper-dropblock", kNone, kBlock, kBlock},
        {"all-dropblock", kBlock, kBlock, kBlock},
        {"resnet-uout", kUout, kNone, kNone},
        {"spp-uout", kNone, kUout, kNone},
        {"decoder-uout", kNone, kNone, kUout},
        {"upper-uout", kNone, kUout, kUout},
        {"all-uout", kUout, kUout, kUout},
    };

    std::vector<ExperimentConfig> configs;
    for (const Row& row : rows) {
        ExperimentConfig cfg;
        cfg.name = row.name;
        cfg.scheduled = scheduled;
        cfg.train = base_train;
        cfg.model = base_model;
        hook_at(cfg.hooks, HookSite::BackboneBlocks).method = row.resnet;
        hook_at(cfg.hooks, HookSite::SppOutput).method = row.spp;
        hook_at(cfg.hooks, HookSite::DecoderOutput).method = row.decoder;
        configs.push_back(std::move(cfg));
    }
    return configs;
}

std::vector<MatrixRow> run_matrix(const std::vector<ExperimentConfig>& configs, int parallelism,
                                  const std::string& out_dir) {
    for (std::size_t i = 0; i < configs.size(); ++i)
        for (std::size_t j = i + 1; j < configs.size(); ++j)
            if (configs[i].name == configs[j].name)
                throw ConfigError("matrix: duplicate experiment name '" + configs[i].name + "'");

    int threads = std::max(1, parallelism);
    if (const char* env = std::getenv("DROPREG_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) threads = std::min(threads, cap);
    }
    threads = static_cast<int>(std::min<std::size_t>(threads, configs.size()));
    fs::create_directories(out_dir);

    std::vector<MatrixRow> rows(configs.size());
    std::vector<std::exception_ptr> errors(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= configs.size()) return;
            try {
                const ExperimentResult result =
                    run_experiment(configs[i], out_dir + "/" + configs[i].name);
                rows[i] = {configs[i].name, result.best.val_summary};
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    for (const std::exception_ptr& err : errors)
        if (err) std::rethrow_exception(err);

    write_matrix_summary(rows, out_dir + "/summary.csv");
    return rows;
}

void emit_metrics(const std::vector<EpochMetrics>& history, const std::string& csv_path,
                  const std::string& json_path) {
    if (history.empty()) throw EvalError("emit_metrics: empty history");

    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot open " + csv_path + " for writing");
    csv << "epoch,train_loss,val_loss,mean_miou,std_miou,worst_miou,median_miou,best_miou,"
           "effective_p\n";
    for (const EpochMetrics& m : history) {
        csv << m.epoch << "," << fmt17(m.train_loss) << "," << fmt17(m.val_loss) << ","
            << fmt17(m.val_summary.mean) << "," << fmt17(m.val_summary.stddev) << ","
            << fmt17(m.val_summary.worst) << "," << fmt17(m.val_summary.median) << ","
            << fmt17(m.val_summary.best) << "," << fmt17(m.effective_p) << "\n";
    }
    if (!csv) throw IoError("metrics CSV write failed: " + csv_path);

    json j;
    j["epochs"] = json::array();
    for (const EpochMetrics& m : history) {
        j["epochs"].push_back({{"epoch", m.epoch},
                               {"train_loss", m.train_loss},
                               {"val_loss", m.val_loss},
                               {"mean_miou", m.val_summary.mean},
                               {"std_miou", m.val_summary.stddev},
                               {"worst_miou", m.val_summary.worst},
                               {"median_miou", m.val_summary.median},
                               {"best_miou", m.val_summary.best},
                               {"effective_p", m.effective_p}});
    }
    std::ofstream jf(json_path);
    if (!jf) throw IoError("cannot open " + json_path + " for writing");
    jf << j.dump(2) << "\n";
    if (!jf) throw IoError("metrics JSON write failed: " + json_path);
}

void write_matrix_summary(const std::vector<MatrixRow>& rows, const std::string& csv_path) {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot open " + csv_path + " for writing");
    csv << "experiment,mean_miou,std,worst,median,best,loss\n";
    for (const MatrixRow& row : rows) {
        csv << row.name << "," << fmt17(row.best.mean) << "," << fmt17(row.best.stddev) << ","
            << fmt17(row.best.worst) << "," << fmt17(row.best.median) << ","
            << fmt17(row.best.best) << "," << fmt17(row.best.mean_loss) << "\n";
    }
    if (!csv) throw IoError("summary write failed: " + csv_path);
}

ExperimentConfig experiment_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }

    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    if (j.contains("hooks")) cfg.hooks = hooks_from_json(j["hooks"]);
    if (j.contains("schedule")) {
        cfg.scheduled = j["schedule"].value("enabled", cfg.scheduled);
        cfg.schedule_epochs = j["schedule"].value("n", cfg.schedule_epochs);
    }
    if (j.contains("train")) cfg.train = train_from_json(j["train"]);
    if (j.contains("model")) {
        cfg.model = model_from_json(j["model"]);
    } else if (cfg.train.dataset == TrainConfig::Source::Synthetic) {
        cfg.model.num_classes = cfg.train.synthetic.num_classes();
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return experiment_config_from_json(text);
}

}  // namespace dropreg
