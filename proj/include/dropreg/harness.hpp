#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dropreg/datapipe.hpp"
#include "dropreg/metrics.hpp"
#include "dropreg/segmodel.hpp"

namespace dropreg {

struct TrainConfig {
    enum class Source { Voc, Synthetic };

    int epochs = 60;
    int batch_size = 4;
    double base_lr = 7e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double head_lr_multiplier = 10.0;
    double lr_power = 0.9;
    std::uint64_t seed = 1;
    Source dataset = Source::Synthetic;
    std::string dataset_dir;  // VOC root, or directory holding a synthetic manifest
    double subsample_fraction = 0.1;

    SyntheticSceneSpec synthetic;
    std::size_t synthetic_train_count = 160;
    std::size_t synthetic_val_count = 40;
    AugmentSpec augment;

    // Optional parameter-blob prefix for bootstrapping backbone weights
    // (expects <prefix>.blob and <prefix>.manifest.json).
    std::string backbone_checkpoint;

    void validate() const;
};

// One row of the testing matrix plus everything needed to run it.
struct ExperimentConfig {
    std::string name = "none";
    HookSpecs hooks;  // indexed by HookSite: resnet blocks, spp output, decoder output
    bool scheduled = false;
    int schedule_epochs = 30;
    TrainConfig train;
    ModelConfig model;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    MiouSummary val_summary;
    double effective_p = 0.0;
    double seconds = 0.0;  // wall clock; kept in memory, never persisted
};

// base_lr * (1 - iteration/max_iterations)^power over global iterations.
double poly_lr(double base_lr, std::size_t iteration, std::size_t max_iterations, double power);

// SGD with momentum and decoupled group learning-rate multipliers:
// v <- momentum*v + grad + weight_decay*param ; param <- param - lr*mult*v.
class SgdOptimizer {
  public:
    SgdOptimizer(const std::array<ParameterGroup, 2>& groups, double momentum,
                 double weight_decay, double head_lr_multiplier);

    void zero_grad();
    void step(double base_lr);

    // base_lr * multiplier applied per group on the most recent step.
    std::array<double, 2> last_group_lrs() const { return last_lrs_; }

    std::vector<NamedTensor> velocity_state() const;
    void load_velocity(const std::vector<NamedTensor>& state);

  private:
    struct Entry {
        std::string name;
        Tensor param;
        Tensor velocity;
        double multiplier;
        std::size_t group;
    };
    std::vector<Entry> entries_;
    double momentum_;
    double weight_decay_;
    std::array<double, 2> last_lrs_ = {0.0, 0.0};
};

// Hooks with the experiment's schedule and seed applied.
HookSpecs effective_hooks(const ExperimentConfig& config);

struct EvalResult {
    MiouSummary summary;
    std::vector<double> per_image_miou;
    std::vector<double> per_image_loss;
};

// Eval-mode pass over a dataset: center crop/pad + normalize, argmax
// predictions, per-image mIoU and loss.
EvalResult evaluate_dataset(SegModel& model, const Dataset& data, const AugmentSpec& augment);

EpochMetrics train_epoch(SegModel& model, SgdOptimizer& optimizer, const Dataset& train_data,
                         const Dataset& val_data, const ExperimentConfig& config, int epoch,
                         std::size_t num_batches, std::size_t max_iterations);

struct ExperimentResult {
    std::vector<EpochMetrics> history;
    int best_epoch = 0;
    EpochMetrics best;
};

// Trains to completion, selects the best epoch by validation mean mIoU (ties:
// lower validation loss, then earlier epoch), persists per-epoch metrics, the
// best checkpoint (parameters + BN stats + velocity) and colorized probe
// segmentations under out_dir. Training errors flush partial metrics.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir);

// Builds the train/val datasets the experiment would use (after subsampling).
std::pair<Dataset, Dataset> build_datasets(const TrainConfig& config);

SegModel load_model_checkpoint(const std::string& dir);

// The 16 testing-matrix rows; names and hook placements are fixed.
std::vector<ExperimentConfig> table2_matrix(bool scheduled, const TrainConfig& base_train,
                                            const ModelConfig& base_model);

struct MatrixRow {
    std::string name;
    MiouSummary best;
};

// Runs experiments independently (optionally across threads; DROPREG_THREADS
// caps parallelism) and writes summary.csv with one row per experiment.
std::vector<MatrixRow> run_matrix(const std::vector<ExperimentConfig>& configs, int parallelism,
                                  const std::string& out_dir);

void emit_metrics(const std::vector<EpochMetrics>& history, const std::string& csv_path,
                  const std::string& json_path);
void write_matrix_summary(const std::vector<MatrixRow>& rows, const std::string& csv_path);

ExperimentConfig experiment_config_from_json(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace dropreg
