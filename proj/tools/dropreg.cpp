#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dropreg/errors.hpp"
#include "dropreg/harness.hpp"
#include "dropreg/image_io.hpp"
#include "dropreg/variance_lab.hpp"

namespace {

using namespace dropreg;
namespace fs = std::filesystem;

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct SweepEntry {
    ShiftMethod method;
    ShiftScenario scenario;
};

std::vector<SweepEntry> load_sweep(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open sweep file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("sweep parse error: " + std::string(e.what()));
    }
    if (!j.is_array()) throw ConfigError("sweep file must hold a JSON array of scenarios");

    std::vector<SweepEntry> entries;
    for (const auto& item : j) {
        SweepEntry e;
        const std::string method = item.value("method", "dropout");
        if (method == "dropout") {
            e.method = ShiftMethod::Dropout;
        } else if (method == "uout") {
            e.method = ShiftMethod::UOut;
        } else {
            throw ConfigError("sweep method must be 'dropout' or 'uout', got '" + method + "'");
        }
        e.scenario.mu = item.value("mu", 0.0);
        e.scenario.v = item.value("v", 1.0);
        const double p = item.contains("p_or_beta") ? item["p_or_beta"].get<double>()
                                                    : item.value("p", 0.0);
        if (e.method == ShiftMethod::Dropout) {
            e.scenario.keep_p = p;
        } else {
            e.scenario.beta = p;
        }
        e.scenario.n_samples = item.value("n_samples", std::size_t{1'000'000});
        e.scenario.seed = item.value("seed", std::uint64_t{0});
        entries.push_back(e);
    }
    return entries;
}

std::vector<SweepEntry> default_sweep() {
    std::vector<SweepEntry> entries;
    for (double keep : {0.5, 0.8, 0.9, 0.95}) {
        SweepEntry e{ShiftMethod::Dropout, {}};
        e.scenario.keep_p = keep;
        entries.push_back(e);
    }
    for (double beta : {0.05, 0.1, 0.5, 1.0}) {
        SweepEntry e{ShiftMethod::UOut, {}};
        e.scenario.beta = beta;
        entries.push_back(e);
    }
    return entries;
}

int cmd_train(const std::string& config_path, std::int64_t seed_override,
              const std::string& out_dir) {
    ExperimentConfig config = load_experiment_config(config_path);
    if (seed_override >= 0) config.train.seed = static_cast<std::uint64_t>(seed_override);
    const ExperimentResult result = run_experiment(config, out_dir);
    std::cout << "experiment " << config.name << ": best epoch " << result.best_epoch
              << ", mean mIoU " << fmt17(result.best.val_summary.mean) << ", val loss "
              << fmt17(result.best.val_loss) << "\n";
    return 0;
}

int cmd_matrix(const std::string& base_config_path, bool scheduled, int parallel,
               const std::string& out_dir) {
    TrainConfig base_train;
    ModelConfig base_model;
    if (!base_config_path.empty()) {
        const ExperimentConfig base = load_experiment_config(base_config_path);
        base_train = base.train;
        base_model = base.model;
    } else {
        base_model.num_classes = base_train.synthetic.num_classes();
    }
    const std::vector<ExperimentConfig> configs = table2_matrix(scheduled, base_train, base_model);
    const std::vector<MatrixRow> rows = run_matrix(configs, parallel, out_dir);
    for (const MatrixRow& row : rows)
        std::cout << row.name << ": mean mIoU " << fmt17(row.best.mean) << "\n";
    std::cout << "summary written to " << out_dir << "/summary.csv\n";
    return 0;
}

int cmd_varshift(const std::string& sweep_path, const std::string& out_path) {
    const std::vector<SweepEntry> entries =
        sweep_path.empty() ? default_sweep() : load_sweep(sweep_path);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw IoError("cannot open " + out_path + " for writing");
        out = &file;
    }

    *out << "method,mu,v,p_or_beta,closed_form,monte_carlo,stderr\n";
    for (const SweepEntry& e : entries) {
        const ShiftReport report = monte_carlo_shift(e.scenario, e.method);
        const bool dropout = e.method == ShiftMethod::Dropout;
        *out << (dropout ? "dropout" : "uout") << "," << fmt17(e.scenario.mu) << ","
             << fmt17(e.scenario.v) << ","
             << fmt17(dropout ? e.scenario.keep_p : e.scenario.beta) << ","
             << fmt17(report.closed_form) << "," << fmt17(report.monte_carlo) << ","
             << fmt17(report.standard_error) << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& dataset_dir,
             const std::string& split) {
    SegModel model = load_model_checkpoint(checkpoint_dir);

    Dataset data = [&] {
        if (fs::exists(dataset_dir + "/synthetic.json")) {
            const SyntheticManifest m = load_synthetic_manifest(dataset_dir + "/synthetic.json");
            return split == "train" ? Dataset::synthetic(m.spec, m.train_count, 0)
                                    : Dataset::synthetic(m.spec, m.val_count, m.train_count);
        }
        return Dataset::voc(dataset_dir, split, model.config().num_classes);
    }();

    AugmentSpec augment;
    augment.mode = AugmentSpec::Mode::Eval;
    const EvalResult result = evaluate_dataset(model, data, augment);
    std::cout << "images," << data.size() << "\n"
              << "mean_miou," << fmt17(result.summary.mean) << "\n"
              << "std," << fmt17(result.summary.stddev) << "\n"
              << "worst," << fmt17(result.summary.worst) << "\n"
              << "median," << fmt17(result.summary.median) << "\n"
              << "best," << fmt17(result.summary.best) << "\n"
              << "loss," << fmt17(result.summary.mean_loss) << "\n";
    return 0;
}

int cmd_colorize(const std::string& labels_path, const std::string& out_path) {
    const LabelMap label = read_label_image(labels_path);
    std::uint8_t max_id = 0;
    for (std::uint8_t v : label.values)
        if (v != kIgnoreLabel) max_id = std::max(max_id, v);
    const Palette palette = voc_palette(std::max<std::size_t>(max_id + 1, 21));
    write_image(out_path, colorize_labels(label, palette));
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dropout-regularization study for semantic segmentation"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/run", sweep_path, out_path;
    std::string checkpoint_dir, dataset_dir, split = "val", labels_path;
    std::int64_t seed_override = -1;
    bool scheduled = false;
    int parallel = 1;

    CLI::App* train = app.add_subcommand("train", "train one experiment from a JSON config");
    train->add_option("--config", config_path, "experiment config file")->required();
    train->add_option("--seed", seed_override, "override the training seed");
    train->add_option("--out", out_dir, "output directory");

    std::string preset = "table2";
    CLI::App* matrix = app.add_subcommand("matrix", "run the testing matrix");
    matrix->add_option("--preset", preset, "matrix preset (table2)");
    matrix->add_flag("--scheduled", scheduled, "apply the linear probability ramp");
    matrix->add_option("--parallel", parallel, "concurrent experiments");
    matrix->add_option("--config", config_path, "base experiment config (train/model sections)");
    matrix->add_option("--out", out_dir, "output directory")->required();

    CLI::App* varshift = app.add_subcommand("varshift", "variance-shift analysis sweep");
    varshift->add_option("--sweep", sweep_path, "JSON sweep file (defaults to a built-in sweep)");
    varshift->add_option("--out", out_path, "CSV output path (defaults to stdout)");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
    eval->add_option("--split", split, "dataset split (train|val)");

    CLI::App* colorize = app.add_subcommand("colorize", "colorize a label map");
    colorize->add_option("--labels", labels_path, "label map file (PNG or PGM)")->required();
    colorize->add_option("--out", out_path, "output image (PNG or PPM)")->required();

    try {
        app.parse(argc, argv);
        if (train->parsed()) return cmd_train(config_path, seed_override, out_dir);
        if (matrix->parsed()) {
            if (preset != "table2") throw ConfigError("unknown matrix preset '" + preset + "'");
            return cmd_matrix(config_path, scheduled, parallel, out_dir);
        }
        if (varshift->parsed()) return cmd_varshift(sweep_path, out_path);
        if (eval->parsed()) return cmd_eval(checkpoint_dir, dataset_dir, split);
        if (colorize->parsed()) return cmd_colorize(labels_path, out_path);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
