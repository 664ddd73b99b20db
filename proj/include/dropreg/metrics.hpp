#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dropreg/labelmap.hpp"

namespace dropreg {

// K x K pixel counts, rows = ground truth, cols = prediction. Pixels whose
// truth or prediction is the ignore sentinel are excluded.
struct ConfusionCounts {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;  // row-major K x K

    explicit ConfusionCounts(std::size_t k) : num_classes(k), counts(k * k, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) {
        return counts[truth * num_classes + pred];
    }
    std::uint64_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * num_classes + pred];
    }
    std::uint64_t total() const;
    void merge(const ConfusionCounts& other);
};

ConfusionCounts confusion_counts(const LabelMap& pred, const LabelMap& truth,
                                 std::size_t num_classes);

// Mean over classes present in truth or prediction of TP/(TP+FP+FN); classes
// absent from both maps carry no evidence and are excluded.
double image_miou(const ConfusionCounts& counts);

double image_miou(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes);

// The five per-image statistics reported per experiment, plus mean loss.
struct MiouSummary {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
    double worst = 0.0;
    double median = 0.0;  // lower of the two middles for even length
    double best = 0.0;
    double mean_loss = 0.0;
};

MiouSummary dataset_summary(const std::vector<double>& per_image_mious,
                            const std::vector<double>& per_image_losses);

}  // namespace dropreg
