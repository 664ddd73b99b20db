#include "dropreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dropreg/errors.hpp"

namespace dropreg {

std::uint64_t ConfusionCounts::total() const {
    std::uint64_t acc = 0;
    for (std::uint64_t c : counts) acc += c;
    return acc;
}

void ConfusionCounts::merge(const ConfusionCounts& other) {
    if (other.num_classes != num_classes)
        throw EvalError("confusion merge: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionCounts confusion_counts(const LabelMap& pred, const LabelMap& truth,
                                 std::size_t num_classes) {
    if (pred.height != truth.height || pred.width != truth.width)
        throw EvalError("confusion_counts: prediction " + std::to_string(pred.height) + "x" +
                        std::to_string(pred.width) + " vs truth " + std::to_string(truth.height) +
                        "x" + std::to_string(truth.width));

    ConfusionCounts counts(num_classes);
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        const std::uint8_t t = truth.values[i];
        const std::uint8_t p = pred.values[i];
        if (t == kIgnoreLabel || p == kIgnoreLabel) continue;
        if (t >= num_classes || p >= num_classes)
            throw EvalError("confusion_counts: class id " +
                            std::to_string(std::max(t, p)) + " out of range for K=" +
                            std::to_string(num_classes));
        ++counts.at(t, p);
    }
    return counts;
}

double image_miou(const ConfusionCounts& counts) {
    const std::size_t k = counts.num_classes;
    if (counts.total() == 0) throw EvalError("image_miou: no counted pixels, metric undefined");

    double iou_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += counts.at(c, j);
            col += counts.at(j, c);
        }
        if (row == 0 && col == 0) continue;
        const std::uint64_t tp = counts.at(c, c);
        const std::uint64_t denom = row + col - tp;
        iou_sum += static_cast<double>(tp) / static_cast<double>(denom);
        ++present;
    }
    return iou_sum / static_cast<double>(present);
}

double image_miou(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes) {
    return image_miou(confusion_counts(pred, truth, num_classes));
}

MiouSummary dataset_summary(const std::vector<double>& per_image_mious,
                            const std::vector<double>& per_image_losses) {
    if (per_image_mious.empty()) throw EvalError("dataset_summary: empty input");
    if (per_image_mious.size() != per_image_losses.size())
        throw EvalError("dataset_summary: " + std::to_string(per_image_mious.size()) +
                        " mIoU values vs " + std::to_string(per_image_losses.size()) + " losses");

    const std::size_t n = per_image_mious.size();
    MiouSummary s;
    for (double v : per_image_mious) s.mean += v;
    s.mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : per_image_mious) {
        const double d = v - s.mean;
        ss += d * d;
    }
    s.stddev = std::sqrt(ss / static_cast<double>(n));

    std::vector<double> sorted = per_image_mious;
    std::sort(sorted.begin(), sorted.end());
    s.worst = sorted.front();
    s.best = sorted.back();
    s.median = sorted[(n - 1) / 2];

    for (double v : per_image_losses) s.mean_loss += v;
    s.mean_loss /= static_cast<double>(n);
    return s;
}

}  // namespace dropreg
