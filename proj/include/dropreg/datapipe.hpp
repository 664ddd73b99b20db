#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dropreg/image_io.hpp"
#include "dropreg/labelmap.hpp"
#include "dropreg/rng.hpp"
#include "dropreg/tensor.hpp"

namespace dropreg {

// One training example: image as a (1,3,H,W) tensor in [0,1] before
// normalization, label grid of the same spatial size.
struct SamplePair {
    Tensor image;
    LabelMap label;
};

struct AugmentSpec {
    enum class Mode { Train, Eval };

    std::size_t crop_size = 64;
    double scale_min = 0.5;
    double scale_max = 2.0;
    double flip_prob = 0.5;
    double blur_min = 0.0;
    double blur_max = 1.0;
    std::array<double, 3> norm_mean = {0.485, 0.456, 0.406};
    std::array<double, 3> norm_std = {0.229, 0.224, 0.225};
    Mode mode = Mode::Train;
};

// Self-contained synthetic-shapes source. Scenes are deterministic in
// (seed, index); the class of the first-placed shape cycles through the
// inventory so every class recurs as the dominant one.
struct SyntheticSceneSpec {
    std::size_t canvas = 64;
    std::size_t shape_classes = 4;  // from {disk, rectangle, triangle, ring}, >= 2
    std::size_t min_shapes = 1;
    std::size_t max_shapes = 3;
    double noise_amplitude = 0.08;
    std::uint64_t seed = 0;

    std::size_t num_classes() const { return shape_classes + 1; }  // + background
    void validate() const;
};

enum class ShapeKind { Disk, Rectangle, Triangle, Ring };

struct ShapeInstance {
    ShapeKind kind = ShapeKind::Disk;
    double cx = 0.0, cy = 0.0;  // center, pixel units
    double size = 0.0;          // radius / half-extent
    double aspect = 1.0;        // rectangle height/width ratio
    double inner_frac = 0.5;    // ring hole radius as a fraction of size
    std::uint8_t class_id = 1;
};

bool shape_covers(const ShapeInstance& shape, double x, double y);
void rasterize_shape(const ShapeInstance& shape, LabelMap& label);

SamplePair generate_synthetic_sample(const SyntheticSceneSpec& spec, std::size_t index);

// Image decoded to [0,1]; label preserved exactly. Every non-sentinel label
// value must be < num_classes.
SamplePair load_voc_pair(const std::string& image_path, const std::string& label_path,
                         std::size_t num_classes = 21);

// VOC layout: JPEGImages/, SegmentationClass/, ImageSets/Segmentation/<split>.txt.
// Image extensions .jpg/.png/.ppm and label extensions .png/.pgm are probed.
std::vector<std::pair<std::string, std::string>> enumerate_voc(const std::string& root,
                                                               const std::string& split);

// Applies the same geometry to image and label; see AugmentSpec. Train mode
// draws scale, flip and blur from rng; eval mode is center crop/pad plus
// normalization.
SamplePair augment_pair(const SamplePair& pair, const AugmentSpec& spec, KeyedRng& rng);

// Dominant non-background class of a label map (ties to the lower id);
// background when no foreground pixel exists.
std::uint8_t dominant_class(const LabelMap& label, std::size_t num_classes);

// Picks ceil(fraction * count) members of every dominant-class stratum,
// uniformly by seed. Returns sorted indices into `labels`.
std::vector<std::size_t> stratified_subsample(const std::vector<LabelMap>& labels,
                                              double fraction, std::uint64_t seed,
                                              std::size_t num_classes);

using Palette = std::vector<std::array<std::uint8_t, 3>>;

// The conventional VOC palette: bit-reversed class bits spread over RGB.
Palette voc_palette(std::size_t num_classes);

// Pixelwise palette lookup; the ignore sentinel renders black.
ImageU8 colorize_labels(const LabelMap& label, const Palette& palette);

// Exact inverse lookup; colors absent from the palette map to the sentinel.
LabelMap labels_from_colors(const ImageU8& image, const Palette& palette);

// Uniform view over the two sources the harness trains on.
class Dataset {
  public:
    static Dataset voc(const std::string& root, const std::string& split,
                       std::size_t num_classes = 21);
    static Dataset synthetic(const SyntheticSceneSpec& spec, std::size_t count,
                             std::size_t index_offset = 0);

    std::size_t size() const;
    std::size_t num_classes() const { return num_classes_; }
    SamplePair sample(std::size_t i) const;
    // Ground-truth labels for the whole set (used for stratification).
    std::vector<LabelMap> all_labels() const;
    Dataset subset(const std::vector<std::size_t>& indices) const;

  private:
    Dataset() = default;

    bool synthetic_ = false;
    SyntheticSceneSpec scene_spec_;
    std::vector<std::size_t> indices_;  // synthetic scene ids
    std::vector<std::pair<std::string, std::string>> files_;
    std::size_t num_classes_ = 0;
};

// Synthetic dataset manifest: {"type":"synthetic", spec fields,
// "train_count":N, "val_count":M}.
struct SyntheticManifest {
    SyntheticSceneSpec spec;
    std::size_t train_count = 0;
    std::size_t val_count = 0;
};

SyntheticManifest load_synthetic_manifest(const std::string& path);
void save_synthetic_manifest(const std::string& path, const SyntheticManifest& manifest);

Tensor image_to_tensor(const ImageU8& image);

}  // namespace dropreg
