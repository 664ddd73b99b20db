#include "dropreg/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "dropreg/errors.hpp"

namespace dropreg {
namespace {

namespace fs = std::filesystem;

void resize_bilinear_plane(const double* src, std::size_t h, std::size_t w, double* dst,
                           std::size_t oh, std::size_t ow) {
    const double sy = static_cast<double>(h) / static_cast<double>(oh);
    const double sx = static_cast<double>(w) / static_cast<double>(ow);
    for (std::size_t y = 0; y < oh; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < ow; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = src[y0 * w + x0] + wx * (src[y0 * w + x1] - src[y0 * w + x0]);
            const double bot = src[y1 * w + x0] + wx * (src[y1 * w + x1] - src[y1 * w + x0]);
            dst[y * ow + x] = top + wy * (bot - top);
        }
    }
}

LabelMap resize_nearest(const LabelMap& src, std::size_t oh, std::size_t ow) {
    LabelMap dst(oh, ow);
    const double sy = static_cast<double>(src.height) / static_cast<double>(oh);
    const double sx = static_cast<double>(src.width) / static_cast<double>(ow);
    for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t iy = std::min(
            static_cast<std::size_t>((static_cast<double>(y) + 0.5) * sy), src.height - 1);
        for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t ix = std::min(
                static_cast<std::size_t>((static_cast<double>(x) + 0.5) * sx), src.width - 1);
            dst.at(y, x) = src.at(iy, ix);
        }
    }
    return dst;
}

// Center pad/crop; pads image channels with the normalization mean and the
// label with the ignore sentinel.
SamplePair center_fit(const SamplePair& pair, std::size_t crop,
                      const std::array<double, 3>& pad_value) {
    const Shape4 s = pair.image.shape();
    SamplePair out;
    out.image = Tensor::zeros({1, 3, crop, crop});
    out.label = LabelMap(crop, crop, kIgnoreLabel);
    for (std::size_t c = 0; c < 3; ++c) {
        double* dst = out.image.data() + c * crop * crop;
        std::fill(dst, dst + crop * crop, pad_value[c]);
    }

    // Signed start of the crop window in source coordinates.
    const long long off_y = (static_cast<long long>(s.h) - static_cast<long long>(crop)) / 2;
    const long long off_x = (static_cast<long long>(s.w) - static_cast<long long>(crop)) / 2;
    for (std::size_t y = 0; y < crop; ++y) {
        const long long sy = off_y + static_cast<long long>(y);
        if (sy < 0 || sy >= static_cast<long long>(s.h)) continue;
        for (std::size_t x = 0; x < crop; ++x) {
            const long long sx = off_x + static_cast<long long>(x);
            if (sx < 0 || sx >= static_cast<long long>(s.w)) continue;
            for (std::size_t c = 0; c < 3; ++c)
                out.image.at(0, c, y, x) = pair.image.at(0, c, static_cast<std::size_t>(sy),
                                                         static_cast<std::size_t>(sx));
            out.label.at(y, x) = pair.label.at(static_cast<std::size_t>(sy),
                                               static_cast<std::size_t>(sx));
        }
    }
    return out;
}

void hflip(SamplePair& pair) {
    const Shape4 s = pair.image.shape();
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < s.h; ++y) {
            double* row = pair.image.data() + (c * s.h + y) * s.w;
            std::reverse(row, row + s.w);
        }
    }
    for (std::size_t y = 0; y < pair.label.height; ++y) {
        auto* row = pair.label.values.data() + y * pair.label.width;
        std::reverse(row, row + pair.label.width);
    }
}

void gaussian_blur(Tensor& image, double radius) {
    if (radius <= 0.0) return;
    const int half = std::max(1, static_cast<int>(std::ceil(2.0 * radius)));
    std::vector<double> kernel(2 * half + 1);
    double norm = 0.0;
    for (int i = -half; i <= half; ++i) {
        const double v = std::exp(-0.5 * (i / radius) * (i / radius));
        kernel[i + half] = v;
        norm += v;
    }
    for (double& v : kernel) v /= norm;

    const Shape4 s = image.shape();
    std::vector<double> tmp(s.plane());
    for (std::size_t c = 0; c < s.c; ++c) {
        double* plane = image.data() + c * s.plane();
        // Horizontal pass into tmp, vertical pass back; clamped borders.
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t x = 0; x < s.w; ++x) {
                double acc = 0.0;
                for (int i = -half; i <= half; ++i) {
                    const long long xi = std::clamp<long long>(
                        static_cast<long long>(x) + i, 0, static_cast<long long>(s.w) - 1);
                    acc += kernel[i + half] * plane[y * s.w + static_cast<std::size_t>(xi)];
                }
                tmp[y * s.w + x] = acc;
            }
        }
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t x = 0; x < s.w; ++x) {
                double acc = 0.0;
                for (int i = -half; i <= half; ++i) {
                    const long long yi = std::clamp<long long>(
                        static_cast<long long>(y) + i, 0, static_cast<long long>(s.h) - 1);
                    acc += kernel[i + half] * tmp[static_cast<std::size_t>(yi) * s.w + x];
                }
                plane[y * s.w + x] = acc;
            }
        }
    }
}

void normalize(Tensor& image, const AugmentSpec& spec) {
    const Shape4 s = image.shape();
    for (std::size_t c = 0; c < 3; ++c) {
        double* plane = image.data() + c * s.plane();
        const double mean = spec.norm_mean[c];
        const double inv_std = 1.0 / spec.norm_std[c];
        for (std::size_t i = 0; i < s.plane(); ++i) plane[i] = (plane[i] - mean) * inv_std;
    }
}

std::string find_with_extensions(const std::string& dir, const std::string& stem,
                                 const std::vector<std::string>& exts) {
    for (const std::string& ext : exts) {
        const std::string candidate = dir + "/" + stem + ext;
        if (fs::exists(candidate)) return candidate;
    }
    throw DataError("no file " + dir + "/" + stem + " with any of the expected extensions");
}

}  // namespace

void SyntheticSceneSpec::validate() const {
    if (canvas < 16) throw ConfigError("synthetic: canvas must be >= 16");
    if (shape_classes < 2 || shape_classes > 4)
        throw ConfigError("synthetic: shape_classes must be in [2,4]");
    if (min_shapes < 1 || max_shapes < min_shapes)
        throw ConfigError("synthetic: invalid shapes-per-scene range");
    if (noise_amplitude < 0.0) throw ConfigError("synthetic: noise amplitude must be >= 0");
}

bool shape_covers(const ShapeInstance& shape, double x, double y) {
    const double dx = x - shape.cx;
    const double dy = y - shape.cy;
    switch (shape.kind) {
        case ShapeKind::Disk:
            return dx * dx + dy * dy <= shape.size * shape.size;
        case ShapeKind::Rectangle:
            return std::abs(dx) <= shape.size && std::abs(dy) <= shape.size * shape.aspect;
        case ShapeKind::Triangle: {
            // Upward isoceles triangle: apex at cy - size, base at cy + size.
            const double t = (y - (shape.cy - shape.size)) / (2.0 * shape.size);
            if (t < 0.0 || t > 1.0) return false;
            return std::abs(dx) <= t * shape.size;
        }
        case ShapeKind::Ring: {
            const double r2 = dx * dx + dy * dy;
            const double inner = shape.size * shape.inner_frac;
            return r2 <= shape.size * shape.size && r2 >= inner * inner;
        }
    }
    return false;
}

void rasterize_shape(const ShapeInstance& shape, LabelMap& label) {
    for (std::size_t y = 0; y < label.height; ++y)
        for (std::size_t x = 0; x < label.width; ++x)
            if (shape_covers(shape, static_cast<double>(x), static_cast<double>(y)))
                label.at(y, x) = shape.class_id;
}

SamplePair generate_synthetic_sample(const SyntheticSceneSpec& spec, std::size_t index) {
    spec.validate();
    const std::size_t s = spec.canvas;

    for (std::uint64_t attempt = 0;; ++attempt) {
        KeyedRng rng(spec.seed, index, attempt, 0x5ce9eULL);

        SamplePair pair;
        pair.image = Tensor::zeros({1, 3, s, s});
        pair.label = LabelMap(s, s, 0);

        // Background: tilted per-channel gradient.
        std::array<double, 3> base;
        for (double& b : base) b = rng.uniform(0.08, 0.45);
        const double angle = rng.uniform(0.0, 6.283185307179586);
        const double gx = std::cos(angle), gy = std::sin(angle);
        const double slope = rng.uniform(0.0, 0.35);
        for (std::size_t c = 0; c < 3; ++c) {
            double* plane = pair.image.data() + c * s * s;
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x) {
                    const double proj =
                        (gx * static_cast<double>(x) + gy * static_cast<double>(y)) /
                            static_cast<double>(s) * 0.5 + 0.5;
                    plane[y * s + x] = base[c] + slope * proj;
                }
        }

        const std::size_t count =
            spec.min_shapes + rng.uniform_int(spec.max_shapes - spec.min_shapes + 1);
        std::vector<ShapeInstance> shapes(count);
        std::vector<std::array<double, 3>> colors(count);
        for (std::size_t i = 0; i < count; ++i) {
            ShapeInstance& shape = shapes[i];
            // The first shape's class cycles with the scene index; class
            // determines geometry (1=disk, 2=rectangle, 3=triangle, 4=ring).
            const std::size_t cls = i == 0 ? 1 + index % spec.shape_classes
                                           : 1 + rng.uniform_int(spec.shape_classes);
            shape.class_id = static_cast<std::uint8_t>(cls);
            shape.kind = static_cast<ShapeKind>(cls - 1);
            shape.size = rng.uniform(0.14, 0.30) * static_cast<double>(s);
            const double margin = shape.size + 1.0;
            shape.cx = rng.uniform(margin, static_cast<double>(s) - margin);
            shape.cy = rng.uniform(margin, static_cast<double>(s) - margin);
            shape.aspect = rng.uniform(0.6, 1.4);
            shape.inner_frac = rng.uniform(0.45, 0.65);
            // Fill colors follow a per-class base hue with heavy jitter, so
            // color is informative about the class but unreliable alone.
            static constexpr double kClassHues[4][3] = {
                {0.80, 0.30, 0.30}, {0.30, 0.78, 0.32}, {0.30, 0.42, 0.85}, {0.82, 0.78, 0.28}};
            for (std::size_t ch = 0; ch < 3; ++ch)
                colors[i][ch] =
                    std::clamp(kClassHues[cls - 1][ch] + rng.uniform(-0.28, 0.28), 0.05, 1.0);
        }

        // Back-to-front: later shapes occlude earlier ones.
        for (std::size_t i = 0; i < count; ++i) {
            rasterize_shape(shapes[i], pair.label);
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x)
                    if (shape_covers(shapes[i], static_cast<double>(x), static_cast<double>(y)))
                        for (std::size_t c = 0; c < 3; ++c)
                            pair.image.at(0, c, y, x) = colors[i][c];
        }

        if (spec.noise_amplitude > 0.0) {
            for (double& v : pair.image.values())
                v = std::clamp(v + spec.noise_amplitude * rng.normal(), 0.0, 1.0);
        }

        // Every intended class must survive occlusion with >= 1% coverage.
        std::vector<std::size_t> coverage(spec.num_classes(), 0);
        for (std::uint8_t v : pair.label.values) ++coverage[v];
        const std::size_t min_pixels = s * s / 100;
        bool ok = true;
        for (const ShapeInstance& shape : shapes)
            ok = ok && coverage[shape.class_id] >= min_pixels;
        if (ok) return pair;
    }
}

SamplePair load_voc_pair(const std::string& image_path, const std::string& label_path,
                         std::size_t num_classes) {
    const ImageU8 image = read_image(image_path);
    LabelMap label = read_label_image(label_path);
    if (image.height != label.height || image.width != label.width)
        throw DataError("size mismatch: image " + std::to_string(image.height) + "x" +
                        std::to_string(image.width) + " vs label " +
                        std::to_string(label.height) + "x" + std::to_string(label.width) +
                        " (" + image_path + ")");
    for (std::size_t y = 0; y < label.height; ++y) {
        for (std::size_t x = 0; x < label.width; ++x) {
            const std::uint8_t v = label.at(y, x);
            if (v != kIgnoreLabel && v >= num_classes)
                throw DataError("label value " + std::to_string(v) + " out of [0," +
                                std::to_string(num_classes) + ") at pixel (" + std::to_string(y) +
                                "," + std::to_string(x) + ") in " + label_path);
        }
    }
    return {image_to_tensor(image), std::move(label)};
}

std::vector<std::pair<std::string, std::string>> enumerate_voc(const std::string& root,
                                                               const std::string& split) {
    const std::string list_path = root + "/ImageSets/Segmentation/" + split + ".txt";
    std::ifstream list(list_path);
    if (!list) throw DataError("cannot open split list " + list_path);

    std::vector<std::pair<std::string, std::string>> pairs;
    std::string id;
    while (std::getline(list, id)) {
        while (!id.empty() && (id.back() == '\r' || id.back() == ' ')) id.pop_back();
        if (id.empty()) continue;
        pairs.emplace_back(
            find_with_extensions(root + "/JPEGImages", id, {".jpg", ".jpeg", ".png", ".ppm"}),
            find_with_extensions(root + "/SegmentationClass", id, {".png", ".pgm"}));
    }
    return pairs;
}

SamplePair augment_pair(const SamplePair& pair, const AugmentSpec& spec, KeyedRng& rng) {
    if (spec.mode == AugmentSpec::Mode::Eval) {
        SamplePair out = center_fit(pair, spec.crop_size, spec.norm_mean);
        normalize(out.image, spec);
        return out;
    }

    // All stochastic decisions are drawn up front in a fixed order.
    const double scale = rng.uniform(spec.scale_min, spec.scale_max);
    const bool flip = rng.bernoulli(spec.flip_prob);
    const double blur_radius = rng.uniform(spec.blur_min, spec.blur_max);

    const Shape4 s = pair.image.shape();
    SamplePair scaled;
    if (scale == 1.0) {
        scaled.image = pair.image.clone();
        scaled.label = pair.label;
    } else {
        const std::size_t oh = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(static_cast<double>(s.h) * scale)));
        const std::size_t ow = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(static_cast<double>(s.w) * scale)));
        scaled.image = Tensor::zeros({1, 3, oh, ow});
        for (std::size_t c = 0; c < 3; ++c)
            resize_bilinear_plane(pair.image.data() + c * s.plane(), s.h, s.w,
                                  scaled.image.data() + c * oh * ow, oh, ow);
        scaled.label = resize_nearest(pair.label, oh, ow);
    }

    SamplePair out = center_fit(scaled, spec.crop_size, spec.norm_mean);
    if (flip) hflip(out);
    gaussian_blur(out.image, blur_radius);
    normalize(out.image, spec);
    return out;
}

std::uint8_t dominant_class(const LabelMap& label, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::uint8_t v : label.values)
        if (v != kIgnoreLabel && v < num_classes) ++counts[v];
    std::size_t best = 0, best_count = 0;
    for (std::size_t c = 1; c < num_classes; ++c) {
        if (counts[c] > best_count) {
            best_count = counts[c];
            best = c;
        }
    }
    return static_cast<std::uint8_t>(best);
}

std::vector<std::size_t> stratified_subsample(const std::vector<LabelMap>& labels,
                                              double fraction, std::uint64_t seed,
                                              std::size_t num_classes) {
    if (labels.empty()) throw DataError("stratified_subsample: empty dataset");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("stratified_subsample: fraction must be in (0,1], got " +
                          std::to_string(fraction));

    std::vector<std::vector<std::size_t>> strata(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i)
        strata[dominant_class(labels[i], num_classes)].push_back(i);

    std::vector<std::size_t> picked;
    for (std::size_t cls = 0; cls < num_classes; ++cls) {
        std::vector<std::size_t>& members = strata[cls];
        if (members.empty()) continue;
        const std::size_t take = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(members.size())));
        KeyedRng rng(seed, cls, 0x5172a7ULL);
        for (std::size_t i = members.size() - 1; i > 0; --i)
            std::swap(members[i], members[rng.uniform_int(i + 1)]);
        picked.insert(picked.end(), members.begin(), members.begin() + take);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

Palette voc_palette(std::size_t num_classes) {
    Palette palette(num_classes);
    for (std::size_t i = 0; i < num_classes; ++i) {
        std::size_t id = i;
        std::uint8_t r = 0, g = 0, b = 0;
        for (int j = 0; j < 8 && id != 0; ++j) {
            r = static_cast<std::uint8_t>(r | ((id >> 0) & 1) << (7 - j));
            g = static_cast<std::uint8_t>(g | ((id >> 1) & 1) << (7 - j));
            b = static_cast<std::uint8_t>(b | ((id >> 2) & 1) << (7 - j));
            id >>= 3;
        }
        palette[i] = {r, g, b};
    }
    return palette;
}

ImageU8 colorize_labels(const LabelMap& label, const Palette& palette) {
    ImageU8 image(label.height, label.width, 3);
    for (std::size_t i = 0; i < label.values.size(); ++i) {
        const std::uint8_t v = label.values[i];
        if (v == kIgnoreLabel) continue;  // stays black
        if (v >= palette.size())
            throw EvalError("colorize: class id " + std::to_string(v) + " exceeds palette of " +
                            std::to_string(palette.size()));
        image.pixels[i * 3 + 0] = palette[v][0];
        image.pixels[i * 3 + 1] = palette[v][1];
        image.pixels[i * 3 + 2] = palette[v][2];
    }
    return image;
}

LabelMap labels_from_colors(const ImageU8& image, const Palette& palette) {
    if (image.channels != 3) throw EvalError("labels_from_colors: need an RGB image");
    std::map<std::array<std::uint8_t, 3>, std::uint8_t> lookup;
    for (std::size_t i = 0; i < palette.size(); ++i)
        lookup.emplace(palette[i], static_cast<std::uint8_t>(i));

    LabelMap label(image.height, image.width, kIgnoreLabel);
    for (std::size_t i = 0; i < label.values.size(); ++i) {
        const std::array<std::uint8_t, 3> color = {image.pixels[i * 3 + 0],
                                                   image.pixels[i * 3 + 1],
                                                   image.pixels[i * 3 + 2]};
        const auto it = lookup.find(color);
        if (it != lookup.end()) label.values[i] = it->second;
    }
    return label;
}

Dataset Dataset::voc(const std::string& root, const std::string& split, std::size_t num_classes) {
    Dataset ds;
    ds.synthetic_ = false;
    ds.files_ = enumerate_voc(root, split);
    ds.num_classes_ = num_classes;
    return ds;
}

Dataset Dataset::synthetic(const SyntheticSceneSpec& spec, std::size_t count,
                           std::size_t index_offset) {
    spec.validate();
    Dataset ds;
    ds.synthetic_ = true;
    ds.scene_spec_ = spec;
    ds.indices_.resize(count);
    std::iota(ds.indices_.begin(), ds.indices_.end(), index_offset);
    ds.num_classes_ = spec.num_classes();
    return ds;
}

std::size_t Dataset::size() const { return synthetic_ ? indices_.size() : files_.size(); }

SamplePair Dataset::sample(std::size_t i) const {
    if (synthetic_) return generate_synthetic_sample(scene_spec_, indices_[i]);
    return load_voc_pair(files_[i].first, files_[i].second, num_classes_);
}

std::vector<LabelMap> Dataset::all_labels() const {
    std::vector<LabelMap> labels;
    labels.reserve(size());
    if (synthetic_) {
        for (std::size_t idx : indices_)
            labels.push_back(generate_synthetic_sample(scene_spec_, idx).label);
    } else {
        for (const auto& [image_path, label_path] : files_)
            labels.push_back(read_label_image(label_path));
    }
    return labels;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset ds = *this;
    if (synthetic_) {
        std::vector<std::size_t> remapped;
        remapped.reserve(indices.size());
        for (std::size_t i : indices) remapped.push_back(indices_[i]);
        ds.indices_ = std::move(remapped);
    } else {
        std::vector<std::pair<std::string, std::string>> remapped;
        remapped.reserve(indices.size());
        for (std::size_t i : indices) remapped.push_back(files_[i]);
        ds.files_ = std::move(remapped);
    }
    return ds;
}

SyntheticManifest load_synthetic_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest parse error in " + path + ": " + e.what());
    }
    if (j.value("type", "") != "synthetic")
        throw ConfigError("manifest " + path + " is not a synthetic dataset manifest");

    SyntheticManifest m;
    m.spec.canvas = j.value("canvas", m.spec.canvas);
    m.spec.shape_classes = j.value("shape_classes", m.spec.shape_classes);
    m.spec.min_shapes = j.value("min_shapes", m.spec.min_shapes);
    m.spec.max_shapes = j.value("max_shapes", m.spec.max_shapes);
    m.spec.noise_amplitude = j.value("noise_amplitude", m.spec.noise_amplitude);
    m.spec.seed = j.value("seed", m.spec.seed);
    m.train_count = j.value("train_count", m.train_count);
    m.val_count = j.value("val_count", m.val_count);
    m.spec.validate();
    return m;
}

void save_synthetic_manifest(const std::string& path, const SyntheticManifest& m) {
    nlohmann::json j = {
        {"type", "synthetic"},
        {"canvas", m.spec.canvas},
        {"shape_classes", m.spec.shape_classes},
        {"min_shapes", m.spec.min_shapes},
        {"max_shapes", m.spec.max_shapes},
        {"noise_amplitude", m.spec.noise_amplitude},
        {"seed", m.spec.seed},
        {"train_count", m.train_count},
        {"val_count", m.val_count},
    };
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

Tensor image_to_tensor(const ImageU8& image) {
    Tensor t = Tensor::zeros({1, 3, image.height, image.width});
    const std::size_t plane = image.height * image.width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t src_c = image.channels == 3 ? c : 0;
            t.data()[c * plane + i] =
                static_cast<double>(image.pixels[i * image.channels + src_c]) / 255.0;
        }
    }
    return t;
}

}  // namespace dropreg
