#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "augment.hpp"
#include "classifier.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace sseat {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct Dataset {
    std::string name;
    std::size_t num_classes = 0;
    ImageShape image;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    Tensor features; // count x image.size(), values in [0, 1]
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return image.size(); }
    bool empty() const noexcept { return labels.empty(); }

    std::span<const double> example(std::size_t i) const { return features.row(i); }

    Tensor batch(std::span<const std::size_t> idx) const {
        Tensor out(Shape{idx.size(), dim()});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            auto src = features.row(idx[r]);
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
        return out;
    }

    std::vector<std::size_t> batch_labels(std::span<const std::size_t> idx) const {
        std::vector<std::size_t> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) out.push_back(labels[i]);
        return out;
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> c(num_classes, 0);
        for (std::size_t l : labels) ++c[l];
        return c;
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.name == b.name && a.num_classes == b.num_classes && a.image == b.image && a.split == b.split &&
               a.seed == b.seed && a.features == b.features && a.labels == b.labels;
    }
};

struct SyntheticOptions {
    ImageShape image{1, 8, 8};
    double noise = 0.1;       // uniform noise amplitude
    double background = 0.2;
    double contrast = 0.15;   // foreground intensity above background
    Split split = Split::Train;
};

/// Noise-free rendering of class k out of `classes`. Classes cycle through
/// three pattern families (oriented bar, blob, corner) whose parameter
/// advances with k / 3.
inline std::vector<double> class_template(std::size_t k, std::size_t classes, const SyntheticOptions& opt) {
    const auto& s = opt.image;
    const double h = static_cast<double>(s.height), w = static_cast<double>(s.width);
    const double cy = 0.5 * (h - 1.0), cx = 0.5 * (w - 1.0);
    const std::size_t family = k % 3, j = k / 3;
    const std::size_t members = (classes + 2 - family) / 3; // classes in this family
    const double pi = 3.14159265358979323846;
    std::vector<double> plane(s.height * s.width, opt.background);
    for (std::size_t r = 0; r < s.height; ++r)
        for (std::size_t c = 0; c < s.width; ++c) {
            const double y = static_cast<double>(r), x = static_cast<double>(c);
            double v = 0.0;
            if (family == 0) {
                const double a = pi * static_cast<double>(j) / static_cast<double>(members);
                const double dist = std::abs(-(y - cy) * std::cos(a) + (x - cx) * std::sin(a));
                v = dist <= 0.75 ? 1.0 : 0.0;
            } else if (family == 1) {
                const double a = 2.0 * pi * static_cast<double>(j) / static_cast<double>(members) + pi / 4.0;
                const double by = cy + 0.3 * h * std::sin(a), bx = cx + 0.3 * w * std::cos(a);
                const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
                v = std::exp(-d2 / 2.0);
            } else {
                const std::size_t corner = j % 4;
                const std::size_t arm = 3 + j / 4;
                const std::size_t ry = corner / 2 ? s.height - 1 - r : r;
                const std::size_t rx = corner % 2 ? s.width - 1 - c : c;
                v = ((ry == 0 && rx < arm) || (rx == 0 && ry < arm)) ? 1.0 : 0.0;
            }
            plane[r * s.width + c] = std::clamp(opt.background + opt.contrast * v, 0.0, 1.0);
        }
    std::vector<double> out;
    out.reserve(s.size());
    for (std::size_t ch = 0; ch < s.channels; ++ch) out.insert(out.end(), plane.begin(), plane.end());
    return out;
}

/// Class-balanced synthetic set ordered class by class.
inline Dataset generate_synthetic(std::size_t classes, std::size_t per_class, std::uint64_t seed,
                                  const SyntheticOptions& opt = {}) {
    if (classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    Dataset d;
    d.name = opt.split == Split::Train ? "synthetic-train" : "synthetic-test";
    d.num_classes = classes;
    d.image = opt.image;
    d.split = opt.split;
    d.seed = seed;
    const std::size_t dim = opt.image.size();
    d.features = Tensor(Shape{classes * per_class, dim});
    Rng rng(derive_seed(seed, "synthetic"));
    std::size_t row = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        const auto tmpl = class_template(k, classes, opt);
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            auto dst = d.features.row(row);
            for (std::size_t f = 0; f < dim; ++f) {
                const double n = opt.noise > 0.0 ? rng.uniform(-opt.noise, opt.noise) : 0.0;
                dst[f] = std::clamp(tmpl[f] + n, 0.0, 1.0);
            }
            d.labels.push_back(k);
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes of 32x32, row-major).

inline constexpr std::size_t kCifarRecord = 3073;

inline Dataset parse_cifar10(std::span<const unsigned char> bytes, const std::string& source = "cifar10") {
    if (bytes.size() % kCifarRecord != 0)
        throw IoError(source + ": truncated record at byte offset " +
                      std::to_string(bytes.size() - bytes.size() % kCifarRecord));
    Dataset d;
    d.name = source;
    d.num_classes = 10;
    d.image = ImageShape{3, 32, 32};
    const std::size_t n = bytes.size() / kCifarRecord;
    d.features = Tensor(Shape{n, 3072});
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = i * kCifarRecord;
        if (bytes[off] > 9)
            throw IoError(source + ": label byte " + std::to_string(bytes[off]) + " > 9 at byte offset " +
                          std::to_string(off));
        d.labels[i] = bytes[off];
        auto row = d.features.row(i);
        for (std::size_t p = 0; p < 3072; ++p) row[p] = static_cast<double>(bytes[off + 1 + p]) / 255.0;
    }
    return d;
}

inline Dataset load_cifar10_batch(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open CIFAR-10 batch " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_cifar10(bytes, path);
}

// ---------------------------------------------------------------------------
// Dataset files: magic, version, name, split, C, channels/height/width,
// count, seed, then features (little-endian doubles, row-major) and labels
// (little-endian uint16).

inline constexpr char kDatasetMagic[9] = "SSEATDS1";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(std::ostream& os, const Dataset& d) {
    binio::put_magic(os, kDatasetMagic);
    binio::put<std::uint32_t>(os, kDatasetVersion);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.name.size()));
    os.write(d.name.data(), static_cast<std::streamsize>(d.name.size()));
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(d.split));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.num_classes));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.image.channels));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.image.height));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.image.width));
    binio::put<std::uint64_t>(os, d.size());
    binio::put<std::uint64_t>(os, d.seed);
    for (double v : d.features.data()) binio::put<double>(os, v);
    for (std::size_t l : d.labels) binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(l));
}

inline Dataset read_dataset(std::istream& is, const std::string& what = "dataset") {
    binio::expect_magic(is, kDatasetMagic, what);
    const auto version = binio::get<std::uint32_t>(is, what);
    if (version != kDatasetVersion) throw IoError(what + ": unsupported version " + std::to_string(version));
    Dataset d;
    const auto name_len = binio::get<std::uint32_t>(is, what);
    if (name_len > 4096) throw IoError(what + ": implausible name length");
    d.name.resize(name_len);
    if (!is.read(d.name.data(), name_len)) throw IoError(what + ": truncated name");
    d.split = static_cast<Split>(binio::get<std::uint8_t>(is, what));
    d.num_classes = binio::get<std::uint32_t>(is, what);
    d.image.channels = binio::get<std::uint32_t>(is, what);
    d.image.height = binio::get<std::uint32_t>(is, what);
    d.image.width = binio::get<std::uint32_t>(is, what);
    const auto count = binio::get<std::uint64_t>(is, what);
    d.seed = binio::get<std::uint64_t>(is, what);
    d.features = Tensor(Shape{count, d.image.size()});
    for (double& v : d.features.data()) v = binio::get<double>(is, what);
    d.labels.resize(count);
    for (auto& l : d.labels) {
        l = binio::get<std::uint16_t>(is, what);
        if (l >= d.num_classes) throw IoError(what + ": label out of range");
    }
    return d;
}

inline void save_dataset(const std::string& path, const Dataset& d) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_dataset(os, d);
    if (!os) throw IoError("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset " + path);
    return read_dataset(is, path);
}

// ---------------------------------------------------------------------------

/// Applies `attack` to every example of `base` against `target`, in batches
/// of `chunk` rows; batch b draws attack randomness from sub-stream b.
inline Dataset attack_dataset(const Dataset& base, const AttackSpec& attack, const Classifier& target,
                              std::uint64_t seed, const std::string& name, std::size_t chunk = 50) {
    attack.validate();
    Dataset out = base;
    out.name = name;
    out.seed = seed;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0, b = 0; start < base.size(); start += chunk, ++b) {
        idx.clear();
        for (std::size_t i = start; i < std::min(base.size(), start + chunk); ++i) idx.push_back(i);
        const Tensor adv =
            generate(attack, target, base.batch(idx), base.batch_labels(idx), derive_seed(seed, "batch", b));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            auto src = adv.row(r);
            std::copy(src.begin(), src.end(), out.features.row(idx[r]).begin());
        }
    }
    return out;
}

/// One stage's attack and its data. `train` stays empty until the stage
/// runs, because it is crafted against the snapshot that precedes it.
struct StageSets {
    AttackSpec attack;
    Dataset train;
    Dataset test;
};

inline std::string stage_set_name(std::size_t stage, const AttackSpec& attack, Split split) {
    return "stage" + std::to_string(stage) + "-" + attack.name + (split == Split::Train ? "-train" : "-test");
}

/// Training-time threat for stage t: `attack` applied to the clean training
/// set against the frozen snapshot of stage t-1.
inline Dataset materialize_train_set(std::size_t stage, const AttackSpec& attack, const Classifier& snapshot,
                                     const Dataset& train, std::uint64_t seed) {
    if (stage == 0) throw ConfigError("materialize_train_set: attack stages start at 1");
    if (!snapshot.frozen() || snapshot.snapshot_tag() != static_cast<int>(stage) - 1)
        throw ShapeError("materialize_train_set: stage " + std::to_string(stage) + " needs the snapshot of stage " +
                         std::to_string(stage - 1));
    return attack_dataset(train, attack, snapshot, derive_seed(seed, "adv-train", stage),
                          stage_set_name(stage, attack, Split::Train));
}

/// Per-stage black-box test sets, crafted once against an independently
/// trained surrogate. Training sets are left empty.
inline std::vector<StageSets> materialize_attack_sets(std::span<const AttackSpec> attacks, const Classifier& surrogate,
                                                      const Dataset& test, std::uint64_t seed) {
    if (!surrogate.frozen()) throw ShapeError("materialize_attack_sets: the surrogate must be a frozen snapshot");
    std::vector<StageSets> out;
    for (std::size_t t = 0; t < attacks.size(); ++t) {
        const std::size_t stage = t + 1;
        out.push_back(StageSets{attacks[t], Dataset{},
                                attack_dataset(test, attacks[t], surrogate, derive_seed(seed, "adv-test", stage),
                                               stage_set_name(stage, attacks[t], Split::Test))});
    }
    return out;
}

} // namespace sseat
