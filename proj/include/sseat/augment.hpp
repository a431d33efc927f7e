#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace sseat {

/// Planar (channel-major) image geometry of a flattened feature vector.
struct ImageShape {
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;

    std::size_t size() const noexcept { return channels * height * width; }
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

enum class AugmentationKind { Jitter, Shear, Cutout };

struct AugmentationSpec {
    AugmentationKind kind = AugmentationKind::Jitter;
    double brightness = 0.1;   // jitter: offset drawn from [-b, b]
    double contrast = 0.2;     // jitter: gain drawn from [1 - c, 1 + c]
    double shear_degrees = 15; // shear: angle drawn from [-d, d]
    std::size_t cutout_side = 3;

    static AugmentationSpec jitter(double brightness, double contrast) {
        AugmentationSpec s;
        s.kind = AugmentationKind::Jitter;
        s.brightness = brightness;
        s.contrast = contrast;
        return s;
    }
    static AugmentationSpec shear(double degrees) {
        AugmentationSpec s;
        s.kind = AugmentationKind::Shear;
        s.shear_degrees = degrees;
        return s;
    }
    static AugmentationSpec cutout(std::size_t side) {
        AugmentationSpec s;
        s.kind = AugmentationKind::Cutout;
        s.cutout_side = side;
        return s;
    }

    static AugmentationSpec named(const std::string& name) {
        if (name == "jitter") return jitter(0.1, 0.2);
        if (name == "shear") return shear(15.0);
        if (name == "cutout") return cutout(3);
        throw ConfigError("unknown augmentation '" + name + "'");
    }

    std::string name() const {
        switch (kind) {
        case AugmentationKind::Jitter: return "jitter";
        case AugmentationKind::Shear: return "shear";
        case AugmentationKind::Cutout: return "cutout";
        }
        return "?";
    }
};

/// Default augmentation pool: color jitter, shear and cutout.
inline std::vector<AugmentationSpec> default_augmentations() {
    return {AugmentationSpec::named("jitter"), AugmentationSpec::named("shear"), AugmentationSpec::named("cutout")};
}

namespace augment_detail {

inline void check(std::span<const double> x, const ImageShape& shape) {
    if (x.size() != shape.size())
        throw ShapeError("augment: " + std::to_string(x.size()) + " features for image of " +
                         std::to_string(shape.size()));
}

} // namespace augment_detail

/// x' = clamp(gain * x + (1 - gain) * mean + offset), per channel.
inline std::vector<double> jitter_image(std::span<const double> x, const ImageShape& shape, double gain,
                                        double offset) {
    augment_detail::check(x, shape);
    std::vector<double> out(x.begin(), x.end());
    const std::size_t plane = shape.height * shape.width;
    for (std::size_t c = 0; c < shape.channels; ++c) {
        auto p = std::span<double>(out).subspan(c * plane, plane);
        double m = 0.0;
        for (double v : p) m += v;
        m /= static_cast<double>(plane);
        for (double& v : p) v = std::clamp(gain * v + (1.0 - gain) * m + offset, 0.0, 1.0);
    }
    return out;
}

/// Horizontal shear about the vertical center with nearest-neighbour
/// sampling: output (r, c) reads source column round(c - tan(angle) * (r - rc)).
/// Pixels sampled from outside the image are zero.
inline std::vector<double> shear_image(std::span<const double> x, const ImageShape& shape, double degrees) {
    augment_detail::check(x, shape);
    const double k = std::tan(degrees * 3.14159265358979323846 / 180.0);
    const double rc = 0.5 * static_cast<double>(shape.height - 1);
    std::vector<double> out(x.size(), 0.0);
    const std::size_t plane = shape.height * shape.width;
    for (std::size_t c = 0; c < shape.channels; ++c)
        for (std::size_t r = 0; r < shape.height; ++r)
            for (std::size_t col = 0; col < shape.width; ++col) {
                const double src = static_cast<double>(col) - k * (static_cast<double>(r) - rc);
                const double s = std::floor(src + 0.5);
                if (s < 0.0 || s >= static_cast<double>(shape.width)) continue;
                out[c * plane + r * shape.width + col] =
                    x[c * plane + r * shape.width + static_cast<std::size_t>(s)];
            }
    return out;
}

/// Zeros a side x side square with top-left corner (top, left) in every channel.
inline std::vector<double> cutout_image(std::span<const double> x, const ImageShape& shape, std::size_t top,
                                        std::size_t left, std::size_t side) {
    augment_detail::check(x, shape);
    std::vector<double> out(x.begin(), x.end());
    const std::size_t plane = shape.height * shape.width;
    for (std::size_t c = 0; c < shape.channels; ++c)
        for (std::size_t r = top; r < std::min(top + side, shape.height); ++r)
            for (std::size_t col = left; col < std::min(left + side, shape.width); ++col)
                out[c * plane + r * shape.width + col] = 0.0;
    return out;
}

/// Randomized augmentation of one flattened image, deterministic in (spec, seed).
inline std::vector<double> augment(std::span<const double> x, const ImageShape& shape, const AugmentationSpec& spec,
                                   std::uint64_t seed) {
    Rng rng(seed);
    switch (spec.kind) {
    case AugmentationKind::Jitter: {
        const double gain = 1.0 + rng.uniform(-spec.contrast, spec.contrast);
        const double offset = rng.uniform(-spec.brightness, spec.brightness);
        return jitter_image(x, shape, gain, offset);
    }
    case AugmentationKind::Shear:
        return shear_image(x, shape, rng.uniform(-spec.shear_degrees, spec.shear_degrees));
    case AugmentationKind::Cutout: {
        const std::size_t side = std::min({spec.cutout_side, shape.height, shape.width});
        const std::size_t top = rng.below(shape.height - side + 1);
        const std::size_t left = rng.below(shape.width - side + 1);
        return cutout_image(x, shape, top, left, side);
    }
    }
    throw ConfigError("augment: unknown kind");
}

inline Tensor augment(const Tensor& x, const ImageShape& shape, const AugmentationSpec& spec, std::uint64_t seed) {
    return Tensor(x.shape(), augment(x.data(), shape, spec, seed));
}

/// Independently augments every row of a batch, each with an augmentation
/// drawn uniformly from `pool`. Row i uses sub-stream i of `seed`.
inline Tensor augment_batch(const Tensor& batch, const ImageShape& shape, std::span<const AugmentationSpec> pool,
                            std::uint64_t seed) {
    if (pool.empty()) throw ConfigError("augment_batch: empty augmentation pool");
    Tensor out = batch;
    for (std::size_t r = 0; r < batch.dim(0); ++r) {
        Rng pick(derive_seed(seed, "pick", r));
        const auto& spec = pool[pick.below(pool.size())];
        auto row = augment(batch.row(r), shape, spec, derive_seed(seed, "view", r));
        std::copy(row.begin(), row.end(), out.row(r).begin());
    }
    return out;
}

} // namespace sseat
