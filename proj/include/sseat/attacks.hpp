#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "classifier.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace sseat {

enum class AttackFamily { FGSM, RFGSM, BIM, PGD, MIM };

inline const char* family_name(AttackFamily f) {
    switch (f) {
    case AttackFamily::FGSM: return "FGSM";
    case AttackFamily::RFGSM: return "RFGSM";
    case AttackFamily::BIM: return "BIM";
    case AttackFamily::PGD: return "PGD";
    case AttackFamily::MIM: return "MIM";
    }
    return "?";
}

/// One untargeted L-infinity attack. Maximizes the cross-entropy of the true label.
struct AttackSpec {
    std::string name;
    AttackFamily family = AttackFamily::PGD;
    double epsilon = 8.0 / 255.0;
    double alpha = 2.0 / 255.0;
    int steps = 10;
    double momentum_decay = 0.0;
    bool random_start = false;

    /// Literature defaults for a family: 10 iterations for BIM/PGD/MIM, decay
    /// 1.0 for MIM, random start for PGD and RFGSM.
    static AttackSpec make(AttackFamily family, double epsilon = 8.0 / 255.0, double alpha = 2.0 / 255.0) {
        AttackSpec s;
        s.name = family_name(family);
        s.family = family;
        s.epsilon = epsilon;
        s.alpha = alpha;
        switch (family) {
        case AttackFamily::FGSM: s.steps = 1; break;
        case AttackFamily::RFGSM: s.steps = 1; s.random_start = true; break;
        case AttackFamily::BIM: s.steps = 10; break;
        case AttackFamily::PGD: s.steps = 10; s.random_start = true; break;
        case AttackFamily::MIM: s.steps = 10; s.momentum_decay = 1.0; break;
        }
        return s;
    }

    /// Parses a family name. NIM, SIM, DIM and VMIM are accepted as aliases
    /// of MIM; their input transformations are not modelled.
    static AttackSpec named(std::string name, double epsilon = 8.0 / 255.0, double alpha = 2.0 / 255.0) {
        std::string up = name;
        std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
        AttackFamily f;
        if (up == "FGSM") f = AttackFamily::FGSM;
        else if (up == "RFGSM") f = AttackFamily::RFGSM;
        else if (up == "BIM") f = AttackFamily::BIM;
        else if (up == "PGD") f = AttackFamily::PGD;
        else if (up == "MIM" || up == "NIM" || up == "SIM" || up == "DIM" || up == "VMIM") f = AttackFamily::MIM;
        else throw ConfigError("unknown attack family '" + name + "'");
        AttackSpec s = make(f, epsilon, alpha);
        s.name = up;
        return s;
    }

    /// A zero budget is allowed only together with a zero step.
    void validate() const {
        auto fail = [&](const std::string& why) { throw ConfigError("attack " + name + ": " + why); };
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail("epsilon must lie in [0, 1]");
        if (!(alpha >= 0.0 && alpha <= epsilon)) fail("alpha must lie in [0, epsilon]");
        if (epsilon > 0.0 && alpha == 0.0) fail("alpha must be positive when epsilon is positive");
        if (steps < 1) fail("steps must be positive");
        if (momentum_decay < 0.0) fail("momentum decay must be non-negative");
        if (family == AttackFamily::FGSM && (steps != 1 || random_start))
            fail("FGSM takes exactly one step and no random start");
    }
};

/// Clamp into [ref - eps, ref + eps] intersected with [0, 1].
inline Tensor project_linf(const Tensor& x_adv, const Tensor& x_ref, double eps) {
    kernel::require(x_adv.shape() == x_ref.shape(), "project_linf", x_adv.shape(), x_ref.shape());
    Tensor out = x_adv;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double lo = std::max(0.0, x_ref[i] - eps);
        const double hi = std::min(1.0, x_ref[i] + eps);
        out[i] = std::clamp(out[i], lo, hi);
    }
    return out;
}

struct InputGradient {
    Tensor grad;
    double loss;
};

/// Gradient of the batch-mean cross-entropy with respect to the input.
inline InputGradient input_gradient(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels) {
    Tape tape;
    BoundClassifier net(tape, model, BoundClassifier::Mode::Constant);
    Var xv = tape.leaf(x);
    Var loss = cross_entropy(net(xv), std::vector<std::size_t>(labels.begin(), labels.end()));
    Gradients g = tape.backward(loss);
    return {g[xv], loss.value().item()};
}

/// Called with every iterate, including a random start point.
using IterateObserver = std::function<void(const Tensor&)>;

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Tensor sign_step(const Tensor& x, const Tensor& direction, double step) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += step * sign(direction[i]);
    return out;
}

inline Tensor random_start(const Tensor& x, const Tensor& ref, double radius, Rng& rng, double eps) {
    Tensor out = x;
    for (double& v : out.data()) v += rng.uniform(-radius, radius);
    return project_linf(out, ref, eps);
}

} // namespace detail

/// Adversarial batch for `x` with true labels `y`. Deterministic given `seed`.
inline Tensor generate(const AttackSpec& spec, const Classifier& model, const Tensor& x,
                       std::span<const std::size_t> y, std::uint64_t seed, const IterateObserver& observe = {}) {
    spec.validate();
    model.check_input(x);
    if (y.size() != x.dim(0)) throw ShapeError("generate: label count does not match batch");
    if (spec.epsilon == 0.0) return x;

    const double eps = spec.epsilon;
    Rng rng(derive_seed(seed, "attack-start"));
    auto notify = [&](const Tensor& t) {
        if (observe) observe(t);
    };

    switch (spec.family) {
    case AttackFamily::FGSM: {
        Tensor adv = project_linf(detail::sign_step(x, input_gradient(model, x, y).grad, eps), x, eps);
        notify(adv);
        return adv;
    }
    case AttackFamily::RFGSM: {
        // Random step of size alpha, then gradient steps of size eps - alpha.
        Tensor adv = spec.random_start ? detail::random_start(x, x, spec.alpha, rng, eps) : x;
        notify(adv);
        const double step = eps - spec.alpha > 0.0 ? eps - spec.alpha : spec.alpha;
        for (int k = 0; k < spec.steps; ++k) {
            adv = project_linf(detail::sign_step(adv, input_gradient(model, adv, y).grad, step), x, eps);
            notify(adv);
        }
        return adv;
    }
    case AttackFamily::BIM:
    case AttackFamily::PGD:
    case AttackFamily::MIM: {
        Tensor adv = spec.random_start ? detail::random_start(x, x, eps, rng, eps) : x;
        if (spec.random_start) notify(adv);
        const bool momentum = spec.family == AttackFamily::MIM;
        Tensor velocity(x.shape(), 0.0);
        const std::size_t dim = x.dim(1);
        for (int k = 0; k < spec.steps; ++k) {
            Tensor g = input_gradient(model, adv, y).grad;
            if (momentum) {
                for (std::size_t r = 0; r < x.dim(0); ++r) {
                    double l1 = 0.0;
                    for (std::size_t j = 0; j < dim; ++j) l1 += std::abs(g[r * dim + j]);
                    const double inv = l1 > 0.0 ? 1.0 / l1 : 0.0;
                    for (std::size_t j = 0; j < dim; ++j) {
                        const std::size_t i = r * dim + j;
                        velocity[i] = spec.momentum_decay * velocity[i] + g[i] * inv;
                    }
                }
                adv = project_linf(detail::sign_step(adv, velocity, spec.alpha), x, eps);
            } else {
                adv = project_linf(detail::sign_step(adv, g, spec.alpha), x, eps);
            }
            notify(adv);
        }
        return adv;
    }
    }
    return x;
}

} // namespace sseat
