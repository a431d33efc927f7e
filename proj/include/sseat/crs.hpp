#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "augment.hpp"
#include "classifier.hpp"
#include "error.hpp"
#include "tape.hpp"

namespace sseat {

struct CrsConfig {
    double tau = 0.5;
    double lambda = 1.0;
    AttackSpec inner = AttackSpec::make(AttackFamily::PGD);

    void validate() const {
        if (!(tau > 0.0)) throw ConfigError("crs: temperature must be positive");
        if (!(lambda >= 0.0)) throw ConfigError("crs: lambda must be non-negative");
        inner.validate();
    }
};

/// JS(p || q) in nats for two probability vectors.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty())
        throw ShapeError("js_divergence: length mismatch " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()));
    auto check = [](std::span<const double> d, const char* which) {
        double s = 0.0;
        for (double v : d) {
            if (!(v >= 0.0)) throw NumericError(std::string("js_divergence: negative entry in ") + which);
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw NumericError(std::string("js_divergence: ") + which + " is not normalized");
    };
    check(p, "p");
    check(q, "q");
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
    }
    return std::max(js, 0.0);
}

/// A_1(x) + delta_1 and A_2(x) + delta_2, both perturbations crafted against
/// the current model.
struct AdversarialViews {
    Tensor first;
    Tensor second;
};

inline AdversarialViews adversarial_views(const Classifier& current, const Tensor& x, std::span<const std::size_t> y,
                                          const ImageShape& shape, std::span<const AugmentationSpec> pool,
                                          const AttackSpec& inner, std::uint64_t seed) {
    const Tensor a1 = augment_batch(x, shape, pool, derive_seed(seed, "augment", 1));
    const Tensor a2 = augment_batch(x, shape, pool, derive_seed(seed, "augment", 2));
    return {generate(inner, current, a1, y, derive_seed(seed, "delta", 1)),
            generate(inner, current, a2, y, derive_seed(seed, "delta", 2))};
}

namespace crs_detail {

inline Var scaled_log_probs(const BoundClassifier& net, const Tensor& x, double tau) {
    return log_softmax(scale(net(x), 1.0 / tau));
}

inline void require_teacher(const BoundClassifier& prev) {
    if (!prev.model().frozen()) throw ShapeError("crs: teacher must be a frozen snapshot");
}

} // namespace crs_detail

/// Batch-mean JS between the frozen teacher on view 1 and the student on
/// view 2, both temperature-scaled. Only the student receives gradients.
inline Var consistency_term(const BoundClassifier& prev, const BoundClassifier& curr, const AdversarialViews& views,
                            double tau) {
    crs_detail::require_teacher(prev);
    Var teacher = detach(crs_detail::scaled_log_probs(prev, views.first, tau));
    Var student = crs_detail::scaled_log_probs(curr, views.second, tau);
    return js_rows(teacher, student);
}

inline Var consistency_loss(const BoundClassifier& prev, const BoundClassifier& curr, const Tensor& x,
                            std::span<const std::size_t> y, const ImageShape& shape,
                            std::span<const AugmentationSpec> pool, const CrsConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    crs_detail::require_teacher(prev);
    const auto views = adversarial_views(curr.model(), x, y, shape, pool, cfg.inner, seed);
    return consistency_term(prev, curr, views, cfg.tau);
}

struct TotalLoss {
    Var value;
    double adv_prev = 0.0; // teacher cross-entropy on view 1 (no gradient)
    double adv_curr = 0.0; // student cross-entropy on view 2
    double js = 0.0;
};

/// 0.5 * (CE(teacher, view 1) + CE(student, view 2)) + lambda * JS.
/// The teacher half is a constant of the optimization.
inline TotalLoss total_loss(const BoundClassifier& prev, const BoundClassifier& curr, const Tensor& x,
                            std::span<const std::size_t> y, const ImageShape& shape,
                            std::span<const AugmentationSpec> pool, const CrsConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    crs_detail::require_teacher(prev);
    const auto views = adversarial_views(curr.model(), x, y, shape, pool, cfg.inner, seed);
    const std::vector<std::size_t> labels(y.begin(), y.end());
    Var ce_prev = detach(cross_entropy(prev(views.first), labels));
    Var ce_curr = cross_entropy(curr(views.second), labels);
    Var js = consistency_term(prev, curr, views, cfg.tau);
    Var value = add(scale(add(ce_prev, ce_curr), 0.5), scale(js, cfg.lambda));
    return {value, ce_prev.value().item(), ce_curr.value().item(), js.value().item()};
}

/// Two-view adversarial objective on current-stage data, with the current
/// model in both halves: 0.5 * (CE(view 1) + CE(view 2)).
inline Var two_view_adversarial_loss(const BoundClassifier& curr, const Tensor& x, std::span<const std::size_t> y,
                                     const ImageShape& shape, std::span<const AugmentationSpec> pool,
                                     const AttackSpec& inner, std::uint64_t seed) {
    const auto views = adversarial_views(curr.model(), x, y, shape, pool, inner, seed);
    const std::vector<std::size_t> labels(y.begin(), y.end());
    return scale(add(cross_entropy(curr(views.first), labels), cross_entropy(curr(views.second), labels)), 0.5);
}

} // namespace sseat
