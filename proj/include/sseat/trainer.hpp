#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "adr.hpp"
#include "attacks.hpp"
#include "augment.hpp"
#include "classifier.hpp"
#include "crs.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "rng.hpp"

namespace sseat {

struct StageConfig {
    std::size_t epochs = 10;
    double learning_rate = 0.01;
};

struct AdrConfig {
    bool enabled = true;
    std::size_t views = 8;
    std::size_t capacity = 1000;
    std::vector<AugmentationSpec> pool = default_augmentations();
};

/// Which of the four ablation variants a pair of switches selects.
enum class Variant { Baseline, Crs, Adr, AdrCrs };

inline const char* variant_name(Variant v) {
    switch (v) {
    case Variant::Baseline: return "Baseline (CAD)";
    case Variant::Crs: return "+CRS";
    case Variant::Adr: return "+ADR";
    case Variant::AdrCrs: return "+ADR+CRS (SSEAT)";
    }
    return "?";
}

struct CdsSchedule {
    std::vector<std::size_t> hidden{64, 64};
    StageConfig initial{10, 0.05};
    /// Stages 1..T, one attack each.
    std::vector<AttackSpec> attacks;
    std::vector<StageConfig> stages;
    AdrConfig adr;
    bool crs_enabled = true;
    CrsConfig crs;
    /// Augmentations for the two-view adversarial objective.
    std::vector<AugmentationSpec> train_augmentations = default_augmentations();
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;

    std::size_t stage_count() const noexcept { return attacks.size(); }

    Variant variant() const {
        if (adr.enabled) return crs_enabled ? Variant::AdrCrs : Variant::Adr;
        return crs_enabled ? Variant::Crs : Variant::Baseline;
    }

    void set_variant(Variant v) {
        adr.enabled = v == Variant::Adr || v == Variant::AdrCrs;
        crs_enabled = v == Variant::Crs || v == Variant::AdrCrs;
    }

    /// Inner maximization for stage t: the configured solver at the stage's budget.
    AttackSpec inner_attack(std::size_t t) const {
        AttackSpec a = crs.inner;
        a.epsilon = attacks.at(t - 1).epsilon;
        a.alpha = std::min(attacks.at(t - 1).alpha, a.epsilon);
        return a;
    }

    void validate() const {
        if (stages.size() != attacks.size())
            throw ConfigError("schedule: " + std::to_string(attacks.size()) + " attacks but " +
                              std::to_string(stages.size()) + " stage configs");
        std::set<std::string> names;
        for (const auto& a : attacks) {
            a.validate();
            if (!names.insert(a.name).second) throw ConfigError("schedule: attack '" + a.name + "' appears twice");
        }
        for (const auto& s : stages)
            if (!(s.learning_rate > 0.0)) throw ConfigError("schedule: learning rate must be positive");
        if (!(initial.learning_rate > 0.0)) throw ConfigError("schedule: learning rate must be positive");
        if (batch_size == 0) throw ConfigError("schedule: batch size must be positive");
        if (adr.capacity == 0) throw ConfigError("schedule: buffer capacity must be positive");
        if (adr.views == 0) throw ConfigError("schedule: view count must be positive");
        if (adr.pool.empty() || train_augmentations.empty()) throw ConfigError("schedule: empty augmentation pool");
        if (hidden.empty()) throw ConfigError("schedule: need at least one hidden layer");
        crs.validate();
    }
};

/// Clean sets plus the per-stage attacks. A stage whose `train` set is empty
/// has it crafted against the preceding snapshot when the stage starts.
struct CdsData {
    Dataset clean_train;
    Dataset clean_test;
    std::vector<StageSets> stages;

    std::vector<NamedSet> test_sets() const {
        std::vector<NamedSet> out;
        for (const auto& s : stages) out.push_back({s.attack.name, &s.test});
        return out;
    }

    std::vector<std::string> attack_names() const {
        std::vector<std::string> out;
        for (const auto& s : stages) out.push_back(s.attack.name);
        return out;
    }
};

struct TrainingEvent {
    int stage;
    std::size_t epoch;
    std::string phase; // "clean", "current" or "replay"
    std::size_t batches;
    double loss;
    double adv;
    double js;
};

using TrainingLogger = std::function<void(const TrainingEvent&)>;

struct StageOutcome {
    Classifier model; // frozen snapshot tagged with the stage
    ReplayBuffer buffer;
    StageReport report;
    Dataset attack_train; // the stage's training attack set, empty for stage 0
};

inline std::vector<std::size_t> model_widths(const CdsSchedule& s, const Dataset& d) {
    std::vector<std::size_t> w{d.dim()};
    w.insert(w.end(), s.hidden.begin(), s.hidden.end());
    w.push_back(d.num_classes);
    return w;
}

namespace trainer_detail {

inline constexpr std::size_t kLogEvery = 25;

struct PhaseStats {
    double loss = 0.0, adv = 0.0, js = 0.0;
    std::size_t batches = 0;
    double group_loss = 0.0, group_adv = 0.0, group_js = 0.0;
    std::size_t group = 0;

    void add(double l, double a, double j) {
        loss += l, adv += a, js += j, ++batches;
        group_loss += l, group_adv += a, group_js += j, ++group;
    }

    void flush(const TrainingLogger& log, int stage, std::size_t epoch, const char* phase, bool force) {
        if (!log || group == 0 || (!force && group < kLogEvery)) return;
        const double n = static_cast<double>(group);
        log(TrainingEvent{stage, epoch, phase, group, group_loss / n, group_adv / n, group_js / n});
        group_loss = group_adv = group_js = 0.0;
        group = 0;
    }
};

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    return idx;
}

inline std::uint64_t batch_seed(std::uint64_t master, int stage, std::size_t epoch, const char* phase, std::size_t b) {
    return derive_seed(derive_seed(derive_seed(master, phase, static_cast<std::uint64_t>(stage)), "epoch", epoch),
                       "batch", b);
}

inline Tensor rows_of(const std::vector<ReplayEntry>& entries, std::span<const std::size_t> idx) {
    const std::size_t dim = entries.front().example.size();
    Tensor out(Shape{idx.size(), dim});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(entries[idx[r]].example.begin(), entries[idx[r]].example.end(), out.row(r).begin());
    return out;
}

inline void fill_evaluation(StageReport& report, const Classifier& model, const CdsData& data) {
    const auto sets = data.test_sets();
    const EvaluationReport e = evaluate(model, sets, data.clean_test);
    report.attack_accuracy = e.attack_accuracy;
    report.clean_accuracy = e.clean_accuracy;
}

/// Re-scores `pool` under `model` and keeps `capacity` entries by interval sampling.
inline ReplayBuffer reselect(const Classifier& model, const std::vector<PoolItem>& pool, const CdsSchedule& schedule,
                             const ImageShape& shape, int stage) {
    if (pool.empty()) return ReplayBuffer(schedule.adr.capacity);
    Tensor examples(Shape{pool.size(), pool.front().example.size()});
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::copy(pool[i].example.begin(), pool[i].example.end(), examples.row(i).begin());
        labels.push_back(pool[i].label);
    }
    const auto records =
        uncertainty_scores(model, examples, labels, schedule.adr.views, schedule.adr.pool, shape,
                           derive_seed(schedule.seed, "adr", static_cast<std::uint64_t>(stage)));
    return select_replay(pool, records, schedule.adr.capacity);
}

inline void check_finite(const Classifier& m, int stage) {
    for (const auto& l : m.layers())
        if (!l.weight.all_finite() || !l.bias.all_finite())
            throw NumericError("stage " + std::to_string(stage) + ": parameters became non-finite");
}

} // namespace trainer_detail

/// Stage 0: plain cross-entropy on the clean set, then the first replay
/// selection under the trained model.
inline StageOutcome run_initial_stage(const CdsSchedule& schedule, const CdsData& data,
                                      const TrainingLogger& log = {}) {
    using namespace trainer_detail;
    const Dataset& clean = data.clean_train;
    if (clean.empty()) throw ShapeError("initial stage: empty clean dataset");
    Classifier model(model_widths(schedule, clean), derive_seed(schedule.seed, "init"));
    OptimizerState opt(model, schedule.initial.learning_rate, schedule.momentum, schedule.weight_decay);

    StageReport report;
    report.stage = 0;
    for (std::size_t epoch = 0; epoch < schedule.initial.epochs; ++epoch) {
        const auto order = shuffled(clean.size(), derive_seed(schedule.seed, "shuffle-clean", epoch));
        PhaseStats stats;
        for (std::size_t start = 0, b = 0; start < order.size(); start += schedule.batch_size, ++b) {
            const std::span<const std::size_t> idx(order.data() + start,
                                                   std::min(schedule.batch_size, order.size() - start));
            Tape tape;
            BoundClassifier net(tape, model, BoundClassifier::Mode::Trainable);
            Var loss = cross_entropy(net(clean.batch(idx)), clean.batch_labels(idx));
            const auto grads = net.gradients(tape.backward(loss));
            sgd_step(model, grads, opt);
            stats.add(loss.value().item(), loss.value().item(), 0.0);
            stats.flush(log, 0, epoch, "clean", false);
        }
        stats.flush(log, 0, epoch, "clean", true);
        const double n = static_cast<double>(std::max<std::size_t>(stats.batches, 1));
        report.epoch_loss.push_back(stats.loss / n);
        report.epoch_adv.push_back(stats.adv / n);
        report.epoch_js.push_back(0.0);
    }
    check_finite(model, 0);
    if (!clean.empty()) report.trained_sources = {0};

    Classifier snap = model.snapshot(0);
    ReplayBuffer buffer(schedule.adr.capacity);
    if (schedule.adr.enabled) {
        std::vector<PoolItem> pool;
        pool.reserve(clean.size());
        for (std::size_t i = 0; i < clean.size(); ++i) {
            auto ex = clean.example(i);
            pool.push_back(PoolItem{{ex.begin(), ex.end()}, clean.labels[i], 0});
        }
        buffer = reselect(snap, pool, schedule, clean.image, 0);
    }
    report.buffer_histogram = buffer.histogram();
    fill_evaluation(report, snap, data);
    return {std::move(snap), std::move(buffer), std::move(report), Dataset{}};
}

/// Stage t >= 1. Each epoch trains first on the stage's attack set, then on
/// the replay buffer against the frozen teacher; afterwards the buffer is
/// re-selected from its old contents plus the stage's attack set.
inline StageOutcome run_stage(int t, const Classifier& teacher, const ReplayBuffer& buffer,
                              const CdsSchedule& schedule, const CdsData& data, const TrainingLogger& log = {}) {
    using namespace trainer_detail;
    if (t < 1 || static_cast<std::size_t>(t) > schedule.stage_count() ||
        static_cast<std::size_t>(t) > data.stages.size())
        throw ConfigError("run_stage: no stage " + std::to_string(t) + " in schedule");
    if (!teacher.frozen() || teacher.snapshot_tag() != t - 1)
        throw ShapeError("run_stage: stage " + std::to_string(t) + " needs the snapshot of stage " +
                         std::to_string(t - 1) + " as teacher");
    if (buffer.size() > schedule.adr.capacity) throw ShapeError("run_stage: replay buffer exceeds capacity");
    const StageSets& sets = data.stages[t - 1];
    Dataset current = sets.train.empty()
                          ? materialize_train_set(static_cast<std::size_t>(t), sets.attack, teacher, data.clean_train,
                                                  derive_seed(schedule.seed, "attack-sets"))
                          : sets.train;
    if (current.empty()) throw ShapeError("run_stage: empty attack set for stage " + std::to_string(t));

    const StageConfig& cfg = schedule.stages[t - 1];
    const ImageShape& shape = current.image;
    const Variant variant = schedule.variant();
    const bool replay = variant == Variant::Adr || variant == Variant::AdrCrs;
    const bool crs_on_current = variant == Variant::Crs;
    CrsConfig crs = schedule.crs;
    crs.inner = schedule.inner_attack(static_cast<std::size_t>(t));
    CrsConfig replay_crs = crs;
    if (!schedule.crs_enabled) replay_crs.lambda = 0.0;

    Classifier model = teacher.thawed();
    OptimizerState opt(model, cfg.learning_rate, schedule.momentum, schedule.weight_decay);
    StageReport report;
    report.stage = t;
    report.teacher_tag = *teacher.snapshot_tag();
    std::set<int> sources;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        PhaseStats stats;
        // (a) current-stage attack data
        const auto order = shuffled(current.size(), batch_seed(schedule.seed, t, epoch, "shuffle-current", 0));
        for (std::size_t start = 0, b = 0; start < order.size(); start += schedule.batch_size, ++b) {
            const std::span<const std::size_t> idx(order.data() + start,
                                                   std::min(schedule.batch_size, order.size() - start));
            const Tensor x = current.batch(idx);
            const auto y = current.batch_labels(idx);
            const std::uint64_t seed = batch_seed(schedule.seed, t, epoch, "current", b);
            Tape tape;
            BoundClassifier net(tape, model, BoundClassifier::Mode::Trainable);
            double value, adv, js = 0.0;
            Var root;
            if (crs_on_current) {
                BoundClassifier prev(tape, teacher, BoundClassifier::Mode::Constant);
                const TotalLoss tl = total_loss(prev, net, x, y, shape, schedule.train_augmentations, crs, seed);
                root = tl.value;
                adv = tl.adv_curr;
                js = tl.js;
            } else {
                root = two_view_adversarial_loss(net, x, y, shape, schedule.train_augmentations, crs.inner, seed);
                adv = root.value().item();
            }
            value = root.value().item();
            sgd_step(model, net.gradients(tape.backward(root)), opt);
            stats.add(value, adv, js);
            stats.flush(log, t, epoch, "current", false);
        }
        stats.flush(log, t, epoch, "current", true);
        sources.insert(t);

        // (b) replay against the frozen teacher
        if (replay && !buffer.empty()) {
            const auto& entries = buffer.entries();
            const auto rorder = shuffled(entries.size(), batch_seed(schedule.seed, t, epoch, "shuffle-replay", 0));
            for (std::size_t start = 0, b = 0; start < rorder.size(); start += schedule.batch_size, ++b) {
                const std::span<const std::size_t> idx(rorder.data() + start,
                                                       std::min(schedule.batch_size, rorder.size() - start));
                const Tensor x = rows_of(entries, idx);
                std::vector<std::size_t> y;
                for (std::size_t i : idx) {
                    y.push_back(entries[i].label);
                    sources.insert(entries[i].source_stage);
                }
                const std::uint64_t seed = batch_seed(schedule.seed, t, epoch, "replay", b);
                Tape tape;
                BoundClassifier net(tape, model, BoundClassifier::Mode::Trainable);
                BoundClassifier prev(tape, teacher, BoundClassifier::Mode::Constant);
                const TotalLoss tl = total_loss(prev, net, x, y, shape, schedule.adr.pool, replay_crs, seed);
                sgd_step(model, net.gradients(tape.backward(tl.value)), opt);
                stats.add(tl.value.value().item(), tl.adv_curr, tl.js);
                stats.flush(log, t, epoch, "replay", false);
            }
            stats.flush(log, t, epoch, "replay", true);
        }
        const double n = static_cast<double>(std::max<std::size_t>(stats.batches, 1));
        report.epoch_loss.push_back(stats.loss / n);
        report.epoch_adv.push_back(stats.adv / n);
        report.epoch_js.push_back(stats.js / n);
    }
    check_finite(model, t);
    report.trained_sources.assign(sources.begin(), sources.end());

    Classifier snap = model.snapshot(t);
    ReplayBuffer next(schedule.adr.capacity);
    if (replay) {
        std::vector<PoolItem> pool;
        pool.reserve(buffer.size() + current.size());
        for (const auto& e : buffer.entries()) pool.push_back(PoolItem{e.example, e.label, e.source_stage});
        for (std::size_t i = 0; i < current.size(); ++i) {
            auto ex = current.example(i);
            pool.push_back(PoolItem{{ex.begin(), ex.end()}, current.labels[i], t});
        }
        next = reselect(snap, pool, schedule, shape, t);
    }
    report.buffer_histogram = next.histogram();
    fill_evaluation(report, snap, data);
    return {std::move(snap), std::move(next), std::move(report), std::move(current)};
}

struct ScheduleResult {
    Classifier final_model;
    std::vector<StageReport> reports;
    std::vector<Classifier> snapshots; // stage order, starting at the first stage actually run
    ReplayBuffer final_buffer;
};

/// State to resume from: the snapshot and replay buffer left by stage
/// `start_stage - 1`, and the reports of the stages already completed.
struct ResumePoint {
    int start_stage = 1;
    Classifier model;
    ReplayBuffer buffer;
    std::vector<StageReport> reports;
};

using StageCallback = std::function<void(const StageOutcome&)>;

inline ScheduleResult run_schedule(const CdsSchedule& schedule, const CdsData& data,
                                   const std::optional<ResumePoint>& resume = std::nullopt,
                                   const StageCallback& on_stage = {}, const TrainingLogger& log = {}) {
    schedule.validate();
    if (data.stages.size() < schedule.stage_count())
        throw ConfigError("run_schedule: " + std::to_string(data.stages.size()) + " attack sets for " +
                          std::to_string(schedule.stage_count()) + " stages");
    ScheduleResult result;
    Classifier model;
    ReplayBuffer buffer;
    int first = 1;
    if (resume) {
        first = resume->start_stage;
        model = resume->model;
        buffer = resume->buffer;
        result.reports = resume->reports;
        if (first < 1 || static_cast<std::size_t>(first) > schedule.stage_count() + 1)
            throw ConfigError("run_schedule: cannot resume at stage " + std::to_string(first));
    } else {
        StageOutcome out = run_initial_stage(schedule, data, log);
        if (on_stage) on_stage(out);
        model = out.model;
        buffer = out.buffer;
        result.reports.push_back(out.report);
        result.snapshots.push_back(out.model);
    }
    for (int t = first; t <= static_cast<int>(schedule.stage_count()); ++t) {
        StageOutcome out;
        try {
            out = run_stage(t, model, buffer, schedule, data, log);
        } catch (const NumericError& e) {
            throw NumericError("stage " + std::to_string(t) + " failed: " + e.what());
        }
        if (on_stage) on_stage(out);
        model = out.model;
        buffer = std::move(out.buffer);
        result.reports.push_back(out.report);
        result.snapshots.push_back(out.model);
    }
    result.final_model = model;
    result.final_buffer = std::move(buffer);
    return result;
}

/// Clean sets, an independent surrogate and the black-box test attack sets
/// crafted against it. Everything derives from `schedule.seed`.
struct PreparedData {
    CdsData data;
    Classifier surrogate;
};

struct DataOptions {
    std::size_t classes = 10;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 100;
    SyntheticOptions synthetic;
};

/// Clean-trains a model of the schedule's architecture from `init_seed`.
inline Classifier train_clean_model(const CdsSchedule& schedule, const Dataset& clean, std::uint64_t init_seed) {
    CdsSchedule s = schedule;
    s.seed = init_seed;
    s.adr.enabled = false;
    CdsData only;
    only.clean_train = clean;
    only.clean_test = clean;
    return run_initial_stage(s, only).model;
}

inline Classifier train_surrogate(const CdsSchedule& schedule, const Dataset& clean) {
    return train_clean_model(schedule, clean, derive_seed(schedule.seed, "surrogate"));
}

inline CdsData synthetic_clean_data(const CdsSchedule& schedule, const DataOptions& opt) {
    SyntheticOptions train_opt = opt.synthetic;
    train_opt.split = Split::Train;
    SyntheticOptions test_opt = opt.synthetic;
    test_opt.split = Split::Test;
    CdsData d;
    d.clean_train = generate_synthetic(opt.classes, opt.train_per_class, derive_seed(schedule.seed, "data-train"),
                                       train_opt);
    d.clean_test =
        generate_synthetic(opt.classes, opt.test_per_class, derive_seed(schedule.seed, "data-test"), test_opt);
    return d;
}

inline PreparedData prepare_data(const CdsSchedule& schedule, const DataOptions& opt) {
    PreparedData p;
    p.data = synthetic_clean_data(schedule, opt);
    p.surrogate = train_surrogate(schedule, p.data.clean_train);
    p.data.stages = materialize_attack_sets(schedule.attacks, p.surrogate, p.data.clean_test,
                                            derive_seed(schedule.seed, "attack-sets"));
    return p;
}

} // namespace sseat
