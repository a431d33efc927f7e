#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "augment.hpp"
#include "classifier.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace sseat {

/// Augmentation-vote uncertainty of one sample.
struct UncertaintyRecord {
    std::size_t sample_index = 0;
    std::vector<std::size_t> votes; // per-class argmax counts over the views
    double score = 0.0;             // 1 - max(votes) / views
    std::size_t true_label = 0;

    std::size_t views() const { return std::accumulate(votes.begin(), votes.end(), std::size_t{0}); }
    /// Votes for the true class; logged for audit, not used for the score.
    std::size_t true_votes() const { return votes.at(true_label); }
};

/// r = 1 - max_c Q_c / Z.
inline double vote_uncertainty(std::span<const std::size_t> votes) {
    const std::size_t z = std::accumulate(votes.begin(), votes.end(), std::size_t{0});
    if (z == 0) throw ShapeError("vote_uncertainty: no votes");
    return 1.0 - static_cast<double>(*std::max_element(votes.begin(), votes.end())) / static_cast<double>(z);
}

/// Scores every row of `examples` with `views` augmented predictions each.
/// Row i draws from sub-stream i of `seed`, so a row's record does not depend
/// on the rest of the batch.
inline std::vector<UncertaintyRecord> uncertainty_scores(const Classifier& model, const Tensor& examples,
                                                         std::span<const std::size_t> labels, std::size_t views,
                                                         std::span<const AugmentationSpec> pool,
                                                         const ImageShape& shape, std::uint64_t seed,
                                                         std::size_t first_index = 0) {
    if (views == 0) throw ConfigError("uncertainty_score: view count must be at least 1");
    if (pool.empty()) throw ConfigError("uncertainty_score: empty augmentation pool");
    model.check_input(examples);
    const std::size_t n = examples.dim(0);
    if (labels.size() != n) throw ShapeError("uncertainty_score: label count does not match examples");
    const std::size_t classes = model.num_classes();

    std::vector<UncertaintyRecord> records(n);
    for (std::size_t i = 0; i < n; ++i) {
        records[i].sample_index = first_index + i;
        records[i].votes.assign(classes, 0);
        records[i].true_label = labels[i];
    }
    // One batch per view index across all samples.
    Tensor batch(examples.shape());
    for (std::size_t v = 0; v < views; ++v) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t s = derive_seed(derive_seed(seed, "sample", first_index + i), "view", v);
            Rng pick(derive_seed(s, "pick"));
            const auto& spec = pool[pick.below(pool.size())];
            auto aug = augment(examples.row(i), shape, spec, derive_seed(s, "augment"));
            std::copy(aug.begin(), aug.end(), batch.row(i).begin());
        }
        const auto pred = model.predict(batch);
        for (std::size_t i = 0; i < n; ++i) ++records[i].votes[pred[i]];
    }
    for (auto& r : records) r.score = vote_uncertainty(r.votes);
    return records;
}

inline UncertaintyRecord uncertainty_score(const Classifier& model, std::span<const double> x, std::size_t y,
                                           std::size_t views, std::span<const AugmentationSpec> pool,
                                           const ImageShape& shape, std::uint64_t seed,
                                           std::size_t sample_index = 0) {
    Tensor one(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
    const std::size_t label[] = {y};
    return uncertainty_scores(model, one, label, views, pool, shape, seed, sample_index).front();
}

struct ReplayEntry {
    std::vector<double> example;
    std::size_t label = 0;
    double score = 0.0;
    int source_stage = 0;
    std::size_t pool_index = 0; // position in the pool it was selected from
};

/// Bounded replay memory, entries ordered by ascending score.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<ReplayEntry>& entries() const noexcept { return entries_; }

    void assign(std::vector<ReplayEntry> entries) {
        if (entries.size() > capacity_)
            throw ShapeError("replay buffer: " + std::to_string(entries.size()) + " entries exceed capacity " +
                             std::to_string(capacity_));
        entries_ = std::move(entries);
    }

    /// Entry counts by source stage.
    std::map<int, std::size_t> histogram() const {
        std::map<int, std::size_t> h;
        for (const auto& e : entries_) ++h[e.source_stage];
        return h;
    }

    friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
        if (a.capacity_ != b.capacity_ || a.entries_.size() != b.entries_.size()) return false;
        for (std::size_t i = 0; i < a.entries_.size(); ++i) {
            const auto& x = a.entries_[i];
            const auto& y = b.entries_[i];
            if (x.example != y.example || x.label != y.label || x.score != y.score ||
                x.source_stage != y.source_stage || x.pool_index != y.pool_index)
                return false;
        }
        return true;
    }

private:
    std::size_t capacity_;
    std::vector<ReplayEntry> entries_;
};

/// Pool order sorted by (score, index), then every (n / K)-th position:
/// floor(i * n / K) for i in [0, K). Returns all positions when n <= K.
inline std::vector<std::size_t> interval_positions(std::span<const double> scores, std::size_t capacity) {
    if (capacity == 0) throw ConfigError("select_replay: capacity must be at least 1");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    if (n <= capacity) return order;
    std::vector<std::size_t> out;
    out.reserve(capacity);
    for (std::size_t i = 0; i < capacity; ++i) out.push_back(order[(i * n) / capacity]);
    return out;
}

struct PoolItem {
    std::vector<double> example;
    std::size_t label = 0;
    int source_stage = 0;
};

inline ReplayBuffer select_replay(std::span<const PoolItem> pool, std::span<const UncertaintyRecord> records,
                                  std::size_t capacity) {
    if (capacity == 0) throw ConfigError("select_replay: capacity must be at least 1");
    if (records.size() != pool.size())
        throw ShapeError("select_replay: " + std::to_string(records.size()) + " records for pool of " +
                         std::to_string(pool.size()));
    std::vector<double> scores(pool.size());
    for (const auto& r : records) {
        if (r.sample_index >= pool.size()) throw ShapeError("select_replay: record index outside the pool");
        scores[r.sample_index] = r.score;
    }
    ReplayBuffer buffer(capacity);
    std::vector<ReplayEntry> entries;
    for (std::size_t pos : interval_positions(scores, capacity)) {
        const auto& item = pool[pos];
        entries.push_back(ReplayEntry{item.example, item.label, scores[pos], item.source_stage, pos});
    }
    buffer.assign(std::move(entries));
    return buffer;
}

/// One line per entry: source stage, pool index, label, score (6 decimals).
inline void write_buffer_dump(std::ostream& os, const ReplayBuffer& buffer) {
    char line[96];
    for (const auto& e : buffer.entries()) {
        std::snprintf(line, sizeof line, "%d %zu %zu %.6f\n", e.source_stage, e.pool_index, e.label, e.score);
        os << line;
    }
}

inline constexpr char kBufferMagic[9] = "SSEATBUF";
inline constexpr std::uint32_t kBufferVersion = 1;

/// Exact binary form of a buffer, used to resume a schedule.
inline void save_buffer(const std::string& path, const ReplayBuffer& buffer) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path + " for writing");
    binio::put_magic(os, kBufferMagic);
    binio::put<std::uint32_t>(os, kBufferVersion);
    binio::put<std::uint64_t>(os, buffer.capacity());
    binio::put<std::uint64_t>(os, buffer.size());
    const std::size_t dim = buffer.empty() ? 0 : buffer.entries().front().example.size();
    binio::put<std::uint64_t>(os, dim);
    for (const auto& e : buffer.entries()) {
        binio::put<std::int32_t>(os, e.source_stage);
        binio::put<std::uint64_t>(os, e.pool_index);
        binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(e.label));
        binio::put<double>(os, e.score);
        for (double v : e.example) binio::put<double>(os, v);
    }
    if (!os) throw IoError("write failed: " + path);
}

inline ReplayBuffer load_buffer(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open buffer " + path);
    const std::string what = "buffer " + path;
    binio::expect_magic(is, kBufferMagic, what);
    if (binio::get<std::uint32_t>(is, what) != kBufferVersion) throw IoError(what + ": unsupported version");
    ReplayBuffer buffer(binio::get<std::uint64_t>(is, what));
    const auto count = binio::get<std::uint64_t>(is, what);
    const auto dim = binio::get<std::uint64_t>(is, what);
    std::vector<ReplayEntry> entries(count);
    for (auto& e : entries) {
        e.source_stage = binio::get<std::int32_t>(is, what);
        e.pool_index = binio::get<std::uint64_t>(is, what);
        e.label = binio::get<std::uint16_t>(is, what);
        e.score = binio::get<double>(is, what);
        e.example.resize(dim);
        for (double& v : e.example) v = binio::get<double>(is, what);
    }
    buffer.assign(std::move(entries));
    return buffer;
}

} // namespace sseat
