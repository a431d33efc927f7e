#include <gtest/gtest.h>

#include <sseat/adr.hpp>

#include <filesystem>
#include <sstream>

#include "test_util.hpp"

using namespace sseat;
using sseat::testing::random_tensor;

namespace {

/// Sort (score, index) pairs explicitly and take positions floor(i * n / K).
std::vector<std::size_t> brute_force_stride(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> pairs;
    for (std::size_t i = 0; i < scores.size(); ++i) pairs.emplace_back(scores[i], i);
    std::sort(pairs.begin(), pairs.end());
    std::vector<std::size_t> out;
    if (pairs.size() <= k) {
        for (const auto& p : pairs) out.push_back(p.second);
        return out;
    }
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = static_cast<double>(i) * static_cast<double>(pairs.size()) / static_cast<double>(k);
        out.push_back(pairs[static_cast<std::size_t>(std::floor(exact + 1e-9))].second);
    }
    return out;
}

std::vector<PoolItem> numbered_pool(std::size_t n) {
    std::vector<PoolItem> pool;
    for (std::size_t i = 0; i < n; ++i) pool.push_back(PoolItem{{static_cast<double>(i)}, i % 3, static_cast<int>(i % 4)});
    return pool;
}

std::vector<UncertaintyRecord> records_for(const std::vector<double>& scores) {
    std::vector<UncertaintyRecord> r(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        r[i].sample_index = i;
        r[i].score = scores[i];
    }
    return r;
}

} // namespace

TEST(Augment, ZeroJitterIsIdentity) {
    Rng rng(2);
    const ImageShape shape;
    const Tensor x = random_tensor(Shape{64}, rng, 0.0, 1.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        EXPECT_EQ(augment(x, shape, AugmentationSpec::jitter(0.0, 0.0), seed), x);
}

TEST(Augment, JitterKeepsRange) {
    Rng rng(3);
    const ImageShape shape{3, 4, 4};
    const Tensor x = random_tensor(Shape{48}, rng, 0.0, 1.0);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Tensor y = augment(x, shape, AugmentationSpec::jitter(0.5, 0.9), seed);
        for (double v : y.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Augment, CutoutZeroesSideSquaredPerChannel) {
    const ImageShape shape{3, 8, 8};
    const Tensor ones(Shape{shape.size()}, 1.0);
    for (std::size_t side : {1u, 2u, 3u, 5u}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const Tensor y = augment(ones, shape, AugmentationSpec::cutout(side), seed);
            for (std::size_t c = 0; c < 3; ++c) {
                std::size_t zeros = 0;
                for (std::size_t i = 0; i < 64; ++i) zeros += y[c * 64 + i] == 0.0;
                EXPECT_EQ(zeros, side * side);
            }
        }
    }
}

TEST(Augment, ShearMovesPixelAlongRow) {
    // Row 7 sits 3.5 rows below the center: tan(30 deg) * 3.5 = 2.02, so the
    // source column of output column c is round(c - 2.02); column 2 lands at 4.
    const ImageShape shape;
    std::vector<double> img(64, 0.0);
    img[7 * 8 + 2] = 1.0;
    const auto out = shear_image(img, shape, 30.0);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(out[i], i == 7 * 8 + 4 ? 1.0 : 0.0) << i;
    EXPECT_EQ(shear_image(img, shape, 0.0), img);
}

TEST(Augment, DeterministicAndRejectsBadShapes) {
    Rng rng(5);
    const ImageShape shape;
    const Tensor x = random_tensor(Shape{64}, rng, 0.0, 1.0);
    for (const auto& spec : default_augmentations()) EXPECT_EQ(augment(x, shape, spec, 9), augment(x, shape, spec, 9));
    EXPECT_THROW(augment(Tensor(Shape{63}), shape, AugmentationSpec::named("shear"), 0), ShapeError);
    EXPECT_THROW(AugmentationSpec::named("mixup"), ConfigError);
}

TEST(Uncertainty, VoteArithmetic) {
    const std::size_t unanimous[] = {8, 0, 0};
    const std::size_t split[] = {4, 0, 4};
    const std::size_t three_way[] = {2, 3, 3};
    EXPECT_EQ(vote_uncertainty(unanimous), 0.0);
    EXPECT_EQ(vote_uncertainty(split), 0.5);
    EXPECT_DOUBLE_EQ(vote_uncertainty(three_way), 1.0 - 3.0 / 8.0);
    const std::size_t none[] = {0, 0};
    EXPECT_THROW(vote_uncertainty(none), ShapeError);
}

TEST(Uncertainty, ConstantModelVotesTieBreakClass) {
    Rng rng(6);
    const Classifier m = Classifier::zeros({64, 16, 5});
    const Tensor x = random_tensor(Shape{10, 64}, rng, 0.0, 1.0);
    const std::vector<std::size_t> y{4, 3, 2, 1, 0, 4, 3, 2, 1, 0};
    const auto recs = uncertainty_scores(m, x, y, 8, default_augmentations(), ImageShape{}, 3);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(recs[i].votes, (std::vector<std::size_t>{8, 0, 0, 0, 0}));
        EXPECT_EQ(recs[i].score, 0.0);
        EXPECT_EQ(recs[i].views(), 8u);
        EXPECT_EQ(recs[i].true_label, y[i]);
    }
}

TEST(Uncertainty, RowRecordIndependentOfBatch) {
    Rng rng(7);
    const Classifier m({64, 16, 4}, 2);
    const Tensor x = random_tensor(Shape{6, 64}, rng, 0.0, 1.0);
    const std::vector<std::size_t> y{0, 1, 2, 3, 0, 1};
    const auto all = uncertainty_scores(m, x, y, 8, default_augmentations(), ImageShape{}, 11);
    for (std::size_t i = 0; i < 6; ++i) {
        const auto one = uncertainty_score(m, x.row(i), y[i], 8, default_augmentations(), ImageShape{}, 11, i);
        EXPECT_EQ(one.votes, all[i].votes);
        EXPECT_GE(one.score, 0.0);
        EXPECT_LE(one.score, 1.0 - 1.0 / 8.0);
    }
}

TEST(Uncertainty, RejectsZeroViewsAndEmptyPool) {
    const Classifier m = Classifier::zeros({64, 2});
    const Tensor x(Shape{64}, 0.5);
    EXPECT_THROW(uncertainty_score(m, x.data(), 0, 0, default_augmentations(), ImageShape{}, 0), ConfigError);
    EXPECT_THROW(uncertainty_score(m, x.data(), 0, 8, {}, ImageShape{}, 0), ConfigError);
}

TEST(Selection, StrideOfTenIntoFive) {
    const std::vector<double> scores{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    EXPECT_EQ(interval_positions(scores, 5), (std::vector<std::size_t>{0, 2, 4, 6, 8}));
}

TEST(Selection, CapacityEqualsPoolIsSortedIdentity) {
    const std::vector<double> scores{0.5, 0.25, 0.75, 0.25};
    EXPECT_EQ(interval_positions(scores, 4), (std::vector<std::size_t>{1, 3, 0, 2}));
    const auto pool = numbered_pool(1000);
    std::vector<double> s(1000, 0.0);
    const ReplayBuffer b = select_replay(pool, records_for(s), 1000);
    EXPECT_EQ(b.size(), 1000u);
}

TEST(Selection, EmptyPoolGivesEmptyBuffer) {
    const ReplayBuffer b = select_replay({}, {}, 10);
    EXPECT_TRUE(b.empty());
    EXPECT_EQ(b.capacity(), 10u);
    EXPECT_THROW(interval_positions({}, 0), ConfigError);
}

TEST(Selection, MatchesBruteForceOracle) {
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(64);
        const std::size_t k = 1 + rng.below(70);
        std::vector<double> scores(n);
        // Vote-derived scores take few distinct values, so ties are common.
        for (double& s : scores) s = static_cast<double>(rng.below(5)) / 8.0;
        const auto pool = numbered_pool(n);
        const ReplayBuffer b = select_replay(pool, records_for(scores), k);
        const auto expected = brute_force_stride(scores, k);
        ASSERT_EQ(b.size(), expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            EXPECT_EQ(b.entries()[i].pool_index, expected[i]);
            EXPECT_EQ(b.entries()[i].example, pool[expected[i]].example);
            EXPECT_EQ(b.entries()[i].source_stage, pool[expected[i]].source_stage);
        }
        EXPECT_LE(b.size(), k);
    }
}

TEST(Buffer, RejectsOverfill) {
    ReplayBuffer b(2);
    EXPECT_THROW(b.assign(std::vector<ReplayEntry>(3)), ShapeError);
}

TEST(Buffer, DumpAndBinaryRoundTrip) {
    const auto pool = numbered_pool(12);
    std::vector<double> scores;
    for (std::size_t i = 0; i < 12; ++i) scores.push_back(static_cast<double>((i * 7) % 5) / 8.0);
    const ReplayBuffer b = select_replay(pool, records_for(scores), 4);
    EXPECT_EQ(b.histogram().size() <= 4, true);

    std::ostringstream dump;
    write_buffer_dump(dump, b);
    std::istringstream in(dump.str());
    int stage;
    std::size_t index, label;
    double score;
    std::size_t lines = 0;
    while (in >> stage >> index >> label >> score) {
        EXPECT_EQ(index, b.entries()[lines].pool_index);
        EXPECT_EQ(stage, b.entries()[lines].source_stage);
        EXPECT_NEAR(score, b.entries()[lines].score, 1e-6);
        ++lines;
    }
    EXPECT_EQ(lines, b.size());

    const auto path = std::filesystem::temp_directory_path() / "sseat_adr_test.buf";
    save_buffer(path.string(), b);
    EXPECT_EQ(load_buffer(path.string()), b);
    std::filesystem::remove(path);
    EXPECT_THROW(load_buffer(path.string()), IoError);
}
