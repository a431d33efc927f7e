#include <gtest/gtest.h>

#include <sseat/classifier.hpp>

#include <sstream>

#include "test_util.hpp"

using namespace sseat;
using sseat::testing::random_tensor;

namespace {

/// Single linear layer whose logits are the given logit rows when fed the identity.
Classifier logit_model(const std::vector<double>& logits) {
    Classifier m = Classifier::zeros({1, logits.size()});
    for (std::size_t j = 0; j < logits.size(); ++j) m.mutable_layers()[0].bias[j] = logits[j];
    return m;
}

} // namespace

TEST(Classifier, ZeroModelGivesZeroLogits) {
    Rng rng(1);
    const Classifier m = Classifier::zeros({16, 8, 4});
    const Tensor z = m.logits(random_tensor(Shape{5, 16}, rng, 0.0, 1.0));
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Classifier, IdentityRowsReproduceFeatures) {
    Classifier m = Classifier::zeros({4, 2});
    m.mutable_layers()[0].weight.at(1, 0) = 1.0;
    m.mutable_layers()[0].weight.at(3, 1) = 1.0;
    const Tensor x(Shape{1, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
    const Tensor z = m.logits(x);
    EXPECT_EQ(z[0], 0.2);
    EXPECT_EQ(z[1], 0.4);
}

TEST(Classifier, BatchShapeContract) {
    Rng rng(2);
    const Classifier m({64, 64, 64, 10}, 3);
    EXPECT_EQ(m.logits(random_tensor(Shape{8, 64}, rng, 0.0, 1.0)).shape(), (Shape{8, 10}));
    EXPECT_THROW(m.logits(Tensor(Shape{8, 63})), ShapeError);
}

TEST(Classifier, GlorotInitBoundsAndDeterminism) {
    const Classifier a({64, 64, 10}, 42);
    const Classifier b({64, 64, 10}, 42);
    const Classifier c({64, 64, 10}, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a.parameter_hash(), c.parameter_hash());
    const double s = std::sqrt(6.0 / 128.0);
    for (double v : a.layers()[0].weight.data()) EXPECT_LE(std::abs(v), s);
}

TEST(Classifier, ScaledPredictionClosedForm) {
    const Classifier m = logit_model({2.0, 0.0});
    const Tensor x(Shape{1, 1}, 0.0);
    const Tensor p1 = m.predict_scaled(x, 1.0);
    EXPECT_NEAR(p1[0], 0.88079707797788244, 1e-15); // e^2 / (e^2 + 1)
    EXPECT_NEAR(p1[1], 0.11920292202211756, 1e-15);
    const Tensor sharp = m.predict_scaled(x, 0.5);
    EXPECT_NEAR(sharp[0], 0.98201379003790844, 1e-15); // e^4 / (e^4 + 1)
    EXPECT_GT(sharp[0], p1[0]);
    const Tensor flat = m.predict_scaled(x, 1e6);
    EXPECT_NEAR(flat[0], 0.5, 1e-6);
    EXPECT_GT(flat[0], flat[1]);
    EXPECT_THROW(m.predict_scaled(x, 0.0), ShapeError);
    EXPECT_THROW(m.predict_scaled(x, -1.0), ShapeError);
}

TEST(Classifier, TemperaturePreservesArgmax) {
    Rng rng(8);
    const Classifier m({6, 7, 5}, 9);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor x = random_tensor(Shape{3, 6}, rng, 0.0, 1.0);
        const auto raw = m.predict(x);
        const double tau = std::exp(rng.uniform(-4.0, 4.0));
        const Tensor p = m.predict_scaled(x, tau);
        for (std::size_t r = 0; r < 3; ++r) {
            EXPECT_EQ(kernel::argmax(p.row(r)), raw[r]);
            double s = 0.0;
            for (double v : p.row(r)) s += v;
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Sgd, PlainGradientDescentWithoutMomentum) {
    Classifier m({3, 2}, 1);
    const Classifier before = m;
    OptimizerState opt(m, 0.1, 0.0, 0.0);
    std::vector<Tensor> g{Tensor(Shape{3, 2}, 1.0), Tensor(Shape{2}, -2.0)};
    sgd_step(m, g, opt);
    for (std::size_t i = 0; i < 6; ++i)
        EXPECT_DOUBLE_EQ(m.layers()[0].weight[i], before.layers()[0].weight[i] - 0.1);
    EXPECT_DOUBLE_EQ(m.layers()[0].bias[0], 0.2);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
    Classifier m({3, 4, 2}, 5);
    const Classifier before = m;
    OptimizerState opt(m, 0.1, 0.9, 0.0);
    std::vector<Tensor> g;
    for (const auto& l : m.layers()) {
        g.emplace_back(l.weight.shape(), 0.0);
        g.emplace_back(l.bias.shape(), 0.0);
    }
    sgd_step(m, g, opt);
    EXPECT_EQ(m, before);
}

TEST(Sgd, MomentumSecondStepDisplacement) {
    // v1 = g, v2 = 0.9 g + g = 1.9 g, so the second step moves 1.9 lr g.
    Classifier m = Classifier::zeros({1, 1});
    OptimizerState opt(m, 0.5, 0.9, 0.0);
    const std::vector<Tensor> g{Tensor(Shape{1, 1}, 2.0), Tensor(Shape{1}, 0.0)};
    sgd_step(m, g, opt);
    const double after_first = m.layers()[0].weight[0];
    sgd_step(m, g, opt);
    EXPECT_DOUBLE_EQ(after_first - m.layers()[0].weight[0], 1.9 * 0.5 * 2.0);
}

TEST(Sgd, RejectsMissingGradients) {
    Classifier m({3, 4, 2}, 5);
    OptimizerState opt(m, 0.1, 0.9, 0.0);
    std::vector<Tensor> g{Tensor(Shape{3, 4}, 0.0)};
    EXPECT_THROW(sgd_step(m, g, opt), ShapeError);
}

TEST(Sgd, FrozenSnapshotRejectsUpdates) {
    Classifier snap = Classifier({3, 2}, 1).snapshot(0);
    OptimizerState opt(snap, 0.1, 0.0, 0.0);
    std::vector<Tensor> g{Tensor(Shape{3, 2}, 1.0), Tensor(Shape{2}, 1.0)};
    EXPECT_THROW(sgd_step(snap, g, opt), ShapeError);
}

TEST(Sgd, TrainingReducesLoss) {
    Rng rng(12);
    Classifier m({64, 64, 64, 10}, 77);
    const Tensor x = random_tensor(Shape{32, 64}, rng, 0.0, 1.0);
    const auto y = sseat::testing::random_labels(32, 10, rng);
    OptimizerState opt(m, 0.05, 0.9, 5e-4);
    const Classifier snap = m.snapshot(0);
    const auto hash = snap.parameter_hash();
    const double initial = sseat::testing::reference_ce(m, x, y);
    for (int step = 0; step < 50; ++step) {
        Tape tape;
        BoundClassifier net(tape, m, BoundClassifier::Mode::Trainable);
        sgd_step(m, net.gradients(tape.backward(cross_entropy(net(x), y))), opt);
    }
    EXPECT_LT(sseat::testing::reference_ce(m, x, y), initial);
    EXPECT_EQ(snap.parameter_hash(), hash);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const Classifier m = Classifier({7, 5, 3}, 13).snapshot(4);
    std::stringstream ss;
    write_checkpoint(ss, m);
    const Classifier back = read_checkpoint(ss);
    EXPECT_EQ(back, m);
    EXPECT_EQ(back.snapshot_tag(), 4);
    EXPECT_EQ(back.parameter_hash(), m.parameter_hash());
}

TEST(Checkpoint, RejectsVersionMismatch) {
    std::stringstream ss;
    write_checkpoint(ss, Classifier({3, 2}, 1));
    std::string bytes = ss.str();
    bytes[8] = 9; // version field follows the 8-byte magic
    std::stringstream bad(bytes);
    EXPECT_THROW(read_checkpoint(bad), IoError);
}

TEST(Checkpoint, RejectsTruncation) {
    std::stringstream ss;
    write_checkpoint(ss, Classifier({3, 2}, 1));
    std::string bytes = ss.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 4));
    EXPECT_THROW(read_checkpoint(cut), IoError);
}
