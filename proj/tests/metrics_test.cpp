#include <gtest/gtest.h>

#include <sseat/metrics.hpp>

using namespace sseat;

namespace {

/// Features encode the label one-hot, so an identity layer classifies perfectly.
Dataset leaked(std::size_t classes, std::size_t per_class) {
    Dataset d;
    d.name = "leaked";
    d.num_classes = classes;
    d.image = ImageShape{1, 1, classes};
    d.features = Tensor(Shape{classes * per_class, classes});
    for (std::size_t i = 0; i < classes * per_class; ++i) {
        d.labels.push_back(i % classes);
        d.features.at(i, i % classes) = 1.0;
    }
    return d;
}

Classifier identity(std::size_t classes) {
    Classifier m = Classifier::zeros({classes, classes});
    for (std::size_t i = 0; i < classes; ++i) m.mutable_layers()[0].weight.at(i, i) = 1.0;
    return m;
}

StageReport report(int stage, std::vector<double> acc) {
    StageReport r;
    r.stage = stage;
    const char* names[] = {"FGSM", "BIM", "PGD"};
    for (std::size_t i = 0; i < acc.size(); ++i) r.attack_accuracy.emplace_back(names[i], acc[i]);
    return r;
}

const std::vector<std::string> kNames{"FGSM", "BIM", "PGD"};

} // namespace

TEST(Evaluate, OracleModelScoresOne) {
    const Dataset d = leaked(10, 7);
    const NamedSet sets[] = {{"FGSM", &d}, {"PGD", &d}};
    const EvaluationReport r = evaluate(identity(10), sets, d);
    EXPECT_EQ(find_accuracy(r.attack_accuracy, "FGSM"), 1.0);
    EXPECT_EQ(find_accuracy(r.attack_accuracy, "PGD"), 1.0);
    EXPECT_EQ(r.clean_accuracy, 1.0);
}

TEST(Evaluate, ConstantModelScoresChance) {
    const Dataset d = leaked(10, 100);
    const EvaluationReport r = evaluate(Classifier::zeros({10, 10}), {}, d);
    EXPECT_EQ(r.clean_accuracy, 0.1);
}

TEST(Evaluate, DeterministicAndRejectsEmpty) {
    const Dataset d = leaked(4, 10);
    const Classifier m({4, 6, 4}, 3);
    const NamedSet sets[] = {{"BIM", &d}};
    EXPECT_EQ(evaluate(m, sets, d), evaluate(m, sets, d));
    Dataset empty = d;
    empty.labels.clear();
    EXPECT_THROW(accuracy(m, empty), ShapeError);
    EXPECT_THROW(find_accuracy({}, "MIM"), ShapeError);
}

TEST(Forgetting, MonotoneHistoryIsZero) {
    const std::vector<StageReport> reports{report(0, {0.1, 0.1, 0.1}), report(1, {0.5, 0.3, 0.2}),
                                           report(2, {0.6, 0.5, 0.4}), report(3, {0.7, 0.6, 0.5})};
    for (const auto& [name, v] : forgetting_profile(reports, kNames)) EXPECT_EQ(v, 0.0) << name;
}

TEST(Forgetting, BestMinusFinal) {
    const std::vector<StageReport> reports{report(0, {0.9, 0.1, 0.1}), report(1, {0.8, 0.3, 0.2}),
                                           report(2, {0.7, 0.5, 0.4}), report(3, {0.6, 0.45, 0.4})};
    const AccuracyList f = forgetting_profile(reports, kNames);
    ASSERT_EQ(f.size(), 3u);
    // Stage 0's 0.9 predates the FGSM stage and does not count.
    EXPECT_NEAR(find_accuracy(f, "FGSM"), 0.2, 1e-15);
    EXPECT_NEAR(find_accuracy(f, "BIM"), 0.05, 1e-15);
    EXPECT_EQ(find_accuracy(f, "PGD"), 0.0);
    EXPECT_NEAR(mean_value(f), 0.25 / 3.0, 1e-15);
    EXPECT_TRUE(forgetting_profile(std::vector<StageReport>{reports[0]}, kNames).empty());
}

TEST(Json, StageReportRoundTrip) {
    StageReport r = report(2, {0.25, 0.5});
    r.teacher_tag = 1;
    r.clean_accuracy = 0.875;
    r.epoch_loss = {1.5, 1.25};
    r.epoch_adv = {1.0, 0.75};
    r.epoch_js = {0.1, 0.2};
    r.buffer_histogram = {{0, 600}, {1, 250}, {2, 150}};
    r.trained_sources = {0, 1, 2};
    const json j = to_json(r);
    EXPECT_EQ(stage_report_from_json(json::parse(j.dump())), r);
    EXPECT_EQ(j.at("buffer_histogram").at("1").get<int>(), 250);
}

TEST(Json, EvaluationReportRoundTripSkipsRuntime) {
    EvaluationReport r;
    r.attack_accuracy = {{"FGSM", 0.7486}, {"MIM", 0.5}};
    r.clean_accuracy = 0.8192;
    r.forgetting = {{"FGSM", 0.01}};
    r.seeds = {1, 2, 3};
    r.runtime_seconds = 12.5;
    const json j = to_json(r);
    EXPECT_FALSE(j.contains("runtime_seconds"));
    const EvaluationReport back = evaluation_report_from_json(json::parse(j.dump()));
    EXPECT_EQ(back, r);
    EXPECT_EQ(back.runtime_seconds, 0.0);
    // Insertion order is kept so columns stay in stage order.
    EXPECT_EQ(j.at("attack_accuracy").begin().key(), "FGSM");
}

TEST(Table, PercentColumnsAndCleanColumn) {
    const TableRow rows[] = {{"Baseline (CAD)", {{"FGSM", 0.6052}, {"PGD", 0.5}}, 0.6052},
                             {"SSEAT", {{"FGSM", 0.7486}, {"PGD", 0.71}}, 0.8192}};
    const std::string t = format_table(rows);
    EXPECT_NE(t.find("| Clean"), std::string::npos);
    EXPECT_NE(t.find("74.86"), std::string::npos);
    EXPECT_NE(t.find("81.92"), std::string::npos);
    EXPECT_NE(t.find("50.00"), std::string::npos);
    EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 4);
    EXPECT_TRUE(format_table({}).empty());
}
