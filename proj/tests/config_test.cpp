#include <gtest/gtest.h>

#include <sseat/config.hpp>

using namespace sseat;

TEST(Config, EmptyTextGivesDefaultSchedule) {
    const RunConfig c = parse_config("");
    ASSERT_EQ(c.schedule.stage_count(), 5u);
    const char* expected[] = {"FGSM", "BIM", "PGD", "RFGSM", "MIM"};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(c.schedule.attacks[i].name, expected[i]);
    EXPECT_EQ(c.variant(), Variant::AdrCrs);
    EXPECT_EQ(c.schedule.initial.epochs, 10u);
    EXPECT_EQ(c.schedule.stages[0].epochs, 10u);
    EXPECT_EQ(c.schedule.stages[0].learning_rate, 0.01);
    EXPECT_EQ(c.schedule.batch_size, 8u);
    EXPECT_EQ(c.schedule.adr.capacity, 1000u);
    EXPECT_EQ(c.schedule.adr.views, 8u);
    EXPECT_EQ(c.data.classes, 10u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(Config, ParsesSectionsFractionsAndComments) {
    const RunConfig c = parse_config(R"(
# two-stage run
[run]
seed = 7
seeds = 4, 5
out = runs/x   ; trailing text is part of the value

[model]
hidden = 32, 16

[crs]
lambda = 0.5
tau = 1/4
enabled = off

[stage.0]
epochs = 2
lr = 0.1

[stage.1]
attack = PGD
epsilon = 4/255
alpha = 1/255
steps = 7
epochs = 3

[stage.2]
attack = vmim
)");
    EXPECT_EQ(c.schedule.seed, 7u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
    EXPECT_EQ(c.out_dir, "runs/x   ; trailing text is part of the value");
    EXPECT_EQ(c.schedule.hidden, (std::vector<std::size_t>{32, 16}));
    EXPECT_EQ(c.schedule.crs.tau, 0.25);
    EXPECT_EQ(c.schedule.crs.lambda, 0.5);
    EXPECT_EQ(c.variant(), Variant::Adr);
    EXPECT_EQ(c.schedule.initial.epochs, 2u);
    ASSERT_EQ(c.schedule.stage_count(), 2u);
    EXPECT_EQ(c.schedule.attacks[0].epsilon, 4.0 / 255.0);
    EXPECT_EQ(c.schedule.attacks[0].alpha, 1.0 / 255.0);
    EXPECT_EQ(c.schedule.attacks[0].steps, 7u);
    EXPECT_EQ(c.schedule.stages[0].epochs, 3u);
    EXPECT_EQ(c.schedule.attacks[1].family, AttackFamily::MIM);
    EXPECT_EQ(c.schedule.attacks[1].name, "VMIM");
}

TEST(Config, SwitchesMapToVariants) {
    const std::pair<const char*, Variant> cases[] = {
        {"[adr]\nenabled = false\n[crs]\nenabled = false\n", Variant::Baseline},
        {"[adr]\nenabled = false\n", Variant::Crs},
        {"[crs]\nenabled = false\n", Variant::Adr},
        {"", Variant::AdrCrs},
    };
    for (const auto& [text, v] : cases) EXPECT_EQ(parse_config(text).variant(), v) << text;
}

TEST(Config, RoundTripsThroughCanonicalText) {
    const RunConfig c = parse_config("[run]\nseed = 3\n[crs]\ntau = 1/3\n[stage.0]\nepochs = 1\n[stage.1]\nattack = MIM\n"
                                     "epsilon = 16/255\n[stage.2]\nattack = FGSM\nlr = 0.02\n");
    const std::string text = to_text(c);
    const RunConfig back = parse_config(text);
    EXPECT_EQ(to_text(back), text);
    EXPECT_EQ(back.schedule.crs.tau, c.schedule.crs.tau);
    EXPECT_EQ(back.schedule.attacks[0].epsilon, 16.0 / 255.0);
    EXPECT_EQ(back.schedule.stages[1].learning_rate, 0.02);
}

TEST(Config, ErrorsNameTheLine) {
    auto message = [](const std::string& text) {
        try {
            parse_config(text, "cfg");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("[run]\nseed = 1\nsed = 2\n").find("cfg:3"), std::string::npos);
    EXPECT_NE(message("[run]\nseed = -1\n").find("cfg:2"), std::string::npos);
    EXPECT_NE(message("[nope]\n").find("unknown section"), std::string::npos);
    EXPECT_NE(message("seed = 1\n").find("outside"), std::string::npos);
    EXPECT_NE(message("[run]\nseed\n").find("key = value"), std::string::npos);
    EXPECT_NE(message("[run]\nseed = 1\nseed = 2\n").find("repeated"), std::string::npos);
    EXPECT_NE(message("[stage.0]\n[stage.2]\nattack = PGD\n").find("without gaps"), std::string::npos);
    EXPECT_NE(message("[stage.0]\n[stage.1]\nepochs = 1\n").find("needs an 'attack'"), std::string::npos);
    EXPECT_NE(message("[stage.0]\n[stage.1]\nattack = PGD\nepsilon = 1/0\n").find("divides by zero"),
              std::string::npos);
    EXPECT_NE(message("[stage.0]\n[stage.1]\nattack = PGD\n[stage.2]\nattack = PGD\n").find("twice"),
              std::string::npos);
    EXPECT_NE(message("[crs]\ntau = 0\n").find("temperature"), std::string::npos);
    EXPECT_NE(message("[crs]\nenabled = maybe\n").find("boolean"), std::string::npos);
    EXPECT_NE(message("[run]\nseeds = 1, x\n").find("integer"), std::string::npos);
    EXPECT_NE(message("[data]\ncifar_train = a.bin\n").find("together"), std::string::npos);
}

TEST(Config, MissingFileIsIoError) {
    EXPECT_THROW(load_config("/nonexistent/sseat.cfg"), IoError);
}
