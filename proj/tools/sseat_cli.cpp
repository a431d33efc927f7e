// Command-line front end: gen-data, train, eval, ablate.
//
// Run directory layout (all under --out):
//   config.cfg                    resolved configuration of the last command
//   data/clean-{train,test}.ds    clean sets
//   data/stageN-NAME-test.ds      black-box test attacks (against the surrogate)
//   data/stageN-NAME-train.ds     training attacks, written by train as stage N starts
//   data/surrogate.ckpt           the surrogate used for the test attacks
//   stage-N/{model.ckpt,buffer.bin,buffer.txt,report.json}
//   final.ckpt, reports.json, train.log
//   eval.json, eval.txt           from eval
//   ablation.json, ablation.txt   from ablate

#include <CLI11.hpp>

#include <sseat/sseat.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace sseat;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    int stage = 0;
    std::string checkpoint;
};

RunConfig resolve(const Options& o) {
    RunConfig c = o.config.empty() ? default_config() : load_config(o.config);
    if (o.seed) {
        c.schedule.seed = *o.seed;
        c.seeds = {*o.seed};
    }
    if (!o.out.empty()) c.out_dir = o.out;
    c.schedule.validate();
    return c;
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + p.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed: " + p.string());
}

void freeze_config(const RunConfig& c) { write_text(fs::path(c.out_dir) / "config.cfg", to_text(c)); }

fs::path data_dir(const RunConfig& c) { return fs::path(c.out_dir) / "data"; }

fs::path stage_dir(const RunConfig& c, int t) { return fs::path(c.out_dir) / ("stage-" + std::to_string(t)); }

fs::path set_path(const RunConfig& c, std::size_t stage, const AttackSpec& a, Split split) {
    return data_dir(c) / (stage_set_name(stage, a, split) + ".ds");
}

std::vector<fs::path> gen_data_outputs(const RunConfig& c) {
    std::vector<fs::path> out{data_dir(c) / "clean-train.ds", data_dir(c) / "clean-test.ds",
                              data_dir(c) / "surrogate.ckpt"};
    for (std::size_t t = 0; t < c.schedule.stage_count(); ++t)
        out.push_back(set_path(c, t + 1, c.schedule.attacks[t], Split::Test));
    return out;
}

CdsData clean_sets(const RunConfig& c) {
    if (c.cifar_train.empty()) return synthetic_clean_data(c.schedule, c.data);
    CdsData d;
    d.clean_train = load_cifar10_batch(c.cifar_train);
    d.clean_test = load_cifar10_batch(c.cifar_test);
    d.clean_train.split = Split::Train;
    d.clean_test.split = Split::Test;
    return d;
}

int gen_data(const RunConfig& c, bool force) {
    const auto outputs = gen_data_outputs(c);
    if (!force)
        for (const auto& p : outputs)
            if (fs::exists(p)) {
                std::cerr << "error: " << p.string() << " exists; pass --force to overwrite\n";
                return kIo;
            }
    CdsData d = clean_sets(c);
    const Classifier surrogate = train_surrogate(c.schedule, d.clean_train);
    const auto stages =
        materialize_attack_sets(c.schedule.attacks, surrogate, d.clean_test, derive_seed(c.schedule.seed, "attack-sets"));
    fs::create_directories(data_dir(c));
    save_dataset(outputs[0].string(), d.clean_train);
    save_dataset(outputs[1].string(), d.clean_test);
    save_checkpoint(outputs[2].string(), surrogate);
    for (std::size_t t = 0; t < stages.size(); ++t) save_dataset(outputs[3 + t].string(), stages[t].test);
    freeze_config(c);
    std::cout << "wrote " << outputs.size() << " files to " << data_dir(c).string() << "\n";
    return kOk;
}

/// Clean sets and test attacks from the data directory. Training attacks are
/// left to the trainer, which crafts each against the preceding snapshot.
CdsData load_data(const RunConfig& c) {
    CdsData d;
    d.clean_train = load_dataset((data_dir(c) / "clean-train.ds").string());
    d.clean_test = load_dataset((data_dir(c) / "clean-test.ds").string());
    for (std::size_t t = 0; t < c.schedule.stage_count(); ++t) {
        StageSets s;
        s.attack = c.schedule.attacks[t];
        s.test = load_dataset(set_path(c, t + 1, s.attack, Split::Test).string());
        d.stages.push_back(std::move(s));
    }
    return d;
}

std::string log_line(const TrainingEvent& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "stage %d epoch %zu %-7s batches %3zu loss %.6f adv %.6f js %.6f", e.stage, e.epoch,
                  e.phase.c_str(), e.batches, e.loss, e.adv, e.js);
    return buf;
}

int train(const RunConfig& c, const Options& o) {
    const fs::path final_ckpt = fs::path(c.out_dir) / "final.ckpt";
    if (o.stage == 0 && !o.force && fs::exists(final_ckpt)) {
        std::cerr << "error: " << final_ckpt.string() << " exists; pass --force to overwrite or --stage to resume\n";
        return kIo;
    }
    if (o.stage < 0 || o.stage > static_cast<int>(c.schedule.stage_count()))
        throw ConfigError("--stage must be between 0 and " + std::to_string(c.schedule.stage_count()));
    const CdsData data = load_data(c);

    std::optional<ResumePoint> resume;
    if (o.stage > 0) {
        const fs::path prev = stage_dir(c, o.stage - 1);
        ResumePoint rp;
        rp.start_stage = o.stage;
        rp.model = load_checkpoint((prev / "model.ckpt").string());
        rp.buffer = load_buffer((prev / "buffer.bin").string());
        for (int t = 0; t < o.stage; ++t) {
            const fs::path p = stage_dir(c, t) / "report.json";
            std::ifstream is(p);
            if (!is) throw IoError("cannot open stage report " + p.string());
            try {
                rp.reports.push_back(stage_report_from_json(json::parse(is)));
            } catch (const json::exception& e) {
                throw IoError(p.string() + ": " + e.what());
            }
        }
        resume = std::move(rp);
    }
    freeze_config(c);
    std::ofstream log_file(fs::path(c.out_dir) / "train.log", o.stage > 0 ? std::ios::app : std::ios::trunc);
    const TrainingLogger log = [&](const TrainingEvent& e) {
        const std::string line = log_line(e);
        std::cerr << line << "\n";
        log_file << line << "\n";
    };
    const auto on_stage = [&](const StageOutcome& out) {
        const int t = out.report.stage;
        const fs::path dir = stage_dir(c, t);
        fs::create_directories(dir);
        save_checkpoint((dir / "model.ckpt").string(), out.model);
        save_buffer((dir / "buffer.bin").string(), out.buffer);
        std::ostringstream dump;
        write_buffer_dump(dump, out.buffer);
        write_text(dir / "buffer.txt", dump.str());
        write_text(dir / "report.json", to_json(out.report).dump(2) + "\n");
        if (t > 0) save_dataset(set_path(c, t, c.schedule.attacks[t - 1], Split::Train).string(), out.attack_train);
        char line[128];
        std::snprintf(line, sizeof line, "stage %d done: clean %.4f, buffer %zu", t, out.report.clean_accuracy,
                      out.buffer.size());
        std::cout << line << std::endl;
    };
    const ScheduleResult r = run_schedule(c.schedule, data, resume, on_stage, log);
    save_checkpoint(final_ckpt.string(), r.final_model);
    json all = json::array();
    for (const auto& rep : r.reports) all.push_back(to_json(rep));
    write_text(fs::path(c.out_dir) / "reports.json", all.dump(2) + "\n");
    std::cout << "variant " << variant_name(c.variant()) << ", final checkpoint " << final_ckpt.string() << "\n";
    return kOk;
}

int eval(const RunConfig& c, const Options& o) {
    const fs::path ckpt = o.checkpoint.empty() ? fs::path(c.out_dir) / "final.ckpt" : fs::path(o.checkpoint);
    const Classifier model = load_checkpoint(ckpt.string());
    const CdsData data = load_data(c);
    const auto sets = data.test_sets();
    EvaluationReport rep = evaluate(model, sets, data.clean_test);
    rep.seeds = {c.schedule.seed};
    const fs::path reports = fs::path(c.out_dir) / "reports.json";
    if (o.checkpoint.empty() && fs::exists(reports)) {
        std::ifstream is(reports);
        std::vector<StageReport> history;
        try {
            for (const auto& j : json::parse(is)) history.push_back(stage_report_from_json(j));
        } catch (const json::exception& e) {
            throw IoError(reports.string() + ": " + e.what());
        }
        rep.forgetting = forgetting_profile(history, data.attack_names());
    }
    const TableRow row{variant_name(c.variant()), rep.attack_accuracy, rep.clean_accuracy};
    const std::string table = format_table(std::span<const TableRow>(&row, 1));
    write_text(fs::path(c.out_dir) / "eval.json", to_json(rep).dump(2) + "\n");
    write_text(fs::path(c.out_dir) / "eval.txt", table);
    std::cout << table;
    return kOk;
}

int ablate(const RunConfig& c) {
    const auto start = std::chrono::steady_clock::now();
    const Variant variants[] = {Variant::Baseline, Variant::Crs, Variant::Adr, Variant::AdrCrs};
    std::vector<TableRow> rows;
    json out = json::object();
    json per_seed = json::array();
    std::vector<std::string> names;
    for (const auto& a : c.schedule.attacks) names.push_back(a.name);
    for (Variant v : variants) {
        TableRow row{variant_name(v), {}, 0.0};
        for (const auto& n : names) row.attack_accuracy.emplace_back(n, 0.0);
        double forgetting = 0.0;
        for (std::uint64_t seed : c.seeds) {
            CdsSchedule s = c.schedule;
            s.seed = seed;
            s.set_variant(v);
            RunConfig rc = c;
            rc.schedule = s;
            CdsData data = clean_sets(rc);
            const Classifier surrogate = train_surrogate(s, data.clean_train);
            data.stages =
                materialize_attack_sets(s.attacks, surrogate, data.clean_test, derive_seed(seed, "attack-sets"));
            const ScheduleResult r = run_schedule(s, data);
            const StageReport& last = r.reports.back();
            for (std::size_t i = 0; i < names.size(); ++i)
                row.attack_accuracy[i].second += find_accuracy(last.attack_accuracy, names[i]);
            row.clean_accuracy += last.clean_accuracy;
            const double f = mean_value(forgetting_profile(r.reports, names));
            forgetting += f;
            per_seed.push_back(json{{"variant", variant_name(v)},
                                    {"seed", seed},
                                    {"attack_accuracy", to_json(last.attack_accuracy)},
                                    {"clean_accuracy", last.clean_accuracy},
                                    {"mean_forgetting", f}});
            std::cerr << variant_name(v) << " seed " << seed << " done\n";
        }
        const double n = static_cast<double>(c.seeds.size());
        for (auto& [name, acc] : row.attack_accuracy) acc /= n;
        row.clean_accuracy /= n;
        out[row.label] = json{{"attack_accuracy", to_json(row.attack_accuracy)},
                              {"clean_accuracy", row.clean_accuracy},
                              {"mean_forgetting", forgetting / n}};
        rows.push_back(row);
    }
    const std::string table = format_table(rows);
    write_text(fs::path(c.out_dir) / "ablation.json",
               json{{"seeds", c.seeds}, {"mean", out}, {"runs", per_seed}}.dump(2) + "\n");
    write_text(fs::path(c.out_dir) / "ablation.txt", table);
    freeze_config(c);
    std::cout << table;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "ablation grid took " << static_cast<long>(secs) << " s\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual adversarial training experiments"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "master seed, overrides the config");
        sub->add_option("--out", o.out, "run directory, overrides the config");
    };
    CLI::App* gen = app.add_subcommand("gen-data", "write clean and test attack datasets");
    common(gen);
    gen->add_flag("--force", o.force, "overwrite existing files");
    CLI::App* tr = app.add_subcommand("train", "run the staged schedule");
    common(tr);
    tr->add_flag("--force", o.force, "overwrite a finished run");
    tr->add_option("--stage", o.stage, "resume at this stage from the previous stage's stored outputs");
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test sets");
    common(ev);
    ev->add_option("--checkpoint", o.checkpoint, "checkpoint file, default the run's final.ckpt");
    CLI::App* ab = app.add_subcommand("ablate", "four-variant grid over the configured seeds");
    common(ab);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }
    for (CLI::App* sub : {gen, tr, ev, ab})
        if (sub->count("--seed")) o.seed = seed;

    try {
        const RunConfig c = resolve(o);
        if (gen->parsed()) return gen_data(c, o.force);
        if (tr->parsed()) return train(c, o);
        if (ev->parsed()) return eval(c, o);
        return ablate(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    }
}
