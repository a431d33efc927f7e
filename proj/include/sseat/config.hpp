#pragma once

// Run configuration files. Grammar, one item per line:
//
//   line     := blank | comment | section | entry
//   comment  := ('#' | ';') any
//   section  := '[' name ('.' index)? ']'
//   entry    := key '=' value
//   value    := number | fraction | bool | word | list
//   fraction := number '/' number          e.g. 8/255
//   list     := value (',' value)*
//
// Sections: run, data, model, optim, adr, crs, and stage.N for N = 0..T with
// no gaps. Unknown sections or keys are errors, and a key may appear once per
// section. Everything not given keeps its default.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "trainer.hpp"

namespace sseat {

struct RunConfig {
    CdsSchedule schedule;
    DataOptions data;
    std::string out_dir = "run";
    std::vector<std::uint64_t> seeds{1, 2, 3}; // used by ablate
    std::string cifar_train; // optional CIFAR-10 batches replacing the synthetic sets
    std::string cifar_test;

    Variant variant() const { return schedule.variant(); }
};

/// The five-stage toy schedule FGSM, BIM, PGD, RFGSM, MIM.
inline RunConfig default_config() {
    RunConfig c;
    for (const char* name : {"FGSM", "BIM", "PGD", "RFGSM", "MIM"}) {
        c.schedule.attacks.push_back(AttackSpec::named(name));
        c.schedule.stages.push_back(StageConfig{});
    }
    return c;
}

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

struct Entry {
    std::string value;
    int line = 0;
};

using Section = std::map<std::string, Entry>;

class Reader {
public:
    Reader(const std::string& source, const std::string& section, Section& entries)
        : source_(source), section_(section), entries_(entries) {}

    /// Fails on keys that no getter consumed.
    void finish() const {
        for (const auto& [key, e] : entries_)
            if (!used_.count(key)) fail(e.line, "unknown key '" + key + "' in [" + section_ + "]");
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::optional<std::string> text(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        used_[key] = true;
        return it->second.value;
    }

    void get(const std::string& key, std::string& out) {
        if (auto v = text(key)) out = *v;
    }

    void get(const std::string& key, double& out) {
        if (auto v = text(key)) out = number(key, *v);
    }

    void get(const std::string& key, std::size_t& out) {
        if (auto v = text(key)) out = count(key, *v);
    }

    void get(const std::string& key, int& out) {
        if (auto v = text(key)) {
            const std::size_t n = count(key, *v);
            if (n > static_cast<std::size_t>(std::numeric_limits<int>::max()))
                fail(line(key), "'" + key + "' is too large");
            out = static_cast<int>(n);
        }
    }

    void get(const std::string& key, bool& out) {
        if (auto v = text(key)) {
            if (*v == "true" || *v == "on" || *v == "yes" || *v == "1") out = true;
            else if (*v == "false" || *v == "off" || *v == "no" || *v == "0") out = false;
            else fail(line(key), "'" + key + "' expects a boolean, got '" + *v + "'");
        }
    }

    void get(const std::string& key, std::vector<std::size_t>& out) {
        if (auto v = text(key)) {
            out.clear();
            for (const auto& item : split_list(*v)) out.push_back(count(key, item));
        }
    }

    void get(const std::string& key, std::vector<std::string>& out) {
        if (auto v = text(key)) out = split_list(*v);
    }

    double number(const std::string& key, const std::string& v) const {
        const auto slash = v.find('/');
        if (slash != std::string::npos) {
            const double num = parse_double(key, trim(v.substr(0, slash)));
            const double den = parse_double(key, trim(v.substr(slash + 1)));
            if (den == 0.0) fail(line(key), "'" + key + "' divides by zero");
            return num / den;
        }
        return parse_double(key, v);
    }

    std::size_t count(const std::string& key, const std::string& v) const {
        std::size_t pos = 0;
        unsigned long long n = 0;
        try {
            if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
            n = std::stoull(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size()) fail(line(key), "'" + key + "' expects a non-negative integer, got '" + v + "'");
        return static_cast<std::size_t>(n);
    }

    [[noreturn]] void fail(int line, const std::string& msg) const {
        throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
    }

    int line(const std::string& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? 0 : it->second.line;
    }

private:
    double parse_double(const std::string& key, const std::string& v) const {
        std::size_t pos = 0;
        double d = 0.0;
        try {
            d = std::stod(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size()) fail(line(key), "'" + key + "' expects a number, got '" + v + "'");
        return d;
    }

    std::string source_;
    std::string section_;
    Section& entries_;
    std::map<std::string, bool> used_;
};

inline std::vector<AugmentationSpec> augmentations(const std::vector<std::string>& names) {
    std::vector<AugmentationSpec> out;
    for (const auto& n : names) out.push_back(AugmentationSpec::named(n));
    return out;
}

inline std::string join_augmentations(const std::vector<AugmentationSpec>& pool) {
    std::string out;
    for (const auto& a : pool) out += (out.empty() ? "" : ", ") + a.name();
    return out;
}

/// Shortest %g form that parses back to the same double.
inline std::string fmt(double v) {
    char buf[40];
    for (int digits = 1; digits <= 17; ++digits) {
        std::snprintf(buf, sizeof buf, "%.*g", digits, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (const auto& x : v) out += (out.empty() ? "" : ", ") + std::to_string(x);
    return out;
}

/// Built-in augmentations carry fixed magnitudes; only names are configurable.
inline void check_builtin(const std::vector<AugmentationSpec>& pool, const char* what) {
    for (const auto& a : pool) {
        const AugmentationSpec ref = AugmentationSpec::named(a.name());
        if (a.brightness != ref.brightness || a.contrast != ref.contrast || a.shear_degrees != ref.shear_degrees ||
            a.cutout_side != ref.cutout_side)
            throw ConfigError(std::string("config: ") + what + " augmentation '" + a.name() +
                              "' has non-default magnitude and cannot be written");
    }
}

} // namespace config_detail

/// Parses configuration text on top of default_config(). Stage sections
/// replace the default schedule as a whole when any is present.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
    using namespace config_detail;
    std::map<std::string, Section> sections;
    std::map<std::string, int> section_lines;
    std::vector<std::string> order;
    std::string current;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    auto fail = [&](int l, const std::string& msg) { throw ConfigError(source + ":" + std::to_string(l) + ": " + msg); };
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(lineno, "unterminated section header");
            current = trim(line.substr(1, line.size() - 2));
            if (current.empty()) fail(lineno, "empty section name");
            if (sections.count(current)) fail(lineno, "section [" + current + "] appears twice");
            sections[current];
            section_lines[current] = lineno;
            order.push_back(current);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(lineno, "expected 'key = value'");
        if (current.empty()) fail(lineno, "entry outside of any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(lineno, "missing key");
        if (value.empty()) fail(lineno, "missing value for '" + key + "'");
        auto& sec = sections[current];
        if (sec.count(key)) fail(lineno, "key '" + key + "' repeated in [" + current + "]");
        sec[key] = Entry{value, lineno};
    }

    RunConfig cfg = default_config();
    CdsSchedule& s = cfg.schedule;
    std::map<std::size_t, std::string> stage_sections;
    for (const auto& name : order) {
        if (name.rfind("stage.", 0) == 0) {
            Reader probe(source, name, sections[name]);
            const std::size_t idx = probe.count("stage index", name.substr(6));
            stage_sections[idx] = name;
        } else if (name != "run" && name != "data" && name != "model" && name != "optim" && name != "adr" &&
                   name != "crs") {
            fail(section_lines[name], "unknown section [" + name + "]");
        }
    }

    auto with = [&](const std::string& name, auto&& body) {
        auto it = sections.find(name);
        if (it == sections.end()) return;
        Reader r(source, name, it->second);
        body(r);
        r.finish();
    };

    with("run", [&](Reader& r) {
        if (auto v = r.text("seed")) s.seed = r.count("seed", *v);
        if (auto v = r.text("seeds")) {
            cfg.seeds.clear();
            for (const auto& item : split_list(*v)) cfg.seeds.push_back(r.count("seeds", item));
        }
        r.get("out", cfg.out_dir);
    });
    with("data", [&](Reader& r) {
        r.get("classes", cfg.data.classes);
        r.get("train_per_class", cfg.data.train_per_class);
        r.get("test_per_class", cfg.data.test_per_class);
        r.get("noise", cfg.data.synthetic.noise);
        r.get("background", cfg.data.synthetic.background);
        r.get("contrast", cfg.data.synthetic.contrast);
        r.get("cifar_train", cfg.cifar_train);
        r.get("cifar_test", cfg.cifar_test);
    });
    with("model", [&](Reader& r) { r.get("hidden", s.hidden); });
    with("optim", [&](Reader& r) {
        r.get("momentum", s.momentum);
        r.get("weight_decay", s.weight_decay);
        r.get("batch_size", s.batch_size);
        std::vector<std::string> names;
        r.get("augmentations", names);
        if (!names.empty()) s.train_augmentations = augmentations(names);
    });
    with("adr", [&](Reader& r) {
        r.get("enabled", s.adr.enabled);
        r.get("views", s.adr.views);
        r.get("capacity", s.adr.capacity);
        std::vector<std::string> names;
        r.get("augmentations", names);
        if (!names.empty()) s.adr.pool = augmentations(names);
    });
    with("crs", [&](Reader& r) {
        r.get("enabled", s.crs_enabled);
        r.get("lambda", s.crs.lambda);
        r.get("tau", s.crs.tau);
        std::string inner;
        r.get("inner", inner);
        if (!inner.empty()) {
            const AttackSpec named = AttackSpec::named(inner);
            s.crs.inner.family = named.family;
            s.crs.inner.name = named.name;
            s.crs.inner.steps = named.steps;
            s.crs.inner.random_start = named.random_start;
            s.crs.inner.momentum_decay = named.momentum_decay;
        }
        r.get("inner_steps", s.crs.inner.steps);
    });

    if (!stage_sections.empty()) {
        std::size_t expect = 0;
        for (const auto& [idx, name] : stage_sections) {
            if (idx != expect)
                fail(section_lines[name], "stage sections must be numbered 0, 1, 2, ... without gaps; found [" + name +
                                              "] after stage " + std::to_string(expect == 0 ? 0 : expect - 1));
            ++expect;
        }
        s.attacks.clear();
        s.stages.clear();
        for (const auto& [idx, name] : stage_sections) {
            with(name, [&](Reader& r) {
                if (idx == 0) {
                    r.get("epochs", s.initial.epochs);
                    r.get("lr", s.initial.learning_rate);
                    return;
                }
                std::string attack;
                r.get("attack", attack);
                if (attack.empty()) r.fail(section_lines[name], "[" + name + "] needs an 'attack'");
                AttackSpec a = AttackSpec::named(attack);
                r.get("epsilon", a.epsilon);
                r.get("alpha", a.alpha);
                r.get("steps", a.steps);
                r.get("momentum", a.momentum_decay);
                r.get("random_start", a.random_start);
                StageConfig st;
                r.get("epochs", st.epochs);
                r.get("lr", st.learning_rate);
                s.attacks.push_back(a);
                s.stages.push_back(st);
            });
        }
    }
    if (cfg.seeds.empty()) throw ConfigError(source + ": 'seeds' must list at least one seed");
    if (cfg.cifar_train.empty() != cfg.cifar_test.empty())
        throw ConfigError(source + ": cifar_train and cifar_test must be given together");
    s.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path);
}

/// Canonical text form; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& c) {
    using config_detail::fmt;
    using config_detail::join;
    const CdsSchedule& s = c.schedule;
    config_detail::check_builtin(s.train_augmentations, "training");
    config_detail::check_builtin(s.adr.pool, "replay");
    std::ostringstream o;
    o << "# variant: " << variant_name(c.variant()) << "\n";
    o << "[run]\nseed = " << s.seed << "\nseeds = " << join(c.seeds) << "\nout = " << c.out_dir << "\n\n";
    o << "[data]\nclasses = " << c.data.classes << "\ntrain_per_class = " << c.data.train_per_class
      << "\ntest_per_class = " << c.data.test_per_class << "\nnoise = " << fmt(c.data.synthetic.noise)
      << "\nbackground = " << fmt(c.data.synthetic.background) << "\ncontrast = " << fmt(c.data.synthetic.contrast)
      << "\n";
    if (!c.cifar_train.empty()) o << "cifar_train = " << c.cifar_train << "\ncifar_test = " << c.cifar_test << "\n";
    o << "\n[model]\nhidden = " << join(s.hidden) << "\n\n";
    o << "[optim]\nmomentum = " << fmt(s.momentum) << "\nweight_decay = " << fmt(s.weight_decay)
      << "\nbatch_size = " << s.batch_size
      << "\naugmentations = " << config_detail::join_augmentations(s.train_augmentations) << "\n\n";
    o << "[adr]\nenabled = " << (s.adr.enabled ? "true" : "false") << "\nviews = " << s.adr.views
      << "\ncapacity = " << s.adr.capacity << "\naugmentations = " << config_detail::join_augmentations(s.adr.pool)
      << "\n\n";
    o << "[crs]\nenabled = " << (s.crs_enabled ? "true" : "false") << "\nlambda = " << fmt(s.crs.lambda)
      << "\ntau = " << fmt(s.crs.tau) << "\ninner = " << family_name(s.crs.inner.family)
      << "\ninner_steps = " << s.crs.inner.steps << "\n\n";
    o << "[stage.0]\nepochs = " << s.initial.epochs << "\nlr = " << fmt(s.initial.learning_rate) << "\n";
    for (std::size_t t = 0; t < s.attacks.size(); ++t) {
        const AttackSpec& a = s.attacks[t];
        o << "\n[stage." << t + 1 << "]\nattack = " << a.name << "\nepsilon = " << fmt(a.epsilon)
          << "\nalpha = " << fmt(a.alpha) << "\nsteps = " << a.steps << "\nmomentum = " << fmt(a.momentum_decay)
          << "\nrandom_start = " << (a.random_start ? "true" : "false") << "\nepochs = " << s.stages[t].epochs
          << "\nlr = " << fmt(s.stages[t].learning_rate) << "\n";
    }
    return o.str();
}

} // namespace sseat
