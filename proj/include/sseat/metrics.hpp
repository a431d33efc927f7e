#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "classifier.hpp"
#include "dataset.hpp"
#include "error.hpp"

namespace sseat {

using json = nlohmann::ordered_json;

/// Named accuracies in stage order.
using AccuracyList = std::vector<std::pair<std::string, double>>;

inline double find_accuracy(const AccuracyList& list, const std::string& name) {
    for (const auto& [n, a] : list)
        if (n == name) return a;
    throw ShapeError("no accuracy recorded for '" + name + "'");
}

/// Fraction of argmax-correct predictions.
inline double accuracy(const Classifier& model, const Dataset& data, std::size_t chunk = 500) {
    if (data.empty()) throw ShapeError("accuracy: empty test set '" + data.name + "'");
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
        const auto pred = model.predict(data.batch(idx));
        for (std::size_t r = 0; r < idx.size(); ++r) correct += pred[r] == data.labels[idx[r]];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct StageReport {
    int stage = 0;
    int teacher_tag = -1;
    AccuracyList attack_accuracy; // every test attack, after this stage
    double clean_accuracy = 0.0;
    std::vector<double> epoch_loss;    // mean objective per epoch
    std::vector<double> epoch_adv;     // mean adversarial cross-entropy per epoch
    std::vector<double> epoch_js;      // mean consistency term per epoch (0 when unused)
    std::map<int, std::size_t> buffer_histogram; // replay buffer selected at the end of the stage
    std::vector<int> trained_sources;  // source stages of every example trained on

    friend bool operator==(const StageReport&, const StageReport&) = default;
};

struct EvaluationReport {
    AccuracyList attack_accuracy;
    double clean_accuracy = 0.0;
    AccuracyList forgetting; // per attack stage: best-ever minus final accuracy
    std::vector<std::uint64_t> seeds;
    double runtime_seconds = 0.0; // not serialized, so report files stay reproducible

    friend bool operator==(const EvaluationReport& a, const EvaluationReport& b) {
        return a.attack_accuracy == b.attack_accuracy && a.clean_accuracy == b.clean_accuracy &&
               a.forgetting == b.forgetting && a.seeds == b.seeds;
    }
};

struct NamedSet {
    std::string name;
    const Dataset* data;
};

inline EvaluationReport evaluate(const Classifier& model, std::span<const NamedSet> test_sets, const Dataset& clean) {
    EvaluationReport r;
    for (const auto& s : test_sets) r.attack_accuracy.emplace_back(s.name, accuracy(model, *s.data));
    r.clean_accuracy = accuracy(model, clean);
    return r;
}

/// For stage s >= 1: max over reports from stage s onward of the accuracy on
/// stage s's test attack, minus its accuracy in the last report.
inline AccuracyList forgetting_profile(std::span<const StageReport> reports,
                                       std::span<const std::string> stage_attacks) {
    AccuracyList out;
    if (reports.size() < 2) return out;
    const StageReport& last = reports.back();
    for (std::size_t s = 1; s <= stage_attacks.size(); ++s) {
        const std::string& name = stage_attacks[s - 1];
        double best = -1.0;
        for (const auto& r : reports)
            if (r.stage >= static_cast<int>(s)) best = std::max(best, find_accuracy(r.attack_accuracy, name));
        if (best < 0.0) continue;
        out.emplace_back(name, best - find_accuracy(last.attack_accuracy, name));
    }
    return out;
}

inline double mean_value(const AccuracyList& list) {
    if (list.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [n, v] : list) s += v;
    return s / static_cast<double>(list.size());
}

// --- serialization ---------------------------------------------------------

inline json to_json(const AccuracyList& list) {
    json j = json::object();
    for (const auto& [n, v] : list) j[n] = v;
    return j;
}

inline AccuracyList accuracy_list_from_json(const json& j) {
    AccuracyList out;
    for (auto it = j.begin(); it != j.end(); ++it) out.emplace_back(it.key(), it.value().get<double>());
    return out;
}

inline json to_json(const StageReport& r) {
    json hist = json::object();
    for (const auto& [stage, count] : r.buffer_histogram) hist[std::to_string(stage)] = count;
    return json{{"stage", r.stage},
                {"teacher", r.teacher_tag},
                {"attack_accuracy", to_json(r.attack_accuracy)},
                {"clean_accuracy", r.clean_accuracy},
                {"epoch_loss", r.epoch_loss},
                {"epoch_adv", r.epoch_adv},
                {"epoch_js", r.epoch_js},
                {"buffer_histogram", hist},
                {"trained_sources", r.trained_sources}};
}

inline StageReport stage_report_from_json(const json& j) {
    StageReport r;
    r.stage = j.at("stage").get<int>();
    r.teacher_tag = j.at("teacher").get<int>();
    r.attack_accuracy = accuracy_list_from_json(j.at("attack_accuracy"));
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    r.epoch_adv = j.at("epoch_adv").get<std::vector<double>>();
    r.epoch_js = j.at("epoch_js").get<std::vector<double>>();
    for (auto it = j.at("buffer_histogram").begin(); it != j.at("buffer_histogram").end(); ++it)
        r.buffer_histogram[std::stoi(it.key())] = it.value().get<std::size_t>();
    r.trained_sources = j.at("trained_sources").get<std::vector<int>>();
    return r;
}

inline json to_json(const EvaluationReport& r) {
    return json{{"attack_accuracy", to_json(r.attack_accuracy)},
                {"clean_accuracy", r.clean_accuracy},
                {"forgetting", to_json(r.forgetting)},
                {"seeds", r.seeds}};
}

inline EvaluationReport evaluation_report_from_json(const json& j) {
    EvaluationReport r;
    r.attack_accuracy = accuracy_list_from_json(j.at("attack_accuracy"));
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.forgetting = accuracy_list_from_json(j.at("forgetting"));
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return r;
}

/// One table row: a label, accuracies per attack column, and clean accuracy.
struct TableRow {
    std::string label;
    AccuracyList attack_accuracy;
    double clean_accuracy = 0.0;
};

/// Fixed-width text table, accuracies in percent with two decimals:
///
///   Method         | FGSM   BIM    ... | Clean
///   ---------------+-------------------+-------
///   SSEAT          | 74.86  76.53  ... | 82.92
inline std::string format_table(std::span<const TableRow> rows) {
    if (rows.empty()) return {};
    std::size_t label_w = 6;
    for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
    std::vector<std::string> cols;
    for (const auto& [n, v] : rows.front().attack_accuracy) cols.push_back(n);
    std::vector<std::size_t> widths;
    for (const auto& c : cols) widths.push_back(std::max<std::size_t>(c.size(), 6));

    auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
        return std::string(buf);
    };

    std::string out = pad("Method", label_w) + " |";
    std::size_t body = 0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out += " " + pad(cols[i], widths[i]);
        body += widths[i] + 1;
    }
    out += " | Clean\n";
    out += std::string(label_w + 1, '-') + "+" + std::string(body + 1, '-') + "+-------\n";
    for (const auto& r : rows) {
        out += pad(r.label, label_w) + " |";
        for (std::size_t i = 0; i < cols.size(); ++i)
            out += " " + pad(pct(find_accuracy(r.attack_accuracy, cols[i])), widths[i]);
        out += " | " + pct(r.clean_accuracy) + "\n";
    }
    return out;
}

} // namespace sseat
