#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memodetector/data/manifest.hpp"
#include "memodetector/enhance/cache.hpp"
#include "memodetector/io/csv.hpp"
#include "memodetector/train/checkpoint.hpp"
#include "memodetector/train/config.hpp"
#include "memodetector/train/metrics.hpp"
#include "memodetector/train/trainer.hpp"

namespace memodetector::train {

/// A named configuration inside a sweep.
struct Experiment {
    std::string name;
    RunConfig config;
};

/// Full model followed by one row per removed component.
inline std::vector<Experiment> ablation_configs(const RunConfig& base) {
    std::vector<Experiment> out{{"full", base}};
    auto df = base;
    df.fusion.variant = fusion::FusionVariant::no_dualstage;
    out.push_back({"w/o DF", df});
    for (auto step : enhance::kChainSteps) {
        auto c = base;
        std::erase(c.steps, step);
        out.push_back({"w/o " + std::string(enhance::to_string(step)), c});
    }
    return out;
}

inline std::vector<Experiment> variant_configs(const RunConfig& base) {
    std::vector<Experiment> out;
    for (auto v : {fusion::FusionVariant::bidirectional_xattn, fusion::FusionVariant::add,
                   fusion::FusionVariant::concat, fusion::FusionVariant::oneway_xattn}) {
        auto c = base;
        c.fusion.variant = v;
        out.push_back({std::string(fusion::to_string(v)), c});
    }
    return out;
}

inline std::vector<Experiment> enhancement_configs(const RunConfig& base) {
    auto chain = base;
    chain.steps.assign(enhance::kChainSteps.begin(), enhance::kChainSteps.end());
    auto direct = base;
    direct.steps = {enhance::Step::DIRECT};
    return {{"four-step", chain}, {"direct", direct}};
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::string checksum;
    Metrics test;
};

struct ExperimentRow {
    std::string name;
    RunConfig config;
    std::string config_hash;
    std::size_t parameter_count = 0;
    std::vector<SeedOutcome> seeds;
    MetricsReport report;
};

/// Results of a sweep; `kind` is train, ablation, variants or enhancement.
struct ExperimentTable {
    std::string kind;
    std::string dataset;
    std::vector<std::string> labels;
    std::vector<ExperimentRow> rows;
};

/// Directory-safe form of an experiment name ("w/o DF" -> "wo_DF").
inline std::string slug(std::string_view name) {
    std::string out;
    for (char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') out += c;
        else if (c == ' ' && !out.empty() && out.back() != '_') out += '_';
    }
    return out.empty() ? "run" : out;
}

inline std::string epoch_log_line(const EpochRecord& r) {
    using io::format_double;
    return "{\"epoch\":" + std::to_string(r.epoch) + ",\"train_loss\":" + format_double(r.train_loss) +
           ",\"train_accuracy\":" + format_double(r.train_accuracy) +
           ",\"val_accuracy\":" + format_double(r.val_accuracy) +
           ",\"val_macro_f1\":" + format_double(r.val_macro_f1) + "}";
}

inline void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm,
                                const std::vector<std::string>& labels) {
    std::vector<io::CsvRow> rows;
    io::CsvRow header{"label\\prediction"};
    header.insert(header.end(), labels.begin(), labels.end());
    rows.push_back(header);
    for (std::size_t i = 0; i < cm.classes(); ++i) {
        io::CsvRow r{labels[i]};
        for (std::size_t j = 0; j < cm.classes(); ++j) r.push_back(std::to_string(cm(i, j)));
        rows.push_back(r);
    }
    io::write_csv(path, rows);
}

using Progress = std::function<void(const std::string&)>;

/// Trains `config` once per seed on already-encoded data and evaluates the
/// best-validation parameters on the test split. Writes per-seed artefacts
/// under `dir` when it is non-empty.
inline ExperimentRow run_experiment(const Experiment& exp, const PreparedData& data,
                                    const std::vector<std::string>& labels, const std::filesystem::path& dir,
                                    const Progress& progress = {}) {
    validate(exp.config);
    ExperimentRow row;
    row.name = exp.name;
    row.config = exp.config;
    row.config_hash = config_hash(exp.config);
    std::vector<Metrics> per_seed;
    for (auto seed : exp.config.seeds) {
        std::vector<std::string> log_lines;
        auto result = train_model(exp.config, seed, data,
                                  [&](const EpochRecord& r) { log_lines.push_back(epoch_log_line(r)); });
        SeedOutcome o;
        o.seed = seed;
        o.best_epoch = result.best_epoch;
        o.epochs_run = result.log.size();
        o.checksum = parameter_checksum(result.params);
        o.test = evaluate_samples(result.params, data.test, data.classes);
        row.parameter_count = result.params.parameter_count();
        if (!dir.empty()) {
            const auto seed_dir = dir / ("seed_" + std::to_string(seed));
            std::filesystem::create_directories(seed_dir);
            std::ofstream log(seed_dir / "epoch_log.jsonl", std::ios::binary);
            for (const auto& l : log_lines) log << l << '\n';
            save_checkpoint(seed_dir / "checkpoint.json",
                            Checkpoint{exp.config, labels, seed, result.best_epoch, result.params});
            write_confusion_csv(seed_dir / "confusion_matrix.csv", o.test.confusion, labels);
        }
        if (progress)
            progress(exp.name + " seed " + std::to_string(seed) + ": best epoch " + std::to_string(o.best_epoch) +
                     ", test accuracy " + io::format_double(o.test.accuracy) + ", macro-F1 " +
                     io::format_double(o.test.macro_f1));
        per_seed.push_back(o.test);
        row.seeds.push_back(std::move(o));
    }
    row.report = aggregate(exp.config.seeds, std::move(per_seed));
    return row;
}

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{"accuracy", "macro_precision", "macro_recall", "macro_f1"};
    return names;
}

inline std::vector<double> metric_values(const Metrics& m) {
    return {m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1};
}

inline std::vector<Summary> metric_summaries(const MetricsReport& r) {
    return {r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1};
}

/// One row per configuration: identity columns, four means, four standard deviations.
inline std::vector<io::CsvRow> table_rows(const ExperimentTable& t) {
    io::CsvRow header{"name", "variant", "steps", "config_hash", "parameters", "seeds"};
    for (const auto& m : metric_names()) header.push_back(m + "_mean");
    for (const auto& m : metric_names()) header.push_back(m + "_std");
    std::vector<io::CsvRow> rows{header};
    for (const auto& r : t.rows) {
        io::CsvRow row{r.name, std::string(fusion::to_string(r.config.fusion.variant)),
                       enhance::join_steps(r.config.steps), r.config_hash, std::to_string(r.parameter_count),
                       std::to_string(r.report.seeds.size())};
        const auto s = metric_summaries(r.report);
        for (const auto& x : s) row.push_back(io::format_double(x.mean));
        for (const auto& x : s) row.push_back(io::format_double(x.std));
        rows.push_back(row);
    }
    return rows;
}

/// One row per configuration and seed, then a mean and a std row per configuration.
inline std::vector<io::CsvRow> metrics_rows(const ExperimentTable& t) {
    io::CsvRow header{"name", "config_hash", "seed", "best_epoch", "epochs_run"};
    header.insert(header.end(), metric_names().begin(), metric_names().end());
    std::vector<io::CsvRow> rows{header};
    for (const auto& r : t.rows) {
        for (const auto& s : r.seeds) {
            io::CsvRow row{r.name, r.config_hash, std::to_string(s.seed), std::to_string(s.best_epoch),
                           std::to_string(s.epochs_run)};
            for (double v : metric_values(s.test)) row.push_back(io::format_double(v));
            rows.push_back(row);
        }
        io::CsvRow mean{r.name, r.config_hash, "mean", "", ""}, sd{r.name, r.config_hash, "std", "", ""};
        for (const auto& x : metric_summaries(r.report)) {
            mean.push_back(io::format_double(x.mean));
            sd.push_back(io::format_double(x.std));
        }
        rows.push_back(mean);
        rows.push_back(sd);
    }
    return rows;
}

/// Writes table.csv, metrics.csv and run.json into `dir`.
inline void write_table(const std::filesystem::path& dir, const ExperimentTable& t) {
    std::filesystem::create_directories(dir);
    io::write_csv(dir / "table.csv", table_rows(t));
    io::write_csv(dir / "metrics.csv", metrics_rows(t));
    nlohmann::ordered_json j;
    j["kind"] = t.kind;
    j["dataset"] = t.dataset;
    j["labels"] = t.labels;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : t.rows)
        j["rows"].push_back({{"name", r.name}, {"directory", slug(r.name)}, {"config_hash", r.config_hash},
                             {"config", to_json(r.config)}});
    std::ofstream(dir / "run.json", std::ios::binary) << j.dump(2) << '\n';
}

/// Encodes the manifest once for the union of chain steps and once for DIRECT
/// (if requested), then runs every experiment on its step subset.
inline ExperimentTable run_experiments(const std::string& kind, const std::vector<Experiment>& experiments,
                                       const data::DatasetManifest& manifest,
                                       const enhance::EnhancementCache& cache, const std::filesystem::path& out,
                                       const Progress& progress = {}) {
    if (experiments.empty()) throw ConfigError("no experiments to run");
    const auto& first = experiments.front().config;
    for (const auto& e : experiments) {
        validate(e.config);
        if (config_hash_of(e.config, "encoder.") != config_hash_of(first, "encoder.") ||
            e.config.language != first.language ||
            e.config.max_text_tokens != first.max_text_tokens ||
            e.config.max_enhanced_tokens != first.max_enhanced_tokens)
            throw ConfigError("experiments in one sweep must share encoder and token settings");
    }
    std::vector<enhance::Step> chain, direct;
    for (const auto& e : experiments)
        for (auto s : e.config.steps) {
            auto& target = s == enhance::Step::DIRECT ? direct : chain;
            if (std::find(target.begin(), target.end(), s) == target.end()) target.push_back(s);
        }
    if (!chain.empty()) chain = enhance::parse_step_list(enhance::join_steps(chain));

    const auto backend = make_backend(first.encoder);
    std::map<std::string, PreparedData> encoded;
    auto prepare = [&](const std::vector<enhance::Step>& steps) {
        encoded.emplace(enhance::join_steps(steps),
                        prepare_data(manifest, cache, *backend, steps, first.max_text_tokens,
                                     first.max_enhanced_tokens, first.language));
    };
    if (!chain.empty()) prepare(chain);
    if (!direct.empty()) prepare(direct);

    ExperimentTable table;
    table.kind = kind;
    table.dataset = first.dataset.empty() ? manifest.name : first.dataset;
    table.labels = manifest.vocab.names();
    for (const auto& e : experiments) {
        const bool is_direct = e.config.steps.front() == enhance::Step::DIRECT;
        const auto& base = encoded.at(enhance::join_steps(is_direct ? direct : chain));
        const auto data = restrict_steps(base, e.config.steps);
        table.rows.push_back(
            run_experiment(e, data, table.labels, out.empty() ? out : out / slug(e.name), progress));
    }
    if (!out.empty()) write_table(out, table);
    return table;
}

inline ExperimentTable run_ablations(const RunConfig& base, const data::DatasetManifest& manifest,
                                     const enhance::EnhancementCache& cache, const std::filesystem::path& out,
                                     const Progress& progress = {}) {
    return run_experiments("ablation", ablation_configs(base), manifest, cache, out, progress);
}

/// Fusion-variant sweep and four-step vs direct enhancement sweep.
inline std::pair<ExperimentTable, ExperimentTable> run_variant_comparison(
    const RunConfig& base, const data::DatasetManifest& manifest, const enhance::EnhancementCache& cache,
    const std::filesystem::path& out, const Progress& progress = {}) {
    auto variants = run_experiments("variants", variant_configs(base), manifest, cache,
                                    out.empty() ? out : out / "variants", progress);
    auto enhancement = run_experiments("enhancement", enhancement_configs(base), manifest, cache,
                                       out.empty() ? out : out / "enhancement", progress);
    return {std::move(variants), std::move(enhancement)};
}

}  // namespace memodetector::train
