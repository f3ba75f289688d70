#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memodetector/data/manifest.hpp"
#include "memodetector/enhance/cache.hpp"
#include "memodetector/enhance/enhancer.hpp"
#include "memodetector/enhance/http_client.hpp"
#include "memodetector/enhance/mock_client.hpp"
#include "memodetector/io/csv.hpp"
#include "memodetector/train/checkpoint.hpp"
#include "memodetector/train/config.hpp"
#include "memodetector/train/experiments.hpp"
#include "memodetector/train/report.hpp"

namespace fs = std::filesystem;
namespace md = memodetector;
namespace tr = memodetector::train;

namespace {

/// Bad invocation detected after parsing; exits with 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Level { error, warn, info, debug };

struct Globals {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string log_level = "info";

    Level level() const {
        if (log_level == "error") return Level::error;
        if (log_level == "warn") return Level::warn;
        if (log_level == "debug") return Level::debug;
        return Level::info;
    }
};

Globals globals;

void log(Level l, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (l <= globals.level()) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
}

/// Manifest and split flags shared by the data-reading commands.
struct DataFlags {
    std::string manifest;
    std::string cache;
    std::uint64_t split_seed = 0;
    std::string split_ratio = "8:1:1";

    void add(CLI::App* cmd, bool need_cache) {
        cmd->add_option("--manifest", manifest, "dataset manifest (JSON Lines)")->required()->check(CLI::ExistingFile);
        auto* c = cmd->add_option("--cache", cache, "enhancement cache (JSON Lines)");
        if (need_cache) c->required()->check(CLI::ExistingFile);
        cmd->add_option("--split-seed", split_seed, "seed for memes without a split tag")->default_val(0);
        cmd->add_option("--split-ratio", split_ratio, "train:val:test ratio for untagged memes")->default_val("8:1:1");
    }

    md::data::DatasetManifest load() const {
        md::data::SplitAssignment a;
        a.seed = split_seed;
        a.ratio = md::data::parse_split_ratio(split_ratio);
        return md::data::load_manifest(manifest, a);
    }

    md::enhance::EnhancementCache load_cache() const { return md::enhance::EnhancementCache(cache); }
};

/// `--<key>` for every config key; applied on top of --config.
struct ConfigFlags {
    std::map<std::string, std::string> overrides;

    void add(CLI::App* cmd) {
        for (const auto& k : tr::config_keys())
            cmd->add_option_function<std::string>(
                   "--" + k.name, [this, name = k.name](const std::string& v) { overrides[name] = v; }, k.help)
                ->group("Config overrides");
    }

    tr::RunConfig resolve() const {
        tr::RunConfig c = globals.config.empty() ? tr::RunConfig{} : tr::load_config(globals.config);
        for (const auto& [k, v] : overrides) tr::set_config_value(c, k, v);
        if (globals.seed) c.seeds = {*globals.seed};
        return c;
    }
};

fs::path output_dir(const tr::RunConfig* c = nullptr) {
    if (!globals.out.empty()) return globals.out;
    if (c && !c->output_dir.empty()) return c->output_dir;
    return "runs";
}

void print_row(const tr::ExperimentRow& r) {
    auto pct = [](const md::train::Summary& s) {
        char b[64];
        std::snprintf(b, sizeof b, "%.2f±%.2f", s.mean * 100, s.std * 100);
        return std::string(b);
    };
    std::cout << r.name << ": accuracy " << pct(r.report.accuracy) << " macro_p " << pct(r.report.macro_precision)
              << " macro_r " << pct(r.report.macro_recall) << " macro_f1 " << pct(r.report.macro_f1) << " ("
              << r.report.seeds.size() << " seeds)\n";
}

tr::Progress progress() {
    return [](const std::string& m) { log(Level::info, m); };
}

// ---------------------------------------------------------------------------

struct EnhanceCmd {
    DataFlags data;
    std::string endpoint, model, steps = "ID,TM,CIM,CA", token_env = "MEMODETECTOR_API_KEY";
    std::size_t workers = 4;
    std::optional<std::string> mock;
    CLI::Option* mock_opt = nullptr;
    double temperature = 0.0;
    int max_tokens = 512;
    int timeout_s = 120;
    int retries = 3;
    int backoff_ms = 1000;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("enhance", "query the MLLM for every meme x step and fill the cache");
        data.add(cmd, false);
        cmd->add_option("--endpoint", endpoint, "chat-completions base URL");
        cmd->add_option("--model", model, "model identifier sent to the endpoint and stored in the cache");
        cmd->add_option("--workers", workers, "parallel memes")->default_val(4)->check(CLI::PositiveNumber);
        cmd->add_option("--steps", steps, "comma list of ID,TM,CIM,CA,DIRECT")->default_val("ID,TM,CIM,CA");
        cmd->add_option("--token-env", token_env, "environment variable holding the bearer token")
            ->default_val("MEMODETECTOR_API_KEY");
        cmd->add_option("--temperature", temperature, "sampling temperature")->default_val(0.0);
        cmd->add_option("--max-tokens", max_tokens, "response token limit")->default_val(512);
        cmd->add_option("--timeout", timeout_s, "request timeout in seconds")->default_val(120);
        cmd->add_option("--retries", retries, "attempts per request")->default_val(3)->check(CLI::PositiveNumber);
        cmd->add_option("--backoff-ms", backoff_ms, "first retry delay, doubled after each failure")
            ->default_val(1000)
            ->check(CLI::NonNegativeNumber);
        mock_opt = cmd->add_option("--mock", mock, "offline fake MLLM: echo | canned:<fixtures.json>")
                       ->expected(0, 1);
        cmd->callback([this] { code = run(); });
    }

    int code = 0;

    int run() {
        const bool use_mock = mock_opt->count() > 0;
        if (use_mock == !endpoint.empty()) throw UsageError("enhance needs exactly one of --endpoint or --mock");
        if (!use_mock && model.empty()) throw UsageError("--endpoint needs --model");
        std::string spec = mock && !mock->empty() ? *mock : "echo";
        if (use_mock && spec != "echo" && !spec.starts_with("canned:"))
            throw UsageError("--mock takes echo or canned:<fixtures.json>");
        std::vector<md::enhance::Step> step_list;
        try {
            step_list = md::enhance::parse_step_list(steps);
        } catch (const md::ConfigError& e) {
            throw UsageError(e.what());
        }

        const auto manifest = data.load();
        const fs::path cache_path = data.cache.empty() ? output_dir() / "cache.jsonl" : fs::path(data.cache);
        md::enhance::EnhancementCache cache(cache_path);

        std::unique_ptr<md::enhance::MllmClient> client;
        if (use_mock) {
            auto s = md::enhance::MockMllmClient::default_settings();
            if (spec != "echo") s.model_id = "mock-canned";
            if (!model.empty()) s.model_id = model;
            s.retry = {retries, std::chrono::milliseconds(backoff_ms)};
            auto mock_client = std::make_unique<md::enhance::MockMllmClient>(s);
            if (spec.starts_with("canned:")) mock_client->load_fixtures(spec.substr(7));
            client = std::move(mock_client);
        } else {
            md::enhance::ClientSettings s;
            s.base_url = endpoint;
            s.model_id = model;
            s.token_env = token_env;
            s.temperature = temperature;
            s.max_tokens = max_tokens;
            s.timeout = std::chrono::seconds(timeout_s);
            s.retry = {retries, std::chrono::milliseconds(backoff_ms)};
            client = std::make_unique<md::enhance::HttpMllmClient>(s);
        }
        md::enhance::EnhanceOptions opts;
        opts.workers = workers;
        log(Level::info, "enhancing " + std::to_string(manifest.instances.size()) + " memes x " +
                             std::to_string(step_list.size()) + " steps into " + cache_path.string());
        const auto summary = md::enhance::enhance_all(*client, manifest, cache, step_list, opts);
        std::cout << "hits=" << summary.hits << " misses=" << summary.misses << " failures=" << summary.failures
                  << " calls=" << summary.endpoint_calls << '\n';
        std::cout << "cache " << cache_path.string() << '\n';
        if (summary.failures == 0) return 0;
        std::cerr << "failed (meme_id, step) pairs:\n";
        for (const auto& f : summary.failed)
            std::cerr << "  " << f.meme_id << ' ' << md::enhance::to_string(f.step) << ": " << f.message << '\n';
        return 1;
    }
};

struct TrainCmd {
    DataFlags data;
    ConfigFlags config;
    int code = 0;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("train", "train the fusion model once per seed and evaluate on test");
        data.add(cmd, true);
        config.add(cmd);
        cmd->callback([this] { code = run(); });
    }

    int run() {
        auto c = config.resolve();
        tr::validate(c);
        const auto manifest = data.load();
        const auto cache = data.load_cache();
        const auto out = output_dir(&c);
        auto table = tr::run_experiments("train", {{"full", c}}, manifest, cache, out, progress());
        for (const auto& r : table.rows) print_row(r);
        std::cout << "outputs " << out.string() << '\n';
        return 0;
    }
};

struct EvalCmd {
    DataFlags data;
    std::string checkpoint, split = "test";
    int code = 0;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
        data.add(cmd, true);
        cmd->add_option("--checkpoint", checkpoint, "checkpoint.json written by train")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--split", split, "train | val | test")
            ->default_val("test")
            ->check(CLI::IsMember({"train", "val", "test"}));
        cmd->callback([this] { code = run(); });
    }

    int run() {
        const auto ck = tr::load_checkpoint(checkpoint);
        const auto manifest = data.load();
        const auto cache = data.load_cache();
        const auto s = *md::data::parse_split(split);
        const auto m = tr::evaluate(ck, manifest, cache, s);
        const auto out = output_dir() / "eval";
        fs::create_directories(out);
        std::vector<md::io::CsvRow> rows{{"metric", "value"}};
        const auto names = tr::metric_names();
        const auto values = tr::metric_values(m);
        for (std::size_t i = 0; i < names.size(); ++i) {
            rows.push_back({names[i], md::io::format_double(values[i])});
            std::cout << names[i] << ' ' << md::io::format_double(values[i]) << '\n';
        }
        md::io::write_csv(out / ("metrics_" + split + ".csv"), rows);
        tr::write_confusion_csv(out / ("confusion_matrix_" + split + ".csv"), m.confusion, ck.labels);
        std::cout << "outputs " << out.string() << '\n';
        return 0;
    }
};

struct SweepCmd {
    DataFlags data;
    ConfigFlags config;
    bool ablate = true;
    int code = 0;

    void add(CLI::App& app, bool is_ablation) {
        ablate = is_ablation;
        auto* cmd = is_ablation
                        ? app.add_subcommand("ablate", "full model, w/o DF and w/o each enhancement step")
                        : app.add_subcommand("compare", "fusion variants, then four-step vs direct enhancement");
        data.add(cmd, true);
        config.add(cmd);
        cmd->callback([this] { code = run(); });
    }

    int run() {
        auto c = config.resolve();
        tr::validate(c);
        const auto manifest = data.load();
        const auto cache = data.load_cache();
        const auto out = output_dir(&c);
        if (ablate) {
            auto t = tr::run_ablations(c, manifest, cache, out, progress());
            for (const auto& r : t.rows) print_row(r);
        } else {
            auto [variants, enhancement] = tr::run_variant_comparison(c, manifest, cache, out, progress());
            for (const auto& r : variants.rows) print_row(r);
            for (const auto& r : enhancement.rows) print_row(r);
        }
        std::cout << "outputs " << out.string() << '\n';
        return 0;
    }
};

struct ReportCmd {
    std::vector<std::string> inputs;
    int code = 0;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("report", "consolidate run tables into report.csv, report.md and charts");
        cmd->add_option("--input,inputs", inputs, "run directories (searched recursively)")->required();
        cmd->callback([this] { code = run(); });
    }

    int run() {
        std::vector<fs::path> paths(inputs.begin(), inputs.end());
        const auto out = output_dir();
        const auto res = tr::build_report(paths, out);
        for (const auto& n : res.notices) std::cout << "notice: " << n << '\n';
        std::cout << res.rows << " rows from " << res.runs << " runs\n";
        for (const auto& c : res.charts) std::cout << "chart " << c.string() << '\n';
        std::cout << "report " << (out / "report.csv").string() << '\n';
        return 0;
    }
};

struct ValidateCmd {
    DataFlags data;
    ConfigFlags config;
    int code = 0;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("validate", "check manifest, config and cache coverage");
        data.add(cmd, false);
        config.add(cmd);
        cmd->callback([this] { code = run(); });
    }

    int run() {
        std::vector<std::string> problems;
        tr::RunConfig c;
        try {
            c = config.resolve();
            tr::validate(c);
            std::cout << "config ok (" << tr::config_hash(c) << ")\n";
        } catch (const md::Error& e) {
            problems.push_back(std::string("config: ") + e.what());
        }

        std::optional<md::data::DatasetManifest> manifest;
        try {
            manifest = data.load();
            std::cout << "manifest ok: " << manifest->instances.size() << " memes, " << manifest->vocab.size()
                      << " labels\n";
            try {
                md::data::require_all_splits(tr::select_language(*manifest, c.language));
            } catch (const md::Error& e) {
                problems.push_back(std::string("manifest: ") + e.what());
            }
        } catch (const md::Error& e) {
            problems.push_back(std::string("manifest ") + data.manifest + ": " + e.what());
        }

        if (manifest && !data.cache.empty()) {
            try {
                const auto cache = data.load_cache();
                const auto memes = tr::select_language(*manifest, c.language).instances;
                std::cout << "coverage matrix (meme x step):\n" << std::left;
                std::printf("  %-16s", "meme_id");
                for (auto s : c.steps) std::printf(" %-6s", std::string(md::enhance::to_string(s)).c_str());
                std::printf("\n");
                std::size_t have = 0;
                for (const auto& m : memes) {
                    std::printf("  %-16s", m.id.c_str());
                    for (auto s : c.steps) {
                        const auto e = cache.find(m.id, s);
                        const bool ok = e && !e->text.empty();
                        have += ok;
                        std::printf(" %-6s", ok ? "ok" : "--");
                    }
                    std::printf("\n");
                }
                std::fflush(stdout);
                const std::size_t total = memes.size() * c.steps.size();
                const double pct = total ? 100.0 * static_cast<double>(have) / static_cast<double>(total) : 100.0;
                char line[64];
                std::snprintf(line, sizeof line, "coverage %g%% (%zu/%zu)", pct, have, total);
                std::cout << line << '\n';
                const auto gaps = tr::coverage_gaps(memes, cache, c.steps);
                if (!gaps.empty()) {
                    std::string msg = "cache: " + std::to_string(gaps.size()) + " missing entries:";
                    for (const auto& g : gaps) msg += " " + g;
                    problems.push_back(msg);
                }
            } catch (const md::Error& e) {
                problems.push_back("cache " + data.cache + ": " + std::string(e.what()));
            }
        } else if (manifest) {
            std::cout << "no --cache given; coverage not checked\n";
        }

        if (problems.empty()) {
            std::cout << "valid\n";
            return 0;
        }
        std::cout.flush();
        std::cerr << problems.size() << " problem(s):\n";
        for (const auto& p : problems) std::cerr << "  " << p << '\n';
        return 1;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memodetector: meme emotion classification with enhanced text and dual-stage fusion"};
    app.fallthrough();
    app.require_subcommand(1);
    app.add_option("--config", globals.config, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--out", globals.out, "output directory (default: output_dir key, else runs)");
    app.add_option("--seed", globals.seed, "single run seed, replacing the seeds key");
    app.add_option("--log-level", globals.log_level, "error | warn | info | debug")
        ->default_val("info")
        ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

    EnhanceCmd enhance;
    TrainCmd train;
    EvalCmd eval;
    SweepCmd ablate, compare;
    ReportCmd report;
    ValidateCmd validate;
    enhance.add(app);
    train.add(app);
    eval.add(app);
    ablate.add(app, true);
    compare.add(app, false);
    report.add(app);
    validate.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const md::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const md::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    for (int code : {enhance.code, train.code, eval.code, ablate.code, compare.code, report.code, validate.code})
        if (code != 0) return code;
    return 0;
}
