// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "golden/prompts.hpp"
#include "memodetector/fusion/model.hpp"
#include "memodetector/train/experiments.hpp"
#include "memodetector/train/report.hpp"
#include "oracles.hpp"
#include "pipeline.hpp"

namespace md = memodetector;
namespace fu = memodetector::fusion;
namespace tr = memodetector::train;
namespace fs = std::filesystem;
using testing_support::random_params;
using testing_support::random_sequence;
using testing_support::TempDir;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3g", v);
    return b;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fu::FusionDims dims_of(std::size_t d, std::size_t classes = 3, std::size_t visual_dim = 0) {
    return {d, visual_dim ? visual_dim : d, 1, d, classes};
}

Eigen::VectorXd embedding(const md::encode::FeatureSequence& hv, const md::encode::FeatureSequence& ht,
                          const fu::FusionParams& p) {
    auto r = fu::bidirectional_xattn(hv, ht, p);
    return fu::pool_and_classify(r.v_tilde, hv.mask, r.tau_tilde, ht.mask, p).meme_embedding;
}

md::encode::FeatureSequence permute_rows(const md::encode::FeatureSequence& s, const std::vector<std::size_t>& perm) {
    auto out = s;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out.rows.row(static_cast<Eigen::Index>(i)) = s.rows.row(static_cast<Eigen::Index>(perm[i]));
        out.mask[i] = s.mask[perm[i]];
    }
    return out;
}

bool finite_row(const tr::ExperimentRow& r) {
    for (const auto& s : tr::metric_summaries(r.report))
        if (!std::isfinite(s.mean) || !std::isfinite(s.std)) return false;
    return true;
}

// Renders through the CLI when it is built, otherwise through the library call it wraps.
int render_report(const fs::path& runs, const fs::path& out) {
#ifdef MEMODETECTOR_CLI
    const std::string cmd = std::string(MEMODETECTOR_CLI) + " report --input '" + runs.string() + "' --out '" +
                            out.string() + "' > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#else
    tr::build_report({runs}, out);
    return 0;
#endif
}

// ---------------------------------------------------------------------------

Outcome attention_oracle() {
    md::Rng rng(20240101);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto n = 1 + rng.below(6), m = 1 + rng.below(6), d = 1 + rng.below(6);
        auto p = random_params(dims_of(d), fu::FusionVariant::bidirectional_xattn, 100 + trial, 1.0);
        auto hv = random_sequence(rng, n, d, md::encode::SequenceKind::visual);
        auto ht = random_sequence(rng, m, d);
        auto got = fu::bidirectional_xattn(hv, ht, p);
        using oracle::from_eigen;
        auto tau = oracle::residual_attention(from_eigen(ht.rows), from_eigen(hv.rows), from_eigen(p.forward->query),
                                              from_eigen(p.forward->key), from_eigen(p.forward->value),
                                              from_eigen(p.forward->output));
        auto vis = oracle::residual_attention(from_eigen(hv.rows), from_eigen(ht.rows), from_eigen(p.backward->query),
                                              from_eigen(p.backward->key), from_eigen(p.backward->value),
                                              from_eigen(p.backward->output));
        if (got.v_tilde.rows() != static_cast<Eigen::Index>(n) || got.tau_tilde.rows() != static_cast<Eigen::Index>(m))
            return {false, "shape mismatch in case " + std::to_string(trial)};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(got.v_tilde(i, j) - vis[i][j]));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(got.tau_tilde(i, j) - tau[i][j]));
    }
    return {worst <= 1e-10, "20 cases, max |diff| " + num(worst) + " (tol 1e-10)"};
}

Outcome gradient_check() {
    md::Rng rng(21);
    double worst = 0.0;
    std::string worst_name;
    std::size_t tensors = 0;
    for (auto dims : {dims_of(4, 3), dims_of(4, 3, 5)}) {
        auto p = random_params(dims, fu::FusionVariant::bidirectional_xattn, 3);
        std::vector<testing_support::LabelledBundle> batch{
            {testing_support::random_bundle(rng, 3, 2, 2, dims.dim, dims.visual_dim), 0},
            {testing_support::random_bundle(rng, 2, 1, 3, dims.dim, dims.visual_dim), 2}};
        for (const auto& e : testing_support::check_gradients(p, batch, 1e-5)) {
            ++tensors;
            if (e.relative > worst) {
                worst = e.relative;
                worst_name = e.name;
            }
        }
    }
    return {worst < 1e-4, std::to_string(tensors) + " tensors, max rel err " + num(worst) + " (" + worst_name +
                              ", tol 1e-4)"};
}

Outcome residual_identity() {
    md::Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        const auto d = 1 + rng.below(6);
        auto p = random_params(dims_of(d), fu::FusionVariant::bidirectional_xattn, trial);
        p.forward->output.setZero();
        p.backward->output.setZero();
        auto hv = random_sequence(rng, 1 + rng.below(6), d), ht = random_sequence(rng, 1 + rng.below(6), d);
        auto r = fu::bidirectional_xattn(hv, ht, p);
        if (!(r.v_tilde.array() == hv.rows.array()).all() || !(r.tau_tilde.array() == ht.rows.array()).all())
            return {false, "trial " + std::to_string(trial) + " not bit-identical"};
    }
    return {true, "50 trials bit-identical"};
}

Outcome permutation_invariance() {
    md::Rng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto d = 1 + rng.below(6), n = 1 + rng.below(8), m = 1 + rng.below(8);
        auto p = random_params(dims_of(d), fu::FusionVariant::bidirectional_xattn, trial);
        auto hv = random_sequence(rng, n, d), ht = random_sequence(rng, m, d);
        std::vector<std::size_t> pn(n), pm(m);
        std::iota(pn.begin(), pn.end(), 0u);
        std::iota(pm.begin(), pm.end(), 0u);
        rng.shuffle(std::span(pn));
        rng.shuffle(std::span(pm));
        auto a = embedding(hv, ht, p), b = embedding(permute_rows(hv, pn), permute_rows(ht, pm), p);
        worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-10, "100 trials, max |diff| " + num(worst) + " (tol 1e-10)"};
}

Outcome masking_soundness() {
    md::Rng rng(12);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto d = 1 + rng.below(6);
        auto p = random_params(dims_of(d), fu::FusionVariant::bidirectional_xattn, trial);
        auto hv = random_sequence(rng, 1 + rng.below(6), d), ht = random_sequence(rng, 1 + rng.below(6), d);
        auto hv_pad = hv.padded(1 + rng.below(4)), ht_pad = ht.padded(1 + rng.below(4));
        hv_pad.rows.bottomRows(hv_pad.length() - hv.length()) =
            testing_support::random_matrix(rng, hv_pad.length() - hv.length(), d, 50.0);
        ht_pad.rows.bottomRows(ht_pad.length() - ht.length()) =
            testing_support::random_matrix(rng, ht_pad.length() - ht.length(), d, 50.0);
        worst = std::max(worst, (embedding(hv, ht, p) - embedding(hv_pad, ht_pad, p)).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-10, "100 trials, max |diff| " + num(worst) + " (tol 1e-10)"};
}

Outcome metrics_oracle() {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t classes = 2 + gen() % 6, n = 1 + gen() % 40;
        std::vector<std::size_t> labels(n), preds(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = gen() % classes;
            preds[i] = gen() % 3 == 0 ? labels[i] : gen() % classes;
        }
        const auto got = tr::compute_metrics(labels, preds, classes);
        const auto want = oracle::metrics(labels, preds, classes);
        if (got.accuracy != want.accuracy || got.macro_precision != want.macro_precision ||
            got.macro_recall != want.macro_recall || got.macro_f1 != want.macro_f1)
            return {false, "set " + std::to_string(trial) + " differs from the oracle"};
    }
    const std::vector<std::size_t> labels{0, 1, 0}, preds{0, 1, 1};
    const double f1 = tr::compute_metrics(labels, preds, 2).macro_f1;
    return {std::abs(f1 - 2.0 / 3.0) < 1e-15, "100 sets exact; worked example macro-F1 " + num(f1)};
}

Outcome loss_closed_forms() {
    // Zeroed classifier gives equal logits, so the model predicts uniformly over 7 classes.
    md::Rng rng(5);
    auto p = fu::init_params(dims_of(4, 7), fu::FusionVariant::bidirectional_xattn, 1);
    p.classifier_weight.setZero();
    p.classifier_bias.setZero();
    auto bundle = testing_support::random_bundle(rng, 3, 2, 2, 4);
    const double uniform = fu::cross_entropy(fu::forward(p, bundle).probabilities, 3);
    p.classifier_bias(2, 0) = 1000.0;
    const double confident = fu::cross_entropy(fu::forward(p, bundle).probabilities, 2);
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(7);
    onehot(4) = 1.0;
    const double direct = fu::cross_entropy(onehot, 4);
    const bool ok = std::abs(uniform - std::log(7.0)) <= 1e-9 && confident == 0.0 && direct == 0.0;
    return {ok, "uniform " + num(uniform - std::log(7.0)) + " from ln7 (tol 1e-9), one-hot correct " + num(confident + 0.0)};
}

Outcome overfit() {
    testing_support::SyntheticPipeline pipe("acc_overfit");
    tr::RunConfig c;
    c.training.epochs = 200;
    c.training.patience = 0;
    auto backend = tr::make_backend(c.encoder);
    const auto data = testing_support::all_in_train(tr::prepare_data(c, pipe.manifest(), *pipe.cache, *backend));
    std::size_t reached = 0;
    try {
        tr::train_model(c, 0, data, [&](const tr::EpochRecord& r) {
            if (r.train_accuracy == 1.0) {
                reached = r.epoch;
                throw std::runtime_error("done");
            }
        });
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()) != "done") throw;
    }
    if (!reached) return {false, "train accuracy below 1.0 after 200 epochs on " + std::to_string(data.train.size())};
    return {data.train.size() == 32, std::to_string(data.train.size()) + " samples, train accuracy 1.0 at epoch " +
                                         std::to_string(reached)};
}

Outcome ablation_harness() {
    testing_support::SyntheticPipeline pipe("acc_ablation");
    TempDir out("acc_ablation_out");
    const tr::RunConfig base;
    const auto table = tr::run_ablations(base, pipe.manifest(), *pipe.cache, out.path());
    const auto rows = md::io::read_csv(out / "table.csv");
    if (table.rows.size() != 6 || rows.size() != 7) return {false, "expected 6 rows"};
    const std::vector<std::vector<std::string>> expected_diff{
        {}, {"fusion.variant"}, {"enhancement.steps"}, {"enhancement.steps"}, {"enhancement.steps"}, {"enhancement.steps"}};
    for (std::size_t i = 0; i < 6; ++i) {
        if (!finite_row(table.rows[i])) return {false, table.rows[i].name + " has non-finite metrics"};
        if (tr::config_diff(table.rows[i].config, base) != expected_diff[i])
            return {false, table.rows[i].name + " differs from the base in unexpected keys"};
    }
    if (table.rows[1].config.fusion.variant != fu::FusionVariant::no_dualstage) return {false, "w/o DF variant"};
    for (std::size_t i = 0; i < 4; ++i) {
        auto steps = table.rows[2 + i].config.steps;
        if (steps.size() != 3 || std::count(steps.begin(), steps.end(), md::enhance::kChainSteps[i]))
            return {false, table.rows[2 + i].name + " keeps the wrong steps"};
    }
    std::string names;
    for (const auto& r : table.rows) names += (names.empty() ? "" : ", ") + r.name;
    return {true, "6 rows (" + names + "), " + std::to_string(base.seeds.size()) + " seeds each, all finite"};
}

Outcome variant_harness() {
    testing_support::SyntheticPipeline pipe("acc_variants");
    TempDir out("acc_variants_out");
    const tr::RunConfig base;
    auto [variants, enhancement] = tr::run_variant_comparison(base, pipe.manifest(), *pipe.cache, out / "runs");
    if (variants.rows.size() != 4 || enhancement.rows.size() != 2) return {false, "wrong row counts"};
    for (const auto* t : {&variants, &enhancement})
        for (const auto& r : t->rows)
            if (!finite_row(r)) return {false, r.name + " has non-finite metrics"};
    if (enhancement.rows[1].config.steps != std::vector<md::enhance::Step>{md::enhance::Step::DIRECT})
        return {false, "direct row does not use DIRECT"};
    const int rc = render_report(out / "runs", out / "report");
    if (rc != 0) return {false, "report command exited " + std::to_string(rc)};
    const auto report = md::io::read_csv(out / "report/report.csv");
    const bool charts = fs::exists(out / "report/chart_synthetic_variants.svg") &&
                        fs::exists(out / "report/chart_synthetic_enhancement.svg");
    const bool md_ok = fs::exists(out / "report/report.md");
    return {report.size() == 7 && charts && md_ok,
            "4 fusion variants + four-step/direct trained; report.csv " + std::to_string(report.size() - 1) +
                " rows, 2 charts " + (charts ? "written" : "missing")};
}

Outcome enhancement_pipeline() {
    for (const auto& c : golden::prompt_cases())
        if (md::enhance::build_prompt(c.step, c.text) != c.expected)
            return {false, "prompt golden mismatch for " + std::string(md::enhance::to_string(c.step))};

    TempDir dir("acc_enhance");
    md::data::SyntheticOptions opt;
    opt.count = 10;
    const auto corpus = md::data::write_synthetic_corpus(dir / "data", opt);
    const std::vector<md::enhance::Step> chain(md::enhance::kChainSteps.begin(), md::enhance::kChainSteps.end());
    md::enhance::EnhanceOptions eo;
    eo.workers = 2;

    md::enhance::MockMllmClient first_client;
    md::enhance::EnhancementCache cache(dir / "cache.jsonl");
    const auto first = md::enhance::enhance_all(first_client, corpus.manifest, cache, chain, eo);
    bool complete = cache.size() == 40;
    for (const auto& m : corpus.manifest.instances) complete = complete && cache.record(m.id, chain).complete_chain();

    md::enhance::MockMllmClient second_client;
    md::enhance::EnhancementCache reloaded(dir / "cache.jsonl");
    const auto second = md::enhance::enhance_all(second_client, corpus.manifest, reloaded, chain, eo);
    const bool ok = first.misses == 40 && first.failures == 0 && complete && second.hits == 40 &&
                    second.misses == 0 && second_client.calls() == 0;
    return {ok, "first run misses=" + std::to_string(first.misses) + " entries=" + std::to_string(cache.size()) +
                    "; rerun hits=" + std::to_string(second.hits) + " calls=" + std::to_string(second_client.calls()) +
                    "; " + std::to_string(golden::prompt_cases().size()) + " prompt goldens exact"};
}

Outcome determinism() {
    testing_support::SyntheticPipeline pipe("acc_det");
    TempDir a("acc_det_a"), b("acc_det_b");
    tr::RunConfig c;
    const std::vector<tr::Experiment> exps{{"full", c}};
    tr::run_experiments("train", exps, pipe.manifest(), *pipe.cache, a.path());
    tr::run_experiments("train", exps, pipe.manifest(), *pipe.cache, b.path());
    std::size_t compared = 0;
    std::vector<std::string> files{"metrics.csv", "table.csv"};
    for (auto s : c.seeds) files.push_back("full/seed_" + std::to_string(s) + "/epoch_log.jsonl");
    for (const auto& f : files) {
        const auto x = slurp(a / f), y = slurp(b / f);
        if (x.empty() || x != y) return {false, f + " differs between runs"};
        ++compared;
    }
    return {true, std::to_string(compared) + " files byte-identical across two runs"};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> check;
        double budget_s;  // 0 = no runtime bound
    };
    const std::vector<Criterion> criteria{
        {"attention oracle equivalence", attention_oracle, 5.0},
        {"gradient check", gradient_check, 60.0},
        {"residual identity", residual_identity, 0},
        {"permutation invariance", permutation_invariance, 0},
        {"masking soundness", masking_soundness, 0},
        {"metrics oracle", metrics_oracle, 0},
        {"loss closed forms", loss_closed_forms, 0},
        {"overfit smoke test", overfit, 120.0},
        {"ablation harness", ablation_harness, 0},
        {"variant harness", variant_harness, 0},
        {"enhancement pipeline", enhancement_pipeline, 0},
        {"determinism", determinism, 0},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& c = criteria[i];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs >= c.budget_s) {
            o.pass = false;
            o.detail += "; exceeded " + num(c.budget_s) + " s budget";
        }
        char timing[32];
        std::snprintf(timing, sizeof timing, "%.2fs", secs);
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << c.name << ": " << o.detail << " ("
                  << timing << ")" << std::endl;
        failed += !o.pass;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed ? 1 : 0;
}
