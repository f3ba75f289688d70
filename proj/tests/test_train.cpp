#include <gtest/gtest.h>

#include <bit>
#include <random>

#include "memodetector/train/checkpoint.hpp"
#include "memodetector/train/config.hpp"
#include "memodetector/train/metrics.hpp"
#include "memodetector/train/optimizer.hpp"
#include "memodetector/train/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pipeline.hpp"

namespace md = memodetector;
namespace tr = memodetector::train;
using testing_support::SyntheticPipeline;

namespace {

const SyntheticPipeline& shared_pipeline() {
    static SyntheticPipeline p("train_shared");
    return p;
}

const tr::PreparedData& shared_data() {
    static tr::PreparedData d = [] {
        const auto& p = shared_pipeline();
        tr::RunConfig c;
        auto backend = tr::make_backend(c.encoder);
        return tr::prepare_data(c, p.manifest(), *p.cache, *backend);
    }();
    return d;
}

tr::RunConfig quick_config(std::size_t epochs = 5) {
    tr::RunConfig c;
    c.training.epochs = epochs;
    c.training.patience = 0;
    c.seeds = {0};
    return c;
}

std::vector<std::uint64_t> bits_of(const std::vector<tr::EpochRecord>& log) {
    std::vector<std::uint64_t> out;
    for (const auto& r : log)
        for (double v : {r.train_loss, r.train_accuracy, r.val_accuracy, r.val_macro_f1})
            out.push_back(std::bit_cast<std::uint64_t>(v));
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// metrics

TEST(Metrics, MatchesLoopOracleOnRandomSets) {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t classes = 2 + gen() % 6;
        const std::size_t n = 1 + gen() % 40;
        std::vector<std::size_t> labels(n), preds(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = gen() % classes;
            preds[i] = gen() % 3 == 0 ? labels[i] : gen() % classes;
        }
        const auto got = tr::compute_metrics(labels, preds, classes);
        const auto want = oracle::metrics(labels, preds, classes);
        EXPECT_EQ(got.accuracy, want.accuracy) << "trial " << trial;
        EXPECT_EQ(got.macro_precision, want.macro_precision) << "trial " << trial;
        EXPECT_EQ(got.macro_recall, want.macro_recall) << "trial " << trial;
        EXPECT_EQ(got.macro_f1, want.macro_f1) << "trial " << trial;
        EXPECT_EQ(got.confusion.total(), n);
    }
}

TEST(Metrics, TwoClassWorkedExample) {
    const std::vector<std::size_t> labels{0, 1, 0}, preds{0, 1, 1};
    const auto m = tr::compute_metrics(labels, preds, 2);
    EXPECT_DOUBLE_EQ(m.accuracy, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.per_class[0].precision, 1.0);
    EXPECT_DOUBLE_EQ(m.per_class[0].recall, 0.5);
    EXPECT_DOUBLE_EQ(m.per_class[1].precision, 0.5);
    EXPECT_DOUBLE_EQ(m.per_class[1].recall, 1.0);
    EXPECT_DOUBLE_EQ(m.macro_f1, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.macro_precision, 0.75);
    EXPECT_DOUBLE_EQ(m.macro_recall, 0.75);
}

TEST(Metrics, AbsentClassesLeftOutOfMacro) {
    const std::vector<std::size_t> labels{0, 1}, preds{0, 1};
    const auto m = tr::compute_metrics(labels, preds, 7);
    EXPECT_EQ(m.macro_f1, 1.0);
    EXPECT_FALSE(m.per_class[5].present);
}

TEST(Metrics, RejectsMismatchAndRange) {
    const std::vector<std::size_t> a{0, 1}, b{0};
    EXPECT_THROW(tr::compute_metrics(a, b, 2), md::ValidationError);
    const std::vector<std::size_t> c{0, 2};
    EXPECT_THROW(tr::compute_metrics(c, c, 2), md::ValidationError);
}

TEST(Metrics, SummaryIsSampleStd) {
    const std::vector<double> v{1, 2, 3, 4};
    const auto s = tr::summarize(v);
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(s.std, std::sqrt(5.0 / 3.0));
    const std::vector<double> one{0.7};
    EXPECT_EQ(tr::summarize(one).std, 0.0);
}

TEST(Metrics, AggregateRecomputesFromPerSeed) {
    std::mt19937_64 gen(5);
    std::vector<tr::Metrics> per_seed;
    for (int s = 0; s < 5; ++s) {
        std::vector<std::size_t> l(20), p(20);
        for (int i = 0; i < 20; ++i) {
            l[i] = gen() % 4;
            p[i] = gen() % 4;
        }
        per_seed.push_back(tr::compute_metrics(l, p, 4));
    }
    const auto r = tr::aggregate({0, 1, 2, 3, 4}, per_seed);
    std::vector<double> f1;
    for (const auto& m : per_seed) f1.push_back(m.macro_f1);
    double mean = 0;
    for (double x : f1) mean += x;
    mean /= 5;
    double ss = 0;
    for (double x : f1) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(r.macro_f1.mean, mean, 1e-15);
    EXPECT_NEAR(r.macro_f1.std, std::sqrt(ss / 4), 1e-15);
    EXPECT_EQ(r.seeds.size(), 5u);
}

// ---------------------------------------------------------------------------
// config

TEST(Config, DefaultsValidate) {
    tr::RunConfig c;
    EXPECT_NO_THROW(tr::validate(c));
    EXPECT_EQ(c.steps.size(), 4u);
    EXPECT_EQ(c.seeds.size(), 5u);
    EXPECT_EQ(c.optimizer.name, "adamw");
    EXPECT_EQ(c.fusion.variant, md::fusion::FusionVariant::bidirectional_xattn);
    EXPECT_EQ(tr::effective_lr(c), 2e-4);
    c.encoder.variant = md::encode::EncoderVariant::pretrained;
    EXPECT_EQ(tr::effective_lr(c), 2e-5);
    c.optimizer.lr = 1e-3;
    EXPECT_EQ(tr::effective_lr(c), 1e-3);
}

TEST(Config, SetValueAndUnknownKey) {
    tr::RunConfig c;
    tr::set_config_value(c, "fusion.variant", "concat");
    tr::set_config_value(c, "optimizer.lr", "0.001");
    tr::set_config_value(c, "seeds", "3,4");
    tr::set_config_value(c, "enhancement.steps", "ID,CA");
    EXPECT_EQ(c.fusion.variant, md::fusion::FusionVariant::concat);
    EXPECT_EQ(c.optimizer.lr, 0.001);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
    EXPECT_EQ(c.steps, (std::vector<md::enhance::Step>{md::enhance::Step::ID, md::enhance::Step::CA}));
    EXPECT_THROW(tr::set_config_value(c, "fusion.nope", "1"), md::ConfigError);
    EXPECT_THROW(tr::set_config_value(c, "fusion.variant", "sum"), md::ConfigError);
    EXPECT_THROW(tr::set_config_value(c, "train.epochs", "ten"), md::ConfigError);
}

TEST(Config, JsonRoundTripPreservesHash) {
    tr::RunConfig c;
    c.fusion.heads = 2;
    c.optimizer.lr = 3e-4;
    c.seeds = {7, 9};
    c.steps = {md::enhance::Step::DIRECT};
    const auto back = tr::config_from_json(tr::to_json(c));
    EXPECT_EQ(tr::config_hash(back), tr::config_hash(c));
    EXPECT_TRUE(tr::config_diff(back, c).empty());
    EXPECT_EQ(tr::to_json(c)["fusion"]["heads"], 2);
}

TEST(Config, HashIgnoresOutputDir) {
    tr::RunConfig a, b;
    b.output_dir = "elsewhere";
    EXPECT_EQ(tr::config_hash(a), tr::config_hash(b));
    b.training.epochs = 31;
    EXPECT_NE(tr::config_hash(a), tr::config_hash(b));
    EXPECT_EQ(tr::config_diff(a, b), (std::vector<std::string>{"train.epochs", "output_dir"}));
}

TEST(Config, ValidationErrors) {
    auto bad = [](auto mutate) {
        tr::RunConfig c;
        mutate(c);
        EXPECT_THROW(tr::validate(c), md::ConfigError);
    };
    bad([](tr::RunConfig& c) { c.steps.clear(); });
    bad([](tr::RunConfig& c) { c.steps.push_back(md::enhance::Step::DIRECT); });
    bad([](tr::RunConfig& c) { c.encoder.trainable = true; });
    bad([](tr::RunConfig& c) { c.encoder.variant = md::encode::EncoderVariant::pretrained; });
    bad([](tr::RunConfig& c) { c.seeds.clear(); });
    bad([](tr::RunConfig& c) { c.optimizer.lr = -1e-3; });
    bad([](tr::RunConfig& c) { c.optimizer.name = "rmsprop"; });
    bad([](tr::RunConfig& c) { c.training.batch_size = 0; });
    bad([](tr::RunConfig& c) { c.max_enhanced_tokens = 0; });
}

TEST(Config, LoadFileAndMalformed) {
    testing_support::TempDir dir("cfg");
    std::ofstream(dir / "c.json") << R"({"fusion": {"variant": "add"}, "train": {"epochs": 3}, "seeds": [1]})";
    auto c = tr::load_config(dir / "c.json");
    EXPECT_EQ(c.fusion.variant, md::fusion::FusionVariant::add);
    EXPECT_EQ(c.training.epochs, 3u);
    EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{1});
    std::ofstream(dir / "bad.json") << "{oops";
    EXPECT_THROW(tr::load_config(dir / "bad.json"), md::ConfigError);
    std::ofstream(dir / "unknown.json") << R"({"fusion": {"colour": 1}})";
    EXPECT_THROW(tr::load_config(dir / "unknown.json"), md::ConfigError);
}

TEST(Config, DimsFromHeads) {
    tr::RunConfig c;
    c.fusion.heads = 4;
    auto d = tr::make_dims(c, 48, 32, 7);
    EXPECT_EQ(d.key_dim, 8u);
    EXPECT_EQ(d.visual_dim, 48u);
    c.fusion.heads = 3;
    EXPECT_THROW(tr::make_dims(c, 32, 32, 7), md::ConfigError);
    c.fusion.key_dim = 5;
    EXPECT_EQ(tr::make_dims(c, 32, 32, 7).key_dim, 5u);
}

// ---------------------------------------------------------------------------
// optimizer

namespace {

std::vector<testing_support::LabelledBundle> random_batch(std::uint64_t seed) {
    md::Rng rng(seed);
    std::vector<testing_support::LabelledBundle> b;
    for (std::size_t i = 0; i < 4; ++i) b.push_back({testing_support::random_bundle(rng, 3, 2, 2, 6), i % 3});
    return b;
}

md::fusion::FusionParams batch_gradient(const md::fusion::FusionParams& p,
                                        const std::vector<testing_support::LabelledBundle>& batch) {
    auto g = p.zeros_like();
    for (const auto& s : batch)
        md::fusion::loss_and_gradient(p, md::fusion::forward_trace(p, s.bundle), s.label, g,
                                      1.0 / static_cast<double>(batch.size()));
    return g;
}

}  // namespace

TEST(Optimizer, StepsReduceLoss) {
    const md::fusion::FusionDims dims{6, 6, 1, 6, 3};
    const auto batch = random_batch(3);
    for (const char* name : {"adamw", "sgd"}) {
        auto p = md::fusion::init_params(dims, md::fusion::FusionVariant::bidirectional_xattn, 1);
        tr::OptimizerConfig oc;
        oc.name = name;
        oc.lr = 1e-2;
        auto opt = tr::make_optimizer(oc);
        const double before = testing_support::batch_loss(p, batch);
        for (int i = 0; i < 5; ++i) opt->step(p, batch_gradient(p, batch));
        EXPECT_LT(testing_support::batch_loss(p, batch), before) << name;
    }
}

TEST(Optimizer, FirstAdamStepIsSignedLr) {
    const md::fusion::FusionDims dims{6, 6, 1, 6, 3};
    auto p = md::fusion::init_params(dims, md::fusion::FusionVariant::concat, 2);
    const auto g = batch_gradient(p, random_batch(4));
    tr::OptimizerConfig oc;
    oc.lr = 0.1;
    oc.weight_decay = 0.0;
    tr::AdamW opt(oc);
    auto before = p;
    opt.step(p, g);
    std::vector<const Eigen::MatrixXd*> pb, pa, gg;
    before.for_each([&](const std::string&, const Eigen::MatrixXd& m) { pb.push_back(&m); });
    p.for_each([&](const std::string&, const Eigen::MatrixXd& m) { pa.push_back(&m); });
    g.for_each([&](const std::string&, const Eigen::MatrixXd& m) { gg.push_back(&m); });
    for (std::size_t t = 0; t < pb.size(); ++t)
        for (Eigen::Index i = 0; i < pb[t]->size(); ++i) {
            const double gi = gg[t]->data()[i];
            const double want = pb[t]->data()[i] - 0.1 * gi / (std::abs(gi) + 1e-8);
            EXPECT_NEAR(pa[t]->data()[i], want, 1e-12);
        }
}

TEST(Optimizer, WeightDecaySkipsBias) {
    const md::fusion::FusionDims dims{4, 4, 1, 4, 2};
    auto p = md::fusion::init_params(dims, md::fusion::FusionVariant::add, 3);
    p.classifier_bias.setConstant(1.0);
    auto before = p;
    tr::Sgd opt(0.1, 0.5);
    opt.step(p, p.zeros_like());
    EXPECT_TRUE(p.classifier_bias == before.classifier_bias);
    EXPECT_TRUE(p.classifier_weight.isApprox(before.classifier_weight * 0.95));
}

TEST(Optimizer, UnknownName) {
    tr::OptimizerConfig oc;
    oc.name = "lion";
    EXPECT_THROW(tr::make_optimizer(oc), md::ConfigError);
}

// ---------------------------------------------------------------------------
// trainer

TEST(Trainer, PreparedSplitsAndShapes) {
    const auto& d = shared_data();
    EXPECT_EQ(d.train.size() + d.val.size() + d.test.size(), 32u);
    EXPECT_EQ(d.classes, 7u);
    for (const auto& s : d.train) {
        EXPECT_EQ(s.bundle.visual.length(), 16u);
        EXPECT_EQ(s.bundle.enhanced.size(), 4u);
    }
}

TEST(Trainer, BitwiseDeterministic) {
    const auto c = quick_config(4);
    auto a = tr::train_model(c, 3, shared_data());
    auto b = tr::train_model(c, 3, shared_data());
    EXPECT_EQ(bits_of(a.log), bits_of(b.log));
    EXPECT_EQ(tr::parameter_checksum(a.params), tr::parameter_checksum(b.params));
    EXPECT_EQ(a.best_epoch, b.best_epoch);
}

TEST(Trainer, SeedsDiffer) {
    const auto c = quick_config(2);
    auto a = tr::train_model(c, 0, shared_data());
    auto b = tr::train_model(c, 1, shared_data());
    EXPECT_NE(tr::parameter_checksum(a.params), tr::parameter_checksum(b.params));
}

TEST(Trainer, LossFallsAndCallbackFires) {
    auto c = quick_config(20);
    std::size_t calls = 0;
    auto r = tr::train_model(c, 0, shared_data(), [&](const tr::EpochRecord&) { ++calls; });
    EXPECT_EQ(calls, 20u);
    ASSERT_EQ(r.log.size(), 20u);
    EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Trainer, EarlyStoppingHonoursPatience) {
    auto c = quick_config(200);
    c.training.patience = 2;
    auto r = tr::train_model(c, 0, shared_data());
    EXPECT_LT(r.log.size(), 200u);
    EXPECT_LE(r.log.size(), r.best_epoch + 2);
}

TEST(Trainer, OverfitsAllSamples) {
    auto c = quick_config(200);
    const auto data = testing_support::all_in_train(shared_data());
    ASSERT_EQ(data.train.size(), 32u);
    auto r = tr::train_model(c, 0, data);
    bool reached = false;
    for (const auto& e : r.log) reached = reached || e.train_accuracy == 1.0;
    EXPECT_TRUE(reached);
}

TEST(Trainer, NonFiniteLossIsNumericError) {
    auto data = shared_data();
    data.train.front().bundle.text.rows(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        tr::train_model(quick_config(1), 0, data);
        FAIL() << "expected NumericError";
    } catch (const md::NumericError& e) {
        EXPECT_NE(std::string(e.what()).find(data.train.front().id), std::string::npos) << e.what();
    }
}

TEST(Trainer, CoverageGapsBlockPreparation) {
    const auto& p = shared_pipeline();
    md::enhance::EnhancementCache partial;
    for (const auto& m : p.manifest().instances)
        for (auto s : md::enhance::kChainSteps) {
            if (m.id == "m004" && s == md::enhance::Step::CIM) continue;
            partial.append(*p.cache->find(m.id, s));
        }
    const auto gaps = tr::coverage_gaps(p.manifest().instances, partial,
                                        {md::enhance::kChainSteps.begin(), md::enhance::kChainSteps.end()});
    EXPECT_EQ(gaps, std::vector<std::string>{"m004:CIM"});
    tr::RunConfig c;
    auto backend = tr::make_backend(c.encoder);
    try {
        tr::prepare_data(c, p.manifest(), partial, *backend);
        FAIL() << "expected ValidationError";
    } catch (const md::ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("m004:CIM"), std::string::npos);
    }
}

TEST(Trainer, RestrictStepsDropsSequences) {
    const auto r = tr::restrict_steps(shared_data(), {md::enhance::Step::ID, md::enhance::Step::CA});
    for (const auto& s : r.train) EXPECT_EQ(s.bundle.enhanced.size(), 2u);
    EXPECT_THROW(tr::restrict_steps(r, {md::enhance::Step::TM}), md::ConfigError);
}

TEST(Trainer, EmptyTrainSplitRejected) {
    tr::PreparedData empty;
    empty.classes = 2;
    empty.text_dim = empty.visual_dim = 4;
    EXPECT_THROW(tr::train_model(quick_config(1), 0, empty), md::ValidationError);
}

// ---------------------------------------------------------------------------
// checkpoint

TEST(Checkpoint, RoundTripAndEvaluate) {
    testing_support::TempDir dir("ckpt");
    const auto c = quick_config(3);
    auto r = tr::train_model(c, 0, shared_data());
    const auto& p = shared_pipeline();
    tr::Checkpoint ck{c, p.manifest().vocab.names(), 0, r.best_epoch, r.params};
    tr::save_checkpoint(dir / "ck.json", ck);
    const auto back = tr::load_checkpoint(dir / "ck.json");
    EXPECT_EQ(tr::parameter_checksum(back.params), tr::parameter_checksum(r.params));
    EXPECT_EQ(tr::config_hash(back.config), tr::config_hash(c));
    EXPECT_EQ(back.labels, ck.labels);
    EXPECT_EQ(back.epoch, r.best_epoch);

    const auto m = tr::evaluate(back, p.manifest(), *p.cache, md::data::Split::test);
    const auto want = tr::evaluate_samples(r.params, shared_data().test, 7);
    EXPECT_EQ(m.accuracy, want.accuracy);
    EXPECT_EQ(m.macro_f1, want.macro_f1);
    EXPECT_EQ(m.confusion, want.confusion);
}

TEST(Checkpoint, VocabMismatchRejected) {
    const auto& p = shared_pipeline();
    const auto c = quick_config(1);
    tr::Checkpoint ck{c, {"a", "b", "c", "d", "e", "f", "g"}, 0, 1,
                      md::fusion::init_params(tr::model_dims(c, shared_data()), c.fusion.variant, 0)};
    EXPECT_THROW(tr::evaluate(ck, p.manifest(), *p.cache, md::data::Split::test), md::ValidationError);
}

TEST(Checkpoint, CorruptFilesRejected) {
    testing_support::TempDir dir("ckbad");
    std::ofstream(dir / "a.json") << "not json";
    EXPECT_THROW(tr::load_checkpoint(dir / "a.json"), md::ValidationError);
    std::ofstream(dir / "b.json") << R"({"format": "other"})";
    EXPECT_THROW(tr::load_checkpoint(dir / "b.json"), md::ValidationError);
    EXPECT_THROW(tr::load_checkpoint(dir / "missing.json"), md::InputError);

    const auto c = quick_config(1);
    tr::Checkpoint ck{c, {"x", "y"}, 0, 1,
                      md::fusion::init_params({4, 4, 1, 4, 2}, md::fusion::FusionVariant::concat, 0)};
    auto j = tr::to_json(ck);
    j["tensors"]["classifier.W"]["shape"] = {3, 3};
    EXPECT_THROW(tr::checkpoint_from_json(j), md::ValidationError);
    j = tr::to_json(ck);
    j["tensors"]["extra"] = {{"shape", {1, 1}}, {"data", {0.0}}};
    EXPECT_THROW(tr::checkpoint_from_json(j), md::ValidationError);
}
