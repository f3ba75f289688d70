#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "memodetector/data/image.hpp"
#include "memodetector/data/manifest.hpp"
#include "memodetector/encode/bundle.hpp"
#include "memodetector/encode/feature_store.hpp"
#include "memodetector/encode/toy_encoder.hpp"
#include "memodetector/enhance/cache.hpp"
#include "memodetector/fusion/model.hpp"
#include "memodetector/hash.hpp"
#include "memodetector/rng.hpp"
#include "memodetector/train/config.hpp"
#include "memodetector/train/metrics.hpp"
#include "memodetector/train/optimizer.hpp"

namespace memodetector::train {

inline std::unique_ptr<encode::EncoderBackend> make_backend(const EncoderConfig& c) {
    if (c.variant == encode::EncoderVariant::toy)
        return std::make_unique<encode::ToyEncoder>(
            encode::ToyEncoderOptions{c.seed, c.dim, c.patches, c.image_size});
    if (c.store.empty()) throw ConfigError("pretrained encoder needs encoder.store");
    return std::make_unique<encode::FeatureStoreEncoder>(c.store, c.vision_id, c.text_id);
}

struct Sample {
    std::string id;
    std::size_t label = 0;
    encode::FeatureBundle bundle;
};

/// Encoded splits; encoders are frozen, so features are computed once per run.
struct PreparedData {
    std::vector<Sample> train, val, test;
    std::size_t classes = 0;
    std::size_t visual_dim = 0;
    std::size_t text_dim = 0;

    const std::vector<Sample>& split(data::Split s) const {
        return s == data::Split::train ? train : (s == data::Split::val ? val : test);
    }
};

/// "<meme_id>:<STEP>" for every enabled step the cache cannot supply.
inline std::vector<std::string> coverage_gaps(const std::vector<data::MemeInstance>& memes,
                                              const enhance::EnhancementCache& cache,
                                              const std::vector<enhance::Step>& steps) {
    std::vector<std::string> gaps;
    for (const auto& m : memes)
        for (auto s : steps) {
            auto e = cache.find(m.id, s);
            if (!e || e->text.empty()) gaps.push_back(m.id + ":" + std::string(enhance::to_string(s)));
        }
    return gaps;
}

inline data::DatasetManifest select_language(const data::DatasetManifest& manifest, const std::string& language) {
    return language.empty() ? manifest : data::filter_language(manifest, language);
}

/// Pre-flight checks, then decodes and encodes every instance of the manifest.
inline PreparedData prepare_data(const data::DatasetManifest& full, const enhance::EnhancementCache& cache,
                                 const encode::EncoderBackend& backend, const std::vector<enhance::Step>& steps,
                                 std::size_t max_text_tokens, std::size_t max_enhanced_tokens,
                                 const std::string& language = {}, bool require_splits = true) {
    const auto manifest = select_language(full, language);
    if (require_splits) data::require_all_splits(manifest);
    if (auto gaps = coverage_gaps(manifest.instances, cache, steps); !gaps.empty()) {
        std::string msg = std::to_string(gaps.size()) + " missing enhancement entries:";
        for (std::size_t i = 0; i < gaps.size() && i < 20; ++i) msg += " " + gaps[i];
        if (gaps.size() > 20) msg += " ...";
        throw ValidationError(msg);
    }
    PreparedData out;
    out.classes = manifest.vocab.size();
    out.visual_dim = backend.visual_dim();
    out.text_dim = backend.text_dim();
    encode::BundleSettings settings{steps, max_text_tokens, max_enhanced_tokens};
    for (const auto& m : manifest.instances) {
        const auto image = data::load_rgb(manifest.base_dir, m);
        Sample s{m.id, m.label, encode::encode_bundle(backend, image, m, cache.record(m.id, steps), settings)};
        (m.split == data::Split::train ? out.train : m.split == data::Split::val ? out.val : out.test)
            .push_back(std::move(s));
    }
    return out;
}

inline PreparedData prepare_data(const RunConfig& c, const data::DatasetManifest& manifest,
                                 const enhance::EnhancementCache& cache, const encode::EncoderBackend& backend) {
    return prepare_data(manifest, cache, backend, c.steps, c.max_text_tokens, c.max_enhanced_tokens, c.language);
}

/// Copy keeping only the given enhancement steps in every bundle.
inline PreparedData restrict_steps(const PreparedData& data, const std::vector<enhance::Step>& steps) {
    PreparedData out = data;
    for (auto* split : {&out.train, &out.val, &out.test})
        for (auto& s : *split) {
            std::map<enhance::Step, encode::FeatureSequence> kept;
            for (auto step : steps) {
                auto it = s.bundle.enhanced.find(step);
                if (it == s.bundle.enhanced.end())
                    throw ConfigError("prepared features lack step " + std::string(enhance::to_string(step)));
                kept.emplace(step, std::move(it->second));
            }
            s.bundle.enhanced = std::move(kept);
        }
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainResult {
    std::uint64_t seed = 0;
    fusion::FusionParams params;  // best validation macro-F1
    std::size_t best_epoch = 0;
    double best_val_macro_f1 = 0.0;
    std::vector<EpochRecord> log;
};

inline Metrics evaluate_samples(const fusion::FusionParams& params, const std::vector<Sample>& samples,
                                std::size_t classes) {
    ConfusionMatrix cm(classes);
    for (const auto& s : samples) cm.add(s.label, fusion::forward(params, s.bundle).predicted());
    return compute_metrics(cm);
}

/// Independent streams for initialisation and shuffling, derived from the run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t state = seed ^ (0xa0761d6478bd642fULL * (stream + 1));
    return splitmix64(state);
}

inline fusion::FusionDims model_dims(const RunConfig& c, const PreparedData& data) {
    return make_dims(c, data.visual_dim, data.text_dim, data.classes);
}

/// Mini-batch training on the mean cross-entropy. Deterministic given
/// (config, seed, data); keeps the parameters with the best validation macro-F1
/// (earliest epoch on ties; last epoch if there is no validation split).
inline TrainResult train_model(const RunConfig& c, std::uint64_t seed, const PreparedData& data,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    validate(c);
    if (data.train.empty()) throw ValidationError("no training instances");
    auto params = fusion::init_params(model_dims(c, data), c.fusion.variant, derive_seed(seed, 0),
                                      c.fusion.df_keep_stage1);
    auto oc = c.optimizer;
    oc.lr = effective_lr(c);
    auto optimizer = make_optimizer(oc);
    Rng shuffle_rng(derive_seed(seed, 1));

    TrainResult result;
    result.seed = seed;
    result.params = params;
    result.best_val_macro_f1 = -1.0;
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= c.training.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span(order));
        double total_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += c.training.batch_size) {
            const std::size_t end = std::min(order.size(), start + c.training.batch_size);
            const double weight = 1.0 / static_cast<double>(end - start);
            auto grad = params.zeros_like();
            for (std::size_t k = start; k < end; ++k) {
                const auto& sample = data.train[order[k]];
                fusion::ForwardTrace trace;
                try {
                    trace = fusion::forward_trace(params, sample.bundle);
                } catch (const NumericError& e) {
                    throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " on meme '" +
                                       sample.id + "' (seed " + std::to_string(seed) + ")");
                }
                const double loss = fusion::loss_and_gradient(params, trace, sample.label, grad, weight);
                if (!std::isfinite(loss))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on meme '" +
                                       sample.id + "' (seed " + std::to_string(seed) + ")");
                total_loss += loss;
            }
            optimizer->step(params, grad);
            if (!params.all_finite())
                throw NumericError("parameters became non-finite at epoch " + std::to_string(epoch) +
                                   "; lower optimizer.lr");
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total_loss / static_cast<double>(order.size());
        rec.train_accuracy = evaluate_samples(params, data.train, data.classes).accuracy;
        if (!data.val.empty()) {
            const auto val = evaluate_samples(params, data.val, data.classes);
            rec.val_accuracy = val.accuracy;
            rec.val_macro_f1 = val.macro_f1;
        }
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (data.val.empty() || rec.val_macro_f1 > result.best_val_macro_f1) {
            result.params = params;
            result.best_epoch = epoch;
            result.best_val_macro_f1 = rec.val_macro_f1;
            since_best = 0;
        } else if (c.training.patience > 0 && ++since_best >= c.training.patience) {
            break;
        }
    }
    return result;
}

}  // namespace memodetector::train
