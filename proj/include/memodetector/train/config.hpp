#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memodetector/encode/backend.hpp"
#include "memodetector/enhance/prompts.hpp"
#include "memodetector/error.hpp"
#include "memodetector/fusion/params.hpp"
#include "memodetector/hash.hpp"

namespace memodetector::train {

struct EncoderConfig {
    encode::EncoderVariant variant = encode::EncoderVariant::toy;
    std::string vision_id = "google/vit-base-patch16-224-in21k";
    std::string text_id = "FacebookAI/xlm-roberta-base";
    /// Directory written by tools/export_features.py (pretrained variant).
    std::string store;
    std::uint64_t seed = 0;
    std::size_t dim = 32;
    std::size_t patches = 16;
    int image_size = 32;
    bool trainable = false;
};

struct FusionConfig {
    fusion::FusionVariant variant = fusion::FusionVariant::bidirectional_xattn;
    /// Per-head key width; 0 means d / heads.
    std::size_t key_dim = 0;
    std::size_t heads = 1;
    /// no_dualstage alternative reading: keep stage-1, drop only stage-2.
    bool df_keep_stage1 = false;
};

struct OptimizerConfig {
    std::string name = "adamw";
    /// 0 picks the backend default (see effective_lr).
    double lr = 0.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainingConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 30;
    /// Epochs without validation macro-F1 improvement before stopping; 0 disables.
    std::size_t patience = 5;
};

struct RunConfig {
    EncoderConfig encoder;
    FusionConfig fusion;
    std::vector<enhance::Step> steps{enhance::kChainSteps.begin(), enhance::kChainSteps.end()};
    OptimizerConfig optimizer;
    TrainingConfig training;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::string dataset;
    /// Keep only memes with this language tag; empty keeps all.
    std::string language;
    std::size_t max_text_tokens = 64;
    std::size_t max_enhanced_tokens = 128;
    std::string output_dir = "runs";
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return x;
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return x;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> seeds;
    std::size_t start = 0;
    while (start <= v.size()) {
        auto end = v.find(',', start);
        if (end == std::string::npos) end = v.size();
        auto token = v.substr(start, end - start);
        token.erase(0, token.find_first_not_of(' '));
        token.erase(token.find_last_not_of(' ') + 1);
        if (!token.empty()) seeds.push_back(parse_uint(key, token));
        start = end + 1;
    }
    return seeds;
}

}  // namespace detail

/// One overridable setting: dotted name, help text, string setter, JSON getter.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<nlohmann::json(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_uint;
    static const std::vector<ConfigKey> keys = {
        {"encoder.variant", "encoder backend: toy | pretrained",
         [](RunConfig& c, const std::string& v) {
             auto x = encode::parse_encoder_variant(v);
             if (!x) throw ConfigError("encoder.variant must be toy or pretrained");
             c.encoder.variant = *x;
         },
         [](const RunConfig& c) { return nlohmann::json(encode::to_string(c.encoder.variant)); }},
        {"encoder.vision_id", "pretrained vision encoder identifier",
         [](RunConfig& c, const std::string& v) { c.encoder.vision_id = v; },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.vision_id); }},
        {"encoder.text_id", "pretrained text encoder identifier",
         [](RunConfig& c, const std::string& v) { c.encoder.text_id = v; },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.text_id); }},
        {"encoder.store", "precomputed feature store directory (pretrained variant)",
         [](RunConfig& c, const std::string& v) { c.encoder.store = v; },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.store); }},
        {"encoder.seed", "toy encoder hash seed",
         [](RunConfig& c, const std::string& v) { c.encoder.seed = parse_uint("encoder.seed", v); },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.seed); }},
        {"encoder.dim", "toy encoder feature width d",
         [](RunConfig& c, const std::string& v) { c.encoder.dim = parse_uint("encoder.dim", v); },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.dim); }},
        {"encoder.patches", "toy encoder patch count n (perfect square)",
         [](RunConfig& c, const std::string& v) { c.encoder.patches = parse_uint("encoder.patches", v); },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.patches); }},
        {"encoder.image_size", "toy encoder input resolution",
         [](RunConfig& c, const std::string& v) {
             c.encoder.image_size = static_cast<int>(parse_uint("encoder.image_size", v));
         },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.image_size); }},
        {"encoder.trainable", "fine-tune encoder backbones (needs a differentiable backend)",
         [](RunConfig& c, const std::string& v) { c.encoder.trainable = parse_bool("encoder.trainable", v); },
         [](const RunConfig& c) { return nlohmann::json(c.encoder.trainable); }},
        {"fusion.variant", "bidirectional_xattn | add | concat | oneway_xattn | no_dualstage",
         [](RunConfig& c, const std::string& v) {
             auto x = fusion::parse_fusion_variant(v);
             if (!x) throw ConfigError("unknown fusion.variant '" + v + "'");
             c.fusion.variant = *x;
         },
         [](const RunConfig& c) { return nlohmann::json(fusion::to_string(c.fusion.variant)); }},
        {"fusion.d_k", "per-head key width (0 = d / heads)",
         [](RunConfig& c, const std::string& v) { c.fusion.key_dim = parse_uint("fusion.d_k", v); },
         [](const RunConfig& c) { return nlohmann::json(c.fusion.key_dim); }},
        {"fusion.heads", "attention heads (1 = single-head formulation)",
         [](RunConfig& c, const std::string& v) { c.fusion.heads = parse_uint("fusion.heads", v); },
         [](const RunConfig& c) { return nlohmann::json(c.fusion.heads); }},
        {"fusion.df_keep_stage1", "no_dualstage keeps stage-1 concatenation",
         [](RunConfig& c, const std::string& v) { c.fusion.df_keep_stage1 = parse_bool("fusion.df_keep_stage1", v); },
         [](const RunConfig& c) { return nlohmann::json(c.fusion.df_keep_stage1); }},
        {"enhancement.steps", "comma list of ID,TM,CIM,CA or DIRECT",
         [](RunConfig& c, const std::string& v) { c.steps = enhance::parse_step_list(v); },
         [](const RunConfig& c) { return nlohmann::json(enhance::join_steps(c.steps)); }},
        {"optimizer.name", "adamw | sgd",
         [](RunConfig& c, const std::string& v) { c.optimizer.name = v; },
         [](const RunConfig& c) { return nlohmann::json(c.optimizer.name); }},
        {"optimizer.lr", "learning rate (0 = 2e-4 toy, 2e-5 pretrained)",
         [](RunConfig& c, const std::string& v) { c.optimizer.lr = parse_double("optimizer.lr", v); },
         [](const RunConfig& c) { return nlohmann::json(c.optimizer.lr); }},
        {"optimizer.weight_decay", "decoupled weight decay",
         [](RunConfig& c, const std::string& v) { c.optimizer.weight_decay = parse_double("optimizer.weight_decay", v); },
         [](const RunConfig& c) { return nlohmann::json(c.optimizer.weight_decay); }},
        {"train.batch_size", "mini-batch size",
         [](RunConfig& c, const std::string& v) { c.training.batch_size = parse_uint("train.batch_size", v); },
         [](const RunConfig& c) { return nlohmann::json(c.training.batch_size); }},
        {"train.epochs", "maximum epochs",
         [](RunConfig& c, const std::string& v) { c.training.epochs = parse_uint("train.epochs", v); },
         [](const RunConfig& c) { return nlohmann::json(c.training.epochs); }},
        {"train.patience", "early-stop patience on validation macro-F1 (0 = off)",
         [](RunConfig& c, const std::string& v) { c.training.patience = parse_uint("train.patience", v); },
         [](const RunConfig& c) { return nlohmann::json(c.training.patience); }},
        {"seeds", "comma list of run seeds",
         [](RunConfig& c, const std::string& v) { c.seeds = detail::parse_seed_list("seeds", v); },
         [](const RunConfig& c) { return nlohmann::json(c.seeds); }},
        {"dataset.name", "dataset label used in reports (defaults to the manifest name)",
         [](RunConfig& c, const std::string& v) { c.dataset = v; },
         [](const RunConfig& c) { return nlohmann::json(c.dataset); }},
        {"dataset.language", "train/evaluate only memes with this language tag",
         [](RunConfig& c, const std::string& v) { c.language = v; },
         [](const RunConfig& c) { return nlohmann::json(c.language); }},
        {"tokens.text", "max tokens of the original meme text",
         [](RunConfig& c, const std::string& v) { c.max_text_tokens = parse_uint("tokens.text", v); },
         [](const RunConfig& c) { return nlohmann::json(c.max_text_tokens); }},
        {"tokens.enhanced", "max tokens of each enhanced text",
         [](RunConfig& c, const std::string& v) { c.max_enhanced_tokens = parse_uint("tokens.enhanced", v); },
         [](const RunConfig& c) { return nlohmann::json(c.max_enhanced_tokens); }},
        {"output_dir", "directory receiving run outputs",
         [](RunConfig& c, const std::string& v) { c.output_dir = v; },
         [](const RunConfig& c) { return nlohmann::json(c.output_dir); }},
    };
    return keys;
}

inline void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& k : config_keys())
        if (k.name == key) return k.set(config, value);
    throw ConfigError("unknown config key '" + key + "'");
}

/// Nested JSON object, e.g. {"fusion": {"variant": ...}}.
inline nlohmann::json to_json(const RunConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_keys()) {
        std::string pointer = "/" + k.name;
        std::replace(pointer.begin(), pointer.end(), '.', '/');
        j[nlohmann::json::json_pointer(pointer)] = k.get(config);
    }
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig config;
    const auto flat = j.flatten();
    for (const auto& [pointer, value] : flat.items()) {
        std::string key = pointer.substr(1);
        std::replace(key.begin(), key.end(), '/', '.');
        // the seed list flattens to seeds.0, seeds.1, ...
        if (key == "seeds" || key.starts_with("seeds.")) continue;
        std::string text;
        if (value.is_string()) text = value.get<std::string>();
        else if (value.is_boolean()) text = value.get<bool>() ? "true" : "false";
        else text = value.dump();
        set_config_value(config, key, text);
    }
    if (auto it = j.find("seeds"); it != j.end()) {
        if (it->is_array()) {
            config.seeds.clear();
            for (const auto& s : *it) config.seeds.push_back(s.get<std::uint64_t>());
        } else if (it->is_string()) {
            set_config_value(config, "seeds", it->get<std::string>());
        }
    }
    return config;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

/// Digest of every setting except the output directory.
inline std::string config_hash(const RunConfig& config) {
    auto j = to_json(config);
    j.erase("output_dir");
    return sha256_hex(j.dump()).substr(0, 16);
}

/// Digest of the settings whose names start with `prefix`.
inline std::string config_hash_of(const RunConfig& config, std::string_view prefix) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_keys())
        if (k.name.starts_with(prefix)) j[k.name] = k.get(config);
    return sha256_hex(j.dump()).substr(0, 16);
}

/// Keys whose values differ between two configs.
inline std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
    std::vector<std::string> out;
    for (const auto& k : config_keys())
        if (k.get(a) != k.get(b)) out.push_back(k.name);
    return out;
}

inline void validate(const RunConfig& c) {
    if (c.seeds.empty()) throw ConfigError("seed list must not be empty");
    if (c.steps.empty())
        throw ConfigError("no enhancement steps enabled: the enriched text sequence would be empty (M = 0)");
    const bool direct = std::find(c.steps.begin(), c.steps.end(), enhance::Step::DIRECT) != c.steps.end();
    if (direct && c.steps.size() != 1) throw ConfigError("DIRECT enhancement cannot be combined with chain steps");
    if (c.max_enhanced_tokens == 0) throw ConfigError("tokens.enhanced must be positive (M = 0 otherwise)");
    if (c.training.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (c.training.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (!(c.optimizer.lr >= 0)) throw ConfigError("optimizer.lr must be >= 0");
    if (c.optimizer.weight_decay < 0) throw ConfigError("optimizer.weight_decay must be >= 0");
    if (c.optimizer.name != "adamw" && c.optimizer.name != "sgd")
        throw ConfigError("optimizer.name must be adamw or sgd");
    if (c.fusion.heads == 0) throw ConfigError("fusion.heads must be positive");
    if (c.encoder.trainable)
        throw ConfigError("encoder.trainable: the toy and feature-store backends are frozen; "
                          "fine-tuning needs a differentiable backbone");
    if (c.encoder.variant == encode::EncoderVariant::pretrained && c.encoder.store.empty())
        throw ConfigError("encoder.variant=pretrained needs encoder.store");
}

inline double effective_lr(const RunConfig& c) {
    if (c.optimizer.lr > 0) return c.optimizer.lr;
    return c.encoder.variant == encode::EncoderVariant::pretrained ? 2e-5 : 2e-4;
}

/// Fusion dimensions for the given encoder widths and class count.
inline fusion::FusionDims make_dims(const RunConfig& c, std::size_t visual_dim, std::size_t text_dim,
                                    std::size_t classes) {
    fusion::FusionDims dims;
    dims.dim = text_dim;
    dims.visual_dim = visual_dim;
    dims.heads = c.fusion.heads;
    if (c.fusion.key_dim > 0) {
        dims.key_dim = c.fusion.key_dim;
    } else {
        if (text_dim % c.fusion.heads != 0)
            throw ConfigError("feature width " + std::to_string(text_dim) + " is not divisible by fusion.heads");
        dims.key_dim = text_dim / c.fusion.heads;
    }
    dims.classes = classes;
    return dims;
}

}  // namespace memodetector::train
