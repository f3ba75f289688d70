#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memodetector/data/manifest.hpp"
#include "memodetector/enhance/cache.hpp"
#include "memodetector/error.hpp"
#include "memodetector/fusion/params.hpp"
#include "memodetector/hash.hpp"
#include "memodetector/train/config.hpp"
#include "memodetector/train/trainer.hpp"

namespace memodetector::train {

/// Parameters plus everything needed to rebuild the run: config and label names.
struct Checkpoint {
    RunConfig config;
    std::vector<std::string> labels;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    fusion::FusionParams params;
};

inline constexpr const char* kCheckpointFormat = "memodetector.checkpoint";

inline nlohmann::json to_json(const Checkpoint& ck) {
    nlohmann::ordered_json tensors;
    ck.params.for_each([&](const std::string& name, const Eigen::MatrixXd& m) {
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(m.size()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
        tensors[name] = {{"shape", {m.rows(), m.cols()}}, {"data", data}};
    });
    const auto& d = ck.params.dims;
    nlohmann::ordered_json j;
    j["format"] = kCheckpointFormat;
    j["version"] = 1;
    j["config"] = to_json(ck.config);
    j["labels"] = ck.labels;
    j["seed"] = ck.seed;
    j["epoch"] = ck.epoch;
    j["model"] = {{"variant", fusion::to_string(ck.params.variant)},
                  {"keep_stage1", ck.params.keep_stage1},
                  {"dim", d.dim},
                  {"visual_dim", d.visual_dim},
                  {"heads", d.heads},
                  {"key_dim", d.key_dim},
                  {"classes", d.classes}};
    j["tensors"] = std::move(tensors);
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat)
            throw ValidationError("not a memodetector checkpoint");
        Checkpoint ck;
        ck.config = config_from_json(j.at("config"));
        ck.labels = j.at("labels").get<std::vector<std::string>>();
        ck.seed = j.at("seed").get<std::uint64_t>();
        ck.epoch = j.at("epoch").get<std::size_t>();
        const auto& m = j.at("model");
        auto variant = fusion::parse_fusion_variant(m.at("variant").get<std::string>());
        if (!variant) throw ValidationError("checkpoint has unknown fusion variant");
        fusion::FusionDims dims{m.at("dim").get<std::size_t>(), m.at("visual_dim").get<std::size_t>(),
                                m.at("heads").get<std::size_t>(), m.at("key_dim").get<std::size_t>(),
                                m.at("classes").get<std::size_t>()};
        ck.params = fusion::init_params(dims, *variant, 0, m.at("keep_stage1").get<bool>());
        const auto& tensors = j.at("tensors");
        std::size_t seen = 0;
        ck.params.for_each([&](const std::string& name, Eigen::MatrixXd& t) {
            const auto& rec = tensors.at(name);
            const auto shape = rec.at("shape").get<std::vector<Eigen::Index>>();
            const auto data = rec.at("data").get<std::vector<double>>();
            if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols() ||
                data.size() != static_cast<std::size_t>(t.size()))
                throw ValidationError("checkpoint tensor '" + name + "' has the wrong shape");
            std::size_t k = 0;
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = data[k++];
            ++seen;
        });
        if (seen != tensors.size()) throw ValidationError("checkpoint carries unexpected tensors");
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << to_json(ck).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

/// sha256 over the raw little-endian bytes of every tensor, in canonical order.
inline std::string parameter_checksum(const fusion::FusionParams& params) {
    std::vector<std::uint8_t> bytes;
    params.for_each([&](const std::string& name, const Eigen::MatrixXd& m) {
        bytes.insert(bytes.end(), name.begin(), name.end());
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const auto bits = std::bit_cast<std::uint64_t>(m(r, c));
                for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
            }
    });
    return sha256_hex(bytes);
}

/// Metrics of a checkpoint on one split of a manifest.
inline Metrics evaluate(const Checkpoint& ck, const data::DatasetManifest& manifest,
                        const enhance::EnhancementCache& cache, data::Split split) {
    if (ck.labels != manifest.vocab.names())
        throw ValidationError("checkpoint label vocabulary does not match manifest '" + manifest.name + "'");
    const auto backend = make_backend(ck.config.encoder);
    auto subset = select_language(manifest, ck.config.language);
    subset.instances = data::split_view(subset, split);
    const auto prepared = prepare_data(subset, cache, *backend, ck.config.steps, ck.config.max_text_tokens,
                                       ck.config.max_enhanced_tokens, {}, false);
    return evaluate_samples(ck.params, prepared.split(split), prepared.classes);
}

}  // namespace memodetector::train
