#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "memodetector/encode/backend.hpp"
#include "memodetector/error.hpp"
#include "memodetector/hash.hpp"

namespace memodetector::encode {

// Pretrained backbones (a patch-based ViT and a multilingual masked LM) run
// offline through tools/export_features.py; this backend serves their outputs.
//
// Layout:
//   <store>/store.json          {"vision_id", "text_id", "visual_dim", "text_dim", "image_size"}
//   <store>/visual/<sha256>.bin  keyed by the encoded image file bytes
//   <store>/textual/<sha256>.bin keyed by the UTF-8 text
// Each .bin: "MDFS", u32 version (1), u32 rows, u32 dim, rows*dim float32, all little-endian.

inline constexpr std::array<char, 4> kFeatureMagic{'M', 'D', 'F', 'S'};

namespace detail {

inline std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline Eigen::MatrixXd read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("no precomputed features at " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || !std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), buf.begin()))
        throw InputError(path.string() + " is not a feature file");
    if (detail::read_u32_le(buf.data() + 4) != 1) throw InputError(path.string() + ": unsupported version");
    const auto rows = detail::read_u32_le(buf.data() + 8);
    const auto dim = detail::read_u32_le(buf.data() + 12);
    if (buf.size() != 16 + std::size_t{rows} * dim * 4) throw InputError(path.string() + ": truncated");
    Eigen::MatrixXd m(rows, dim);
    const unsigned char* p = buf.data() + 16;
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < dim; ++c, p += 4)
            m(r, c) = static_cast<double>(std::bit_cast<float>(detail::read_u32_le(p)));
    return m;
}

inline void write_feature_file(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kFeatureMagic.data(), 4);
    detail::write_u32_le(out, 1);
    detail::write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            detail::write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
}

struct FeatureStoreInfo {
    std::string vision_id;
    std::string text_id;
    std::size_t visual_dim = 768;
    std::size_t text_dim = 768;
    int image_size = 224;
};

inline void write_store_info(const std::filesystem::path& store, const FeatureStoreInfo& info) {
    std::filesystem::create_directories(store);
    std::ofstream out(store / "store.json");
    out << nlohmann::json{{"vision_id", info.vision_id},
                          {"text_id", info.text_id},
                          {"visual_dim", info.visual_dim},
                          {"text_dim", info.text_dim},
                          {"image_size", info.image_size}}
               .dump(2)
        << '\n';
}

class FeatureStoreEncoder final : public EncoderBackend {
public:
    /// Empty ids skip the identity check against store.json.
    FeatureStoreEncoder(std::filesystem::path store, std::string_view vision_id, std::string_view text_id)
        : store_(std::move(store)) {
        std::ifstream in(store_ / "store.json");
        if (!in) throw ConfigError("feature store " + store_.string() + " has no store.json");
        try {
            auto j = nlohmann::json::parse(in);
            info_.vision_id = j.at("vision_id").get<std::string>();
            info_.text_id = j.at("text_id").get<std::string>();
            info_.visual_dim = j.at("visual_dim").get<std::size_t>();
            info_.text_dim = j.at("text_dim").get<std::size_t>();
            info_.image_size = j.value("image_size", 224);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("feature store metadata: " + std::string(e.what()));
        }
        if (!vision_id.empty() && vision_id != info_.vision_id)
            throw ConfigError("feature store was built with vision encoder '" + info_.vision_id +
                              "', config asks for '" + std::string(vision_id) + "'");
        if (!text_id.empty() && text_id != info_.text_id)
            throw ConfigError("feature store was built with text encoder '" + info_.text_id +
                              "', config asks for '" + std::string(text_id) + "'");
    }

    EncoderVariant variant() const override { return EncoderVariant::pretrained; }
    std::size_t visual_dim() const override { return info_.visual_dim; }
    std::size_t text_dim() const override { return info_.text_dim; }
    /// Features are looked up by source digest, so any resolution is accepted.
    int image_size() const override { return 0; }
    const FeatureStoreInfo& info() const noexcept { return info_; }

    FeatureSequence encode_image(const data::RgbImage& image) const override {
        if (image.digest.empty()) throw InputError("image has no source digest");
        auto m = read_feature_file(store_ / "visual" / (image.digest + ".bin"));
        check(m, info_.visual_dim, "visual");
        if (m.rows() == 0) throw InputError("visual features for " + image.digest + " are empty");
        return FeatureSequence(std::move(m), SequenceKind::visual);
    }

    FeatureSequence encode_text(std::string_view text, std::size_t max_tokens) const override {
        if (text.empty() || max_tokens == 0) return FeatureSequence::empty(info_.text_dim, SequenceKind::textual);
        auto m = read_feature_file(store_ / "textual" / (sha256_hex(text) + ".bin"));
        check(m, info_.text_dim, "textual");
        if (static_cast<std::size_t>(m.rows()) > max_tokens)
            m.conservativeResize(static_cast<Eigen::Index>(max_tokens), m.cols());
        return FeatureSequence(std::move(m), SequenceKind::textual);
    }

private:
    static void check(const Eigen::MatrixXd& m, std::size_t dim, const char* what) {
        if (static_cast<std::size_t>(m.cols()) != dim)
            throw InputError(std::string(what) + " feature width " + std::to_string(m.cols()) +
                             " != store width " + std::to_string(dim));
        if (!m.allFinite()) throw InputError(std::string(what) + " features contain non-finite values");
    }

    std::filesystem::path store_;
    FeatureStoreInfo info_;
};

}  // namespace memodetector::encode
