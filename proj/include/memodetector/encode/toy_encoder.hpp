#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memodetector/encode/backend.hpp"
#include "memodetector/error.hpp"
#include "memodetector/hash.hpp"

namespace memodetector::encode {

struct ToyEncoderOptions {
    std::uint64_t seed = 0;
    std::size_t dim = 32;
    /// Patch count; must be a perfect square.
    std::size_t patches = 16;
    /// Square input resolution; must be divisible by sqrt(patches).
    int image_size = 32;
};

/// Splits on ASCII whitespace.
inline std::vector<std::string_view> whitespace_tokens(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    auto is_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
    };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) tokens.push_back(text.substr(start, i - start));
    }
    return tokens;
}

/// Hash-based test double: every token, and every image patch's byte block,
/// maps to a fixed vector of d values uniform on [-sqrt3, sqrt3] (unit variance).
/// Pure integer hashing plus one correctly rounded sqrt keeps outputs bit-identical
/// across platforms.
class ToyEncoder final : public EncoderBackend {
public:
    explicit ToyEncoder(ToyEncoderOptions options = {}) : opts_(options) {
        grid_ = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(opts_.patches))));
        if (opts_.patches == 0 || grid_ * grid_ != opts_.patches)
            throw ConfigError("toy encoder patch count must be a positive perfect square");
        if (opts_.dim == 0) throw ConfigError("toy encoder dimension must be positive");
        if (opts_.image_size <= 0 || static_cast<std::size_t>(opts_.image_size) % grid_ != 0)
            throw ConfigError("toy encoder image size must be divisible by the patch grid");
    }

    EncoderVariant variant() const override { return EncoderVariant::toy; }
    std::size_t visual_dim() const override { return opts_.dim; }
    std::size_t text_dim() const override { return opts_.dim; }
    int image_size() const override { return opts_.image_size; }
    const ToyEncoderOptions& options() const noexcept { return opts_; }

    FeatureSequence encode_image(const data::RgbImage& image) const override {
        if (image.width != opts_.image_size || image.height != opts_.image_size)
            throw InputError("toy encoder expects " + std::to_string(opts_.image_size) + "x" +
                             std::to_string(opts_.image_size) + " input, got " +
                             std::to_string(image.width) + "x" + std::to_string(image.height));
        if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
            throw InputError("image pixel buffer does not match its dimensions");
        const int side = opts_.image_size / static_cast<int>(grid_);
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(opts_.patches), static_cast<Eigen::Index>(opts_.dim));
        std::vector<std::uint8_t> block(static_cast<std::size_t>(side) * side * 3);
        for (std::size_t p = 0; p < opts_.patches; ++p) {
            const int x0 = static_cast<int>(p % grid_) * side;
            const int y0 = static_cast<int>(p / grid_) * side;
            auto out = block.begin();
            for (int y = y0; y < y0 + side; ++y) out = std::copy_n(image.at(x0, y), side * 3, out);
            fill_row(rows, static_cast<Eigen::Index>(p), 'v', block);
        }
        return FeatureSequence(std::move(rows), SequenceKind::visual);
    }

    FeatureSequence encode_text(std::string_view text, std::size_t max_tokens) const override {
        auto tokens = whitespace_tokens(text);
        if (tokens.size() > max_tokens) tokens.resize(max_tokens);
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(opts_.dim));
        for (std::size_t t = 0; t < tokens.size(); ++t)
            fill_row(rows, static_cast<Eigen::Index>(t), 't',
                     std::span(reinterpret_cast<const std::uint8_t*>(tokens[t].data()), tokens[t].size()));
        return FeatureSequence(std::move(rows), SequenceKind::textual);
    }

private:
    void fill_row(Eigen::MatrixXd& rows, Eigen::Index r, char domain,
                  std::span<const std::uint8_t> bytes) const {
        static const double scale = std::sqrt(3.0);
        std::uint64_t state = seeded_hash(opts_.seed, domain, bytes);
        for (Eigen::Index j = 0; j < rows.cols(); ++j)
            rows(r, j) = (2.0 * unit_interval(splitmix64(state)) - 1.0) * scale;
    }

    ToyEncoderOptions opts_;
    std::size_t grid_ = 0;
};

}  // namespace memodetector::encode
