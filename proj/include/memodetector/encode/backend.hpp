#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "memodetector/data/image.hpp"
#include "memodetector/encode/feature.hpp"

namespace memodetector::encode {

enum class EncoderVariant { pretrained, toy };

inline std::string_view to_string(EncoderVariant v) {
    return v == EncoderVariant::toy ? "toy" : "pretrained";
}

inline std::optional<EncoderVariant> parse_encoder_variant(std::string_view s) {
    if (s == "toy") return EncoderVariant::toy;
    if (s == "pretrained") return EncoderVariant::pretrained;
    return std::nullopt;
}

/// Image and text encoder pair. Implementations are immutable after
/// construction and safe to share across threads.
class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;

    virtual EncoderVariant variant() const = 0;
    virtual std::size_t visual_dim() const = 0;
    virtual std::size_t text_dim() const = 0;
    /// Square input resolution encode_image expects.
    virtual int image_size() const = 0;

    virtual FeatureSequence encode_image(const data::RgbImage& image) const = 0;
    virtual FeatureSequence encode_text(std::string_view text, std::size_t max_tokens) const = 0;
};

inline FeatureSequence encode_image(const EncoderBackend& backend, const data::RgbImage& image) {
    return backend.encode_image(image);
}

inline FeatureSequence encode_text(const EncoderBackend& backend, std::string_view text,
                                   std::size_t max_tokens) {
    return backend.encode_text(text, max_tokens);
}

}  // namespace memodetector::encode
