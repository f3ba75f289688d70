#pragma once

#include <string>
#include <vector>

#include "memodetector/data/image.hpp"
#include "memodetector/data/manifest.hpp"
#include "memodetector/encode/backend.hpp"
#include "memodetector/enhance/cache.hpp"

namespace memodetector::encode {

struct BundleSettings {
    std::vector<enhance::Step> steps{enhance::kChainSteps.begin(), enhance::kChainSteps.end()};
    std::size_t max_text_tokens = 64;
    std::size_t max_enhanced_tokens = 128;
};

/// Resizes to the backend's resolution (if it has one) and encodes.
inline FeatureSequence encode_meme_image(const EncoderBackend& backend, const data::RgbImage& image) {
    const int size = backend.image_size();
    if (size > 0) return backend.encode_image(data::resize(image, size, size));
    return backend.encode_image(image);
}

inline FeatureBundle encode_bundle(const EncoderBackend& backend, const data::RgbImage& image,
                                   const data::MemeInstance& meme, const enhance::EnhancementRecord& record,
                                   const BundleSettings& settings) {
    for (auto s : settings.steps)
        if (!record.has(s))
            throw ConfigError("meme '" + meme.id + "' has no cached " + std::string(enhance::to_string(s)) +
                              " enhancement");
    FeatureBundle bundle;
    bundle.visual = encode_meme_image(backend, image);
    bundle.text = backend.encode_text(meme.text, settings.max_text_tokens);
    for (auto s : settings.steps)
        bundle.enhanced[s] = backend.encode_text(record.texts.at(s), settings.max_enhanced_tokens);
    return bundle;
}

}  // namespace memodetector::encode
