#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memodetector/data/image.hpp"
#include "memodetector/data/manifest.hpp"
#include "memodetector/enhance/prompts.hpp"
#include "memodetector/rng.hpp"

namespace memodetector::data {

/// Small labelled corpus with class-correlated images and texts, plus canned
/// MLLM responses for every step, for desk-scale runs of the full pipeline.
struct SyntheticOptions {
    std::size_t count = 32;
    std::vector<std::string> labels{"happiness", "love", "anger", "sorrow", "fear", "hate", "surprise"};
    std::uint64_t seed = 0;
    int image_size = 32;
    std::string name = "synthetic";
    /// Tag every meme with this language; empty leaves it unset.
    std::string language;
};

struct SyntheticCorpus {
    DatasetManifest manifest;
    std::filesystem::path manifest_path;
    /// JSON object "<meme_id>/<STEP>" -> response, loadable by the mock client.
    std::filesystem::path fixtures_path;
};

namespace detail {

inline constexpr std::array<const char*, 12> kFiller{"when", "the", "monday", "cat", "boss", "friday",
                                                     "coffee", "exam", "weekend", "dog", "pizza", "rain"};

inline std::string filler(Rng& rng, std::size_t words) {
    std::string out;
    for (std::size_t i = 0; i < words; ++i) out += std::string(i ? " " : "") + kFiller[rng.below(kFiller.size())];
    return out;
}

}  // namespace detail

/// Split by position: of every ten memes eight go to train, one to val, one to test.
inline Split synthetic_split(std::size_t index) {
    const auto r = index % 10;
    return r < 8 ? Split::train : (r == 8 ? Split::val : Split::test);
}

inline SyntheticCorpus write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticOptions& opt = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    Rng rng(opt.seed);
    SyntheticCorpus corpus;
    corpus.manifest.name = opt.name;
    corpus.manifest.vocab = LabelVocab(opt.labels);
    corpus.manifest.base_dir = dir;
    nlohmann::ordered_json fixtures = nlohmann::ordered_json::object();

    const int size = opt.image_size;
    const int block = std::max(1, size / 4);
    for (std::size_t i = 0; i < opt.count; ++i) {
        const std::size_t label = i % opt.labels.size();
        const auto& word = opt.labels[label];

        // Top-left block carries a class colour, the rest is noise.
        RgbImage img;
        img.width = img.height = size;
        img.pixels.resize(static_cast<std::size_t>(size) * size * 3);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    auto& px = img.pixels[(static_cast<std::size_t>(y) * size + x) * 3 + ch];
                    px = (x < block && y < block) ? static_cast<std::uint8_t>((label * 37 + ch * 91) % 256)
                                                  : static_cast<std::uint8_t>(rng.below(256));
                }
        char id[32];
        std::snprintf(id, sizeof id, "m%03zu", i);
        const std::string file = std::string("images/") + id + ".png";
        const auto png = encode_png(img);
        std::ofstream(dir / file, std::ios::binary)
            .write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));

        MemeInstance m;
        m.id = id;
        m.image = file;
        m.text = word + " " + detail::filler(rng, 3);
        m.label = label;
        m.split = synthetic_split(i);
        if (!opt.language.empty()) m.language = opt.language;
        corpus.manifest.instances.push_back(m);

        const std::string key = m.id + "/";
        fixtures[key + "ID"] = "a picture in shade " + std::to_string(label) + " showing " + detail::filler(rng, 2);
        fixtures[key + "TM"] = "the caption reads as " + word + " in tone";
        fixtures[key + "CIM"] = "together they express " + word + " about " + detail::filler(rng, 2);
        fixtures[key + "CA"] = "someone might post this to share " + word;
        fixtures[key + "DIRECT"] = "the sender most likely conveys " + word + " because " + detail::filler(rng, 3);
    }

    corpus.manifest_path = dir / "manifest.jsonl";
    write_manifest(corpus.manifest_path, corpus.manifest);
    corpus.fixtures_path = dir / "fixtures.json";
    std::ofstream(corpus.fixtures_path) << fixtures.dump(2) << '\n';
    return corpus;
}

}  // namespace memodetector::data
