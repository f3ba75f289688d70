#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "memodetector/error.hpp"
#include "memodetector/rng.hpp"

namespace memodetector::data {

enum class Split { train, val, test };

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::val, Split::test};

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    return std::nullopt;
}

/// One meme. `image` is a path relative to the manifest directory, an absolute
/// path, or a `data:<mime>;base64,<payload>` URI carrying the raw bytes.
struct MemeInstance {
    std::string id;
    std::string image;
    std::string text;
    std::size_t label = 0;
    Split split = Split::train;
    std::optional<std::string> language;

    bool operator==(const MemeInstance&) const = default;
};

/// Ordered emotion-class names declared by a manifest header.
class LabelVocab {
public:
    LabelVocab() = default;

    explicit LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
        if (names_.size() < 2)
            throw ValidationError("label vocabulary needs at least 2 classes, got " +
                                  std::to_string(names_.size()));
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i].empty()) throw ValidationError("label names must be non-empty");
            if (!index_.emplace(names_[i], i).second)
                throw ValidationError("duplicate label name '" + names_[i] + "'");
        }
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::string& name(std::size_t i) const { return names_.at(i); }

    std::optional<std::size_t> index_of(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool operator==(const LabelVocab& other) const { return names_ == other.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct DatasetManifest {
    std::string name;
    LabelVocab vocab;
    std::vector<MemeInstance> instances;
    /// Directory that relative image paths resolve against.
    std::filesystem::path base_dir;
};

/// Used for records that omit the split tag.
struct SplitAssignment {
    std::uint64_t seed = 0;
    std::array<unsigned, 3> ratio{8, 1, 1};
};

inline std::array<unsigned, 3> parse_split_ratio(std::string_view text) {
    std::array<unsigned, 3> ratio{};
    std::size_t part = 0;
    std::string token;
    auto flush = [&] {
        if (part >= 3 || token.empty()) throw ConfigError("split ratio must look like 8:1:1");
        try {
            ratio[part++] = static_cast<unsigned>(std::stoul(token));
        } catch (const std::exception&) {
            throw ConfigError("split ratio must look like 8:1:1");
        }
        token.clear();
    };
    for (char c : text) {
        if (c == ':') flush();
        else token.push_back(c);
    }
    flush();
    if (part != 3 || ratio[0] + ratio[1] + ratio[2] == 0)
        throw ConfigError("split ratio must look like 8:1:1");
    return ratio;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(line, std::string("missing field '") + key + "'");
    return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    const auto& v = require(obj, key, line);
    if (!v.is_string()) throw ParseError(line, std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline void assign_missing_splits(std::vector<MemeInstance>& instances,
                                  const std::vector<std::size_t>& missing,
                                  const SplitAssignment& assignment) {
    std::vector<std::size_t> order = missing;
    Rng rng(assignment.seed);
    rng.shuffle(std::span(order));
    const auto total = assignment.ratio[0] + assignment.ratio[1] + assignment.ratio[2];
    const std::size_t n_train = order.size() * assignment.ratio[0] / total;
    const std::size_t n_val = order.size() * assignment.ratio[1] / total;
    for (std::size_t k = 0; k < order.size(); ++k) {
        Split s = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
        instances[order[k]].split = s;
    }
}

}  // namespace detail

/// Parses a JSON Lines manifest. The first non-blank line must be the header.
inline DatasetManifest parse_manifest(std::istream& in, const SplitAssignment& assignment = {}) {
    DatasetManifest manifest;
    std::unordered_map<std::string, std::size_t> seen;  // id -> line
    std::vector<std::size_t> missing_split;
    bool have_header = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!rec.is_object()) throw ParseError(lineno, "record must be a JSON object");
        const std::string kind = detail::require_string(rec, "kind", lineno);

        if (!have_header) {
            if (kind != "header") throw ParseError(lineno, "first record must be the header");
            manifest.name = detail::require_string(rec, "name", lineno);
            const auto& labels = detail::require(rec, "labels", lineno);
            if (!labels.is_array()) throw ParseError(lineno, "'labels' must be an array");
            std::vector<std::string> names;
            for (const auto& l : labels) {
                if (!l.is_string()) throw ParseError(lineno, "label names must be strings");
                names.push_back(l.get<std::string>());
            }
            try {
                manifest.vocab = LabelVocab(std::move(names));
            } catch (const ValidationError& e) {
                throw ValidationError(lineno, e.what());
            }
            have_header = true;
            continue;
        }
        if (kind == "header") throw ParseError(lineno, "second header record");
        if (kind != "meme") throw ParseError(lineno, "unknown record kind '" + kind + "'");

        MemeInstance m;
        m.id = detail::require_string(rec, "id", lineno);
        m.image = detail::require_string(rec, "image", lineno);
        m.text = detail::require_string(rec, "text", lineno);
        const std::string label = detail::require_string(rec, "label", lineno);
        if (m.id.empty()) throw ParseError(lineno, "empty meme id");
        auto idx = manifest.vocab.index_of(label);
        if (!idx)
            throw ValidationError(lineno, "label '" + label + "' is not declared in the header");
        m.label = *idx;
        if (auto it = rec.find("split"); it != rec.end() && !it->is_null()) {
            if (!it->is_string()) throw ParseError(lineno, "field 'split' must be a string");
            auto s = parse_split(it->get<std::string>());
            if (!s) throw ParseError(lineno, "split must be one of train|val|test");
            m.split = *s;
        } else {
            missing_split.push_back(manifest.instances.size());
        }
        if (auto it = rec.find("language"); it != rec.end() && !it->is_null()) {
            if (!it->is_string()) throw ParseError(lineno, "field 'language' must be a string");
            m.language = it->get<std::string>();
        }
        if (auto [it, fresh] = seen.emplace(m.id, lineno); !fresh)
            throw ValidationError(lineno, "duplicate id '" + m.id + "' (first seen on line " +
                                              std::to_string(it->second) + ")");
        manifest.instances.push_back(std::move(m));
    }
    if (!have_header) throw ParseError(lineno == 0 ? 1 : lineno, "missing header record");
    if (!missing_split.empty())
        detail::assign_missing_splits(manifest.instances, missing_split, assignment);
    return manifest;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path,
                                     const SplitAssignment& assignment = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open manifest " + path.string());
    auto manifest = parse_manifest(in, assignment);
    manifest.base_dir = path.parent_path();
    return manifest;
}

/// Canonical serialization: header first, then memes with a fixed key order.
inline void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
    nlohmann::ordered_json header;
    header["kind"] = "header";
    header["name"] = manifest.name;
    header["labels"] = manifest.vocab.names();
    out << header.dump() << '\n';
    for (const auto& m : manifest.instances) {
        nlohmann::ordered_json rec;
        rec["kind"] = "meme";
        rec["id"] = m.id;
        rec["image"] = m.image;
        rec["text"] = m.text;
        rec["label"] = manifest.vocab.name(m.label);
        rec["split"] = to_string(m.split);
        if (m.language) rec["language"] = *m.language;
        out << rec.dump() << '\n';
    }
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write manifest " + path.string());
    write_manifest(out, manifest);
}

inline std::vector<MemeInstance> split_view(const DatasetManifest& manifest, Split split) {
    std::vector<MemeInstance> out;
    std::copy_if(manifest.instances.begin(), manifest.instances.end(), std::back_inserter(out),
                 [split](const MemeInstance& m) { return m.split == split; });
    return out;
}

/// Keeps instances whose language tag equals `language`; untagged memes are dropped.
inline DatasetManifest filter_language(const DatasetManifest& manifest, std::string_view language) {
    DatasetManifest out{manifest.name, manifest.vocab, {}, manifest.base_dir};
    for (const auto& m : manifest.instances)
        if (m.language && *m.language == language) out.instances.push_back(m);
    return out;
}

/// Throws unless every split has at least one instance.
inline void require_all_splits(const DatasetManifest& manifest) {
    for (Split s : kAllSplits) {
        const bool any = std::any_of(manifest.instances.begin(), manifest.instances.end(),
                                     [s](const MemeInstance& m) { return m.split == s; });
        if (!any)
            throw ValidationError("manifest '" + manifest.name + "' has no " +
                                  std::string(to_string(s)) + " instances");
    }
}

}  // namespace memodetector::data
