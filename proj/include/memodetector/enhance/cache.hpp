#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memodetector/enhance/prompts.hpp"
#include "memodetector/error.hpp"

namespace memodetector::enhance {

struct CacheEntry {
    std::string meme_id;
    Step step = Step::ID;
    std::string model_id;
    std::string prompt_hash;
    double temperature = 0.0;
    int max_tokens = 0;
    std::string text;
    std::string ts;
};

inline std::string to_json_line(const CacheEntry& e) {
    nlohmann::ordered_json j;
    j["meme_id"] = e.meme_id;
    j["step"] = to_string(e.step);
    j["model_id"] = e.model_id;
    j["prompt_hash"] = e.prompt_hash;
    j["temperature"] = e.temperature;
    j["max_tokens"] = e.max_tokens;
    j["text"] = e.text;
    j["ts"] = e.ts;
    return j.dump();
}

inline CacheEntry parse_cache_line(const std::string& line, std::size_t lineno) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(lineno, std::string("invalid cache record: ") + e.what());
    }
    try {
        CacheEntry e;
        e.meme_id = j.at("meme_id").get<std::string>();
        auto step = parse_step(j.at("step").get<std::string>());
        if (!step) throw ParseError(lineno, "unknown step in cache record");
        e.step = *step;
        e.model_id = j.at("model_id").get<std::string>();
        e.prompt_hash = j.at("prompt_hash").get<std::string>();
        e.temperature = j.at("temperature").get<double>();
        e.max_tokens = j.value("max_tokens", 0);
        e.text = j.at("text").get<std::string>();
        e.ts = j.value("ts", "");
        return e;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(lineno, std::string("invalid cache record: ") + e.what());
    }
}

/// The texts generated for one meme, plus their provenance.
struct EnhancementRecord {
    std::string meme_id;
    std::map<Step, std::string> texts;
    std::map<Step, std::string> prompt_hashes;
    std::string model_id;
    double temperature = 0.0;
    int max_tokens = 0;

    bool has(Step s) const { return texts.contains(s); }

    /// True when the record holds exactly the four chain steps, all non-empty.
    bool complete_chain() const {
        if (texts.size() != kChainSteps.size()) return false;
        for (Step s : kChainSteps) {
            auto it = texts.find(s);
            if (it == texts.end() || it->second.empty()) return false;
        }
        return true;
    }
};

/// Append-only JSON Lines store keyed by (meme_id, step). On load the last
/// record for a key wins. Appends are serialized through one writer.
class EnhancementCache {
public:
    EnhancementCache() = default;

    explicit EnhancementCache(std::filesystem::path path) : path_(std::move(path)) {
        std::ifstream in(path_, std::ios::binary);
        if (!in) return;  // fresh cache
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            auto e = parse_cache_line(line, lineno);
            auto key = std::make_pair(e.meme_id, e.step);
            entries_[std::move(key)] = std::move(e);
        }
    }

    const std::filesystem::path& path() const noexcept { return path_; }

    std::optional<CacheEntry> find(const std::string& meme_id, Step step) const {
        std::lock_guard lock(mutex_);
        auto it = entries_.find({meme_id, step});
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    /// A hit requires matching model and prompt digest, so a template or model
    /// change re-queries instead of silently reusing stale text.
    bool has_current(const std::string& meme_id, Step step, const std::string& model_id,
                     const std::string& prompt_hash) const {
        std::lock_guard lock(mutex_);
        auto it = entries_.find({meme_id, step});
        return it != entries_.end() && it->second.model_id == model_id &&
               it->second.prompt_hash == prompt_hash && !it->second.text.empty();
    }

    void append(CacheEntry entry) {
        std::lock_guard lock(mutex_);
        if (!path_.empty()) {
            if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
            std::ofstream out(path_, std::ios::binary | std::ios::app);
            if (!out) throw Error("cannot append to cache " + path_.string());
            out << to_json_line(entry) << '\n';
            out.flush();
        }
        auto key = std::make_pair(entry.meme_id, entry.step);
        entries_[std::move(key)] = std::move(entry);
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

    /// Record restricted to `steps`; throws ConfigError on a DIRECT/chain mix.
    EnhancementRecord record(const std::string& meme_id, const std::vector<Step>& steps) const {
        bool direct = false, chain = false;
        for (Step s : steps) (s == Step::DIRECT ? direct : chain) = true;
        if (direct && chain)
            throw ConfigError("DIRECT enhancement cannot be combined with the four-step chain");
        EnhancementRecord rec;
        rec.meme_id = meme_id;
        std::lock_guard lock(mutex_);
        for (Step s : steps) {
            auto it = entries_.find({meme_id, s});
            if (it == entries_.end()) continue;
            rec.texts[s] = it->second.text;
            rec.prompt_hashes[s] = it->second.prompt_hash;
            rec.model_id = it->second.model_id;
            rec.temperature = it->second.temperature;
            rec.max_tokens = it->second.max_tokens;
        }
        return rec;
    }

private:
    std::filesystem::path path_;
    std::map<std::pair<std::string, Step>, CacheEntry> entries_;
    mutable std::mutex mutex_;
};

}  // namespace memodetector::enhance
