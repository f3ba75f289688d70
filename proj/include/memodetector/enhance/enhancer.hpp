#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "memodetector/data/image.hpp"
#include "memodetector/data/manifest.hpp"
#include "memodetector/enhance/cache.hpp"
#include "memodetector/enhance/client.hpp"
#include "memodetector/enhance/prompts.hpp"
#include "memodetector/error.hpp"

namespace memodetector::enhance {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct EnhanceOptions {
    /// Directory that relative image paths resolve against.
    std::filesystem::path image_root;
    std::size_t workers = 4;
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
    std::function<std::string()> clock = utc_timestamp;
};

struct FailedStep {
    std::string meme_id;
    Step step;
    std::string message;
};

struct EnhanceSummary {
    std::size_t hits = 0;
    std::size_t misses = 0;
    std::size_t failures = 0;
    std::size_t endpoint_calls = 0;
    std::vector<FailedStep> failed;
};

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n\v\f");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n\v\f");
    return std::string(s.substr(first, last - first + 1));
}

namespace detail {

inline ImageAttachment prepare_image(const MllmClient& client, const data::MemeInstance& meme,
                                     const std::filesystem::path& root) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = data::read_image_bytes(root, meme);
    } catch (const InputError& e) {
        throw PreprocessingError(e.what());
    }
    if (bytes.size() > client.settings().max_image_bytes)
        throw PreprocessingError("meme '" + meme.id + "': image is " + std::to_string(bytes.size()) +
                                 " bytes, limit " + std::to_string(client.settings().max_image_bytes));
    auto mime = data::image_mime_type(bytes);
    try {
        (void)data::decode_rgb(bytes);
    } catch (const InputError& e) {
        throw PreprocessingError("meme '" + meme.id + "': " + e.what());
    }
    return {std::move(bytes), mime.empty() ? "application/octet-stream" : mime};
}

inline MllmRequest make_request(const MllmClient& client, const data::MemeInstance& meme, Step step,
                                const std::optional<ImageAttachment>& image) {
    MllmRequest req;
    req.prompt = build_prompt(step, meme.text);
    req.step = step;
    req.meme_id = meme.id;
    req.temperature = client.settings().temperature;
    req.max_tokens = client.settings().max_tokens;
    const auto mods = step_modalities(step);
    if (mods.image) req.image = image;
    if (mods.text && step != Step::TM) req.text = meme.text;  // TM interpolates T into the prompt
    return req;
}

/// Transport failures retry with exponential backoff up to the policy's
/// attempt count; an empty answer is retried once and then reported.
inline std::string execute(MllmClient& client, const MllmRequest& req, const EnhanceOptions& opts,
                           std::atomic<std::size_t>* calls) {
    const auto& policy = client.settings().retry;
    auto backoff = policy.initial_backoff;
    int transport_failures = 0;
    int empty_answers = 0;
    for (;;) {
        std::string text;
        try {
            if (calls) ++*calls;
            text = trim(client.complete(req));
        } catch (const EndpointError& e) {
            if (++transport_failures >= policy.attempts)
                throw EndpointError("meme '" + req.meme_id + "' step " + std::string(to_string(req.step)) +
                                    ": " + e.what() + " (after " + std::to_string(transport_failures) +
                                    " attempts)");
            opts.sleep(backoff);
            backoff *= 2;
            continue;
        }
        if (!text.empty()) return text;
        if (++empty_answers >= 2)
            throw GenerationError("meme '" + req.meme_id + "' step " + std::string(to_string(req.step)) +
                                  ": empty response after retry");
    }
}

}  // namespace detail

/// Runs one enhancement step for one meme and returns the trimmed answer.
inline std::string enhance_step(MllmClient& client, const data::MemeInstance& meme, Step step,
                                const EnhanceOptions& opts = {}) {
    std::optional<ImageAttachment> image;
    if (step_modalities(step).image) image = detail::prepare_image(client, meme, opts.image_root);
    return detail::execute(client, detail::make_request(client, meme, step, image), opts, nullptr);
}

inline std::string enhance_direct(MllmClient& client, const data::MemeInstance& meme,
                                  const EnhanceOptions& opts = {}) {
    return enhance_step(client, meme, Step::DIRECT, opts);
}

/// Fills the cache for every meme x step. Steps of one meme run in canonical
/// order (ID, TM, CIM, CA, then DIRECT); memes are spread over `opts.workers`
/// threads. Failures are collected, never fatal.
inline EnhanceSummary enhance_all(MllmClient& client, const data::DatasetManifest& manifest,
                                  EnhancementCache& cache, const std::vector<Step>& steps,
                                  EnhanceOptions opts = {}) {
    if (opts.image_root.empty()) opts.image_root = manifest.base_dir;
    std::vector<Step> ordered;
    for (Step s : kAllSteps)
        if (std::find(steps.begin(), steps.end(), s) != steps.end()) ordered.push_back(s);

    std::atomic<std::size_t> next{0}, hits{0}, misses{0}, calls{0};
    std::mutex failed_mutex;
    std::vector<FailedStep> failed;
    auto fail = [&](const data::MemeInstance& meme, Step s, std::string msg) {
        std::lock_guard lock(failed_mutex);
        failed.push_back({meme.id, s, std::move(msg)});
    };

    auto worker = [&] {
        for (std::size_t i = next++; i < manifest.instances.size(); i = next++) {
            const auto& meme = manifest.instances[i];
            std::optional<ImageAttachment> image;
            std::optional<std::string> image_error;
            for (Step s : ordered) {
                const auto hash = prompt_hash(s, meme.text);
                if (cache.has_current(meme.id, s, client.settings().model_id, hash)) {
                    ++hits;
                    continue;
                }
                ++misses;
                try {
                    if (step_modalities(s).image && !image) {
                        if (image_error) throw PreprocessingError(*image_error);
                        try {
                            image = detail::prepare_image(client, meme, opts.image_root);
                        } catch (const PreprocessingError& e) {
                            image_error = e.what();
                            throw;
                        }
                    }
                    auto req = detail::make_request(client, meme, s, image);
                    auto text = detail::execute(client, req, opts, &calls);
                    cache.append({meme.id, s, client.settings().model_id, hash, req.temperature,
                                  req.max_tokens, std::move(text), opts.clock()});
                } catch (const Error& e) {
                    fail(meme, s, e.what());
                }
            }
        }
    };

    const std::size_t n_workers =
        std::max<std::size_t>(1, std::min(opts.workers, manifest.instances.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }

    std::sort(failed.begin(), failed.end(), [](const FailedStep& a, const FailedStep& b) {
        return std::tie(a.meme_id, a.step) < std::tie(b.meme_id, b.step);
    });
    EnhanceSummary summary;
    summary.hits = hits;
    summary.misses = misses;
    summary.endpoint_calls = calls;
    summary.failures = failed.size();
    summary.failed = std::move(failed);
    return summary;
}

}  // namespace memodetector::enhance
