#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "memodetector/enhance/prompts.hpp"

namespace memodetector::enhance {

struct ImageAttachment {
    std::vector<std::uint8_t> bytes;
    std::string mime_type;
};

/// One chat request. `image` and `text` are the meme modalities attached as
/// message content; `step` and `meme_id` are bookkeeping and are not sent.
struct MllmRequest {
    std::string prompt;
    std::optional<ImageAttachment> image;
    std::optional<std::string> text;
    double temperature = 0.0;
    int max_tokens = 512;
    Step step = Step::ID;
    std::string meme_id;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
};

struct ClientSettings {
    std::string base_url;
    std::string model_id;
    /// Environment variable holding the bearer token; unset means no auth header.
    std::string token_env = "MEMODETECTOR_API_KEY";
    double temperature = 0.0;
    int max_tokens = 512;
    std::chrono::milliseconds timeout{120000};
    RetryPolicy retry;
    std::size_t max_image_bytes = 20u << 20;
};

/// Chat-completions style endpoint. `complete` makes exactly one attempt and
/// throws EndpointError on transport/auth failure; retries live in the caller.
class MllmClient {
public:
    explicit MllmClient(ClientSettings settings) : settings_(std::move(settings)) {}
    virtual ~MllmClient() = default;

    MllmClient(const MllmClient&) = delete;
    MllmClient& operator=(const MllmClient&) = delete;

    const ClientSettings& settings() const noexcept { return settings_; }

    virtual std::string complete(const MllmRequest& request) = 0;

protected:
    ClientSettings settings_;
};

}  // namespace memodetector::enhance
