#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "memodetector/enhance/client.hpp"
#include "memodetector/error.hpp"

namespace memodetector::enhance {

/// Deterministic stand-in for a real endpoint.
///
/// Echo mode returns the prompt. Canned mode returns fixture text keyed by
/// "<meme_id>/<STEP>" or "<STEP>", falling back to echo. A fault hook may throw
/// or return a replacement response to simulate failures. Every request is recorded.
class MockMllmClient : public MllmClient {
public:
    /// Returns std::nullopt to proceed normally; may throw EndpointError.
    using FaultHook = std::function<std::optional<std::string>(const MllmRequest&)>;

    explicit MockMllmClient(ClientSettings settings = default_settings())
        : MllmClient(std::move(settings)) {}

    static ClientSettings default_settings() {
        ClientSettings s;
        s.base_url = "mock://echo";
        s.model_id = "mock-echo";
        s.retry.initial_backoff = std::chrono::milliseconds{0};
        return s;
    }

    /// Loads a JSON object of fixture responses.
    void load_fixtures(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw InputError("cannot open mock fixture " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw InputError("mock fixture " + path.string() + ": " + e.what());
        }
        if (!j.is_object()) throw InputError("mock fixture must be a JSON object");
        for (auto& [k, v] : j.items()) canned_[k] = v.get<std::string>();
    }

    void set_response(const std::string& key, std::string text) { canned_[key] = std::move(text); }
    void set_fault(FaultHook hook) { fault_ = std::move(hook); }

    std::string complete(const MllmRequest& request) override {
        {
            std::lock_guard lock(mutex_);
            received_.push_back(request);
        }
        ++calls_;
        if (fault_)
            if (auto replaced = fault_(request)) return *replaced;
        const std::string step(to_string(request.step));
        if (auto it = canned_.find(request.meme_id + "/" + step); it != canned_.end()) return it->second;
        if (auto it = canned_.find(step); it != canned_.end()) return it->second;
        return request.prompt;
    }

    std::size_t calls() const noexcept { return calls_.load(); }

    std::vector<MllmRequest> received() const {
        std::lock_guard lock(mutex_);
        return received_;
    }

private:
    std::map<std::string, std::string> canned_;
    FaultHook fault_;
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mutex_;
    std::vector<MllmRequest> received_;
};

}  // namespace memodetector::enhance
