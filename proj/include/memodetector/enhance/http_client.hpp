#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
// <resolv.h> defines _res as a macro, which clashes with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "memodetector/enhance/client.hpp"
#include "memodetector/error.hpp"
#include "memodetector/hash.hpp"

namespace memodetector::enhance {

/// Builds the chat-completions request body: one user message whose content
/// interleaves the image (as a data URL), the meme text, and the prompt.
inline nlohmann::json chat_completion_body(const std::string& model_id, const MllmRequest& request) {
    nlohmann::json content = nlohmann::json::array();
    if (request.image) {
        const std::string url = "data:" + request.image->mime_type + ";base64," +
                                base64_encode(request.image->bytes);
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
    }
    if (request.text) content.push_back({{"type", "text"}, {"text", "Meme text: " + *request.text}});
    content.push_back({{"type", "text"}, {"text", request.prompt}});
    return {
        {"model", model_id},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})},
    };
}

/// Extracts choices[0].message.content, accepting string or content-part arrays.
inline std::string chat_completion_text(const nlohmann::json& response) {
    const auto& choices = response.at("choices");
    if (!choices.is_array() || choices.empty()) throw GenerationError("response has no choices");
    const auto& content = choices.at(0).at("message").at("content");
    if (content.is_null()) return {};
    if (content.is_string()) return content.get<std::string>();
    std::string out;
    for (const auto& part : content)
        if (part.value("type", "") == "text") out += part.value("text", "");
    return out;
}

class HttpMllmClient : public MllmClient {
public:
    explicit HttpMllmClient(ClientSettings settings) : MllmClient(std::move(settings)) {
        const auto& url = settings_.base_url;
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("endpoint URL must include a scheme: " + url);
        const auto path_start = url.find('/', scheme_end + 3);
        host_ = url.substr(0, path_start);
        path_ = path_start == std::string::npos ? std::string() : url.substr(path_start);
        while (!path_.empty() && path_.back() == '/') path_.pop_back();
        path_ += "/chat/completions";
    }

    std::string complete(const MllmRequest& request) override {
        httplib::Client cli(host_);
        const auto secs = settings_.timeout.count() / 1000;
        const auto usecs = (settings_.timeout.count() % 1000) * 1000;
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        cli.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (const char* token = std::getenv(settings_.token_env.c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);

        const auto body = chat_completion_body(settings_.model_id, request).dump();
        auto res = cli.Post(path_, headers, body, "application/json");
        if (!res)
            throw EndpointError("request to " + host_ + path_ + " failed: " + httplib::to_string(res.error()));
        if (res->status == 401 || res->status == 403)
            throw EndpointError("endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
        if (res->status < 200 || res->status >= 300)
            throw EndpointError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                                res->body.substr(0, 200));
        try {
            return chat_completion_text(nlohmann::json::parse(res->body));
        } catch (const nlohmann::json::exception& e) {
            throw EndpointError(std::string("malformed endpoint response: ") + e.what());
        }
    }

private:
    std::string host_;
    std::string path_;
};

}  // namespace memodetector::enhance
