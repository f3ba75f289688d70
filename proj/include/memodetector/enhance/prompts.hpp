#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memodetector/error.hpp"
#include "memodetector/hash.hpp"

namespace memodetector::enhance {

/// ID, TM, CIM and CA form the progressive chain; DIRECT is the single-step
/// comparison variant and is never mixed with the chain in one record.
enum class Step { ID, TM, CIM, CA, DIRECT };

inline constexpr std::array<Step, 4> kChainSteps{Step::ID, Step::TM, Step::CIM, Step::CA};
inline constexpr std::array<Step, 5> kAllSteps{Step::ID, Step::TM, Step::CIM, Step::CA, Step::DIRECT};

inline std::string_view to_string(Step s) {
    switch (s) {
        case Step::ID: return "ID";
        case Step::TM: return "TM";
        case Step::CIM: return "CIM";
        case Step::CA: return "CA";
        case Step::DIRECT: return "DIRECT";
    }
    return "?";
}

inline std::optional<Step> parse_step(std::string_view s) {
    for (Step step : kAllSteps)
        if (to_string(step) == s) return step;
    return std::nullopt;
}

/// Parses "ID,TM,CIM,CA" (or "DIRECT") into canonical order.
inline std::vector<Step> parse_step_list(std::string_view text) {
    std::vector<bool> on(kAllSteps.size(), false);
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find(',', start);
        if (end == std::string_view::npos) end = text.size();
        auto token = text.substr(start, end - start);
        while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
        while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
        if (!token.empty()) {
            auto s = parse_step(token);
            if (!s) throw ConfigError("unknown enhancement step '" + std::string(token) + "'");
            on[static_cast<std::size_t>(*s)] = true;
        }
        start = end + 1;
    }
    std::vector<Step> steps;
    for (Step s : kAllSteps)
        if (on[static_cast<std::size_t>(s)]) steps.push_back(s);
    return steps;
}

inline std::string join_steps(const std::vector<Step>& steps) {
    std::string out;
    for (Step s : steps) {
        if (!out.empty()) out += ',';
        out += to_string(s);
    }
    return out;
}

inline constexpr std::string_view kTextSlot = "{...}";

/// Prompt templates. TM carries the meme text in its `{...}` slot.
/// DIRECT is a reconstruction: one request asking for the emotion plus a short rationale.
inline std::string_view prompt_template(Step step) {
    switch (step) {
        case Step::ID:
            return "Describe what is visually observable in this meme (ignore all text).";
        case Step::TM:
            return "The meme text is {...}. Analyze the meaning, tone, or rhetorical use of this "
                   "textual content.";
        case Step::CIM:
            return "State the likely intended message when image and text are viewed together.";
        case Step::CA:
            return "Suggest the possible context in which someone might use this meme.";
        case Step::DIRECT:
            return "Infer the emotion the sender of this meme most likely intends to convey, and "
                   "explain your reasoning in a short paragraph.";
    }
    return "";
}

inline std::string build_prompt(Step step, std::string_view meme_text) {
    std::string prompt(prompt_template(step));
    if (step == Step::TM) {
        const auto pos = prompt.find(kTextSlot);
        prompt.replace(pos, kTextSlot.size(), "{" + std::string(meme_text) + "}");
    }
    return prompt;
}

/// Which meme modalities a step's request carries.
struct Modalities {
    bool image = false;
    bool text = false;
};

inline Modalities step_modalities(Step step) {
    switch (step) {
        case Step::ID: return {true, false};
        case Step::TM: return {false, true};
        case Step::CIM:
        case Step::CA:
        case Step::DIRECT: return {true, true};
    }
    return {};
}

/// Digest over the template and, for steps that consume it, the meme text.
inline std::string prompt_hash(Step step, std::string_view meme_text) {
    std::string material(to_string(step));
    material += '\x1f';
    material += prompt_template(step);
    material += '\x1f';
    if (step_modalities(step).text) material += meme_text;
    return sha256_hex(material);
}

}  // namespace memodetector::enhance
