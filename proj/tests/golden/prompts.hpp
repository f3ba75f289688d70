#pragma once

#include <string>
#include <vector>

#include "memodetector/enhance/prompts.hpp"

namespace golden {

struct PromptCase {
    memodetector::enhance::Step step;
    std::string text;
    std::string expected;
};

inline const std::vector<PromptCase>& prompt_cases() {
    using memodetector::enhance::Step;
    static const std::vector<PromptCase> cases{
        {Step::ID, "anything", "Describe what is visually observable in this meme (ignore all text)."},
        {Step::TM, "lol ok",
         "The meme text is {lol ok}. Analyze the meaning, tone, or rhetorical use of this textual content."},
        {Step::CIM, "x", "State the likely intended message when image and text are viewed together."},
        {Step::CA, "", "Suggest the possible context in which someone might use this meme."},
        {Step::DIRECT, "x",
         "Infer the emotion the sender of this meme most likely intends to convey, and explain your reasoning "
         "in a short paragraph."},
        {Step::TM, "", "The meme text is {}. Analyze the meaning, tone, or rhetorical use of this textual content."},
        {Step::TM, "我很好",
         "The meme text is {我很好}. Analyze the meaning, tone, or rhetorical use of this textual content."},
    };
    return cases;
}

}  // namespace golden
