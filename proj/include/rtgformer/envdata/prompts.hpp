#pragma once

#include <string>
#include <vector>

namespace rtgf::envdata {

enum class PromptVariant { original, synonyms, contextual };

inline constexpr PromptVariant kAllVariants[] = {PromptVariant::original, PromptVariant::synonyms,
                                                 PromptVariant::contextual};

std::string to_string(PromptVariant variant);
PromptVariant parse_variant(const std::string& name);

struct ActionPrompt {
  int action_id;
  PromptVariant variant;
  std::string text;
};

/// Natural-language descriptions of the three Catch actions, one per id, in
/// id order.
const std::vector<ActionPrompt>& prompt_catalog(PromptVariant variant);

}  // namespace rtgf::envdata
