#include "rtgformer/envdata/prompts.hpp"

#include "rtgformer/envdata/catch.hpp"

namespace rtgf::envdata {

std::string to_string(PromptVariant variant) {
  switch (variant) {
    case PromptVariant::original: return "original";
    case PromptVariant::synonyms: return "synonyms";
    case PromptVariant::contextual: return "contextual";
  }
  return "unknown";
}

PromptVariant parse_variant(const std::string& name) {
  for (auto v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw EnvError("unknown prompt variant '" + name + "' (expected original, synonyms, contextual)");
}

const std::vector<ActionPrompt>& prompt_catalog(PromptVariant variant) {
  using V = PromptVariant;
  static const std::vector<ActionPrompt> original{
      {kNoop, V::original, "Does nothing, allowing the game to continue unchanged."},
      {kLeft, V::original, "Shifts the paddle to the left, intercepting the ball."},
      {kRight, V::original, "Shifts the paddle to the right, intercepting the ball."},
  };
  static const std::vector<ActionPrompt> synonyms{
      {kNoop, V::synonyms, "Takes no move, letting the match proceed unaltered."},
      {kLeft, V::synonyms, "Slides the bat leftward, catching the falling sphere."},
      {kRight, V::synonyms, "Slides the bat rightward, catching the falling sphere."},
  };
  static const std::vector<ActionPrompt> contextual{
      {kNoop, V::contextual, "What would happen if the paddle simply stayed where it is while play goes on?"},
      {kLeft, V::contextual, "What would happen if the paddle moved one cell left toward the dropping ball?"},
      {kRight, V::contextual, "What would happen if the paddle moved one cell right toward the dropping ball?"},
  };
  switch (variant) {
    case V::original: return original;
    case V::synonyms: return synonyms;
    case V::contextual: return contextual;
  }
  throw EnvError("prompt_catalog: invalid variant");
}

}  // namespace rtgf::envdata
