#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vlmforge/rng.hpp"

namespace vlmforge {

// Paired Polish/English instruction templates. File format: a
// "# version: <v>" line, then one "<pl>\t<en>" pair per line; blank lines
// and other '#' lines are ignored.
struct InstructionTemplates {
  std::string version;
  std::vector<std::string> pl;
  std::vector<std::string> en;

  static InstructionTemplates load(const std::filesystem::path& path);
  static InstructionTemplates parse(std::string_view text);
  std::string serialize() const;

  // Throws ConfigError if there is no template for the language.
  const std::string& pick(std::string_view language, Rng& rng) const;

  static InstructionTemplates default_ocr();
  static InstructionTemplates default_knowledge();
};

}  // namespace vlmforge
