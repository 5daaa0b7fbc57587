#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vlmforge {

// Decodes UTF-8; throws ConfigError on malformed input.
std::u32string utf8_decode(std::string_view s);

// Code points mapped to a real glyph by a TrueType/OpenType font's cmap
// (formats 4 and 12).
class FontCoverage {
 public:
  static FontCoverage from_file(const std::filesystem::path& path);
  static FontCoverage from_bytes(std::string_view data);

  bool covers(char32_t cp) const;
  // Whitespace is not required to have a glyph.
  bool covers_text(std::string_view utf8) const;
  std::vector<char32_t> missing(std::string_view utf8) const;
  std::size_t size() const;

  const std::vector<std::pair<char32_t, char32_t>>& ranges() const { return ranges_; }

 private:
  std::vector<std::pair<char32_t, char32_t>> ranges_;  // inclusive, sorted, disjoint
};

}  // namespace vlmforge
