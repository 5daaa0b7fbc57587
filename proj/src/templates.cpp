#include "vlmforge/templates.hpp"

#include <fstream>
#include <sstream>

#include "vlmforge/errors.hpp"

namespace vlmforge {

InstructionTemplates InstructionTemplates::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

InstructionTemplates InstructionTemplates::parse(std::string_view text) {
  InstructionTemplates t;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view kVersion = "# version:";
      if (line.rfind(kVersion, 0) == 0) {
        t.version = line.substr(kVersion.size());
        t.version.erase(0, t.version.find_first_not_of(' '));
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw ConfigError("template line " + std::to_string(lineno) + ": expected '<pl>\\t<en>'");
    }
    t.pl.push_back(line.substr(0, tab));
    t.en.push_back(line.substr(tab + 1));
  }
  if (t.pl.empty()) throw ConfigError("template set is empty");
  return t;
}

std::string InstructionTemplates::serialize() const {
  std::string out = "# version: " + version + "\n";
  for (std::size_t i = 0; i < pl.size(); ++i) out += pl[i] + "\t" + en[i] + "\n";
  return out;
}

const std::string& InstructionTemplates::pick(std::string_view language, Rng& rng) const {
  const auto& set = language == "pl" ? pl : en;
  if (set.empty() || (language != "pl" && language != "en")) {
    throw ConfigError("no instruction template for language '" + std::string(language) + "'");
  }
  return set[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(set.size()) - 1))];
}

InstructionTemplates InstructionTemplates::default_ocr() {
  return InstructionTemplates{
      "ocr-1",
      {"Przepisz widoczny tekst.", "Odczytaj tekst widoczny na obrazie.",
       "Jaki tekst znajduje się na tym obrazie?", "Przepisz dokładnie cały tekst z obrazu.",
       "Co jest napisane na obrazie?", "Podaj treść napisu widocznego na zdjęciu."},
      {"Read the text shown.", "Read the text visible in the image.",
       "What text appears in this image?", "Transcribe all of the text in the image exactly.",
       "What is written in the image?", "Give the content of the text visible in the picture."},
  };
}

InstructionTemplates InstructionTemplates::default_knowledge() {
  return InstructionTemplates{
      "knowledge-1",
      {"Opisz obraz.", "Co przedstawia ten obraz?", "Opisz, co widać na zdjęciu."},
      {"Describe the image.", "What does this image show?", "Describe what is visible in the picture."},
  };
}

}  // namespace vlmforge
