#pragma once

// The vlmforge command line: subcommand dispatch, configuration resolution
// (flags, then config file, then VLMFORGE_* environment, then defaults) and
// the run record every successful invocation leaves behind.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vlmforge {

inline constexpr const char* kToolVersion = "0.1.0";

// Flat "key = value" lines; '#' starts a comment line.
std::map<std::string, std::string> parse_flat_config(std::string_view text);

// SHA-256 of a file, or of "relative-path\tsha256\n" lines over a directory
// tree sorted by path. Files named in `skip` are left out.
std::string digest_path(const std::filesystem::path& path, const std::vector<std::filesystem::path>& skip = {});

struct RunRecord {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();          // option -> resolved value
  nlohmann::json config_sources = nlohmann::json::object();  // option -> flag|config|env|default
  std::map<std::string, std::string> inputs;                 // path -> digest
  std::map<std::string, std::string> outputs;
  std::string started;
  std::string finished;
  long long elapsed_ms = 0;

  nlohmann::json to_json() const;
};

// Returns the process exit code: 0 success, 1 data or service error, 2 usage
// error. Diagnostics go to `err`, regular output to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace vlmforge
