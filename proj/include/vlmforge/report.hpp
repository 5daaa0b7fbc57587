#pragma once

// Text tables and a static bar chart over evaluation summaries: MC accuracy
// summaries, arena reports and annotation pool reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "vlmforge/annotate.hpp"

namespace vlmforge {

struct AccuracyRow {
  std::string model;
  std::string variant;
  std::string accuracy;  // percent, two decimals
  std::uint64_t matched = 0;
  std::uint64_t unmatched = 0;
  std::uint64_t total = 0;
};

struct PreferenceRow {
  std::string model_x;
  std::string model_y;
  std::string criterion;
  std::string source;  // judge id or "human"
  std::uint64_t win_x = 0;
  std::uint64_t win_y = 0;
  std::uint64_t tie = 0;
};

struct ReportData {
  std::vector<AccuracyRow> accuracy;
  std::vector<PreferenceRow> preferences;
};

// Sorts each file into its table by shape. Annotation reports carry only
// comparison ids; `pool` supplies the model names.
ReportData load_report_data(std::span<const std::filesystem::path> files, const AnnotationPool* pool);

std::string render_text(const ReportData& data);

// One stacked win/tie/loss bar per preference row, 8UC3.
cv::Mat render_chart(const ReportData& data);

}  // namespace vlmforge
