#include "vlmforge/report.hpp"

#include <algorithm>
#include <cstdio>

#include <opencv2/imgproc.hpp>

#include "vlmforge/io.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

void add_preferences(ReportData& d, const std::string& x, const std::string& y, const std::string& source,
                     const std::string& criterion, const json& r) {
  if (!r.contains("win_x")) return;
  d.preferences.push_back({x, y, criterion, source, r.at("win_x").get<std::uint64_t>(),
                           r.at("win_y").get<std::uint64_t>(), r.at("tie").get<std::uint64_t>()});
}

std::string pct(std::uint64_t n, std::uint64_t total) {
  return total == 0 ? "-" : format_hundredths(percent_hundredths(n, total));
}

std::string pad(std::string s, std::size_t width) {
  // Pads by code points so Polish names line up.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  if (cps < width) s.append(width - cps, ' ');
  return s;
}

}  // namespace

ReportData load_report_data(std::span<const std::filesystem::path> files, const AnnotationPool* pool) {
  ReportData d;
  for (const auto& f : files) {
    const json j = read_json_file(f);
    if (j.contains("accuracy") && j.contains("variant")) {
      d.accuracy.push_back({j.value("model", std::string()), j.at("variant").get<std::string>(),
                            j.at("accuracy").get<std::string>(), j.value("matched", std::uint64_t{0}),
                            j.value("unmatched", std::uint64_t{0}), j.value("total", std::uint64_t{0})});
    } else if (j.contains("reports") && j.contains("model_x")) {
      for (const auto& [criterion, r] : j.at("reports").items()) {
        add_preferences(d, j.at("model_x").get<std::string>(), j.at("model_y").get<std::string>(),
                        j.value("judge", std::string("judge")), criterion, r);
      }
    } else if (j.contains("comparisons") && j.contains("pool")) {
      for (const auto& c : j.at("comparisons")) {
        const auto id = c.at("comparison").get<std::string>();
        std::string x = id + ":x", y = id + ":y";
        if (pool) {
          const auto& cmp = pool->comparison(id);
          x = cmp.model_x;
          y = cmp.model_y;
        }
        for (const char* criterion : {"linguistic", "content"}) add_preferences(d, x, y, "human", criterion, c.at(criterion));
      }
    } else {
      throw ConfigError("unrecognised summary document " + f.string());
    }
  }
  return d;
}

std::string render_text(const ReportData& d) {
  std::string out;
  if (!d.accuracy.empty()) {
    out += "MC accuracy\n";
    out += pad("model", 28) + pad("variant", 9) + pad("accuracy", 10) + pad("matched", 9) + pad("unmatched", 11) + "total\n";
    for (const auto& r : d.accuracy) {
      out += pad(r.model, 28) + pad(r.variant, 9) + pad(r.accuracy + "%", 10) + pad(std::to_string(r.matched), 9) +
             pad(std::to_string(r.unmatched), 11) + std::to_string(r.total) + "\n";
    }
  }
  if (!d.preferences.empty()) {
    if (!out.empty()) out += "\n";
    out += "Preference rates (x over y)\n";
    out += pad("x", 24) + pad("y", 24) + pad("criterion", 12) + pad("judge", 12) + pad("x", 7) + pad("y", 7) +
           pad("tie", 7) + pad("pref x", 9) + "win+tie x\n";
    for (const auto& r : d.preferences) {
      const auto n = r.win_x + r.win_y + r.tie;
      out += pad(r.model_x, 24) + pad(r.model_y, 24) + pad(r.criterion, 12) + pad(r.source, 12) +
             pad(std::to_string(r.win_x), 7) + pad(std::to_string(r.win_y), 7) + pad(std::to_string(r.tie), 7) +
             pad(pct(r.win_x, n) + "%", 9) + pct(r.win_x + r.tie, n) + "%\n";
    }
  }
  if (out.empty()) out = "no summaries\n";
  return out;
}

cv::Mat render_chart(const ReportData& d) {
  const int row_h = 34, label_w = 420, bar_w = 520, margin = 16;
  const int rows = static_cast<int>(std::max<std::size_t>(d.preferences.size(), 1));
  cv::Mat img(margin * 2 + 30 + rows * row_h, label_w + bar_w + margin * 2 + 60, CV_8UC3, cv::Scalar::all(255));
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  cv::putText(img, "win / tie / loss for x", {margin, margin + 14}, font, 0.5, cv::Scalar::all(0), 1, cv::LINE_AA);
  const cv::Scalar win(80, 160, 60), tie(170, 170, 170), loss(60, 80, 200);
  for (std::size_t i = 0; i < d.preferences.size(); ++i) {
    const auto& r = d.preferences[i];
    const int y = margin + 30 + static_cast<int>(i) * row_h;
    const std::string label = r.model_x + " vs " + r.model_y + " [" + r.criterion + ", " + r.source + "]";
    cv::putText(img, label, {margin, y + 20}, font, 0.42, cv::Scalar::all(0), 1, cv::LINE_AA);
    const double n = static_cast<double>(r.win_x + r.win_y + r.tie);
    if (n == 0) continue;
    int x = margin + label_w;
    for (const auto& [count, colour] : {std::pair{r.win_x, win}, std::pair{r.tie, tie}, std::pair{r.win_y, loss}}) {
      const int w = static_cast<int>(bar_w * (count / n) + 0.5);
      if (w > 0) cv::rectangle(img, cv::Rect(x, y + 4, w, row_h - 10), colour, cv::FILLED);
      x += w;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * r.win_x / n);
    cv::putText(img, buf, {margin + label_w + bar_w + 6, y + 20}, font, 0.42, cv::Scalar::all(0), 1, cv::LINE_AA);
  }
  return img;
}

}  // namespace vlmforge
