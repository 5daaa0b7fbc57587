#include "vlmforge/font.hpp"

#include <algorithm>
#include <cstdint>

#include "vlmforge/errors.hpp"
#include "vlmforge/io.hpp"

namespace vlmforge {

namespace {

class Bytes {
 public:
  explicit Bytes(std::string_view d) : d_(d) {}
  std::uint16_t u16(std::size_t off) const {
    check(off, 2);
    return static_cast<std::uint16_t>((byte(off) << 8) | byte(off + 1));
  }
  std::uint32_t u32(std::size_t off) const {
    check(off, 4);
    return (std::uint32_t{byte(off)} << 24) | (std::uint32_t{byte(off + 1)} << 16) |
           (std::uint32_t{byte(off + 2)} << 8) | byte(off + 3);
  }
  std::string_view tag(std::size_t off) const {
    check(off, 4);
    return d_.substr(off, 4);
  }

 private:
  unsigned char byte(std::size_t off) const { return static_cast<unsigned char>(d_[off]); }
  void check(std::size_t off, std::size_t n) const {
    if (off + n > d_.size()) throw ConfigError("font file truncated");
  }
  std::string_view d_;
};

void add_range(std::vector<std::pair<char32_t, char32_t>>& out, char32_t lo, char32_t hi) {
  if (!out.empty() && out.back().second + 1 >= lo && out.back().first <= lo) {
    out.back().second = std::max(out.back().second, hi);
  } else {
    out.emplace_back(lo, hi);
  }
}

void parse_format4(const Bytes& b, std::size_t t, std::vector<std::pair<char32_t, char32_t>>& out) {
  const std::size_t seg_count = b.u16(t + 6) / 2;
  const std::size_t ends = t + 14;
  const std::size_t starts = ends + 2 * seg_count + 2;
  const std::size_t deltas = starts + 2 * seg_count;
  const std::size_t range_offsets = deltas + 2 * seg_count;
  for (std::size_t s = 0; s < seg_count; ++s) {
    const std::uint32_t end = b.u16(ends + 2 * s);
    const std::uint32_t start = b.u16(starts + 2 * s);
    const std::uint16_t delta = b.u16(deltas + 2 * s);
    const std::uint16_t ro = b.u16(range_offsets + 2 * s);
    if (start == 0xFFFF) continue;
    for (std::uint32_t c = start; c <= end; ++c) {
      std::uint16_t glyph;
      if (ro == 0) {
        glyph = static_cast<std::uint16_t>(c + delta);
      } else {
        const std::size_t addr = range_offsets + 2 * s + ro + 2 * (c - start);
        glyph = b.u16(addr);
        if (glyph != 0) glyph = static_cast<std::uint16_t>(glyph + delta);
      }
      if (glyph != 0) add_range(out, c, c);
    }
  }
}

void parse_format12(const Bytes& b, std::size_t t, std::vector<std::pair<char32_t, char32_t>>& out) {
  const std::uint32_t groups = b.u32(t + 12);
  for (std::uint32_t g = 0; g < groups; ++g) {
    const std::size_t off = t + 16 + 12 * static_cast<std::size_t>(g);
    const char32_t lo = b.u32(off);
    const char32_t hi = b.u32(off + 4);
    const std::uint32_t glyph = b.u32(off + 8);
    if (hi < lo) continue;
    add_range(out, glyph == 0 ? lo + 1 : lo, hi);
  }
}

}  // namespace

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1, cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2, cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3, cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4, cp = c & 0x07;
    } else {
      throw ConfigError("invalid UTF-8 lead byte");
    }
    if (i + len > s.size()) throw ConfigError("truncated UTF-8 sequence");
    for (int k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) throw ConfigError("invalid UTF-8 continuation byte");
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

FontCoverage FontCoverage::from_file(const std::filesystem::path& path) {
  return from_bytes(read_file(path));
}

FontCoverage FontCoverage::from_bytes(std::string_view data) {
  const Bytes b(data);
  const std::uint16_t num_tables = b.u16(4);
  std::size_t cmap = 0;
  for (std::size_t i = 0; i < num_tables; ++i) {
    const std::size_t rec = 12 + 16 * i;
    if (b.tag(rec) == "cmap") {
      cmap = b.u32(rec + 8);
      break;
    }
  }
  if (cmap == 0) throw ConfigError("font has no cmap table");

  // Prefer a full-repertoire (format 12) subtable, then a BMP one.
  std::size_t best = 0;
  int best_rank = 0;
  const std::uint16_t subtables = b.u16(cmap + 2);
  for (std::size_t i = 0; i < subtables; ++i) {
    const std::size_t rec = cmap + 4 + 8 * i;
    const std::uint16_t platform = b.u16(rec);
    const std::uint16_t encoding = b.u16(rec + 2);
    const std::size_t off = cmap + b.u32(rec + 4);
    const std::uint16_t format = b.u16(off);
    int rank = 0;
    if (format == 12 && (platform == 0 || (platform == 3 && encoding == 10))) rank = 2;
    if (format == 4 && (platform == 0 || (platform == 3 && (encoding == 1 || encoding == 0)))) rank = 1;
    if (rank > best_rank) best_rank = rank, best = off;
  }
  if (best_rank == 0) throw ConfigError("font has no usable Unicode cmap subtable");

  FontCoverage cov;
  if (best_rank == 2) {
    parse_format12(b, best, cov.ranges_);
  } else {
    parse_format4(b, best, cov.ranges_);
  }
  std::sort(cov.ranges_.begin(), cov.ranges_.end());
  std::vector<std::pair<char32_t, char32_t>> merged;
  for (const auto& [lo, hi] : cov.ranges_) add_range(merged, lo, hi);
  cov.ranges_ = std::move(merged);
  return cov;
}

bool FontCoverage::covers(char32_t cp) const {
  auto it = std::upper_bound(ranges_.begin(), ranges_.end(), cp,
                             [](char32_t v, const auto& r) { return v < r.first; });
  if (it == ranges_.begin()) return false;
  --it;
  return cp >= it->first && cp <= it->second;
}

std::vector<char32_t> FontCoverage::missing(std::string_view utf8) const {
  std::vector<char32_t> out;
  for (char32_t cp : utf8_decode(utf8)) {
    if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r') continue;
    if (!covers(cp) && std::find(out.begin(), out.end(), cp) == out.end()) out.push_back(cp);
  }
  return out;
}

bool FontCoverage::covers_text(std::string_view utf8) const { return missing(utf8).empty(); }

std::size_t FontCoverage::size() const {
  std::size_t n = 0;
  for (const auto& [lo, hi] : ranges_) n += hi - lo + 1;
  return n;
}

}  // namespace vlmforge
