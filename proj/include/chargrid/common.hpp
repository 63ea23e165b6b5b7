#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace chargrid {

using Rng = std::mt19937_64;

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// ---------------------------------------------------------------------------
// Thread budget. A process-wide knob set once by the CLI (--threads) or by
// tests; 1 guarantees bit-reproducible numerics.
// ---------------------------------------------------------------------------

inline int& detail_thread_slot() {
  static int n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

inline int thread_count() { return detail_thread_slot(); }

inline void set_thread_count(int n) { detail_thread_slot() = std::max(1, n); }

// Splits [0, n) into at most thread_count() contiguous chunks and runs
// body(begin, end, chunk_index). Chunk boundaries depend only on n and the
// configured thread count, so per-chunk accumulations reduced in chunk order
// stay reproducible for a fixed configuration.
template <typename F>
void parallel_for(std::int64_t n, F&& body) {
  const int nt = static_cast<int>(std::min<std::int64_t>(thread_count(), std::max<std::int64_t>(n, 1)));
  if (nt <= 1) {
    body(std::int64_t{0}, n, 0);
    return;
  }
  const std::int64_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(nt - 1));
  for (int t = 1; t < nt; ++t) {
    const std::int64_t b = std::min<std::int64_t>(t * chunk, n);
    const std::int64_t e = std::min<std::int64_t>(b + chunk, n);
    workers.emplace_back([&body, b, e, t] { body(b, e, t); });
  }
  body(std::int64_t{0}, std::min<std::int64_t>(chunk, n), 0);
  for (auto& w : workers) w.join();
}

// ---------------------------------------------------------------------------
// Axis-aligned rectangle, double precision. Used for page boxes mapped to
// grid coordinates, anchors, and detections.
// ---------------------------------------------------------------------------

struct RectD {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool contains(double px, double py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
};

inline bool operator==(const RectD& a, const RectD& b) {
  return a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h;
}

inline double rect_iou(const RectD& a, const RectD& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline RectD rect_union(const RectD& a, const RectD& b) {
  if (a.w <= 0 && a.h <= 0) return b;
  if (b.w <= 0 && b.h <= 0) return a;
  const double x0 = std::min(a.x, b.x);
  const double y0 = std::min(a.y, b.y);
  const double x1 = std::max(a.right(), b.right());
  const double y1 = std::max(a.bottom(), b.bottom());
  return RectD{x0, y0, x1 - x0, y1 - y0};
}

// ---------------------------------------------------------------------------
// UTF-8 <-> code point helpers. Strict decoding: malformed sequences throw.
// ---------------------------------------------------------------------------

inline std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0;
    int extra = 0;
    if (c0 < 0x80) {
      cp = c0;
    } else if ((c0 & 0xE0) == 0xC0) {
      cp = c0 & 0x1F;
      extra = 1;
    } else if ((c0 & 0xF0) == 0xE0) {
      cp = c0 & 0x0F;
      extra = 2;
    } else if ((c0 & 0xF8) == 0xF0) {
      cp = c0 & 0x07;
      extra = 3;
    } else {
      fail("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + static_cast<std::size_t>(extra) >= s.size()) {
      fail("truncated UTF-8 sequence at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const unsigned char cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((cc & 0xC0) != 0x80) fail("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(1 + extra);
  }
  return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string utf8_encode(char32_t cp) {
  std::string out;
  utf8_append(out, cp);
  return out;
}

inline std::string utf8_encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) utf8_append(out, cp);
  return out;
}

// Case folding for the vocabulary: ASCII only, other scripts pass through.
inline char32_t fold_char(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + (U'a' - U'A');
  return c;
}

// ---------------------------------------------------------------------------
// String helpers used by the eval harness and parsers.
// ---------------------------------------------------------------------------

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Trim plus collapse internal whitespace runs to single spaces.
inline std::string normalize_ws(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_ascii_space(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string_view line = nl == std::string_view::npos ? text.substr(start)
                                                         : text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

}  // namespace chargrid
