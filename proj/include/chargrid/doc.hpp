#pragma once

#include <array>
#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chargrid/common.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Field classes for the invoice extraction task: 5 unique header fields,
// 3 line-item sub-fields, plus background.
// ---------------------------------------------------------------------------

enum class FieldClass : int {
  background = 0,
  invoice_number = 1,
  invoice_date = 2,
  invoice_amount = 3,
  vendor_name = 4,
  vendor_address = 5,
  lineitem_description = 6,
  lineitem_quantity = 7,
  lineitem_amount = 8,
};

constexpr int kNumFieldClasses = 9;

inline const std::array<const char*, kNumFieldClasses>& field_class_names() {
  static const std::array<const char*, kNumFieldClasses> names = {
      "background",        "invoice_number", "invoice_date",
      "invoice_amount",    "vendor_name",    "vendor_address",
      "lineitem_description", "lineitem_quantity", "lineitem_amount"};
  return names;
}

inline const char* field_class_name(FieldClass c) {
  return field_class_names()[static_cast<std::size_t>(c)];
}

inline FieldClass field_class_from_name(std::string_view name) {
  const auto& names = field_class_names();
  for (int i = 0; i < kNumFieldClasses; ++i) {
    if (name == names[static_cast<std::size_t>(i)]) return static_cast<FieldClass>(i);
  }
  fail("unknown field class: " + std::string(name));
}

inline bool is_header_class(FieldClass c) {
  const int v = static_cast<int>(c);
  return v >= 1 && v <= 5;
}

inline bool is_lineitem_class(FieldClass c) {
  const int v = static_cast<int>(c);
  return v >= 6 && v <= 8;
}

// ---------------------------------------------------------------------------
// Page model: set of character boxes in page pixel coordinates plus optional
// field annotations.
// ---------------------------------------------------------------------------

struct CharBox {
  char32_t ch = 0;
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  RectD rect() const {
    return RectD{static_cast<double>(x), static_cast<double>(y),
                 static_cast<double>(w), static_cast<double>(h)};
  }
  bool operator==(const CharBox&) const = default;
};

struct FieldAnnotation {
  FieldClass field_class = FieldClass::background;
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  int instance_id = 0;  // 0 for header fields, >=1 groups one line-item row

  RectD rect() const {
    return RectD{static_cast<double>(x), static_cast<double>(y),
                 static_cast<double>(w), static_cast<double>(h)};
  }
  bool operator==(const FieldAnnotation&) const = default;
};

struct DocumentPage {
  int page_w = 1;
  int page_h = 1;
  std::vector<CharBox> chars;            // reading order as emitted by OCR
  std::vector<FieldAnnotation> annotations;

  bool operator==(const DocumentPage&) const = default;
};

inline void validate_page(const DocumentPage& page) {
  check(page.page_w >= 1 && page.page_h >= 1, "page dimensions must be >= 1");
  for (std::size_t k = 0; k < page.chars.size(); ++k) {
    const CharBox& c = page.chars[k];
    check(c.w >= 1 && c.h >= 1, "char box " + std::to_string(k) + " needs w,h >= 1");
    check(c.x >= 0 && c.y >= 0 && c.x + c.w <= page.page_w && c.y + c.h <= page.page_h,
          "char box " + std::to_string(k) + " outside page bounds");
  }
  std::array<int, kNumFieldClasses> header_seen{};
  for (std::size_t k = 0; k < page.annotations.size(); ++k) {
    const FieldAnnotation& a = page.annotations[k];
    check(a.w >= 0 && a.h >= 0, "annotation " + std::to_string(k) + " has negative dimensions");
    if (is_header_class(a.field_class)) {
      check(a.instance_id == 0, "header annotation " + std::to_string(k) + " must have instance_id 0");
      int& seen = header_seen[static_cast<std::size_t>(a.field_class)];
      check(seen == 0, std::string("duplicate header annotation for class ") +
                           field_class_name(a.field_class));
      seen = 1;
    } else if (is_lineitem_class(a.field_class)) {
      check(a.instance_id >= 1, "line-item annotation " + std::to_string(k) +
                                    " must have instance_id >= 1");
    } else {
      fail("annotation " + std::to_string(k) + " may not use class background");
    }
  }
}

// ---------------------------------------------------------------------------
// Word box splitting: uniform horizontal division into per-character boxes.
// The remainder of w/n is distributed one pixel each to the leftmost boxes,
// so the sub-boxes are contiguous, disjoint, and tile the word box.
// ---------------------------------------------------------------------------

inline std::vector<CharBox> split_word_box(std::u32string_view word, int x, int y, int w, int h) {
  check(!word.empty(), "split_word_box: empty word");
  const int n = static_cast<int>(word.size());
  check(w >= n, "split_word_box: box width " + std::to_string(w) +
                    " cannot fit " + std::to_string(n) + " characters");
  check(h >= 1, "split_word_box: box height must be >= 1");
  const int base = w / n;
  const int rem = w % n;
  std::vector<CharBox> out;
  out.reserve(static_cast<std::size_t>(n));
  int cx = x;
  for (int i = 0; i < n; ++i) {
    const int cw = base + (i < rem ? 1 : 0);
    out.push_back(CharBox{word[static_cast<std::size_t>(i)], cx, y, cw, h});
    cx += cw;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tesseract TSV ingestion. Standard 12-column word-level layout:
// level page_num block_num par_num line_num word_num left top width height
// conf text. Rows with conf < 0 or empty text are skipped; the level-1 row,
// when present, supplies the page dimensions.
// ---------------------------------------------------------------------------

namespace detail {

inline int parse_int_field(std::string_view field, int line_no, const char* what) {
  int value = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [p, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || p != last) {
    fail("TSV line " + std::to_string(line_no) + ": non-integer " + what + " '" +
         std::string(field) + "'");
  }
  return value;
}

inline double parse_conf_field(std::string_view field, int line_no) {
  try {
    std::size_t used = 0;
    const std::string s(field);
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail("TSV line " + std::to_string(line_no) + ": non-numeric conf '" + std::string(field) + "'");
  }
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

}  // namespace detail

inline DocumentPage parse_ocr_tsv(std::string_view text) {
  DocumentPage page;
  page.page_w = 0;
  page.page_h = 0;
  const auto lines = split_lines(text);
  bool saw_header = false;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string_view line = lines[li];
    const int line_no = static_cast<int>(li) + 1;
    if (line.empty()) continue;
    if (!saw_header && line.substr(0, 5) == "level") {
      saw_header = true;
      continue;
    }
    const auto cols = detail::split_tabs(line);
    if (cols.size() != 12) {
      fail("TSV line " + std::to_string(line_no) + ": expected 12 columns, got " +
           std::to_string(cols.size()));
    }
    const int level = detail::parse_int_field(cols[0], line_no, "level");
    const int left = detail::parse_int_field(cols[6], line_no, "left");
    const int top = detail::parse_int_field(cols[7], line_no, "top");
    const int width = detail::parse_int_field(cols[8], line_no, "width");
    const int height = detail::parse_int_field(cols[9], line_no, "height");
    const double conf = detail::parse_conf_field(cols[10], line_no);
    const std::string_view word_utf8 = cols[11];

    if (level == 1) {
      page.page_w = std::max(page.page_w, left + width);
      page.page_h = std::max(page.page_h, top + height);
      continue;
    }
    if (conf < 0.0) continue;
    const std::u32string word = utf8_decode(word_utf8);
    bool blank = true;
    for (char32_t c : word) {
      if (c != U' ' && c != U'\t') blank = false;
    }
    if (word.empty() || blank) continue;
    if (width < static_cast<int>(word.size()) || height < 1) {
      fail("TSV line " + std::to_string(line_no) + ": box " + std::to_string(width) + "x" +
           std::to_string(height) + " cannot hold " + std::to_string(word.size()) + " characters");
    }
    const auto boxes = split_word_box(word, left, top, width, height);
    page.chars.insert(page.chars.end(), boxes.begin(), boxes.end());
  }
  // No level-1 row: fall back to the word extents.
  for (const CharBox& c : page.chars) {
    page.page_w = std::max(page.page_w, c.x + c.w);
    page.page_h = std::max(page.page_h, c.y + c.h);
  }
  page.page_w = std::max(page.page_w, 1);
  page.page_h = std::max(page.page_h, 1);
  validate_page(page);
  return page;
}

// ---------------------------------------------------------------------------
// Canonical page JSON.
// ---------------------------------------------------------------------------

inline nlohmann::json page_to_json(const DocumentPage& page) {
  nlohmann::json j;
  j["page_w"] = page.page_w;
  j["page_h"] = page.page_h;
  j["chars"] = nlohmann::json::array();
  for (const CharBox& c : page.chars) {
    j["chars"].push_back({{"c", utf8_encode(c.ch)},
                          {"x", c.x},
                          {"y", c.y},
                          {"w", c.w},
                          {"h", c.h}});
  }
  j["annotations"] = nlohmann::json::array();
  for (const FieldAnnotation& a : page.annotations) {
    j["annotations"].push_back({{"class", field_class_name(a.field_class)},
                                {"x", a.x},
                                {"y", a.y},
                                {"w", a.w},
                                {"h", a.h},
                                {"instance_id", a.instance_id}});
  }
  return j;
}

inline std::string page_to_json_string(const DocumentPage& page) {
  return page_to_json(page).dump(2);
}

inline FieldAnnotation annotation_from_json(const nlohmann::json& ja) {
  FieldAnnotation a;
  a.field_class = field_class_from_name(ja.at("class").get<std::string>());
  a.x = ja.at("x").get<int>();
  a.y = ja.at("y").get<int>();
  a.w = ja.at("w").get<int>();
  a.h = ja.at("h").get<int>();
  a.instance_id = ja.value("instance_id", 0);
  check(a.w >= 0 && a.h >= 0, "annotation with negative dimensions");
  return a;
}

inline DocumentPage page_from_json(const nlohmann::json& j) {
  DocumentPage page;
  page.page_w = j.at("page_w").get<int>();
  page.page_h = j.at("page_h").get<int>();
  for (const auto& jc : j.value("chars", nlohmann::json::array())) {
    const std::u32string c = utf8_decode(jc.at("c").get<std::string>());
    check(c.size() == 1, "char entry must hold exactly one code point");
    page.chars.push_back(CharBox{c[0], jc.at("x").get<int>(), jc.at("y").get<int>(),
                                 jc.at("w").get<int>(), jc.at("h").get<int>()});
  }
  for (const auto& ja : j.value("annotations", nlohmann::json::array())) {
    page.annotations.push_back(annotation_from_json(ja));
  }
  validate_page(page);
  return page;
}

inline DocumentPage page_from_json_string(std::string_view text) {
  return page_from_json(nlohmann::json::parse(text));
}

// ---------------------------------------------------------------------------
// Annotation loading: attaches annotations to a parsed page, clipping boxes
// that extend past the page bounds. Accepts either a bare JSON array or an
// object with an "annotations" key.
// ---------------------------------------------------------------------------

inline DocumentPage load_annotations(std::string_view text, DocumentPage page,
                                     std::vector<std::string>* warnings = nullptr) {
  nlohmann::json j = nlohmann::json::parse(text);
  const nlohmann::json& arr = j.is_array() ? j : j.at("annotations");
  check(arr.is_array(), "annotations must be a JSON array");
  page.annotations.clear();
  for (std::size_t k = 0; k < arr.size(); ++k) {
    FieldAnnotation a = annotation_from_json(arr[k]);
    const int x0 = std::max(0, a.x);
    const int y0 = std::max(0, a.y);
    const int x1 = std::min(page.page_w, a.x + a.w);
    const int y1 = std::min(page.page_h, a.y + a.h);
    const int cw = std::max(0, x1 - x0);
    const int ch = std::max(0, y1 - y0);
    if (cw != a.w || ch != a.h || x0 != a.x || y0 != a.y) {
      if (warnings) {
        warnings->push_back("annotation " + std::to_string(k) + " (" +
                            field_class_name(a.field_class) + ") clipped to page bounds");
      }
      a.x = x0;
      a.y = y0;
      a.w = cw;
      a.h = ch;
    }
    page.annotations.push_back(a);
  }
  validate_page(page);
  return page;
}

// Distinct line-item instances on a page.
inline int lineitem_instance_count(const DocumentPage& page) {
  std::vector<int> ids;
  for (const FieldAnnotation& a : page.annotations) {
    if (is_lineitem_class(a.field_class)) ids.push_back(a.instance_id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return static_cast<int>(ids.size());
}

}  // namespace chargrid
