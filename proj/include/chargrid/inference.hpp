#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chargrid/targets.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Box decoding and non-maximum suppression.
// ---------------------------------------------------------------------------

struct DetectedBox {
  RectD rect;    // grid coordinates
  double score = 0.0;
};

// Per anchor: foreground probability from the 2-way softmax over the
// (background, foreground) logit pair; anchors above the threshold are
// decoded around their anchor box and clipped to the grid.
template <typename T>
std::vector<DetectedBox> decode_boxes(const Tensor<T>& boxmask_logits,
                                      const Tensor<T>& box_deltas, const AnchorSet& anchors,
                                      double score_thresh = 0.5) {
  const int h = anchors.grid_h, w = anchors.grid_w, na = anchors.n_a();
  check(boxmask_logits.numel() == static_cast<std::int64_t>(h) * w * 2 * na,
        "decode_boxes: boxmask logits shape mismatch");
  check(box_deltas.numel() == static_cast<std::int64_t>(h) * w * 4 * na,
        "decode_boxes: box delta shape mismatch");
  std::vector<DetectedBox> out;
  std::int64_t flat = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int a = 0; a < na; ++a, ++flat) {
        const double zb = boxmask_logits[flat * 2];
        const double zf = boxmask_logits[flat * 2 + 1];
        const double p_fg = 1.0 / (1.0 + std::exp(zb - zf));
        if (p_fg < score_thresh) continue;
        std::array<double, 4> t;
        for (int k = 0; k < 4; ++k) {
          // clamp the log-size deltas so exp stays finite on wild outputs
          double v = static_cast<double>(box_deltas[flat * 4 + k]);
          if (k >= 2) v = std::clamp(v, -12.0, 12.0);
          t[static_cast<std::size_t>(k)] = v;
        }
        RectD r = decode_box_deltas(anchors.rect(i, j, a), t);
        const double x0 = std::clamp(r.x, 0.0, static_cast<double>(w));
        const double y0 = std::clamp(r.y, 0.0, static_cast<double>(h));
        const double x1 = std::clamp(r.right(), 0.0, static_cast<double>(w));
        const double y1 = std::clamp(r.bottom(), 0.0, static_cast<double>(h));
        if (x1 - x0 <= 0.0 || y1 - y0 <= 0.0) continue;
        out.push_back(DetectedBox{RectD{x0, y0, x1 - x0, y1 - y0}, p_fg});
      }
    }
  }
  return out;
}

// Greedy descending-score suppression; output sorted by score.
inline std::vector<DetectedBox> nms(std::vector<DetectedBox> boxes, double iou_thresh = 0.5) {
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const DetectedBox& a, const DetectedBox& b) { return a.score > b.score; });
  std::vector<DetectedBox> kept;
  for (const DetectedBox& b : boxes) {
    bool suppressed = false;
    for (const DetectedBox& k : kept) {
      if (rect_iou(b.rect, k.rect) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Character class assignment: each character takes the majority segmentation
// class over the grid cells it owns (same sampling rule as the chargrid
// build). Ties prefer the higher class weight, then the higher class index;
// characters owning no cell are background.
// ---------------------------------------------------------------------------

inline std::vector<FieldClass> assign_char_classes(
    const Tensor<int>& seg_argmax, const DocumentPage& page, int grid_h, int grid_w,
    const std::vector<double>& class_weights = {}) {
  check(seg_argmax.dim(0) == grid_h && seg_argmax.dim(1) == grid_w,
        "assign_char_classes: grid shape mismatch");
  std::vector<double> w = class_weights;
  if (w.empty()) w.assign(kNumFieldClasses, 1.0);
  const Tensor<int> owner = build_owner_grid(page, grid_h, grid_w);
  std::vector<std::array<int, kNumFieldClasses>> votes(page.chars.size());
  for (auto& v : votes) v.fill(0);
  for (int i = 0; i < grid_h; ++i) {
    for (int j = 0; j < grid_w; ++j) {
      const int k = owner.at(i, j);
      if (k < 0) continue;
      const int cls = seg_argmax.at(i, j);
      check(cls >= 0 && cls < kNumFieldClasses, "segmentation class out of range");
      votes[static_cast<std::size_t>(k)][static_cast<std::size_t>(cls)]++;
    }
  }
  std::vector<FieldClass> out(page.chars.size(), FieldClass::background);
  for (std::size_t k = 0; k < votes.size(); ++k) {
    int best = 0;
    bool any = false;
    for (int c = 0; c < kNumFieldClasses; ++c) {
      const int n = votes[k][static_cast<std::size_t>(c)];
      if (n == 0) continue;
      any = true;
      const int nb = votes[k][static_cast<std::size_t>(best)];
      if (n > nb || (n == nb && (w[static_cast<std::size_t>(c)] > w[static_cast<std::size_t>(best)] ||
                                 (w[static_cast<std::size_t>(c)] == w[static_cast<std::size_t>(best)] && c > best)))) {
        best = c;
      }
    }
    out[k] = any ? static_cast<FieldClass>(best) : FieldClass::background;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reading-order serialization. Characters cluster into lines when their
// vertical centers differ by less than half the median character height
// (chained); lines run top to bottom, characters left to right. A single
// space separates characters whose horizontal gap exceeds half the median
// character width; lines join with newlines.
// ---------------------------------------------------------------------------

inline std::string serialize_field(std::vector<CharBox> chars) {
  if (chars.empty()) return "";
  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::vector<double> hs, ws;
  hs.reserve(chars.size());
  ws.reserve(chars.size());
  for (const CharBox& c : chars) {
    hs.push_back(c.h);
    ws.push_back(c.w);
  }
  const double med_h = median_of(hs);
  const double med_w = median_of(ws);

  std::stable_sort(chars.begin(), chars.end(), [](const CharBox& a, const CharBox& b) {
    return a.y + 0.5 * a.h < b.y + 0.5 * b.h;
  });
  std::vector<std::vector<CharBox>> lines;
  double prev_cy = 0.0;
  for (const CharBox& c : chars) {
    const double cy = c.y + 0.5 * c.h;
    if (lines.empty() || cy - prev_cy >= 0.5 * med_h) lines.emplace_back();
    lines.back().push_back(c);
    prev_cy = cy;
  }
  std::string out;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    auto& line = lines[li];
    std::stable_sort(line.begin(), line.end(),
                     [](const CharBox& a, const CharBox& b) { return a.x < b.x; });
    if (li) out.push_back('\n');
    for (std::size_t k = 0; k < line.size(); ++k) {
      if (k > 0) {
        const double gap = line[k].x - (line[k - 1].x + line[k - 1].w);
        if (gap > 0.5 * med_w) out.push_back(' ');
      }
      utf8_append(out, line[k].ch);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ExtractionResult: header strings plus line-item rows in vertical order.
// ---------------------------------------------------------------------------

struct LineItem {
  std::string description;
  std::string quantity;
  std::string amount;
  bool operator==(const LineItem&) const = default;
};

struct ExtractionResult {
  std::map<std::string, std::string> header;  // field name -> string, absent if empty
  std::vector<LineItem> line_items;
  int dropped_lineitem_chars = 0;  // line-item chars outside every detected box
  bool operator==(const ExtractionResult&) const = default;
};

inline ExtractionResult extract(const DocumentPage& page, const Tensor<int>& seg_argmax,
                                std::vector<DetectedBox> boxes, int grid_h, int grid_w,
                                const std::vector<double>& class_weights = {}) {
  const std::vector<FieldClass> cls =
      assign_char_classes(seg_argmax, page, grid_h, grid_w, class_weights);
  ExtractionResult res;

  for (int c = 1; c <= 5; ++c) {
    std::vector<CharBox> field_chars;
    for (std::size_t k = 0; k < page.chars.size(); ++k) {
      if (cls[k] == static_cast<FieldClass>(c)) field_chars.push_back(page.chars[k]);
    }
    const std::string s = serialize_field(std::move(field_chars));
    if (!s.empty()) res.header[field_class_name(static_cast<FieldClass>(c))] = s;
  }

  std::stable_sort(boxes.begin(), boxes.end(), [](const DetectedBox& a, const DetectedBox& b) {
    return a.rect.cy() < b.rect.cy();
  });
  const double sy = static_cast<double>(grid_h) / page.page_h;
  const double sx = static_cast<double>(grid_w) / page.page_w;
  std::vector<bool> used(page.chars.size(), false);
  for (const DetectedBox& box : boxes) {
    std::array<std::vector<CharBox>, 3> groups;  // description, quantity, amount
    for (std::size_t k = 0; k < page.chars.size(); ++k) {
      if (!is_lineitem_class(cls[k]) || used[k]) continue;
      const CharBox& c = page.chars[k];
      const double gx = (c.x + 0.5 * c.w) * sx;
      const double gy = (c.y + 0.5 * c.h) * sy;
      if (!box.rect.contains(gx, gy)) continue;
      used[k] = true;
      groups[static_cast<std::size_t>(static_cast<int>(cls[k]) -
                                      static_cast<int>(FieldClass::lineitem_description))]
          .push_back(c);
    }
    LineItem item;
    item.description = serialize_field(std::move(groups[0]));
    item.quantity = serialize_field(std::move(groups[1]));
    item.amount = serialize_field(std::move(groups[2]));
    res.line_items.push_back(std::move(item));
  }
  for (std::size_t k = 0; k < page.chars.size(); ++k) {
    if (is_lineitem_class(cls[k]) && !used[k]) res.dropped_lineitem_chars++;
  }
  return res;
}

// ---------------------------------------------------------------------------
// JSON round-trip for results (also the ground-truth file format).
// ---------------------------------------------------------------------------

inline nlohmann::json extraction_to_json(const ExtractionResult& r) {
  nlohmann::json j;
  j["header"] = nlohmann::json::object();
  for (const auto& [k, v] : r.header) j["header"][k] = v;
  j["line_items"] = nlohmann::json::array();
  for (const LineItem& it : r.line_items) {
    j["line_items"].push_back({{"description", it.description},
                               {"quantity", it.quantity},
                               {"amount", it.amount}});
  }
  j["dropped_lineitem_chars"] = r.dropped_lineitem_chars;
  return j;
}

inline ExtractionResult extraction_from_json(const nlohmann::json& j) {
  ExtractionResult r;
  for (const auto& [k, v] : j.value("header", nlohmann::json::object()).items()) {
    field_class_from_name(k);  // validates the key
    r.header[k] = v.get<std::string>();
  }
  for (const auto& ji : j.value("line_items", nlohmann::json::array())) {
    r.line_items.push_back(LineItem{ji.value("description", ""), ji.value("quantity", ""),
                                    ji.value("amount", "")});
  }
  r.dropped_lineitem_chars = j.value("dropped_lineitem_chars", 0);
  return r;
}

}  // namespace chargrid
