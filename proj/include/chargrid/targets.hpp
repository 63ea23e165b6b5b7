#pragma once

#include <array>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "chargrid/grid.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Anchors: one box of each configured shape centered on every output cell.
// The line-item task uses full-width row anchors whose heights cover the
// typical row-span range.
// ---------------------------------------------------------------------------

struct AnchorSet {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::array<double, 2>> shapes;  // (width, height) in cells

  int n_a() const { return static_cast<int>(shapes.size()); }
  std::int64_t total() const {
    return static_cast<std::int64_t>(grid_h) * grid_w * n_a();
  }

  RectD rect(int i, int j, int a) const {
    const auto& s = shapes[static_cast<std::size_t>(a)];
    return RectD{(j + 0.5) - 0.5 * s[0], (i + 0.5) - 0.5 * s[1], s[0], s[1]};
  }
};

inline std::vector<std::array<double, 2>> default_anchor_shapes(int grid_w) {
  return {{static_cast<double>(grid_w), 4.0},
          {static_cast<double>(grid_w), 8.0},
          {static_cast<double>(grid_w), 16.0},
          {static_cast<double>(grid_w), 32.0}};
}

inline AnchorSet generate_anchors(int grid_h, int grid_w,
                                  std::vector<std::array<double, 2>> shapes) {
  check(!shapes.empty(), "generate_anchors: shapes must be nonempty");
  for (const auto& s : shapes) {
    check(s[0] > 0 && s[1] > 0, "generate_anchors: shapes must be positive");
  }
  return AnchorSet{grid_h, grid_w, std::move(shapes)};
}

inline double iou(const RectD& a, const RectD& b) { return rect_iou(a, b); }

// ---------------------------------------------------------------------------
// Box regression deltas, center/size parameterization:
//   t_x = (x - x_a)/w_a, t_y = (y - y_a)/h_a, t_w = log(w/w_a), t_h = log(h/h_a)
// with x,y the box centers. Stored in (t_y, t_x, t_h, t_w) order.
// ---------------------------------------------------------------------------

inline std::array<double, 4> encode_box_deltas(const RectD& anchor, const RectD& gt) {
  check(anchor.w > 0 && anchor.h > 0 && gt.w > 0 && gt.h > 0,
        "encode_box_deltas: boxes must have positive size");
  return {(gt.cy() - anchor.cy()) / anchor.h, (gt.cx() - anchor.cx()) / anchor.w,
          std::log(gt.h / anchor.h), std::log(gt.w / anchor.w)};
}

inline RectD decode_box_deltas(const RectD& anchor, const std::array<double, 4>& t) {
  const double cy = anchor.cy() + t[0] * anchor.h;
  const double cx = anchor.cx() + t[1] * anchor.w;
  const double h = anchor.h * std::exp(t[2]);
  const double w = anchor.w * std::exp(t[3]);
  return RectD{cx - 0.5 * w, cy - 0.5 * h, w, h};
}

// ---------------------------------------------------------------------------
// Anchor matching, one-stage detector style: foreground above the IoU
// threshold or argmax for some ground-truth box, background below the lower
// threshold, ignore in between.
// ---------------------------------------------------------------------------

enum AnchorState : std::uint8_t {
  kAnchorBackground = 0,
  kAnchorForeground = 1,
  kAnchorIgnore = 2,
};

struct AnchorMatch {
  Tensor<std::uint8_t> state;  // (H, W, N_a)
  Tensor<int> best_gt;         // (H, W, N_a), -1 where unmatched
};

inline AnchorMatch match_anchors(const AnchorSet& anchors, std::span<const RectD> gt_boxes,
                                 double fg_thresh = 0.5, double bg_thresh = 0.4) {
  check(bg_thresh >= 0 && bg_thresh <= fg_thresh && fg_thresh <= 1,
        "match_anchors: need 0 <= bg <= fg <= 1");
  const int h = anchors.grid_h, w = anchors.grid_w, na = anchors.n_a();
  AnchorMatch m{Tensor<std::uint8_t>({h, w, na}, kAnchorBackground),
                Tensor<int>({h, w, na}, -1)};
  if (gt_boxes.empty()) return m;

  const std::size_t ng = gt_boxes.size();
  struct Cand {
    double iou;
    std::int64_t anchor;
  };
  // Top overlapping anchors per gt, kept so the argmax fallback can sidestep
  // anchors claimed by other gt boxes.
  const std::size_t top_k = std::max<std::size_t>(16, 2 * ng);
  std::vector<std::vector<Cand>> gt_top(ng);
  std::vector<std::int64_t> fg_per_gt(ng, 0);

  std::int64_t flat = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int a = 0; a < na; ++a, ++flat) {
        const RectD ar = anchors.rect(i, j, a);
        double best = 0.0;
        int best_g = -1;
        for (std::size_t g = 0; g < ng; ++g) {
          const double v = rect_iou(ar, gt_boxes[g]);
          if (v > best) {
            best = v;
            best_g = static_cast<int>(g);
          }
          if (v > 0.0) {
            auto& top = gt_top[g];
            if (top.size() < top_k || v > top.back().iou) {
              const auto pos = std::upper_bound(
                  top.begin(), top.end(), v,
                  [](double lhs, const Cand& rhs) { return lhs > rhs.iou; });
              top.insert(pos, Cand{v, flat});
              if (top.size() > top_k) top.pop_back();
            }
          }
        }
        if (best >= fg_thresh) {
          m.state[flat] = kAnchorForeground;
          m.best_gt[flat] = best_g;
          fg_per_gt[static_cast<std::size_t>(best_g)]++;
        } else if (best < bg_thresh) {
          m.state[flat] = kAnchorBackground;
        } else {
          m.state[flat] = kAnchorIgnore;
          m.best_gt[flat] = best_g;
        }
      }
    }
  }
  // Argmax fallback: a gt that got no anchor above the threshold claims its
  // best-overlap anchor, preferring anchors not already serving another gt.
  for (std::size_t g = 0; g < ng; ++g) {
    if (fg_per_gt[g] > 0 || gt_top[g].empty()) continue;
    std::int64_t pick = -1;
    for (const Cand& c : gt_top[g]) {
      if (m.state[c.anchor] != kAnchorForeground) {
        pick = c.anchor;
        break;
      }
    }
    if (pick < 0) pick = gt_top[g].front().anchor;  // all candidates taken
    if (m.state[pick] == kAnchorForeground && m.best_gt[pick] >= 0) {
      fg_per_gt[static_cast<std::size_t>(m.best_gt[pick])]--;
    }
    m.state[pick] = kAnchorForeground;
    m.best_gt[pick] = static_cast<int>(g);
    fg_per_gt[g]++;
  }
  return m;
}

// Regression targets for foreground anchors; zeros elsewhere.
template <typename T = float>
Tensor<T> build_box_delta_targets(const AnchorSet& anchors, const AnchorMatch& match,
                                  std::span<const RectD> gt_boxes) {
  const int h = anchors.grid_h, w = anchors.grid_w, na = anchors.n_a();
  Tensor<T> out({h, w, na, 4});
  std::int64_t flat = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int a = 0; a < na; ++a, ++flat) {
        if (match.state[flat] != kAnchorForeground) continue;
        const int g = match.best_gt[flat];
        check(g >= 0 && g < static_cast<int>(gt_boxes.size()), "foreground anchor without gt");
        const auto t = encode_box_deltas(anchors.rect(i, j, a), gt_boxes[static_cast<std::size_t>(g)]);
        for (int c = 0; c < 4; ++c) out[flat * 4 + c] = static_cast<T>(t[c]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation label rasterization. A cell takes the class of the annotation
// containing its sample point, but only if a character owns the cell; empty
// cells stay background. Overlapping annotations resolve to the smallest box.
// ---------------------------------------------------------------------------

inline Tensor<int> rasterize_segmentation(const DocumentPage& page, int grid_h, int grid_w) {
  const Tensor<int> owner = build_owner_grid(page, grid_h, grid_w);
  Tensor<int> labels({grid_h, grid_w}, static_cast<int>(FieldClass::background));
  for (int i = 0; i < grid_h; ++i) {
    const double py = cell_sample_y(i, grid_h, page.page_h);
    for (int j = 0; j < grid_w; ++j) {
      if (owner.at(i, j) < 0) continue;
      const double px = cell_sample_x(j, grid_w, page.page_w);
      double best_area = 0.0;
      int best_class = static_cast<int>(FieldClass::background);
      for (const FieldAnnotation& a : page.annotations) {
        const RectD r = a.rect();
        if (!r.contains(px, py)) continue;
        if (best_class == static_cast<int>(FieldClass::background) || r.area() < best_area) {
          best_area = r.area();
          best_class = static_cast<int>(a.field_class);
        }
      }
      labels.at(i, j) = best_class;
    }
  }
  return labels;
}

// Ground-truth line-item row boxes: per instance the union of its sub-field
// boxes, widened to the full grid width and mapped to grid coordinates.
// Returned sorted by vertical position.
inline std::vector<RectD> lineitem_row_boxes(const DocumentPage& page, int grid_h, int grid_w) {
  std::map<int, RectD> unions;
  for (const FieldAnnotation& a : page.annotations) {
    if (!is_lineitem_class(a.field_class) || a.instance_id <= 0) continue;
    auto it = unions.find(a.instance_id);
    if (it == unions.end()) {
      unions.emplace(a.instance_id, a.rect());
    } else {
      it->second = rect_union(it->second, a.rect());
    }
  }
  const double sy = static_cast<double>(grid_h) / page.page_h;
  std::vector<RectD> out;
  out.reserve(unions.size());
  for (const auto& [id, r] : unions) {
    out.push_back(RectD{0.0, r.y * sy, static_cast<double>(grid_w), r.h * sy});
  }
  std::sort(out.begin(), out.end(), [](const RectD& a, const RectD& b) { return a.y < b.y; });
  return out;
}

// ---------------------------------------------------------------------------
// Static class weights, w_c = 1 / ln(c + p_c) with p_c the pooled cell
// frequency of class c. Classes that never occur get the maximum weight.
// ---------------------------------------------------------------------------

inline double weight_from_frequency(double p, double c = 1.04) {
  return 1.0 / std::log(c + p);
}

inline std::vector<double> compute_class_weights(std::span<const Tensor<int>> seg_labels,
                                                 int n_classes = kNumFieldClasses,
                                                 double c = 1.04) {
  check(!seg_labels.empty(), "compute_class_weights: no pages");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
  std::int64_t total = 0;
  for (const auto& t : seg_labels) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const int v = t[i];
      check(v >= 0 && v < n_classes, "segmentation label out of range");
      counts[static_cast<std::size_t>(v)]++;
    }
    total += t.numel();
  }
  check(total > 0, "compute_class_weights: empty label grids");
  std::vector<double> w(static_cast<std::size_t>(n_classes));
  for (int k = 0; k < n_classes; ++k) {
    const double p = static_cast<double>(counts[static_cast<std::size_t>(k)]) / total;
    w[static_cast<std::size_t>(k)] = weight_from_frequency(p, c);
  }
  return w;
}

// Foreground/background weights for the box-mask loss from pooled anchor
// states, same 1/ln(c+p) rule; ignore anchors are excluded from the pool.
inline std::array<double, 2> compute_boxmask_weights(std::span<const Tensor<std::uint8_t>> states,
                                                     double c = 1.04) {
  std::int64_t fg = 0, bg = 0;
  for (const auto& t : states) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      if (t[i] == kAnchorForeground) fg++;
      else if (t[i] == kAnchorBackground) bg++;
    }
  }
  const std::int64_t total = fg + bg;
  const double p_fg = total > 0 ? static_cast<double>(fg) / total : 0.0;
  const double p_bg = total > 0 ? static_cast<double>(bg) / total : 0.0;
  return {weight_from_frequency(p_bg, c), weight_from_frequency(p_fg, c)};
}

// Sampling distribution over pages: pages with more line-item instances than
// the threshold draw `ratio` times as often.
inline std::vector<double> compute_sampling_weights(std::span<const DocumentPage> pages,
                                                    double ratio = 3.0, int threshold = 3) {
  std::vector<double> w(pages.size(), 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < pages.size(); ++i) {
    if (lineitem_instance_count(pages[i]) > threshold) w[i] = ratio;
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// ---------------------------------------------------------------------------
// TargetBundle: everything the three loss terms need for one page.
// ---------------------------------------------------------------------------

struct TargetBundle {
  Tensor<int> seg_labels;            // (H, W)
  Tensor<std::uint8_t> anchor_state; // (H, W, N_a)
  Tensor<float> box_deltas;          // (H, W, N_a, 4)
  std::vector<RectD> gt_boxes;       // grid coordinates
};

inline TargetBundle make_targets(const DocumentPage& page, int grid_h, int grid_w,
                                 const AnchorSet& anchors, double fg_thresh = 0.5,
                                 double bg_thresh = 0.4) {
  TargetBundle t;
  t.seg_labels = rasterize_segmentation(page, grid_h, grid_w);
  t.gt_boxes = lineitem_row_boxes(page, grid_h, grid_w);
  const AnchorMatch m = match_anchors(anchors, t.gt_boxes, fg_thresh, bg_thresh);
  t.box_deltas = build_box_delta_targets<float>(anchors, m, t.gt_boxes);
  t.anchor_state = m.state;
  return t;
}

}  // namespace chargrid
