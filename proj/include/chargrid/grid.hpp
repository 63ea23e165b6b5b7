#pragma once

#include <cmath>
#include <vector>

#include "chargrid/doc.hpp"
#include "chargrid/tensor.hpp"
#include "chargrid/vocab.hpp"

namespace chargrid {

// Integer character grid: each cell holds a vocabulary index, 0 for empty.
struct Chargrid {
  int height = 0;
  int width = 0;
  Tensor<int> cells;  // (height, width)

  Chargrid() = default;
  Chargrid(int h, int w) : height(h), width(w), cells({h, w}) {}

  bool operator==(const Chargrid&) const = default;
};

// Sample point of grid cell (i,j) in page coordinates: the cell center under
// uniform scaling. Shared by grid construction, target rasterization, and
// character class assignment so all three agree cell-by-cell.
inline double cell_sample_y(int i, int grid_h, int page_h) {
  return (i + 0.5) * static_cast<double>(page_h) / grid_h;
}
inline double cell_sample_x(int j, int grid_w, int page_w) {
  return (j + 0.5) * static_cast<double>(page_w) / grid_w;
}

// Per-cell owning character index (-1 for empty). A cell whose sample point
// lies inside several boxes goes to the box with the closest center; exact
// distance ties keep the lower character index.
inline Tensor<int> build_owner_grid(const DocumentPage& page, int grid_h, int grid_w) {
  check(grid_h >= 1 && grid_w >= 1, "grid dimensions must be >= 1");
  Tensor<int> owner({grid_h, grid_w}, -1);
  Tensor<double> best_d2({grid_h, grid_w}, 0.0);
  const double sy = static_cast<double>(grid_h) / page.page_h;
  const double sx = static_cast<double>(grid_w) / page.page_w;
  for (std::size_t k = 0; k < page.chars.size(); ++k) {
    const CharBox& c = page.chars[k];
    const RectD r = c.rect();
    // Conservative cell range, then the exact sample-point test per cell.
    int i0 = std::max(0, static_cast<int>(std::floor(r.y * sy)) - 1);
    int i1 = std::min(grid_h - 1, static_cast<int>(std::ceil(r.bottom() * sy)) + 1);
    int j0 = std::max(0, static_cast<int>(std::floor(r.x * sx)) - 1);
    int j1 = std::min(grid_w - 1, static_cast<int>(std::ceil(r.right() * sx)) + 1);
    for (int i = i0; i <= i1; ++i) {
      const double py = cell_sample_y(i, grid_h, page.page_h);
      if (py < r.y || py >= r.bottom()) continue;
      for (int j = j0; j <= j1; ++j) {
        const double px = cell_sample_x(j, grid_w, page.page_w);
        if (px < r.x || px >= r.right()) continue;
        const double dx = px - r.cx();
        const double dy = py - r.cy();
        const double d2 = dx * dx + dy * dy;
        int& own = owner.at(i, j);
        if (own < 0 || d2 < best_d2.at(i, j)) {
          own = static_cast<int>(k);
          best_d2.at(i, j) = d2;
        }
      }
    }
  }
  return owner;
}

inline Chargrid build_chargrid(const DocumentPage& page, const Vocabulary& vocab,
                               int grid_h, int grid_w) {
  const Tensor<int> owner = build_owner_grid(page, grid_h, grid_w);
  Chargrid g(grid_h, grid_w);
  for (std::int64_t i = 0; i < owner.numel(); ++i) {
    g.cells[i] = owner[i] < 0 ? Vocabulary::kBackground
                              : vocab.encode(page.chars[static_cast<std::size_t>(owner[i])].ch);
  }
  return g;
}

// Nearest-neighbor resampling in token space. Output cell (i,j) reads input
// cell (floor((i+0.5)*in_h/out_h), floor((j+0.5)*in_w/out_w)).
inline Chargrid downsample_tokens(const Chargrid& grid, int out_h, int out_w) {
  check(out_h >= 1 && out_w >= 1, "output dimensions must be >= 1");
  Chargrid out(out_h, out_w);
  for (int i = 0; i < out_h; ++i) {
    const int si = std::min(grid.height - 1,
                            static_cast<int>((i + 0.5) * grid.height / out_h));
    for (int j = 0; j < out_w; ++j) {
      const int sj = std::min(grid.width - 1,
                              static_cast<int>((j + 0.5) * grid.width / out_w));
      out.cells.at(i, j) = grid.cells.at(si, sj);
    }
  }
  return out;
}

template <typename T = float>
Tensor<T> one_hot(const Chargrid& grid, int n_classes) {
  Tensor<T> out({grid.height, grid.width, n_classes});
  for (int i = 0; i < grid.height; ++i) {
    for (int j = 0; j < grid.width; ++j) {
      const int v = grid.cells.at(i, j);
      check(v >= 0 && v < n_classes,
            "one_hot: cell value " + std::to_string(v) + " >= n_classes " +
                std::to_string(n_classes));
      out.at(i, j, v) = T(1);
    }
  }
  return out;
}

namespace detail {

// Source coordinate for bilinear resampling with aligned centers:
// (i+0.5)*in/out - 0.5, edge-clamped via index clamping.
struct BilinearTap {
  int lo;
  int hi;
  double frac;
};

inline BilinearTap bilinear_tap(int i, int out_n, int in_n) {
  const double s = (i + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
  const double fl = std::floor(s);
  int lo = static_cast<int>(fl);
  const double frac = s - fl;
  int hi = lo + 1;
  lo = std::clamp(lo, 0, in_n - 1);
  hi = std::clamp(hi, 0, in_n - 1);
  return BilinearTap{lo, hi, frac};
}

}  // namespace detail

// Channel-wise bilinear resampling of an (H,W,C) tensor.
template <typename T>
Tensor<T> downsample_bilinear(const Tensor<T>& in, int out_h, int out_w) {
  check(in.ndim() == 3, "downsample_bilinear expects (H,W,C)");
  check(out_h >= 1 && out_w >= 1, "output dimensions must be >= 1");
  const int in_h = in.dim(0), in_w = in.dim(1), nc = in.dim(2);
  Tensor<T> out({out_h, out_w, nc});
  std::vector<detail::BilinearTap> xt(static_cast<std::size_t>(out_w));
  for (int j = 0; j < out_w; ++j) xt[static_cast<std::size_t>(j)] = detail::bilinear_tap(j, out_w, in_w);
  for (int i = 0; i < out_h; ++i) {
    const auto yt = detail::bilinear_tap(i, out_h, in_h);
    for (int j = 0; j < out_w; ++j) {
      const auto& xtap = xt[static_cast<std::size_t>(j)];
      const T w00 = static_cast<T>((1.0 - yt.frac) * (1.0 - xtap.frac));
      const T w01 = static_cast<T>((1.0 - yt.frac) * xtap.frac);
      const T w10 = static_cast<T>(yt.frac * (1.0 - xtap.frac));
      const T w11 = static_cast<T>(yt.frac * xtap.frac);
      const T* p00 = &in.at(yt.lo, xtap.lo, 0);
      const T* p01 = &in.at(yt.lo, xtap.hi, 0);
      const T* p10 = &in.at(yt.hi, xtap.lo, 0);
      const T* p11 = &in.at(yt.hi, xtap.hi, 0);
      T* o = &out.at(i, j, 0);
      for (int c = 0; c < nc; ++c) {
        o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  return out;
}

// One-hot + bilinear in one pass, exploiting that each input cell has exactly
// one hot channel: per output cell only the four neighbor tokens receive
// weight. Accumulation order matches the dense path term-for-term, so the
// result is bit-identical to downsample_bilinear(one_hot(tokens)).
template <typename T = float>
Tensor<T> onehot_bilinear(const Chargrid& tokens, int n_classes, int out_h, int out_w) {
  const int in_h = tokens.height, in_w = tokens.width;
  Tensor<T> out({out_h, out_w, n_classes});
  std::vector<detail::BilinearTap> xt(static_cast<std::size_t>(out_w));
  for (int j = 0; j < out_w; ++j) xt[static_cast<std::size_t>(j)] = detail::bilinear_tap(j, out_w, in_w);
  for (int i = 0; i < out_h; ++i) {
    const auto yt = detail::bilinear_tap(i, out_h, in_h);
    for (int j = 0; j < out_w; ++j) {
      const auto& xtap = xt[static_cast<std::size_t>(j)];
      const int t00 = tokens.cells.at(yt.lo, xtap.lo);
      const int t01 = tokens.cells.at(yt.lo, xtap.hi);
      const int t10 = tokens.cells.at(yt.hi, xtap.lo);
      const int t11 = tokens.cells.at(yt.hi, xtap.hi);
      check((t00 | t01 | t10 | t11) >= 0 && t00 < n_classes && t01 < n_classes &&
                t10 < n_classes && t11 < n_classes,
            "onehot_bilinear: token out of range");
      T* o = &out.at(i, j, 0);
      o[t00] += static_cast<T>((1.0 - yt.frac) * (1.0 - xtap.frac));
      o[t01] += static_cast<T>((1.0 - yt.frac) * xtap.frac);
      o[t10] += static_cast<T>(yt.frac * (1.0 - xtap.frac));
      o[t11] += static_cast<T>(yt.frac * xtap.frac);
    }
  }
  return out;
}

// Full input pipeline: chargrid at twice the target resolution, 1-hot, then
// bilinear down to the network resolution. Pages of any aspect ratio are
// squeezed into the target grid by the uniform per-axis scaling.
template <typename T = float>
Tensor<T> prepare_input(const DocumentPage& page, const Vocabulary& vocab,
                        int target_h = 336, int target_w = 256, int stage1_scale = 2) {
  check(stage1_scale >= 1, "stage1_scale must be >= 1");
  const Chargrid tokens = build_chargrid(page, vocab, target_h * stage1_scale,
                                         target_w * stage1_scale);
  return onehot_bilinear<T>(tokens, vocab.n_classes, target_h, target_w);
}

}  // namespace chargrid
