#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "chargrid/autodiff.hpp"
#include "chargrid/targets.hpp"

namespace chargrid {

namespace lossdetail {

// d/dz_c of w*(1-p_y)^g*(-log p_y) with p = softmax(z) factorizes as
// (p_c - [c==y]) * common(p_y); this computes common(p_y).
template <typename T>
double focal_common(double p_y, double gamma, double w) {
  const double q = std::max(1.0 - p_y, 0.0);
  double f = std::pow(q, gamma);
  if (gamma > 0.0) {
    const double neg_log = -std::log(std::max(p_y, 1e-300));
    if (q > 1e-300) f += gamma * p_y * std::pow(q, gamma - 1.0) * neg_log;
  }
  return w * f;
}

inline double focal_term(double p_y, double gamma, double w) {
  const double q = std::max(1.0 - p_y, 0.0);
  return w * std::pow(q, gamma) * (-std::log(std::max(p_y, 1e-300)));
}

}  // namespace lossdetail

// ---------------------------------------------------------------------------
// Segmentation loss: mean over cells of w_y * (1-p_y)^gamma * (-log p_y),
// p taken from the channel softmax of the logits.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> seg_focal_loss(const Var<T>& logits, const Tensor<int>& labels,
                      const std::vector<double>& class_weights, double gamma) {
  const Tensor<T>& z = logits.value();
  check(z.ndim() == 4, "seg_focal_loss: logits must be (N,H,W,C)");
  const int c = z.dim(3);
  check(static_cast<int>(class_weights.size()) == c,
        "seg_focal_loss: weight count != channel count");
  check(labels.numel() * c == z.numel(), "seg_focal_loss: labels shape mismatch");
  check(gamma >= 0.0, "seg_focal_loss: gamma must be >= 0");

  auto probs = std::make_shared<Tensor<T>>(softmax_values(z));
  auto labels_copy = std::make_shared<Tensor<int>>(labels);
  const std::int64_t cells = labels.numel();
  double acc = 0.0;
  for (std::int64_t r = 0; r < cells; ++r) {
    const int y = labels[r];
    check(y >= 0 && y < c, "seg_focal_loss: label " + std::to_string(y) + " out of range");
    const double p_y = (*probs)[r * c + y];
    acc += lossdetail::focal_term(p_y, gamma, class_weights[static_cast<std::size_t>(y)]);
  }
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc / static_cast<double>(cells));

  auto zn = logits.handle();
  auto weights = std::make_shared<std::vector<double>>(class_weights);
  return detail::make_op<T>(
      std::move(out), {logits}, [zn, probs, labels_copy, weights, gamma, cells, c](Node<T>& self) {
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        const double g_up = static_cast<double>(self.grad[0]) / static_cast<double>(cells);
        for (std::int64_t r = 0; r < cells; ++r) {
          const int y = (*labels_copy)[r];
          const T* p = probs->ptr() + r * c;
          const double common =
              lossdetail::focal_common<T>(p[y], gamma, (*weights)[static_cast<std::size_t>(y)]) * g_up;
          T* dz = zn->grad.ptr() + r * c;
          for (int k = 0; k < c; ++k) {
            const double delta = (k == y) ? 1.0 : 0.0;
            dz[k] += static_cast<T>((static_cast<double>(p[k]) - delta) * common);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Box-mask loss: per anchor a 2-way softmax over (background, foreground)
// logits with focal factor and per-state weights, averaged over anchors not
// in the ignore state. Logit layout: channel 2a background, 2a+1 foreground.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> boxmask_focal_loss(const Var<T>& logits, const Tensor<std::uint8_t>& anchor_state,
                          double w_bg, double w_fg, double gamma) {
  const Tensor<T>& z = logits.value();
  check(z.ndim() == 4, "boxmask_focal_loss: logits must be (N,H,W,2Na)");
  const std::int64_t anchors = anchor_state.numel();
  check(anchors * 2 == z.numel(), "boxmask_focal_loss: anchor_state shape mismatch");

  std::int64_t valid = 0;
  double acc = 0.0;
  auto probs = std::make_shared<Tensor<T>>(std::vector<int>{static_cast<int>(anchors), 2});
  for (std::int64_t a = 0; a < anchors; ++a) {
    const T zb = z[a * 2], zf = z[a * 2 + 1];
    const T mx = std::max(zb, zf);
    const double eb = std::exp(static_cast<double>(zb - mx));
    const double ef = std::exp(static_cast<double>(zf - mx));
    const double denom = eb + ef;
    (*probs)[a * 2] = static_cast<T>(eb / denom);
    (*probs)[a * 2 + 1] = static_cast<T>(ef / denom);
    const std::uint8_t st = anchor_state[a];
    if (st == kAnchorIgnore) continue;
    valid++;
    const int y = st == kAnchorForeground ? 1 : 0;
    const double p_y = (*probs)[a * 2 + y];
    acc += lossdetail::focal_term(p_y, gamma, y == 1 ? w_fg : w_bg);
  }
  Tensor<T> out({1});
  out[0] = valid > 0 ? static_cast<T>(acc / static_cast<double>(valid)) : T(0);

  auto zn = logits.handle();
  auto state_copy = std::make_shared<Tensor<std::uint8_t>>(anchor_state);
  return detail::make_op<T>(
      std::move(out), {logits},
      [zn, probs, state_copy, w_bg, w_fg, gamma, anchors, valid](Node<T>& self) {
        if (!zn->requires_grad || valid == 0) return;
        zn->ensure_grad();
        const double g_up = static_cast<double>(self.grad[0]) / static_cast<double>(valid);
        for (std::int64_t a = 0; a < anchors; ++a) {
          const std::uint8_t st = (*state_copy)[a];
          if (st == kAnchorIgnore) continue;
          const int y = st == kAnchorForeground ? 1 : 0;
          const T* p = probs->ptr() + a * 2;
          const double common =
              lossdetail::focal_common<T>(p[y], gamma, y == 1 ? w_fg : w_bg) * g_up;
          T* dz = zn->grad.ptr() + a * 2;
          for (int k = 0; k < 2; ++k) {
            const double delta = (k == y) ? 1.0 : 0.0;
            dz[k] += static_cast<T>((static_cast<double>(p[k]) - delta) * common);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Box coordinate loss: Huber per delta, summed over the 4 coordinates and
// averaged over foreground anchors; zero when none are foreground.
// Prediction layout: channel 4a..4a+3 per anchor a.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> huber_box_loss(const Var<T>& pred, const Tensor<T>& target,
                      const Tensor<std::uint8_t>& anchor_state, double delta = 1.0) {
  const Tensor<T>& z = pred.value();
  check(delta > 0, "huber_box_loss: delta must be positive");
  check(z.numel() == target.numel(), "huber_box_loss: target shape mismatch");
  const std::int64_t anchors = anchor_state.numel();
  check(anchors * 4 == z.numel(), "huber_box_loss: anchor_state shape mismatch");

  std::int64_t fg = 0;
  double acc = 0.0;
  for (std::int64_t a = 0; a < anchors; ++a) {
    if (anchor_state[a] != kAnchorForeground) continue;
    fg++;
    for (int k = 0; k < 4; ++k) {
      const double r = static_cast<double>(z[a * 4 + k]) - target[a * 4 + k];
      const double ar = std::fabs(r);
      acc += ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
    }
  }
  Tensor<T> out({1});
  out[0] = fg > 0 ? static_cast<T>(acc / static_cast<double>(fg)) : T(0);

  auto zn = pred.handle();
  auto target_copy = std::make_shared<Tensor<T>>(target);
  auto state_copy = std::make_shared<Tensor<std::uint8_t>>(anchor_state);
  return detail::make_op<T>(
      std::move(out), {pred}, [zn, target_copy, state_copy, delta, anchors, fg](Node<T>& self) {
        if (!zn->requires_grad || fg == 0) return;
        zn->ensure_grad();
        const double g_up = static_cast<double>(self.grad[0]) / static_cast<double>(fg);
        for (std::int64_t a = 0; a < anchors; ++a) {
          if ((*state_copy)[a] != kAnchorForeground) continue;
          for (int k = 0; k < 4; ++k) {
            const double r =
                static_cast<double>(zn->value[a * 4 + k]) - (*target_copy)[a * 4 + k];
            zn->grad[a * 4 + k] += static_cast<T>(std::clamp(r, -delta, delta) * g_up);
          }
        }
      });
}

}  // namespace chargrid
