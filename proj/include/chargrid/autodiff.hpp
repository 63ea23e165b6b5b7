#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "chargrid/tensor.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over dense tensors. Graphs are built define-by-run;
// each op node stores its value, the parent handles, and a pull-style
// backward closure that adds into the parents' grad buffers. Only the ops
// the chargrid network needs are provided.
// ---------------------------------------------------------------------------

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;

  void ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>::zeros(value.shape);
  }
  void clear_grad() {
    grad.shape.clear();
    grad.data.clear();
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = false;
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(n_); }
  Node<T>* node() const { return n_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return n_; }

  const Tensor<T>& value() const { return n_->value; }
  Tensor<T>& value_mut() { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return !n_->grad.data.empty(); }
  const Tensor<T>& grad() const { return n_->grad; }
  void clear_grad() { n_->clear_grad(); }

 private:
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    n->parents.push_back(p.handle());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  if (n->requires_grad && backprop) {
    Node<T>* raw = n.get();
    n->backprop = [raw, fn = std::move(backprop)]() { fn(*raw); };
  }
  return Var<T>(std::move(n));
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& g) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
}

}  // namespace detail

// Accumulates d(loss)/d(node) for every reachable node with requires_grad.
template <typename T>
void backward(const Var<T>& loss) {
  check(loss.defined(), "backward: undefined loss");
  check(loss.value().numel() == 1, "backward: loss must be scalar, got shape " +
                                       shape_str(loss.value()));
  // Post-order DFS over the requires_grad subgraph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (!loss.node()->requires_grad) return;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backprop && !node->grad.data.empty()) node->backprop();
  }
}

// ---------------------------------------------------------------------------
// Convolution cores, NHWC layout, kernel (kh, kw, Ca, Cb) mapping Ca -> Cb.
// Same-padding: out = ceil(in/stride); total pad = max((out-1)*stride +
// (k-1)*dilation + 1 - in, 0), split floor(total/2) before / rest after.
// ---------------------------------------------------------------------------

namespace convdetail {

struct Geometry {
  int ho, wo, pt, pl;
};

inline int same_out(int in, int stride) { return (in + stride - 1) / stride; }

inline Geometry same_geometry(int hi, int wi, int kh, int kw, int stride, int dil) {
  Geometry g;
  g.ho = same_out(hi, stride);
  g.wo = same_out(wi, stride);
  const int keff_h = (kh - 1) * dil + 1;
  const int keff_w = (kw - 1) * dil + 1;
  g.pt = std::max((g.ho - 1) * stride + keff_h - hi, 0) / 2;
  g.pl = std::max((g.wo - 1) * stride + keff_w - wi, 0) / 2;
  return g;
}

// Y[n,io,jo,cb] = sum_{u,v,ca} X[n, io*s-pt+u*d, jo*s-pl+v*d, ca] * K[u,v,ca,cb]
template <typename T>
void fwd(const T* X, int N, int Hi, int Wi, int Ca, const T* K, int kh, int kw, int Cb,
         int stride, int dil, int pt, int pl, T* Y, int Ho, int Wo) {
  parallel_for(static_cast<std::int64_t>(N) * Ho, [&](std::int64_t b, std::int64_t e, int) {
    for (std::int64_t r = b; r < e; ++r) {
      const int n = static_cast<int>(r / Ho);
      const int io = static_cast<int>(r % Ho);
      const int y0 = io * stride - pt;
      T* yrow = Y + (static_cast<std::size_t>(n) * Ho + io) * Wo * Cb;
      for (int jo = 0; jo < Wo; ++jo) {
        T* y = yrow + static_cast<std::size_t>(jo) * Cb;
        for (int cb = 0; cb < Cb; ++cb) y[cb] = T(0);
        const int x0 = jo * stride - pl;
        for (int u = 0; u < kh; ++u) {
          const int yi = y0 + u * dil;
          if (yi < 0 || yi >= Hi) continue;
          const T* xrow = X + (static_cast<std::size_t>(n) * Hi + yi) * Wi * Ca;
          for (int v = 0; v < kw; ++v) {
            const int xi = x0 + v * dil;
            if (xi < 0 || xi >= Wi) continue;
            const T* x = xrow + static_cast<std::size_t>(xi) * Ca;
            const T* kuv = K + (static_cast<std::size_t>(u) * kw + v) * Ca * Cb;
            for (int ca = 0; ca < Ca; ++ca) {
              const T a = x[ca];
              if (a == T(0)) continue;  // one-hot and ReLU inputs are sparse
              const T* krow = kuv + static_cast<std::size_t>(ca) * Cb;
              for (int cb = 0; cb < Cb; ++cb) y[cb] += a * krow[cb];
            }
          }
        }
      }
    }
  });
}

// dX[n,yi,xi,ca] += sum_{u,v,cb} G[n,io,jo,cb] * K[u,v,ca,cb] over valid taps.
// Each (yi,xi) is written by exactly one iteration, so accumulation into an
// existing gradient buffer is race-free.
template <typename T>
void bwd_input(const T* G, int N, int Ho, int Wo, int Cb, const T* K, int kh, int kw, int Ca,
               int stride, int dil, int pt, int pl, T* dX, int Hi, int Wi) {
  parallel_for(static_cast<std::int64_t>(N) * Hi, [&](std::int64_t b, std::int64_t e, int) {
    for (std::int64_t r = b; r < e; ++r) {
      const int n = static_cast<int>(r / Hi);
      const int yi = static_cast<int>(r % Hi);
      T* dxrow = dX + (static_cast<std::size_t>(n) * Hi + yi) * Wi * Ca;
      for (int u = 0; u < kh; ++u) {
        const int ynum = yi + pt - u * dil;
        if (ynum < 0 || ynum % stride != 0) continue;
        const int io = ynum / stride;
        if (io >= Ho) continue;
        const T* grow = G + (static_cast<std::size_t>(n) * Ho + io) * Wo * Cb;
        for (int xi = 0; xi < Wi; ++xi) {
          T* dx = dxrow + static_cast<std::size_t>(xi) * Ca;
          for (int v = 0; v < kw; ++v) {
            const int xnum = xi + pl - v * dil;
            if (xnum < 0 || xnum % stride != 0) continue;
            const int jo = xnum / stride;
            if (jo >= Wo) continue;
            const T* g = grow + static_cast<std::size_t>(jo) * Cb;
            const T* kuv = K + (static_cast<std::size_t>(u) * kw + v) * Ca * Cb;
            for (int ca = 0; ca < Ca; ++ca) {
              const T* krow = kuv + static_cast<std::size_t>(ca) * Cb;
              T acc = T(0);
              for (int cb = 0; cb < Cb; ++cb) acc += g[cb] * krow[cb];
              dx[ca] += acc;
            }
          }
        }
      }
    }
  });
}

// dK[u,v,ca,cb] += sum over pixels X[...,ca] * G[...,cb]. Multi-chunk runs
// reduce per-chunk buffers in chunk order for reproducibility.
template <typename T>
void bwd_kernel(const T* X, int N, int Hi, int Wi, int Ca, const T* G, int Ho, int Wo, int Cb,
                int kh, int kw, int stride, int dil, int pt, int pl, T* dK) {
  const std::int64_t rows = static_cast<std::int64_t>(N) * Ho;
  const std::size_t ksize = static_cast<std::size_t>(kh) * kw * Ca * Cb;
  const int nchunks = static_cast<int>(std::min<std::int64_t>(thread_count(), std::max<std::int64_t>(rows, 1)));

  auto accumulate = [&](std::int64_t b, std::int64_t e, T* acc) {
    for (std::int64_t r = b; r < e; ++r) {
      const int n = static_cast<int>(r / Ho);
      const int io = static_cast<int>(r % Ho);
      const int y0 = io * stride - pt;
      const T* grow = G + (static_cast<std::size_t>(n) * Ho + io) * Wo * Cb;
      for (int jo = 0; jo < Wo; ++jo) {
        const T* g = grow + static_cast<std::size_t>(jo) * Cb;
        const int x0 = jo * stride - pl;
        for (int u = 0; u < kh; ++u) {
          const int yi = y0 + u * dil;
          if (yi < 0 || yi >= Hi) continue;
          const T* xrow = X + (static_cast<std::size_t>(n) * Hi + yi) * Wi * Ca;
          for (int v = 0; v < kw; ++v) {
            const int xi = x0 + v * dil;
            if (xi < 0 || xi >= Wi) continue;
            const T* x = xrow + static_cast<std::size_t>(xi) * Ca;
            T* duv = acc + (static_cast<std::size_t>(u) * kw + v) * Ca * Cb;
            for (int ca = 0; ca < Ca; ++ca) {
              const T a = x[ca];
              if (a == T(0)) continue;
              T* drow = duv + static_cast<std::size_t>(ca) * Cb;
              for (int cb = 0; cb < Cb; ++cb) drow[cb] += a * g[cb];
            }
          }
        }
      }
    }
  };

  if (nchunks <= 1) {
    accumulate(0, rows, dK);
    return;
  }
  std::vector<std::vector<T>> partial(static_cast<std::size_t>(nchunks));
  for (auto& p : partial) p.assign(ksize, T(0));
  parallel_for(rows, [&](std::int64_t b, std::int64_t e, int chunk) {
    accumulate(b, e, partial[static_cast<std::size_t>(chunk)].data());
  });
  for (const auto& p : partial) {
    for (std::size_t i = 0; i < ksize; ++i) dK[i] += p[i];
  }
}

}  // namespace convdetail

// ---------------------------------------------------------------------------
// conv2d: input (N,H,W,Cin), kernel (kh,kw,Cin,Cout), same padding.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, int stride = 1, int dilation = 1) {
  check(stride >= 1 && dilation >= 1, "conv2d: stride and dilation must be >= 1");
  const Tensor<T>& x = input.value();
  const Tensor<T>& k = kernel.value();
  check(x.ndim() == 4, "conv2d: input must be (N,H,W,C), got " + shape_str(x));
  check(k.ndim() == 4, "conv2d: kernel must be (kh,kw,Cin,Cout), got " + shape_str(k));
  check(x.dim(3) == k.dim(2), "conv2d: channel mismatch, input " + shape_str(x) +
                                  " vs kernel " + shape_str(k));
  const int N = x.dim(0), Hi = x.dim(1), Wi = x.dim(2), Ca = x.dim(3);
  const int kh = k.dim(0), kw = k.dim(1), Cb = k.dim(3);
  const auto geo = convdetail::same_geometry(Hi, Wi, kh, kw, stride, dilation);

  Tensor<T> y({N, geo.ho, geo.wo, Cb});
  convdetail::fwd(x.ptr(), N, Hi, Wi, Ca, k.ptr(), kh, kw, Cb, stride, dilation, geo.pt,
                  geo.pl, y.ptr(), geo.ho, geo.wo);

  auto xn = input.handle();
  auto kn = kernel.handle();
  return detail::make_op<T>(
      std::move(y), {input, kernel},
      [xn, kn, stride, dilation, geo, N, Hi, Wi, Ca, kh, kw, Cb](Node<T>& self) {
        const T* g = self.grad.ptr();
        if (xn->requires_grad) {
          xn->ensure_grad();
          convdetail::bwd_input(g, N, self.grad.dim(1), self.grad.dim(2), Cb,
                                kn->value.ptr(), kh, kw, Ca, stride, dilation, geo.pt, geo.pl,
                                xn->grad.ptr(), Hi, Wi);
        }
        if (kn->requires_grad) {
          kn->ensure_grad();
          convdetail::bwd_kernel(xn->value.ptr(), N, Hi, Wi, Ca, g, self.grad.dim(1),
                                 self.grad.dim(2), Cb, kh, kw, stride, dilation, geo.pt,
                                 geo.pl, kn->grad.ptr());
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d_transpose: the exact adjoint of the stride-2 same-padding conv2d
// with the same kernel. Input (N,H,W,Cb), kernel (kh,kw,Ca,Cb), output
// (N,2H,2W,Ca): forward here is conv2d's backward-input as a linear map.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d_transpose(const Var<T>& input, const Var<T>& kernel, int stride = 2) {
  check(stride == 2, "conv2d_transpose: only stride 2 is supported");
  const Tensor<T>& x = input.value();
  const Tensor<T>& k = kernel.value();
  check(x.ndim() == 4 && k.ndim() == 4, "conv2d_transpose: rank mismatch");
  check(x.dim(3) == k.dim(3), "conv2d_transpose: channel mismatch, input " + shape_str(x) +
                                  " vs kernel " + shape_str(k));
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), Cb = x.dim(3);
  const int kh = k.dim(0), kw = k.dim(1), Ca = k.dim(2);
  const int Ho = H * stride, Wo = W * stride;
  const auto geo = convdetail::same_geometry(Ho, Wo, kh, kw, stride, 1);
  check(geo.ho == H && geo.wo == W, "conv2d_transpose: geometry mismatch");

  Tensor<T> y({N, Ho, Wo, Ca});
  convdetail::bwd_input(x.ptr(), N, H, W, Cb, k.ptr(), kh, kw, Ca, stride, 1, geo.pt, geo.pl,
                        y.ptr(), Ho, Wo);

  auto xn = input.handle();
  auto kn = kernel.handle();
  return detail::make_op<T>(
      std::move(y), {input, kernel},
      [xn, kn, stride, geo, N, H, W, Cb, kh, kw, Ca, Ho, Wo](Node<T>& self) {
        const T* g = self.grad.ptr();
        if (xn->requires_grad) {
          xn->ensure_grad();
          // Adjoint of the adjoint: the plain convolution applied to the
          // incoming gradient, accumulated.
          Tensor<T> tmp({N, H, W, Cb});
          convdetail::fwd(g, N, Ho, Wo, Ca, kn->value.ptr(), kh, kw, Cb, stride, 1, geo.pt,
                          geo.pl, tmp.ptr(), H, W);
          detail::add_into(xn->grad, tmp);
        }
        if (kn->requires_grad) {
          kn->ensure_grad();
          // dK[u,v,ca,cb] = sum over scatter pairs grad_out[...,ca]*x[...,cb]:
          // same reduction as the conv kernel gradient with roles swapped.
          convdetail::bwd_kernel(self.grad.ptr(), N, Ho, Wo, Ca, xn->value.ptr(), H, W, Cb,
                                 kh, kw, stride, 1, geo.pt, geo.pl, kn->grad.ptr());
        }
      });
}

// ---------------------------------------------------------------------------
// Channel bias add: input (..., C) + bias (C).
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add_channel_bias(const Var<T>& input, const Var<T>& bias) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& b = bias.value();
  const int c = x.dim(x.ndim() - 1);
  check(b.numel() == c, "add_channel_bias: bias size mismatch");
  Tensor<T> y = x;
  const std::int64_t rows = x.numel() / c;
  for (std::int64_t r = 0; r < rows; ++r) {
    T* yr = y.ptr() + r * c;
    for (int i = 0; i < c; ++i) yr[i] += b[i];
  }
  auto xn = input.handle();
  auto bn = bias.handle();
  return detail::make_op<T>(std::move(y), {input, bias}, [xn, bn, rows, c](Node<T>& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      detail::add_into(xn->grad, self.grad);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* g = self.grad.ptr() + r * c;
        for (int i = 0; i < c; ++i) bn->grad[i] += g[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization over (N,H,W) per channel. Train mode normalizes with
// batch statistics (biased variance) and updates the running buffers in
// `stats`; eval mode reads them. Backward in train mode differentiates
// through the batch statistics.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;  // (C)
  Tensor<T> running_var;   // (C)
  std::int64_t updates = 0;

  explicit BatchNormStats(int c = 0)
      : running_mean({c}, T(0)), running_var({c}, T(1)) {}
};

template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormStats<T>& stats, bool train, double eps = 1e-5,
                  double running_momentum = 0.9) {
  const Tensor<T>& x = input.value();
  check(x.ndim() == 4, "batch_norm: input must be (N,H,W,C)");
  const int c = x.dim(3);
  check(gamma.value().numel() == c && beta.value().numel() == c,
        "batch_norm: gamma/beta must have C elements");
  check(stats.running_mean.numel() == c, "batch_norm: stats channel mismatch");
  const std::int64_t m = x.numel() / c;

  auto xhat = std::make_shared<Tensor<T>>(x.shape);
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));

  if (train) {
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
    std::vector<double> var(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t r = 0; r < m; ++r) {
      const T* px = x.ptr() + r * c;
      for (int k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] += px[k];
    }
    for (int k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] /= static_cast<double>(m);
    for (std::int64_t r = 0; r < m; ++r) {
      const T* px = x.ptr() + r * c;
      for (int k = 0; k < c; ++k) {
        const double d = px[k] - mean[static_cast<std::size_t>(k)];
        var[static_cast<std::size_t>(k)] += d * d;
      }
    }
    for (int k = 0; k < c; ++k) {
      var[static_cast<std::size_t>(k)] /= static_cast<double>(m);
      (*rstd)[static_cast<std::size_t>(k)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(k)] + eps);
      stats.running_mean[k] = static_cast<T>(running_momentum * stats.running_mean[k] +
                                             (1.0 - running_momentum) * mean[static_cast<std::size_t>(k)]);
      stats.running_var[k] = static_cast<T>(running_momentum * stats.running_var[k] +
                                            (1.0 - running_momentum) * var[static_cast<std::size_t>(k)]);
    }
    stats.updates++;
    for (std::int64_t r = 0; r < m; ++r) {
      const T* px = x.ptr() + r * c;
      T* ph = xhat->ptr() + r * c;
      for (int k = 0; k < c; ++k) {
        ph[k] = static_cast<T>((px[k] - mean[static_cast<std::size_t>(k)]) *
                               (*rstd)[static_cast<std::size_t>(k)]);
      }
    }
  } else {
    if (stats.updates == 0) {
      static bool warned = false;
      if (!warned) {
        warned = true;
        std::fputs("[chargrid] batch_norm eval before any running-stat update; "
                   "using init stats (mean 0, var 1)\n", stderr);
      }
    }
    for (int k = 0; k < c; ++k) {
      (*rstd)[static_cast<std::size_t>(k)] =
          1.0 / std::sqrt(static_cast<double>(stats.running_var[k]) + eps);
    }
    for (std::int64_t r = 0; r < m; ++r) {
      const T* px = x.ptr() + r * c;
      T* ph = xhat->ptr() + r * c;
      for (int k = 0; k < c; ++k) {
        ph[k] = static_cast<T>((px[k] - stats.running_mean[k]) * (*rstd)[static_cast<std::size_t>(k)]);
      }
    }
  }

  Tensor<T> y(x.shape);
  const T* pg = gamma.value().ptr();
  const T* pb = beta.value().ptr();
  for (std::int64_t r = 0; r < m; ++r) {
    const T* ph = xhat->ptr() + r * c;
    T* py = y.ptr() + r * c;
    for (int k = 0; k < c; ++k) py[k] = pg[k] * ph[k] + pb[k];
  }

  auto xn = input.handle();
  auto gn = gamma.handle();
  auto bn = beta.handle();
  return detail::make_op<T>(
      std::move(y), {input, gamma, beta}, [xn, gn, bn, xhat, rstd, train, m, c](Node<T>& self) {
        const T* g = self.grad.ptr();
        std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0);
        std::vector<double> sum_gx(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t r = 0; r < m; ++r) {
          const T* pg = g + r * c;
          const T* ph = xhat->ptr() + r * c;
          for (int k = 0; k < c; ++k) {
            sum_g[static_cast<std::size_t>(k)] += pg[k];
            sum_gx[static_cast<std::size_t>(k)] += static_cast<double>(pg[k]) * ph[k];
          }
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int k = 0; k < c; ++k) gn->grad[k] += static_cast<T>(sum_gx[static_cast<std::size_t>(k)]);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int k = 0; k < c; ++k) bn->grad[k] += static_cast<T>(sum_g[static_cast<std::size_t>(k)]);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const T* pgam = gn->value.ptr();
          if (train) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::int64_t r = 0; r < m; ++r) {
              const T* pg = g + r * c;
              const T* ph = xhat->ptr() + r * c;
              T* dx = xn->grad.ptr() + r * c;
              for (int k = 0; k < c; ++k) {
                const double a = (*rstd)[static_cast<std::size_t>(k)] * pgam[k];
                dx[k] += static_cast<T>(a * (pg[k] - sum_g[static_cast<std::size_t>(k)] * inv_m -
                                             ph[k] * sum_gx[static_cast<std::size_t>(k)] * inv_m));
              }
            }
          } else {
            for (std::int64_t r = 0; r < m; ++r) {
              const T* pg = g + r * c;
              T* dx = xn->grad.ptr() + r * c;
              for (int k = 0; k < c; ++k) {
                dx[k] += static_cast<T>(pg[k] * pgam[k] * (*rstd)[static_cast<std::size_t>(k)]);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise activations and channel softmax.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> relu(const Var<T>& input) {
  Tensor<T> y = input.value();
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  auto xn = input.handle();
  return detail::make_op<T>(std::move(y), {input}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      if (xn->value.data[i] > T(0)) xn->grad.data[i] += self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  Tensor<T> y = input.value();
  for (auto& v : y.data) v = T(1) / (T(1) + std::exp(-v));
  auto yv = std::make_shared<Tensor<T>>(y);
  auto xn = input.handle();
  return detail::make_op<T>(std::move(y), {input}, [xn, yv](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      const T s = yv->data[i];
      xn->grad.data[i] += self.grad.data[i] * s * (T(1) - s);
    }
  });
}

// Softmax over the trailing axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax_values(const Tensor<T>& x) {
  const int c = x.dim(x.ndim() - 1);
  const std::int64_t rows = x.numel() / c;
  Tensor<T> y(x.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* px = x.ptr() + r * c;
    T* py = y.ptr() + r * c;
    T mx = px[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, px[k]);
    double denom = 0.0;
    for (int k = 0; k < c; ++k) {
      const T e = std::exp(px[k] - mx);
      py[k] = e;
      denom += e;
    }
    const T inv = static_cast<T>(1.0 / denom);
    for (int k = 0; k < c; ++k) py[k] *= inv;
  }
  return y;
}

template <typename T>
Var<T> softmax_channels(const Var<T>& input) {
  Tensor<T> y = softmax_values(input.value());
  auto yv = std::make_shared<Tensor<T>>(y);
  auto xn = input.handle();
  return detail::make_op<T>(std::move(y), {input}, [xn, yv](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const int c = yv->dim(yv->ndim() - 1);
    const std::int64_t rows = yv->numel() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* py = yv->ptr() + r * c;
      const T* pg = self.grad.ptr() + r * c;
      T* dx = xn->grad.ptr() + r * c;
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += static_cast<double>(pg[k]) * py[k];
      for (int k = 0; k < c; ++k) dx[k] += static_cast<T>(py[k] * (pg[k] - dot));
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial dropout: zeroes whole channels per sample in train mode and scales
// survivors by 1/(1-p); identity in eval mode.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> spatial_dropout(const Var<T>& input, double p, bool train, Rng& rng) {
  check(p >= 0.0 && p < 1.0, "spatial_dropout: need 0 <= p < 1");
  if (!train || p == 0.0) return input;
  const Tensor<T>& x = input.value();
  check(x.ndim() == 4, "spatial_dropout: input must be (N,H,W,C)");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  auto mask = std::make_shared<Tensor<T>>(std::vector<int>{n, c});
  std::bernoulli_distribution drop(p);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) mask->at(i, k) = drop(rng) ? T(0) : keep_scale;
  }
  Tensor<T> y(x.shape);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const T* mrow = &mask->at(i, 0);
    const T* px = x.ptr() + static_cast<std::int64_t>(i) * hw * c;
    T* py = y.ptr() + static_cast<std::int64_t>(i) * hw * c;
    for (std::int64_t r = 0; r < hw; ++r) {
      for (int k = 0; k < c; ++k) py[r * c + k] = px[r * c + k] * mrow[k];
    }
  }
  auto xn = input.handle();
  return detail::make_op<T>(std::move(y), {input}, [xn, mask, hw, c](Node<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const int n = mask->dim(0);
    for (int i = 0; i < n; ++i) {
      const T* mrow = &mask->at(i, 0);
      const T* pg = self.grad.ptr() + static_cast<std::int64_t>(i) * hw * c;
      T* dx = xn->grad.ptr() + static_cast<std::int64_t>(i) * hw * c;
      for (std::int64_t r = 0; r < hw; ++r) {
        for (int k = 0; k < c; ++k) dx[r * c + k] += pg[r * c + k] * mrow[k];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Channel concatenation of two tensors with equal leading dims.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  check(xa.ndim() == xb.ndim() && xa.ndim() >= 2, "concat_channels: rank mismatch");
  for (int i = 0; i + 1 < xa.ndim(); ++i) {
    check(xa.dim(i) == xb.dim(i), "concat_channels: leading dims differ, " + shape_str(xa) +
                                      " vs " + shape_str(xb));
  }
  const int ca = xa.dim(xa.ndim() - 1), cb = xb.dim(xb.ndim() - 1);
  std::vector<int> oshape = xa.shape;
  oshape.back() = ca + cb;
  Tensor<T> y(oshape);
  const std::int64_t rows = xa.numel() / ca;
  for (std::int64_t r = 0; r < rows; ++r) {
    T* py = y.ptr() + r * (ca + cb);
    const T* pa = xa.ptr() + r * ca;
    const T* pb = xb.ptr() + r * cb;
    std::copy(pa, pa + ca, py);
    std::copy(pb, pb + cb, py + ca);
  }
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn, rows, ca, cb](Node<T>& self) {
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* pg = self.grad.ptr() + r * (ca + cb);
      if (an->requires_grad) {
        T* da = an->grad.ptr() + r * ca;
        for (int i = 0; i < ca; ++i) da[i] += pg[i];
      }
      if (bn->requires_grad) {
        T* db = bn->grad.ptr() + r * cb;
        for (int i = 0; i < cb; ++i) db[i] += pg[ca + i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Small arithmetic ops (used by loss composition and tests).
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.value().data[i];
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      detail::add_into(an->grad, self.grad);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      detail::add_into(bn->grad, self.grad);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= b.value().data[i];
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        an->grad.data[i] += self.grad.data[i] * bn->value.data[i];
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        bn->grad.data[i] += self.grad.data[i] * an->value.data[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> y = a.value();
  for (auto& v : y.data) v *= s;
  auto an = a.handle();
  return detail::make_op<T>(std::move(y), {a}, [an, s](Node<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      an->grad.data[i] += self.grad.data[i] * s;
    }
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  double acc = 0.0;
  for (const T& v : a.value().data) acc += v;
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc);
  auto an = a.handle();
  return detail::make_op<T>(std::move(y), {a}, [an](Node<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const T g = self.grad[0];
    for (auto& v : an->grad.data) v += g;
  });
}

}  // namespace chargrid
