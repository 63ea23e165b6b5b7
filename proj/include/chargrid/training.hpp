#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "chargrid/losses.hpp"
#include "chargrid/network.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Loss / optimizer configuration. The focal factor and the static class
// weighting both act on the cross-entropy terms; either can be disabled
// independently.
// ---------------------------------------------------------------------------

struct LossConfig {
  double gamma = 2.0;
  std::vector<double> class_weights = std::vector<double>(kNumFieldClasses, 1.0);
  double huber_delta = 1.0;
  std::array<double, 2> boxmask_weights = {1.0, 1.0};  // (background, foreground)
  bool use_focal = true;
  bool use_class_weights = true;

  void validate() const {
    check(gamma >= 0.0, "loss gamma must be >= 0");
    check(huber_delta > 0.0, "huber delta must be positive");
    for (double w : class_weights) check(w > 0.0, "class weights must be positive");
    check(boxmask_weights[0] > 0.0 && boxmask_weights[1] > 0.0,
          "boxmask weights must be positive");
  }

  double effective_gamma() const { return use_focal ? gamma : 0.0; }
};

struct OptimizerConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 2;        // the reference setup used 7; desk default is 2
  int max_iterations = 1000;
  int warmup_iters = 0;      // optional linear warmup, off by default

  void validate() const {
    check(lr > 0.0, "learning rate must be positive");
    check(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
    check(weight_decay >= 0.0, "weight decay must be >= 0");
    check(batch_size >= 1 && max_iterations >= 0, "invalid batch/iteration counts");
  }
};

// ---------------------------------------------------------------------------
// The three loss terms of the total objective.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> seg_loss(const Var<T>& seg_logits, const Tensor<int>& seg_labels, const LossConfig& cfg) {
  std::vector<double> w = cfg.class_weights;
  if (!cfg.use_class_weights) w.assign(w.size(), 1.0);
  return seg_focal_loss(seg_logits, seg_labels, w, cfg.effective_gamma());
}

template <typename T>
Var<T> boxmask_loss(const Var<T>& boxmask_logits, const Tensor<std::uint8_t>& anchor_state,
                    const LossConfig& cfg) {
  const double wbg = cfg.use_class_weights ? cfg.boxmask_weights[0] : 1.0;
  const double wfg = cfg.use_class_weights ? cfg.boxmask_weights[1] : 1.0;
  return boxmask_focal_loss(boxmask_logits, anchor_state, wbg, wfg, cfg.effective_gamma());
}

template <typename T>
Var<T> boxcoord_loss(const Var<T>& box_deltas_pred, const Tensor<T>& box_deltas_target,
                     const Tensor<std::uint8_t>& anchor_state, double delta) {
  return huber_box_loss(box_deltas_pred, box_deltas_target, anchor_state, delta);
}

// The three terms contribute equally: plain unweighted sum.
template <typename T>
Var<T> total_loss(const Var<T>& l_seg, const Var<T>& l_boxmask, const Var<T>& l_boxcoord) {
  return add(add(l_seg, l_boxmask), l_boxcoord);
}

// ---------------------------------------------------------------------------
// SGD with momentum and coupled weight decay:
//   v <- beta*v + (g + lambda*w [decay-eligible]);  w <- w - alpha*v
// Decay applies to conv kernels only, never biases or batch-norm parameters.
// ---------------------------------------------------------------------------

template <typename T>
void sgd_step(std::deque<Parameter<T>>& params, const OptimizerConfig& cfg, double lr) {
  for (auto& p : params) {
    if (!p.var.has_grad()) continue;
    const Tensor<T>& g = p.var.grad();
    Tensor<T>& w = p.var.value_mut();
    Tensor<T>& v = p.momentum;
    const T beta = static_cast<T>(cfg.momentum);
    const T lambda = static_cast<T>(p.decay ? cfg.weight_decay : 0.0);
    const T alpha = static_cast<T>(lr);
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const T gi = g.data[i];
      if (!std::isfinite(static_cast<double>(gi))) {
        fail("non-finite gradient in parameter " + p.name);
      }
      v.data[i] = beta * v.data[i] + (gi + lambda * w.data[i]);
      w.data[i] -= alpha * v.data[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Random crop augmentation. The input (and the per-cell targets) are padded
// by `pad` on every side with background and cropped back to the original
// size at an integer offset drawn uniformly from [0, 2*pad]^2; offset
// (pad, pad) is the identity. Ground-truth boxes shift consistently.
// ---------------------------------------------------------------------------

struct CropOffset {
  int dy = 0;
  int dx = 0;
};

inline CropOffset draw_crop_offset(int pad, Rng& rng) {
  std::uniform_int_distribution<int> d(0, 2 * pad);
  return CropOffset{d(rng), d(rng)};
}

// One-hot input: vacated cells become pure background (channel 0 = 1).
template <typename T>
Tensor<T> shift_onehot(const Tensor<T>& in, int pad, const CropOffset& off) {
  check(in.ndim() == 3, "shift_onehot expects (H,W,C)");
  const int h = in.dim(0), w = in.dim(1), c = in.dim(2);
  const int sy = pad - off.dy;  // content translation
  const int sx = pad - off.dx;
  Tensor<T> out({h, w, c});
  for (int i = 0; i < h; ++i) {
    const int si = i - sy;
    for (int j = 0; j < w; ++j) {
      const int sj = j - sx;
      T* o = &out.at(i, j, 0);
      if (si >= 0 && si < h && sj >= 0 && sj < w) {
        const T* p = &in.at(si, sj, 0);
        std::copy(p, p + c, o);
      } else {
        o[0] = T(1);
      }
    }
  }
  return out;
}

inline Tensor<int> shift_labels(const Tensor<int>& in, int pad, const CropOffset& off,
                                int fill = 0) {
  const int h = in.dim(0), w = in.dim(1);
  const int sy = pad - off.dy, sx = pad - off.dx;
  Tensor<int> out({h, w}, fill);
  for (int i = 0; i < h; ++i) {
    const int si = i - sy;
    if (si < 0 || si >= h) continue;
    for (int j = 0; j < w; ++j) {
      const int sj = j - sx;
      if (sj < 0 || sj >= w) continue;
      out.at(i, j) = in.at(si, sj);
    }
  }
  return out;
}

// Shift boxes by the same translation and clip to the grid; boxes that leave
// the grid entirely are dropped.
inline std::vector<RectD> shift_boxes(const std::vector<RectD>& boxes, int grid_h, int grid_w,
                                      int pad, const CropOffset& off) {
  const double sy = pad - off.dy, sx = pad - off.dx;
  std::vector<RectD> out;
  for (const RectD& b : boxes) {
    const double y0 = std::max(0.0, b.y + sy);
    const double x0 = std::max(0.0, b.x + sx);
    const double y1 = std::min(static_cast<double>(grid_h), b.bottom() + sy);
    const double x1 = std::min(static_cast<double>(grid_w), b.right() + sx);
    if (y1 - y0 <= 0.0 || x1 - x0 <= 0.0) continue;
    out.push_back(RectD{x0, y0, x1 - x0, y1 - y0});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training items and the loop.
// ---------------------------------------------------------------------------

struct TrainItem {
  Chargrid tokens2x;            // token grid at stage-1 resolution
  Tensor<int> seg_labels;       // (H, W)
  std::vector<RectD> gt_boxes;  // grid coordinates, unshifted
};

struct TrainDataset {
  std::vector<TrainItem> items;
  std::vector<double> sampling_weights;  // normalized
  int grid_h = 0, grid_w = 0, n_vocab = 0;
};

inline TrainDataset prepare_dataset(std::span<const DocumentPage> pages, const Vocabulary& vocab,
                                    int grid_h, int grid_w, double oversample_ratio = 3.0,
                                    int oversample_threshold = 3, int stage1_scale = 2) {
  check(!pages.empty(), "prepare_dataset: no pages");
  TrainDataset ds;
  ds.grid_h = grid_h;
  ds.grid_w = grid_w;
  ds.n_vocab = vocab.n_classes;
  for (const DocumentPage& page : pages) {
    TrainItem it;
    it.tokens2x = build_chargrid(page, vocab, grid_h * stage1_scale, grid_w * stage1_scale);
    it.seg_labels = rasterize_segmentation(page, grid_h, grid_w);
    it.gt_boxes = lineitem_row_boxes(page, grid_h, grid_w);
    ds.items.push_back(std::move(it));
  }
  ds.sampling_weights = compute_sampling_weights(pages, oversample_ratio, oversample_threshold);
  return ds;
}

// Pooled statistics for the static weighting, computed on unaugmented targets.
inline void fill_loss_weights(const TrainDataset& ds, const AnchorSet& anchors, LossConfig& cfg,
                              double c = 1.04) {
  std::vector<Tensor<int>> seg;
  std::vector<Tensor<std::uint8_t>> states;
  seg.reserve(ds.items.size());
  for (const TrainItem& it : ds.items) {
    seg.push_back(it.seg_labels);
    states.push_back(match_anchors(anchors, it.gt_boxes).state);
  }
  cfg.class_weights = compute_class_weights(seg, kNumFieldClasses, c);
  cfg.boxmask_weights = compute_boxmask_weights(states, c);
}

struct TrainLogRow {
  std::int64_t iteration = 0;
  double l_seg = 0, l_boxmask = 0, l_boxcoord = 0, l_total = 0;
  double lr = 0;
  double wall_seconds = 0;
};

struct TrainOptions {
  int pad = 16;
  int checkpoint_every = 500;
  std::string checkpoint_dir;  // empty: no checkpoints written
  // Invoked every eval_every iterations (and at the end); return true to stop.
  int eval_every = 0;
  std::function<bool(std::int64_t iteration, Network<float>&)> eval_hook;
};

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void rng_state_from_string(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  check(!is.fail(), "invalid RNG state string");
}

struct TrainState {
  std::int64_t iteration = 0;
  Rng rng;
  std::vector<TrainLogRow> log;
};

inline void save_checkpoint(Network<float>& net, const TrainState& state,
                            const LossConfig& loss_cfg, const AnchorSet& anchors,
                            const std::string& path_prefix) {
  TensorFile tf;
  net.save_tensors(tf);
  tf.save(path_prefix + ".tensors");
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["network"] = network_config_to_json(net.config());
  meta["iteration"] = state.iteration;
  meta["rng_state"] = rng_state_string(state.rng);
  meta["class_weights"] = loss_cfg.class_weights;
  meta["boxmask_weights"] = loss_cfg.boxmask_weights;
  std::vector<double> heights;
  for (const auto& s : anchors.shapes) heights.push_back(s[1]);
  meta["anchor_heights"] = heights;
  std::ofstream f(path_prefix + ".json");
  check(f.good(), "cannot write checkpoint meta: " + path_prefix + ".json");
  f << meta.dump(2) << "\n";
}

struct CheckpointMeta {
  NetworkConfig network;
  std::int64_t iteration = 0;
  std::string rng_state;
  std::vector<double> class_weights;
  std::array<double, 2> boxmask_weights = {1.0, 1.0};
  std::vector<double> anchor_heights = {4, 8, 16, 32};
};

inline CheckpointMeta load_checkpoint_meta(const std::string& path_prefix) {
  std::ifstream f(path_prefix + ".json");
  check(f.good(), "cannot open checkpoint meta: " + path_prefix + ".json");
  nlohmann::json meta;
  f >> meta;
  check(meta.value("format_version", 0) == 1, "unsupported checkpoint format version");
  CheckpointMeta m;
  m.network = network_config_from_json(meta.at("network"));
  m.iteration = meta.value("iteration", 0);
  m.rng_state = meta.value("rng_state", "");
  m.class_weights = meta.value("class_weights", std::vector<double>(kNumFieldClasses, 1.0));
  if (meta.contains("boxmask_weights")) {
    const auto v = meta.at("boxmask_weights").get<std::vector<double>>();
    check(v.size() == 2, "boxmask_weights must have 2 entries");
    m.boxmask_weights = {v[0], v[1]};
  }
  m.anchor_heights = meta.value("anchor_heights", std::vector<double>{4, 8, 16, 32});
  return m;
}

inline void load_checkpoint(Network<float>& net, TrainState& state,
                            const std::string& path_prefix) {
  const CheckpointMeta meta = load_checkpoint_meta(path_prefix);
  check(meta.network == net.config(), "checkpoint config does not match network config");
  net.load_tensors(TensorFile::load(path_prefix + ".tensors"));
  state.iteration = meta.iteration;
  if (!meta.rng_state.empty()) rng_state_from_string(state.rng, meta.rng_state);
}

inline void write_train_log_csv(const std::vector<TrainLogRow>& rows, const std::string& path) {
  std::ofstream f(path);
  check(f.good(), "cannot write training log: " + path);
  f << "iteration,L_seg,L_boxmask,L_boxcoord,L_total,lr,wall_seconds\n";
  f.setf(std::ios::fmtflags(0), std::ios::floatfield);
  f.precision(9);
  for (const auto& r : rows) {
    f << r.iteration << ',' << r.l_seg << ',' << r.l_boxmask << ',' << r.l_boxcoord << ','
      << r.l_total << ',' << r.lr << ',' << r.wall_seconds << "\n";
  }
}

// One training iteration on an explicit batch of item indices.
inline TrainLogRow train_step(Network<float>& net, TrainDataset& ds, const AnchorSet& anchors,
                              const LossConfig& loss_cfg, const OptimizerConfig& opt_cfg,
                              std::span<const std::size_t> batch_items,
                              std::span<const CropOffset> offsets, int pad, double lr,
                              Rng& rng) {
  const int n = static_cast<int>(batch_items.size());
  const int h = ds.grid_h, w = ds.grid_w, nc = ds.n_vocab;
  const int na = anchors.n_a();
  Tensor<float> input({n, h, w, nc});
  Tensor<int> seg_labels({n, h, w});
  Tensor<std::uint8_t> anchor_state({n, h, w, na});
  Tensor<float> box_targets({n, h, w, na, 4});

  for (int b = 0; b < n; ++b) {
    const TrainItem& it = ds.items[batch_items[static_cast<std::size_t>(b)]];
    const CropOffset off = offsets[static_cast<std::size_t>(b)];
    Tensor<float> one = onehot_bilinear<float>(it.tokens2x, nc, h, w);
    one = shift_onehot(one, pad, off);
    std::copy(one.data.begin(), one.data.end(),
              input.data.begin() + static_cast<std::size_t>(b) * one.data.size());
    Tensor<int> lab = shift_labels(it.seg_labels, pad, off);
    std::copy(lab.data.begin(), lab.data.end(),
              seg_labels.data.begin() + static_cast<std::size_t>(b) * lab.data.size());
    const std::vector<RectD> boxes = shift_boxes(it.gt_boxes, h, w, pad, off);
    const AnchorMatch match = match_anchors(anchors, boxes);
    std::copy(match.state.data.begin(), match.state.data.end(),
              anchor_state.data.begin() + static_cast<std::size_t>(b) * match.state.data.size());
    Tensor<float> deltas = build_box_delta_targets<float>(anchors, match, boxes);
    std::copy(deltas.data.begin(), deltas.data.end(),
              box_targets.data.begin() + static_cast<std::size_t>(b) * deltas.data.size());
  }

  net.zero_grads();
  auto out = net.forward(input, true, rng);
  auto l_seg = seg_loss(out.seg_logits, seg_labels, loss_cfg);
  auto l_mask = boxmask_loss(out.boxmask_logits, anchor_state, loss_cfg);
  auto l_coord = boxcoord_loss(out.box_deltas, box_targets, anchor_state, loss_cfg.huber_delta);
  auto l_total = total_loss(l_seg, l_mask, l_coord);
  backward(l_total);
  sgd_step(net.parameters(), opt_cfg, lr);

  TrainLogRow row;
  row.l_seg = l_seg.value()[0];
  row.l_boxmask = l_mask.value()[0];
  row.l_boxcoord = l_coord.value()[0];
  row.l_total = l_total.value()[0];
  row.lr = lr;
  return row;
}

// Full loop: weighted page sampling, augmentation, forward/backward/update,
// per-iteration loss logging, periodic checkpoints. Deterministic for a fixed
// seed with thread count 1. Aborts on a non-finite loss, keeping the last
// checkpoint on disk.
inline TrainState train(TrainDataset& ds, Network<float>& net, const LossConfig& loss_cfg,
                        const OptimizerConfig& opt_cfg, const AnchorSet& anchors,
                        std::uint64_t seed, const TrainOptions& opts = {}) {
  loss_cfg.validate();
  opt_cfg.validate();
  check(!ds.items.empty(), "train: dataset is empty");
  TrainState state;
  state.rng.seed(seed);

  namespace fs = std::filesystem;
  if (!opts.checkpoint_dir.empty()) fs::create_directories(opts.checkpoint_dir);

  std::discrete_distribution<std::size_t> sampler(ds.sampling_weights.begin(),
                                                  ds.sampling_weights.end());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t iter = 1; iter <= opt_cfg.max_iterations; ++iter) {
    std::vector<std::size_t> batch(static_cast<std::size_t>(opt_cfg.batch_size));
    std::vector<CropOffset> offsets(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      batch[b] = sampler(state.rng);
      offsets[b] = opts.pad > 0 ? draw_crop_offset(opts.pad, state.rng) : CropOffset{0, 0};
    }
    const double lr = opt_cfg.warmup_iters > 0 && iter <= opt_cfg.warmup_iters
                          ? opt_cfg.lr * static_cast<double>(iter) / opt_cfg.warmup_iters
                          : opt_cfg.lr;
    TrainLogRow row = train_step(net, ds, anchors, loss_cfg, opt_cfg, batch, offsets,
                                 opts.pad, lr, state.rng);
    row.iteration = iter;
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.iteration = iter;
    state.log.push_back(row);

    if (!std::isfinite(row.l_total)) {
      fail("non-finite total loss at iteration " + std::to_string(iter) +
           "; last checkpoint retained");
    }
    if (!opts.checkpoint_dir.empty() && opts.checkpoint_every > 0 &&
        (iter % opts.checkpoint_every == 0 || iter == opt_cfg.max_iterations)) {
      save_checkpoint(net, state, loss_cfg, anchors,
                      opts.checkpoint_dir + "/iter_" + std::to_string(iter));
    }
    if (opts.eval_hook && opts.eval_every > 0 &&
        (iter % opts.eval_every == 0 || iter == opt_cfg.max_iterations)) {
      if (opts.eval_hook(iter, net)) break;
    }
  }
  return state;
}

}  // namespace chargrid
