#pragma once

#include <array>
#include <deque>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chargrid/autodiff.hpp"
#include "chargrid/container.hpp"

namespace chargrid {

// ---------------------------------------------------------------------------
// Configuration of the encoder-decoder network: a 5-block VGG-style encoder
// (stride-2 downsampling in blocks 1-3, dilation growing in 3-5) and two
// structurally identical decoder branches that upsample back to full
// resolution, one for segmentation and one for box regression.
// ---------------------------------------------------------------------------

struct NetworkConfig {
  int base_channels = 64;
  int n_vocab = 54;
  int n_seg_classes = 9;
  int n_anchors = 4;
  int input_h = 336;
  int input_w = 256;
  double dropout_p = 0.1;
  std::array<int, 5> encoder_channels = {64, 128, 256, 512, 512};
  std::array<int, 5> dilations = {1, 1, 2, 4, 8};

  static std::array<int, 5> channels_for_base(int c) {
    return {c, 2 * c, 4 * c, 8 * c, 8 * c};
  }

  void validate() const {
    check(input_h % 8 == 0 && input_w % 8 == 0,
          "input dims must be divisible by 8 (three stride-2 stages)");
    check(input_h >= 8 && input_w >= 8, "input dims too small");
    check(n_vocab >= 3 && n_seg_classes >= 2 && n_anchors >= 1, "invalid head sizes");
    check(dropout_p >= 0.0 && dropout_p < 1.0, "dropout_p must be in [0,1)");
    for (int c : encoder_channels) check(c >= 1, "encoder channels must be >= 1");
    for (int d : dilations) check(d >= 1, "dilations must be >= 1");
    check(encoder_channels[4] % 8 == 0,
          "encoder_channels[4] must be divisible by 8 (three channel halvings)");
  }

  bool operator==(const NetworkConfig&) const = default;
};

inline nlohmann::json network_config_to_json(const NetworkConfig& c) {
  return nlohmann::json{{"base_channels", c.base_channels},
                        {"n_vocab", c.n_vocab},
                        {"n_seg_classes", c.n_seg_classes},
                        {"n_anchors", c.n_anchors},
                        {"input_h", c.input_h},
                        {"input_w", c.input_w},
                        {"dropout_p", c.dropout_p},
                        {"encoder_channels", c.encoder_channels},
                        {"dilations", c.dilations}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.base_channels = j.value("base_channels", 64);
  c.encoder_channels = NetworkConfig::channels_for_base(c.base_channels);
  c.n_vocab = j.value("n_vocab", 54);
  c.n_seg_classes = j.value("n_seg_classes", 9);
  c.n_anchors = j.value("n_anchors", 4);
  c.input_h = j.value("input_h", 336);
  c.input_w = j.value("input_w", 256);
  c.dropout_p = j.value("dropout_p", 0.1);
  if (j.contains("encoder_channels")) {
    const auto v = j.at("encoder_channels").get<std::vector<int>>();
    check(v.size() == 5, "encoder_channels must have 5 entries");
    std::copy(v.begin(), v.end(), c.encoder_channels.begin());
  }
  if (j.contains("dilations")) {
    const auto v = j.at("dilations").get<std::vector<int>>();
    check(v.size() == 5, "dilations must have 5 entries");
    std::copy(v.begin(), v.end(), c.dilations.begin());
  }
  c.validate();
  return c;
}

// Feature-map resolutions after each encoder block.
inline std::array<std::pair<int, int>, 5> encoder_resolutions(const NetworkConfig& c) {
  std::array<std::pair<int, int>, 5> r;
  int h = c.input_h, w = c.input_w;
  for (int b = 0; b < 5; ++b) {
    if (b < 3) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    r[static_cast<std::size_t>(b)] = {h, w};
  }
  return r;
}

// ---------------------------------------------------------------------------
// Parameter: value + gradient slot + optimizer state.
// ---------------------------------------------------------------------------

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool decay = false;     // weight decay applies to conv kernels only
  Tensor<T> momentum;

  Parameter(std::string n, Tensor<T> value, bool d)
      : name(std::move(n)), var(Var<T>::parameter(std::move(value))), decay(d),
        momentum(var.value().shape) {}
};

template <typename T = float>
class Network {
 public:
  struct ConvUnit {
    int kernel = -1;
    int gamma = -1, beta = -1, stats = -1;
    int stride = 1, dilation = 1;
  };
  struct UpBlock {
    ConvUnit lateral;   // 1x1 on the concatenated features
    ConvUnit up;        // 3x3 stride-2 transposed conv (+BN+ReLU)
    std::array<ConvUnit, 2> convs;
  };
  struct Head {
    int kernel = -1;
    int bias = -1;
  };
  struct Outputs {
    Var<T> seg_logits;      // (N,H,W,n_seg_classes)
    Var<T> boxmask_logits;  // (N,H,W,2*n_anchors)
    Var<T> box_deltas;      // (N,H,W,4*n_anchors)
  };

  explicit Network(const NetworkConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
  }

  const NetworkConfig& config() const { return cfg_; }
  std::deque<Parameter<T>>& parameters() { return params_; }
  const std::deque<Parameter<T>>& parameters() const { return params_; }
  std::deque<BatchNormStats<T>>& bn_stats() { return stats_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.var.clear_grad();
  }

  // He-normal init for all conv kernels, constant 1e-3 for the three output
  // heads (weights and biases), gamma=1/beta=0 for batch norm.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& p : params_) {
      Tensor<T>& t = p.var.value_mut();
      if (p.name.ends_with(".bn.g")) {
        t.fill(T(1));
      } else if (p.name.ends_with(".bn.b")) {
        t.fill(T(0));
      } else if (p.name.starts_with("head.")) {
        t.fill(T(1e-3));
      } else {
        // Kernel layout (kh,kw,Ca,Cb); conv maps dim2 -> dim3 while the
        // transposed conv maps dim3 -> dim2, so fan-in differs.
        const bool transpose = p.name.ends_with(".up.k");
        const int fan_in = t.dim(0) * t.dim(1) * (transpose ? t.dim(3) : t.dim(2));
        const double std = std::sqrt(2.0 / fan_in);
        for (auto& v : t.data) v = static_cast<T>(normal(rng) * std);
      }
      p.momentum.fill(T(0));
    }
    for (auto& s : stats_) {
      s.running_mean.fill(T(0));
      s.running_var.fill(T(1));
      s.updates = 0;
    }
  }

  Outputs forward(const Tensor<T>& input, bool train, Rng& rng) {
    check(input.ndim() == 4, "forward: input must be (N,H,W,C)");
    check(input.dim(1) == cfg_.input_h && input.dim(2) == cfg_.input_w &&
              input.dim(3) == cfg_.n_vocab,
          "forward: input " + shape_str(input) + " does not match config (" +
              std::to_string(cfg_.input_h) + "," + std::to_string(cfg_.input_w) + "," +
              std::to_string(cfg_.n_vocab) + ")");
    Var<T> x = Var<T>::constant(input);

    std::array<Var<T>, 5> enc;
    for (int b = 0; b < 5; ++b) {
      for (const ConvUnit& u : encoder_[static_cast<std::size_t>(b)]) {
        x = conv_bn_relu(x, u, train);
      }
      x = spatial_dropout(x, cfg_.dropout_p, train, rng);
      enc[static_cast<std::size_t>(b)] = x;
    }

    Outputs out;
    const Var<T> seg_feat = decode(dec_seg_, enc, train);
    out.seg_logits = head_conv(seg_feat, seg_head_);
    const Var<T> box_feat = decode(dec_box_, enc, train);
    out.boxmask_logits = head_conv(box_feat, boxmask_head_);
    out.box_deltas = head_conv(box_feat, boxcoord_head_);
    return out;
  }

  Outputs forward_eval(const Tensor<T>& input) {
    Rng dummy(0);
    return forward(input, false, dummy);
  }

  // --- checkpointing ------------------------------------------------------

  void save_tensors(TensorFile& tf) const {
    for (const auto& p : params_) {
      tf.add("p." + p.name, p.var.value());
      tf.add("m." + p.name, p.momentum);
    }
    for (std::size_t i = 0; i < stats_.size(); ++i) {
      tf.add("s." + std::to_string(i) + ".rm", stats_[i].running_mean);
      tf.add("s." + std::to_string(i) + ".rv", stats_[i].running_var);
      Tensor<std::int64_t> u({1});
      u[0] = stats_[i].updates;
      tf.add("s." + std::to_string(i) + ".updates", u);
    }
  }

  void load_tensors(const TensorFile& tf) {
    for (auto& p : params_) {
      Tensor<T> v = tf.get<T>("p." + p.name);
      check(v.shape == p.var.value().shape, "checkpoint shape mismatch for " + p.name);
      p.var.value_mut() = std::move(v);
      p.momentum = tf.get<T>("m." + p.name);
    }
    for (std::size_t i = 0; i < stats_.size(); ++i) {
      stats_[i].running_mean = tf.get<T>("s." + std::to_string(i) + ".rm");
      stats_[i].running_var = tf.get<T>("s." + std::to_string(i) + ".rv");
      stats_[i].updates = tf.get<std::int64_t>("s." + std::to_string(i) + ".updates")[0];
    }
  }

 private:
  Var<T> param_var(int idx) const { return params_[static_cast<std::size_t>(idx)].var; }

  int add_param(const std::string& name, std::vector<int> shape, bool decay) {
    params_.emplace_back(name, Tensor<T>(std::move(shape)), decay);
    return static_cast<int>(params_.size()) - 1;
  }

  ConvUnit add_conv(const std::string& name, int kh, int kw, int ci, int co, int stride,
                    int dilation) {
    ConvUnit u;
    u.kernel = add_param(name + ".k", {kh, kw, ci, co}, true);
    u.gamma = add_param(name + ".bn.g", {co}, false);
    u.beta = add_param(name + ".bn.b", {co}, false);
    stats_.emplace_back(co);
    u.stats = static_cast<int>(stats_.size()) - 1;
    u.stride = stride;
    u.dilation = dilation;
    return u;
  }

  // Transposed conv kernel (kh,kw,Ca,Cb) maps Cb input channels to Ca.
  ConvUnit add_transpose(const std::string& name, int ci, int co) {
    ConvUnit u;
    u.kernel = add_param(name + ".k", {3, 3, co, ci}, true);
    u.gamma = add_param(name + ".bn.g", {co}, false);
    u.beta = add_param(name + ".bn.b", {co}, false);
    stats_.emplace_back(co);
    u.stats = static_cast<int>(stats_.size()) - 1;
    return u;
  }

  Head add_head(const std::string& name, int ci, int co) {
    Head h;
    h.kernel = add_param(name + ".k", {3, 3, ci, co}, true);
    h.bias = add_param(name + ".b", {co}, false);
    return h;
  }

  void build() {
    const auto& ch = cfg_.encoder_channels;
    int ci = cfg_.n_vocab;
    for (int b = 0; b < 5; ++b) {
      const int co = ch[static_cast<std::size_t>(b)];
      const int dil = cfg_.dilations[static_cast<std::size_t>(b)];
      const int first_stride = b < 3 ? 2 : 1;
      auto& block = encoder_[static_cast<std::size_t>(b)];
      const std::string base = "enc" + std::to_string(b + 1);
      block[0] = add_conv(base + ".c1", 3, 3, ci, co, first_stride, dil);
      block[1] = add_conv(base + ".c2", 3, 3, co, co, 1, dil);
      block[2] = add_conv(base + ".c3", 3, 3, co, co, 1, dil);
      ci = co;
    }
    build_decoder(dec_seg_, "dec_seg");
    build_decoder(dec_box_, "dec_box");
    seg_head_ = add_head("head.seg", decoder_out_channels(), cfg_.n_seg_classes);
    boxmask_head_ = add_head("head.boxmask", decoder_out_channels(), 2 * cfg_.n_anchors);
    boxcoord_head_ = add_head("head.boxcoord", decoder_out_channels(), 4 * cfg_.n_anchors);
  }

  int decoder_out_channels() const { return cfg_.encoder_channels[4] / 8; }

  void build_decoder(std::array<UpBlock, 3>& dec, const std::string& base) {
    const auto& ch = cfg_.encoder_channels;
    int d = ch[4];
    for (int k = 0; k < 3; ++k) {
      // Lateral source: the encoder block whose output matches the up-block's
      // input resolution (blocks 3, 2, 1 in that order).
      const int lat = ch[static_cast<std::size_t>(2 - k)];
      const std::string name = base + ".up" + std::to_string(k + 1);
      UpBlock& ub = dec[static_cast<std::size_t>(k)];
      ub.lateral = add_conv(name + ".lat", 1, 1, d + lat, d, 1, 1);
      ub.up = add_transpose(name + ".up", d, d / 2);
      d = d / 2;
      ub.convs[0] = add_conv(name + ".c1", 3, 3, d, d, 1, 1);
      ub.convs[1] = add_conv(name + ".c2", 3, 3, d, d, 1, 1);
    }
  }

  Var<T> conv_bn_relu(const Var<T>& x, const ConvUnit& u, bool train) {
    Var<T> y = conv2d(x, param_var(u.kernel), u.stride, u.dilation);
    y = batch_norm(y, param_var(u.gamma), param_var(u.beta),
                   stats_[static_cast<std::size_t>(u.stats)], train);
    return relu(y);
  }

  Var<T> transpose_bn_relu(const Var<T>& x, const ConvUnit& u, bool train) {
    Var<T> y = conv2d_transpose(x, param_var(u.kernel));
    y = batch_norm(y, param_var(u.gamma), param_var(u.beta),
                   stats_[static_cast<std::size_t>(u.stats)], train);
    return relu(y);
  }

  Var<T> decode(const std::array<UpBlock, 3>& dec, const std::array<Var<T>, 5>& enc,
                bool train) {
    Var<T> x = enc[4];
    for (int k = 0; k < 3; ++k) {
      const UpBlock& ub = dec[static_cast<std::size_t>(k)];
      const Var<T>& lat = enc[static_cast<std::size_t>(2 - k)];
      check(lat.value().dim(1) == x.value().dim(1) && lat.value().dim(2) == x.value().dim(2),
            "lateral resolution mismatch at up-block " + std::to_string(k + 1));
      x = concat_channels(x, lat);
      x = conv_bn_relu(x, ub.lateral, train);
      x = transpose_bn_relu(x, ub.up, train);
      x = conv_bn_relu(x, ub.convs[0], train);
      x = conv_bn_relu(x, ub.convs[1], train);
    }
    return x;
  }

  Var<T> head_conv(const Var<T>& x, const Head& h) {
    return add_channel_bias(conv2d(x, param_var(h.kernel), 1, 1), param_var(h.bias));
  }

  NetworkConfig cfg_;
  std::deque<Parameter<T>> params_;
  std::deque<BatchNormStats<T>> stats_;
  std::array<std::array<ConvUnit, 3>, 5> encoder_;
  std::array<UpBlock, 3> dec_seg_;
  std::array<UpBlock, 3> dec_box_;
  Head seg_head_;
  Head boxmask_head_;
  Head boxcoord_head_;
};

}  // namespace chargrid
