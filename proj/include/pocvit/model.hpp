#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pocvit/image.hpp"
#include "pocvit/ops.hpp"
#include "pocvit/poc_attention.hpp"
#include "pocvit/rng.hpp"
#include "pocvit/tensor.hpp"

namespace pocvit {

struct ModelConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 128;
  int n_blocks = 2;
  int n_heads = 4;
  int mlp_hidden = 256;  // 2 * embed_dim by default
  int n_classes = 20;
  bool share_vq_weights = false;
  uint64_t seed = 0;

  int n_tokens() const {
    int g = image_size / patch_size;
    return g * g;
  }
  int head_dim() const { return embed_dim / n_heads; }
  int kernel_size() const { return n_tokens() / n_heads; }
  int patch_dim() const { return patch_size * patch_size; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
    if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || n_blocks <= 0 ||
        n_heads <= 0 || mlp_hidden <= 0 || n_classes <= 0)
      fail("all dimensions must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    int ne = n_tokens();
    if ((ne & (ne - 1)) != 0) fail("token count must be a power of two");
    if (ne % n_heads != 0) fail("kernel rule violated: n_tokens must divide by n_heads");
    if (embed_dim % n_heads != 0) fail("embed_dim must divide by n_heads");
    if (kernel_size() > ne) fail("kernel longer than sequence");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image_size", c.image_size},   {"patch_size", c.patch_size},
       {"embed_dim", c.embed_dim},     {"n_blocks", c.n_blocks},
       {"n_heads", c.n_heads},         {"mlp_hidden", c.mlp_hidden},
       {"n_classes", c.n_classes},     {"share_vq_weights", c.share_vq_weights},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("patch_size").get_to(c.patch_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("n_blocks").get_to(c.n_blocks);
  j.at("n_heads").get_to(c.n_heads);
  j.at("mlp_hidden").get_to(c.mlp_hidden);
  j.at("n_classes").get_to(c.n_classes);
  c.share_vq_weights = j.value("share_vq_weights", false);
  c.seed = j.value("seed", uint64_t{0});
}

struct PatchEmbedWeights {
  Tensor w;  // [patch_dim, embed_dim]
  Tensor b;  // [embed_dim]
};

struct MlpWeights {
  Tensor w1, b1, w2, b2;
};

struct LayerNormWeights {
  Tensor gain, bias;
};

struct ChannelBlockWeights {
  std::vector<PocHeadWeights> heads;
  LayerNormWeights ln1, ln2;
  MlpWeights mlp;
};

struct EncoderBlockWeights {
  ChannelBlockWeights channel[2];
};

struct ClassifierWeights {
  Tensor w1, b1;     // [2d, d], [d]
  Tensor prelu_slope;  // scalar
  Tensor w2, b2;     // [d, n_classes], [n_classes]
};

// Dual-channel POC-ViT: two parallel unshared encoder stacks whose attention
// crosses between the channels, mean-pooled and classified jointly.
struct PocVitModel {
  ModelConfig cfg;
  PatchEmbedWeights embed[2];
  std::vector<EncoderBlockWeights> blocks;
  ClassifierWeights classifier;

  // Fixed parameter enumeration order; checkpoint and optimizer state rely
  // on it.
  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (int c = 0; c < 2; ++c) {
      std::string pc = "embed" + std::to_string(c);
      out.emplace_back(pc + ".w", embed[c].w);
      out.emplace_back(pc + ".b", embed[c].b);
    }
    for (size_t bi = 0; bi < blocks.size(); ++bi)
      for (int c = 0; c < 2; ++c) {
        const auto& ch = blocks[bi].channel[c];
        std::string p = "block" + std::to_string(bi) + ".ch" + std::to_string(c);
        for (size_t hi = 0; hi < ch.heads.size(); ++hi) {
          std::string ph = p + ".head" + std::to_string(hi);
          out.emplace_back(ph + ".wv", ch.heads[hi].wv);
          out.emplace_back(ph + ".bv", ch.heads[hi].bv);
          if (!ch.heads[hi].share_vq) {
            out.emplace_back(ph + ".wq", ch.heads[hi].wq);
            out.emplace_back(ph + ".bq", ch.heads[hi].bq);
          }
          out.emplace_back(ph + ".wk", ch.heads[hi].wk);
          out.emplace_back(ph + ".bk", ch.heads[hi].bk);
        }
        out.emplace_back(p + ".ln1.gain", ch.ln1.gain);
        out.emplace_back(p + ".ln1.bias", ch.ln1.bias);
        out.emplace_back(p + ".mlp.w1", ch.mlp.w1);
        out.emplace_back(p + ".mlp.b1", ch.mlp.b1);
        out.emplace_back(p + ".mlp.w2", ch.mlp.w2);
        out.emplace_back(p + ".mlp.b2", ch.mlp.b2);
        out.emplace_back(p + ".ln2.gain", ch.ln2.gain);
        out.emplace_back(p + ".ln2.bias", ch.ln2.bias);
      }
    out.emplace_back("classifier.w1", classifier.w1);
    out.emplace_back("classifier.b1", classifier.b1);
    out.emplace_back("classifier.prelu_slope", classifier.prelu_slope);
    out.emplace_back("classifier.w2", classifier.w2);
    out.emplace_back("classifier.b2", classifier.b2);
    return out;
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& [name, t] : named_params()) n += t.size();
    return n;
  }

  void set_trainable(bool b = true) {
    for (auto& [name, t] : named_params()) {
      Tensor tt = t;
      tt.set_requires_grad(b);
    }
  }

  void zero_grad() {
    for (auto& [name, t] : named_params()) {
      Tensor tt = t;
      tt.zero_grad();
    }
  }
};

// Allocates all weights (zero-filled) for a config.
inline PocVitModel make_model(const ModelConfig& cfg) {
  cfg.validate();
  PocVitModel m;
  m.cfg = cfg;
  int d = cfg.embed_dim, hd = cfg.head_dim(), h = cfg.kernel_size();
  for (int c = 0; c < 2; ++c) {
    m.embed[c].w = Tensor::zeros({cfg.patch_dim(), d});
    m.embed[c].b = Tensor::zeros({d});
  }
  m.blocks.resize(cfg.n_blocks);
  for (auto& blk : m.blocks)
    for (int c = 0; c < 2; ++c) {
      auto& ch = blk.channel[c];
      ch.heads.resize(cfg.n_heads);
      for (auto& head : ch.heads) {
        head.share_vq = cfg.share_vq_weights;
        head.wv = Tensor::zeros({hd, d, h});
        head.bv = Tensor::zeros({hd});
        if (!head.share_vq) {
          head.wq = Tensor::zeros({hd, d, h});
          head.bq = Tensor::zeros({hd});
        }
        head.wk = Tensor::zeros({hd, d, h});
        head.bk = Tensor::zeros({hd});
      }
      ch.ln1 = {Tensor::zeros({d}), Tensor::zeros({d})};
      ch.ln2 = {Tensor::zeros({d}), Tensor::zeros({d})};
      ch.mlp.w1 = Tensor::zeros({d, cfg.mlp_hidden});
      ch.mlp.b1 = Tensor::zeros({cfg.mlp_hidden});
      ch.mlp.w2 = Tensor::zeros({cfg.mlp_hidden, d});
      ch.mlp.b2 = Tensor::zeros({d});
    }
  m.classifier.w1 = Tensor::zeros({2 * d, d});
  m.classifier.b1 = Tensor::zeros({d});
  m.classifier.prelu_slope = Tensor::zeros({1});
  m.classifier.w2 = Tensor::zeros({d, cfg.n_classes});
  m.classifier.b2 = Tensor::zeros({cfg.n_classes});
  return m;
}

// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
// layer-norm gain 1 / bias 0, PReLU slope 0.25; fully determined by seed.
inline void init_xavier(PocVitModel& model, uint64_t seed) {
  uint64_t param_index = 0;
  auto fill_uniform = [&](Tensor t, int fan_in, int fan_out) {
    Rng rng(Rng::mix(seed, 0x5eedULL + param_index));
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
  };
  for (auto& [name, t] : model.named_params()) {
    ++param_index;
    Tensor tt = t;
    const Shape& s = tt.shape();
    if (name.ends_with(".gain")) {
      for (double& v : tt.data()) v = 1.0;
    } else if (name.ends_with(".bias") || name.ends_with(".b") ||
               name.ends_with(".bv") || name.ends_with(".bq") ||
               name.ends_with(".bk") || name.ends_with(".b1") ||
               name.ends_with(".b2")) {
      for (double& v : tt.data()) v = 0.0;
    } else if (name.ends_with(".prelu_slope")) {
      tt.data()[0] = 0.25;
    } else if (s.size() == 3) {
      // conv kernels [ch_out, ch_in, h]
      fill_uniform(tt, s[1] * s[2], s[0] * s[2]);
    } else if (s.size() == 2) {
      fill_uniform(tt, s[0], s[1]);
    } else {
      throw std::logic_error("init_xavier: unclassified parameter " + name);
    }
  }
}

// Non-overlapping patch extraction as a constant [N_e, patch_dim] matrix.
inline Tensor patch_matrix(const GrayImage& img, const ModelConfig& cfg) {
  if (img.width != cfg.image_size || img.height != cfg.image_size)
    throw std::invalid_argument("patch_matrix: image size " + std::to_string(img.width) +
                                "x" + std::to_string(img.height) + " does not match config");
  int dp = cfg.patch_size, grid = cfg.image_size / dp;
  std::vector<double> data(static_cast<size_t>(cfg.n_tokens()) * cfg.patch_dim());
  size_t idx = 0;
  for (int py = 0; py < grid; ++py)
    for (int px = 0; px < grid; ++px)
      for (int y = 0; y < dp; ++y)
        for (int x = 0; x < dp; ++x)
          data[idx++] = img.at(px * dp + x, py * dp + y);
  return Tensor::from({cfg.n_tokens(), cfg.patch_dim()}, std::move(data));
}

// Strided-convolution patch embedding: each d_p x d_p patch, flattened row
// major, is projected to an embed_dim token. No positional embedding.
inline Tensor patch_sequence(const GrayImage& img, const ModelConfig& cfg,
                             const PatchEmbedWeights& embed) {
  return add_rowvec(matmul(patch_matrix(img, cfg), embed.w), embed.b);
}

inline Tensor mlp_forward(const Tensor& x, const MlpWeights& w) {
  Tensor hsum = gelu(add_rowvec(matmul(x, w.w1), w.b1));
  return add_rowvec(matmul(hsum, w.w2), w.b2);
}

// One dual-channel encoder block. Both channels are computed from the same
// block inputs; residual add happens before each layer norm (post-norm).
inline std::pair<Tensor, Tensor> encoder_block_forward(const Tensor& x1, const Tensor& x2,
                                                       const EncoderBlockWeights& w) {
  auto channel = [&](const Tensor& self, const Tensor& cross,
                     const ChannelBlockWeights& ch) {
    Tensor att = multi_head_poc_ca(self, cross, ch.heads);
    Tensor a = layer_norm(add(self, att), 1, ch.ln1.gain, ch.ln1.bias);
    return layer_norm(add(a, mlp_forward(a, ch.mlp)), 1, ch.ln2.gain, ch.ln2.bias);
  };
  return {channel(x1, x2, w.channel[0]), channel(x2, x1, w.channel[1])};
}

struct ForwardResult {
  Tensor logits;    // [1, n_classes]
  Tensor features;  // [1, 2*embed_dim], pre-classifier
};

inline ForwardResult poc_vit_forward_tokens(Tensor t1, Tensor t2, const PocVitModel& m) {
  for (const auto& blk : m.blocks) {
    auto [o1, o2] = encoder_block_forward(t1, t2, blk);
    t1 = o1;
    t2 = o2;
  }
  Tensor f1 = mean_axis(t1, 0);
  Tensor f2 = mean_axis(t2, 0);
  Tensor features = reshape(concat({f1, f2}, 0), {1, 2 * m.cfg.embed_dim});
  Tensor hidden = prelu(add_rowvec(matmul(features, m.classifier.w1), m.classifier.b1),
                        m.classifier.prelu_slope);
  Tensor logits = add_rowvec(matmul(hidden, m.classifier.w2), m.classifier.b2);
  return {logits, features};
}

// Full forward pass for one image pair. Softmax is folded into the loss;
// `features` feeds the verification protocol.
inline ForwardResult poc_vit_forward(const GrayImage& forehead, const GrayImage& periocular,
                                     const PocVitModel& m) {
  Tensor t1 = patch_sequence(forehead, m.cfg, m.embed[0]);
  Tensor t2 = patch_sequence(periocular, m.cfg, m.embed[1]);
  return poc_vit_forward_tokens(std::move(t1), std::move(t2), m);
}

inline ModelConfig desk_config(int n_classes = 20) {
  ModelConfig c;
  c.image_size = 64;
  c.patch_size = 8;
  c.embed_dim = 128;
  c.n_blocks = 2;
  c.n_heads = 4;
  c.mlp_hidden = 256;
  c.n_classes = n_classes;
  return c;
}

inline ModelConfig full_scale_config() {
  ModelConfig c;
  c.image_size = 256;
  c.patch_size = 16;
  c.embed_dim = 512;
  c.n_blocks = 6;
  c.n_heads = 8;
  c.mlp_hidden = 1024;
  c.n_classes = 350;
  return c;
}

}  // namespace pocvit
