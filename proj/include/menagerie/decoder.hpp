#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "menagerie/body_model.hpp"
#include "menagerie/projection.hpp"
#include "menagerie/rng.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

// Token-group decoder configuration. Every instance slot owns one token run of
// params/box/kp2d/kp3d/prompt tokens; the concatenation over slots forms the
// query set.
struct DecoderConfig {
  int instance_slots = 4;  // P
  int params_tokens = 4;
  int box_tokens = 1;
  int kp2d_tokens = 3;
  int kp3d_tokens = 3;
  int prompt_tokens = 2;
  int token_dim = 32;    // D
  int layers = 3;        // L
  int attention_dim = 32;
  int heads = 1;
  int feature_height = 8, feature_width = 8, feature_channels = 16;  // H0, W0, C0
  int image_height = 64, image_width = 64;

  int tokens_per_instance() const {
    return params_tokens + box_tokens + kp2d_tokens + kp3d_tokens + prompt_tokens;
  }
  int total_tokens() const { return instance_slots * tokens_per_instance(); }

  // Offsets of each group inside an instance's token run.
  int params_offset() const { return 0; }
  int box_offset() const { return params_tokens; }
  int kp2d_offset() const { return params_tokens + box_tokens; }
  int kp3d_offset() const { return params_tokens + box_tokens + kp2d_tokens; }
  int prompt_offset() const { return params_tokens + box_tokens + kp2d_tokens + kp3d_tokens; }
  int instance_begin(int slot) const { return slot * tokens_per_instance(); }

  static DecoderConfig desk_scale() { return DecoderConfig{}; }

  // Full-size variant: 30 slots x 405 tokens = 12150 queries of width 1024
  // over a 32 x 32 x 1280 feature grid from a 512 x 512 input.
  static DecoderConfig full_scale() {
    DecoderConfig c;
    c.instance_slots = 30;
    c.params_tokens = 350;
    c.box_tokens = 1;
    c.kp2d_tokens = 26;
    c.kp3d_tokens = 26;
    c.prompt_tokens = 2;
    c.token_dim = 1024;
    c.layers = 6;
    c.attention_dim = 64;
    c.heads = 1;
    c.feature_height = 32;
    c.feature_width = 32;
    c.feature_channels = 1280;
    c.image_height = 512;
    c.image_width = 512;
    return c;
  }

  void validate() const {
    if (instance_slots < 1) throw std::invalid_argument("decoder: needs instance slots");
    if (params_tokens < 1 || box_tokens < 1 || kp2d_tokens < 1 || kp3d_tokens < 1 ||
        prompt_tokens < 1) {
      throw std::invalid_argument("decoder: every token group needs at least one token");
    }
    if (token_dim < 1 || attention_dim < 1 || heads < 1) {
      throw std::invalid_argument("decoder: bad width");
    }
    if (token_dim % heads != 0 || attention_dim % heads != 0) {
      throw std::invalid_argument("decoder: widths must divide by head count");
    }
    if (layers < 0) throw std::invalid_argument("decoder: negative layer count");
    if (feature_height < 1 || feature_width < 1 || feature_channels < 1) {
      throw std::invalid_argument("decoder: bad feature grid");
    }
    if (image_height % feature_height != 0 || image_width % feature_width != 0) {
      throw std::invalid_argument("decoder: image size must tile the feature grid");
    }
  }
};

struct ImageFeatureMap {
  int height = 0, width = 0, channels = 0;
  MatX flat;  // (height * width, channels); cell (r, c) is row r * width + c

  Eigen::Ref<const Eigen::RowVectorXd> cell(int r, int c) const {
    return flat.row(r * width + c);
  }
};

// Fixed non-learned encoder: per-patch means of the input channels, repeated
// with deterministic per-channel scales, plus a constant bias channel last.
// Purely local: a patch only ever influences its own feature cell.
inline ImageFeatureMap stub_encode(const std::vector<double>& image, const DecoderConfig& cfg) {
  cfg.validate();
  const size_t expected = static_cast<size_t>(cfg.image_height) * cfg.image_width * 3;
  if (image.size() != expected) throw std::invalid_argument("stub_encode: image size mismatch");
  const int ph = cfg.image_height / cfg.feature_height;
  const int pw = cfg.image_width / cfg.feature_width;
  ImageFeatureMap fm;
  fm.height = cfg.feature_height;
  fm.width = cfg.feature_width;
  fm.channels = cfg.feature_channels;
  fm.flat.resize(fm.height * fm.width, fm.channels);
  for (int r = 0; r < fm.height; ++r) {
    for (int c = 0; c < fm.width; ++c) {
      double mean[3] = {0.0, 0.0, 0.0};
      for (int y = r * ph; y < (r + 1) * ph; ++y) {
        for (int x = c * pw; x < (c + 1) * pw; ++x) {
          const size_t base = (static_cast<size_t>(y) * cfg.image_width + x) * 3;
          mean[0] += image[base];
          mean[1] += image[base + 1];
          mean[2] += image[base + 2];
        }
      }
      const double inv = 1.0 / (ph * pw);
      for (int ch = 0; ch < fm.channels - 1; ++ch) {
        const double scale = 1.0 / (1.0 + 0.25 * ch);
        fm.flat(r * fm.width + c, ch) = mean[ch % 3] * inv * scale;
      }
      fm.flat(r * fm.width + c, fm.channels - 1) = 1.0;  // bias channel
    }
  }
  return fm;
}

// Prompt inputs, already in decoder-normalized spaces: keypoint coordinates
// in [0, 1] image fractions, mask on the feature grid.
struct PromptSet {
  struct KeypointPrompt {
    Points2 coords;       // (K, 2) normalized
    VisibilityMask valid;
  };
  bool has_keypoints = false;
  std::vector<KeypointPrompt> keypoints;  // per instance slot, may be shorter than P
  bool has_mask = false;
  MatX mask;  // (H0, W0), arbitrary real values, typically {0, 1}
};

struct DropoutConfig {
  double mask_drop = 0.5;       // chance to remove the mask prompt entirely
  double keypoint_drop = 0.2;   // chance to remove the keypoint prompt entirely
  double keypoint_rate_max = 0.7;  // per-keypoint drop rate is U[0, this]
};

// Training-style prompt dropout. Draw order: mask coin (if a mask is present),
// keypoint-prompt coin (if keypoints are present), then one shared per-call
// drop rate followed by one coin per valid keypoint.
inline PromptSet apply_prompt_dropout(const PromptSet& prompts, const DropoutConfig& cfg,
                                      Rng& rng) {
  if (cfg.mask_drop < 0.0 || cfg.mask_drop > 1.0 || cfg.keypoint_drop < 0.0 ||
      cfg.keypoint_drop > 1.0 || cfg.keypoint_rate_max < 0.0 || cfg.keypoint_rate_max > 1.0) {
    throw std::invalid_argument("prompt dropout: rates must be in [0, 1]");
  }
  PromptSet out = prompts;
  if (out.has_mask && rng.bernoulli(cfg.mask_drop)) {
    out.has_mask = false;
    out.mask.resize(0, 0);
  }
  if (out.has_keypoints) {
    if (rng.bernoulli(cfg.keypoint_drop)) {
      out.has_keypoints = false;
      out.keypoints.clear();
    } else {
      const double rate = rng.uniform(0.0, cfg.keypoint_rate_max);
      for (auto& kp : out.keypoints) {
        for (auto& v : kp.valid) {
          if (v && rng.bernoulli(rate)) v = 0;
        }
      }
    }
  }
  return out;
}

struct AttentionWeights {
  MatX w_query;  // (D, A)
  MatX w_key;    // (C0, A)
  MatX w_value;  // (C0, D)
};

struct FeedbackWeights {
  MatX phi_pos;   // (D, 2) position lift for 2D feedback
  MatX phi_feat;  // (D, C0) feature lift for the sampled cell
  MatX psi_pos;   // (D, 3) position lift for 3D feedback
};

struct ReadoutWeights {
  MatX params_head;      // (B + 3J + 3, D)
  MatX box_head;         // (5, D)
  MatX kp2d_head;        // (2 * K_out, 2D) reads [kp2d mean ; prompt mean]
  MatX kp3d_head;        // (3 * K_out, 2D)
  MatX kp2d_token_head;  // (2, D) per-token intermediate 2D prediction
  MatX kp3d_token_head;  // (3, D) per-token intermediate 3D prediction
};

struct PromptEncoderWeights {
  MatX kp_encoder;    // (D, 3 * K_in) consumes x, y, valid triplets
  MatX mask_encoder;  // (D, H0 * W0)
  VecX kp_placeholder;    // used when no keypoint prompt is given
  VecX mask_placeholder;  // used when no mask prompt is given
};

struct DecoderWeights {
  DecoderConfig config;
  int prompt_keypoints = 0;  // K_in
  int output_keypoints = 0;  // K_out
  int shape_dim = 0;         // B
  int joint_count = 0;       // J
  std::vector<AttentionWeights> attention;  // one per layer
  FeedbackWeights feedback;
  ReadoutWeights readout;
  PromptEncoderWeights prompt_encoder;

  void validate() const {
    config.validate();
    if (prompt_keypoints < 1 || output_keypoints < 1 || shape_dim < 0 || joint_count < 1) {
      throw std::invalid_argument("weights: bad model dimensions");
    }
    if (static_cast<int>(attention.size()) != config.layers) {
      throw std::invalid_argument("weights: attention layer count mismatch");
    }
    const int d = config.token_dim, a = config.attention_dim, c0 = config.feature_channels;
    for (const AttentionWeights& w : attention) {
      if (w.w_query.rows() != d || w.w_query.cols() != a || w.w_key.rows() != c0 ||
          w.w_key.cols() != a || w.w_value.rows() != c0 || w.w_value.cols() != d) {
        throw std::invalid_argument("weights: attention matrix shape mismatch");
      }
    }
    if (feedback.phi_pos.rows() != d || feedback.phi_pos.cols() != 2 ||
        feedback.phi_feat.rows() != d || feedback.phi_feat.cols() != c0 ||
        feedback.psi_pos.rows() != d || feedback.psi_pos.cols() != 3) {
      throw std::invalid_argument("weights: feedback matrix shape mismatch");
    }
    if (readout.params_head.rows() != shape_dim + 3 * joint_count + 3 ||
        readout.params_head.cols() != d || readout.box_head.rows() != 5 ||
        readout.box_head.cols() != d || readout.kp2d_head.rows() != 2 * output_keypoints ||
        readout.kp2d_head.cols() != 2 * d || readout.kp3d_head.rows() != 3 * output_keypoints ||
        readout.kp3d_head.cols() != 2 * d || readout.kp2d_token_head.rows() != 2 ||
        readout.kp2d_token_head.cols() != d || readout.kp3d_token_head.rows() != 3 ||
        readout.kp3d_token_head.cols() != d) {
      throw std::invalid_argument("weights: readout head shape mismatch");
    }
    if (prompt_encoder.kp_encoder.rows() != d ||
        prompt_encoder.kp_encoder.cols() != 3 * prompt_keypoints ||
        prompt_encoder.mask_encoder.rows() != d ||
        prompt_encoder.mask_encoder.cols() != config.feature_height * config.feature_width ||
        prompt_encoder.kp_placeholder.size() != d || prompt_encoder.mask_placeholder.size() != d) {
      throw std::invalid_argument("weights: prompt encoder shape mismatch");
    }
  }
};

namespace detail {

inline MatX random_matrix(int rows, int cols, Rng& rng) {
  MatX m(rows, cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max(cols, 1)));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-s, s);
  }
  return m;
}

}  // namespace detail

inline DecoderWeights make_random_weights(const DecoderConfig& cfg, int prompt_keypoints,
                                          int output_keypoints, int shape_dim, int joint_count,
                                          std::uint64_t seed) {
  cfg.validate();
  DecoderWeights w;
  w.config = cfg;
  w.prompt_keypoints = prompt_keypoints;
  w.output_keypoints = output_keypoints;
  w.shape_dim = shape_dim;
  w.joint_count = joint_count;
  Rng rng(mix_seed(seed, 0xD0DECu));
  for (int l = 0; l < cfg.layers; ++l) {
    AttentionWeights a;
    a.w_query = detail::random_matrix(cfg.token_dim, cfg.attention_dim, rng);
    a.w_key = detail::random_matrix(cfg.feature_channels, cfg.attention_dim, rng);
    a.w_value = detail::random_matrix(cfg.feature_channels, cfg.token_dim, rng);
    w.attention.push_back(std::move(a));
  }
  w.feedback.phi_pos = detail::random_matrix(cfg.token_dim, 2, rng);
  w.feedback.phi_feat = detail::random_matrix(cfg.token_dim, cfg.feature_channels, rng);
  w.feedback.psi_pos = detail::random_matrix(cfg.token_dim, 3, rng);
  w.readout.params_head =
      detail::random_matrix(shape_dim + 3 * joint_count + 3, cfg.token_dim, rng);
  w.readout.box_head = detail::random_matrix(5, cfg.token_dim, rng);
  w.readout.kp2d_head = detail::random_matrix(2 * output_keypoints, 2 * cfg.token_dim, rng);
  w.readout.kp3d_head = detail::random_matrix(3 * output_keypoints, 2 * cfg.token_dim, rng);
  w.readout.kp2d_token_head = detail::random_matrix(2, cfg.token_dim, rng);
  w.readout.kp3d_token_head = detail::random_matrix(3, cfg.token_dim, rng);
  w.prompt_encoder.kp_encoder =
      detail::random_matrix(cfg.token_dim, 3 * prompt_keypoints, rng);
  w.prompt_encoder.mask_encoder =
      detail::random_matrix(cfg.token_dim, cfg.feature_height * cfg.feature_width, rng);
  w.prompt_encoder.kp_placeholder =
      detail::random_matrix(cfg.token_dim, 1, rng).col(0);
  w.prompt_encoder.mask_placeholder =
      detail::random_matrix(cfg.token_dim, 1, rng).col(0);
  w.validate();
  return w;
}

struct TokenState {
  MatX tokens;  // (N, D) current layer
  MatX prev;    // (N, D) previous layer (zeros before the first layer)
  int layer = 0;
};

// Initial query assembly. Non-prompt tokens get small random embeddings from
// the provided stream (one draw per entry, token-major order). Prompt tokens
// carry the encoded prompts; absent prompts fall back to learned placeholders.
// Prompt token 0 holds the keypoint encoding, the last prompt token holds the
// mask encoding (summed into token 0 when the group has a single token).
inline TokenState assemble_queries(const DecoderConfig& cfg, const DecoderWeights& weights,
                                   const PromptSet& prompts, Rng& rng) {
  cfg.validate();
  if (prompts.has_keypoints &&
      static_cast<int>(prompts.keypoints.size()) > cfg.instance_slots) {
    throw std::invalid_argument("assemble_queries: more keypoint prompts than slots");
  }
  if (prompts.has_mask && (prompts.mask.rows() != cfg.feature_height ||
                           prompts.mask.cols() != cfg.feature_width)) {
    throw std::invalid_argument("assemble_queries: mask shape mismatch");
  }
  TokenState st;
  st.tokens.resize(cfg.total_tokens(), cfg.token_dim);
  for (int t = 0; t < st.tokens.rows(); ++t) {
    for (int d = 0; d < cfg.token_dim; ++d) st.tokens(t, d) = 0.1 * rng.normal();
  }

  // Mask encoding is shared by all slots; keypoint encodings are per slot.
  VecX mask_vec = weights.prompt_encoder.mask_placeholder;
  if (prompts.has_mask) {
    VecX flat(cfg.feature_height * cfg.feature_width);
    for (int r = 0; r < cfg.feature_height; ++r) {
      for (int c = 0; c < cfg.feature_width; ++c) flat(r * cfg.feature_width + c) = prompts.mask(r, c);
    }
    mask_vec = weights.prompt_encoder.mask_encoder * flat;
  }
  for (int slot = 0; slot < cfg.instance_slots; ++slot) {
    VecX kp_vec = weights.prompt_encoder.kp_placeholder;
    if (prompts.has_keypoints && slot < static_cast<int>(prompts.keypoints.size())) {
      const PromptSet::KeypointPrompt& kp = prompts.keypoints[static_cast<size_t>(slot)];
      if (kp.coords.rows() != weights.prompt_keypoints ||
          kp.valid.size() != static_cast<size_t>(kp.coords.rows())) {
        throw std::invalid_argument("assemble_queries: keypoint prompt shape mismatch");
      }
      VecX flat = VecX::Zero(3 * weights.prompt_keypoints);
      for (int k = 0; k < kp.coords.rows(); ++k) {
        if (!kp.valid[static_cast<size_t>(k)]) continue;
        flat(3 * k) = kp.coords(k, 0);
        flat(3 * k + 1) = kp.coords(k, 1);
        flat(3 * k + 2) = 1.0;
      }
      kp_vec = weights.prompt_encoder.kp_encoder * flat;
    }
    const int base = cfg.instance_begin(slot) + cfg.prompt_offset();
    st.tokens.row(base) = kp_vec.transpose();
    const int mask_row = base + cfg.prompt_tokens - 1;
    if (mask_row == base) {
      st.tokens.row(mask_row) += mask_vec.transpose();
    } else {
      st.tokens.row(mask_row) = mask_vec.transpose();
    }
  }
  st.prev = MatX::Zero(st.tokens.rows(), st.tokens.cols());
  st.layer = 0;
  return st;
}

// Softmax attention matrix for one head over the stacked current+previous
// tokens; rows sum to 1. Exposed so checks can inspect the weights directly.
inline MatX cross_attention_matrix(const TokenState& st, const ImageFeatureMap& fm,
                                   const AttentionWeights& w, int head, int heads) {
  const int a = static_cast<int>(w.w_query.cols());
  const int dh = a / heads;
  MatX stacked(st.tokens.rows() * 2, st.tokens.cols());
  stacked << st.tokens, st.prev;
  const MatX q = stacked * w.w_query.middleCols(head * dh, dh);
  const MatX k = fm.flat * w.w_key.middleCols(head * dh, dh);
  MatX logits = q * k.transpose() / std::sqrt(static_cast<double>(dh));
  for (int r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

inline TokenState cross_attention(const TokenState& st, const ImageFeatureMap& fm,
                                  const AttentionWeights& w, int heads = 1) {
  if (st.tokens.cols() != w.w_query.rows()) {
    throw std::invalid_argument("cross_attention: token width mismatch");
  }
  if (fm.channels != w.w_key.rows() || fm.channels != w.w_value.rows()) {
    throw std::invalid_argument("cross_attention: feature width mismatch");
  }
  const int d = static_cast<int>(st.tokens.cols());
  const int dv = d / heads;
  TokenState next;
  next.tokens.resize(st.tokens.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const MatX attn = cross_attention_matrix(st, fm, w, h, heads);
    const MatX v = fm.flat * w.w_value.middleCols(h * dv, dv);
    next.tokens.middleCols(h * dv, dv) = (attn * v).topRows(st.tokens.rows());
  }
  next.prev = st.tokens;
  next.layer = st.layer + 1;
  return next;
}

// Bilinear sample of the feature grid at fractional cell coordinates
// (align-corners convention: integer coordinates land on cell centers).
inline VecX bilinear_sample(const ImageFeatureMap& fm, double x, double y) {
  const double cx = std::clamp(x, 0.0, static_cast<double>(fm.width - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(fm.height - 1));
  const int x0 = static_cast<int>(std::floor(cx));
  const int y0 = static_cast<int>(std::floor(cy));
  const int x1 = std::min(x0 + 1, fm.width - 1);
  const int y1 = std::min(y0 + 1, fm.height - 1);
  const double fx = cx - x0;
  const double fy = cy - y0;
  return ((1.0 - fy) * ((1.0 - fx) * fm.cell(y0, x0) + fx * fm.cell(y0, x1)) +
          fy * ((1.0 - fx) * fm.cell(y1, x0) + fx * fm.cell(y1, x1)))
      .transpose();
}

// Additively update the 2D keypoint tokens from the current intermediate
// predictions: position lift plus a bilinear feature sample at the predicted
// location. kp2d[i] holds one normalized (x, y) row per kp2d token of slot i.
// No other token group is touched.
inline void refresh_kp2d_tokens(TokenState& st, const std::vector<Points2>& kp2d,
                                const ImageFeatureMap& fm, const FeedbackWeights& w,
                                const DecoderConfig& cfg) {
  if (static_cast<int>(kp2d.size()) != cfg.instance_slots) {
    throw std::invalid_argument("refresh_kp2d_tokens: per-slot prediction list mismatch");
  }
  for (int slot = 0; slot < cfg.instance_slots; ++slot) {
    const Points2& pts = kp2d[static_cast<size_t>(slot)];
    if (pts.rows() != cfg.kp2d_tokens) {
      throw std::invalid_argument("refresh_kp2d_tokens: keypoint count mismatch");
    }
    for (int t = 0; t < cfg.kp2d_tokens; ++t) {
      const double gx = pts(t, 0) * (fm.width - 1);
      const double gy = pts(t, 1) * (fm.height - 1);
      const VecX feat = bilinear_sample(fm, gx, gy);
      const Vec2 pos(pts(t, 0), pts(t, 1));
      st.tokens.row(cfg.instance_begin(slot) + cfg.kp2d_offset() + t) +=
          (w.phi_pos * pos + w.phi_feat * feat).transpose();
    }
  }
}

constexpr double kKp3dNormScale = 5.0;

// Additively update the 3D keypoint tokens from intermediate 3D predictions,
// expressed root-relative and divided by a fixed scale before the position
// lift. No other token group is touched.
inline void refresh_kp3d_tokens(TokenState& st, const std::vector<Points3>& kp3d,
                                const FeedbackWeights& w, const DecoderConfig& cfg) {
  if (static_cast<int>(kp3d.size()) != cfg.instance_slots) {
    throw std::invalid_argument("refresh_kp3d_tokens: per-slot prediction list mismatch");
  }
  for (int slot = 0; slot < cfg.instance_slots; ++slot) {
    const Points3& pts = kp3d[static_cast<size_t>(slot)];
    if (pts.rows() != cfg.kp3d_tokens) {
      throw std::invalid_argument("refresh_kp3d_tokens: keypoint count mismatch");
    }
    const Vec3 root = pts.row(0).transpose();
    for (int t = 0; t < cfg.kp3d_tokens; ++t) {
      const Vec3 rel = (pts.row(t).transpose() - root) / kKp3dNormScale;
      st.tokens.row(cfg.instance_begin(slot) + cfg.kp3d_offset() + t) +=
          (w.psi_pos * rel).transpose();
    }
  }
}

struct InstanceReadout {
  ShapeParams shape;
  PoseParams pose;
  Vec3 translation = Vec3::Zero();
  BBox bbox;
  double confidence = 0.0;
  Points2 keypoints2d;  // (K_out, 2) normalized
  Points3 keypoints3d;  // (K_out, 3)
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline VecX group_mean(const MatX& tokens, int begin, int count) {
  VecX m = VecX::Zero(tokens.cols());
  for (int t = 0; t < count; ++t) m += tokens.row(begin + t).transpose();
  return m / count;
}

}  // namespace detail

// Final per-slot heads. Parameter and box outputs read their own group means;
// the keypoint heads also read the prompt group mean, which is what lets a
// prompt steer the keypoint outputs.
inline std::vector<InstanceReadout> read_instances(const TokenState& st,
                                                   const DecoderWeights& w) {
  const DecoderConfig& cfg = w.config;
  std::vector<InstanceReadout> out(static_cast<size_t>(cfg.instance_slots));
  for (int slot = 0; slot < cfg.instance_slots; ++slot) {
    const int base = cfg.instance_begin(slot);
    const VecX params_mean = detail::group_mean(st.tokens, base + cfg.params_offset(),
                                                cfg.params_tokens);
    const VecX box_mean = detail::group_mean(st.tokens, base + cfg.box_offset(), cfg.box_tokens);
    const VecX kp2d_mean = detail::group_mean(st.tokens, base + cfg.kp2d_offset(),
                                              cfg.kp2d_tokens);
    const VecX kp3d_mean = detail::group_mean(st.tokens, base + cfg.kp3d_offset(),
                                              cfg.kp3d_tokens);
    const VecX prompt_mean = detail::group_mean(st.tokens, base + cfg.prompt_offset(),
                                                cfg.prompt_tokens);
    InstanceReadout& r = out[static_cast<size_t>(slot)];

    const VecX params = w.readout.params_head * params_mean;
    r.shape.beta = params.head(w.shape_dim);
    r.pose.theta.resize(w.joint_count, 3);
    for (int j = 0; j < w.joint_count; ++j) {
      for (int c = 0; c < 3; ++c) r.pose.theta(j, c) = params(w.shape_dim + 3 * j + c);
    }
    r.translation = params.tail(3);

    const VecX box = w.readout.box_head * box_mean;
    r.bbox.cx = detail::sigmoid(box(0));
    r.bbox.cy = detail::sigmoid(box(1));
    r.bbox.w = detail::sigmoid(box(2));
    r.bbox.h = detail::sigmoid(box(3));
    r.confidence = detail::sigmoid(box(4));

    VecX joint(2 * cfg.token_dim);
    joint << kp2d_mean, prompt_mean;
    const VecX kp2 = w.readout.kp2d_head * joint;
    r.keypoints2d.resize(w.output_keypoints, 2);
    for (int k = 0; k < w.output_keypoints; ++k) {
      r.keypoints2d(k, 0) = detail::sigmoid(kp2(2 * k));
      r.keypoints2d(k, 1) = detail::sigmoid(kp2(2 * k + 1));
    }
    joint << kp3d_mean, prompt_mean;
    const VecX kp3 = w.readout.kp3d_head * joint;
    r.keypoints3d.resize(w.output_keypoints, 3);
    for (int k = 0; k < w.output_keypoints; ++k) {
      for (int c = 0; c < 3; ++c) r.keypoints3d(k, c) = kp3(3 * k + c);
    }
  }
  return out;
}

// Intermediate per-token keypoint predictions used by the feedback refresh.
inline std::vector<Points2> intermediate_kp2d(const TokenState& st, const DecoderWeights& w) {
  const DecoderConfig& cfg = w.config;
  std::vector<Points2> out(static_cast<size_t>(cfg.instance_slots));
  for (int slot = 0; slot < cfg.instance_slots; ++slot) {
    Points2 pts(cfg.kp2d_tokens, 2);
    for (int t = 0; t < cfg.kp2d_tokens; ++t) {
      const Vec2 p = w.readout.kp2d_token_head *
                     st.tokens.row(cfg.instance_begin(slot) + cfg.kp2d_offset() + t).transpose();
      pts(t, 0) = detail::sigmoid(p(0));
      pts(t, 1) = detail::sigmoid(p(1));
    }
    out[static_cast<size_t>(slot)] = pts;
  }
  return out;
}

inline std::vector<Points3> intermediate_kp3d(const TokenState& st, const DecoderWeights& w) {
  const DecoderConfig& cfg = w.config;
  std::vector<Points3> out(static_cast<size_t>(cfg.instance_slots));
  for (int slot = 0; slot < cfg.instance_slots; ++slot) {
    Points3 pts(cfg.kp3d_tokens, 3);
    for (int t = 0; t < cfg.kp3d_tokens; ++t) {
      pts.row(t) = (w.readout.kp3d_token_head *
                    st.tokens.row(cfg.instance_begin(slot) + cfg.kp3d_offset() + t).transpose())
                       .transpose();
    }
    out[static_cast<size_t>(slot)] = pts;
  }
  return out;
}

// Full decode: encode the image, assemble queries, run the attention layers
// with keypoint-token feedback after each, then read out every slot. Fully
// deterministic given (image, prompts, weights, seed).
inline std::vector<InstanceReadout> decode(const std::vector<double>& image,
                                           const PromptSet& prompts, const DecoderWeights& w,
                                           std::uint64_t seed) {
  w.validate();
  const DecoderConfig& cfg = w.config;
  const ImageFeatureMap fm = stub_encode(image, cfg);
  Rng rng(mix_seed(seed, 0x0DECu));
  TokenState st = assemble_queries(cfg, w, prompts, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    st = cross_attention(st, fm, w.attention[static_cast<size_t>(l)], cfg.heads);
    refresh_kp2d_tokens(st, intermediate_kp2d(st, w), fm, w.feedback, cfg);
    refresh_kp3d_tokens(st, intermediate_kp3d(st, w), w.feedback, cfg);
  }
  return read_instances(st, w);
}

}  // namespace menagerie
