#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "menagerie/decoder.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

// Binary decoder-weight container, little-endian:
//   magic "ANIMWTS1", 19 int32 header fields (config + model dims), then all
//   matrices as row-major float64 blocks in a fixed order.

namespace detail {

constexpr char kWeightsMagic[8] = {'A', 'N', 'I', 'M', 'W', 'T', 'S', '1'};

inline void w_write_i32(std::ostream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::int32_t w_read_i32(std::istream& in, const char* what) {
  std::int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw io_error(std::string("weights file truncated at ") + what);
  return v;
}

inline void w_write_matrix(std::ostream& out, const MatX& m) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

inline void w_read_matrix(std::istream& in, MatX& m, int rows, int cols, const char* what) {
  m.resize(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      if (!in) throw io_error(std::string("weights file truncated at ") + what);
      m(r, c) = v;
    }
  }
}

}  // namespace detail

inline void save_weights(const std::string& path, const DecoderWeights& w) {
  w.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path);
  out.write(detail::kWeightsMagic, sizeof(detail::kWeightsMagic));
  const DecoderConfig& c = w.config;
  for (const int v :
       {c.instance_slots, c.params_tokens, c.box_tokens, c.kp2d_tokens, c.kp3d_tokens,
        c.prompt_tokens, c.token_dim, c.layers, c.attention_dim, c.heads, c.feature_height,
        c.feature_width, c.feature_channels, c.image_height, c.image_width, w.prompt_keypoints,
        w.output_keypoints, w.shape_dim, w.joint_count}) {
    detail::w_write_i32(out, v);
  }
  for (const AttentionWeights& a : w.attention) {
    detail::w_write_matrix(out, a.w_query);
    detail::w_write_matrix(out, a.w_key);
    detail::w_write_matrix(out, a.w_value);
  }
  detail::w_write_matrix(out, w.feedback.phi_pos);
  detail::w_write_matrix(out, w.feedback.phi_feat);
  detail::w_write_matrix(out, w.feedback.psi_pos);
  detail::w_write_matrix(out, w.readout.params_head);
  detail::w_write_matrix(out, w.readout.box_head);
  detail::w_write_matrix(out, w.readout.kp2d_head);
  detail::w_write_matrix(out, w.readout.kp3d_head);
  detail::w_write_matrix(out, w.readout.kp2d_token_head);
  detail::w_write_matrix(out, w.readout.kp3d_token_head);
  detail::w_write_matrix(out, w.prompt_encoder.kp_encoder);
  detail::w_write_matrix(out, w.prompt_encoder.mask_encoder);
  MatX kp_ph = w.prompt_encoder.kp_placeholder;
  MatX mask_ph = w.prompt_encoder.mask_placeholder;
  detail::w_write_matrix(out, kp_ph);
  detail::w_write_matrix(out, mask_ph);
  if (!out) throw io_error("write failed: " + path);
}

inline DecoderWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open for reading: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kWeightsMagic, sizeof(magic)) != 0) {
    throw io_error("not a weights file (bad magic): " + path);
  }
  DecoderWeights w;
  DecoderConfig& c = w.config;
  c.instance_slots = detail::w_read_i32(in, "header");
  c.params_tokens = detail::w_read_i32(in, "header");
  c.box_tokens = detail::w_read_i32(in, "header");
  c.kp2d_tokens = detail::w_read_i32(in, "header");
  c.kp3d_tokens = detail::w_read_i32(in, "header");
  c.prompt_tokens = detail::w_read_i32(in, "header");
  c.token_dim = detail::w_read_i32(in, "header");
  c.layers = detail::w_read_i32(in, "header");
  c.attention_dim = detail::w_read_i32(in, "header");
  c.heads = detail::w_read_i32(in, "header");
  c.feature_height = detail::w_read_i32(in, "header");
  c.feature_width = detail::w_read_i32(in, "header");
  c.feature_channels = detail::w_read_i32(in, "header");
  c.image_height = detail::w_read_i32(in, "header");
  c.image_width = detail::w_read_i32(in, "header");
  w.prompt_keypoints = detail::w_read_i32(in, "header");
  w.output_keypoints = detail::w_read_i32(in, "header");
  w.shape_dim = detail::w_read_i32(in, "header");
  w.joint_count = detail::w_read_i32(in, "header");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw io_error("weights file failed validation (" + path + "): " + e.what());
  }
  if (c.layers > 64 || c.token_dim > 65536 || c.instance_slots > 4096) {
    throw io_error("weights file has implausible dimensions: " + path);
  }
  w.attention.resize(static_cast<size_t>(c.layers));
  for (AttentionWeights& a : w.attention) {
    detail::w_read_matrix(in, a.w_query, c.token_dim, c.attention_dim, "w_query");
    detail::w_read_matrix(in, a.w_key, c.feature_channels, c.attention_dim, "w_key");
    detail::w_read_matrix(in, a.w_value, c.feature_channels, c.token_dim, "w_value");
  }
  detail::w_read_matrix(in, w.feedback.phi_pos, c.token_dim, 2, "phi_pos");
  detail::w_read_matrix(in, w.feedback.phi_feat, c.token_dim, c.feature_channels, "phi_feat");
  detail::w_read_matrix(in, w.feedback.psi_pos, c.token_dim, 3, "psi_pos");
  detail::w_read_matrix(in, w.readout.params_head, w.shape_dim + 3 * w.joint_count + 3,
                        c.token_dim, "params_head");
  detail::w_read_matrix(in, w.readout.box_head, 5, c.token_dim, "box_head");
  detail::w_read_matrix(in, w.readout.kp2d_head, 2 * w.output_keypoints, 2 * c.token_dim,
                        "kp2d_head");
  detail::w_read_matrix(in, w.readout.kp3d_head, 3 * w.output_keypoints, 2 * c.token_dim,
                        "kp3d_head");
  detail::w_read_matrix(in, w.readout.kp2d_token_head, 2, c.token_dim, "kp2d_token_head");
  detail::w_read_matrix(in, w.readout.kp3d_token_head, 3, c.token_dim, "kp3d_token_head");
  detail::w_read_matrix(in, w.prompt_encoder.kp_encoder, c.token_dim, 3 * w.prompt_keypoints,
                        "kp_encoder");
  detail::w_read_matrix(in, w.prompt_encoder.mask_encoder, c.token_dim,
                        c.feature_height * c.feature_width, "mask_encoder");
  MatX kp_ph, mask_ph;
  detail::w_read_matrix(in, kp_ph, c.token_dim, 1, "kp_placeholder");
  detail::w_read_matrix(in, mask_ph, c.token_dim, 1, "mask_placeholder");
  w.prompt_encoder.kp_placeholder = kp_ph.col(0);
  w.prompt_encoder.mask_placeholder = mask_ph.col(0);
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw io_error("weights file failed validation (" + path + "): " + e.what());
  }
  return w;
}

}  // namespace menagerie
