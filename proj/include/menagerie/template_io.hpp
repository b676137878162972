#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "menagerie/body_model.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

// Binary template container, little-endian:
//   magic "ANIMTPL1", int32 dims {V, F, B, J, K}, parents (J int32),
//   then float64 blocks: vertices, shape basis, skin weights, joint regressor,
//   keypoint regressor, and int32 faces. Row-major throughout.

namespace detail {

constexpr char kTemplateMagic[8] = {'A', 'N', 'I', 'M', 'T', 'P', 'L', '1'};

inline void write_i32(std::ostream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::int32_t read_i32(std::istream& in, const std::string& what) {
  std::int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw io_error("template file truncated at " + what);
  return v;
}

inline void write_f64_block(std::ostream& out, const double* data, size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

inline void read_f64_block(std::istream& in, double* data, size_t count, const std::string& what) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw io_error("template file truncated at " + what);
}

}  // namespace detail

inline void save_template(const std::string& path, const TemplateModel& tpl) {
  tpl.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path);
  out.write(detail::kTemplateMagic, sizeof(detail::kTemplateMagic));
  detail::write_i32(out, tpl.vertex_count());
  detail::write_i32(out, tpl.face_count());
  detail::write_i32(out, tpl.shape_dim());
  detail::write_i32(out, tpl.joint_count());
  detail::write_i32(out, tpl.keypoint_count());
  for (const int p : tpl.tree.parent_of) detail::write_i32(out, p);
  detail::write_f64_block(out, tpl.template_vertices.data(),
                          static_cast<size_t>(tpl.template_vertices.size()));
  // shape_basis / regressors are column-major Eigen matrices; write row-major.
  auto write_matrix = [&out](const MatX& m) {
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        detail::write_f64_block(out, &v, 1);
      }
    }
  };
  write_matrix(tpl.shape_basis);
  write_matrix(tpl.skin_weights);
  write_matrix(tpl.joint_regressor);
  write_matrix(tpl.keypoint_regressor);
  for (int f = 0; f < tpl.faces.rows(); ++f) {
    for (int c = 0; c < 3; ++c) detail::write_i32(out, tpl.faces(f, c));
  }
  if (!out) throw io_error("write failed: " + path);
}

inline TemplateModel load_template(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open for reading: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kTemplateMagic, sizeof(magic)) != 0) {
    throw io_error("not a template file (bad magic): " + path);
  }
  const int v = detail::read_i32(in, "vertex count");
  const int f = detail::read_i32(in, "face count");
  const int b = detail::read_i32(in, "shape dim");
  const int j = detail::read_i32(in, "joint count");
  const int k = detail::read_i32(in, "keypoint count");
  if (v < 3 || f < 1 || b < 0 || j < 1 || k < 1 || v > 10'000'000 || f > 30'000'000) {
    throw io_error("template file has implausible dimensions: " + path);
  }
  TemplateModel tpl;
  tpl.tree.parent_of.resize(static_cast<size_t>(j));
  for (int i = 0; i < j; ++i) tpl.tree.parent_of[static_cast<size_t>(i)] = detail::read_i32(in, "parents");
  tpl.template_vertices.resize(v, 3);
  detail::read_f64_block(in, tpl.template_vertices.data(), static_cast<size_t>(v) * 3, "vertices");
  auto read_matrix = [&in](MatX& m, int rows, int cols, const char* what) {
    m.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        double x = 0.0;
        detail::read_f64_block(in, &x, 1, what);
        m(r, c) = x;
      }
    }
  };
  read_matrix(tpl.shape_basis, b, 3 * v, "shape basis");
  read_matrix(tpl.skin_weights, v, j, "skin weights");
  read_matrix(tpl.joint_regressor, j, v, "joint regressor");
  read_matrix(tpl.keypoint_regressor, k, v, "keypoint regressor");
  tpl.faces.resize(f, 3);
  for (int r = 0; r < f; ++r) {
    for (int c = 0; c < 3; ++c) tpl.faces(r, c) = detail::read_i32(in, "faces");
  }
  try {
    tpl.validate();
  } catch (const std::invalid_argument& e) {
    throw io_error("template file failed validation (" + path + "): " + e.what());
  }
  return tpl;
}

}  // namespace menagerie
