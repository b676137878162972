#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "menagerie/rng.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

// Axis-angle (magnitude = angle in radians) to rotation matrix.
// Below the small-angle cutoff the first-order expansion I + skew(w) is used;
// it is exact at w = 0, which keeps zero-pose kinematics an exact identity.
inline Mat3 rodrigues(const Vec3& w) {
  Mat3 k;
  k << 0.0, -w.z(), w.y(),
      w.z(), 0.0, -w.x(),
      -w.y(), w.x(), 0.0;
  const double angle = w.norm();
  if (angle < 1e-8) return Mat3::Identity() + k;
  k /= angle;
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * (k * k);
}

// Log map: rotation matrix back to axis-angle. Inverse of rodrigues up to the
// usual angle wrap; robust near 0 and pi.
inline Vec3 rotation_to_axis_angle(const Mat3& r) {
  const double tr = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double angle = std::acos(tr);
  Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = axis.norm();  // 2 sin(angle)
  if (angle < 1e-7) {
    // R ~ I + skew(w): the skew part already holds 2w.
    return 0.5 * axis;
  }
  if (s > 1e-7) {
    return axis * (angle / s);
  }
  // angle ~ pi: extract the axis from the diagonal of (R + I) / 2.
  Mat3 b = 0.5 * (r + Mat3::Identity());
  int imax = 0;
  b.diagonal().maxCoeff(&imax);
  Vec3 a;
  a[imax] = std::sqrt(std::max(b(imax, imax), 0.0));
  for (int i = 0; i < 3; ++i) {
    if (i != imax) a[i] = b(imax, i) / a[imax];
  }
  a.normalize();
  return a * angle;
}

struct ShapeParams {
  VecX beta;  // (B,)
};

struct PoseParams {
  Points3 theta;  // (J, 3) axis-angle per joint; row 0 is the root
};

using GlobalTranslation = Vec3;  // gamma, applied as the final additive offset

struct KinematicTree {
  // parent_of[0] == -1 (root); parents precede children (parent_of[j] < j).
  std::vector<int> parent_of;

  int joint_count() const { return static_cast<int>(parent_of.size()); }

  void validate() const {
    if (parent_of.empty()) throw std::invalid_argument("kinematic tree: no joints");
    if (parent_of[0] != -1) throw std::invalid_argument("kinematic tree: joint 0 must be the root");
    for (int j = 1; j < joint_count(); ++j) {
      if (parent_of[j] < 0 || parent_of[j] >= j) {
        throw std::invalid_argument("kinematic tree: parent_of[" + std::to_string(j) +
                                    "] must be a smaller joint index");
      }
    }
  }
};

struct TemplateModel {
  Points3 template_vertices;  // (V, 3) rest pose, zero shape
  Faces faces;                // (F, 3) vertex indices
  MatX shape_basis;           // (B, V*3); row b is a row-major flattened (V, 3) offset field
  MatX skin_weights;          // (V, J) rows sum to 1, entries >= 0
  MatX joint_regressor;       // (J, V) rows sum to 1
  MatX keypoint_regressor;    // (K, V) rows sum to 1
  KinematicTree tree;

  int vertex_count() const { return static_cast<int>(template_vertices.rows()); }
  int face_count() const { return static_cast<int>(faces.rows()); }
  int shape_dim() const { return static_cast<int>(shape_basis.rows()); }
  int joint_count() const { return tree.joint_count(); }
  int keypoint_count() const { return static_cast<int>(keypoint_regressor.rows()); }

  void validate() const {
    tree.validate();
    const int v = vertex_count();
    const int j = tree.joint_count();
    if (v < 3) throw std::invalid_argument("template: needs at least 3 vertices");
    if (faces.rows() == 0) throw std::invalid_argument("template: needs faces");
    if (faces.minCoeff() < 0 || faces.maxCoeff() >= v) {
      throw std::invalid_argument("template: face index out of range");
    }
    if (shape_basis.rows() > 0 && shape_basis.cols() != 3 * v) {
      throw std::invalid_argument("template: shape basis has wrong column count");
    }
    if (skin_weights.rows() != v || skin_weights.cols() != j) {
      throw std::invalid_argument("template: skin weight shape mismatch");
    }
    if (joint_regressor.rows() != j || joint_regressor.cols() != v) {
      throw std::invalid_argument("template: joint regressor shape mismatch");
    }
    if (keypoint_regressor.rows() == 0 || keypoint_regressor.cols() != v) {
      throw std::invalid_argument("template: keypoint regressor shape mismatch");
    }
    const double tol = 1e-9;
    if (skin_weights.minCoeff() < -tol) {
      throw std::invalid_argument("template: negative skin weight");
    }
    for (int r = 0; r < skin_weights.rows(); ++r) {
      if (std::abs(skin_weights.row(r).sum() - 1.0) > tol) {
        throw std::invalid_argument("template: skin weight row does not sum to 1");
      }
    }
    auto check_rows_sum_one = [tol](const MatX& m, const char* what) {
      for (int r = 0; r < m.rows(); ++r) {
        if (std::abs(m.row(r).sum() - 1.0) > tol) {
          throw std::invalid_argument(std::string("template: ") + what + " row does not sum to 1");
        }
      }
    };
    check_rows_sum_one(joint_regressor, "joint regressor");
    check_rows_sum_one(keypoint_regressor, "keypoint regressor");
  }
};

struct PosedMesh {
  Points3 vertices;     // (V, 3)
  Points3 joints;       // (J, 3) posed joint locations
  Points3 keypoints3d;  // (K, 3)
};

// Rest vertices + linear combination of shape offset fields.
inline Points3 shape_blend(const TemplateModel& tpl, const ShapeParams& shape) {
  if (shape.beta.size() != tpl.shape_dim()) {
    throw std::invalid_argument("shape_blend: beta size != shape basis rank");
  }
  Points3 rest = tpl.template_vertices;
  if (shape.beta.size() > 0) {
    Eigen::Map<VecX> flat(rest.data(), rest.size());
    flat += tpl.shape_basis.transpose() * shape.beta;
  }
  return rest;
}

// World transform per joint. Each joint rotates about its own rest position:
// L_j = T(p_j) R_j T(-p_j), accumulated root-to-leaf.
inline std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree,
                                                      const Points3& rest_joints,
                                                      const PoseParams& pose) {
  tree.validate();
  const int j_count = tree.joint_count();
  if (rest_joints.rows() != j_count) {
    throw std::invalid_argument("forward_kinematics: rest joint count mismatch");
  }
  if (pose.theta.rows() != j_count) {
    throw std::invalid_argument("forward_kinematics: pose joint count mismatch");
  }
  std::vector<RigidTransform> world(j_count);
  for (int j = 0; j < j_count; ++j) {
    const Vec3 pivot = rest_joints.row(j).transpose();
    RigidTransform local;
    local.rotation = rodrigues(pose.theta.row(j).transpose());
    local.translation = pivot - local.rotation * pivot;
    world[j] = (j == 0) ? local : world[tree.parent_of[j]].compose(local);
  }
  return world;
}

// Full model: shape blend, forward kinematics, linear blend skinning, then the
// global translation added as the last step (so translating gamma shifts every
// output coordinate exactly, bit for bit).
inline PosedMesh pose_mesh(const TemplateModel& tpl, const ShapeParams& shape,
                           const PoseParams& pose, const GlobalTranslation& gamma) {
  const Points3 rest = shape_blend(tpl, shape);
  const Points3 rest_joints = tpl.joint_regressor * rest;
  const std::vector<RigidTransform> world = forward_kinematics(tpl.tree, rest_joints, pose);

  const int v_count = tpl.vertex_count();
  const int j_count = tpl.joint_count();
  PosedMesh out;
  out.vertices.resize(v_count, 3);
  for (int v = 0; v < v_count; ++v) {
    Mat3 r = Mat3::Zero();
    Vec3 t = Vec3::Zero();
    for (int j = 0; j < j_count; ++j) {
      const double w = tpl.skin_weights(v, j);
      r += w * world[j].rotation;
      t += w * world[j].translation;
    }
    out.vertices.row(v) = (r * rest.row(v).transpose() + t).transpose();
  }
  out.joints.resize(j_count, 3);
  for (int j = 0; j < j_count; ++j) {
    out.joints.row(j) = world[j].apply(rest_joints.row(j).transpose()).transpose();
  }
  out.keypoints3d = tpl.keypoint_regressor * out.vertices;
  out.vertices.rowwise() += gamma.transpose();
  out.joints.rowwise() += gamma.transpose();
  out.keypoints3d.rowwise() += gamma.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Procedurally generated quadruped template, used for tests and synthesis.

struct ToyTemplateConfig {
  int n_verts = 242;   // >= 11; face count becomes 2*(n_verts - 2)
  int shape_dim = 8;   // B
  int joint_count = 17;  // J >= 9
  int keypoint_count = 26;  // K
  std::uint64_t seed = 1;
  double body_length = 2.2;
  double body_radius = 0.45;

  static ToyTemplateConfig full_scale() {
    ToyTemplateConfig c;
    c.n_verts = 3889;  // 7774 faces
    c.shape_dim = 145;
    c.joint_count = 35;
    c.keypoint_count = 26;
    return c;
  }
};

struct QuadrupedSkeleton {
  KinematicTree tree;
  Points3 rest_positions;  // (J, 3) canonical joint layout
};

// Deterministic quadruped rig: root pelvis, a spine chain running forward,
// neck + head, a tail chain, and four legs. Extra joints beyond the 9-joint
// minimum are distributed round-robin (legs first, then spine/tail/neck).
inline QuadrupedSkeleton make_quadruped_skeleton(int joint_count, double body_length,
                                                 double body_radius) {
  if (joint_count < 9) {
    throw std::invalid_argument("quadruped skeleton: needs at least 9 joints");
  }
  int spine = 1, neck = 1, tail = 1;
  int legs[4] = {1, 1, 1, 1};  // front-left, front-right, hind-left, hind-right
  int extra = joint_count - 9;  // root + head + the seven section minima
  for (int i = 0; extra > 0; ++i, --extra) {
    switch (i % 7) {
      case 0: ++legs[0]; break;
      case 1: ++legs[1]; break;
      case 2: ++legs[2]; break;
      case 3: ++legs[3]; break;
      case 4: ++spine; break;
      case 5: ++tail; break;
      default: ++neck; break;
    }
  }

  const double leg_drop = 0.65 * body_length / 2.2;
  QuadrupedSkeleton sk;
  std::vector<int>& parent = sk.tree.parent_of;
  std::vector<Vec3> pos;
  auto add = [&](int par, const Vec3& p) {
    parent.push_back(par);
    pos.push_back(p);
    return static_cast<int>(parent.size()) - 1;
  };

  const int root = add(-1, Vec3(-0.35 * body_length, 0.0, 0.0));
  int last_spine = root;
  for (int i = 0; i < spine; ++i) {
    const double f = static_cast<double>(i + 1) / spine;
    last_spine = add(last_spine, Vec3(-0.35 * body_length + f * 0.7 * body_length, 0.0, 0.0));
  }
  int last_neck = last_spine;
  for (int i = 0; i < neck; ++i) {
    const double f = static_cast<double>(i + 1) / neck;
    last_neck = add(last_neck, pos[last_spine] + f * Vec3(0.18 * body_length, 0.22 * body_length, 0.0));
  }
  add(last_neck, pos[last_neck] + Vec3(0.1 * body_length, 0.06 * body_length, 0.0));  // head
  int last_tail = root;
  for (int i = 0; i < tail; ++i) {
    const double f = static_cast<double>(i + 1) / tail;
    last_tail = add(last_tail, pos[root] + f * Vec3(-0.32 * body_length, 0.08 * body_length, 0.0));
  }
  const double hip_x[4] = {pos[last_spine].x(), pos[last_spine].x(), pos[root].x(), pos[root].x()};
  const int hip_parent[4] = {last_spine, last_spine, root, root};
  const double side[4] = {1.0, -1.0, 1.0, -1.0};
  for (int leg = 0; leg < 4; ++leg) {
    int prev = hip_parent[leg];
    for (int i = 0; i < legs[leg]; ++i) {
      const double f = static_cast<double>(i + 1) / legs[leg];
      prev = add(prev, Vec3(hip_x[leg], -f * leg_drop, side[leg] * body_radius * 0.8));
    }
  }

  sk.rest_positions.resize(static_cast<int>(pos.size()), 3);
  for (int j = 0; j < sk.rest_positions.rows(); ++j) sk.rest_positions.row(j) = pos[j].transpose();
  sk.tree.validate();
  return sk;
}

namespace detail {

// Largest divisor of n that is <= sqrt(n) and >= 3, or 0 if none exists.
inline int ring_divisor(int n) {
  int best = 0;
  for (int d = 3; static_cast<long long>(d) * d <= n; ++d) {
    if (n % d == 0) best = d;
  }
  return best;
}

}  // namespace detail

// Builds a closed tube-of-revolution body mesh around the quadruped skeleton,
// plus random smooth shape offsets, distance-based skinning weights and joint
// regressors, and a strided one-hot keypoint regressor. Fully determined by
// the config (same config twice gives identical templates).
inline TemplateModel make_toy_template(const ToyTemplateConfig& cfg) {
  if (cfg.n_verts < 11) throw std::invalid_argument("toy template: n_verts must be >= 11");
  if (cfg.shape_dim < 0) throw std::invalid_argument("toy template: negative shape dim");
  if (cfg.keypoint_count < 1 || cfg.keypoint_count > cfg.n_verts) {
    throw std::invalid_argument("toy template: keypoint count out of range");
  }

  TemplateModel tpl;
  const QuadrupedSkeleton sk =
      make_quadruped_skeleton(cfg.joint_count, cfg.body_length, cfg.body_radius);
  tpl.tree = sk.tree;

  // Closed surface: two pole vertices + n_rings rings of n_around vertices.
  const int inner = cfg.n_verts - 2;
  int n_around = detail::ring_divisor(inner);
  if (n_around == 0) n_around = inner;  // single-ring bipyramid fallback
  const int n_rings = inner / n_around;

  Rng rng(mix_seed(cfg.seed, 0xA71Fu));
  const double half = 0.5 * cfg.body_length;
  const double tip = half + 0.35 * cfg.body_radius;
  tpl.template_vertices.resize(cfg.n_verts, 3);
  tpl.template_vertices.row(0) << -tip, 0.0, 0.0;
  tpl.template_vertices.row(cfg.n_verts - 1) << tip, 0.0, 0.0;

  // Mild random harmonics keep the surface irregular but embedded.
  double amp[3], ph[3];
  for (int m = 0; m < 3; ++m) {
    amp[m] = rng.uniform(0.0, 0.05);
    ph[m] = rng.uniform(0.0, 2.0 * M_PI);
  }
  for (int i = 0; i < n_rings; ++i) {
    const double fx = (i + 0.5) / n_rings;          // 0..1 along the body
    const double x = -half + cfg.body_length * fx;  // ring center
    const double taper = 0.62 + 0.38 * std::sin(M_PI * fx);
    for (int a = 0; a < n_around; ++a) {
      const double phi = 2.0 * M_PI * a / n_around;
      double r = cfg.body_radius * taper;
      for (int m = 0; m < 3; ++m) r *= 1.0 + amp[m] * std::cos((m + 1) * phi + ph[m] + 2.0 * fx);
      tpl.template_vertices.row(1 + i * n_around + a)
          << x, r * std::sin(phi), r * std::cos(phi);
    }
  }

  // Triangulation: pole fans at both ends, quad strips (split) between rings.
  std::vector<int> tri;
  auto ring_at = [&](int ring, int a) { return 1 + ring * n_around + (a % n_around); };
  for (int a = 0; a < n_around; ++a) {
    tri.insert(tri.end(), {0, ring_at(0, a + 1), ring_at(0, a)});
  }
  for (int i = 0; i + 1 < n_rings; ++i) {
    for (int a = 0; a < n_around; ++a) {
      const int v00 = ring_at(i, a), v01 = ring_at(i, a + 1);
      const int v10 = ring_at(i + 1, a), v11 = ring_at(i + 1, a + 1);
      tri.insert(tri.end(), {v00, v01, v10});
      tri.insert(tri.end(), {v01, v11, v10});
    }
  }
  for (int a = 0; a < n_around; ++a) {
    tri.insert(tri.end(), {cfg.n_verts - 1, ring_at(n_rings - 1, a), ring_at(n_rings - 1, a + 1)});
  }
  tpl.faces.resize(static_cast<int>(tri.size()) / 3, 3);
  for (int f = 0; f < tpl.faces.rows(); ++f) {
    tpl.faces.row(f) << tri[3 * f], tri[3 * f + 1], tri[3 * f + 2];
  }

  // Shape basis: smooth low-frequency offset fields along the vertex normals
  // (approximated by the radial direction), plus a length-stretch component.
  tpl.shape_basis.resize(cfg.shape_dim, 3 * cfg.n_verts);
  for (int b = 0; b < cfg.shape_dim; ++b) {
    const double kx = rng.uniform(0.5, 3.0);
    const double kphi = std::floor(rng.uniform(0.0, 3.0));
    const double p1 = rng.uniform(0.0, 2.0 * M_PI);
    const double p2 = rng.uniform(0.0, 2.0 * M_PI);
    const double scale = rng.uniform(0.01, 0.05);
    const double stretch = rng.uniform(-0.03, 0.03);
    for (int v = 0; v < cfg.n_verts; ++v) {
      const Vec3 p = tpl.template_vertices.row(v).transpose();
      const double rad = std::hypot(p.y(), p.z());
      Vec3 dir(0.0, 0.0, 1.0);
      if (rad > 1e-9) dir = Vec3(0.0, p.y() / rad, p.z() / rad);
      const double phi = std::atan2(p.y(), p.z());
      const double field = scale * std::sin(kx * p.x() + p1) * std::cos(kphi * phi + p2);
      const Vec3 offset = field * dir + Vec3(stretch * p.x(), 0.0, 0.0);
      tpl.shape_basis.block<1, 3>(b, 3 * v) = offset.transpose();
    }
  }

  // Distance-falloff skinning and joint regressors.
  const double sigma_skin = 0.22 * cfg.body_length;
  const double sigma_joint = 0.13 * cfg.body_length;
  const int j_count = cfg.joint_count;
  tpl.skin_weights.resize(cfg.n_verts, j_count);
  tpl.joint_regressor.resize(j_count, cfg.n_verts);
  for (int v = 0; v < cfg.n_verts; ++v) {
    const Vec3 p = tpl.template_vertices.row(v).transpose();
    for (int j = 0; j < j_count; ++j) {
      const double d2 = (p - sk.rest_positions.row(j).transpose()).squaredNorm();
      tpl.skin_weights(v, j) = std::exp(-d2 / (2.0 * sigma_skin * sigma_skin));
      tpl.joint_regressor(j, v) = std::exp(-d2 / (2.0 * sigma_joint * sigma_joint));
    }
  }
  for (int v = 0; v < cfg.n_verts; ++v) tpl.skin_weights.row(v) /= tpl.skin_weights.row(v).sum();
  for (int j = 0; j < j_count; ++j) tpl.joint_regressor.row(j) /= tpl.joint_regressor.row(j).sum();

  // Keypoints: one-hot picks spread evenly over the surface, with a seeded
  // offset so different seeds mark different vertices.
  tpl.keypoint_regressor = MatX::Zero(cfg.keypoint_count, cfg.n_verts);
  const int kp_offset = static_cast<int>(mix_seed(cfg.seed, 0x5EEDu) %
                                         static_cast<std::uint64_t>(cfg.n_verts));
  for (int k = 0; k < cfg.keypoint_count; ++k) {
    const int idx = (kp_offset + (k * cfg.n_verts) / cfg.keypoint_count) % cfg.n_verts;
    tpl.keypoint_regressor(k, idx) = 1.0;
  }

  tpl.validate();
  return tpl;
}

}  // namespace menagerie
