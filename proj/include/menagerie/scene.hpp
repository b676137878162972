#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "menagerie/body_model.hpp"
#include "menagerie/matching.hpp"
#include "menagerie/projection.hpp"
#include "menagerie/rng.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

// Ground-plane layout recipe. Animals stand on a line of lateral bins (no two
// animals in adjacent bins), draw depth from fixed depth intervals restricted
// to a window of at most depth_span_max, then get independent x/z jitter.
struct LayoutConfig {
  int max_animals = 8;
  int n_horizontal_bins = 8;
  double tx_min = -1.5, tx_max = 1.5;
  double ty = 0.0;
  double tz_min = 8.0, tz_max = 50.0;
  int n_depth_intervals = 6;
  double depth_span_max = 30.0;
  double jitter_xz = 1.5;
  double ground_offset = 0.3;
  double pitch_min_deg = -15.0, pitch_max_deg = 15.0;
  double yaw_min_deg = 0.0, yaw_max_deg = 360.0;

  // Non-adjacency caps how many animals fit on the bin line.
  int max_placeable() const { return (n_horizontal_bins + 1) / 2; }

  std::vector<std::pair<double, double>> depth_intervals() const {
    std::vector<std::pair<double, double>> out;
    const double w = (tz_max - tz_min) / n_depth_intervals;
    for (int i = 0; i < n_depth_intervals; ++i) {
      out.emplace_back(tz_min + i * w, tz_min + (i + 1) * w);
    }
    return out;
  }

  void validate() const {
    if (max_animals < 1) throw std::invalid_argument("layout: max_animals must be >= 1");
    if (n_horizontal_bins < 1) throw std::invalid_argument("layout: needs at least one bin");
    if (!(tx_max > tx_min)) throw std::invalid_argument("layout: empty tx range");
    if (!(tz_max > tz_min)) throw std::invalid_argument("layout: empty tz range");
    if (!(tz_min > 0.0)) throw std::invalid_argument("layout: tz_min must be positive");
    if (n_depth_intervals < 1) throw std::invalid_argument("layout: needs depth intervals");
    if (!(depth_span_max > 0.0)) throw std::invalid_argument("layout: depth span must be positive");
    if (jitter_xz < 0.0) throw std::invalid_argument("layout: negative jitter");
    if (pitch_max_deg < pitch_min_deg || yaw_max_deg < yaw_min_deg) {
      throw std::invalid_argument("layout: empty orientation range");
    }
  }
};

struct Placement {
  int bin = 0;             // lateral bin index
  int depth_interval = 0;  // depth interval index
  double tx_raw = 0.0;     // pre-jitter position
  double ty_raw = 0.0;
  double tz_raw = 0.0;
  double tx = 0.0;  // final position (jitter applied; ty includes ground offset)
  double ty = 0.0;
  double tz = 0.0;
};

namespace detail {

// Uniformly random sorted k-subset of {0..n-1} (Floyd's algorithm).
inline std::vector<int> sample_k_subset(int n, int k, Rng& rng) {
  std::vector<int> chosen;
  for (int j = n - k; j < n; ++j) {
    const int t = rng.uniform_int(0, j);
    if (std::find(chosen.begin(), chosen.end(), t) != chosen.end()) {
      chosen.push_back(j);
    } else {
      chosen.push_back(t);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace detail

// Draws n placements satisfying the layout constraints. Non-adjacent bins are
// sampled uniformly over all valid bin sets via the standard bijection with
// k-subsets of a shrunk range; the depth window keeps the pre-jitter span
// within depth_span_max by construction.
inline std::vector<Placement> sample_layout(int n, const LayoutConfig& cfg, Rng& rng) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("sample_layout: need at least one animal");
  if (n > cfg.max_placeable()) {
    throw std::invalid_argument("sample_layout: too many animals for non-adjacent bins");
  }

  // Bins: subset of {0..bins-n} mapped to a non-adjacent set, then shuffled so
  // animal order is not spatially sorted.
  std::vector<int> bins = detail::sample_k_subset(cfg.n_horizontal_bins - n + 1, n, rng);
  for (int i = 0; i < n; ++i) bins[static_cast<size_t>(i)] += i;
  for (int i = n - 1; i > 0; --i) {
    std::swap(bins[static_cast<size_t>(i)], bins[static_cast<size_t>(rng.uniform_int(0, i))]);
  }

  // Depth window, then a per-animal interval restricted to the window.
  const double span = std::min(cfg.depth_span_max, cfg.tz_max - cfg.tz_min);
  const double win_lo = rng.uniform(cfg.tz_min, std::max(cfg.tz_min, cfg.tz_max - span));
  const double win_hi = win_lo + span;
  const auto intervals = cfg.depth_intervals();
  std::vector<int> eligible;
  for (int i = 0; i < static_cast<int>(intervals.size()); ++i) {
    if (intervals[static_cast<size_t>(i)].first < win_hi &&
        intervals[static_cast<size_t>(i)].second > win_lo) {
      eligible.push_back(i);
    }
  }

  std::vector<Placement> out(static_cast<size_t>(n));
  const double bin_w = (cfg.tx_max - cfg.tx_min) / cfg.n_horizontal_bins;
  for (int i = 0; i < n; ++i) {
    Placement& p = out[static_cast<size_t>(i)];
    p.bin = bins[static_cast<size_t>(i)];
    p.depth_interval = eligible[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
    const auto& iv = intervals[static_cast<size_t>(p.depth_interval)];
    p.tz_raw = rng.uniform(std::max(iv.first, win_lo), std::min(iv.second, win_hi));
    p.tx_raw = cfg.tx_min + bin_w * p.bin + rng.uniform(0.0, bin_w);
    p.ty_raw = cfg.ty;
  }
  // Final positions: raw draw plus jitter, clamped to the configured range
  // widened by the jitter bound. Raw values stay available alongside.
  for (int i = 0; i < n; ++i) {
    Placement& p = out[static_cast<size_t>(i)];
    p.tx = std::clamp(p.tx_raw + rng.uniform(-cfg.jitter_xz, cfg.jitter_xz),
                      cfg.tx_min - cfg.jitter_xz, cfg.tx_max + cfg.jitter_xz);
    p.tz = std::clamp(p.tz_raw + rng.uniform(-cfg.jitter_xz, cfg.jitter_xz),
                      cfg.tz_min - cfg.jitter_xz, cfg.tz_max + cfg.jitter_xz);
    p.ty = p.ty_raw + cfg.ground_offset;
  }
  return out;
}

// (pitch_deg, yaw_deg); pitch tilts about x, yaw spins about the vertical.
inline std::pair<double, double> sample_orientation(const LayoutConfig& cfg, Rng& rng) {
  const double pitch = rng.uniform(cfg.pitch_min_deg, cfg.pitch_max_deg);
  const double yaw = rng.uniform(cfg.yaw_min_deg, cfg.yaw_max_deg);
  return {pitch, yaw};
}

struct SpeciesAssets {
  std::string tag;
  TemplateModel model;
  std::vector<ShapeParams> shape_pool;
  std::vector<PoseParams> pose_pool;
};

// Pool entry 0 is always the neutral value so every corpus contains at least
// one canonical example per species.
inline std::vector<ShapeParams> make_default_shape_pool(int shape_dim, int count,
                                                        std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("shape pool: count must be >= 1");
  Rng rng(mix_seed(seed, 0x54A9Eu));
  std::vector<ShapeParams> pool(static_cast<size_t>(count));
  pool[0].beta = VecX::Zero(shape_dim);
  for (int i = 1; i < count; ++i) {
    pool[static_cast<size_t>(i)].beta = VecX::Zero(shape_dim);
    for (int b = 0; b < shape_dim; ++b) {
      pool[static_cast<size_t>(i)].beta(b) = rng.uniform(-1.5, 1.5);
    }
  }
  return pool;
}

inline std::vector<PoseParams> make_default_pose_pool(int joint_count, int count,
                                                      std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("pose pool: count must be >= 1");
  Rng rng(mix_seed(seed, 0x90A5Eu));
  std::vector<PoseParams> pool(static_cast<size_t>(count));
  pool[0].theta = Points3::Zero(joint_count, 3);
  for (int i = 1; i < count; ++i) {
    Points3 theta = Points3::Zero(joint_count, 3);
    for (int j = 1; j < joint_count; ++j) {  // root stays neutral; yaw/pitch own it
      for (int c = 0; c < 3; ++c) theta(j, c) = rng.uniform(-0.3, 0.3);
    }
    pool[static_cast<size_t>(i)].theta = theta;
  }
  return pool;
}

inline SpeciesAssets make_default_species(const std::string& tag, const ToyTemplateConfig& cfg,
                                          int pool_size, std::uint64_t seed) {
  SpeciesAssets s;
  s.tag = tag;
  ToyTemplateConfig tc = cfg;
  tc.seed = mix_seed(seed, 0x7E3Au);
  s.model = make_toy_template(tc);
  s.shape_pool = make_default_shape_pool(tc.shape_dim, pool_size, mix_seed(seed, 1));
  s.pose_pool = make_default_pose_pool(tc.joint_count, pool_size, mix_seed(seed, 2));
  return s;
}

struct SceneInstance {
  std::string species_tag;
  int species_index = 0;
  ShapeParams shape;
  PoseParams pose;  // root row already carries the composed yaw/pitch
  Vec3 translation = Vec3::Zero();
  double yaw_deg = 0.0;
  double pitch_deg = 0.0;
  Points3 keypoints3d;      // camera frame
  Points2 keypoints2d;      // pixels
  VisibilityMask visibility;
  BBox bbox;  // normalized, from the projected mesh
  Placement layout;
};

struct SceneAnnotation {
  int scene_index = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t scene_seed = 0;
  PerspectiveCamera camera;
  std::vector<SceneInstance> instances;
};

struct SceneConfig {
  LayoutConfig layout;
  PerspectiveCamera camera;
  int min_animals = 2;
  int max_animals = 8;

  void validate() const {
    layout.validate();
    camera.validate();
    if (min_animals < 1) throw std::invalid_argument("scene: min_animals must be >= 1");
    if (max_animals < min_animals) throw std::invalid_argument("scene: max < min animals");
    if (min_animals > layout.max_placeable()) {
      throw std::invalid_argument("scene: min_animals exceeds what the bins can hold");
    }
  }
};

namespace detail {

inline Mat3 yaw_pitch_rotation(double yaw_deg, double pitch_deg) {
  const double yaw = yaw_deg * M_PI / 180.0;
  const double pitch = pitch_deg * M_PI / 180.0;
  Mat3 ry, rx;
  ry << std::cos(yaw), 0.0, std::sin(yaw), 0.0, 1.0, 0.0, -std::sin(yaw), 0.0, std::cos(yaw);
  rx << 1.0, 0.0, 0.0, 0.0, std::cos(pitch), -std::sin(pitch), 0.0, std::sin(pitch),
      std::cos(pitch);
  return ry * rx;
}

}  // namespace detail

// Deterministic scene build. The per-scene stream is seeded by
// mix_seed(master_seed, scene_index); the draw order is fixed: animal count,
// layout, then per animal species / shape / pose / orientation. Regenerating
// with the same seeds reproduces the annotation exactly.
inline SceneAnnotation assemble_scene(const std::vector<SpeciesAssets>& species,
                                      const SceneConfig& cfg, std::uint64_t master_seed,
                                      int scene_index) {
  cfg.validate();
  if (species.empty()) throw std::invalid_argument("assemble_scene: no species");
  for (const SpeciesAssets& s : species) {
    if (s.shape_pool.empty() || s.pose_pool.empty()) {
      throw std::invalid_argument("assemble_scene: species with empty pool");
    }
  }

  SceneAnnotation scene;
  scene.scene_index = scene_index;
  scene.master_seed = master_seed;
  scene.scene_seed = mix_seed(master_seed, static_cast<std::uint64_t>(scene_index));
  scene.camera = cfg.camera;
  Rng rng(scene.scene_seed);

  const int hi = std::min(cfg.max_animals, cfg.layout.max_placeable());
  const int n = rng.uniform_int(cfg.min_animals, hi);
  const std::vector<Placement> placements = sample_layout(n, cfg.layout, rng);

  scene.instances.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    SceneInstance& inst = scene.instances[static_cast<size_t>(i)];
    inst.species_index = rng.uniform_int(0, static_cast<int>(species.size()) - 1);
    const SpeciesAssets& sp = species[static_cast<size_t>(inst.species_index)];
    inst.species_tag = sp.tag;
    inst.shape = sp.shape_pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(sp.shape_pool.size()) - 1))];
    inst.pose = sp.pose_pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(sp.pose_pool.size()) - 1))];
    const auto [pitch, yaw] = sample_orientation(cfg.layout, rng);
    inst.pitch_deg = pitch;
    inst.yaw_deg = yaw;
    inst.layout = placements[static_cast<size_t>(i)];
    inst.translation = Vec3(inst.layout.tx, inst.layout.ty, inst.layout.tz);

    // Fold the sampled orientation into the root joint.
    const Mat3 root = detail::yaw_pitch_rotation(yaw, pitch) *
                      rodrigues(inst.pose.theta.row(0).transpose());
    inst.pose.theta.row(0) = rotation_to_axis_angle(root).transpose();
  }

  // First pass: pose, project, box.
  std::vector<ProjectedPoints> kp_proj(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    SceneInstance& inst = scene.instances[static_cast<size_t>(i)];
    const SpeciesAssets& sp = species[static_cast<size_t>(inst.species_index)];
    const PosedMesh mesh = pose_mesh(sp.model, inst.shape, inst.pose, inst.translation);
    inst.keypoints3d = mesh.keypoints3d;
    const ProjectedPoints verts = project(mesh.vertices, cfg.camera);
    const auto box = bbox_from_points(verts.pixels, verts.valid, cfg.camera);
    inst.bbox = box.value_or(BBox{});
    kp_proj[static_cast<size_t>(i)] = project(mesh.keypoints3d, cfg.camera);
    inst.keypoints2d = kp_proj[static_cast<size_t>(i)].pixels;
  }

  // Second pass: visibility = valid projection, inside the image, and not
  // covered by the box of a strictly closer instance.
  const double iw = static_cast<double>(cfg.camera.image_width);
  const double ih = static_cast<double>(cfg.camera.image_height);
  for (int i = 0; i < n; ++i) {
    SceneInstance& inst = scene.instances[static_cast<size_t>(i)];
    const int k_count = static_cast<int>(inst.keypoints2d.rows());
    inst.visibility.assign(static_cast<size_t>(k_count), 0);
    for (int k = 0; k < k_count; ++k) {
      if (!kp_proj[static_cast<size_t>(i)].valid[static_cast<size_t>(k)]) continue;
      const double x = inst.keypoints2d(k, 0);
      const double y = inst.keypoints2d(k, 1);
      if (x < 0.0 || x >= iw || y < 0.0 || y >= ih) continue;
      bool occluded = false;
      for (int o = 0; o < n && !occluded; ++o) {
        if (o == i) continue;
        const SceneInstance& other = scene.instances[static_cast<size_t>(o)];
        if (!(other.translation.z() < inst.translation.z())) continue;
        const double nx = x / iw, ny = y / ih;
        occluded = nx >= other.bbox.x_min() && nx <= other.bbox.x_max() &&
                   ny >= other.bbox.y_min() && ny <= other.bbox.y_max();
      }
      if (!occluded) inst.visibility[static_cast<size_t>(k)] = 1;
    }
  }
  return scene;
}

struct OcclusionStats {
  MatX pairwise_iou;        // (n, n), zero diagonal
  VecX occluded_fraction;   // per instance: fraction of keypoints not visible
};

inline OcclusionStats occlusion_stats(const SceneAnnotation& scene) {
  const int n = static_cast<int>(scene.instances.size());
  OcclusionStats st;
  st.pairwise_iou = MatX::Zero(n, n);
  st.occluded_fraction = VecX::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      st.pairwise_iou(i, j) = i == j ? 1.0
                                     : iou(scene.instances[static_cast<size_t>(i)].bbox,
                                           scene.instances[static_cast<size_t>(j)].bbox);
    }
    const VisibilityMask& vis = scene.instances[static_cast<size_t>(i)].visibility;
    int hidden = 0;
    for (const auto v : vis) hidden += v ? 0 : 1;
    st.occluded_fraction(i) =
        vis.empty() ? 0.0 : static_cast<double>(hidden) / static_cast<double>(vis.size());
  }
  return st;
}

// Painter's-algorithm overlay of the annotation, used as the decoder's input
// image: per instance a depth-shaded box fill plus bright keypoint dots.
// Row-major H x W x 3, values in [0, 1].
inline std::vector<double> render_overlay(const SceneAnnotation& scene, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("render_overlay: bad size");
  std::vector<double> img(static_cast<size_t>(height) * width * 3, 0.0);
  auto at = [&](int y, int x, int c) -> double& {
    return img[(static_cast<size_t>(y) * width + x) * 3 + static_cast<size_t>(c)];
  };
  std::vector<int> order(scene.instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scene.instances[static_cast<size_t>(a)].translation.z() >
           scene.instances[static_cast<size_t>(b)].translation.z();
  });
  for (const int idx : order) {
    const SceneInstance& inst = scene.instances[static_cast<size_t>(idx)];
    const double shade = 1.0 / (1.0 + inst.translation.z() / 10.0);
    const int x0 = std::clamp(static_cast<int>(std::floor(inst.bbox.x_min() * width)), 0, width - 1);
    const int x1 = std::clamp(static_cast<int>(std::ceil(inst.bbox.x_max() * width)), 0, width - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(inst.bbox.y_min() * height)), 0, height - 1);
    const int y1 = std::clamp(static_cast<int>(std::ceil(inst.bbox.y_max() * height)), 0, height - 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        at(y, x, 0) = shade;
        at(y, x, 2) = 0.25 + 0.5 * (static_cast<double>(idx + 1) / (scene.instances.size() + 1));
      }
    }
    const double iw = static_cast<double>(scene.camera.image_width);
    const double ih = static_cast<double>(scene.camera.image_height);
    for (int k = 0; k < inst.keypoints2d.rows(); ++k) {
      if (!inst.visibility[static_cast<size_t>(k)]) continue;
      const int px = static_cast<int>(inst.keypoints2d(k, 0) / iw * width);
      const int py = static_cast<int>(inst.keypoints2d(k, 1) / ih * height);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = px + dx, y = py + dy;
          if (x >= 0 && x < width && y >= 0 && y < height) at(y, x, 1) = 1.0;
        }
      }
    }
  }
  return img;
}

}  // namespace menagerie
