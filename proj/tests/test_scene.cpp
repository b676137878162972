#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;

#include <algorithm>
#include <set>

#include "menagerie/json_io.hpp"
#include "menagerie/matching.hpp"
#include "menagerie/scene.hpp"

using namespace menagerie;

namespace {

std::vector<SpeciesAssets> two_species() {
  ToyTemplateConfig cfg;
  return {make_default_species("bovine", cfg, 6, 41),
          make_default_species("equine", cfg, 6, 42)};
}

}  // namespace

TEST_CASE("k-subset sampling returns k distinct in-range values") {
  Rng rng(61);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = rng.uniform_int(1, 12);
    const int k = rng.uniform_int(1, n);
    const std::vector<int> subset = detail::sample_k_subset(n, k, rng);
    REQUIRE(subset.size() == static_cast<size_t>(k));
    std::set<int> unique(subset.begin(), subset.end());
    REQUIRE(unique.size() == subset.size());
    for (const int v : subset) {
      REQUIRE(v >= 0);
      REQUIRE(v < n);
    }
  }
}

TEST_CASE("depth intervals partition the configured range evenly") {
  LayoutConfig cfg;
  const auto iv = cfg.depth_intervals();
  REQUIRE(iv.size() == 6);
  REQUIRE(iv.front().first == Approx(8.0).margin(1e-12));
  REQUIRE(iv.back().second == Approx(50.0).margin(1e-12));
  for (size_t i = 0; i < iv.size(); ++i) {
    REQUIRE(iv[i].second - iv[i].first == Approx(7.0).margin(1e-12));
    if (i > 0) REQUIRE(iv[i].first == Approx(iv[i - 1].second).margin(1e-12));
  }
}

TEST_CASE("placement capacity follows from bin non-adjacency") {
  LayoutConfig cfg;
  REQUIRE(cfg.max_placeable() == 4);  // 8 bins
  cfg.n_horizontal_bins = 5;
  REQUIRE(cfg.max_placeable() == 3);
  Rng rng(62);
  cfg = LayoutConfig{};
  REQUIRE_THROWS_AS(sample_layout(5, cfg, rng), std::invalid_argument);
  REQUIRE_THROWS_AS(sample_layout(0, cfg, rng), std::invalid_argument);
  REQUIRE_NOTHROW(sample_layout(4, cfg, rng));
}

TEST_CASE("layouts honor every placement constraint over many draws") {
  LayoutConfig cfg;
  Rng rng(63);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = rng.uniform_int(1, cfg.max_placeable());
    const std::vector<Placement> placements = sample_layout(n, cfg, rng);
    REQUIRE(placements.size() == static_cast<size_t>(n));

    std::vector<int> bins;
    double z_lo = 1e300, z_hi = -1e300;
    for (const Placement& p : placements) {
      bins.push_back(p.bin);
      REQUIRE(p.ty_raw == 0.0);
      REQUIRE(p.ty == cfg.ground_offset);
      REQUIRE(p.tz_raw >= cfg.tz_min);
      REQUIRE(p.tz_raw <= cfg.tz_max);
      REQUIRE(p.tx_raw >= cfg.tx_min);
      REQUIRE(p.tx_raw <= cfg.tx_max);
      REQUIRE(p.tx >= cfg.tx_min - cfg.jitter_xz);
      REQUIRE(p.tx <= cfg.tx_max + cfg.jitter_xz);
      REQUIRE(p.tz >= cfg.tz_min - cfg.jitter_xz);
      REQUIRE(p.tz <= cfg.tz_max + cfg.jitter_xz);
      REQUIRE(std::abs(p.tx - p.tx_raw) <= cfg.jitter_xz + 1e-12);
      REQUIRE(std::abs(p.tz - p.tz_raw) <= cfg.jitter_xz + 1e-12);
      REQUIRE(p.bin >= 0);
      REQUIRE(p.bin < cfg.n_horizontal_bins);
      REQUIRE(p.depth_interval >= 0);
      REQUIRE(p.depth_interval < cfg.n_depth_intervals);
      // The raw draw lies inside its recorded depth interval.
      const auto iv = cfg.depth_intervals()[static_cast<size_t>(p.depth_interval)];
      REQUIRE(p.tz_raw >= iv.first - 1e-12);
      REQUIRE(p.tz_raw <= iv.second + 1e-12);
      // And inside its recorded horizontal bin.
      const double bin_w = (cfg.tx_max - cfg.tx_min) / cfg.n_horizontal_bins;
      REQUIRE(p.tx_raw >= cfg.tx_min + bin_w * p.bin - 1e-12);
      REQUIRE(p.tx_raw <= cfg.tx_min + bin_w * (p.bin + 1) + 1e-12);
      z_lo = std::min(z_lo, p.tz_raw);
      z_hi = std::max(z_hi, p.tz_raw);
    }
    REQUIRE(z_hi - z_lo <= cfg.depth_span_max + 1e-12);

    std::sort(bins.begin(), bins.end());
    for (size_t i = 1; i < bins.size(); ++i) {
      REQUIRE(bins[i] - bins[i - 1] >= 2);  // distinct and non-adjacent
    }
  }
}

TEST_CASE("orientation sampling stays inside the configured ranges") {
  LayoutConfig cfg;
  Rng rng(64);
  for (int i = 0; i < 1000; ++i) {
    const auto [pitch, yaw] = sample_orientation(cfg, rng);
    REQUIRE(pitch >= cfg.pitch_min_deg);
    REQUIRE(pitch <= cfg.pitch_max_deg);
    REQUIRE(yaw >= cfg.yaw_min_deg);
    REQUIRE(yaw <= cfg.yaw_max_deg);
  }
}

TEST_CASE("default pools include the rest entry first") {
  const std::vector<ShapeParams> shapes = make_default_shape_pool(8, 5, 7);
  REQUIRE(shapes.size() == 5);
  REQUIRE(shapes[0].beta.size() == 8);
  REQUIRE(shapes[0].beta.cwiseAbs().maxCoeff() == 0.0);
  for (size_t i = 1; i < shapes.size(); ++i) {
    REQUIRE(shapes[i].beta.cwiseAbs().maxCoeff() <= 1.5);
  }
  const std::vector<PoseParams> poses = make_default_pose_pool(17, 5, 7);
  REQUIRE(poses.size() == 5);
  REQUIRE(poses[0].theta.cwiseAbs().maxCoeff() == 0.0);
  for (size_t i = 1; i < poses.size(); ++i) {
    REQUIRE(poses[i].theta.row(0).cwiseAbs().maxCoeff() == 0.0);  // root left neutral
    REQUIRE(poses[i].theta.cwiseAbs().maxCoeff() <= 0.3 + 1e-12);
  }
}

TEST_CASE("assembled scenes are deterministic per master seed and index") {
  const std::vector<SpeciesAssets> species = two_species();
  SceneConfig cfg;
  const SceneAnnotation a = assemble_scene(species, cfg, 500, 3);
  const SceneAnnotation b = assemble_scene(species, cfg, 500, 3);
  REQUIRE(scene_to_json(a).dump() == scene_to_json(b).dump());
  const SceneAnnotation c = assemble_scene(species, cfg, 500, 4);
  REQUIRE(scene_to_json(a).dump() != scene_to_json(c).dump());
  const SceneAnnotation d = assemble_scene(species, cfg, 501, 3);
  REQUIRE(scene_to_json(a).dump() != scene_to_json(d).dump());
}

TEST_CASE("assembled scenes have coherent annotations") {
  const std::vector<SpeciesAssets> species = two_species();
  SceneConfig cfg;
  for (int idx = 0; idx < 12; ++idx) {
    const SceneAnnotation scene = assemble_scene(species, cfg, 600, idx);
    REQUIRE(scene.scene_index == idx);
    const int n = static_cast<int>(scene.instances.size());
    REQUIRE(n >= cfg.min_animals);
    REQUIRE(n <= std::min(cfg.max_animals, cfg.layout.max_placeable()));
    for (const SceneInstance& inst : scene.instances) {
      REQUIRE((inst.species_tag == "bovine" || inst.species_tag == "equine"));
      const int k = static_cast<int>(inst.keypoints2d.rows());
      REQUIRE(k == inst.keypoints3d.rows());
      REQUIRE(inst.visibility.size() == static_cast<size_t>(k));
      REQUIRE(inst.bbox.is_valid());
      REQUIRE(inst.translation.z() > 0.0);

      // Reprojection: visible keypoints land at their annotated pixels.
      const ProjectedPoints proj = project(inst.keypoints3d, scene.camera);
      for (int i = 0; i < k; ++i) {
        if (!inst.visibility[static_cast<size_t>(i)]) continue;
        REQUIRE(proj.valid[static_cast<size_t>(i)] == 1);
        REQUIRE(proj.pixels(i, 0) == Approx(inst.keypoints2d(i, 0)).margin(1e-9));
        REQUIRE(proj.pixels(i, 1) == Approx(inst.keypoints2d(i, 1)).margin(1e-9));
        // Visible points are inside the image.
        REQUIRE(inst.keypoints2d(i, 0) >= 0.0);
        REQUIRE(inst.keypoints2d(i, 0) < scene.camera.image_width);
        REQUIRE(inst.keypoints2d(i, 1) >= 0.0);
        REQUIRE(inst.keypoints2d(i, 1) < scene.camera.image_height);
      }
    }
  }
}

TEST_CASE("keypoints hidden behind a closer instance box are marked occluded") {
  const std::vector<SpeciesAssets> species = two_species();
  SceneConfig cfg;
  int seen_occluded = 0;
  for (int idx = 0; idx < 40; ++idx) {
    const SceneAnnotation scene = assemble_scene(species, cfg, 700, idx);
    for (size_t a = 0; a < scene.instances.size(); ++a) {
      const SceneInstance& inst = scene.instances[a];
      const ProjectedPoints proj = project(inst.keypoints3d, scene.camera);
      for (int i = 0; i < inst.keypoints2d.rows(); ++i) {
        if (!proj.valid[static_cast<size_t>(i)]) continue;
        const double px = proj.pixels(i, 0);
        const double py = proj.pixels(i, 1);
        const bool in_image = px >= 0.0 && px < scene.camera.image_width && py >= 0.0 &&
                              py < scene.camera.image_height;
        bool occluded = false;
        for (size_t b = 0; b < scene.instances.size(); ++b) {
          if (b == a) continue;
          const SceneInstance& other = scene.instances[b];
          if (other.translation.z() >= inst.translation.z()) continue;
          const double nx = px / scene.camera.image_width;
          const double ny = py / scene.camera.image_height;
          if (nx >= other.bbox.x_min() && nx <= other.bbox.x_max() &&
              ny >= other.bbox.y_min() && ny <= other.bbox.y_max()) {
            occluded = true;
          }
        }
        const bool expect_visible = in_image && !occluded;
        REQUIRE(inst.visibility[static_cast<size_t>(i)] == (expect_visible ? 1 : 0));
        if (occluded) ++seen_occluded;
      }
    }
  }
  REQUIRE(seen_occluded > 0);  // the corpus genuinely exercises occlusion
}

TEST_CASE("pairwise overlap statistics have unit diagonal and symmetric entries") {
  const std::vector<SpeciesAssets> species = two_species();
  SceneConfig cfg;
  const SceneAnnotation scene = assemble_scene(species, cfg, 800, 1);
  const OcclusionStats st = occlusion_stats(scene);
  const int n = static_cast<int>(scene.instances.size());
  REQUIRE(st.pairwise_iou.rows() == n);
  REQUIRE(st.pairwise_iou.cols() == n);
  for (int i = 0; i < n; ++i) {
    REQUIRE(st.pairwise_iou(i, i) == 1.0);
    for (int j = 0; j < n; ++j) {
      REQUIRE(st.pairwise_iou(i, j) == st.pairwise_iou(j, i));
      if (i != j) {
        REQUIRE(st.pairwise_iou(i, j) ==
                Approx(iou(scene.instances[static_cast<size_t>(i)].bbox,
                           scene.instances[static_cast<size_t>(j)].bbox))
                    .margin(1e-15));
      }
    }
  }
  REQUIRE(st.occluded_fraction.size() == n);
  for (int i = 0; i < n; ++i) {
    REQUIRE(st.occluded_fraction(i) >= 0.0);
    REQUIRE(st.occluded_fraction(i) <= 1.0);
  }
}

TEST_CASE("scene config validation rejects impossible instance ranges") {
  SceneConfig cfg;
  cfg.min_animals = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SceneConfig{};
  cfg.min_animals = 6;
  cfg.max_animals = 5;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SceneConfig{};
  cfg.min_animals = 5;  // exceeds the 4-slot bin capacity
  cfg.max_animals = 8;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("rendered overlay is deterministic and marks instance regions") {
  const std::vector<SpeciesAssets> species = two_species();
  SceneConfig cfg;
  const SceneAnnotation scene = assemble_scene(species, cfg, 900, 0);
  const std::vector<double> img = render_overlay(scene, 64, 64);
  REQUIRE(img.size() == 64 * 64 * 3);
  const std::vector<double> again = render_overlay(scene, 64, 64);
  REQUIRE(img == again);
  double box_mass = 0.0, dot_mass = 0.0;
  for (size_t i = 0; i < img.size(); i += 3) {
    box_mass += img[i];
    dot_mass += img[i + 1];
  }
  REQUIRE(box_mass > 0.0);
  REQUIRE(dot_mass > 0.0);
  REQUIRE_THROWS_AS(render_overlay(scene, 0, 64), std::invalid_argument);
}
