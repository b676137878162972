#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "menagerie/body_model.hpp"
#include "menagerie/decoder.hpp"
#include "menagerie/losses.hpp"
#include "menagerie/matching.hpp"
#include "menagerie/metrics.hpp"
#include "menagerie/scene.hpp"
#include "menagerie/template_io.hpp"

namespace menagerie {

// Built-in invariant suites, runnable from the CLI. Mutations intentionally
// break one invariant each so the suites themselves can be shown to detect
// real defects.
enum class Mutation { kNone, kGreedyMatcher, kBreakSkinWeights };

struct SelfcheckOptions {
  std::string template_path;  // optional: validate an on-disk template too
  Mutation mutation = Mutation::kNone;
};

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::string message;
};

namespace detail {

inline std::vector<int> greedy_assignment(const MatX& cost) {
  std::vector<int> out(static_cast<size_t>(cost.rows()), -1);
  std::vector<char> used(static_cast<size_t>(cost.cols()), 0);
  for (int i = 0; i < cost.rows(); ++i) {
    int best = -1;
    for (int p = 0; p < cost.cols(); ++p) {
      if (used[static_cast<size_t>(p)]) continue;
      if (best < 0 || cost(i, p) < cost(i, best)) best = p;
    }
    used[static_cast<size_t>(best)] = 1;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace detail

inline SuiteResult check_body_model(Mutation mutation) {
  SuiteResult r{"body-model", true, ""};
  ToyTemplateConfig cfg;
  cfg.n_verts = 122;
  cfg.joint_count = 11;
  TemplateModel tpl = make_toy_template(cfg);
  if (mutation == Mutation::kBreakSkinWeights) tpl.skin_weights(0, 0) += 0.25;

  for (int v = 0; v < tpl.vertex_count(); ++v) {
    if (std::abs(tpl.skin_weights.row(v).sum() - 1.0) > 1e-9) {
      return {r.name, false, "skin weight row " + std::to_string(v) + " does not sum to 1"};
    }
  }

  ShapeParams beta{VecX::Zero(tpl.shape_dim())};
  PoseParams rest{Points3::Zero(tpl.joint_count(), 3)};
  const PosedMesh neutral = pose_mesh(tpl, beta, rest, Vec3::Zero());
  if ((neutral.vertices - tpl.template_vertices).cwiseAbs().maxCoeff() > 1e-12) {
    return {r.name, false, "rest pose does not reproduce the template"};
  }

  Rng rng(7);
  for (int trial = 0; trial < 16; ++trial) {
    PoseParams pose{Points3::Zero(tpl.joint_count(), 3)};
    for (int j = 0; j < tpl.joint_count(); ++j) {
      for (int c = 0; c < 3; ++c) pose.theta(j, c) = rng.uniform(-1.0, 1.0);
    }
    const Vec3 gamma(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    const PosedMesh a = pose_mesh(tpl, beta, pose, Vec3::Zero());
    const PosedMesh b = pose_mesh(tpl, beta, pose, gamma);
    Points3 shifted = a.vertices;
    shifted.rowwise() += gamma.transpose();
    if ((shifted.array() != b.vertices.array()).any()) {
      return {r.name, false, "global translation is not an exact shift"};
    }
    const Mat3 rot = rodrigues(Vec3(pose.theta.row(0).transpose()));
    if ((rot * rot.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-10) {
      return {r.name, false, "axis-angle rotation is not orthonormal"};
    }
  }
  return r;
}

inline SuiteResult check_matcher(Mutation mutation) {
  SuiteResult r{"matcher-optimality", true, ""};
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = rng.uniform_int(1, 6);
    const int p = rng.uniform_int(m, 8);
    MatX cost(m, p);
    for (int i = 0; i < m; ++i) {
      for (int c = 0; c < p; ++c) cost(i, c) = rng.uniform(-2.0, 2.0);
    }
    const std::vector<int> a = mutation == Mutation::kGreedyMatcher
                                   ? detail::greedy_assignment(cost)
                                   : hungarian(cost);
    const double got = detail::assignment_total(cost, a);
    const double want = min_injection_cost_exhaustive(cost);
    if (std::abs(got - want) > 1e-9) {
      return {r.name, false,
              "assignment cost " + std::to_string(got) + " != optimum " + std::to_string(want)};
    }
  }
  return r;
}

inline SuiteResult check_losses() {
  SuiteResult r{"loss-sanity", true, ""};
  Rng rng(33);
  const int k = 6;
  for (int trial = 0; trial < 32; ++trial) {
    GroundTruthInstance gt;
    gt.bbox = BBox{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3),
                   rng.uniform(0.1, 0.3)};
    gt.keypoints2d.resize(k, 2);
    gt.keypoints3d.resize(k, 3);
    gt.visibility.assign(k, 1);
    for (int i = 0; i < k; ++i) {
      gt.keypoints2d.row(i) << rng.uniform(), rng.uniform();
      gt.keypoints3d.row(i) << rng.normal(), rng.normal(), rng.normal();
    }
    gt.shape.beta = VecX::Zero(4);
    gt.pose.theta = Points3::Zero(5, 3);
    InstancePrediction perfect;
    perfect.bbox = gt.bbox;
    perfect.confidence = 1.0;
    perfect.keypoints2d = gt.keypoints2d;
    perfect.keypoints3d = gt.keypoints3d;
    perfect.shape = gt.shape;
    perfect.pose = gt.pose;
    const LossBreakdown at_gt = total_loss({perfect}, {gt}, {}, {});
    if (at_gt.total != 0.0) return {r.name, false, "loss is not zero at the ground truth"};
    InstancePrediction off = perfect;
    off.bbox.cx += rng.uniform(-0.05, 0.05);
    off.confidence = rng.uniform(0.1, 0.9);
    const LossBreakdown near = total_loss({off}, {gt}, {rng.uniform()}, {});
    if (!(near.total >= 0.0)) return {r.name, false, "loss went negative"};
  }
  return r;
}

inline SuiteResult check_metrics() {
  SuiteResult r{"metrics-alignment", true, ""};
  Rng rng(41);
  for (int trial = 0; trial < 64; ++trial) {
    Points3 src(10, 3);
    for (int i = 0; i < src.rows(); ++i) {
      src.row(i) << rng.normal(), rng.normal(), rng.normal();
    }
    const Mat3 rot = rodrigues(Vec3(rng.normal(), rng.normal(), rng.normal()));
    const double s = std::exp(rng.uniform(-1.5, 1.5));
    const Vec3 t(rng.normal(), rng.normal(), rng.normal());
    Points3 dst = s * (src * rot.transpose());
    dst.rowwise() += t.transpose();
    const auto err = pa_mpjpe(src, dst);
    if (!err || *err > 1e-9) {
      return {r.name, false, "similarity alignment failed to recover a clean transform"};
    }
  }
  return r;
}

inline SuiteResult check_layout() {
  SuiteResult r{"layout-constraints", true, ""};
  LayoutConfig cfg;
  Rng rng(55);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = rng.uniform_int(1, cfg.max_placeable());
    const auto placements = sample_layout(n, cfg, rng);
    double lo = 1e300, hi = -1e300;
    std::vector<int> bins;
    for (const Placement& p : placements) {
      if (p.ty_raw != cfg.ty) return {r.name, false, "vertical placement moved off the ground"};
      if (p.tz_raw < cfg.tz_min || p.tz_raw > cfg.tz_max) {
        return {r.name, false, "depth outside the configured range"};
      }
      lo = std::min(lo, p.tz_raw);
      hi = std::max(hi, p.tz_raw);
      bins.push_back(p.bin);
    }
    if (hi - lo > cfg.depth_span_max) return {r.name, false, "depth span too wide"};
    std::sort(bins.begin(), bins.end());
    for (size_t i = 1; i < bins.size(); ++i) {
      if (bins[i] - bins[i - 1] < 2) return {r.name, false, "adjacent bins occupied"};
    }
  }
  return r;
}

inline SuiteResult check_decoder() {
  SuiteResult r{"decoder-determinism", true, ""};
  DecoderConfig cfg;
  const DecoderWeights w = make_random_weights(cfg, 4, 4, 3, 5, 99);
  std::vector<double> image(static_cast<size_t>(cfg.image_height) * cfg.image_width * 3, 0.0);
  Rng rng(3);
  for (double& v : image) v = rng.uniform();
  PromptSet prompts;
  const auto a = decode(image, prompts, w, 11);
  const auto b = decode(image, prompts, w, 11);
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].confidence != b[i].confidence ||
        (a[i].keypoints2d.array() != b[i].keypoints2d.array()).any() ||
        (a[i].shape.beta.array() != b[i].shape.beta.array()).any()) {
      return {r.name, false, "repeated decode is not bit-identical"};
    }
  }
  const ImageFeatureMap fm = stub_encode(image, cfg);
  Rng qrng(mix_seed(11, 0x0DECu));
  const TokenState st = assemble_queries(cfg, w, prompts, qrng);
  const MatX attn = cross_attention_matrix(st, fm, w.attention[0], 0, cfg.heads);
  for (int row = 0; row < attn.rows(); ++row) {
    if (std::abs(attn.row(row).sum() - 1.0) > 1e-6) {
      return {r.name, false, "attention row does not sum to 1"};
    }
  }
  return r;
}

inline SuiteResult check_template_file(const std::string& path) {
  SuiteResult r{"template-file", true, ""};
  try {
    const TemplateModel tpl = load_template(path);
    (void)tpl;
  } catch (const std::exception& e) {
    return {r.name, false, e.what()};
  }
  return r;
}

inline std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opts) {
  std::vector<SuiteResult> out;
  out.push_back(check_body_model(opts.mutation));
  out.push_back(check_matcher(opts.mutation));
  out.push_back(check_losses());
  out.push_back(check_metrics());
  out.push_back(check_layout());
  out.push_back(check_decoder());
  if (!opts.template_path.empty()) out.push_back(check_template_file(opts.template_path));
  return out;
}

}  // namespace menagerie
