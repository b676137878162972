#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "menagerie/matching.hpp"
#include "menagerie/rng.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

struct LossWeights {
  double lambda_params = 1.0;
  double lambda_2d = 5.0;
  double lambda_3d = 5.0;
  double lambda_box = 1.0;
};

// Mean squared error over the concatenated shape and pose vectors.
inline double l_params(const ShapeParams& pred_shape, const PoseParams& pred_pose,
                       const ShapeParams& gt_shape, const PoseParams& gt_pose) {
  if (pred_shape.beta.size() != gt_shape.beta.size() ||
      pred_pose.theta.rows() != gt_pose.theta.rows()) {
    throw std::invalid_argument("l_params: parameter size mismatch");
  }
  const double n = static_cast<double>(gt_shape.beta.size() + gt_pose.theta.size());
  if (n == 0.0) return 0.0;
  const double se_shape = (pred_shape.beta - gt_shape.beta).squaredNorm();
  const double se_pose = (pred_pose.theta - gt_pose.theta).squaredNorm();
  return (se_shape + se_pose) / n;
}

namespace detail {

// Masked mean absolute error per coordinate, shared by the 2D and 3D cases.
template <typename Pts>
double masked_l1(const Pts& pred, const Pts& gt, const VisibilityMask& vis) {
  if (pred.rows() != gt.rows()) throw std::invalid_argument("l_keypoints: K mismatch");
  if (vis.size() != static_cast<size_t>(gt.rows())) {
    throw std::invalid_argument("l_keypoints: mask length mismatch");
  }
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < gt.rows(); ++k) {
    if (!vis[static_cast<size_t>(k)]) continue;
    sum += (pred.row(k) - gt.row(k)).cwiseAbs().sum();
    n += static_cast<int>(gt.cols());
  }
  return n > 0 ? sum / n : 0.0;
}

}  // namespace detail

// L1 keypoint loss averaged over visible keypoints and coordinates. Invisible
// keypoints contribute nothing. All keypoints invisible: returns 0.
inline double l_keypoints(const Points2& pred, const Points2& gt, const VisibilityMask& vis) {
  return detail::masked_l1(pred, gt, vis);
}

inline double l_keypoints(const Points3& pred, const Points3& gt, const VisibilityMask& vis) {
  return detail::masked_l1(pred, gt, vis);
}

// Binary cross entropy with a soft target in [0, 1]. Inputs are clamped so a
// perfect confident prediction scores exactly zero and nothing diverges.
inline double l_conf(double confidence, double target) {
  constexpr double eps = 1e-7;
  const double c = std::clamp(confidence, 0.0, 1.0);
  const double t = std::clamp(target, 0.0, 1.0);
  double loss = 0.0;
  if (t > 0.0) loss += t * -std::log(std::max(c, eps));
  if (t < 1.0) loss += (1.0 - t) * -std::log(std::max(1.0 - c, eps));
  return loss;
}

struct DnNoiseConfig {
  int groups_per_gt = 2;
  double center_fraction = 0.1;  // center shift as a fraction of box size
  double size_fraction = 0.2;    // relative size rescale
};

struct DenoisingGroup {
  int source_gt = -1;
  BBox noised_bbox;
};

// Jittered copies of the ground-truth boxes, used as denoising queries. Each
// copy shifts the center by up to +/-center_fraction of the box dimensions and
// rescales width/height by up to +/-size_fraction, clamped back to the image.
inline std::vector<DenoisingGroup> build_denoising_groups(
    const std::vector<GroundTruthInstance>& gts, const DnNoiseConfig& cfg, Rng& rng) {
  if (cfg.groups_per_gt < 0) throw std::invalid_argument("denoising: negative group count");
  std::vector<DenoisingGroup> out;
  for (int g = 0; g < cfg.groups_per_gt; ++g) {
    for (size_t i = 0; i < gts.size(); ++i) {
      const BBox& src = gts[i].bbox;
      DenoisingGroup dn;
      dn.source_gt = static_cast<int>(i);
      BBox b;
      b.cx = src.cx + rng.uniform(-cfg.center_fraction, cfg.center_fraction) * src.w;
      b.cy = src.cy + rng.uniform(-cfg.center_fraction, cfg.center_fraction) * src.h;
      b.w = src.w * (1.0 + rng.uniform(-cfg.size_fraction, cfg.size_fraction));
      b.h = src.h * (1.0 + rng.uniform(-cfg.size_fraction, cfg.size_fraction));
      const double x0 = std::clamp(b.x_min(), 0.0, 1.0);
      const double x1 = std::clamp(b.x_max(), 0.0, 1.0);
      const double y0 = std::clamp(b.y_min(), 0.0, 1.0);
      const double y1 = std::clamp(b.y_max(), 0.0, 1.0);
      dn.noised_bbox = BBox::from_corners(x0, y0, x1, y1);
      out.push_back(dn);
    }
  }
  return out;
}

struct LossBreakdown {
  double params = 0.0;
  double kp2d = 0.0;
  double kp3d = 0.0;
  double box_coord = 0.0;
  double box_giou = 0.0;
  double conf = 0.0;
  double denoise = 0.0;
  double box_total = 0.0;  // box_coord + box_giou + conf + denoise
  double total = 0.0;      // weighted sum of the four top-level terms
};

// Full training objective over one scene, assuming predictions have already
// been matched and reordered to ground-truth order:
//   total = lp * params + l2 * kp2d + l3 * kp3d + lb * box_total
// where box_total internally sums the coordinate L1, the (1 - GIoU) term, the
// confidence BCE (soft IoU target for matched slots, zero target for the
// leftover slots), and the denoising-box term.
inline LossBreakdown total_loss(const std::vector<InstancePrediction>& matched,
                                const std::vector<GroundTruthInstance>& gts,
                                const std::vector<double>& unmatched_confidences,
                                const std::vector<DenoisingGroup>& dn_groups,
                                const LossWeights& weights = {}) {
  if (matched.size() != gts.size()) {
    throw std::invalid_argument("total_loss: matched/ground-truth count mismatch");
  }
  LossBreakdown out;
  const size_t m = gts.size();
  for (size_t i = 0; i < m; ++i) {
    const InstancePrediction& pred = matched[i];
    const GroundTruthInstance& gt = gts[i];
    if (gt.has_params()) {
      out.params += l_params(pred.shape, pred.pose, gt.shape, gt.pose);
    }
    out.kp2d += l_keypoints(pred.keypoints2d, gt.keypoints2d, gt.visibility);
    if (pred.keypoints3d.rows() > 0 && gt.keypoints3d.rows() > 0) {
      out.kp3d += l_keypoints(pred.keypoints3d, gt.keypoints3d, gt.visibility);
    }
    out.box_coord += std::abs(pred.bbox.cx - gt.bbox.cx) + std::abs(pred.bbox.cy - gt.bbox.cy) +
                     std::abs(pred.bbox.w - gt.bbox.w) + std::abs(pred.bbox.h - gt.bbox.h);
    out.box_giou += 1.0 - giou(pred.bbox, gt.bbox);
    out.conf += l_conf(pred.confidence, iou(pred.bbox, gt.bbox));
  }
  if (m > 0) {
    out.params /= static_cast<double>(m);
    out.kp2d /= static_cast<double>(m);
    out.kp3d /= static_cast<double>(m);
    out.box_coord /= static_cast<double>(m);
    out.box_giou /= static_cast<double>(m);
  }
  for (const double c : unmatched_confidences) out.conf += l_conf(c, 0.0);
  const size_t conf_count = m + unmatched_confidences.size();
  if (conf_count > 0) out.conf /= static_cast<double>(conf_count);

  for (const DenoisingGroup& dn : dn_groups) {
    if (dn.source_gt < 0 || dn.source_gt >= static_cast<int>(m)) {
      throw std::invalid_argument("total_loss: denoising group references missing ground truth");
    }
    const BBox& src = gts[static_cast<size_t>(dn.source_gt)].bbox;
    const BBox& b = dn.noised_bbox;
    out.denoise += std::abs(b.cx - src.cx) + std::abs(b.cy - src.cy) + std::abs(b.w - src.w) +
                   std::abs(b.h - src.h) + (1.0 - giou(b, src));
  }
  if (!dn_groups.empty()) out.denoise /= static_cast<double>(dn_groups.size());

  out.box_total = out.box_coord + out.box_giou + out.conf + out.denoise;
  out.total = weights.lambda_params * out.params + weights.lambda_2d * out.kp2d +
              weights.lambda_3d * out.kp3d + weights.lambda_box * out.box_total;
  return out;
}

}  // namespace menagerie
