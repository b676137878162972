#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>
#include <tuple>
#include <vector>

#include "menagerie/projection.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Points3 apply(const Points3& pts) const {
    Points3 out = scale * (pts * rotation.transpose());
    out.rowwise() += translation.transpose();
    return out;
  }
};

// Least-squares similarity (scale, rotation, translation) mapping source onto
// target. Closed form via SVD of the cross covariance, with the determinant
// sign fix so the rotation is proper. Degenerate clouds (fewer than 3 points,
// or rank < 2 cross covariance) return nullopt.
inline std::optional<SimilarityTransform> procrustes_align(const Points3& source,
                                                           const Points3& target) {
  const int n = static_cast<int>(source.rows());
  if (n != target.rows()) throw std::invalid_argument("procrustes_align: point count mismatch");
  if (n < 3) return std::nullopt;
  const Vec3 mu_s = source.colwise().mean().transpose();
  const Vec3 mu_t = target.colwise().mean().transpose();
  const Points3 xs = source.rowwise() - mu_s.transpose();
  const Points3 xt = target.rowwise() - mu_t.transpose();
  const double var_s = xs.squaredNorm() / n;
  if (var_s <= 0.0) return std::nullopt;
  const Mat3 cov = (xt.transpose() * xs) / n;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  if (d(1) <= 1e-12 * std::max(d(0), 1e-300)) return std::nullopt;
  Vec3 s(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
  SimilarityTransform t;
  t.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  t.scale = d.dot(s) / var_s;
  t.translation = mu_t - t.scale * t.rotation * mu_s;
  return t;
}

// Mean joint error after the optimal similarity alignment of pred onto gt.
inline std::optional<double> pa_mpjpe(const Points3& pred, const Points3& gt) {
  const auto t = procrustes_align(pred, gt);
  if (!t) return std::nullopt;
  const Points3 aligned = t->apply(pred);
  return (aligned - gt).rowwise().norm().mean();
}

struct EvalConfig {
  double pck_threshold = 0.1;
  enum class PckNormalizer { kBBoxMaxSide, kBBoxDiagonal };
  PckNormalizer pck_normalizer = PckNormalizer::kBBoxMaxSide;
  VecX oks_sigmas;  // per-keypoint; empty means uniform 0.05
  std::vector<double> ap_thresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                       0.75, 0.80, 0.85, 0.90, 0.95};
};

// Fraction of visible keypoints whose pixel error falls below
// threshold * normalizer, where the normalizer is derived from the
// ground-truth box in pixels. No visible keypoints: nullopt.
inline std::optional<double> pck(const Points2& pred_px, const Points2& gt_px,
                                 const VisibilityMask& vis, const BBox& gt_bbox,
                                 const PerspectiveCamera& camera, const EvalConfig& cfg = {}) {
  if (pred_px.rows() != gt_px.rows()) throw std::invalid_argument("pck: K mismatch");
  if (vis.size() != static_cast<size_t>(gt_px.rows())) {
    throw std::invalid_argument("pck: mask length mismatch");
  }
  const double bw = gt_bbox.w * camera.image_width;
  const double bh = gt_bbox.h * camera.image_height;
  const double norm = cfg.pck_normalizer == EvalConfig::PckNormalizer::kBBoxMaxSide
                          ? std::max(bw, bh)
                          : std::hypot(bw, bh);
  if (!(norm > 0.0)) throw std::invalid_argument("pck: degenerate ground-truth box");
  int hits = 0, total = 0;
  for (int k = 0; k < gt_px.rows(); ++k) {
    if (!vis[static_cast<size_t>(k)]) continue;
    ++total;
    if ((pred_px.row(k) - gt_px.row(k)).norm() < cfg.pck_threshold * norm) ++hits;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / total;
}

// Keypoint similarity: mean over visible keypoints of
// exp(-d^2 / (2 * area * sigma_k^2)), d in pixels, area in square pixels.
// 1 for a perfect prediction, 0 when nothing is visible.
inline double oks(const Points2& pred_px, const Points2& gt_px, const VisibilityMask& vis,
                  double gt_area_px2, const VecX& sigmas = VecX()) {
  if (pred_px.rows() != gt_px.rows()) throw std::invalid_argument("oks: K mismatch");
  if (vis.size() != static_cast<size_t>(gt_px.rows())) {
    throw std::invalid_argument("oks: mask length mismatch");
  }
  if (!(gt_area_px2 > 0.0)) throw std::invalid_argument("oks: area must be positive");
  if (sigmas.size() != 0 && sigmas.size() != gt_px.rows()) {
    throw std::invalid_argument("oks: sigma count mismatch");
  }
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < gt_px.rows(); ++k) {
    if (!vis[static_cast<size_t>(k)]) continue;
    const double sigma = sigmas.size() ? sigmas(k) : 0.05;
    const double d2 = (pred_px.row(k) - gt_px.row(k)).squaredNorm();
    sum += std::exp(-d2 / (2.0 * gt_area_px2 * sigma * sigma));
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

// Inputs for keypoint-similarity average precision, already in pixel space.
struct ApPrediction {
  Points2 keypoints_px;
  double confidence = 0.0;
};

struct ApGroundTruth {
  Points2 keypoints_px;
  VisibilityMask visibility;
  double area_px2 = 0.0;
  bool ignore = false;  // excluded from recall; suppresses detections it matches
};

struct ApScene {
  std::vector<ApPrediction> predictions;
  std::vector<ApGroundTruth> ground_truths;
};

struct ApResult {
  std::vector<double> ap_per_threshold;
  double map = 0.0;
};

namespace detail {

struct ScoredDetection {
  double confidence;
  int scene;
  int index;
  bool is_tp;
  bool ignored;
};

}  // namespace detail

// COCO-style average precision over similarity thresholds. Greedy matching in
// confidence order (ties by scene then slot index); each ground truth is
// consumed by at most one detection; all-point precision interpolation.
// Returns nullopt when the corpus has no countable ground truths.
inline std::optional<ApResult> average_precision(const std::vector<ApScene>& scenes,
                                                 const EvalConfig& cfg = {}) {
  int n_pos = 0;
  for (const ApScene& s : scenes) {
    for (const ApGroundTruth& g : s.ground_truths) {
      if (!g.ignore) ++n_pos;
    }
  }
  if (n_pos == 0) return std::nullopt;

  ApResult out;
  for (const double thr : cfg.ap_thresholds) {
    std::vector<detail::ScoredDetection> dets;
    for (int si = 0; si < static_cast<int>(scenes.size()); ++si) {
      const ApScene& scene = scenes[static_cast<size_t>(si)];
      std::vector<int> order(scene.predictions.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scene.predictions[static_cast<size_t>(a)].confidence >
               scene.predictions[static_cast<size_t>(b)].confidence;
      });
      std::vector<char> gt_taken(scene.ground_truths.size(), 0);
      for (const int pi : order) {
        const ApPrediction& p = scene.predictions[static_cast<size_t>(pi)];
        int best_gt = -1;
        double best_oks = -1.0;
        for (int gi = 0; gi < static_cast<int>(scene.ground_truths.size()); ++gi) {
          const ApGroundTruth& g = scene.ground_truths[static_cast<size_t>(gi)];
          if (g.ignore || gt_taken[static_cast<size_t>(gi)]) continue;
          const double s = oks(p.keypoints_px, g.keypoints_px, g.visibility, g.area_px2,
                               cfg.oks_sigmas);
          if (s > best_oks) {
            best_oks = s;
            best_gt = gi;
          }
        }
        detail::ScoredDetection d{p.confidence, si, pi, false, false};
        if (best_gt >= 0 && best_oks >= thr) {
          gt_taken[static_cast<size_t>(best_gt)] = 1;
          d.is_tp = true;
        } else {
          // Unmatched: drop the detection if an ignore region explains it.
          for (const ApGroundTruth& g : scene.ground_truths) {
            if (!g.ignore) continue;
            if (oks(p.keypoints_px, g.keypoints_px, g.visibility, g.area_px2, cfg.oks_sigmas) >=
                thr) {
              d.ignored = true;
              break;
            }
          }
        }
        if (!d.ignored) dets.push_back(d);
      }
    }
    std::sort(dets.begin(), dets.end(),
              [](const detail::ScoredDetection& a, const detail::ScoredDetection& b) {
                if (a.confidence != b.confidence) return a.confidence > b.confidence;
                if (a.scene != b.scene) return a.scene < b.scene;
                return a.index < b.index;
              });
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const detail::ScoredDetection& d : dets) {
      d.is_tp ? ++tp : ++fp;
      precision.push_back(static_cast<double>(tp) / (tp + fp));
      recall.push_back(static_cast<double>(tp) / n_pos);
    }
    // All-point interpolation: integrate the running-max precision envelope.
    std::vector<double> envelope = precision;
    for (int i = static_cast<int>(envelope.size()) - 2; i >= 0; --i) {
      envelope[static_cast<size_t>(i)] =
          std::max(envelope[static_cast<size_t>(i)], envelope[static_cast<size_t>(i) + 1]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < envelope.size(); ++i) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
    out.ap_per_threshold.push_back(ap);
  }
  double sum = 0.0;
  for (const double ap : out.ap_per_threshold) sum += ap;
  out.map = out.ap_per_threshold.empty() ? 0.0 : sum / out.ap_per_threshold.size();
  return out;
}

}  // namespace menagerie
