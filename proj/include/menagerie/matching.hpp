#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "menagerie/body_model.hpp"
#include "menagerie/projection.hpp"
#include "menagerie/types.hpp"

namespace menagerie {

// One decoded instance slot. Keypoints are in normalized image coordinates
// (same space as the box) so all cost terms share a scale.
struct InstancePrediction {
  BBox bbox;
  double confidence = 0.0;
  Points2 keypoints2d;  // (K, 2) normalized
  Points3 keypoints3d;  // (K, 3) camera frame; may be empty
  ShapeParams shape;    // may be empty
  PoseParams pose;      // may be empty
  Vec3 translation = Vec3::Zero();
};

struct GroundTruthInstance {
  BBox bbox;
  Points2 keypoints2d;  // (K, 2) normalized
  VisibilityMask visibility;
  Points3 keypoints3d;  // may be empty
  ShapeParams shape;    // may be empty
  PoseParams pose;      // may be empty
  Vec3 translation = Vec3::Zero();

  bool has_params() const { return shape.beta.size() > 0 && pose.theta.rows() > 0; }
};

struct MatchWeights {
  double lambda_conf = 1.0;
  double lambda_bbox = 1.0;
  double lambda_giou = 1.0;
  double lambda_kpts = 10.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

// Overlap terms are computed from box corners throughout (including the
// per-box areas) so that identical boxes give exactly iou == giou == 1.
inline double iou(const BBox& a, const BBox& b) {
  if (!a.is_valid() || !b.is_valid()) throw std::invalid_argument("iou: invalid box");
  const double ix = std::max(0.0, std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min()));
  const double iy = std::max(0.0, std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min()));
  const double inter = ix * iy;
  const double area_a = (a.x_max() - a.x_min()) * (a.y_max() - a.y_min());
  const double area_b = (b.x_max() - b.x_min()) * (b.y_max() - b.y_min());
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;  // both boxes degenerate
  return inter / uni;
}

// IoU minus the fraction of the enclosing hull not covered by the union.
// Range (-1, 1]; equals IoU when one box contains the other.
inline double giou(const BBox& a, const BBox& b) {
  if (!a.is_valid() || !b.is_valid()) throw std::invalid_argument("giou: invalid box");
  const double ix = std::max(0.0, std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min()));
  const double iy = std::max(0.0, std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min()));
  const double inter = ix * iy;
  const double area_a = (a.x_max() - a.x_min()) * (a.y_max() - a.y_min());
  const double area_b = (b.x_max() - b.x_min()) * (b.y_max() - b.y_min());
  const double uni = area_a + area_b - inter;
  const double hull_w = std::max(a.x_max(), b.x_max()) - std::min(a.x_min(), b.x_min());
  const double hull_h = std::max(a.y_max(), b.y_max()) - std::min(a.y_min(), b.y_min());
  const double hull = hull_w * hull_h;
  if (hull <= 0.0) return uni > 0.0 ? inter / uni : 0.0;  // collinear degenerate layout
  const double iou_term = uni > 0.0 ? inter / uni : 0.0;
  // The hull covers the union, so the penalty is non-negative; clamp away the
  // rounding case (hull product landing a bit under the union sum) so that
  // giou <= iou holds exactly and containment gives exactly giou == iou.
  return iou_term - std::max(0.0, (hull - uni) / hull);
}

// Focal-weighted negative log confidence: alpha * (1 - c)^gamma * (-log c).
// Low cost for confident predictions; confidence is clamped away from 0 so
// the cost stays finite.
inline double focal_conf_cost(double confidence, double alpha = 0.25, double gamma = 2.0) {
  const double c = std::clamp(confidence, 1e-7, 1.0);
  return alpha * std::pow(1.0 - c, gamma) * (-std::log(c));
}

// Mean over visible keypoints of the per-keypoint L1 distance (|dx| + |dy|).
// No visible keypoints: contributes 0.
inline double keypoint_cost(const Points2& pred, const Points2& gt, const VisibilityMask& vis) {
  if (pred.rows() != gt.rows()) throw std::invalid_argument("keypoint_cost: K mismatch");
  if (vis.size() != static_cast<size_t>(gt.rows())) {
    throw std::invalid_argument("keypoint_cost: mask length mismatch");
  }
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < gt.rows(); ++k) {
    if (!vis[static_cast<size_t>(k)]) continue;
    sum += std::abs(pred(k, 0) - gt(k, 0)) + std::abs(pred(k, 1) - gt(k, 1));
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

struct CostBreakdown {
  double conf = 0.0;  // unweighted terms
  double bbox = 0.0;
  double giou = 0.0;
  double kpts = 0.0;
  double weighted_total = 0.0;
};

// Candidate pairing cost: weighted sum of the focal confidence cost, box L1
// (summed over cx, cy, w, h), negated generalized IoU, and the keypoint term.
inline CostBreakdown match_cost(const InstancePrediction& pred, const GroundTruthInstance& gt,
                                const MatchWeights& weights = {}) {
  CostBreakdown c;
  c.conf = focal_conf_cost(pred.confidence, weights.focal_alpha, weights.focal_gamma);
  c.bbox = std::abs(pred.bbox.cx - gt.bbox.cx) + std::abs(pred.bbox.cy - gt.bbox.cy) +
           std::abs(pred.bbox.w - gt.bbox.w) + std::abs(pred.bbox.h - gt.bbox.h);
  c.giou = -giou(pred.bbox, gt.bbox);
  c.kpts = keypoint_cost(pred.keypoints2d, gt.keypoints2d, gt.visibility);
  c.weighted_total = weights.lambda_conf * c.conf + weights.lambda_bbox * c.bbox +
                     weights.lambda_giou * c.giou + weights.lambda_kpts * c.kpts;
  return c;
}

inline MatX build_cost_matrix(const std::vector<InstancePrediction>& preds,
                              const std::vector<GroundTruthInstance>& gts,
                              const MatchWeights& weights = {}) {
  MatX cost(static_cast<int>(gts.size()), static_cast<int>(preds.size()));
  for (int i = 0; i < cost.rows(); ++i) {
    for (int p = 0; p < cost.cols(); ++p) {
      cost(i, p) = match_cost(preds[static_cast<size_t>(p)], gts[static_cast<size_t>(i)], weights)
                       .weighted_total;
    }
  }
  return cost;
}

namespace detail {

// Jonker-Volgenant style shortest augmenting path assignment for a
// rows <= cols cost matrix. Returns row -> column.
inline std::vector<int> solve_assignment(const MatX& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(m) + 1, 0);    // column -> row (1-based)
  std::vector<int> way(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<size_t>(m) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> result(static_cast<size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<size_t>(j)] > 0) result[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
  }
  return result;
}

inline double assignment_total(const MatX& cost, const std::vector<int>& a) {
  double t = 0.0;
  for (int i = 0; i < cost.rows(); ++i) t += cost(i, a[static_cast<size_t>(i)]);
  return t;
}

}  // namespace detail

// Minimum-cost injection of rows (ground truths) into columns (predictions).
// Among cost-minimal assignments, returns the lexicographically smallest
// column sequence: a second pass tries, row by row, every smaller column and
// keeps it when an optimal completion still exists at no extra total cost.
inline std::vector<int> hungarian(const MatX& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw std::invalid_argument("hungarian: more rows than columns");
  if (n == 0) return {};
  std::vector<int> best = detail::solve_assignment(cost);
  double best_total = detail::assignment_total(cost, best);

  std::vector<char> in_prefix(static_cast<size_t>(m), 0);
  for (int i = 0; i < n; ++i) {
    for (int col = 0; col < best[static_cast<size_t>(i)]; ++col) {
      if (in_prefix[static_cast<size_t>(col)]) continue;
      // Complete rows i+1.. over the columns outside prefix + {col}.
      std::vector<int> free_cols;
      for (int j = 0; j < m; ++j) {
        if (!in_prefix[static_cast<size_t>(j)] && j != col) free_cols.push_back(j);
      }
      const int rest = n - i - 1;
      std::vector<int> candidate(best.begin(), best.begin() + i);
      candidate.push_back(col);
      if (rest > 0) {
        MatX sub(rest, static_cast<int>(free_cols.size()));
        for (int r = 0; r < rest; ++r) {
          for (size_t j = 0; j < free_cols.size(); ++j) {
            sub(r, static_cast<int>(j)) = cost(i + 1 + r, free_cols[j]);
          }
        }
        const std::vector<int> completion = detail::solve_assignment(sub);
        for (int r = 0; r < rest; ++r) {
          candidate.push_back(free_cols[static_cast<size_t>(completion[static_cast<size_t>(r)])]);
        }
      }
      const double total = detail::assignment_total(cost, candidate);
      if (total <= best_total) {
        best = candidate;
        best_total = total;
        break;  // row i now uses the smallest feasible column
      }
    }
    in_prefix[static_cast<size_t>(best[static_cast<size_t>(i)])] = 1;
  }
  return best;
}

// Exact minimum injection cost via subset dynamic programming over rows.
// Exponential in the row count; used to cross-check the assignment solver.
// The returned total accumulates pair costs in column order, so it can differ
// from a row-order summation of the same assignment by rounding ulps; compare
// against solver totals with a small tolerance, not bit equality.
inline double min_injection_cost_exhaustive(const MatX& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw std::invalid_argument("min_injection_cost_exhaustive: more rows than columns");
  if (n > 22) throw std::invalid_argument("min_injection_cost_exhaustive: too many rows");
  if (n == 0) return 0.0;
  const double inf = std::numeric_limits<double>::infinity();
  const std::uint32_t full = (1u << n) - 1u;
  std::vector<double> dp(static_cast<size_t>(full) + 1, inf);
  dp[0] = 0.0;
  for (int col = 0; col < m; ++col) {
    std::vector<double> next = dp;
    for (std::uint32_t s = 0; s <= full; ++s) {
      if (dp[s] == inf) continue;
      for (int row = 0; row < n; ++row) {
        if (s & (1u << row)) continue;
        const std::uint32_t t = s | (1u << row);
        const double c = dp[s] + cost(row, col);
        if (c < next[t]) next[t] = c;
      }
    }
    dp.swap(next);
  }
  return dp[full];
}

struct MatchResult {
  std::vector<int> assignment;            // ground truth i -> prediction index
  std::vector<CostBreakdown> pair_costs;  // per matched pair, ground-truth order
  double total_cost = 0.0;
  std::vector<InstancePrediction> matched;  // predictions reordered to gt order
  std::vector<int> unmatched;               // prediction indices left unassigned
};

// Builds the cost matrix, solves the assignment, and reorders predictions to
// ground-truth order. Requires at least as many predictions as ground truths.
inline MatchResult match_and_reorder(const std::vector<InstancePrediction>& preds,
                                     const std::vector<GroundTruthInstance>& gts,
                                     const MatchWeights& weights = {}) {
  if (gts.size() > preds.size()) {
    throw std::invalid_argument("match_and_reorder: more ground truths than predictions");
  }
  MatchResult out;
  const MatX cost = build_cost_matrix(preds, gts, weights);
  out.assignment = hungarian(cost);
  std::vector<char> taken(preds.size(), 0);
  for (size_t i = 0; i < gts.size(); ++i) {
    const int p = out.assignment[i];
    taken[static_cast<size_t>(p)] = 1;
    out.matched.push_back(preds[static_cast<size_t>(p)]);
    out.pair_costs.push_back(match_cost(preds[static_cast<size_t>(p)], gts[i], weights));
    out.total_cost += out.pair_costs.back().weighted_total;
  }
  for (size_t p = 0; p < preds.size(); ++p) {
    if (!taken[p]) out.unmatched.push_back(static_cast<int>(p));
  }
  return out;
}

}  // namespace menagerie
