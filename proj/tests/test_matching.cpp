#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;

#include <cmath>
#include <vector>

#include "menagerie/matching.hpp"
#include "menagerie/rng.hpp"

using namespace menagerie;

namespace {

// Independent oracle: enumerate every injection of rows into columns and keep
// the cheapest, summing in row order (the same order the solver reports).
void enumerate_rec(const MatX& cost, int row, std::vector<int>& cols_used,
                   std::vector<int>& current, double acc, double& best,
                   std::vector<int>& best_assign) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (row == n) {
    if (acc < best) {
      best = acc;
      best_assign = current;
    }
    return;
  }
  for (int c = 0; c < m; ++c) {
    if (cols_used[static_cast<size_t>(c)]) continue;
    cols_used[static_cast<size_t>(c)] = 1;
    current[static_cast<size_t>(row)] = c;
    enumerate_rec(cost, row + 1, cols_used, current, acc + cost(row, c), best, best_assign);
    cols_used[static_cast<size_t>(c)] = 0;
  }
}

double enumerate_min(const MatX& cost, std::vector<int>* assign = nullptr) {
  std::vector<int> used(static_cast<size_t>(cost.cols()), 0);
  std::vector<int> cur(static_cast<size_t>(cost.rows()), -1);
  std::vector<int> best_assign;
  double best = std::numeric_limits<double>::infinity();
  enumerate_rec(cost, 0, used, cur, 0.0, best, best_assign);
  if (assign) *assign = best_assign;
  return best;
}

InstancePrediction random_pred(Rng& rng, int k) {
  InstancePrediction p;
  p.bbox = BBox{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4),
                rng.uniform(0.05, 0.4)};
  p.confidence = rng.uniform(0.01, 0.99);
  p.keypoints2d.resize(k, 2);
  for (int i = 0; i < k; ++i) p.keypoints2d.row(i) << rng.uniform(), rng.uniform();
  return p;
}

GroundTruthInstance random_gt(Rng& rng, int k) {
  GroundTruthInstance g;
  g.bbox = BBox{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4),
                rng.uniform(0.05, 0.4)};
  g.keypoints2d.resize(k, 2);
  g.visibility.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    g.keypoints2d.row(i) << rng.uniform(), rng.uniform();
    g.visibility[static_cast<size_t>(i)] = rng.uniform() < 0.8 ? 1 : 0;
  }
  return g;
}

}  // namespace

TEST_CASE("overlap of a box with itself is exactly one") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const BBox b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.01, 0.4),
                 rng.uniform(0.01, 0.4)};
    REQUIRE(iou(b, b) == 1.0);
    REQUIRE(giou(b, b) == 1.0);
  }
}

TEST_CASE("overlap terms match hand-computed cases") {
  // Two unit-side squares (in normalized units, 0.5 side), offset by half a side.
  const BBox a = BBox::from_corners(0.0, 0.0, 0.5, 0.5);
  const BBox b = BBox::from_corners(0.25, 0.0, 0.75, 0.5);
  // inter = 0.25*0.5 = 0.125, union = 0.25+0.25-0.125 = 0.375 -> 1/3.
  REQUIRE(iou(a, b) == Approx(1.0 / 3.0).margin(1e-12));
  // hull = 0.75*0.5 = 0.375 == union -> no penalty.
  REQUIRE(giou(a, b) == Approx(1.0 / 3.0).margin(1e-12));

  // Disjoint boxes: areas 0.0625 each, union 0.125, hull 1.0*0.25 = 0.25,
  // so giou = 0 - (0.25 - 0.125)/0.25 = -0.5.
  const BBox c = BBox::from_corners(0.0, 0.0, 0.25, 0.25);
  const BBox d = BBox::from_corners(0.75, 0.0, 1.0, 0.25);
  REQUIRE(iou(c, d) == 0.0);
  REQUIRE(giou(c, d) == Approx(-0.5).margin(1e-12));

  // One box inside another: iou = small/large, hull = large -> giou == iou.
  const BBox outer = BBox::from_corners(0.1, 0.1, 0.9, 0.9);
  const BBox inner = BBox::from_corners(0.3, 0.3, 0.5, 0.5);
  const double ratio = (0.2 * 0.2) / (0.8 * 0.8);
  REQUIRE(iou(outer, inner) == Approx(ratio).margin(1e-12));
  REQUIRE(giou(outer, inner) == Approx(ratio).margin(1e-12));
}

TEST_CASE("generalized overlap stays within its documented range") {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const BBox a{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.01, 0.6),
                 rng.uniform(0.01, 0.6)};
    const BBox b{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.01, 0.6),
                 rng.uniform(0.01, 0.6)};
    const double g = giou(a, b);
    REQUIRE(g > -1.0);
    REQUIRE(g <= 1.0);
    REQUIRE(g <= iou(a, b));
  }
}

TEST_CASE("confidence cost matches the closed form at one half") {
  // alpha * (1-c)^gamma * (-log c) at c=0.5 with defaults (0.25, 2).
  REQUIRE(std::abs(focal_conf_cost(0.5) - 0.25 * 0.25 * std::log(2.0)) < 1e-12);
  // Monotone: higher confidence costs less.
  double prev = focal_conf_cost(0.05);
  for (double c = 0.1; c < 1.0; c += 0.05) {
    const double cur = focal_conf_cost(c);
    REQUIRE(cur < prev);
    prev = cur;
  }
  REQUIRE(focal_conf_cost(1.0) == 0.0);
}

TEST_CASE("default match weights are the documented constants") {
  const MatchWeights w;
  REQUIRE(w.lambda_conf == 1.0);
  REQUIRE(w.lambda_bbox == 1.0);
  REQUIRE(w.lambda_giou == 1.0);
  REQUIRE(w.lambda_kpts == 10.0);
  REQUIRE(w.focal_alpha == 0.25);
  REQUIRE(w.focal_gamma == 2.0);
}

TEST_CASE("keypoint cost averages city-block error over visible points only") {
  Points2 pred(3, 2), gt(3, 2);
  pred << 0.1, 0.2, 0.5, 0.5, 0.9, 0.9;
  gt << 0.2, 0.4, 0.5, 0.5, 0.0, 0.0;
  const VisibilityMask vis = {1, 1, 0};
  // Visible pairs: |0.1|+|0.2| = 0.3 and 0 -> mean 0.15.
  REQUIRE(keypoint_cost(pred, gt, vis) == Approx(0.15).margin(1e-12));
  const VisibilityMask none = {0, 0, 0};
  REQUIRE(keypoint_cost(pred, gt, none) == 0.0);
}

TEST_CASE("pairwise cost combines the four weighted terms") {
  Rng rng(3);
  const InstancePrediction p = random_pred(rng, 5);
  const GroundTruthInstance g = random_gt(rng, 5);
  MatchWeights w;
  w.lambda_conf = 2.0;
  w.lambda_bbox = 3.0;
  w.lambda_giou = 0.5;
  w.lambda_kpts = 7.0;
  const CostBreakdown c = match_cost(p, g, w);
  const double box_l1 = std::abs(p.bbox.cx - g.bbox.cx) + std::abs(p.bbox.cy - g.bbox.cy) +
                        std::abs(p.bbox.w - g.bbox.w) + std::abs(p.bbox.h - g.bbox.h);
  REQUIRE(c.conf == Approx(focal_conf_cost(p.confidence, w.focal_alpha, w.focal_gamma))
                        .margin(1e-12));
  REQUIRE(c.bbox == Approx(box_l1).margin(1e-12));
  REQUIRE(c.giou == Approx(-giou(p.bbox, g.bbox)).margin(1e-12));
  REQUIRE(c.kpts == Approx(keypoint_cost(p.keypoints2d, g.keypoints2d, g.visibility))
                        .margin(1e-12));
  REQUIRE(c.weighted_total ==
          Approx(2.0 * c.conf + 3.0 * c.bbox + 0.5 * c.giou + 7.0 * c.kpts).margin(1e-12));
}

TEST_CASE("assignment solver equals exhaustive enumeration on random matrices") {
  Rng rng(4);
  for (int trial = 0; trial < 400; ++trial) {
    const int n = rng.uniform_int(1, 6);
    const int m = rng.uniform_int(n, 7);
    MatX cost(n, m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) cost(i, j) = rng.uniform(-2.0, 5.0);
    }
    const std::vector<int> assign = detail::solve_assignment(cost);
    const double got = detail::assignment_total(cost, assign);
    const double want = enumerate_min(cost);
    REQUIRE(got == want);
  }
}

TEST_CASE("assignment solver handles structured and degenerate matrices") {
  // All-equal costs: any assignment is optimal; the solver must still be injective.
  MatX flat = MatX::Constant(3, 5, 1.25);
  const std::vector<int> a = detail::solve_assignment(flat);
  REQUIRE(detail::assignment_total(flat, a) == enumerate_min(flat));
  std::vector<bool> seen(5, false);
  for (const int c : a) {
    REQUIRE(c >= 0);
    REQUIRE(c < 5);
    REQUIRE_FALSE(seen[static_cast<size_t>(c)]);
    seen[static_cast<size_t>(c)] = true;
  }

  // Adversarial ties in every row.
  MatX ties(4, 4);
  ties << 1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 1, 1, 3, 3, 1, 1;
  REQUIRE(detail::assignment_total(ties, detail::solve_assignment(ties)) ==
          enumerate_min(ties));

  // Single cell.
  MatX one(1, 1);
  one << -4.5;
  REQUIRE(detail::solve_assignment(one) == std::vector<int>{0});
}

TEST_CASE("full matcher equals enumeration on random prediction sets") {
  Rng rng(5);
  for (int trial = 0; trial < 120; ++trial) {
    const int m = rng.uniform_int(1, 5);
    const int p = rng.uniform_int(m, 7);
    std::vector<InstancePrediction> preds;
    std::vector<GroundTruthInstance> gts;
    for (int i = 0; i < p; ++i) preds.push_back(random_pred(rng, 4));
    for (int i = 0; i < m; ++i) gts.push_back(random_gt(rng, 4));
    const MatX cost = build_cost_matrix(preds, gts, MatchWeights{});
    const MatchResult res = match_and_reorder(preds, gts);
    REQUIRE(res.total_cost == enumerate_min(cost));
    // The subset-DP verifier accumulates pair costs in column order, so it
    // agrees with the row-order solver total only up to rounding.
    REQUIRE(res.total_cost == Approx(min_injection_cost_exhaustive(cost)).margin(1e-9));
    // Reordering returns the assigned prediction per ground truth.
    for (int i = 0; i < m; ++i) {
      const InstancePrediction& chosen = preds[static_cast<size_t>(res.assignment[i])];
      REQUIRE(res.matched[static_cast<size_t>(i)].confidence == chosen.confidence);
      REQUIRE(res.matched[static_cast<size_t>(i)].bbox.cx == chosen.bbox.cx);
    }
    // Unmatched = complement of the assignment.
    REQUIRE(res.unmatched.size() == static_cast<size_t>(p - m));
    for (const int u : res.unmatched) {
      for (int i = 0; i < m; ++i) REQUIRE(res.assignment[static_cast<size_t>(i)] != u);
    }
  }
}

TEST_CASE("matcher requires at least as many predictions as ground truths") {
  Rng rng(6);
  std::vector<InstancePrediction> preds = {random_pred(rng, 4)};
  std::vector<GroundTruthInstance> gts = {random_gt(rng, 4), random_gt(rng, 4)};
  REQUIRE_THROWS_AS(match_and_reorder(preds, gts), std::invalid_argument);
}

TEST_CASE("tie-broken assignments are deterministic across repeated solves") {
  MatX flat = MatX::Constant(3, 4, 2.0);
  const std::vector<int> first = detail::solve_assignment(flat);
  for (int i = 0; i < 10; ++i) {
    REQUIRE(detail::solve_assignment(flat) == first);
  }
}

TEST_CASE("exhaustive verifier rejects oversized problems") {
  REQUIRE_THROWS_AS(min_injection_cost_exhaustive(MatX::Zero(3, 2)), std::invalid_argument);
  REQUIRE_THROWS_AS(min_injection_cost_exhaustive(MatX::Zero(23, 30)), std::invalid_argument);
}
