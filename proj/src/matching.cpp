#include "ccf/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ccf {

namespace {

struct JvOut {
  std::vector<int> row_to_col;
  std::vector<double> u, v;  // potentials, 0-indexed
  double total = 0.0;
};

// Kuhn-Munkres with potentials for rows <= cols; every row ends up assigned.
JvOut jv_rect(const Mat& a) {
  const int n = int(a.rows()), m = int(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  JvOut out;
  out.row_to_col.assign(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) out.row_to_col[p[j] - 1] = j - 1;
  out.u.assign(n, 0.0);
  out.v.assign(m, 0.0);
  for (int i = 1; i <= n; ++i) out.u[i - 1] = u[i];
  for (int j = 1; j <= m; ++j) out.v[j - 1] = v[j];
  for (int i = 0; i < n; ++i) out.total += a(i, out.row_to_col[i]);
  return out;
}

struct SubSolve {
  double total = 0.0;
  std::vector<std::pair<int, int>> pairs;  // original (row, col) indices
};

// Optimal matching of all of the smaller side among the given rows/cols.
SubSolve solve_sub(const Mat& a, const std::vector<int>& rows,
                   const std::vector<int>& cols) {
  SubSolve out;
  if (rows.empty() || cols.empty()) return out;
  const bool flip = rows.size() > cols.size();
  const auto& rr = flip ? cols : rows;
  const auto& cc = flip ? rows : cols;
  Mat sub(rr.size(), cc.size());
  for (std::size_t i = 0; i < rr.size(); ++i)
    for (std::size_t j = 0; j < cc.size(); ++j)
      sub(i, j) = flip ? a(cc[j], rr[i]) : a(rr[i], cc[j]);
  const JvOut jv = jv_rect(sub);
  out.total = jv.total;
  for (std::size_t i = 0; i < rr.size(); ++i) {
    const int j = jv.row_to_col[i];
    if (flip)
      out.pairs.emplace_back(cc[j], rr[i]);
    else
      out.pairs.emplace_back(rr[i], cc[j]);
  }
  return out;
}

}  // namespace

MatchResult hungarian(const CostMatrix& costs) {
  const int n = int(costs.rows()), m = int(costs.cols());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const double c = costs(i, j);
      if (!std::isfinite(c))
        throw std::invalid_argument("hungarian: non-finite cost");
      if (std::abs(c) > kMaxMatchCost)
        throw std::invalid_argument("hungarian: cost exceeds allowed bound");
    }

  MatchResult res;
  if (n == 0 || m == 0) {
    for (int q = 0; q < n; ++q) res.unmatched_queries.push_back(q);
    return res;
  }

  // Pad to square with a large constant; real pairs always dominate because
  // |cost| <= kMaxMatchCost << kPadCost.
  const int big = std::max(n, m);
  Mat padded = Mat::Constant(big, big, kPadCost);
  padded.topLeftCorner(n, m) = costs;
  const JvOut jv = jv_rect(padded);

  std::vector<int> q2g(n, -1);
  for (int i = 0; i < n; ++i)
    if (jv.row_to_col[i] < m) q2g[i] = jv.row_to_col[i];

  double total = 0.0;
  for (int q = 0; q < n; ++q)
    if (q2g[q] >= 0) total += costs(q, q2g[q]);

  // Lexicographic refinement. Complementary slackness filters candidates:
  // only zero-reduced-cost pairs can appear in an optimal solution, so with
  // a unique optimum this fixes the existing pairs without extra solves.
  const double tol_rc = 1e-6;
  const double tol_total = 1e-9 * (1.0 + std::abs(total));
  const int want = std::min(n, m);
  std::vector<char> col_used(m, 0);
  double fixed_cost = 0.0;
  int fixed_cnt = 0;
  for (int q = 0; q < n && fixed_cnt < want; ++q) {
    const int cur = q2g[q];
    int chosen = -1;
    for (int g = 0; g < m; ++g) {
      if (col_used[g]) continue;
      if (g == cur) {
        chosen = g;  // feasible by construction
        break;
      }
      const double rc = costs(q, g) - jv.u[q] - jv.v[g];
      if (rc > tol_rc) continue;
      std::vector<int> rows_rem, cols_rem;
      for (int r = q + 1; r < n; ++r) rows_rem.push_back(r);
      for (int c = 0; c < m; ++c)
        if (!col_used[c] && c != g) cols_rem.push_back(c);
      const SubSolve sub = solve_sub(costs, rows_rem, cols_rem);
      const double candidate = fixed_cost + costs(q, g) + sub.total;
      if (std::abs(candidate - total) <= tol_total) {
        chosen = g;
        for (int r = q + 1; r < n; ++r) q2g[r] = -1;
        for (const auto& [r, c] : sub.pairs) q2g[r] = c;
        break;
      }
    }
    if (chosen >= 0) {
      q2g[q] = chosen;
      col_used[chosen] = 1;
      fixed_cost += costs(q, chosen);
      ++fixed_cnt;
    } else {
      q2g[q] = -1;
    }
  }

  res.total_cost = 0.0;
  for (int q = 0; q < n; ++q) {
    if (q2g[q] >= 0) {
      res.pairs.push_back({q, q2g[q], costs(q, q2g[q])});
      res.total_cost += costs(q, q2g[q]);
    } else {
      res.unmatched_queries.push_back(q);
    }
  }
  return res;
}

Eigen::Matrix<double, 7, 1> normalized_box_params(const Box3D& box,
                                                  double radius) {
  if (!(radius > 0))
    throw std::invalid_argument("normalized_box_params: radius <= 0");
  Eigen::Matrix<double, 7, 1> p;
  p.segment<3>(0) = box.center / radius;
  p.segment<3>(3) = box.size / radius;
  p(6) = wrap_angle(box.yaw) / M_PI;
  return p;
}

double box_l1(const Box3D& a, const Box3D& b, double radius) {
  if (!(radius > 0)) throw std::invalid_argument("box_l1: radius <= 0");
  double s = 0.0;
  for (int d = 0; d < 3; ++d) {
    s += std::abs(a.center(d) - b.center(d)) / radius;
    s += std::abs(a.size(d) - b.size(d)) / radius;
  }
  s += std::abs(wrap_angle(a.yaw - b.yaw)) / M_PI;
  return s;
}

double focal_cost(const Eigen::VectorXd& logits, int target_class,
                  const MatchWeights& w) {
  if (target_class < 0 || target_class >= logits.size())
    throw std::invalid_argument("focal_cost: target class out of range");
  if (!logits.allFinite())
    throw std::invalid_argument("focal_cost: non-finite logits");
  const Eigen::VectorXd z = logits.array() - logits.maxCoeff();
  const Eigen::VectorXd e = z.array().exp();
  const double pt = e(target_class) / e.sum();
  return w.focal_alpha * std::pow(1.0 - pt, w.focal_gamma) *
         (-std::log(std::max(pt, 1e-12)));
}

double match_cost(const Eigen::VectorXd& logits, const Box3D& pred_box,
                  const Box3D& gt, const MatchWeights& w) {
  return w.cls * focal_cost(logits, gt.class_id, w) +
         w.box * box_l1(pred_box, gt, w.scene_radius);
}

MatchResult assign_queries(const std::vector<QueryPrediction>& preds,
                           const std::vector<Box3D>& gts,
                           const MatchWeights& w) {
  CostMatrix costs(preds.size(), gts.size());
  for (std::size_t q = 0; q < preds.size(); ++q)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      // Decoded boxes can wander arbitrarily far mid-training; clamping keeps
      // the cost matrix inside the solver's contract while such pairs still
      // lose to any plausible one.
      const double c =
          match_cost(preds[q].class_logits, preds[q].box, gts[g], w);
      costs(q, g) = std::min(c, kMaxMatchCost);
    }
  return hungarian(costs);
}

SupervisionStats supervision_stats(const std::vector<SampleMatch>& samples) {
  SupervisionStats st;
  if (samples.empty()) {
    st.ratio = std::numeric_limits<double>::infinity();
    return st;
  }
  double sum2d = 0.0, sum3d = 0.0;
  for (const auto& s : samples) {
    for (const auto& p : s.match.pairs) {
      if (p.query < 0 || std::size_t(p.query) >= s.origins.size())
        throw std::invalid_argument("supervision_stats: origin list too short");
      if (s.origins[p.query] == QueryOrigin::From2D)
        sum2d += 1.0;
      else
        sum3d += 1.0;
    }
  }
  st.mean_matched_2d = sum2d / double(samples.size());
  st.mean_matched_3d = sum3d / double(samples.size());
  st.ratio = st.mean_matched_2d > 0
                 ? st.mean_matched_3d / st.mean_matched_2d
                 : std::numeric_limits<double>::infinity();
  return st;
}

}  // namespace ccf
