#pragma once

// Evaluation metrics: Chamfer distances, joint axis errors with optimal matching, and
// image PSNR / SSIM.

#include "artikin/articulate.hpp"
#include "artikin/core.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>

namespace artikin::metrics {

/// Static kd-tree over 3D points for exact nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> pts) : pts_(pts.begin(), pts.end()), idx_(pts.size()) {
    std::iota(idx_.begin(), idx_.end(), 0);
    if (!idx_.empty()) build(0, idx_.size(), 0);
  }

  /// Euclidean distance to the nearest stored point.
  double nearest(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    if (!idx_.empty()) search(0, idx_.size(), 0, q, best);
    return std::sqrt(best);
  }

 private:
  void build(std::size_t lo, std::size_t hi, int depth) {
    if (hi - lo <= 1) return;
    const std::size_t mid = (lo + hi) / 2;
    const int ax = depth % 3;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](std::size_t a, std::size_t b) { return pts_[a][ax] < pts_[b][ax]; });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  void search(std::size_t lo, std::size_t hi, int depth, const Vec3& q, double& best) const {
    if (lo >= hi) return;
    const std::size_t mid = (lo + hi) / 2;
    const Vec3& p = pts_[idx_[mid]];
    best = std::min(best, (p - q).squaredNorm());
    const int ax = depth % 3;
    const double diff = q[ax] - p[ax];
    const bool left_first = diff < 0;
    search(left_first ? lo : mid + 1, left_first ? mid : hi, depth + 1, q, best);
    if (diff * diff < best) search(left_first ? mid + 1 : lo, left_first ? hi : mid, depth + 1, q, best);
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> idx_;
};

/// Symmetric unsquared Chamfer distance: half the sum of both mean nearest distances.
inline double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw InvalidInput("chamfer: point sets must be non-empty");
  auto one_way = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    const KdTree tree(to);
    double s = 0.0;
    for (const Vec3& p : from) s += tree.nearest(p);
    return s / double(from.size());
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

struct AxisError {
  double ang_deg = 0.0;
  std::optional<double> pos;  // revolute joints only
};

/// Minimum distance between two infinite lines.
inline double line_distance(const Vec3& p, const Vec3& a, const Vec3& q, const Vec3& b) {
  const Vec3 n = a.cross(b);
  const Vec3 d = q - p;
  const double nn = n.norm();
  if (nn > 1e-9 * a.norm() * b.norm()) return std::abs(d.dot(n)) / nn;
  const Vec3 u = a.normalized();
  return (d - d.dot(u) * u).norm();
}

inline AxisError axis_errors(const PartJoint& pred, const PartJoint& gt) {
  const Vec3 a = pred.axis.normalized(), b = gt.axis.normalized();
  AxisError e;
  e.ang_deg = rad2deg(std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0)));
  if (gt.kind == JointKind::Revolute) e.pos = line_distance(pred.pivot, a, gt.pivot, b);
  return e;
}

/// Matching cost used for assignment: Ang/180 + Pos (Pos only for revolute joints).
inline double match_cost(const PartJoint& pred, const PartJoint& gt) {
  const AxisError e = axis_errors(pred, gt);
  return e.ang_deg / 180.0 + e.pos.value_or(0.0);
}

namespace detail {
/// Minimum-cost perfect assignment on a square matrix (Hungarian, O(n^3)).
inline std::vector<int> hungarian(const std::vector<std::vector<double>>& c) {
  const int n = int(c.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
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
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}
}  // namespace detail

/// One-to-one assignment between same-kind joints, maximizing the number of pairs and
/// then minimizing total cost. Returns the matched pred index per gt joint (-1 unmatched).
inline std::vector<int> match_joints(std::span<const PartJoint> pred, std::span<const PartJoint> gt) {
  const std::size_t n = gt.size(), m = pred.size();
  std::vector<int> out(n, -1);
  if (n == 0 || m == 0) return out;
  constexpr double kUnmatched = 1e6, kForbidden = 1e12;
  const std::size_t N = n + m;
  std::vector<std::vector<double>> c(N, std::vector<double>(N, 0.0));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      if (i < n && j < m)
        c[i][j] = gt[i].kind == pred[j].kind ? match_cost(pred[j], gt[i]) : kForbidden;
      else if (i < n || j < m)
        c[i][j] = kUnmatched;
    }
  const auto a = detail::hungarian(c);
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] >= 0 && std::size_t(a[i]) < m && gt[i].kind == pred[std::size_t(a[i])].kind) out[i] = a[i];
  return out;
}

struct JointScores {
  double ang_deg = 0.0;
  std::optional<double> pos;  // mean over revolute GT joints, absent if none
  int matched = 0;
};

/// Averages axis errors over GT joints; unmatched GT joints count 90 degrees and
/// `object_radius` for position.
inline JointScores score_joints(std::span<const PartJoint> pred, std::span<const PartJoint> gt, double object_radius,
                                std::vector<int>* assignment = nullptr) {
  JointScores s;
  const auto a = match_joints(pred, gt);
  if (assignment) *assignment = a;
  if (gt.empty()) return s;
  double pos_sum = 0.0;
  int revolute = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool hit = a[i] >= 0;
    s.matched += hit;
    const AxisError e = hit ? axis_errors(pred[std::size_t(a[i])], gt[i]) : AxisError{90.0, object_radius};
    s.ang_deg += e.ang_deg;
    if (gt[i].kind == JointKind::Revolute) {
      pos_sum += hit ? *e.pos : object_radius;
      ++revolute;
    }
  }
  s.ang_deg /= double(gt.size());
  if (revolute) s.pos = pos_sum / revolute;
  return s;
}

struct ChamferSuite {
  double whole = 0.0;
  double stat = 0.0;
  std::optional<double> movable;  // absent when GT has no movable parts
};

/// `pred_labels` use 0 static and k >= 1 for predicted part k; `gt_labels` use 0 base and
/// j >= 1 for GT joint j - 1. `assignment[j]` is the predicted joint index matched to GT
/// joint j (-1 unmatched). Empty or unmatched parts score `penalty`.
inline ChamferSuite cd_suite(std::span<const Vec3> pred, std::span<const int> pred_labels, std::span<const Vec3> gt,
                             std::span<const int> gt_labels, std::span<const int> assignment, double penalty) {
  if (pred.size() != pred_labels.size() || gt.size() != gt_labels.size()) throw InvalidInput("cd_suite: one label per point required");
  if (gt.empty()) throw InvalidInput("cd_suite: ground truth is empty");
  auto select = [](std::span<const Vec3> pts, std::span<const int> labels, int l) {
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (labels[i] == l) out.push_back(pts[i]);
    return out;
  };
  auto cd_or_penalty = [&](const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    return a.empty() || b.empty() ? penalty : chamfer(a, b);
  };
  ChamferSuite s;
  s.whole = pred.empty() ? penalty : chamfer(pred, gt);
  s.stat = cd_or_penalty(select(pred, pred_labels, 0), select(gt, gt_labels, 0));
  if (!assignment.empty()) {
    double sum = 0.0;
    for (std::size_t j = 0; j < assignment.size(); ++j) {
      const auto g = select(gt, gt_labels, int(j) + 1);
      sum += assignment[j] < 0 ? penalty : cd_or_penalty(select(pred, pred_labels, assignment[j] + 1), g);
    }
    s.movable = sum / double(assignment.size());
  }
  return s;
}

inline void check_same(const Grid<double>& a, const Grid<double>& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) throw InvalidInput("image dimensions differ");
}

/// 10 log10(1 / MSE), capped at 100 dB.
inline double psnr(const Grid<double>& a, const Grid<double>& b) {
  check_same(a, b);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  mse /= double(std::max<std::size_t>(a.data.size(), 1));
  return mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse);
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5) and channels.
inline double ssim(const Grid<double>& a, const Grid<double>& b) {
  check_same(a, b);
  constexpr int R = 5;
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (a.height < 2 * R + 1 || a.width < 2 * R + 1) throw InvalidInput("ssim: images must be at least 11x11");
  std::array<double, 2 * R + 1> k{};
  double ks = 0;
  for (int i = -R; i <= R; ++i) ks += k[std::size_t(i + R)] = std::exp(-0.5 * i * i / (1.5 * 1.5));
  for (double& v : k) v /= ks;
  const int h = a.height, w = a.width, C = a.channels;
  // Separable filtering of x, y, x², y², xy.
  auto filter = [&](auto&& f) {
    std::vector<double> tmp(std::size_t(h) * (w - 2 * R)), out(std::size_t(h - 2 * R) * (w - 2 * R));
    for (int y = 0; y < h; ++y)
      for (int x = R; x < w - R; ++x) {
        double s = 0;
        for (int d = -R; d <= R; ++d) s += k[std::size_t(d + R)] * f(y, x + d);
        tmp[std::size_t(y) * (w - 2 * R) + (x - R)] = s;
      }
    for (int y = R; y < h - R; ++y)
      for (int x = 0; x < w - 2 * R; ++x) {
        double s = 0;
        for (int d = -R; d <= R; ++d) s += k[std::size_t(d + R)] * tmp[std::size_t(y + d) * (w - 2 * R) + x];
        out[std::size_t(y - R) * (w - 2 * R) + x] = s;
      }
    return out;
  };
  double total = 0;
  std::size_t count = 0;
  for (int c = 0; c < C; ++c) {
    const auto mx = filter([&](int y, int x) { return a.at(y, x, c); });
    const auto my = filter([&](int y, int x) { return b.at(y, x, c); });
    const auto xx = filter([&](int y, int x) { return a.at(y, x, c) * a.at(y, x, c); });
    const auto yy = filter([&](int y, int x) { return b.at(y, x, c) * b.at(y, x, c); });
    const auto xy = filter([&](int y, int x) { return a.at(y, x, c) * b.at(y, x, c); });
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = xx[i] - mx[i] * mx[i], vy = yy[i] - my[i] * my[i], cxy = xy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
      ++count;
    }
  }
  return total / double(count);
}

}  // namespace artikin::metrics
