#pragma once

// Rigid articulation of Gaussian sets: axis-angle rotations, part-level joint
// aggregation, part discovery by clustering joint lines, and the state-conditioned
// transform.

#include "artikin/core.hpp"
#include "artikin/hdbscan.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace artikin {

struct PartJoint {
  JointKind kind = JointKind::Static;
  Vec3 axis = Vec3::UnitZ();
  Vec3 pivot = Vec3::Zero();
  double ref_angle = 0.0;
  double ref_disp = 0.0;
};

/// Line (direction, moment = direction × point).
struct PluckerLine {
  Vec3 dir;
  Vec3 moment;

  static PluckerLine through(const Vec3& unit_dir, const Vec3& point) { return {unit_dir, unit_dir.cross(point)}; }
};

namespace detail {

inline Vec3 checked_unit_axis(const Vec3& axis) {
  const double n = axis.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-3) throw InvalidInput("rotation axis is not unit length");
  if (std::abs(n - 1.0) > 1e-6) {
    std::cerr << "artikin: warning: renormalizing rotation axis with norm " << n << "\n";
    return axis / n;
  }
  return axis;
}

}  // namespace detail

/// R = I + sin θ [a]x + (1 - cos θ) [a]x².
inline Mat3 rodrigues(const Vec3& axis, double angle) {
  const Vec3 a = detail::checked_unit_axis(axis);
  const Mat3 k = skew(a);
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * (k * k);
}

/// q = (cos θ/2, sin θ/2 · a).
inline Quat axis_angle_quat(const Vec3& axis, double angle) {
  const Vec3 a = detail::checked_unit_axis(axis);
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), s * a.x(), s * a.y(), s * a.z()};
}

/// Moves one Gaussian by `delta` (radians for revolute, scene units for prismatic).
/// Scale, opacity, and SH are left as is; SH are not rotated.
inline Gaussian3D articulate_gaussian(const Gaussian3D& g, const PartJoint& joint, double delta) {
  Gaussian3D out = g;
  if (delta == 0.0) return out;
  switch (joint.kind) {
    case JointKind::Static:
      break;
    case JointKind::Revolute:
      out.mu = rodrigues(joint.axis, delta) * (g.mu - joint.pivot) + joint.pivot;
      out.rot = axis_angle_quat(joint.axis, delta) * g.rot;
      break;
    case JointKind::Prismatic:
      out.mu = g.mu + delta * detail::checked_unit_axis(joint.axis);
      break;
  }
  return out;
}

/// Averages per-Gaussian joint predictions over one part. Axes are flipped into the
/// hemisphere of the first member; flipped members also negate angle and displacement,
/// since motion θ about -a equals -θ about a.
inline PartJoint aggregate_part(std::span<const JointVector> joint_params, std::span<const std::size_t> members) {
  if (members.empty()) throw InvalidInput("aggregate_part: empty member set");
  const JointKind kind = argmax_kind(joint_params[members.front()].data());
  PartJoint out;
  out.kind = kind;
  const JointVector& first = joint_params[members.front()];
  const Vec3 ref(first[kChAxis], first[kChAxis + 1], first[kChAxis + 2]);
  Vec3 axis_sum = Vec3::Zero(), pivot_sum = Vec3::Zero();
  double angle_sum = 0.0, disp_sum = 0.0;
  for (std::size_t m : members) {
    const JointVector& v = joint_params[m];
    if (argmax_kind(v.data()) != kind) throw InvalidInput("aggregate_part: members disagree on joint type");
    Vec3 a(v[kChAxis], v[kChAxis + 1], v[kChAxis + 2]);
    double sign = a.dot(ref) < 0 ? -1.0 : 1.0;
    axis_sum += sign * a;
    pivot_sum += Vec3(v[kChPivot], v[kChPivot + 1], v[kChPivot + 2]);
    angle_sum += sign * v[kChAngle];
    disp_sum += sign * v[kChDisp];
  }
  const double n = double(members.size());
  if (kind == JointKind::Static) return out;
  const double len = axis_sum.norm();
  out.axis = len > 0 ? Vec3(axis_sum / len) : Vec3::UnitZ();
  out.pivot = pivot_sum / n;
  if (kind == JointKind::Revolute) out.ref_angle = angle_sum / n;
  if (kind == JointKind::Prismatic) out.ref_disp = disp_sum / n;
  return out;
}

struct PartDiscoveryParams {
  double min_cluster_fraction = 0.005;
  int min_cluster_floor = 20;
  int min_samples = 10;
  /// Larger groups are clustered on an evenly strided subset; the rest join the
  /// nearest centroid.
  std::size_t max_cluster_points = 6000;
};

struct PartDiscovery {
  /// 0 static, k >= 1 movable part k (joint index k - 1).
  std::vector<int> labels;
  std::vector<PartJoint> joints;
};

namespace detail {

/// Orients axes consistently before clustering: each axis is flipped into the hemisphere
/// of a reference built from the principal directions of all axes in the group.
inline Vec3 sign_reference(std::span<const Vec3> axes) {
  Mat3 m = Mat3::Zero();
  for (const Vec3& a : axes) m += a * a.transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(m);
  const Mat3 e = es.eigenvectors();  // ascending eigenvalues
  Vec3 ref = e.col(2) + 0.5 * e.col(1) + 0.25 * e.col(0);
  return ref.normalized();
}

inline std::vector<int> cluster_with_noise_assignment(const cluster::PointCloud& pts, const cluster::HdbscanParams& hp,
                                                      std::size_t max_points) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> subset;
  const std::size_t stride = n > max_points ? (n + max_points - 1) / max_points : 1;
  for (std::size_t i = 0; i < n; i += stride) subset.push_back(i);
  cluster::PointCloud sub{pts.dim, {}};
  for (std::size_t i : subset) sub.coords.insert(sub.coords.end(), pts.point(i), pts.point(i) + pts.dim);
  cluster::HdbscanParams p = hp;
  if (stride > 1) p.min_cluster_size = std::max<int>(2, int(hp.min_cluster_size / stride));
  const std::vector<int> sub_labels = cluster::hdbscan(sub, p);
  const int k = sub_labels.empty() ? 0 : *std::max_element(sub_labels.begin(), sub_labels.end()) + 1;
  std::vector<int> labels(n, -1);
  if (k == 0) return labels;
  std::vector<double> centroid(std::size_t(k) * pts.dim, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t s = 0; s < subset.size(); ++s) {
    const int l = sub_labels[s];
    if (l < 0) continue;
    for (int d = 0; d < pts.dim; ++d) centroid[std::size_t(l) * pts.dim + d] += pts.point(subset[s])[d];
    ++count[l];
  }
  for (int l = 0; l < k; ++l)
    for (int d = 0; d < pts.dim; ++d) centroid[std::size_t(l) * pts.dim + d] /= double(count[l]);
  for (std::size_t s = 0; s < subset.size(); ++s) labels[subset[s]] = sub_labels[s];
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= 0) continue;
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int l = 0; l < k; ++l) {
      const double d = cluster::sq_distance(pts.point(i), centroid.data() + std::size_t(l) * pts.dim, pts.dim);
      if (d < best_d) {
        best_d = d;
        best = l;
      }
    }
    labels[i] = best;
  }
  return labels;
}

}  // namespace detail

/// Clusters revolute Gaussians on Plücker coordinates and prismatic Gaussians on axis
/// direction, then reduces each cluster to a PartJoint. Static Gaussians get label 0.
inline PartDiscovery discover_parts(std::span<const JointVector> joint_params, const PartDiscoveryParams& params = {}) {
  PartDiscovery out;
  out.labels.assign(joint_params.size(), 0);
  std::vector<std::size_t> movable[3];
  for (std::size_t i = 0; i < joint_params.size(); ++i) {
    const JointKind k = argmax_kind(joint_params[i].data());
    if (k != JointKind::Static) movable[int(k)].push_back(i);
  }
  const std::size_t n_movable = movable[1].size() + movable[2].size();
  if (n_movable == 0) return out;
  cluster::HdbscanParams hp;
  hp.min_cluster_size = std::max(params.min_cluster_floor, int(std::ceil(params.min_cluster_fraction * double(n_movable))));
  hp.min_samples = params.min_samples;

  for (JointKind kind : {JointKind::Revolute, JointKind::Prismatic}) {
    const auto& idx = movable[int(kind)];
    if (idx.empty()) continue;
    std::vector<Vec3> axes;
    for (std::size_t i : idx) {
      const JointVector& v = joint_params[i];
      Vec3 a(v[kChAxis], v[kChAxis + 1], v[kChAxis + 2]);
      const double n = a.norm();
      axes.push_back(n > 0 ? Vec3(a / n) : Vec3::UnitZ());
    }
    const Vec3 ref = detail::sign_reference(axes);
    cluster::PointCloud pts{kind == JointKind::Revolute ? 6 : 3, {}};
    for (std::size_t j = 0; j < idx.size(); ++j) {
      Vec3 a = axes[j];
      if (a.dot(ref) < 0) a = -a;
      pts.coords.insert(pts.coords.end(), {a.x(), a.y(), a.z()});
      if (kind == JointKind::Revolute) {
        const JointVector& v = joint_params[idx[j]];
        const Vec3 m = PluckerLine::through(a, Vec3(v[kChPivot], v[kChPivot + 1], v[kChPivot + 2])).moment;
        pts.coords.insert(pts.coords.end(), {m.x(), m.y(), m.z()});
      }
    }
    const std::vector<int> labels = detail::cluster_with_noise_assignment(pts, hp, params.max_cluster_points);
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    for (int c = 0; c < k; ++c) {
      std::vector<std::size_t> members;
      for (std::size_t j = 0; j < idx.size(); ++j)
        if (labels[j] == c) members.push_back(idx[j]);
      if (members.empty()) continue;
      out.joints.push_back(aggregate_part(joint_params, members));
      const int part = int(out.joints.size());
      for (std::size_t m : members) out.labels[m] = part;
    }
  }
  return out;
}

/// Poses every movable part at its target (θ* or d*) using Δ = target - reference.
/// `targets[k]` belongs to `joints[k]`, i.e. label k + 1.
inline std::vector<Gaussian3D> articulate_set(std::span<const Gaussian3D> gaussians, std::span<const int> labels,
                                              std::span<const PartJoint> joints, std::span<const double> targets) {
  if (labels.size() != gaussians.size()) throw InvalidInput("articulate_set: one label per Gaussian required");
  if (targets.size() < joints.size()) throw InvalidInput("articulate_set: missing target for a movable part");
  std::vector<double> delta(joints.size(), 0.0);
  for (std::size_t k = 0; k < joints.size(); ++k) {
    const PartJoint& j = joints[k];
    delta[k] = j.kind == JointKind::Revolute ? targets[k] - j.ref_angle : j.kind == JointKind::Prismatic ? targets[k] - j.ref_disp : 0.0;
  }
  std::vector<Gaussian3D> out(gaussians.begin(), gaussians.end());
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const int l = labels[i];
    if (l <= 0) continue;
    if (std::size_t(l) > joints.size()) throw InvalidInput("articulate_set: label without a joint");
    out[i] = articulate_gaussian(gaussians[i], joints[l - 1], delta[l - 1]);
  }
  return out;
}

/// Same as `articulate_set` but with explicit per-part deltas.
inline std::vector<Gaussian3D> articulate_by_delta(std::span<const Gaussian3D> gaussians, std::span<const int> labels,
                                                   std::span<const PartJoint> joints, std::span<const double> deltas) {
  std::vector<double> targets(joints.size());
  for (std::size_t k = 0; k < joints.size(); ++k)
    targets[k] = (joints[k].kind == JointKind::Prismatic ? joints[k].ref_disp : joints[k].ref_angle) + deltas[k];
  return articulate_set(gaussians, labels, joints, targets);
}

}  // namespace artikin
