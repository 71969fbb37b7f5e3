#pragma once

// Domain types shared across the pipeline: cameras, per-pixel grids, Gaussians,
// joint maps, and the canonical normalization frame.

#include "artikin/geometry.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace artikin {

/// Row-major H×W×C grid.
template <class T>
struct Grid {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, int c = 1, T fill = T{}) : height(h), width(w), channels(c), data(std::size_t(h) * w * c, fill) {}

  std::size_t pixels() const { return std::size_t(height) * width; }
  T& at(int y, int x, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
  const T& at(int y, int x, int c = 0) const { return data[(std::size_t(y) * width + x) * channels + c]; }
  T* pixel(std::size_t i) { return data.data() + i * channels; }
  const T* pixel(std::size_t i) const { return data.data() + i * channels; }
  bool same_shape(int h, int w) const { return height == h && width == w; }
};

/// Pinhole camera. Pose is camera-to-world: `q` rotates camera-frame vectors into
/// the world, `t` is the camera center. Camera axes follow x right, y down, z forward.
/// `f` holds horizontal and vertical field of view in radians.
struct CameraPose {
  Vec3 t = Vec3::Zero();
  Quat q;
  Vec2 f = Vec2(kPi / 2, kPi / 2);

  Mat3 rotation() const { return q.to_matrix(); }

  bool valid() const {
    return all_finite(t) && std::abs(q.norm() - 1.0) <= 1e-9 && f.x() > 0 && f.x() < kPi && f.y() > 0 && f.y() < kPi;
  }

  void validate() const {
    if (!valid()) throw InvalidInput("invalid camera: quaternion must be unit and fov in (0, pi)");
  }

  std::array<double, 9> to_params() const { return {t.x(), t.y(), t.z(), q.w, q.x, q.y, q.z, f.x(), f.y()}; }
};

/// Principal point at the image center, square pixels sized by the FoV.
struct Intrinsics {
  double fx, fy, cx, cy;

  static Intrinsics from_fov(const Vec2& fov, int width, int height) {
    return {0.5 * width / std::tan(0.5 * fov.x()), 0.5 * height / std::tan(0.5 * fov.y()), 0.5 * width, 0.5 * height};
  }
};

/// Ray direction in the camera frame for the center of pixel (x, y), with unit z so the
/// ray parameter equals z-depth.
inline Vec3 pixel_ray(const Intrinsics& k, int x, int y) {
  return {((x + 0.5) - k.cx) / k.fx, ((y + 0.5) - k.cy) / k.fy, 1.0};
}

struct Projection {
  Vec2 pixel;  // continuous pixel coordinates; pixel (x, y) has center (x + 0.5, y + 0.5)
  double depth;
};

inline Projection project(const Vec3& world, const CameraPose& cam, int width, int height) {
  const Intrinsics k = Intrinsics::from_fov(cam.f, width, height);
  const Vec3 pc = cam.rotation().transpose() * (world - cam.t);
  return {Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy), pc.z()};
}

/// Per-pixel z-depth and confidence. Background pixels carry depth 0 and conf 0.
struct DepthMap {
  Grid<double> depth;
  Grid<double> conf;

  DepthMap() = default;
  DepthMap(int h, int w) : depth(h, w), conf(h, w) {}

  int height() const { return depth.height; }
  int width() const { return depth.width; }
  bool foreground(std::size_t i) const { return depth.data[i] > 0.0; }
};

/// Per-pixel 3D points in the canonical frame. Background pixels hold the zero vector.
struct PointMap {
  int height = 0;
  int width = 0;
  std::vector<Vec3> points;
  std::vector<std::uint8_t> mask;

  PointMap() = default;
  PointMap(int h, int w) : height(h), width(w), points(std::size_t(h) * w, Vec3::Zero()), mask(std::size_t(h) * w, 0) {}

  std::size_t pixels() const { return points.size(); }
};

/// Part labels: -1 background, 0 static base, k >= 1 moving part k.
struct PartLabelMap {
  Grid<int> labels;

  PartLabelMap() = default;
  PartLabelMap(int h, int w, int fill = -1) : labels(h, w, 1, fill) {}

  int height() const { return labels.height; }
  int width() const { return labels.width; }
  int max_label() const {
    int m = -1;
    for (int l : labels.data) m = std::max(m, l);
    return m;
  }
};

// Gaussian parameter block layout.
inline constexpr int kShDegree = 4;
inline constexpr int kShCoeffsPerChannel = (kShDegree + 1) * (kShDegree + 1);  // 25
inline constexpr int kShCoeffs = 3 * kShCoeffsPerChannel;                       // 75
inline constexpr int kGaussianParams = 3 + 3 + 4 + 1 + kShCoeffs;
static_assert(kGaussianParams == 86);
/// Raw head attributes per pixel: log-scale, rotation, opacity logit, SH.
inline constexpr int kGaussianAttrs = kGaussianParams - 3;
static_assert(kGaussianAttrs == 83);

/// One splatting primitive. `log_scale` is exponentiated at render time; `alpha` is
/// post-sigmoid. SH coefficients are channel-major: sh[c * 25 + k] for basis k.
struct Gaussian3D {
  Vec3 mu = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Quat rot;
  double alpha = 0.0;
  std::array<double, kShCoeffs> sh{};

  std::array<double, kGaussianParams> to_params() const {
    std::array<double, kGaussianParams> p{};
    p[0] = mu.x(); p[1] = mu.y(); p[2] = mu.z();
    p[3] = log_scale.x(); p[4] = log_scale.y(); p[5] = log_scale.z();
    p[6] = rot.w; p[7] = rot.x; p[8] = rot.y; p[9] = rot.z;
    p[10] = alpha;
    std::copy(sh.begin(), sh.end(), p.begin() + 11);
    return p;
  }

  static Gaussian3D from_params(std::span<const double, kGaussianParams> p) {
    Gaussian3D g;
    g.mu = {p[0], p[1], p[2]};
    g.log_scale = {p[3], p[4], p[5]};
    g.rot = {p[6], p[7], p[8], p[9]};
    g.alpha = p[10];
    std::copy(p.begin() + 11, p.end(), g.sh.begin());
    return g;
  }
};

enum class JointKind : int { Static = 0, Revolute = 1, Prismatic = 2 };

inline const char* to_string(JointKind k) {
  switch (k) {
    case JointKind::Static: return "static";
    case JointKind::Revolute: return "revolute";
    case JointKind::Prismatic: return "prismatic";
  }
  return "?";
}

inline JointKind joint_kind_from_string(const std::string& s) {
  if (s == "static") return JointKind::Static;
  if (s == "revolute") return JointKind::Revolute;
  if (s == "prismatic") return JointKind::Prismatic;
  throw InvalidInput("unknown joint kind: " + s);
}

// Joint map channel layout.
inline constexpr int kJointChannels = 11;
inline constexpr int kChType = 0;    // 0..2 logits static / revolute / prismatic
inline constexpr int kChAxis = 3;    // 3..5
inline constexpr int kChPivot = 6;   // 6..8
inline constexpr int kChAngle = 9;   // radians
inline constexpr int kChDisp = 10;   // normalized scene units
inline constexpr int kInvariantChannels = 9;
inline constexpr int kVariantChannels = 2;

using JointVector = std::array<double, kJointChannels>;

inline JointKind argmax_kind(const double* v) {
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (v[c] > v[best]) best = c;
  return static_cast<JointKind>(best);
}

struct JointMap {
  Grid<double> data;

  JointMap() = default;
  JointMap(int h, int w) : data(h, w, kJointChannels) {}

  int height() const { return data.height; }
  int width() const { return data.width; }
  double* pixel(std::size_t i) { return data.pixel(i); }
  const double* pixel(std::size_t i) const { return data.pixel(i); }

  JointVector vector(std::size_t i) const {
    JointVector v;
    std::copy_n(pixel(i), kJointChannels, v.begin());
    return v;
  }

  /// Renormalizes axis channels on pixels where `foreground` holds (all pixels if empty).
  void normalize_axes(std::span<const std::uint8_t> foreground = {}) {
    for (std::size_t i = 0; i < data.pixels(); ++i) {
      if (!foreground.empty() && !foreground[i]) continue;
      double* p = pixel(i) + kChAxis;
      const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      if (n > 0)
        for (int c = 0; c < 3; ++c) p[c] /= n;
    }
  }
};

/// World-to-canonical transform x_c = (R0 x + t0) / r_bar; the canonical frame is
/// the first camera's frame.
struct CanonicalFrame {
  Mat3 R0 = Mat3::Identity();
  Vec3 t0 = Vec3::Zero();
  double r_bar = 1.0;

  Vec3 point(const Vec3& world) const { return (R0 * world + t0) / r_bar; }
  Vec3 direction(const Vec3& world_dir) const { return R0 * world_dir; }
  double length(double world_len) const { return world_len / r_bar; }

  CameraPose camera(const CameraPose& world) const {
    CameraPose c = world;
    c.q = (Quat::from_matrix(R0) * world.q).normalized();
    c.t = point(world.t);
    return c;
  }

  bool valid() const {
    return (R0.transpose() * R0 - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9 && r_bar > 0;
  }
};

/// Maps foreground pixels of `depth` to points in the canonical frame. `cam` is expressed
/// in the frame that `frame` maps from (pass a default frame for cameras already canonical).
inline PointMap unproject(const Grid<double>& depth, const CameraPose& cam, const CanonicalFrame& frame = {}) {
  cam.validate();
  const Intrinsics k = Intrinsics::from_fov(cam.f, depth.width, depth.height);
  const Mat3 R = cam.rotation();
  PointMap out(depth.height, depth.width);
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const double d = depth.at(y, x);
      if (!std::isfinite(d)) throw InvalidInput("non-finite depth at pixel (" + std::to_string(x) + "," + std::to_string(y) + ")");
      if (d <= 0.0) continue;
      const std::size_t i = std::size_t(y) * depth.width + x;
      out.points[i] = frame.point(R * (d * pixel_ray(k, x, y)) + cam.t);
      out.mask[i] = 1;
    }
  }
  return out;
}

inline PointMap unproject(const DepthMap& depth, const CameraPose& cam, const CanonicalFrame& frame = {}) {
  return unproject(depth.depth, cam, frame);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

/// Default confidence threshold for Gaussian inclusion.
inline constexpr double kDefaultConfThreshold = 0.1;

/// Builds one Gaussian per pixel with conf >= threshold. `attrs` carries the raw head
/// outputs (log-scale, rotation, opacity logit, SH). This is where opacity crosses from
/// logit to probability. Pixel indices of kept Gaussians go to `pixel_index` if given.
inline std::vector<Gaussian3D> assemble_gaussians(const PointMap& points, const Grid<double>& attrs,
                                                  const Grid<double>& conf, double threshold,
                                                  std::vector<std::size_t>* pixel_index = nullptr) {
  if (!attrs.same_shape(points.height, points.width) || !conf.same_shape(points.height, points.width))
    throw InvalidInput("assemble_gaussians: grid shapes differ");
  if (attrs.channels != kGaussianAttrs) throw InvalidInput("assemble_gaussians: expected 83 attribute channels");
  std::vector<Gaussian3D> out;
  if (pixel_index) pixel_index->clear();
  for (std::size_t i = 0; i < points.pixels(); ++i) {
    if (!(conf.data[i] >= threshold)) continue;
    const double* a = attrs.pixel(i);
    Gaussian3D g;
    g.mu = points.points[i];
    g.log_scale = {a[0], a[1], a[2]};
    g.rot = Quat{a[3], a[4], a[5], a[6]}.normalized();
    g.alpha = sigmoid(a[7]);
    std::copy_n(a + 8, kShCoeffs, g.sh.begin());
    out.push_back(g);
    if (pixel_index) pixel_index->push_back(i);
  }
  return out;
}

struct CanonicalScene {
  CanonicalFrame frame;
  std::vector<PointMap> points;
  std::vector<CameraPose> cams;
};

/// Frame anchored at the first camera. r_bar is the mean distance of foreground points
/// from the canonical origin (before scaling).
inline CanonicalFrame canonical_frame(std::span<const PointMap> points_world, const CameraPose& first) {
  first.validate();
  CanonicalFrame f;
  const Mat3 R = first.rotation();
  f.R0 = R.transpose();
  f.t0 = -f.R0 * first.t;
  double sum = 0.0;
  std::size_t n = 0;
  for (const PointMap& pm : points_world)
    for (std::size_t i = 0; i < pm.pixels(); ++i)
      if (pm.mask[i]) {
        sum += (f.R0 * pm.points[i] + f.t0).norm();
        ++n;
      }
  if (n == 0) throw DegenerateScene("canonicalize: no foreground points");
  f.r_bar = sum / double(n);
  if (!(f.r_bar > 0)) throw DegenerateScene("canonicalize: all foreground points at the first camera center");
  return f;
}

inline CanonicalScene canonicalize(std::span<const PointMap> points_world, std::span<const CameraPose> cams) {
  if (cams.empty()) throw InvalidInput("canonicalize: at least one camera required");
  CanonicalScene out;
  out.frame = canonical_frame(points_world, cams.front());
  for (const PointMap& pm : points_world) {
    PointMap c = pm;
    for (std::size_t i = 0; i < c.pixels(); ++i) c.points[i] = c.mask[i] ? out.frame.point(pm.points[i]) : Vec3::Zero();
    out.points.push_back(std::move(c));
  }
  for (const CameraPose& cam : cams) out.cams.push_back(out.frame.camera(cam));
  return out;
}

}  // namespace artikin
