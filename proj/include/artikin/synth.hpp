#pragma once

// Procedural articulated objects built from oriented boxes, hemisphere camera and
// articulation-state samplers, a ray-cast reference renderer, and ground-truth joint maps.
// World up is +z.

#include "artikin/articulate.hpp"
#include "artikin/core.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace artikin {

struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Constant(0.5);
  Mat3 rotation = Mat3::Identity();  // box-to-world
  Vec3 albedo = Vec3::Constant(0.8);
};

/// Single-DoF joint attaching a movable part to the base. Values map the normalized
/// state s in [0, 1] to lo + s (hi - lo), radians or scene units.
struct SceneJoint {
  JointKind kind = JointKind::Revolute;
  Vec3 axis = Vec3::UnitZ();
  Vec3 pivot = Vec3::Zero();
  double lo = 0.0;
  double hi = 1.0;

  double value(double s) const { return lo + s * (hi - lo); }
};

/// `parts[k]` moves by `joints[k]` and carries label k + 1; the base carries label 0.
struct ArticulatedScene {
  std::string family;
  std::vector<Box> base;
  std::vector<std::vector<Box>> parts;
  std::vector<SceneJoint> joints;

  std::size_t num_joints() const { return joints.size(); }

  void validate() const {
    if (parts.size() != joints.size()) throw InvalidInput("scene: one joint per movable part required");
    for (const SceneJoint& j : joints) {
      if (!(j.hi > j.lo)) throw InvalidInput("scene: motion range must satisfy hi > lo");
      if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw InvalidInput("scene: joint axis must be unit");
    }
  }
};

/// Rigid motion of joint `j` at raw value `v`, as a map on world points.
struct RigidMotion {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Vec3 apply(const Vec3& x) const { return R * x + t; }
  Vec3 apply_inverse(const Vec3& y) const { return R.transpose() * (y - t); }
};

inline RigidMotion joint_motion(const SceneJoint& j, double value) {
  RigidMotion m;
  if (j.kind == JointKind::Revolute) {
    m.R = rodrigues(j.axis, value);
    m.t = j.pivot - m.R * j.pivot;
  } else if (j.kind == JointKind::Prismatic) {
    m.t = value * j.axis;
  }
  return m;
}

inline Box posed_box(const Box& b, const RigidMotion& m) {
  Box out = b;
  out.center = m.apply(b.center);
  out.rotation = m.R * b.rotation;
  return out;
}

/// All boxes of the scene posed at normalized state `state` (one value per joint),
/// paired with their part label.
inline std::vector<std::pair<Box, int>> posed_boxes(const ArticulatedScene& scene, std::span<const double> state) {
  if (state.size() != scene.joints.size()) throw InvalidInput("scene: one state value per joint required");
  std::vector<std::pair<Box, int>> out;
  for (const Box& b : scene.base) out.push_back({b, 0});
  for (std::size_t k = 0; k < scene.parts.size(); ++k) {
    const RigidMotion m = joint_motion(scene.joints[k], scene.joints[k].value(state[k]));
    for (const Box& b : scene.parts[k]) out.push_back({posed_box(b, m), int(k) + 1});
  }
  return out;
}

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
  bool hit = false;
};

/// Slab test in the box frame. `t` is in units of `dir`.
inline RayHit intersect_box(const Box& b, const Vec3& origin, const Vec3& dir) {
  const Vec3 o = b.rotation.transpose() * (origin - b.center);
  const Vec3 d = b.rotation.transpose() * dir;
  double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
  int near_axis = -1;
  double near_sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (std::abs(o[a]) > b.half[a]) return {};
      continue;
    }
    double t0 = (-b.half[a] - o[a]) / d[a], t1 = (b.half[a] - o[a]) / d[a];
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
      near_sign = sign;
    }
    t_far = std::min(t_far, t1);
  }
  if (near_axis < 0 || t_near > t_far || t_near <= 1e-9) return {};
  RayHit h;
  h.t = t_near;
  h.hit = true;
  Vec3 n = Vec3::Zero();
  n[near_axis] = near_sign;
  h.normal = b.rotation * n;
  return h;
}

struct RenderedFrame {
  Grid<std::uint8_t> rgb;  // H×W×3
  Grid<double> depth;      // z-depth, 0 on background
  PartLabelMap labels;
  CameraPose cam;
  std::vector<double> state;
};

inline const Vec3& light_direction() {
  static const Vec3 l = Vec3(0.4, 0.3, 0.87).normalized();
  return l;
}

/// Nearest-box ray cast with Lambertian shading and a white background.
inline RenderedFrame raycast_frame(const ArticulatedScene& scene, std::span<const double> state, const CameraPose& cam, int width,
                                   int height) {
  cam.validate();
  RenderedFrame f;
  f.rgb = Grid<std::uint8_t>(height, width, 3, 255);
  f.depth = Grid<double>(height, width, 1, 0.0);
  f.labels = PartLabelMap(height, width, -1);
  f.cam = cam;
  f.state.assign(state.begin(), state.end());
  const auto boxes = posed_boxes(scene, state);
  const Intrinsics k = Intrinsics::from_fov(cam.f, width, height);
  const Mat3 R = cam.rotation();
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Vec3 dir = R * pixel_ray(k, x, y);
      RayHit best;
      int label = -1;
      const Box* hit_box = nullptr;
      for (const auto& [b, l] : boxes) {
        const RayHit h = intersect_box(b, cam.t, dir);
        if (h.hit && h.t < best.t) {
          best = h;
          label = l;
          hit_box = &b;
        }
      }
      if (!best.hit) continue;
      f.depth.at(y, x) = best.t;
      f.labels.labels.at(y, x) = label;
      const double shade = 0.3 + 0.7 * std::max(0.0, best.normal.dot(light_direction()));
      for (int c = 0; c < 3; ++c)
        f.rgb.at(y, x, c) = std::uint8_t(std::clamp(std::lround(255.0 * hit_box->albedo[c] * shade), 0L, 255L));
    }
  return f;
}

inline RenderedFrame raycast_frame(const ArticulatedScene& scene, std::span<const double> state, const CameraPose& cam, int res) {
  return raycast_frame(scene, state, cam, res, res);
}

/// Distance from `p` to the surface of the part `label` posed at `state`.
inline double part_surface_distance(const ArticulatedScene& scene, std::span<const double> state, int label, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [b, l] : posed_boxes(scene, state)) {
    if (l != label) continue;
    const Vec3 q = b.rotation.transpose() * (p - b.center);
    const Vec3 d = q.cwiseAbs() - b.half;
    const double outside = d.cwiseMax(0.0).norm();
    const double inside = std::min(0.0, d.maxCoeff());
    best = std::min(best, std::abs(outside + inside));
  }
  return best;
}

/// Uniform surface samples of the posed scene, `density` points per unit area, with labels.
inline std::vector<std::pair<Vec3, int>> sample_surface(const ArticulatedScene& scene, std::span<const double> state, double density,
                                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::pair<Vec3, int>> out;
  for (const auto& [b, l] : posed_boxes(scene, state)) {
    for (int axis = 0; axis < 3; ++axis) {
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      const double area = 4.0 * b.half[a1] * b.half[a2];
      const int n = std::max(1, int(std::lround(area * density)));
      for (double side : {-1.0, 1.0})
        for (int i = 0; i < n; ++i) {
          Vec3 q;
          q[axis] = side * b.half[axis];
          q[a1] = u(rng) * b.half[a1];
          q[a2] = u(rng) * b.half[a2];
          out.push_back({b.rotation * q + b.center, l});
        }
    }
  }
  return out;
}

// ---------------------------------------------------------------- samplers

/// One camera per (elevation bin, azimuth bin), jittered uniformly inside the bin, looking
/// at the origin with zero roll. Angles in degrees; `jitter` in [0, 1] scales the jitter
/// (0 puts each camera at its bin center).
inline std::vector<CameraPose> sample_cameras(int n_e, int n_a, std::pair<double, double> elev_deg, std::pair<double, double> azim_deg,
                                              double radius, std::uint64_t seed, double fov = deg2rad(45.0), double jitter = 1.0) {
  if (n_e < 1 || n_a < 1) throw InvalidInput("sample_cameras: bin counts must be >= 1");
  if (elev_deg.second < elev_deg.first || azim_deg.second < azim_deg.first) throw InvalidInput("sample_cameras: empty angle range");
  if (elev_deg.first < -90.0 || elev_deg.second > 90.0) throw InvalidInput("sample_cameras: elevation outside [-90, 90]");
  if (!(radius > 0)) throw InvalidInput("sample_cameras: radius must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double de = (elev_deg.second - elev_deg.first) / n_e, da = (azim_deg.second - azim_deg.first) / n_a;
  std::vector<CameraPose> cams;
  for (int i = 0; i < n_e; ++i)
    for (int j = 0; j < n_a; ++j) {
      const double fe = 0.5 + jitter * (u(rng) - 0.5), fa = 0.5 + jitter * (u(rng) - 0.5);
      const double el = deg2rad(elev_deg.first + (i + fe) * de), az = deg2rad(azim_deg.first + (j + fa) * da);
      const Vec3 pos = radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const Vec3 z = -pos.normalized();
      const Vec3 x(-std::sin(az), std::cos(az), 0.0);
      const Vec3 y = z.cross(x);
      Mat3 R;
      R.col(0) = x;
      R.col(1) = y;
      R.col(2) = z;
      CameraPose c;
      c.t = pos;
      c.q = Quat::from_matrix(R);
      c.f = Vec2(fov, fov);
      cams.push_back(c);
    }
  return cams;
}

struct CameraLayer {
  int n_e, n_a;
  double elev_lo, elev_hi;
};

/// Training layout: a main layer plus a top layer over the full azimuth circle.
inline std::vector<CameraLayer> training_layout(bool full_scale) {
  if (full_scale) return {{5, 8, 0.0, 72.0}, {2, 4, 72.0, 85.0}};
  return {{3, 4, 0.0, 72.0}, {1, 4, 72.0, 85.0}};
}

inline std::vector<CameraPose> sample_layout(const std::vector<CameraLayer>& layers, double radius, std::uint64_t seed,
                                             double fov = deg2rad(45.0)) {
  std::vector<CameraPose> out;
  std::uint64_t s = seed;
  for (const CameraLayer& l : layers) {
    auto c = sample_cameras(l.n_e, l.n_a, {l.elev_lo, l.elev_hi}, {0.0, 360.0}, radius, s++, fov);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

/// Held-out evaluation targets: 3 elevation bins over [0, 90] by 4 azimuth bins.
inline std::vector<CameraPose> evaluation_cameras(double radius, std::uint64_t seed, double fov = deg2rad(45.0)) {
  return sample_cameras(3, 4, {0.0, 90.0}, {0.0, 360.0}, radius, seed, fov);
}

/// `result[s][j]`: per joint, one sample in each of n_states equal bins of [0, 1), with the
/// bin order independently permuted per joint.
inline std::vector<std::vector<double>> sample_states(int n_states, int n_joints, std::uint64_t seed) {
  if (n_states < 1) throw InvalidInput("sample_states: n_states must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> out(std::size_t(n_states), std::vector<double>(std::size_t(std::max(n_joints, 0))));
  std::vector<int> perm(static_cast<std::size_t>(n_states));
  for (int j = 0; j < n_joints; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int s = 0; s < n_states; ++s) out[s][j] = std::min((perm[s] + u(rng)) / n_states, std::nextafter(1.0, 0.0));
  }
  return out;
}

// ---------------------------------------------------------------- ground-truth joint maps

/// Canonical frame from the first camera with a given radius factor.
inline CanonicalFrame frame_from_camera(const CameraPose& first, double r_bar) {
  CanonicalFrame f;
  f.R0 = first.rotation().transpose();
  f.t0 = -f.R0 * first.t;
  f.r_bar = r_bar;
  return f;
}

/// Scene joint expressed in the canonical frame.
inline PartJoint canonical_joint(const SceneJoint& j, const CanonicalFrame& f) {
  PartJoint p;
  p.kind = j.kind;
  p.axis = f.direction(j.axis);
  p.pivot = f.point(j.pivot);
  return p;
}

inline JointVector static_joint_vector() {
  JointVector v{};
  v[kChType] = 1.0;
  return v;
}

inline JointMap build_gt_joint_map(const RenderedFrame& frame, const ArticulatedScene& scene, const CameraPose& frame0_cam, double r_bar) {
  if (!(r_bar > 0)) throw InvalidInput("build_gt_joint_map: r_bar must be positive");
  if (frame.state.size() != scene.joints.size()) throw InvalidInput("build_gt_joint_map: state does not match scene joints");
  const CanonicalFrame cf = frame_from_camera(frame0_cam, r_bar);
  const int h = frame.labels.height(), w = frame.labels.width();
  JointMap jm(h, w);
  std::vector<JointVector> per_label(scene.joints.size() + 1, static_joint_vector());
  for (std::size_t k = 0; k < scene.joints.size(); ++k) {
    const SceneJoint& j = scene.joints[k];
    JointVector v{};
    v[kChType + int(j.kind)] = 1.0;
    const PartJoint cj = canonical_joint(j, cf);
    for (int c = 0; c < 3; ++c) {
      v[kChAxis + c] = cj.axis[c];
      v[kChPivot + c] = cj.pivot[c];
    }
    const double value = j.value(frame.state[k]);
    if (j.kind == JointKind::Revolute) v[kChAngle] = value;
    if (j.kind == JointKind::Prismatic) v[kChDisp] = value / r_bar;
    per_label[k + 1] = v;
  }
  for (std::size_t i = 0; i < frame.labels.labels.pixels(); ++i) {
    const int l = frame.labels.labels.data[i];
    if (l < -1 || l > int(scene.joints.size())) throw InvalidInput("build_gt_joint_map: unknown part label " + std::to_string(l));
    const JointVector& v = per_label[std::size_t(std::max(l, 0))];
    std::copy(v.begin(), v.end(), jm.pixel(i));
  }
  return jm;
}

// ---------------------------------------------------------------- object families

struct SynthOptions {
  int res = 64;
  int states = 8;
  bool full_scale = false;
  int min_joints = 1;
  int max_joints = 4;
  double radius = 2.2;
  double fov = deg2rad(50.0);
};

/// Full-scale setting: 448 px, 48 cameras, 16 states.
inline SynthOptions full_scale_options() {
  SynthOptions o;
  o.res = 448;
  o.states = 16;
  o.full_scale = true;
  return o;
}

namespace detail {

inline Vec3 random_albedo(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 0.95);
  return {u(rng), u(rng), u(rng)};
}

inline Mat3 yaw(double a) { return rodrigues(Vec3::UnitZ(), a); }

// Body with its front face at +x.
struct Body {
  double w, d, h;  // width (y), depth (x), height (z)
};

inline void add_door(ArticulatedScene& s, std::mt19937_64& rng, const Body& b, double y0, double y1, double z0, double z1, bool hinge_left) {
  std::uniform_real_distribution<double> span(deg2rad(60.0), deg2rad(120.0));
  const double t = 0.03;
  Box door;
  door.center = {b.d / 2 + t / 2, 0.5 * (y0 + y1), 0.5 * (z0 + z1)};
  door.half = {t / 2, 0.5 * (y1 - y0), 0.5 * (z1 - z0)};
  door.albedo = random_albedo(rng);
  SceneJoint j;
  j.kind = JointKind::Revolute;
  j.pivot = {b.d / 2, hinge_left ? y0 : y1, 0.0};
  j.axis = hinge_left ? Vec3(0, 0, -1) : Vec3(0, 0, 1);
  j.lo = 0.0;
  j.hi = span(rng);
  s.parts.push_back({door});
  s.joints.push_back(j);
}

inline void add_drawer(ArticulatedScene& s, std::mt19937_64& rng, const Body& b, double y0, double y1, double z0, double z1, double size) {
  std::uniform_real_distribution<double> ext(0.2, 0.5);
  const double front = 0.03, inset = 0.01;
  Box panel;
  panel.center = {b.d / 2 + front / 2, 0.5 * (y0 + y1), 0.5 * (z0 + z1)};
  panel.half = {front / 2, 0.5 * (y1 - y0) - inset, 0.5 * (z1 - z0) - inset};
  panel.albedo = random_albedo(rng);
  Box tray = panel;
  tray.half = {0.35 * b.d, panel.half.y() * 0.9, panel.half.z() * 0.8};
  tray.center.x() = b.d / 2 - tray.half.x();
  tray.albedo = 0.8 * panel.albedo;
  SceneJoint j;
  j.kind = JointKind::Prismatic;
  j.axis = Vec3::UnitX();
  j.pivot = panel.center;
  j.lo = 0.0;
  j.hi = ext(rng) * size;
  s.parts.push_back({panel, tray});
  s.joints.push_back(j);
}

inline Box body_box(const Body& b, const Vec3& albedo) {
  Box box;
  box.center = Vec3::Zero();
  box.half = {b.d / 2, b.w / 2, b.h / 2};
  box.albedo = albedo;
  return box;
}

inline ArticulatedScene make_cabinet(std::mt19937_64& rng, int doors, double size) {
  std::uniform_real_distribution<double> u(0.8, 1.2);
  const Body b{0.8 * size * u(rng), 0.5 * size * u(rng), 0.9 * size * u(rng)};
  ArticulatedScene s;
  s.family = "cabinet";
  s.base.push_back(body_box(b, random_albedo(rng)));
  if (doors == 1) {
    add_door(s, rng, b, -b.w / 2, b.w / 2, -b.h / 2, b.h / 2, std::uniform_int_distribution<int>(0, 1)(rng) == 0);
  } else {
    add_door(s, rng, b, -b.w / 2, -0.005, -b.h / 2, b.h / 2, true);
    add_door(s, rng, b, 0.005, b.w / 2, -b.h / 2, b.h / 2, false);
  }
  return s;
}

inline ArticulatedScene make_drawers(std::mt19937_64& rng, int drawers, double size) {
  std::uniform_real_distribution<double> u(0.8, 1.2);
  const Body b{0.7 * size * u(rng), 0.6 * size * u(rng), 0.8 * size * u(rng)};
  ArticulatedScene s;
  s.family = "drawer";
  s.base.push_back(body_box(b, random_albedo(rng)));
  const double hz = b.h / drawers;
  for (int k = 0; k < drawers; ++k) {
    const double z0 = -b.h / 2 + k * hz;
    add_drawer(s, rng, b, -b.w / 2, b.w / 2, z0, z0 + hz, size);
  }
  return s;
}

inline ArticulatedScene make_laptop(std::mt19937_64& rng, double size) {
  std::uniform_real_distribution<double> u(0.8, 1.2);
  std::uniform_real_distribution<double> span(deg2rad(60.0), deg2rad(120.0));
  const double w = 0.9 * size * u(rng), d = 0.65 * size * u(rng), t = 0.05 * size;
  ArticulatedScene s;
  s.family = "laptop";
  Box base;
  base.center = {0, 0, -t / 2};
  base.half = {d / 2, w / 2, t / 2};
  base.albedo = random_albedo(rng);
  s.base.push_back(base);
  Box lid = base;
  lid.center = {0, 0, t / 2 + 0.002};
  lid.half = {d / 2, w / 2, t / 4};
  lid.albedo = random_albedo(rng);
  SceneJoint j;
  j.kind = JointKind::Revolute;
  // Hinge along the back edge (-x); positive angles lift the front of the lid.
  j.pivot = {-d / 2, 0, 0};
  j.axis = Vec3(0, -1, 0);
  j.lo = 0.0;
  j.hi = span(rng);
  s.parts.push_back({lid});
  s.joints.push_back(j);
  return s;
}

// Cabinet with a door on top and drawers below.
inline ArticulatedScene make_mixed(std::mt19937_64& rng, int joints, double size) {
  std::uniform_real_distribution<double> u(0.8, 1.2);
  const Body b{0.8 * size * u(rng), 0.55 * size * u(rng), 1.0 * size * u(rng)};
  ArticulatedScene s;
  s.family = "mixed";
  s.base.push_back(body_box(b, random_albedo(rng)));
  const double split = 0.0;
  add_door(s, rng, b, -b.w / 2, b.w / 2, split, b.h / 2, true);
  const int drawers = joints - 1;
  const double hz = (split + b.h / 2) / std::max(drawers, 1);
  for (int k = 0; k < drawers; ++k) {
    const double z0 = -b.h / 2 + k * hz;
    add_drawer(s, rng, b, -b.w / 2, b.w / 2, z0, z0 + hz, size);
  }
  return s;
}

}  // namespace detail

/// Draws a random object with `n_joints` movable parts, centered at the origin, with a
/// random yaw.
inline ArticulatedScene make_object(std::mt19937_64& rng, int n_joints) {
  if (n_joints < 1 || n_joints > 4) throw InvalidInput("make_object: joint count must be in [1, 4]");
  // Sized so every posed part stays within radius ~0.95 of the origin.
  std::uniform_real_distribution<double> size_u(0.47, 0.63), yaw_u(-kPi, kPi);
  const double size = size_u(rng);
  ArticulatedScene s;
  const int family = std::uniform_int_distribution<int>(0, n_joints == 1 ? 2 : (n_joints == 2 ? 1 : 0))(rng);
  if (n_joints == 1) {
    s = family == 0 ? detail::make_cabinet(rng, 1, size) : family == 1 ? detail::make_drawers(rng, 1, size) : detail::make_laptop(rng, size);
  } else if (n_joints == 2) {
    s = family == 0 ? detail::make_cabinet(rng, 2, size) : detail::make_drawers(rng, 2, size);
  } else if (n_joints == 3) {
    s = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? detail::make_drawers(rng, 3, size) : detail::make_mixed(rng, 3, size);
  } else {
    s = detail::make_mixed(rng, 4, size);
  }
  const Mat3 R = detail::yaw(yaw_u(rng));
  auto rotate_box = [&](Box& b) {
    b.center = R * b.center;
    b.rotation = R * b.rotation;
  };
  for (Box& b : s.base) rotate_box(b);
  for (auto& part : s.parts)
    for (Box& b : part) rotate_box(b);
  for (SceneJoint& j : s.joints) {
    j.axis = R * j.axis;
    j.pivot = R * j.pivot;
  }
  s.validate();
  return s;
}

/// One object rendered at every (state, view). Frames are state-major: s * views + v.
struct ObjectSample {
  ArticulatedScene scene;
  std::vector<CameraPose> cams;
  std::vector<std::vector<double>> states;
  std::vector<RenderedFrame> frames;

  int num_views() const { return int(cams.size()); }
  int num_states() const { return int(states.size()); }
  const RenderedFrame& frame(int s, int v) const { return frames[std::size_t(s) * cams.size() + v]; }
};

inline ObjectSample generate_object(std::uint64_t seed, const SynthOptions& opt) {
  if (opt.min_joints < 1 || opt.max_joints > 4 || opt.min_joints > opt.max_joints) throw InvalidInput("synth: joint count range must lie in [1, 4]");
  std::mt19937_64 rng(seed);
  ObjectSample o;
  const int n_joints = std::uniform_int_distribution<int>(opt.min_joints, opt.max_joints)(rng);
  o.scene = make_object(rng, n_joints);
  o.cams = sample_layout(training_layout(opt.full_scale), opt.radius, rng(), opt.fov);
  o.states = sample_states(opt.states, n_joints, rng());
  for (const auto& st : o.states)
    for (const CameraPose& c : o.cams) o.frames.push_back(raycast_frame(o.scene, st, c, opt.res));
  return o;
}

}  // namespace artikin
