#pragma once

// Inference (forward pass, Gaussian assembly, voxel merge, part discovery), the held-out
// evaluation protocol, and articulation sweeps.

#include "artikin/io.hpp"
#include "artikin/metrics.hpp"

namespace artikin::pipeline {

using io::GaussianSet;

struct InferOptions {
  double conf_threshold = kDefaultConfThreshold;
  double voxel = 0.003;
  PartDiscoveryParams discovery;
};

/// Per-image dense predictions in the canonical frame, state-major (V views per state).
struct DenseMaps {
  int views = 0;
  std::vector<PointMap> points;
  std::vector<Grid<double>> attrs;
  std::vector<Grid<double>> conf;
  std::vector<JointMap> joints;
  std::vector<CameraPose> cams;
};

struct Reconstruction {
  std::array<GaussianSet, 2> sets;
  DenseMaps maps;
};

inline DenseMaps dense_maps(const model::ModelOutput& o) {
  DenseMaps d;
  d.views = o.views;
  for (int b = 0; b < o.images; ++b) {
    const Grid<double> pts = o.grid(o.points, b);
    PointMap pm(o.height, o.width);
    for (std::size_t i = 0; i < pm.pixels(); ++i) {
      pm.points[i] = Vec3(pts.pixel(i)[0], pts.pixel(i)[1], pts.pixel(i)[2]);
      pm.mask[i] = 1;
    }
    d.points.push_back(std::move(pm));
    d.attrs.push_back(o.grid(o.attrs, b));
    d.conf.push_back(o.gaussian_conf(b));
    d.joints.push_back(o.joint_map(b));
    d.cams.push_back(o.camera(b));
  }
  return d;
}

/// Joint value of a part over a subset of its members, signed against the part axis.
inline double signed_value(std::span<const JointVector> jv, std::span<const std::size_t> members, const PartJoint& part) {
  const PartJoint p = aggregate_part(jv, members);
  const double v = p.kind == JointKind::Prismatic ? p.ref_disp : p.ref_angle;
  return p.axis.dot(part.axis) < 0 ? -v : v;
}

/// Assembles confident pixels into Gaussians, merges each state's set by voxel, and
/// discovers parts on the union; per-state reference values average same-state members.
inline Reconstruction reconstruct(DenseMaps maps, const InferOptions& opt = {}) {
  const std::size_t B = maps.points.size();
  if (maps.views < 1 || B != 2 * std::size_t(maps.views)) throw InvalidInput("reconstruct: expected V views for each of two states");
  std::array<std::vector<Gaussian3D>, 2> raw;
  std::array<std::vector<JointVector>, 2> raw_joints;
  for (std::size_t b = 0; b < B; ++b) {
    const int s = int(b) / maps.views;
    std::vector<std::size_t> pix;
    const auto g = assemble_gaussians(maps.points[b], maps.attrs[b], maps.conf[b], opt.conf_threshold, &pix);
    raw[std::size_t(s)].insert(raw[std::size_t(s)].end(), g.begin(), g.end());
    for (std::size_t i : pix) {
      JointVector v = maps.joints[b].vector(i);
      Vec3 a(v[kChAxis], v[kChAxis + 1], v[kChAxis + 2]);
      a = a.norm() > 0 ? Vec3(a.normalized()) : Vec3::UnitZ();
      for (int k = 0; k < 3; ++k) v[std::size_t(kChAxis + k)] = a[k];
      raw_joints[std::size_t(s)].push_back(v);
    }
  }
  Reconstruction r;
  std::array<std::vector<JointVector>, 2> merged_joints;
  for (int s = 0; s < 2; ++s) {
    GaussianSet& set = r.sets[std::size_t(s)];
    set.state = s;
    set.view = maps.cams.front();
    set.gaussians = voxel_merge(raw[std::size_t(s)], opt.voxel, raw_joints[std::size_t(s)], &merged_joints[std::size_t(s)]);
    for (JointVector& v : merged_joints[std::size_t(s)]) {
      Vec3 a(v[kChAxis], v[kChAxis + 1], v[kChAxis + 2]);
      a = a.norm() > 0 ? Vec3(a.normalized()) : Vec3::UnitZ();
      for (int k = 0; k < 3; ++k) v[std::size_t(kChAxis + k)] = a[k];
    }
    set.joints = merged_joints[std::size_t(s)];
  }
  std::vector<JointVector> all = merged_joints[0];
  all.insert(all.end(), merged_joints[1].begin(), merged_joints[1].end());
  const PartDiscovery pd = discover_parts(all, opt.discovery);
  const std::size_t n0 = merged_joints[0].size();
  r.sets[0].labels.assign(pd.labels.begin(), pd.labels.begin() + std::ptrdiff_t(n0));
  r.sets[1].labels.assign(pd.labels.begin() + std::ptrdiff_t(n0), pd.labels.end());

  std::vector<std::array<double, 2>> values(pd.joints.size());
  for (std::size_t k = 0; k < pd.joints.size(); ++k) {
    const PartJoint& p = pd.joints[k];
    const double pooled = p.kind == JointKind::Prismatic ? p.ref_disp : p.ref_angle;
    std::array<std::optional<double>, 2> v;
    for (int s = 0; s < 2; ++s) {
      std::vector<std::size_t> members;
      const auto& lab = r.sets[std::size_t(s)].labels;
      for (std::size_t i = 0; i < lab.size(); ++i)
        if (lab[i] == int(k) + 1) members.push_back(i);
      if (!members.empty()) v[std::size_t(s)] = signed_value(merged_joints[std::size_t(s)], members, p);
    }
    for (int s = 0; s < 2; ++s) values[k][std::size_t(s)] = v[std::size_t(s)].value_or(v[std::size_t(1 - s)].value_or(pooled));
  }
  for (int s = 0; s < 2; ++s) {
    GaussianSet& set = r.sets[std::size_t(s)];
    set.parts = pd.joints;
    set.values = values;
    for (std::size_t k = 0; k < set.parts.size(); ++k)
      (set.parts[k].kind == JointKind::Prismatic ? set.parts[k].ref_disp : set.parts[k].ref_angle) = values[k][std::size_t(s)];
    set.validate();
  }
  r.maps = std::move(maps);
  return r;
}

/// Single forward pass over V views per state (state 0 first), then `reconstruct`.
inline Reconstruction infer(const model::Model& m, const ag::Tensor& images, int views, const InferOptions& opt = {}) {
  ag::NoGradGuard guard;
  return reconstruct(dense_maps(m.forward(images, views, 2)), opt);
}

// ---------------------------------------------------------------- evaluation protocol

inline double elevation_deg(const CameraPose& c) { return rad2deg(std::asin(std::clamp(c.t.z() / c.t.norm(), -1.0, 1.0))); }

struct EvalProtocol {
  int views_per_state = 4;
  double elev_lo = 5.0;
  double elev_hi = 60.0;
  int sh_degree = kShDegree;
  Vec3 background = Vec3::Ones();
  double surface_density = 4000.0;  // GT samples per unit area, world units
  InferOptions infer;
};

/// The two bundle states evaluated and the input views chosen for each.
struct EvalInputs {
  std::array<int, 2> states{0, 1};
  std::array<std::vector<int>, 2> views;
};

/// Input views are drawn per state from cameras whose elevation lies in the protocol band,
/// with view 0 of state 0 anchoring the canonical frame.
inline EvalInputs choose_inputs(const ObjectSample& o, const EvalProtocol& p, std::uint64_t seed) {
  if (o.num_states() < 2) throw InvalidInput("eval: object needs two states");
  std::vector<int> eligible;
  for (int v = 0; v < o.num_views(); ++v) {
    const double e = elevation_deg(o.cams[std::size_t(v)]);
    if (e >= p.elev_lo && e <= p.elev_hi) eligible.push_back(v);
  }
  if (int(eligible.size()) < p.views_per_state)
    throw InvalidInput("eval: only " + std::to_string(eligible.size()) + " cameras inside the input elevation band");
  std::mt19937_64 rng(seed);
  EvalInputs in;
  for (int s = 0; s < 2; ++s) {
    std::vector<int> pick = eligible;
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(std::size_t(p.views_per_state));
    in.views[std::size_t(s)] = pick;
  }
  return in;
}

inline train::Sample eval_sample(const ObjectSample& o, const EvalInputs& in) {
  return train::make_sample(o, in.states, in.views, 0, nullptr);
}

/// GT-derived dense maps: GT canonical depth and cameras, GT joint maps, small isotropic
/// splats colored by the input pixels.
inline DenseMaps gt_maps(const train::Sample& s, const ObjectSample& o, const EvalInputs& in) {
  DenseMaps d;
  d.views = s.views;
  const std::size_t P = s.pixels();
  for (int b = 0; b < 2 * s.views; ++b) {
    const RenderedFrame& f = o.frame(in.states[std::size_t(b / s.views)], in.views[std::size_t(b / s.views)][std::size_t(b % s.views)]);
    Grid<double> depth(s.height, s.width);
    std::copy(s.depth.begin() + std::ptrdiff_t(b * P), s.depth.begin() + std::ptrdiff_t((b + 1) * P), depth.data.begin());
    const CameraPose& cam = s.cams[std::size_t(b)];
    d.points.push_back(unproject(depth, cam));
    Grid<double> attrs(s.height, s.width, kGaussianAttrs), conf(s.height, s.width);
    const double footprint = 2.0 * std::tan(0.5 * cam.f.x()) / s.width;
    for (std::size_t i = 0; i < P; ++i) {
      if (!s.fg[std::size_t(b) * P + i]) continue;
      conf.data[i] = 1.0;
      double* a = attrs.pixel(i);
      const double ls = std::log(0.5 * footprint * depth.data[i]);
      a[0] = a[1] = a[2] = ls;
      a[3] = 1.0;
      a[7] = 3.0;
      for (int c = 0; c < 3; ++c) a[8 + c * kShCoeffsPerChannel] = sh_from_rgb(f.rgb.pixel(i)[c] / 255.0);
    }
    d.attrs.push_back(std::move(attrs));
    d.conf.push_back(std::move(conf));
    d.joints.push_back(s.joints[std::size_t(b)]);
    d.cams.push_back(cam);
  }
  return d;
}

struct ObjectMetrics {
  std::string name;
  double cd_w = 0, cd_s = 0;
  std::optional<double> cd_m;
  double ang = 0;
  std::optional<double> pos;
  double psnr = 0, ssim = 0;
  double psnr_static = 0;  // un-articulated source set at the same targets
  double type_accuracy = 0;
  int parts = 0;
};

inline Grid<double> to_unit(const Grid<std::uint8_t>& img) {
  Grid<double> g(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = img.data[i] / 255.0;
  return g;
}

/// Per-part targets taken from the set's values at `state`.
inline std::vector<double> targets_at(const GaussianSet& g, double state) {
  std::vector<double> t;
  for (const auto& v : g.values) t.push_back(std::lerp(v[0], v[1], state));
  return t;
}

inline std::vector<Gaussian3D> articulate_to(const GaussianSet& g, double state) {
  return articulate_set(g.gaussians, g.labels, g.parts, targets_at(g, state));
}

/// Scores a reconstruction against the bundle's GT: CD over both states, axis errors,
/// and novel-view quality of each state's Gaussians articulated into the other state.
inline ObjectMetrics evaluate(const Reconstruction& r, const ObjectSample& o, const EvalInputs& in, const train::Sample& s,
                              const EvalProtocol& p, std::uint64_t seed) {
  ObjectMetrics m;
  m.parts = int(r.sets[0].parts.size());
  const CanonicalFrame& cf = s.frame;

  // Joint-type pixel accuracy over GT foreground of the input views.
  std::size_t hit = 0, total = 0;
  for (std::size_t b = 0; b < r.maps.joints.size(); ++b)
    for (std::size_t i = 0; i < s.pixels(); ++i) {
      if (!s.fg[b * s.pixels() + i]) continue;
      ++total;
      hit += argmax_kind(r.maps.joints[b].vector(i).data()) == argmax_kind(s.joints[b].vector(i).data());
    }
  m.type_accuracy = total ? double(hit) / double(total) : 0.0;

  std::array<std::vector<Vec3>, 2> gt_pts;
  std::array<std::vector<int>, 2> gt_lab;
  Vec3 centroid = Vec3::Zero();
  for (int k = 0; k < 2; ++k) {
    const auto samples = sample_surface(o.scene, o.states[std::size_t(in.states[std::size_t(k)])], p.surface_density, seed + std::uint64_t(k));
    for (const auto& [x, l] : samples) {
      gt_pts[std::size_t(k)].push_back(cf.point(x));
      gt_lab[std::size_t(k)].push_back(l);
      if (k == 0) centroid += cf.point(x);
    }
  }
  centroid /= double(gt_pts[0].size());
  double radius = 0.0;
  for (const Vec3& x : gt_pts[0]) radius = std::max(radius, (x - centroid).norm());

  std::vector<int> assignment;
  const metrics::JointScores js = metrics::score_joints(r.sets[0].parts, s.gt_joints, radius, &assignment);
  m.ang = js.ang_deg;
  m.pos = js.pos;

  double cd_m_sum = 0;
  for (int k = 0; k < 2; ++k) {
    std::vector<Vec3> mu;
    for (const Gaussian3D& g : r.sets[std::size_t(k)].gaussians) mu.push_back(g.mu);
    const metrics::ChamferSuite cs = metrics::cd_suite(mu, r.sets[std::size_t(k)].labels, gt_pts[std::size_t(k)], gt_lab[std::size_t(k)], assignment, radius);
    m.cd_w += 0.5 * cs.whole;
    m.cd_s += 0.5 * cs.stat;
    if (cs.movable) cd_m_sum += 0.5 * *cs.movable;
  }
  if (!s.gt_joints.empty()) m.cd_m = cd_m_sum;

  RenderSettings rs;
  rs.width = s.width;
  rs.height = s.height;
  rs.sh_degree = p.sh_degree;
  rs.background = p.background;
  const auto targets = evaluation_cameras(o.cams[0].t.norm(), seed ^ 0x9e3779b97f4a7c15ULL, o.cams[0].f.x());
  int count = 0;
  for (int k = 0; k < 2; ++k) {
    const GaussianSet& src = r.sets[std::size_t(1 - k)];
    const auto moved = articulate_to(src, double(k));
    const std::vector<double>& state = o.states[std::size_t(in.states[std::size_t(k)])];
    for (const CameraPose& tc : targets) {
      const Grid<double> gt = to_unit(raycast_frame(o.scene, state, tc, s.width, s.height).rgb);
      const CameraPose cc = cf.camera(tc);
      const Grid<double> img = rasterize(moved, cc, rs).image();
      m.psnr += metrics::psnr(img, gt);
      m.ssim += metrics::ssim(img, gt);
      m.psnr_static += metrics::psnr(rasterize(src.gaussians, cc, rs).image(), gt);
      ++count;
    }
  }
  m.psnr /= count;
  m.ssim /= count;
  m.psnr_static /= count;
  return m;
}

inline const char* kMetricsHeader = "object,CD-w,CD-s,CD-m,Ang_m,Pos_m,PSNR,SSIM";

inline std::string format_metrics(const ObjectMetrics& m) {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream o;
    o.precision(9);
    o << *v;
    return o.str();
  };
  std::ostringstream o;
  o.precision(9);
  o << m.name << "," << m.cd_w << "," << m.cd_s << "," << opt(m.cd_m) << "," << m.ang << "," << opt(m.pos) << "," << m.psnr << "," << m.ssim;
  return o.str();
}

/// Column means; optional columns average over the objects that report them.
inline ObjectMetrics mean_metrics(std::span<const ObjectMetrics> rows, const std::string& name) {
  ObjectMetrics out;
  out.name = name;
  if (rows.empty()) return out;
  double cd_m = 0, pos = 0;
  int n_cd_m = 0, n_pos = 0;
  for (const ObjectMetrics& r : rows) {
    out.cd_w += r.cd_w;
    out.cd_s += r.cd_s;
    out.ang += r.ang;
    out.psnr += r.psnr;
    out.ssim += r.ssim;
    out.psnr_static += r.psnr_static;
    out.type_accuracy += r.type_accuracy;
    if (r.cd_m) cd_m += *r.cd_m, ++n_cd_m;
    if (r.pos) pos += *r.pos, ++n_pos;
  }
  const double n = double(rows.size());
  out.cd_w /= n;
  out.cd_s /= n;
  out.ang /= n;
  out.psnr /= n;
  out.ssim /= n;
  out.psnr_static /= n;
  out.type_accuracy /= n;
  if (n_cd_m) out.cd_m = cd_m / n_cd_m;
  if (n_pos) out.pos = pos / n_pos;
  return out;
}

/// Full protocol for one object with a trained model.
inline ObjectMetrics evaluate_model(const model::Model& m, const ObjectSample& o, const EvalProtocol& p, std::uint64_t seed) {
  const EvalInputs in = choose_inputs(o, p, seed);
  const train::Sample s = eval_sample(o, in);
  return evaluate(infer(m, s.images, s.views, p.infer), o, in, s, p, seed);
}

// ---------------------------------------------------------------- articulation sweeps

/// Renders `g` at `steps` evenly spaced normalized states in [0, 1] from its reference view.
inline std::vector<Grid<double>> sweep(const GaussianSet& g, int steps, const RenderSettings& rs) {
  if (steps < 1) throw InvalidInput("sweep: steps must be >= 1");
  std::vector<Grid<double>> out;
  for (int i = 0; i < steps; ++i) {
    const double s = steps == 1 ? 0.0 : double(i) / double(steps - 1);
    out.push_back(rasterize(articulate_to(g, s), g.view, rs).image());
  }
  return out;
}

}  // namespace artikin::pipeline
