#pragma once

// Two-stage trainer: training samples drawn from rendered objects, AdamW with warm-up and
// cosine decay, differentiable GT-label articulation for the stage-2 rendering loss.

#include "artikin/articulate.hpp"
#include "artikin/losses.hpp"
#include "artikin/model.hpp"
#include "artikin/render.hpp"
#include "artikin/synth.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace artikin::train {

using ag::Tensor;

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- configuration

struct TrainConfig {
  std::uint64_t seed = 0;
  int stage1_iters = 2000;
  int stage2_iters = 500;
  int warmup = 100;
  double lr = 1e-4;
  double min_lr = 1e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double clip = 0.5;
  int views = 4;  // input views per state
  int sh_degree = kShDegree;
  losses::LossWeights weights;
  model::ModelConfig model;

  void validate() const {
    if (stage1_iters < 0 || stage2_iters < 0 || warmup < 0) throw InvalidInput("config: iteration counts must be >= 0");
    if (!(lr > 0) || !(min_lr >= 0) || min_lr > lr) throw InvalidInput("config: need 0 <= min_lr <= lr, lr > 0");
    if (!(weight_decay >= 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw InvalidInput("config: invalid optimizer settings");
    if (!(clip > 0)) throw InvalidInput("config: clip must be positive");
    if (views < 1) throw InvalidInput("config: views must be >= 1");
    if (sh_degree < 0 || sh_degree > kShDegree) throw InvalidInput("config: sh_degree must be in [0, 4]");
    weights.validate();
    model.validate();
  }

  /// Key = value lines; '#' starts a comment. Unknown keys are errors.
  static TrainConfig parse(std::istream& in) {
    TrainConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) throw InvalidInput("config line " + std::to_string(lineno) + ": expected key = value");
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno);
    }
    c.validate();
    return c;
  }

  static TrainConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("cannot open config " + path);
    return parse(f);
  }

  std::string to_string() const {
    std::ostringstream o;
    o.precision(17);
    for (const auto& [k, v] : entries()) o << k << " = " << v << "\n";
    return o.str();
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries() const {
    auto s = [](auto v) {
      std::ostringstream o;
      o.precision(17);
      o << v;
      return o.str();
    };
    const auto& w = weights;
    const auto& m = model;
    return {{"seed", s(seed)},
            {"stage1_iters", s(stage1_iters)},
            {"stage2_iters", s(stage2_iters)},
            {"warmup", s(warmup)},
            {"lr", s(lr)},
            {"min_lr", s(min_lr)},
            {"weight_decay", s(weight_decay)},
            {"beta1", s(beta1)},
            {"beta2", s(beta2)},
            {"clip", s(clip)},
            {"views", s(views)},
            {"sh_degree", s(sh_degree)},
            {"w_pose", s(w.pose)},
            {"w_depth", s(w.depth)},
            {"w_joint", s(w.joint)},
            {"w_consist", s(w.consist)},
            {"w_smooth", s(w.smooth)},
            {"w_rgb", s(w.rgb)},
            {"w_mask", s(w.mask)},
            {"dim", s(m.dim)},
            {"layers", s(m.layers)},
            {"heads", s(m.heads)},
            {"mlp_ratio", s(m.mlp_ratio)},
            {"dec_channels", s(m.dec_channels)},
            {"taps", s(m.taps[0]) + "," + s(m.taps[1]) + "," + s(m.taps[2]) + "," + s(m.taps[3])},
            {"use_csa", m.use_csa ? "1" : "0"},
            {"use_state", m.use_state ? "1" : "0"}};
  }

  void set(const std::string& key, const std::string& value, int lineno) {
    auto fail = [&](const std::string& why) { throw InvalidInput("config line " + std::to_string(lineno) + " (" + key + "): " + why); };
    auto num = [&]() {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(value, &pos);
      } catch (const std::exception&) {
        fail("not a number");
      }
      if (pos != value.size()) fail("trailing characters");
      return v;
    };
    auto integer = [&]() {
      const double v = num();
      if (v != std::floor(v) || std::abs(v) > 1e15) fail("not an integer");
      return static_cast<long long>(v);
    };
    auto flag = [&]() {
      if (value == "1" || value == "true") return true;
      if (value == "0" || value == "false") return false;
      fail("expected 0/1 or true/false");
      return false;
    };
    auto& w = weights;
    auto& m = model;
    if (key == "seed") {
      if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) fail("expected an unsigned integer");
      seed = std::stoull(value);
    } else if (key == "stage1_iters") stage1_iters = int(integer());
    else if (key == "stage2_iters") stage2_iters = int(integer());
    else if (key == "warmup") warmup = int(integer());
    else if (key == "lr") lr = num();
    else if (key == "min_lr") min_lr = num();
    else if (key == "weight_decay") weight_decay = num();
    else if (key == "beta1") beta1 = num();
    else if (key == "beta2") beta2 = num();
    else if (key == "clip") clip = num();
    else if (key == "views") views = int(integer());
    else if (key == "sh_degree") sh_degree = int(integer());
    else if (key == "w_pose") w.pose = num();
    else if (key == "w_depth") w.depth = num();
    else if (key == "w_joint") w.joint = num();
    else if (key == "w_consist") w.consist = num();
    else if (key == "w_smooth") w.smooth = num();
    else if (key == "w_rgb") w.rgb = num();
    else if (key == "w_mask") w.mask = num();
    else if (key == "dim") m.dim = int(integer());
    else if (key == "layers") m.layers = int(integer());
    else if (key == "heads") m.heads = int(integer());
    else if (key == "mlp_ratio") m.mlp_ratio = int(integer());
    else if (key == "dec_channels") m.dec_channels = int(integer());
    else if (key == "taps") {
      std::istringstream ss(value);
      std::string tok;
      int i = 0;
      while (std::getline(ss, tok, ',')) {
        if (i >= 4) fail("expected four comma-separated layers");
        std::size_t pos = 0;
        try {
          m.taps[std::size_t(i++)] = std::stoi(tok, &pos);
        } catch (const std::exception&) {
          fail("not an integer list");
        }
      }
      if (i != 4) fail("expected four comma-separated layers");
    } else if (key == "use_csa") m.use_csa = flag();
    else if (key == "use_state") m.use_state = flag();
    else fail("unknown key");
  }
};

// ---------------------------------------------------------------- schedule and optimizer

/// Linear warm-up to `base` over `warmup` steps, then cosine decay to `floor` at the last step.
struct Schedule {
  double base = 1e-4, floor = 1e-5;
  int warmup = 0, total = 1;

  double lr(int step) const {
    if (warmup > 0 && step < warmup) return base * double(step + 1) / double(warmup);
    const int span = total - 1 - warmup;
    if (span <= 0) return base;
    const double t = std::clamp(double(step - warmup) / double(span), 0.0, 1.0);
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(kPi * t));
  }
};

/// Adam moments with decoupled weight decay on matrix-shaped parameters.
class AdamW {
 public:
  AdamW(model::Params& params, double beta1, double beta2, double weight_decay, double eps = 1e-8)
      : params_(params), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {
    for (const auto& [_, t] : params_.all()) {
      m_.emplace_back(std::size_t(t.numel()), 0.0);
      v_.emplace_back(std::size_t(t.numel()), 0.0);
    }
  }

  /// Global gradient L2 norm; parameters without a gradient count as zero.
  double grad_norm() const {
    double s = 0;
    for (const auto& [_, t] : params_.all())
      if (t.has_grad())
        for (double g : t.grad()) s += g * g;
    return std::sqrt(s);
  }

  void clip(double max_norm) {
    const double n = grad_norm();
    if (n <= max_norm || n == 0) return;
    const double k = max_norm / n;
    for (auto& [_, t] : params_.all())
      if (t.has_grad())
        for (double& g : t.node().grad) g *= k;
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    auto& all = params_.all();
    for (std::size_t k = 0; k < all.size(); ++k) {
      Tensor& p = all[k].second;
      if (!p.has_grad()) continue;
      const bool decay = p.shape().size() >= 2;
      auto val = p.mutable_data();
      const auto g = p.grad();
      for (std::size_t i = 0; i < val.size(); ++i) {
        m_[k][i] = b1_ * m_[k][i] + (1 - b1_) * g[i];
        v_[k][i] = b2_ * v_[k][i] + (1 - b2_) * g[i] * g[i];
        double upd = (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
        if (decay) upd += wd_ * val[i];
        val[i] -= lr * upd;
      }
    }
  }

  int steps() const { return t_; }

 private:
  model::Params& params_;
  double b1_, b2_, wd_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------- samples

/// One training example: V views in each of two states of one object, in the canonical
/// frame of the first image, plus a stage-2 render target.
struct Sample {
  Tensor images;  // [2V,H,W,3]
  int views = 0, height = 0, width = 0;
  CanonicalFrame frame;
  std::vector<CameraPose> cams;        // canonical GT, per image
  std::vector<double> depth;           // canonical GT depth per pixel of every image
  std::vector<std::uint8_t> fg;
  std::vector<JointMap> joints;
  std::vector<PartLabelMap> labels;
  std::vector<int> states;             // 0/1 per image
  std::vector<PartJoint> gt_joints;    // canonical, with ref values of state 0
  std::array<std::vector<double>, 2> values;  // canonical joint values per state (rad or scaled length)
  int src_state = 0;                   // stage 2: Gaussians from this state, rendered at the other
  CameraPose target_cam;
  Tensor target_rgb;                   // [H*W,3]

  std::size_t pixels() const { return std::size_t(height) * width; }
};

inline Tensor rgb_tensor(const Grid<std::uint8_t>& img) {
  std::vector<double> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.data[i] / 255.0;
  return Tensor::constant({std::int64_t(img.height) * img.width, 3}, std::move(v));
}

/// Canonical joint values (angle in radians, displacement divided by r_bar) at `state`.
inline std::vector<double> canonical_values(const ArticulatedScene& scene, std::span<const double> state, double r_bar) {
  std::vector<double> out;
  for (std::size_t k = 0; k < scene.joints.size(); ++k) {
    const double v = scene.joints[k].value(state[k]);
    out.push_back(scene.joints[k].kind == JointKind::Prismatic ? v / r_bar : v);
  }
  return out;
}

/// Builds a sample from the given (state, view) frames; `target` is the stage-2 frame
/// (pass nullptr to skip).
inline Sample make_sample(const ObjectSample& obj, std::array<int, 2> state_ids, const std::array<std::vector<int>, 2>& view_ids,
                          int src_state, const RenderedFrame* target) {
  Sample s;
  s.views = int(view_ids[0].size());
  if (s.views < 1 || view_ids[1].size() != view_ids[0].size()) throw InvalidInput("make_sample: equal, non-zero view counts required");
  std::vector<const RenderedFrame*> frames;
  for (int k = 0; k < 2; ++k)
    for (int v : view_ids[std::size_t(k)]) frames.push_back(&obj.frame(state_ids[std::size_t(k)], v));
  s.height = frames[0]->rgb.height;
  s.width = frames[0]->rgb.width;
  std::vector<PointMap> world;
  std::vector<CameraPose> cams_world;
  for (const RenderedFrame* f : frames) {
    world.push_back(unproject(f->depth, f->cam));
    cams_world.push_back(f->cam);
  }
  const CanonicalScene cs = canonicalize(world, cams_world);
  s.frame = cs.frame;
  s.cams = cs.cams;
  std::vector<const Grid<std::uint8_t>*> rgb;
  for (std::size_t b = 0; b < frames.size(); ++b) {
    const RenderedFrame& f = *frames[b];
    rgb.push_back(&f.rgb);
    for (std::size_t i = 0; i < f.depth.data.size(); ++i) {
      s.depth.push_back(f.depth.data[i] / s.frame.r_bar);
      s.fg.push_back(f.labels.labels.data[i] >= 0);
    }
    s.joints.push_back(build_gt_joint_map(f, obj.scene, frames[0]->cam, s.frame.r_bar));
    s.labels.push_back(f.labels);
    s.states.push_back(int(b) / s.views);
  }
  s.images = model::images_tensor(rgb);
  for (const SceneJoint& j : obj.scene.joints) s.gt_joints.push_back(canonical_joint(j, s.frame));
  for (int k = 0; k < 2; ++k) s.values[std::size_t(k)] = canonical_values(obj.scene, obj.states[std::size_t(state_ids[std::size_t(k)])], s.frame.r_bar);
  for (std::size_t k = 0; k < s.gt_joints.size(); ++k) {
    if (s.gt_joints[k].kind == JointKind::Revolute) s.gt_joints[k].ref_angle = s.values[0][k];
    else s.gt_joints[k].ref_disp = s.values[0][k];
  }
  s.src_state = src_state;
  if (target) {
    s.target_cam = s.frame.camera(target->cam);
    s.target_rgb = rgb_tensor(target->rgb);
  }
  return s;
}

/// Random sample: two distinct states, `views` distinct cameras per state drawn
/// independently, random source state, and a random target camera in the other state.
inline Sample random_sample(const ObjectSample& obj, int views, std::mt19937_64& rng) {
  const int S = obj.num_states(), C = obj.num_views();
  if (S < 2) throw InvalidInput("random_sample: object needs at least two states");
  if (views > C) throw InvalidInput("random_sample: more views requested than cameras");
  std::uniform_int_distribution<int> ps(0, S - 1);
  const int a = ps(rng);
  int b = ps(rng);
  while (b == a) b = ps(rng);
  std::array<std::vector<int>, 2> vids;
  for (auto& v : vids) {
    std::vector<int> all(static_cast<std::size_t>(C));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    v.assign(all.begin(), all.begin() + views);
  }
  const int src = std::uniform_int_distribution<int>(0, 1)(rng);
  const int tcam = std::uniform_int_distribution<int>(0, C - 1)(rng);
  const int tstate = src == 0 ? b : a;
  return make_sample(obj, {a, b}, vids, src, &obj.frame(tstate, tcam));
}

// ---------------------------------------------------------------- differentiable articulation

/// Per-pixel Gaussians on GT-foreground pixels of the source-state images, placed with
/// the GT cameras and the predicted depth. `part_of_row` receives each row's GT label.
inline GaussianTensors source_gaussians(const model::ModelOutput& o, const Sample& s, std::vector<int>* part_of_row,
                                                std::vector<std::int64_t>* pixel_rows) {
  std::vector<std::int64_t> rows;
  std::vector<double> rays;
  std::vector<double> origin;
  std::vector<int> parts;
  const std::size_t P = s.pixels();
  for (int v = 0; v < s.views; ++v) {
    const int b = s.src_state * s.views + v;
    const CameraPose& cam = s.cams[std::size_t(b)];
    const Intrinsics k = Intrinsics::from_fov(cam.f, s.width, s.height);
    const Mat3 R = cam.rotation();
    for (std::size_t i = 0; i < P; ++i) {
      const int l = s.labels[std::size_t(b)].labels.data[i];
      if (l < 0) continue;
      rows.push_back(std::int64_t(b * P + i));
      const Vec3 r = R * pixel_ray(k, int(i % s.width), int(i / s.width));
      rays.insert(rays.end(), {r.x(), r.y(), r.z()});
      origin.insert(origin.end(), {cam.t.x(), cam.t.y(), cam.t.z()});
      parts.push_back(l);
    }
  }
  const std::int64_t n = std::int64_t(rows.size());
  const Tensor d = ag::gather_rows(o.depth, rows);
  const Tensor attrs = ag::gather_rows(o.attrs, rows);
  GaussianTensors g;
  g.mu = ag::concat_cols({d, d, d}) * Tensor::constant({n, 3}, rays) + Tensor::constant({n, 3}, origin);
  g.log_scale = ag::slice_cols(attrs, 0, 3);
  g.rot = ag::normalize_rows(ag::slice_cols(attrs, 3, 7));
  g.alpha = ag::sigmoid(ag::slice_cols(attrs, 7, 8));
  g.sh = ag::slice_cols(attrs, 8, kGaussianAttrs);
  if (part_of_row) *part_of_row = std::move(parts);
  if (pixel_rows) *pixel_rows = std::move(rows);
  return g;
}

namespace detail {

/// Left quaternion multiplication q ⊗ r for rows r [n,4], q [1,4].
inline Tensor quat_mul_left(const Tensor& q, const Tensor& r) {
  auto c = [&](int i) { return ag::slice_cols(q, i, i + 1); };
  const Tensor w = c(0), x = c(1), y = c(2), z = c(3);
  const Tensor L = ag::concat_rows({ag::concat_cols({w, -x, -y, -z}), ag::concat_cols({x, w, -z, y}), ag::concat_cols({y, z, w, -x}),
                                    ag::concat_cols({z, -y, x, w})});
  return ag::matmul(r, ag::transpose(L));
}

}  // namespace detail

/// Moves each GT part of `g` from the predicted joint state to the target value. Rows of
/// `joints` align with rows of `g`; the part's axis, pivot and current value are means of
/// the predicted channels over its rows, with axis signs aligned to the GT axis.
inline GaussianTensors articulate_tensors(const GaussianTensors& g, const Tensor& joints, std::span<const int> parts,
                                                  std::span<const PartJoint> gt, std::span<const double> targets) {
  std::map<int, std::vector<std::int64_t>> groups;
  for (std::size_t i = 0; i < parts.size(); ++i) groups[parts[i]].push_back(std::int64_t(i));
  std::vector<Tensor> mu_parts, rot_parts;
  std::vector<std::int64_t> order;
  for (const auto& [label, idx] : groups) {
    const Tensor mu = ag::gather_rows(g.mu, idx), rot = ag::gather_rows(g.rot, idx);
    order.insert(order.end(), idx.begin(), idx.end());
    const PartJoint* j = label >= 1 && std::size_t(label) <= gt.size() ? &gt[std::size_t(label - 1)] : nullptr;
    if (!j || j->kind == JointKind::Static) {
      mu_parts.push_back(mu);
      rot_parts.push_back(rot);
      continue;
    }
    const Tensor jr = ag::gather_rows(joints, idx);
    std::vector<double> sign(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Vec3 a;
      for (int c = 0; c < 3; ++c) a[c] = jr[i * kJointChannels + kChAxis + std::size_t(c)];
      sign[i] = a.dot(j->axis) < 0 ? -1.0 : 1.0;
    }
    const std::int64_t n = std::int64_t(idx.size());
    const Tensor sg = Tensor::constant({n, 1}, sign);
    auto mean = [](const Tensor& t) { return ag::reshape(ag::mean_rows(t), {1, t.cols()}); };
    const Tensor axis = ag::normalize_rows(mean(ag::slice_cols(jr, kChAxis, kChAxis + 3) * ag::concat_cols({sg, sg, sg})));
    const int vc = j->kind == JointKind::Revolute ? kChAngle : kChDisp;
    const Tensor value = mean(ag::slice_cols(jr, vc, vc + 1) * sg);
    const Tensor delta = ag::neg(value) + targets[std::size_t(label - 1)];
    if (j->kind == JointKind::Revolute) {
      const Tensor pivot = mean(ag::slice_cols(jr, kChPivot, kChPivot + 3));
      const Tensor half = delta * 0.5;
      const Tensor q = ag::concat_cols({ag::cos(half), axis * ag::reshape(ag::sin(half), {1})});
      const Tensor R = ag::reshape(render_detail::quat_to_rotmat(q), {3, 3});
      mu_parts.push_back(ag::matmul(mu - pivot, ag::transpose(R)) + pivot);
      rot_parts.push_back(detail::quat_mul_left(q, rot));
    } else {
      mu_parts.push_back(mu + axis * ag::reshape(delta, {1}));
      rot_parts.push_back(rot);
    }
  }
  std::vector<std::int64_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[std::size_t(order[i])] = std::int64_t(i);
  GaussianTensors out = g;
  out.mu = ag::gather_rows(ag::concat_rows(mu_parts), inverse);
  out.rot = ag::gather_rows(ag::concat_rows(rot_parts), inverse);
  return out;
}

/// Stage-2 render of the articulated source Gaussians at the target camera, [H*W,3].
inline Tensor stage2_render(const model::ModelOutput& o, const Sample& s, int sh_degree) {
  std::vector<int> parts;
  std::vector<std::int64_t> rows;
  const GaussianTensors g = source_gaussians(o, s, &parts, &rows);
  const Tensor jr = ag::gather_rows(o.joints, rows);
  const GaussianTensors moved = articulate_tensors(g, jr, parts, s.gt_joints, s.values[std::size_t(1 - s.src_state)]);
  RenderSettings rs;
  rs.width = s.width;
  rs.height = s.height;
  rs.sh_degree = sh_degree;
  return rasterize(moved, s.target_cam, rs).rgb;
}

// ---------------------------------------------------------------- loss and loop

inline losses::LossTerms compute_terms(const model::ModelOutput& o, const Sample& s, int stage, int sh_degree) {
  losses::LossTerms t;
  t.pose = losses::loss_pose(o.cam, s.cams);
  t.depth = losses::loss_depth(o.depth, o.depth_conf, s.depth, s.fg);
  const losses::JointTargets jt{s.joints, s.labels};
  t.joint = losses::loss_joint(o.joints, jt);
  t.consist = losses::loss_consist(o.joints, s.labels, s.states);
  t.smooth = losses::loss_smooth(o.joints, s.labels);
  t.mask = losses::loss_mask(o.conf_logit, s.fg);
  if (stage == 2) t.rgb = losses::loss_rgb(stage2_render(o, s, sh_degree), s.target_rgb, s.height, s.width);
  return t;
}

struct StepLog {
  int stage = 1, iter = 0;
  double lr = 0, total = 0, grad_norm = 0;
  std::array<double, 7> terms{};  // pose depth joint consist smooth rgb mask
};

inline const char* kLogHeader = "stage,iter,lr,total,pose,depth,joint,consist,smooth,rgb,mask,grad_norm";

inline std::string format_log(const StepLog& l) {
  std::ostringstream o;
  o.precision(9);
  o << l.stage << "," << l.iter << "," << l.lr << "," << l.total;
  for (double v : l.terms) o << "," << v;
  o << "," << l.grad_norm;
  return o.str();
}

inline double value_or_nan(const Tensor& t) { return t.defined() ? t.item() : std::numeric_limits<double>::quiet_NaN(); }

/// One optimizer step on `s`. Throws TrainingDiverged on a non-finite loss or gradient.
inline StepLog train_step(model::Model& m, AdamW& opt, const Sample& s, const TrainConfig& cfg, int stage, int iter, double lr) {
  m.params().zero_grad();
  const model::ModelOutput o = m.forward(s.images, s.views, 2);
  const losses::LossTerms t = compute_terms(o, s, stage, cfg.sh_degree);
  const Tensor total = losses::stage_loss(t, cfg.weights, stage);
  StepLog log;
  log.stage = stage;
  log.iter = iter;
  log.lr = lr;
  log.total = total.item();
  log.terms = {value_or_nan(t.pose), value_or_nan(t.depth), value_or_nan(t.joint), value_or_nan(t.consist),
               value_or_nan(t.smooth), value_or_nan(t.rgb), value_or_nan(t.mask)};
  const std::string where = "stage " + std::to_string(stage) + " iteration " + std::to_string(iter);
  if (!std::isfinite(log.total)) throw TrainingDiverged("non-finite loss at " + where + ": " + format_log(log));
  total.backward();
  log.grad_norm = opt.grad_norm();
  if (!std::isfinite(log.grad_norm)) throw TrainingDiverged("non-finite gradient at " + where + ": " + format_log(log));
  opt.clip(cfg.clip);
  opt.step(lr);
  return log;
}

/// Runs one stage on `data` for its configured iteration count with its own warm-up +
/// cosine schedule. `on_step` sees every logged row.
inline void run_stage(model::Model& m, const TrainConfig& cfg, std::span<const ObjectSample> data, int stage,
                      const std::function<void(const StepLog&)>& on_step = {}) {
  cfg.validate();
  if (stage != 1 && stage != 2) throw InvalidInput("stage must be 1 or 2");
  if (data.empty()) throw InvalidInput("train: empty dataset");
  const int iters = stage == 1 ? cfg.stage1_iters : cfg.stage2_iters;
  std::mt19937_64 rng(cfg.seed * 1000003ULL + std::uint64_t(stage));
  AdamW opt(m.params(), cfg.beta1, cfg.beta2, cfg.weight_decay);
  const Schedule sched{cfg.lr, cfg.min_lr, std::min(cfg.warmup, std::max(iters - 1, 0)), iters};
  for (int it = 0; it < iters; ++it) {
    const ObjectSample& obj = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
    const Sample s = random_sample(obj, cfg.views, rng);
    const StepLog log = train_step(m, opt, s, cfg, stage, it, sched.lr(it));
    if (on_step) on_step(log);
  }
}

}  // namespace artikin::train
