#include "artikin/train.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace artikin::train {
namespace {

TEST(TrainConfig, ParseRoundTripAndErrors) {
  std::istringstream in("# comment\nseed = 7\nstage1_iters=12 # trailing\n\nlr = 0.002\nuse_csa = 0\ntaps = 1,1,2,2\nw_joint = 2.5\n");
  const TrainConfig c = TrainConfig::parse(in);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.stage1_iters, 12);
  EXPECT_DOUBLE_EQ(c.lr, 0.002);
  EXPECT_FALSE(c.model.use_csa);
  EXPECT_EQ(c.model.taps, (std::array<int, 4>{1, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(c.weights.joint, 2.5);
  EXPECT_DOUBLE_EQ(c.weights.pose, 3.0);
  std::istringstream again(c.to_string());
  EXPECT_EQ(TrainConfig::parse(again).to_string(), c.to_string());

  for (const char* bad : {"nonsense = 1", "lr = abc", "lr", "views = 2.5", "use_state = maybe", "lr = -1", "heads = 3", "seed = -4"}) {
    std::istringstream b(bad);
    EXPECT_THROW(TrainConfig::parse(b), InvalidInput) << bad;
  }
  EXPECT_THROW(TrainConfig::load("/nonexistent/config.txt"), InvalidInput);
}

TEST(Schedule, Endpoints) {
  const Schedule s{1e-4, 1e-5, 10, 100};
  EXPECT_DOUBLE_EQ(s.lr(0), 1e-4 / 10);
  EXPECT_DOUBLE_EQ(s.lr(10), 1e-4);
  EXPECT_NEAR(s.lr(99), 1e-5, 1e-18);
  for (int i = 10; i < 99; ++i) EXPECT_GE(s.lr(i), s.lr(i + 1));
  for (int i = 0; i < 9; ++i) EXPECT_LT(s.lr(i), s.lr(i + 1));
}

TEST(AdamW, FirstStepAndClipping) {
  model::Params p;
  p.add("w", {2, 2}, {1, 2, 3, 4});
  p.add("b", {2}, {1, -1});
  for (auto& [_, t] : p.all()) t.zero_grad();
  auto& gw = p.all()[0].second.node().grad;
  auto& gb = p.all()[1].second.node().grad;
  gw = {3, -4, 0, 0};
  gb = {0.5, 0};
  AdamW opt(p, 0.9, 0.95, 0.05);
  EXPECT_NEAR(opt.grad_norm(), std::sqrt(25.25), 1e-12);
  opt.clip(0.5);
  EXPECT_NEAR(opt.grad_norm(), 0.5, 1e-12);
  opt.step(0.1);
  // Bias-corrected first step moves by lr*sign(g) (+ decoupled decay on matrices only).
  const auto w = p["w"].data(), b = p["b"].data();
  EXPECT_NEAR(w[0], 1 - 0.1 * (1 + 0.05 * 1), 1e-6);
  EXPECT_NEAR(w[1], 2 - 0.1 * (-1 + 0.05 * 2), 1e-6);
  EXPECT_NEAR(w[2], 3 - 0.1 * 0.05 * 3, 1e-12);
  EXPECT_NEAR(b[0], 1 - 0.1, 1e-6);
  EXPECT_DOUBLE_EQ(b[1], -1.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Articulation, QuaternionProductMatchesScalar) {
  std::mt19937_64 rng(1);
  const Quat a = testing::random_quat(rng);
  std::vector<double> rows;
  std::vector<Quat> qs;
  for (int i = 0; i < 5; ++i) {
    qs.push_back(testing::random_quat(rng));
    rows.insert(rows.end(), {qs.back().w, qs.back().x, qs.back().y, qs.back().z});
  }
  const Tensor out = detail::quat_mul_left(Tensor::constant({1, 4}, std::vector<double>{a.w, a.x, a.y, a.z}), Tensor::constant({5, 4}, rows));
  for (int i = 0; i < 5; ++i) {
    const Quat r = a * qs[std::size_t(i)];
    EXPECT_NEAR(out[std::size_t(i * 4)], r.w, 1e-14);
    EXPECT_NEAR(out[std::size_t(i * 4 + 1)], r.x, 1e-14);
    EXPECT_NEAR(out[std::size_t(i * 4 + 2)], r.y, 1e-14);
    EXPECT_NEAR(out[std::size_t(i * 4 + 3)], r.z, 1e-14);
  }
}

// Per-row joint vectors equal to the GT joints at the source values, plus the Gaussians.
struct ArticulationCase {
  std::vector<Gaussian3D> gs;
  std::vector<int> labels;
  std::vector<PartJoint> joints;
  std::vector<double> targets;
  Tensor joint_rows;
};

ArticulationCase make_case(std::mt19937_64& rng) {
  ArticulationCase c;
  PartJoint rev;
  rev.kind = JointKind::Revolute;
  rev.axis = testing::random_unit(rng);
  rev.pivot = testing::random_vec(rng);
  rev.ref_angle = 0.3;
  PartJoint pri;
  pri.kind = JointKind::Prismatic;
  pri.axis = testing::random_unit(rng);
  pri.pivot = testing::random_vec(rng);
  pri.ref_disp = 0.1;
  c.joints = {rev, pri};
  c.targets = {1.2, 0.45};
  std::vector<double> jr;
  for (int i = 0; i < 30; ++i) {
    c.gs.push_back(testing::random_gaussian(rng));
    const int l = i % 3;
    c.labels.push_back(l);
    JointVector v = static_joint_vector();
    if (l > 0) {
      const PartJoint& j = c.joints[std::size_t(l - 1)];
      v = JointVector{};
      v[kChType + int(j.kind)] = 1;
      // Half of the rows carry the flipped axis with negated value.
      const double sg = i % 2 ? -1.0 : 1.0;
      for (int k = 0; k < 3; ++k) {
        v[kChAxis + k] = sg * j.axis[k];
        v[kChPivot + k] = j.pivot[k];
      }
      v[j.kind == JointKind::Revolute ? kChAngle : kChDisp] = sg * (j.kind == JointKind::Revolute ? j.ref_angle : j.ref_disp);
    }
    jr.insert(jr.end(), v.begin(), v.end());
  }
  c.joint_rows = Tensor::parameter({30, kJointChannels}, jr);
  return c;
}

TEST(Articulation, TensorPathMatchesScalarArticulation) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const ArticulationCase c = make_case(rng);
    const GaussianTensors g = GaussianTensors::from(c.gs, false);
    const GaussianTensors moved = articulate_tensors(g, c.joint_rows, c.labels, c.joints, c.targets);
    const auto want = articulate_set(c.gs, c.labels, c.joints, c.targets);
    for (std::size_t i = 0; i < c.gs.size(); ++i) {
      for (int k = 0; k < 3; ++k) ASSERT_NEAR(moved.mu[i * 3 + std::size_t(k)], want[i].mu[k], 1e-12);
      const Quat q = want[i].rot;
      const double s = moved.rot[i * 4] * q.w < 0 ? -1 : 1;
      ASSERT_NEAR(s * moved.rot[i * 4], q.w, 1e-12);
      ASSERT_NEAR(s * moved.rot[i * 4 + 1], q.x, 1e-12);
      ASSERT_NEAR(s * moved.rot[i * 4 + 2], q.y, 1e-12);
      ASSERT_NEAR(s * moved.rot[i * 4 + 3], q.z, 1e-12);
    }
  }
}

TEST(Articulation, GradientIntoJointChannels) {
  std::mt19937_64 rng(3);
  const ArticulationCase c = make_case(rng);
  const GaussianTensors g = GaussianTensors::from(c.gs, true);
  const Tensor w = testing::random_param(rng, {3});
  testing::expect_gradients_match(
      [&] {
        const auto m = articulate_tensors(g, c.joint_rows, c.labels, c.joints, c.targets);
        return ag::sum(ag::square(m.mu) * w) + ag::sum(m.rot * ag::concat_cols({m.mu, ag::slice_cols(m.mu, 0, 1)}));
      },
      {c.joint_rows, g.mu, g.rot}, 1e-4, 40, 1e-6);
}

SynthOptions sanity_options(int res) {
  SynthOptions o;
  o.res = res;
  o.states = 4;
  o.min_joints = 1;
  o.max_joints = 1;
  return o;
}

ObjectSample revolute_object(int res) {
  for (std::uint64_t seed = 0;; ++seed) {
    ObjectSample o = generate_object(seed, sanity_options(res));
    if (o.scene.joints[0].kind == JointKind::Revolute) return o;
  }
}

TEST(Sample, CanonicalConsistency) {
  const ObjectSample obj = revolute_object(32);
  std::mt19937_64 rng(4);
  const Sample s = random_sample(obj, 3, rng);
  EXPECT_EQ(s.images.shape(), (ag::Shape{6, 32, 32, 3}));
  EXPECT_EQ(s.cams.size(), 6u);
  EXPECT_EQ(s.states, (std::vector<int>{0, 0, 0, 1, 1, 1}));
  // First camera is the canonical origin.
  EXPECT_NEAR(s.cams[0].t.norm(), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(s.cams[0].q.w), 1.0, 1e-12);
  // Mean canonical foreground radius is 1.
  double sum = 0;
  std::size_t n = 0;
  for (int b = 0; b < 6; ++b) {
    DepthMap dm;
    dm.depth = Grid<double>(32, 32, 1);
    std::copy_n(s.depth.begin() + b * 1024, 1024, dm.depth.data.begin());
    const PointMap pm = unproject(dm, s.cams[std::size_t(b)]);
    for (std::size_t i = 0; i < pm.pixels(); ++i)
      if (pm.mask[i]) sum += pm.points[i].norm(), ++n;
  }
  EXPECT_NEAR(sum / double(n), 1.0, 1e-9);
  // GT joint maps satisfy the consistency and smoothness terms exactly.
  const Tensor jm = [&] {
    std::vector<double> v;
    for (const JointMap& j : s.joints) v.insert(v.end(), j.data.data.begin(), j.data.data.end());
    return Tensor::constant({std::int64_t(v.size() / kJointChannels), kJointChannels}, v);
  }();
  EXPECT_EQ(losses::loss_consist(jm, s.labels, s.states).item(), 0.0);
  EXPECT_EQ(losses::loss_smooth(jm, s.labels).item(), 0.0);
  EXPECT_EQ(s.target_rgb.shape(), (ag::Shape{1024, 3}));
}

// Model output whose per-pixel fields are fresh leaves, for gradient checks.
model::ModelOutput leaf_output(const model::ModelOutput& o) {
  model::ModelOutput c = o;
  c.depth = Tensor::parameter(o.depth.shape(), o.depth.values());
  c.attrs = Tensor::parameter(o.attrs.shape(), o.attrs.values());
  c.joints = Tensor::parameter(o.joints.shape(), o.joints.values());
  return c;
}

TEST(Stage2, RgbGradientIntoAngleChannel) {
  const ObjectSample obj = revolute_object(16);
  std::mt19937_64 rng(5);
  const Sample s = random_sample(obj, 2, rng);
  model::ModelConfig mc;
  mc.dim = 16;
  mc.heads = 2;
  mc.layers = 2;
  mc.taps = {0, 1, 2, 2};
  mc.dec_channels = 4;
  const model::Model m(mc, 5);
  model::ModelOutput o = leaf_output(m.forward(s.images, s.views, 2));
  // Plausible geometry: GT depth, visible splats, GT joint maps.
  auto depth = o.depth.mutable_data();
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = s.fg[i] ? s.depth[i] : 1.0;
  auto attrs = o.attrs.mutable_data();
  for (std::size_t i = 0; i < attrs.size() / kGaussianAttrs; ++i) {
    for (int k = 0; k < 3; ++k) attrs[i * kGaussianAttrs + std::size_t(k)] = std::log(0.05);
    attrs[i * kGaussianAttrs + 7] = 1.0;
  }
  auto jv = o.joints.mutable_data();
  for (std::size_t b = 0; b < s.joints.size(); ++b)
    for (std::size_t i = 0; i < s.joints[b].data.data.size(); ++i) jv[b * s.joints[b].data.data.size() + i] = s.joints[b].data.data[i] + 0.05;
  auto loss = [&] { return losses::loss_rgb(stage2_render(o, s, 1), s.target_rgb, s.height, s.width); };
  o.joints.zero_grad();
  o.depth.zero_grad();
  o.attrs.zero_grad();
  loss().backward();
  std::vector<std::size_t> idx;
  for (std::size_t b = std::size_t(s.src_state * s.views); b < std::size_t((s.src_state + 1) * s.views); ++b)
    for (std::size_t i = 0; i < s.pixels(); ++i)
      if (s.labels[b].labels.data[i] == 1 && idx.size() < 6 && i % 3 == 0) idx.push_back((b * s.pixels() + i) * kJointChannels + kChAngle);
  ASSERT_FALSE(idx.empty());
  const std::vector<double> g(o.joints.grad().begin(), o.joints.grad().end());
  const auto num = ag::numeric_gradient(o.joints, [&] { ag::NoGradGuard ng; return loss().item(); }, 1e-6, idx);
  double gsum = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_LT(testing::rel_err(g[idx[i]], num[i]), 1e-3) << g[idx[i]] << " vs " << num[i];
    gsum += std::abs(g[idx[i]]);
  }
  EXPECT_GT(gsum, 0.0);
  // Pivot and depth also receive gradients through the transform.
  testing::expect_gradients_match(loss, {o.depth}, 1e-3, 6, 1e-6);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.seed = 3;
  c.stage1_iters = 3;
  c.stage2_iters = 2;
  c.warmup = 1;
  c.views = 2;
  c.sh_degree = 1;
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.layers = 2;
  c.model.taps = {0, 1, 2, 2};
  c.model.dec_channels = 4;
  return c;
}

TEST(Trainer, DeterministicUnderSeed) {
  const std::vector<ObjectSample> data{revolute_object(16)};
  const TrainConfig cfg = tiny_config();
  std::vector<std::string> logs[2];
  std::vector<double> params[2];
  for (int r = 0; r < 2; ++r) {
    model::Model m(cfg.model, cfg.seed);
    for (int stage : {1, 2}) run_stage(m, cfg, data, stage, [&](const StepLog& l) { logs[r].push_back(format_log(l)); });
    for (const auto& [_, t] : m.params().all()) params[r].insert(params[r].end(), t.data().begin(), t.data().end());
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(params[0], params[1]);
  ASSERT_EQ(logs[0].size(), 5u);
  EXPECT_EQ(logs[0][3].substr(0, 4), "2,0,");
}

TEST(Trainer, NonFiniteLossAborts) {
  const std::vector<ObjectSample> data{revolute_object(16)};
  const TrainConfig cfg = tiny_config();
  model::Model m(cfg.model, 1);
  m.params().all()[0].second.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    run_stage(m, cfg, data, 1);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
  }
}

TEST(Trainer, OverfitsOneObject) {
  const ObjectSample obj = revolute_object(32);
  std::mt19937_64 rng(6);
  const Sample s = random_sample(obj, 2, rng);
  TrainConfig cfg = tiny_config();
  cfg.model.dim = 32;
  cfg.model.heads = 4;
  cfg.model.dec_channels = 16;
  model::Model m(cfg.model, cfg.seed);
  AdamW opt(m.params(), cfg.beta1, cfg.beta2, cfg.weight_decay);
  const int iters = 200;
  const Schedule sched{3e-3, 3e-4, 10, iters};
  std::vector<double> joint;
  for (int it = 0; it < iters; ++it) joint.push_back(train_step(m, opt, s, cfg, 1, it, sched.lr(it)).terms[2]);
  std::printf("L_joint %.4f -> %.4f\n", joint.front(), joint.back());
  EXPECT_LT(joint.back(), joint.front() / 10);
}

}  // namespace
}  // namespace artikin::train
