#include "artikin/model.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <chrono>

namespace artikin::model {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.dim = 16;
  c.heads = 2;
  c.layers = 2;
  c.taps = {0, 1, 2, 2};
  c.dec_channels = 4;
  return c;
}

Tensor random_images(std::mt19937_64& rng, int b, int h, int w, bool trainable = false) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(std::size_t(b) * h * w * 3);
  for (double& x : v) x = u(rng);
  return trainable ? Tensor::parameter({b, h, w, 3}, v) : Tensor::constant({b, h, w, 3}, v);
}

std::vector<double> rows_of(const Tensor& t, std::int64_t r0, std::int64_t r1) {
  const auto d = t.data();
  return {d.begin() + r0 * t.cols(), d.begin() + r1 * t.cols()};
}

void expect_near(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << i;
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = ModelConfig{};
  c.taps = {1, 2, 3, 5};
  EXPECT_THROW(c.validate(), InvalidInput);
  c = ModelConfig{};
  c.patch = 4;
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(Patchify, TokenCountAndPositionalEncoding) {
  ModelConfig cfg;
  Model m(cfg, 1);
  const TokenSet t = m.patchify(Tensor::constant({2, 64, 64, 3}, 0.0), 2);
  EXPECT_EQ(t.per_image, 64);
  EXPECT_EQ(t.patch.shape(), (ag::Shape{128, 128}));
  EXPECT_EQ(t.cam.shape(), (ag::Shape{2, 128}));
  // Zero image and zero embedding bias leave only the positional encoding.
  const auto pe = detail::positional_encoding(8, 8, 128);
  expect_near(rows_of(t.patch, 64, 128), pe, 1e-12);
  // Reference and non-reference camera tokens differ.
  EXPECT_NE(rows_of(t.cam, 0, 1), rows_of(t.cam, 1, 2));
}

TEST(Patchify, PixelGradient) {
  std::mt19937_64 rng(2);
  Model m(small_config(), 2);
  const Tensor img = random_images(rng, 2, 16, 16, true);
  const Tensor w = testing::random_param(rng, {8, 16});
  testing::expect_gradients_match([&] { return ag::sum(ag::square(m.patchify(img, 2).patch) * w); }, {img},
                                  1e-4, 20, 1e-6);
}

TEST(Backbone, NoLayersOnlyNormalizes) {
  ModelConfig cfg = small_config();
  cfg.layers = 0;
  cfg.taps = {0, 0, 0, 0};
  std::mt19937_64 rng(3);
  Model m(cfg, 3);
  const TokenSet in = m.patchify(random_images(rng, 4, 16, 16), 2);
  const TokenSet out = m.backbone(in);
  const Tensor want = ag::layernorm(in.patch, m.params()["final_ln.g"], m.params()["final_ln.b"]);
  expect_near(out.patch.values(), want.values(), 1e-12);
}

TEST(Backbone, EquivariantToViewOrderWithinAState) {
  std::mt19937_64 rng(4);
  Model m(small_config(), 4);
  const int V = 3;
  const Tensor img = random_images(rng, 2 * V, 16, 16);
  // Swap views 1 and 2 of state 1 (images 4 and 5).
  std::vector<std::int64_t> perm{0, 1, 2, 3, 5, 4};
  const std::int64_t px = 16 * 16 * 3;
  std::vector<double> pv;
  for (auto b : perm) pv.insert(pv.end(), img.data().begin() + b * px, img.data().begin() + (b + 1) * px);
  const Tensor img2 = Tensor::constant(img.shape(), pv);
  const TokenSet a = m.backbone(m.patchify(img, 2)), b = m.backbone(m.patchify(img2, 2));
  for (std::int64_t i = 0; i < 6; ++i) expect_near(rows_of(a.patch, perm[i] * 4, perm[i] * 4 + 4), rows_of(b.patch, i * 4, i * 4 + 4), 1e-10);
  expect_near(a.state.values(), b.state.values(), 1e-10);
}

TEST(Backbone, AttentionRowsAreDistributionsAndFrameMaskHolds) {
  std::mt19937_64 rng(5);
  Model m(small_config(), 5);
  const Tensor img = random_images(rng, 4, 16, 16);
  const TokenSet in = m.patchify(img, 2);
  int calls = 0;
  double worst = 0, leaked = 0;
  ag::attention_observer() = [&](std::span<const double> p, std::int64_t t, std::int64_t s) {
    ++calls;
    for (std::int64_t i = 0; i < t; ++i) {
      double sum = 0;
      for (std::int64_t j = 0; j < s; ++j) {
        sum += p[std::size_t(i * s + j)];
        EXPECT_GE(p[std::size_t(i * s + j)], 0.0);
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    if (calls <= 2) {
      // First layer (frame attention, one call per head): an image-0 token never attends to image 1 (tokens 5..9).
      for (std::int64_t j = 5; j < 10; ++j) leaked += p[std::size_t(j)];
    }
  };
  m.backbone(in);
  ag::attention_observer() = nullptr;
  EXPECT_GT(calls, 0);
  EXPECT_LT(worst, 1e-12);
  EXPECT_EQ(leaked, 0.0);
}

TEST(CrossStateAttention, ConstantKeysGiveValueProjection) {
  std::mt19937_64 rng(6);
  Model m(small_config(), 6);
  const Tensor z0 = testing::random_param(rng, {1, 16}), z1 = testing::random_param(rng, {1, 16});
  const Tensor f0 = testing::random_param(rng, {8, 16});
  std::vector<double> v(16);
  for (double& x : v) x = std::uniform_real_distribution<double>(-1, 1)(rng);
  std::vector<double> rep;
  for (int i = 0; i < 8; ++i) rep.insert(rep.end(), v.begin(), v.end());
  const Tensor f1 = Tensor::constant({8, 16}, rep);
  const auto out = m.cross_state_attention(z0, z1, f0, f1);
  const Params& P = m.params();
  const Tensor vv = Tensor::constant({1, 16}, v);
  const Tensor want = z0 + detail::apply_linear(P, "csa.out", detail::apply_linear(P, "csa.v", vv));
  expect_near(out[0].values(), want.values(), 1e-12);
}

TEST(CrossStateAttention, SwapSymmetryAndGradient) {
  std::mt19937_64 rng(7);
  Model m(small_config(), 7);
  const Tensor z0 = testing::random_param(rng, {1, 16}), z1 = testing::random_param(rng, {1, 16});
  const Tensor f0 = testing::random_param(rng, {8, 16}), f1 = testing::random_param(rng, {6, 16});
  const auto a = m.cross_state_attention(z0, z1, f0, f1), b = m.cross_state_attention(z1, z0, f1, f0);
  expect_near(a[0].values(), b[1].values(), 1e-14);
  expect_near(a[1].values(), b[0].values(), 1e-14);
  const Tensor w = testing::random_param(rng, {16});
  testing::expect_gradients_match(
      [&] {
        const auto o = m.cross_state_attention(z0, z1, f0, f1);
        return ag::sum(ag::square(o[0] * w) + o[1]);
      },
      {z0, z1, f0, f1, m.params()["csa.q.w"]}, 1e-4, 12, 1e-6);
}

TEST(Film, IdentityAndBiasCases) {
  std::mt19937_64 rng(8);
  Model m(small_config(), 8);
  const Tensor f = testing::random_param(rng, {10, 4}), pts = testing::random_param(rng, {10, 3});
  const Tensor cond = testing::random_param(rng, {1, 16});
  // Initialization: geometry MLP outputs zero, gamma weights are small, beta starts at zero.
  Params& P = m.params();
  auto zero = [&](const std::string& n) {
    auto d = Tensor(P[n]).mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  };
  zero("joint.inv.gamma.w");
  zero("joint.inv.beta.w");
  expect_near(m.film("inv", f, pts, cond).values(), f.values(), 1e-14);
  zero("joint.inv.gamma.b");
  auto bb = Tensor(P["joint.inv.beta.b"]).mutable_data();
  for (std::size_t i = 0; i < bb.size(); ++i) bb[i] = double(i);
  const Tensor out = m.film("inv", f, pts, cond);
  for (std::int64_t r = 0; r < 10; ++r)
    for (std::int64_t c = 0; c < 4; ++c) ASSERT_EQ(out[std::size_t(r * 4 + c)], double(c));
}

TEST(Film, Gradient) {
  std::mt19937_64 rng(9);
  Model m(small_config(), 9);
  for (const char* n : {"joint.var.geo2.w", "joint.var.gamma.w"}) {
    auto d = const_cast<Tensor&>(m.params()[n]).mutable_data();
    for (double& x : d) x = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  }
  const Tensor f = testing::random_param(rng, {10, 4}), pts = testing::random_param(rng, {10, 3});
  const Tensor cond = testing::random_param(rng, {1, 16});
  testing::expect_gradients_match([&] { return ag::sum(ag::square(m.film("var", f, pts, cond))); },
                                  {f, pts, cond, m.params()["joint.var.geo1.w"], m.params()["joint.var.beta.w"]}, 1e-4, 12, 1e-6);
}

TEST(JointHead, InvariantBranchIgnoresStateSwap) {
  std::mt19937_64 rng(10);
  Model m(small_config(), 10);
  const int B = 4, H = 16, W = 16;
  const Tensor trunk = testing::random_param(rng, {B, H / 2, W / 2, 4});
  const Tensor pts = testing::random_param(rng, {B * H * W, 3});
  const Tensor c0 = testing::random_param(rng, {1, 16}), c1 = testing::random_param(rng, {1, 16});
  const Tensor inv = (c0 + c1) * 0.5;
  const Tensor a = m.joint_head(trunk, pts, inv, {c0, c1}, 2), b = m.joint_head(trunk, pts, inv, {c1, c0}, 2);
  EXPECT_EQ(a.shape(), (ag::Shape{B * H * W, kJointChannels}));
  double var_diff = 0;
  for (std::int64_t i = 0; i < a.rows(); ++i)
    for (int c = 0; c < kJointChannels; ++c) {
      const std::size_t k = std::size_t(i * kJointChannels + c);
      if (c < kInvariantChannels) ASSERT_EQ(a[k], b[k]);
      else var_diff = std::max(var_diff, std::abs(a[k] - b[k]));
    }
  EXPECT_GT(var_diff, 1e-6);
  // Axis channels are unit vectors.
  for (std::int64_t i = 0; i < a.rows(); ++i) {
    const std::size_t k = std::size_t(i * kJointChannels);
    EXPECT_NEAR(std::hypot(a[k + 3], a[k + 4], a[k + 5]), 1.0, 1e-12);
  }
}

TEST(Heads, CameraDepthDefaults) {
  std::mt19937_64 rng(11);
  Model m(small_config(), 11);
  auto zero = [&](const std::string& n) {
    auto d = const_cast<Tensor&>(m.params()[n]).mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  };
  zero("depth.out.w");
  zero("depth.out.b");
  const ModelOutput o = m.forward(random_images(rng, 4, 16, 16), 2, 2);
  for (double d : o.depth.data()) ASSERT_NEAR(d, std::log(2.0), 1e-12);
  for (double d : o.depth_conf.data()) ASSERT_NEAR(d, std::log(2.0), 1e-12);
  for (int b = 0; b < 4; ++b) {
    const double* c = o.cam.data().data() + b * 9;
    EXPECT_NEAR(std::sqrt(c[3] * c[3] + c[4] * c[4] + c[5] * c[5] + c[6] * c[6]), 1.0, 1e-12);
    EXPECT_GT(c[7], 0.0);
    EXPECT_LT(c[7], kPi);
    EXPECT_NO_THROW(o.camera(b).validate());
  }
  // Zero depth maps every pixel of an image onto its camera center.
  for (int b = 0; b < 4; ++b) {
    const Tensor zd = Tensor::constant({16 * 16, 1}, 0.0);
    const Tensor p = Model::unproject_tensor(zd, ag::slice_rows(o.cam, b, b + 1), 1, 16, 16);
    for (std::int64_t i = 0; i < p.rows(); ++i)
      for (int k = 0; k < 3; ++k) ASSERT_NEAR(p[std::size_t(i * 3 + k)], o.cam[std::size_t(b * 9 + k)], 1e-12);
  }
}

TEST(Heads, PointsMatchScalarUnprojection) {
  std::mt19937_64 rng(12);
  Model m(small_config(), 12);
  const ModelOutput o = m.forward(random_images(rng, 4, 16, 16), 2, 2);
  for (int b = 0; b < 4; ++b) {
    const PointMap pm = unproject(o.depth_map(b), o.camera(b));
    for (std::size_t i = 0; i < o.pixels(); ++i)
      for (int k = 0; k < 3; ++k) ASSERT_NEAR(pm.points[i][k], o.points[(b * o.pixels() + i) * 3 + std::size_t(k)], 1e-9);
  }
}

TEST(Forward, ShapesForToyResolution) {
  std::mt19937_64 rng(13);
  Model m(ModelConfig{}, 13);
  const auto t0 = std::chrono::steady_clock::now();
  const ModelOutput o = m.forward(random_images(rng, 8, 64, 64), 4, 2);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::printf("forward V=4 S=2 64x64: %.0f ms, %zu parameters\n", ms, m.params().numel());
  const std::int64_t P = 8 * 64 * 64;
  EXPECT_EQ(o.cam.shape(), (ag::Shape{8, 9}));
  EXPECT_EQ(o.depth.shape(), (ag::Shape{P, 1}));
  EXPECT_EQ(o.depth_conf.shape(), (ag::Shape{P, 1}));
  EXPECT_EQ(o.attrs.shape(), (ag::Shape{P, kGaussianAttrs}));
  EXPECT_EQ(o.conf_logit.shape(), (ag::Shape{P, 1}));
  EXPECT_EQ(o.joints.shape(), (ag::Shape{P, kJointChannels}));
  EXPECT_EQ(o.points.shape(), (ag::Shape{P, 3}));
  for (double d : o.depth.data()) ASSERT_GT(d, 0.0);
}

TEST(Forward, RejectsBadInputs) {
  std::mt19937_64 rng(14);
  Model m(small_config(), 14);
  EXPECT_THROW(m.forward(random_images(rng, 6, 16, 16), 2, 3), InvalidInput);
  EXPECT_THROW(m.forward(random_images(rng, 3, 16, 16), 2, 2), InvalidInput);
  EXPECT_THROW(m.forward(random_images(rng, 4, 12, 16), 2, 2), InvalidInput);
}

TEST(Forward, Deterministic) {
  std::mt19937_64 rng(15);
  const Tensor img = random_images(rng, 4, 16, 16);
  Model a(small_config(), 99), b(small_config(), 99), c(small_config(), 100);
  const ModelOutput oa = a.forward(img, 2, 2), ob = b.forward(img, 2, 2), oc = c.forward(img, 2, 2);
  EXPECT_EQ(oa.joints.values(), ob.joints.values());
  EXPECT_EQ(oa.attrs.values(), ob.attrs.values());
  EXPECT_EQ(oa.cam.values(), ob.cam.values());
  EXPECT_NE(oa.joints.values(), oc.joints.values());
}

Tensor total_output_loss(const ModelOutput& o, const std::vector<Tensor>& w) {
  return ag::mean(ag::square(o.cam) * w[0]) + ag::mean(ag::square(o.depth - 1.0)) + ag::mean(o.depth_conf) +
         ag::mean(ag::square(o.attrs) * w[1]) + ag::mean(ag::sigmoid(o.conf_logit)) + ag::mean(ag::square(o.joints) * w[2]) +
         ag::mean(ag::square(o.points) * w[3]);
}

std::vector<Tensor> output_weights(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  auto mk = [&](int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = u(rng);
    return Tensor::constant({n}, v);
  };
  return {mk(9), mk(kGaussianAttrs), mk(kJointChannels), mk(3)};
}

void perturb_zero_inits(Model& m, std::mt19937_64& rng) {
  for (auto& [n, t] : m.params().all())
    if (n.find("geo2") != std::string::npos || n.ends_with(".b"))
      for (double& x : t.mutable_data()) x += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
}

TEST(Forward, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  Model m(small_config(), 16);
  perturb_zero_inits(m, rng);
  const Tensor img = random_images(rng, 4, 16, 16);
  const auto w = output_weights(rng);
  auto& all = m.params().all();
  std::vector<Tensor> picked;
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  while (picked.size() < 10) picked.push_back(all[pick(rng)].second);
  testing::expect_gradients_match([&] { return total_output_loss(m.forward(img, 2, 2), w); }, picked, 1e-3, 1, 1e-6, 17);
}

void expect_no_dead_parameters(const ModelConfig& cfg) {
  std::mt19937_64 rng(18);
  Model m(cfg, 18);
  perturb_zero_inits(m, rng);
  const auto w = output_weights(rng);
  m.params().zero_grad();
  total_output_loss(m.forward(random_images(rng, 4, 16, 16), 2, 2), w).backward();
  for (const auto& [n, t] : m.params().all()) {
    double g = 0;
    for (double x : t.grad()) g = std::max(g, std::abs(x));
    EXPECT_GT(g, 0.0) << n;
  }
}

TEST(Forward, NoDeadParameters) { expect_no_dead_parameters(small_config()); }

TEST(Forward, AblationsBuildAndRun) {
  ModelConfig no_csa = small_config();
  no_csa.use_csa = false;
  expect_no_dead_parameters(no_csa);
  ModelConfig no_state = small_config();
  no_state.use_state = false;
  expect_no_dead_parameters(no_state);
  Model a(no_csa, 1), b(no_state, 1);
  EXPECT_FALSE(a.params().has("csa.q"));
  EXPECT_FALSE(b.params().has("state_tok"));
  EXPECT_TRUE(b.params().has("cond_const"));
}

}  // namespace
}  // namespace artikin::model
