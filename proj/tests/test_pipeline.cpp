#include "artikin/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace artikin::pipeline {
namespace {

SynthOptions sanity_options(int res) {
  SynthOptions o;
  o.res = res;
  o.states = 4;
  o.min_joints = 1;
  o.max_joints = 1;
  return o;
}

ObjectSample object_of(JointKind kind, int res, int joints = 1) {
  SynthOptions opt = sanity_options(res);
  opt.min_joints = opt.max_joints = joints;
  for (std::uint64_t seed = 0;; ++seed) {
    ObjectSample o = generate_object(seed, opt);
    if (o.scene.joints[0].kind == kind) return o;
  }
}

struct GtCase {
  ObjectSample obj;
  EvalInputs in;
  train::Sample sample;
  Reconstruction rec;
};

GtCase gt_case(JointKind kind, int joints = 1) {
  GtCase c{object_of(kind, 48, joints), {}, {}, {}};
  c.in = choose_inputs(c.obj, EvalProtocol{}, 3);
  c.sample = eval_sample(c.obj, c.in);
  c.rec = reconstruct(gt_maps(c.sample, c.obj, c.in));
  return c;
}

TEST(Protocol, InputViewsInsideElevationBand) {
  const ObjectSample o = object_of(JointKind::Revolute, 16);
  const EvalProtocol p;
  const EvalInputs in = choose_inputs(o, p, 1);
  for (const auto& vs : in.views) {
    ASSERT_EQ(vs.size(), 4u);
    std::set<int> uniq(vs.begin(), vs.end());
    EXPECT_EQ(uniq.size(), 4u);
    for (int v : vs) {
      const double e = elevation_deg(o.cams[std::size_t(v)]);
      EXPECT_GE(e, 5.0);
      EXPECT_LE(e, 60.0);
    }
  }
  EvalProtocol narrow;
  narrow.elev_lo = 89.0;
  EXPECT_THROW(choose_inputs(o, narrow, 1), InvalidInput);
}

TEST(Reconstruct, RejectsWrongViewCount) {
  GtCase c = gt_case(JointKind::Revolute);
  DenseMaps m = c.rec.maps;
  m.points.pop_back();
  EXPECT_THROW(reconstruct(m), InvalidInput);
}

TEST(Reconstruct, GtDerivedGaussiansScoreNearZero) {
  for (JointKind kind : {JointKind::Revolute, JointKind::Prismatic}) {
    GtCase c = gt_case(kind);
    ASSERT_EQ(c.rec.sets[0].parts.size(), 1u) << to_string(kind);
    EXPECT_EQ(c.rec.sets[0].parts[0].kind, kind);
    const ObjectMetrics m = evaluate(c.rec, c.obj, c.in, c.sample, EvalProtocol{}, 3);
    EXPECT_DOUBLE_EQ(m.type_accuracy, 1.0);
    EXPECT_LT(m.ang, 1e-6);
    if (kind == JointKind::Revolute) {
      ASSERT_TRUE(m.pos.has_value());
      EXPECT_LT(*m.pos, 1e-6);
    }
    // Only visible surfaces are reconstructed, so CD is small but not zero.
    EXPECT_LT(m.cd_w, 0.05);
    EXPECT_LT(m.cd_s, 0.05);
    ASSERT_TRUE(m.cd_m.has_value());
    EXPECT_LT(*m.cd_m, 0.05);
    // GT values articulate each state's set onto the other.
    EXPECT_GT(m.psnr, m.psnr_static);
    std::printf("%s: CD-w %.4f CD-m %.4f PSNR %.2f static %.2f SSIM %.3f\n", to_string(kind), m.cd_w, *m.cd_m, m.psnr, m.psnr_static,
                m.ssim);
  }
}

TEST(Reconstruct, PerStateValuesMatchGroundTruth) {
  GtCase c = gt_case(JointKind::Revolute);
  ASSERT_EQ(c.rec.sets[0].values.size(), 1u);
  const auto v = c.rec.sets[0].values[0];
  const double sign = c.rec.sets[0].parts[0].axis.dot(c.sample.gt_joints[0].axis) < 0 ? -1.0 : 1.0;
  EXPECT_NEAR(sign * v[0], c.sample.values[0][0], 1e-9);
  EXPECT_NEAR(sign * v[1], c.sample.values[1][0], 1e-9);
  EXPECT_EQ(c.rec.sets[1].parts[0].ref_angle, v[1]);
}

TEST(VoxelMerge, MergedRenderMatchesUnmerged) {
  RenderSettings rs;
  rs.width = rs.height = 48;
  // Sanity scene: GT-derived per-pixel splats of a door object.
  {
    GtCase c = gt_case(JointKind::Revolute);
    std::vector<Gaussian3D> raw;
    for (std::size_t b = 0; b < c.rec.maps.points.size() / 2; ++b) {
      const auto g = assemble_gaussians(c.rec.maps.points[b], c.rec.maps.attrs[b], c.rec.maps.conf[b], kDefaultConfThreshold);
      raw.insert(raw.end(), g.begin(), g.end());
    }
    const auto merged = voxel_merge(raw, 0.003);
    const CameraPose cam = c.sample.cams[0];
    const double p = metrics::psnr(rasterize(raw, cam, rs).image(), rasterize(merged, cam, rs).image());
    std::printf("sanity scene: %zu -> %zu Gaussians, PSNR %.2f dB\n", raw.size(), merged.size(), p);
    EXPECT_GE(p, 35.0);
  }
  // Dense cluster: many splats per voxel.
  {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.03, 0.03);
    std::vector<Gaussian3D> raw;
    for (int i = 0; i < 3000; ++i) {
      Gaussian3D g = testing::random_gaussian(rng);
      g.mu = Vec3(u(rng), u(rng), 1.0 + u(rng));
      g.log_scale = Vec3::Constant(std::log(0.01));
      g.alpha = 0.3;
      g.sh.fill(0.0);
      g.sh[0] = 0.4;
      g.sh[kShCoeffsPerChannel] = -0.2;
      raw.push_back(g);
    }
    const auto merged = voxel_merge(raw, 0.003);
    EXPECT_LT(merged.size(), raw.size());
    CameraPose cam;
    cam.f = {0.3, 0.3};
    const double p = metrics::psnr(rasterize(raw, cam, rs).image(), rasterize(merged, cam, rs).image());
    std::printf("dense cluster: %zu -> %zu Gaussians, PSNR %.2f dB\n", raw.size(), merged.size(), p);
    EXPECT_GE(p, 35.0);
  }
}

TEST(Sweep, ReferenceStateIsBitwiseUnarticulated) {
  GtCase c = gt_case(JointKind::Revolute);
  RenderSettings rs;
  rs.width = rs.height = 48;
  for (int s = 0; s < 2; ++s) {
    const GaussianSet& g = c.rec.sets[std::size_t(s)];
    const auto frames = sweep(g, 5, rs);
    ASSERT_EQ(frames.size(), 5u);
    const Grid<double> plain = rasterize(g.gaussians, g.view, rs).image();
    EXPECT_EQ(frames[s == 0 ? 0 : 4].data, plain.data);
    EXPECT_NE(frames[2].data, plain.data);
  }
}

TEST(Sweep, MovableCentroidMovesMonotonically) {
  for (JointKind kind : {JointKind::Revolute, JointKind::Prismatic}) {
    GtCase c = gt_case(kind);
    const GaussianSet& g = c.rec.sets[0];
    auto centroid = [&](double s) {
      const auto moved = articulate_to(g, s);
      Vec3 sum = Vec3::Zero();
      int n = 0;
      for (std::size_t i = 0; i < moved.size(); ++i)
        if (g.labels[i] > 0) sum += moved[i].mu, ++n;
      return Vec3(sum / n);
    };
    const Vec3 c0 = centroid(0.0);
    double last = 0.0;
    for (int i = 1; i <= 10; ++i) {
      const double d = (centroid(i / 10.0) - c0).norm();
      EXPECT_GT(d, last) << to_string(kind) << " step " << i;
      last = d;
    }
  }
}

TEST(Metrics, SplitMeansMatchRecomputation) {
  std::vector<ObjectMetrics> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[std::size_t(i)].cd_w = 0.1 * (i + 1);
    rows[std::size_t(i)].ang = 10.0 * i;
    rows[std::size_t(i)].psnr = 20 + i;
  }
  rows[0].name = "a";
  rows[0].pos = 0.3;
  rows[2].pos = 0.5;
  rows[1].cd_m = 0.2;
  const ObjectMetrics m = mean_metrics(rows, "mean");
  EXPECT_NEAR(m.cd_w, 0.2, 1e-15);
  EXPECT_NEAR(m.ang, 10.0, 1e-15);
  EXPECT_NEAR(m.psnr, 21.0, 1e-15);
  EXPECT_NEAR(*m.pos, 0.4, 1e-15);
  EXPECT_NEAR(*m.cd_m, 0.2, 1e-15);
  EXPECT_EQ(std::string(kMetricsHeader), "object,CD-w,CD-s,CD-m,Ang_m,Pos_m,PSNR,SSIM");
  EXPECT_EQ(format_metrics(rows[0]), "a,0.1,0,,0,0.3,20,0");
}

TEST(Infer, DeterministicWithUntrainedModel) {
  const ObjectSample o = object_of(JointKind::Revolute, 16);
  const EvalInputs in = choose_inputs(o, EvalProtocol{}, 2);
  const train::Sample s = eval_sample(o, in);
  model::ModelConfig mc;
  mc.dim = 16;
  mc.heads = 2;
  mc.layers = 2;
  mc.taps = {0, 1, 2, 2};
  mc.dec_channels = 4;
  const model::Model m(mc, 1);
  const Reconstruction a = infer(m, s.images, s.views), b = infer(m, s.images, s.views);
  for (int k = 0; k < 2; ++k) {
    ASSERT_EQ(a.sets[std::size_t(k)].gaussians.size(), b.sets[std::size_t(k)].gaussians.size());
    EXPECT_EQ(a.sets[std::size_t(k)].labels, b.sets[std::size_t(k)].labels);
    for (std::size_t i = 0; i < a.sets[std::size_t(k)].gaussians.size(); ++i)
      EXPECT_EQ(a.sets[std::size_t(k)].gaussians[i].to_params(), b.sets[std::size_t(k)].gaussians[i].to_params());
  }
  EXPECT_THROW(infer(m, s.images, 3), InvalidInput);
}

}  // namespace
}  // namespace artikin::pipeline
