#pragma once

// Straightforward per-pixel reimplementations of the joint-map losses and a random
// instance generator shared by the unit tests and the acceptance runner.

#include "artikin/losses.hpp"

#include <random>

namespace artikin::testing {

struct JointInstance {
  std::vector<JointMap> gt;
  std::vector<PartLabelMap> labels;
  std::vector<int> states;
  std::vector<double> pred;  // rows of 11, image-major
};

inline JointInstance random_joint_instance(std::mt19937_64& rng, int images = 2, int h = 8, int w = 8, int parts = 2) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> lab(-1, parts);
  std::vector<JointKind> kind(std::size_t(parts + 1), JointKind::Static);
  std::vector<Vec3> axis(kind.size()), pivot(kind.size());
  for (int p = 1; p <= parts; ++p) {
    kind[std::size_t(p)] = (rng() & 1) ? JointKind::Revolute : JointKind::Prismatic;
    axis[std::size_t(p)] = Vec3(u(rng), u(rng), u(rng)).normalized();
    pivot[std::size_t(p)] = Vec3(u(rng), u(rng), u(rng));
  }
  JointInstance inst;
  for (int im = 0; im < images; ++im) {
    JointMap g(h, w);
    PartLabelMap l(h, w);
    const double value = u(rng);
    for (std::size_t i = 0; i < g.data.pixels(); ++i) {
      const int p = lab(rng);
      l.labels.data[i] = p;
      double* v = g.pixel(i);
      std::fill(v, v + kJointChannels, 0.0);
      const JointKind k = p >= 1 ? kind[std::size_t(p)] : JointKind::Static;
      v[int(k)] = 1.0;
      if (k == JointKind::Static) continue;
      for (int c = 0; c < 3; ++c) {
        v[kChAxis + c] = axis[std::size_t(p)][c];
        v[kChPivot + c] = pivot[std::size_t(p)][c];
      }
      v[k == JointKind::Revolute ? kChAngle : kChDisp] = 2.0 * value * p;
    }
    inst.gt.push_back(std::move(g));
    inst.labels.push_back(std::move(l));
    inst.states.push_back(im % 2);
    for (std::size_t i = 0; i < std::size_t(h) * w * kJointChannels; ++i) inst.pred.push_back(2.0 * u(rng));
  }
  return inst;
}

inline double huber_scalar(double x, double delta = 1.0) {
  return std::abs(x) <= delta ? 0.5 * x * x : delta * (std::abs(x) - 0.5 * delta);
}

inline double naive_loss_joint(const JointInstance& in) {
  double total = 0.0;
  std::size_t count = 0, row = 0;
  for (std::size_t im = 0; im < in.gt.size(); ++im) {
    const auto& lab = in.labels[im].labels;
    for (int y = 0; y < lab.height; ++y)
      for (int x = 0; x < lab.width; ++x, ++row) {
        if (lab.at(y, x) < 0) continue;
        const double* p = &in.pred[row * kJointChannels];
        const double* g = in.gt[im].data.pixel(std::size_t(y) * lab.width + x);
        int k = 0;
        for (int c = 1; c < 3; ++c)
          if (g[c] > g[k]) k = c;
        double mx = std::max({p[0], p[1], p[2]}), z = 0;
        for (int c = 0; c < 3; ++c) z += std::exp(p[c] - mx);
        total += -(p[k] - mx - std::log(z));
        ++count;
        if (k == 0) continue;
        double l1 = 0;
        for (int c = 0; c < 3; ++c) l1 += std::abs(p[kChAxis + c] - g[kChAxis + c]);
        total += l1;
        total += losses::d_perp(Vec3(p[6], p[7], p[8]), Vec3(g[6], g[7], g[8]), Vec3(g[3], g[4], g[5]));
        if (k == 1) total += huber_scalar(p[kChAngle] - g[kChAngle]);
        if (k == 2) total += huber_scalar(p[kChDisp] - g[kChDisp]);
      }
  }
  return count ? total / double(count) : 0.0;
}

inline double naive_loss_consist(const JointInstance& in) {
  std::map<int, std::array<std::array<double, 10>, 2>> acc;  // 9 sums + count
  std::size_t row = 0;
  for (std::size_t im = 0; im < in.labels.size(); ++im) {
    const auto& lab = in.labels[im].labels;
    for (std::size_t i = 0; i < lab.pixels(); ++i, ++row) {
      const int p = lab.data[i];
      if (p < 1) continue;
      auto& a = acc[p][std::size_t(in.states[im])];
      for (int c = 0; c < 9; ++c) a[std::size_t(c)] += in.pred[row * kJointChannels + std::size_t(c)];
      a[9] += 1;
    }
  }
  double total = 0;
  int parts = 0;
  for (auto& [p, a] : acc) {
    if (a[0][9] == 0 || a[1][9] == 0) continue;
    double s = 0;
    for (int c = 0; c < 9; ++c) {
      const double d = a[0][std::size_t(c)] / a[0][9] - a[1][std::size_t(c)] / a[1][9];
      s += d * d;
    }
    total += std::sqrt(s);
    ++parts;
  }
  return parts ? total / parts : 0.0;
}

inline double naive_loss_smooth(const JointInstance& in) {
  double total = 0;
  std::size_t pairs = 0, base = 0;
  for (const auto& lm : in.labels) {
    const auto& lab = lm.labels;
    auto pair = [&](int y0, int x0, int y1, int x1) {
      if (y1 >= lab.height || x1 >= lab.width) return;
      const int l = lab.at(y0, x0);
      if (l < 0 || lab.at(y1, x1) != l) return;
      const std::size_t a = base + std::size_t(y0) * lab.width + x0, b = base + std::size_t(y1) * lab.width + x1;
      for (int c = 0; c < kJointChannels; ++c) total += std::abs(in.pred[a * 11 + c] - in.pred[b * 11 + c]);
      ++pairs;
    };
    for (int y = 0; y < lab.height; ++y)
      for (int x = 0; x < lab.width; ++x) {
        pair(y, x, y, x + 1);
        pair(y, x, y + 1, x);
      }
    base += lab.pixels();
  }
  return pairs ? total / double(pairs) : 0.0;
}

inline double naive_loss_pose(const std::vector<double>& pred, std::span<const CameraPose> gt) {
  double total = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = gt[i].to_params();
    double dot = 0;
    for (int k = 3; k < 7; ++k) dot += pred[i * 9 + std::size_t(k)] * g[std::size_t(k)];
    for (int k = 0; k < 9; ++k) {
      const double p = (k >= 3 && k < 7 && dot < 0 ? -1.0 : 1.0) * pred[i * 9 + std::size_t(k)];
      total += huber_scalar(p - g[std::size_t(k)]);
    }
  }
  return gt.empty() ? 0.0 : total / double(gt.size());
}

inline double naive_loss_depth(const std::vector<double>& d, const std::vector<double>& conf, const std::vector<double>& gt,
                               const std::vector<std::uint8_t>& fg) {
  double total = 0;
  int n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!fg[i]) continue;
    const double c = std::max(conf[i], losses::kConfFloor);
    total += c * std::abs(d[i] - gt[i]) - losses::kDepthAlpha * std::log(c);
    ++n;
  }
  return n ? total / n : 0.0;
}

inline double naive_loss_rgb(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  double mse = 0;
  std::vector<double> x(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    x[i] = a[i] - b[i];
    mse += x[i] * x[i];
  }
  mse /= double(a.size());
  double proxy = 0;
  int scales = 0;
  for (int s = 0; s < 3 && h >= 2 && w >= 2; ++s) {
    double gx = 0, gy = 0;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int c = 0; c < 3; ++c) {
          const double v = x[std::size_t((y * w + xx) * 3 + c)];
          if (xx + 1 < w) gx += std::abs(x[std::size_t((y * w + xx + 1) * 3 + c)] - v);
          if (y + 1 < h) gy += std::abs(x[std::size_t(((y + 1) * w + xx) * 3 + c)] - v);
        }
    proxy += gx / (h * (w - 1) * 3.0) + gy / ((h - 1) * w * 3.0);
    ++scales;
    if (h % 2 || w % 2) break;
    std::vector<double> pooled(std::size_t(h / 2 * (w / 2) * 3));
    for (int y = 0; y < h / 2; ++y)
      for (int xx = 0; xx < w / 2; ++xx)
        for (int c = 0; c < 3; ++c) {
          double sum = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) sum += x[std::size_t(((2 * y + dy) * w + 2 * xx + dx) * 3 + c)];
          pooled[std::size_t((y * (w / 2) + xx) * 3 + c)] = sum / 4;
        }
    x = std::move(pooled);
    h /= 2;
    w /= 2;
  }
  return mse + losses::kPerceptualWeight * (scales ? proxy / scales : 0.0);
}

inline double naive_loss_mask(const std::vector<double>& logits, const std::vector<std::uint8_t>& fg) {
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = 1 / (1 + std::exp(-logits[i]));
    total -= fg[i] ? std::log(p) : std::log1p(-p);
  }
  return logits.empty() ? 0.0 : total / double(logits.size());
}

struct ImageInstance {
  int h = 8, w = 8;
  std::vector<CameraPose> gt_cams;
  std::vector<double> cams;  // rows of 9
  std::vector<double> depth, conf, gt_depth, logits, render, gt_rgb;
  std::vector<std::uint8_t> fg;
};

inline ImageInstance random_image_instance(std::mt19937_64& rng, int h = 8, int w = 8, int images = 2) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  ImageInstance in;
  in.h = h;
  in.w = w;
  for (int i = 0; i < images; ++i) {
    CameraPose c;
    c.t = Vec3(u(rng), u(rng), u(rng));
    c.q = Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
    c.f = {0.5 + pos(rng), 0.5 + pos(rng)};
    in.gt_cams.push_back(c);
    for (int k = 0; k < 9; ++k) in.cams.push_back(2.0 * u(rng));
  }
  const std::size_t px = std::size_t(h) * w * images;
  for (std::size_t i = 0; i < px; ++i) {
    in.depth.push_back(1.0 + pos(rng));
    // A few confidences fall under the floor.
    in.conf.push_back(i % 17 == 0 ? 1e-4 : 0.05 + pos(rng));
    in.gt_depth.push_back(1.0 + pos(rng));
    in.fg.push_back(pos(rng) < 0.6);
    in.logits.push_back(3.0 * u(rng));
  }
  for (std::size_t i = 0; i < std::size_t(h) * w * 3; ++i) {
    in.render.push_back(pos(rng));
    in.gt_rgb.push_back(pos(rng));
  }
  return in;
}

}  // namespace artikin::testing
