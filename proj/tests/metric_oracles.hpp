#pragma once

// Brute-force metric references shared by unit tests and the acceptance runner.

#include "artikin/metrics.hpp"

#include <random>

namespace artikin::testing {

inline double brute_chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  auto one = [](std::span<const Vec3> f, std::span<const Vec3> t) {
    double s = 0;
    for (const Vec3& p : f) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : t) best = std::min(best, (p - q).norm());
      s += best;
    }
    return s / double(f.size());
  };
  return 0.5 * (one(a, b) + one(b, a));
}

/// Grid search over both line parameters, then alternating exact refinement.
inline double sampled_line_distance(const Vec3& p, const Vec3& a, const Vec3& q, const Vec3& b, double range = 6.0) {
  double best = std::numeric_limits<double>::infinity(), bs = 0, bt = 0;
  const int n = 240;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      const double s = -range + 2 * range * i / n, t = -range + 2 * range * j / n;
      const double d = (p + s * a - q - t * b).norm();
      if (d < best) best = d, bs = s, bt = t;
    }
  for (int it = 0; it < 20000; ++it) {
    bs = (q + bt * b - p).dot(a) / a.squaredNorm();
    bt = (p + bs * a - q).dot(b) / b.squaredNorm();
  }
  return (p + bs * a - q - bt * b).norm();
}

inline double naive_ssim(const Grid<double>& a, const Grid<double>& b) {
  constexpr int R = 5;
  double w[11][11], ws = 0;
  for (int i = -R; i <= R; ++i)
    for (int j = -R; j <= R; ++j) ws += w[i + R][j + R] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  double total = 0;
  int count = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = R; y < a.height - R; ++y)
      for (int x = R; x < a.width - R; ++x) {
        double mx = 0, my = 0;
        for (int i = -R; i <= R; ++i)
          for (int j = -R; j <= R; ++j) {
            mx += w[i + R][j + R] / ws * a.at(y + i, x + j, c);
            my += w[i + R][j + R] / ws * b.at(y + i, x + j, c);
          }
        double vx = 0, vy = 0, cv = 0;
        for (int i = -R; i <= R; ++i)
          for (int j = -R; j <= R; ++j) {
            const double dx = a.at(y + i, x + j, c) - mx, dy = b.at(y + i, x + j, c) - my;
            vx += w[i + R][j + R] / ws * dx * dx;
            vy += w[i + R][j + R] / ws * dy * dy;
            cv += w[i + R][j + R] / ws * dx * dy;
          }
        const double C1 = 1e-4, C2 = 9e-4;
        total += ((2 * mx * my + C1) * (2 * cv + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        ++count;
      }
  return total / count;
}

inline Grid<double> random_image(std::mt19937_64& rng, int h, int w, int c = 3) {
  std::uniform_real_distribution<double> u(0, 1);
  Grid<double> g(h, w, c);
  for (double& v : g.data) v = u(rng);
  return g;
}

inline std::vector<Vec3> random_points(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> nd(0, scale);
  std::vector<Vec3> out(static_cast<std::size_t>(n));
  for (Vec3& p : out) p = {nd(rng), nd(rng), nd(rng)};
  return out;
}

}  // namespace artikin::testing
