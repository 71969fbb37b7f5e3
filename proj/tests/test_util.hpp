#pragma once

#include "artikin/core.hpp"

#include <random>

namespace artikin::testing {

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quat{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline CameraPose random_camera(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> fov(0.5, 2.0);
  CameraPose c;
  c.t = random_vec(rng, 2.0);
  c.q = random_quat(rng);
  c.f = {fov(rng), fov(rng)};
  return c;
}

inline Gaussian3D random_gaussian(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Gaussian3D g;
  g.mu = random_vec(rng);
  g.log_scale = random_vec(rng) * 0.5 + Vec3::Constant(-3.0);
  g.rot = random_quat(rng);
  g.alpha = 0.5 + 0.4 * u(rng);
  for (double& c : g.sh) c = 0.3 * u(rng);
  return g;
}

}  // namespace artikin::testing
