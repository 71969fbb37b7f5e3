#pragma once

// Gaussian splatting: SH color, differentiable projection and alpha compositing,
// and voxel merging of dense per-pixel sets.

#include "artikin/autograd.hpp"
#include "artikin/core.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

namespace artikin {

namespace sh {
inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                                0.5462742152960396};
inline constexpr double C3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                                -0.4570457994644658, 1.445305721320277, -0.5900435899266435};
inline constexpr double C4[] = {2.5033429417967046, -1.7701307697799304, 0.9461746957575601, -0.6690465435572892,
                                0.10578554691520431, -0.6690465435572892, 0.47308734787878004, -1.7701307697799304,
                                0.6258357354491761};

inline int coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Real SH basis (Condon-Shortley phase, index l*l + l + m) for a unit direction.
/// Works for doubles and for tape tensors holding one column per direction.
template <class T, class One>
std::vector<T> basis(const T& x, const T& y, const T& z, int degree, const One& one) {
  if (degree < 0 || degree > kShDegree) throw InvalidInput("SH degree must be in [0, 4]");
  std::vector<T> b;
  b.reserve(std::size_t(coeff_count(degree)));
  b.push_back(one * C0);
  if (degree >= 1) {
    b.push_back(y * -C1);
    b.push_back(z * C1);
    b.push_back(x * -C1);
  }
  if (degree >= 2) {
    const T xx = x * x, yy = y * y, zz = z * z;
    b.push_back(x * y * C2[0]);
    b.push_back(y * z * C2[1]);
    b.push_back((zz * 2.0 - xx - yy) * C2[2]);
    b.push_back(x * z * C2[3]);
    b.push_back((xx - yy) * C2[4]);
    if (degree >= 3) {
      b.push_back(y * (xx * 3.0 - yy) * C3[0]);
      b.push_back(x * y * z * C3[1]);
      b.push_back(y * (zz * 4.0 - xx - yy) * C3[2]);
      b.push_back(z * (zz * 2.0 - xx * 3.0 - yy * 3.0) * C3[3]);
      b.push_back(x * (zz * 4.0 - xx - yy) * C3[4]);
      b.push_back(z * (xx - yy) * C3[5]);
      b.push_back(x * (xx - yy * 3.0) * C3[6]);
    }
    if (degree >= 4) {
      b.push_back(x * y * (xx - yy) * C4[0]);
      b.push_back(y * z * (xx * 3.0 - yy) * C4[1]);
      b.push_back(x * y * (zz * 7.0 - 1.0) * C4[2]);
      b.push_back(y * z * (zz * 7.0 - 3.0) * C4[3]);
      b.push_back((zz * (zz * 35.0 - 30.0) + 3.0) * C4[4]);
      b.push_back(x * z * (zz * 7.0 - 3.0) * C4[5]);
      b.push_back((xx - yy) * (zz * 7.0 - 1.0) * C4[6]);
      b.push_back(x * z * (xx - yy * 3.0) * C4[7]);
      b.push_back((xx * (xx - yy * 3.0) - yy * (xx * 3.0 - yy)) * C4[8]);
    }
  }
  return b;
}

inline std::vector<double> basis(const Vec3& d, int degree) { return basis(d.x(), d.y(), d.z(), degree, 1.0); }
}  // namespace sh

/// View-dependent color, offset by 0.5 and clamped at zero like the reference renderer.
inline Vec3 eval_sh(std::span<const double> coeffs, const Vec3& dir, int degree) {
  if (coeffs.size() != std::size_t(kShCoeffs)) throw InvalidInput("eval_sh: expected 75 coefficients");
  const auto b = sh::basis(dir.normalized(), degree);
  Vec3 c;
  for (int ch = 0; ch < 3; ++ch) {
    double s = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) s += coeffs[ch * kShCoeffsPerChannel + k] * b[k];
    c[ch] = std::max(0.0, s + 0.5);
  }
  return c;
}

/// DC coefficient that yields `rgb` at degree 0.
inline double sh_from_rgb(double rgb) { return (rgb - 0.5) / sh::C0; }

struct RenderSettings {
  int width = 64;
  int height = 64;
  Vec3 background = Vec3::Ones();
  int sh_degree = kShDegree;
  double dilation = 0.3;     // added to the 2D covariance diagonal, in px^2
  double max_alpha = 0.99;
  double near = 0.01;
};

/// Gaussian attributes held as tape tensors: mu [N,3], log_scale [N,3], rot [N,4]
/// (normalized here), alpha [N,1] post-sigmoid, sh [N,75].
struct GaussianTensors {
  ag::Tensor mu, log_scale, rot, alpha, sh;

  std::int64_t size() const { return mu.defined() ? mu.rows() : 0; }

  static GaussianTensors from(std::span<const Gaussian3D> gs, bool trainable = false) {
    const std::int64_t n = std::int64_t(gs.size());
    std::vector<double> mu, ls, rot, al, shv;
    mu.reserve(gs.size() * 3);
    for (const Gaussian3D& g : gs) {
      mu.insert(mu.end(), {g.mu.x(), g.mu.y(), g.mu.z()});
      ls.insert(ls.end(), {g.log_scale.x(), g.log_scale.y(), g.log_scale.z()});
      rot.insert(rot.end(), {g.rot.w, g.rot.x, g.rot.y, g.rot.z});
      al.push_back(g.alpha);
      shv.insert(shv.end(), g.sh.begin(), g.sh.end());
    }
    auto mk = [&](ag::Shape s, std::vector<double> v) {
      return trainable ? ag::Tensor::parameter(std::move(s), std::move(v)) : ag::Tensor::constant(std::move(s), std::move(v));
    };
    return {mk({n, 3}, std::move(mu)), mk({n, 3}, std::move(ls)), mk({n, 4}, std::move(rot)), mk({n, 1}, std::move(al)),
            mk({n, kShCoeffs}, std::move(shv))};
  }
};

/// Rendered frame: rgb [H*W,3] and accumulated opacity [H*W,1], row-major pixels.
struct RenderResult {
  ag::Tensor rgb;
  ag::Tensor alpha;
  int width = 0;
  int height = 0;

  Grid<double> image() const {
    Grid<double> g(height, width, 3);
    std::copy(rgb.data().begin(), rgb.data().end(), g.data.begin());
    return g;
  }
  Grid<double> opacity() const {
    Grid<double> g(height, width, 1);
    std::copy(alpha.data().begin(), alpha.data().end(), g.data.begin());
    return g;
  }
};

namespace render_detail {

/// Rotation matrices [N,9] from unit quaternions [N,4].
inline ag::Tensor quat_to_rotmat(const ag::Tensor& q) {
  const std::int64_t n = q.rows();
  std::vector<double> v(std::size_t(n * 9));
  for (std::int64_t i = 0; i < n; ++i) {
    const double* p = q.data().data() + i * 4;
    const Mat3 m = Quat{p[0], p[1], p[2], p[3]}.to_matrix();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) v[std::size_t(i * 9 + r * 3 + c)] = m(r, c);
  }
  return ag::make_op({n, 9}, std::move(v), {q}, [n](ag::Node& self) {
    auto& in = *self.parents[0];
    for (std::int64_t i = 0; i < n; ++i) {
      const double* p = in.value.data() + i * 4;
      const double w = p[0], x = p[1], y = p[2], z = p[3];
      const double* g = self.grad.data() + i * 9;
      const double d[9][4] = {{0, 0, -4 * y, -4 * z},        {-2 * z, 2 * y, 2 * x, -2 * w}, {2 * y, 2 * z, 2 * w, 2 * x},
                              {2 * z, 2 * y, 2 * x, 2 * w},   {0, -4 * x, 0, -4 * z},         {-2 * x, -2 * w, 2 * z, 2 * y},
                              {-2 * y, 2 * z, -2 * w, 2 * x}, {2 * x, 2 * w, 2 * z, 2 * y},   {0, -4 * x, -4 * y, 0}};
      for (int e = 0; e < 9; ++e)
        for (int k = 0; k < 4; ++k) in.grad[std::size_t(i * 4 + k)] += g[e] * d[e][k];
    }
  });
}

struct Splat {
  int x0, x1, y0, y1;
};

/// Front-to-back alpha compositing of projected splats over a background. Inputs are
/// uv [N,2] pixel centers, conic [N,3] inverse 2D covariance (a, b, c), color [N,3] and
/// opacity [N,1]. Returns [H*W,4] with rgb then accumulated alpha.
inline ag::Tensor composite(const ag::Tensor& uv, const ag::Tensor& conic, const ag::Tensor& color, const ag::Tensor& opacity,
                            const std::vector<double>& depth, const std::vector<Splat>& boxes, std::vector<std::uint8_t> live,
                            const RenderSettings& rs) {
  const int W = rs.width, H = rs.height;
  const std::size_t n = depth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return depth[a] < depth[b]; });

  // Per-pixel lists of contributing splats in depth order.
  struct Entry {
    std::uint32_t g;
    double alpha;  // after clamping
    double trans;  // transmittance in front of this splat
    bool clamped;
  };
  std::vector<std::vector<Entry>> lists(std::size_t(W) * H);
  const double* puv = uv.data().data();
  const double* pcon = conic.data().data();
  const double* pop = opacity.data().data();
  for (std::size_t gi : order) {
    if (!live[gi]) continue;
    const Splat& s = boxes[gi];
    for (int y = s.y0; y < s.y1; ++y)
      for (int x = s.x0; x < s.x1; ++x) {
        const double dx = x + 0.5 - puv[gi * 2], dy = y + 0.5 - puv[gi * 2 + 1];
        const double power = -0.5 * (pcon[gi * 3] * dx * dx + pcon[gi * 3 + 2] * dy * dy) - pcon[gi * 3 + 1] * dx * dy;
        if (power > 0 || power < -4.5) continue;  // outside 3 sigma
        const double a = pop[gi] * std::exp(power);
        const bool clamped = a > rs.max_alpha;
        lists[std::size_t(y) * W + x].push_back({std::uint32_t(gi), clamped ? rs.max_alpha : a, 0.0, clamped});
      }
  }
  std::vector<double> out(std::size_t(W) * H * 4);
  std::vector<double> final_t(std::size_t(W) * H);
  const double* pcol = color.data().data();
  for (std::size_t p = 0; p < lists.size(); ++p) {
    double T = 1.0, c[3] = {0, 0, 0};
    for (Entry& e : lists[p]) {
      e.trans = T;
      for (int k = 0; k < 3; ++k) c[k] += pcol[e.g * 3 + k] * e.alpha * T;
      T *= 1.0 - e.alpha;
    }
    final_t[p] = T;
    for (int k = 0; k < 3; ++k) out[p * 4 + k] = c[k] + T * rs.background[k];
    out[p * 4 + 3] = 1.0 - T;
  }
  auto shared = std::make_shared<std::vector<std::vector<Entry>>>(std::move(lists));
  const Vec3 bg = rs.background;
  return ag::make_op(
      {std::int64_t(W) * H, 4}, std::move(out), {uv, conic, color, opacity},
      [shared, final_t = std::move(final_t), W, bg](ag::Node& self) {
        auto& nuv = *self.parents[0];
        auto& ncon = *self.parents[1];
        auto& ncol = *self.parents[2];
        auto& nop = *self.parents[3];
        const auto& lists = *shared;
        for (std::size_t p = 0; p < lists.size(); ++p) {
          const auto& list = lists[p];
          if (list.empty()) continue;
          const double* g = self.grad.data() + p * 4;
          const double T_end = final_t[p];
          double behind[3] = {bg[0], bg[1], bg[2]};
          const int px = int(p % std::size_t(W)), py = int(p / std::size_t(W));
          for (auto it = list.rbegin(); it != list.rend(); ++it) {
            const Entry& e = *it;
            const std::size_t gi = e.g;
            const double* col = ncol.value.data() + gi * 3;
            if (ncol.requires_grad)
              for (int k = 0; k < 3; ++k) ncol.grad[gi * 3 + k] += g[k] * e.alpha * e.trans;
            double dalpha = 0.0;
            for (int k = 0; k < 3; ++k) dalpha += g[k] * e.trans * (col[k] - behind[k]);
            dalpha += g[3] * T_end / (1.0 - e.alpha);
            for (int k = 0; k < 3; ++k) behind[k] = col[k] * e.alpha + (1.0 - e.alpha) * behind[k];
            if (e.clamped) continue;
            const double dx = px + 0.5 - nuv.value[gi * 2], dy = py + 0.5 - nuv.value[gi * 2 + 1];
            const double A = ncon.value[gi * 3], B = ncon.value[gi * 3 + 1], C = ncon.value[gi * 3 + 2];
            if (nop.requires_grad) nop.grad[gi] += dalpha * std::exp(-0.5 * (A * dx * dx + C * dy * dy) - B * dx * dy);
            const double dpow = dalpha * e.alpha;
            if (nuv.requires_grad) {
              nuv.grad[gi * 2] += dpow * (A * dx + B * dy);
              nuv.grad[gi * 2 + 1] += dpow * (B * dx + C * dy);
            }
            if (ncon.requires_grad) {
              ncon.grad[gi * 3] += dpow * -0.5 * dx * dx;
              ncon.grad[gi * 3 + 1] += dpow * -dx * dy;
              ncon.grad[gi * 3 + 2] += dpow * -0.5 * dy * dy;
            }
          }
        }
      });
}

inline ag::Tensor col(const ag::Tensor& t, std::int64_t c) { return ag::slice_cols(t, c, c + 1); }

}  // namespace render_detail

/// Renders Gaussians from `cam` (camera-to-world, same frame as the means). Gradients
/// reach every attribute tensor that requires grad; the camera is held fixed.
inline RenderResult rasterize(const GaussianTensors& g, const CameraPose& cam, const RenderSettings& rs) {
  using namespace ag;
  cam.validate();
  if (rs.width <= 0 || rs.height <= 0) throw InvalidInput("rasterize: image size must be positive");
  const std::int64_t n = g.size();
  RenderResult res;
  res.width = rs.width;
  res.height = rs.height;
  if (n == 0) {
    std::vector<double> rgb(std::size_t(rs.width) * rs.height * 3);
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = rs.background[int(i % 3)];
    res.rgb = Tensor::constant({std::int64_t(rs.width) * rs.height, 3}, std::move(rgb));
    res.alpha = Tensor::constant({std::int64_t(rs.width) * rs.height, 1}, 0.0);
    return res;
  }
  const Intrinsics K = Intrinsics::from_fov(cam.f, rs.width, rs.height);
  const Mat3 Rc = cam.rotation();
  std::vector<double> rc(9), wt(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      rc[std::size_t(r * 3 + c)] = Rc(r, c);
      wt[std::size_t(r * 3 + c)] = Rc(c, r);
    }
  const Tensor Rcam = Tensor::constant({3, 3}, rc);
  const Tensor Wrow = Tensor::constant({1, 9}, wt);

  // Camera-frame means: p_c = R^T (mu - t), as rows p_c^T = (mu - t)^T R.
  const Tensor pc = matmul(g.mu - Tensor::constant({3}, {cam.t.x(), cam.t.y(), cam.t.z()}), Rcam);
  const Tensor x = render_detail::col(pc, 0), y = render_detail::col(pc, 1);
  std::vector<double> depth(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> live(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    depth[std::size_t(i)] = pc[std::size_t(i * 3 + 2)];
    live[std::size_t(i)] = depth[std::size_t(i)] > rs.near;
  }
  // Culled splats keep a dummy positive depth so the tape stays finite.
  Tensor z = render_detail::col(pc, 2);
  {
    std::vector<double> mask(static_cast<std::size_t>(n)), off(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      mask[std::size_t(i)] = live[std::size_t(i)] ? 1.0 : 0.0;
      off[std::size_t(i)] = live[std::size_t(i)] ? 0.0 : 1.0;
    }
    z = z * Tensor::constant({n, 1}, mask) + Tensor::constant({n, 1}, off);
  }
  const Tensor inv_z = Tensor::constant({n, 1}, 1.0) / z;
  const Tensor u = x * inv_z * K.fx + K.cx;
  const Tensor v = y * inv_z * K.fy + K.cy;
  const Tensor uv = concat_cols({u, v});

  // 2D covariance: A = J W (Rg S), Sigma2D = A A^T + dilation.
  const Tensor zero = Tensor::constant({n, 1}, 0.0);
  const Tensor inv_z2 = inv_z * inv_z;
  const Tensor J = concat_cols({inv_z * K.fx, zero, -(x * inv_z2) * K.fx, zero, inv_z * K.fy, -(y * inv_z2) * K.fy});
  const Tensor T = bmm(J, Wrow, 2, 3, 3);
  const Tensor s = exp(g.log_scale);
  const Tensor M = render_detail::quat_to_rotmat(normalize_rows(g.rot)) * concat_cols({s, s, s});
  const Tensor A = bmm(T, M, 2, 3, 3);
  const Tensor a0 = slice_cols(A, 0, 3), a1 = slice_cols(A, 3, 6);
  const Tensor ca = sum_cols(a0 * a0) + rs.dilation;
  const Tensor cb = sum_cols(a0 * a1);
  const Tensor cc = sum_cols(a1 * a1) + rs.dilation;
  const Tensor det = ca * cc - cb * cb;
  const Tensor conic = concat_cols({cc / det, -(cb / det), ca / det});

  // Colors from the viewing direction camera -> mean.
  const Tensor dir = normalize_rows(g.mu - Tensor::constant({3}, {cam.t.x(), cam.t.y(), cam.t.z()}));
  const auto basis = sh::basis(render_detail::col(dir, 0), render_detail::col(dir, 1), render_detail::col(dir, 2), rs.sh_degree,
                               Tensor::constant({n, 1}, 1.0));
  const Tensor Y = concat_cols(basis);
  const int nb = int(basis.size());
  std::vector<Tensor> chans;
  for (int c = 0; c < 3; ++c)
    chans.push_back(sum_cols(slice_cols(g.sh, c * kShCoeffsPerChannel, c * kShCoeffsPerChannel + nb) * Y));
  const Tensor color = clamp_min(concat_cols(chans) + 0.5, 0.0);

  std::vector<render_detail::Splat> boxes(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t k = std::size_t(i);
    const double a = ca[k], b = cb[k], c = cc[k], d = a * c - b * b;
    if (!live[k] || !(d > 0) || !std::isfinite(u[k]) || !std::isfinite(v[k])) {
      live[k] = 0;
      continue;
    }
    const double mid = 0.5 * (a + c);
    const double lmax = mid + std::sqrt(std::max(0.1, mid * mid - d));
    const double r = std::ceil(3.0 * std::sqrt(lmax));
    boxes[k] = {std::max(0, int(std::floor(u[k] - r))), std::min(rs.width, int(std::ceil(u[k] + r)) + 1),
                std::max(0, int(std::floor(v[k] - r))), std::min(rs.height, int(std::ceil(v[k] + r)) + 1)};
    if (boxes[k].x0 >= boxes[k].x1 || boxes[k].y0 >= boxes[k].y1) live[k] = 0;
  }
  const Tensor out = render_detail::composite(uv, conic, color, g.alpha, depth, boxes, std::move(live), rs);
  res.rgb = slice_cols(out, 0, 3);
  res.alpha = slice_cols(out, 3, 4);
  return res;
}

/// Non-differentiable render of a plain Gaussian list.
inline RenderResult rasterize(std::span<const Gaussian3D> gs, const CameraPose& cam, const RenderSettings& rs) {
  ag::NoGradGuard ng;
  return rasterize(GaussianTensors::from(gs), cam, rs);
}

/// Merges Gaussians sharing a voxel of side `voxel`: opacity-weighted means of position,
/// log-scale, sign-aligned rotation, SH and joint vectors; opacity 1 - prod(1 - alpha).
/// Output keeps the order in which voxels are first visited.
inline std::vector<Gaussian3D> voxel_merge(std::span<const Gaussian3D> gs, double voxel, std::span<const JointVector> joints = {},
                                           std::vector<JointVector>* merged_joints = nullptr) {
  if (!(voxel > 0)) throw InvalidInput("voxel_merge: voxel size must be positive");
  if (!joints.empty() && joints.size() != gs.size()) throw InvalidInput("voxel_merge: joint vectors must match Gaussians");
  std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < gs.size(); ++i) {
    const Vec3& m = gs[i].mu;
    const auto key = std::make_tuple(std::int64_t(std::floor(m.x() / voxel)), std::int64_t(std::floor(m.y() / voxel)),
                                     std::int64_t(std::floor(m.z() / voxel)));
    auto [it, fresh] = slot.try_emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  std::vector<Gaussian3D> out;
  out.reserve(groups.size());
  if (merged_joints) merged_joints->clear();
  for (const auto& grp : groups) {
    double wsum = 0.0, keep = 1.0;
    for (std::size_t i : grp) {
      wsum += gs[i].alpha;
      keep *= 1.0 - gs[i].alpha;
    }
    const bool uniform = !(wsum > 0);
    auto weight = [&](std::size_t i) { return uniform ? 1.0 / double(grp.size()) : gs[i].alpha / wsum; };
    Gaussian3D m;
    m.mu = Vec3::Zero();
    m.log_scale = Vec3::Zero();
    const Quat ref = gs[grp.front()].rot;
    Quat q{0, 0, 0, 0};
    JointVector jv{};
    for (std::size_t i : grp) {
      const double w = weight(i);
      const Gaussian3D& g = gs[i];
      m.mu += w * g.mu;
      m.log_scale += w * g.log_scale;
      const double sgn = g.rot.dot(ref) < 0 ? -1.0 : 1.0;
      q.w += sgn * w * g.rot.w;
      q.x += sgn * w * g.rot.x;
      q.y += sgn * w * g.rot.y;
      q.z += sgn * w * g.rot.z;
      for (int k = 0; k < kShCoeffs; ++k) m.sh[std::size_t(k)] += w * g.sh[std::size_t(k)];
      if (!joints.empty())
        for (int k = 0; k < kJointChannels; ++k) jv[std::size_t(k)] += w * joints[i][std::size_t(k)];
    }
    m.rot = q.norm() > 1e-12 ? q.normalized() : ref;
    m.alpha = 1.0 - keep;
    out.push_back(m);
    if (merged_joints && !joints.empty()) merged_joints->push_back(jv);
  }
  return out;
}

}  // namespace artikin
