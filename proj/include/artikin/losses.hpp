#pragma once

// Training objectives. Per-pixel inputs are tape tensors with one row per pixel,
// images stacked in order; ground truth comes as plain grids.

#include "artikin/autograd.hpp"
#include "artikin/core.hpp"

#include <map>

namespace artikin::losses {

inline constexpr double kHuberDelta = 1.0;
inline constexpr double kDepthAlpha = 0.2;
inline constexpr double kConfFloor = 1e-3;
inline constexpr double kPerceptualWeight = 0.1;

struct LossWeights {
  double pose = 3.0;
  double depth = 3.0;
  double joint = 5.0;
  double consist = 0.5;
  double smooth = 0.1;
  double rgb = 1.0;
  double mask = 1.0;  // foreground BCE on the Gaussian confidence

  void validate() const {
    for (double w : {pose, depth, joint, consist, smooth, rgb, mask})
      if (!std::isfinite(w) || w < 0) throw InvalidInput("loss weights must be finite and non-negative");
  }
};

/// Distance from p to the line through p_star along unit a_star.
inline double d_perp(const Vec3& p, const Vec3& p_star, const Vec3& a_star) {
  const Vec3 v = p - p_star;
  return (v - v.dot(a_star) * a_star).norm();
}

namespace detail {
inline ag::Tensor zero() { return ag::Tensor::scalar(0.0); }

inline ag::Tensor repeat3(const ag::Tensor& c) { return ag::concat_cols({c, c, c}); }

inline ag::Tensor nonempty_mean(const ag::Tensor& total, std::size_t count) {
  return count == 0 ? zero() : total * (1.0 / double(count));
}
}  // namespace detail

/// Huber over (t, q, f) per image with q flipped onto gt's hemisphere, averaged over images.
/// `pred` is [B,9].
inline ag::Tensor loss_pose(const ag::Tensor& pred, std::span<const CameraPose> gt) {
  const std::int64_t b = pred.rows();
  if (pred.cols() != 9 || std::size_t(b) != gt.size()) throw InvalidInput("loss_pose: expected [B,9] against B cameras");
  if (b == 0) return detail::zero();
  std::vector<double> flip(std::size_t(b * 9), 1.0), target;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto g = gt[std::size_t(i)].to_params();
    double dot = 0;
    for (int k = 3; k < 7; ++k) dot += pred[std::size_t(i * 9 + k)] * g[std::size_t(k)];
    if (dot < 0)
      for (int k = 3; k < 7; ++k) flip[std::size_t(i * 9 + k)] = -1.0;
    target.insert(target.end(), g.begin(), g.end());
  }
  const ag::Tensor aligned = pred * ag::Tensor::constant({b, 9}, flip);
  return ag::sum(ag::huber(aligned - ag::Tensor::constant({b, 9}, target), kHuberDelta)) * (1.0 / double(b));
}

/// Confidence-weighted depth regression over foreground pixels: conf |D - D*| - alpha log conf.
inline ag::Tensor loss_depth(const ag::Tensor& depth, const ag::Tensor& conf, std::span<const double> gt,
                             std::span<const std::uint8_t> fg, double alpha = kDepthAlpha, double eps = kConfFloor) {
  if (std::size_t(depth.numel()) != gt.size() || gt.size() != fg.size() || conf.numel() != depth.numel())
    throw InvalidInput("loss_depth: sizes differ");
  std::vector<std::int64_t> idx;
  std::vector<double> target;
  for (std::size_t i = 0; i < fg.size(); ++i)
    if (fg[i]) {
      idx.push_back(std::int64_t(i));
      target.push_back(gt[i]);
    }
  if (idx.empty()) return detail::zero();
  const std::int64_t n = std::int64_t(idx.size());
  const ag::Tensor d = ag::gather_rows(ag::reshape(depth, {depth.numel(), 1}), idx);
  const ag::Tensor c = ag::clamp_min(ag::gather_rows(ag::reshape(conf, {conf.numel(), 1}), idx), eps);
  const ag::Tensor err = ag::abs(d - ag::Tensor::constant({n, 1}, target));
  return ag::mean(c * err - ag::log(c) * alpha);
}

struct JointTargets {
  std::span<const JointMap> gt;
  std::span<const PartLabelMap> labels;

  std::size_t pixels() const {
    std::size_t n = 0;
    for (const auto& l : labels) n += l.labels.pixels();
    return n;
  }
};

/// Mean over foreground pixels of CE(type) + |a - a*|_1 + d_perp (movable pixels) +
/// Huber(theta) (revolute) + Huber(d) (prismatic). `pred` is [P,11] over all images.
inline ag::Tensor loss_joint(const ag::Tensor& pred, const JointTargets& t) {
  if (pred.cols() != kJointChannels || std::size_t(pred.rows()) != t.pixels() || t.gt.size() != t.labels.size())
    throw InvalidInput("loss_joint: prediction rows must cover every pixel of every image");
  std::vector<std::int64_t> fg, mov, rev, pri;
  std::vector<int> kinds;
  std::vector<double> axis, pivot, theta, disp;
  std::int64_t base = 0;
  for (std::size_t im = 0; im < t.gt.size(); ++im) {
    const JointMap& g = t.gt[im];
    const auto& lab = t.labels[im].labels;
    if (!g.data.same_shape(lab.height, lab.width)) throw InvalidInput("loss_joint: label and joint map shapes differ");
    for (std::size_t i = 0; i < lab.pixels(); ++i) {
      if (lab.data[i] < 0) continue;
      const std::int64_t r = base + std::int64_t(i);
      const double* v = g.pixel(i);
      const JointKind k = argmax_kind(v);
      fg.push_back(r);
      kinds.push_back(int(k));
      if (k == JointKind::Static) continue;
      mov.push_back(r);
      axis.insert(axis.end(), v + kChAxis, v + kChAxis + 3);
      pivot.insert(pivot.end(), v + kChPivot, v + kChPivot + 3);
      if (k == JointKind::Revolute) {
        rev.push_back(r);
        theta.push_back(v[kChAngle]);
      } else {
        pri.push_back(r);
        disp.push_back(v[kChDisp]);
      }
    }
    base += std::int64_t(lab.pixels());
  }
  if (fg.empty()) return detail::zero();
  ag::Tensor total = ag::sum(ag::cross_entropy_rows(ag::slice_cols(ag::gather_rows(pred, fg), 0, 3), kinds));
  if (!mov.empty()) {
    const std::int64_t m = std::int64_t(mov.size());
    const ag::Tensor rows = ag::gather_rows(pred, mov);
    const ag::Tensor a_star = ag::Tensor::constant({m, 3}, axis);
    total = total + ag::sum(ag::abs(ag::slice_cols(rows, kChAxis, kChAxis + 3) - a_star));
    const ag::Tensor v = ag::slice_cols(rows, kChPivot, kChPivot + 3) - ag::Tensor::constant({m, 3}, pivot);
    const ag::Tensor along = detail::repeat3(ag::sum_cols(v * a_star));
    total = total + ag::sum(ag::row_norm(v - along * a_star));
  }
  if (!rev.empty()) {
    const ag::Tensor th = ag::slice_cols(ag::gather_rows(pred, rev), kChAngle, kChAngle + 1);
    total = total + ag::sum(ag::huber(th - ag::Tensor::constant({std::int64_t(rev.size()), 1}, theta), kHuberDelta));
  }
  if (!pri.empty()) {
    const ag::Tensor d = ag::slice_cols(ag::gather_rows(pred, pri), kChDisp, kChDisp + 1);
    total = total + ag::sum(ag::huber(d - ag::Tensor::constant({std::int64_t(pri.size()), 1}, disp), kHuberDelta));
  }
  return total * (1.0 / double(fg.size()));
}

/// Mean over moving parts seen in both states of the L2 gap between per-state means of the
/// invariant channels. `states[i]` gives the state (0 or 1) of image i.
inline ag::Tensor loss_consist(const ag::Tensor& pred, std::span<const PartLabelMap> labels, std::span<const int> states) {
  if (labels.size() != states.size()) throw InvalidInput("loss_consist: one state per image required");
  std::map<int, std::array<std::vector<std::int64_t>, 2>> members;
  std::int64_t base = 0;
  for (std::size_t im = 0; im < labels.size(); ++im) {
    const int s = states[im];
    if (s != 0 && s != 1) throw InvalidInput("loss_consist: states must be 0 or 1");
    const auto& lab = labels[im].labels;
    for (std::size_t i = 0; i < lab.pixels(); ++i)
      if (lab.data[i] >= 1) members[lab.data[i]][std::size_t(s)].push_back(base + std::int64_t(i));
    base += std::int64_t(lab.pixels());
  }
  if (base != pred.rows()) throw InvalidInput("loss_consist: prediction rows must cover every pixel");
  const ag::Tensor inv = ag::slice_cols(pred, 0, kInvariantChannels);
  ag::Tensor total = detail::zero();
  std::size_t parts = 0;
  for (const auto& [part, idx] : members) {
    if (idx[0].empty() || idx[1].empty()) continue;
    // Centering on one member keeps the gap exactly zero when all members agree.
    const ag::Tensor ref = ag::gather_rows(inv, {idx[0].front()}).detach();
    const ag::Tensor gap = ag::mean_rows(ag::gather_rows(inv, idx[0]) - ref) - ag::mean_rows(ag::gather_rows(inv, idx[1]) - ref);
    total = total + ag::sum(ag::row_norm(ag::reshape(gap, {1, kInvariantChannels})));
    ++parts;
  }
  return detail::nonempty_mean(total, parts);
}

/// Mean L1 (summed over channels) between 4-neighbors that share a non-background label.
inline ag::Tensor loss_smooth(const ag::Tensor& pred, std::span<const PartLabelMap> labels) {
  std::vector<std::int64_t> a, b;
  std::int64_t base = 0;
  for (const PartLabelMap& lm : labels) {
    const int h = lm.height(), w = lm.width();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int l = lm.labels.at(y, x);
        if (l < 0) continue;
        const std::int64_t i = base + std::int64_t(y) * w + x;
        if (x + 1 < w && lm.labels.at(y, x + 1) == l) {
          a.push_back(i);
          b.push_back(i + 1);
        }
        if (y + 1 < h && lm.labels.at(y + 1, x) == l) {
          a.push_back(i);
          b.push_back(i + w);
        }
      }
    base += std::int64_t(lm.labels.pixels());
  }
  if (base != pred.rows()) throw InvalidInput("loss_smooth: prediction rows must cover every pixel");
  if (a.empty()) return detail::zero();
  const std::size_t n = a.size();
  return ag::sum(ag::abs(ag::gather_rows(pred, a) - ag::gather_rows(pred, std::move(b)))) * (1.0 / double(n));
}

/// Mean L1 of finite-difference image gradients at three dyadic scales, compared between
/// two [H*W,3] images. Stands in for a learned perceptual distance.
inline ag::Tensor gradient_proxy(const ag::Tensor& a, const ag::Tensor& b, int h, int w) {
  ag::Tensor x = ag::reshape(a - b, {1, h, w, 3});
  ag::Tensor total = detail::zero();
  int scales = 0;
  for (int s = 0; s < 3; ++s) {
    const int hh = int(x.dim(1)), ww = int(x.dim(2));
    if (hh < 2 || ww < 2) break;
    const ag::Tensor m = ag::reshape(x, {hh, ww * 3});
    const ag::Tensor gx = ag::slice_cols(m, 3, ww * 3) - ag::slice_cols(m, 0, (ww - 1) * 3);
    const ag::Tensor gy = ag::slice_rows(m, 1, hh) - ag::slice_rows(m, 0, hh - 1);
    total = total + ag::mean(ag::abs(gx)) + ag::mean(ag::abs(gy));
    ++scales;
    if (hh % 2 || ww % 2) break;
    x = ag::avgpool2x(x);
  }
  return scales ? total * (1.0 / scales) : total;
}

/// Pixel MSE plus 0.1 times the gradient proxy.
inline ag::Tensor loss_rgb(const ag::Tensor& render, const ag::Tensor& gt, int h, int w) {
  if (render.numel() != std::int64_t(h) * w * 3 || gt.numel() != render.numel()) throw InvalidInput("loss_rgb: image sizes differ");
  return ag::mean(ag::square(render - gt)) + gradient_proxy(render, gt, h, w) * kPerceptualWeight;
}

/// Binary cross-entropy of confidence logits against the foreground mask.
inline ag::Tensor loss_mask(const ag::Tensor& logits, std::span<const std::uint8_t> fg) {
  if (std::size_t(logits.numel()) != fg.size()) throw InvalidInput("loss_mask: sizes differ");
  if (fg.empty()) return detail::zero();
  std::vector<double> y(fg.begin(), fg.end());
  const ag::Tensor l = ag::reshape(logits, {logits.numel(), 1});
  return ag::mean(ag::softplus(l) - l * ag::Tensor::constant({l.numel(), 1}, y));
}

struct LossTerms {
  ag::Tensor pose, depth, joint, consist, smooth, rgb, mask;
};

inline ag::Tensor stage_loss(const LossTerms& t, const LossWeights& w, int stage) {
  if (stage != 1 && stage != 2) throw InvalidInput("stage must be 1 or 2");
  w.validate();
  ag::Tensor total = detail::zero();
  auto add = [&](const ag::Tensor& term, double weight) {
    if (term.defined() && weight != 0.0) total = total + term * weight;
  };
  add(t.pose, w.pose);
  add(t.depth, w.depth);
  add(t.joint, w.joint);
  add(t.consist, w.consist);
  add(t.smooth, w.smooth);
  add(t.mask, w.mask);
  if (stage == 2) add(t.rgb, w.rgb);
  return total;
}

}  // namespace artikin::losses
