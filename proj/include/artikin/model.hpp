#pragma once

// Feed-forward network: patch embedding, alternating frame/global attention with camera
// and state tokens, cross-state attention, and DPT-style per-pixel heads (depth,
// Gaussian attributes, FiLM-conditioned joint map).

#include "artikin/autograd.hpp"
#include "artikin/core.hpp"
#include "artikin/render.hpp"

#include <map>
#include <random>
#include <string>

namespace artikin::model {

using ag::Tensor;

struct ModelConfig {
  int dim = 128;
  int layers = 4;
  int heads = 4;
  int patch = 8;
  int mlp_ratio = 2;
  int dec_channels = 32;
  std::array<int, 4> taps{1, 2, 3, 4};  // layer outputs feeding the decoders; 0 is the embedding
  bool use_csa = true;
  bool use_state = true;

  void validate() const {
    if (dim <= 0 || heads <= 0 || dim % heads != 0) throw InvalidInput("model: dim must be a positive multiple of heads");
    if (layers < 0 || mlp_ratio <= 0 || dec_channels <= 0) throw InvalidInput("model: invalid layer or width settings");
    if (patch != 8) throw InvalidInput("model: patch size must be 8");
    for (int t : taps)
      if (t < 0 || t > layers) throw InvalidInput("model: decoder taps must lie in [0, layers]");
  }
};

class Params {
 public:
  Tensor& add(const std::string& name, ag::Shape shape, std::vector<double> value) {
    if (index_.count(name)) throw InvalidInput("duplicate parameter " + name);
    index_[name] = list_.size();
    list_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(value)));
    return list_.back().second;
  }

  const Tensor& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("missing parameter " + name);
    return list_[it->second].second;
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<std::pair<std::string, Tensor>>& all() { return list_; }
  const std::vector<std::pair<std::string, Tensor>>& all() const { return list_; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : list_) n += std::size_t(t.numel());
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : list_) t.zero_grad();
  }

  /// Deep copy of values (fresh parameter nodes).
  Params clone() const {
    Params p;
    for (const auto& [n, t] : list_) p.add(n, t.shape(), t.values());
    return p;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> list_;
  std::map<std::string, std::size_t> index_;
};

/// Patch tokens [B*Np, D] (image-major), camera tokens [B, D], state tokens [S, D].
struct TokenSet {
  Tensor patch, cam, state;
  int images = 0, per_image = 0, states = 0;
};

struct ModelOutput {
  int images = 0, views = 0, states = 0, height = 0, width = 0;
  Tensor cam;          // [B,9]: t, unit q, fov
  Tensor depth;        // [B*H*W,1]
  Tensor depth_conf;   // [B*H*W,1]
  Tensor attrs;        // [B*H*W,83] raw Gaussian attributes
  Tensor conf_logit;   // [B*H*W,1]
  Tensor joints;       // [B*H*W,11], unit axis
  Tensor points;       // [B*H*W,3] predicted canonical points
  std::array<Tensor, 2> z_tilde;  // refined state summaries [1,D]

  std::size_t pixels() const { return std::size_t(height) * width; }

  CameraPose camera(int b) const {
    const double* c = cam.data().data() + b * 9;
    CameraPose p;
    p.t = {c[0], c[1], c[2]};
    p.q = Quat{c[3], c[4], c[5], c[6]}.normalized();
    p.f = {c[7], c[8]};
    return p;
  }
  Grid<double> grid(const Tensor& t, int b) const {
    const int ch = int(t.cols());
    Grid<double> g(height, width, ch);
    const auto d = t.data();
    std::copy(d.begin() + std::ptrdiff_t(b * pixels() * ch), d.begin() + std::ptrdiff_t((b + 1) * pixels() * ch), g.data.begin());
    return g;
  }
  DepthMap depth_map(int b) const {
    DepthMap m;
    m.depth = grid(depth, b);
    m.conf = grid(depth_conf, b);
    return m;
  }
  JointMap joint_map(int b) const {
    JointMap j;
    j.data = grid(joints, b);
    return j;
  }
  Grid<double> gaussian_conf(int b) const {
    Grid<double> g = grid(conf_logit, b);
    for (double& v : g.data) v = sigmoid(v);
    return g;
  }
};

namespace detail {

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline void linear(Params& p, std::mt19937_64& rng, const std::string& name, int in, int out, double scale = 1.0) {
  p.add(name + ".w", {in, out}, uniform(rng, std::size_t(in) * out, scale / std::sqrt(double(in))));
  p.add(name + ".b", {out}, std::vector<double>(std::size_t(out), 0.0));
}

inline void layernorm(Params& p, const std::string& name, int d) {
  p.add(name + ".g", {d}, std::vector<double>(std::size_t(d), 1.0));
  p.add(name + ".b", {d}, std::vector<double>(std::size_t(d), 0.0));
}

inline Tensor apply_linear(const Params& p, const std::string& name, const Tensor& x) {
  return ag::matmul(x, p[name + ".w"]) + p[name + ".b"];
}

inline Tensor apply_ln(const Params& p, const std::string& name, const Tensor& x) {
  return ag::layernorm(x, p[name + ".g"], p[name + ".b"]);
}

/// Fixed 2D sinusoidal encoding [gh*gw, D]: first half encodes rows, second half columns.
inline std::vector<double> positional_encoding(int gh, int gw, int d) {
  std::vector<double> pe(std::size_t(gh) * gw * d);
  const int half = d / 2;
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x)
      for (int c = 0; c < d; ++c) {
        const bool col = c >= half;
        const int k = col ? c - half : c;
        const int span = col ? d - half : half;
        const double freq = std::pow(10000.0, -2.0 * (k / 2) / std::max(span, 1));
        const double pos = col ? x : y;
        pe[(std::size_t(y) * gw + x) * d + c] = (k % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      }
  return pe;
}

/// [B,H,W,C] -> [B*Np, p*p*C] with patches in raster order and pixels row-major inside.
inline Tensor patch_rows(const Tensor& x, int p) {
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::int64_t gh = H / p, gw = W / p, row = std::int64_t(p) * p * C;
  std::vector<std::size_t> src(std::size_t(x.numel()));
  std::size_t o = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t py = 0; py < gh; ++py)
      for (std::int64_t px = 0; px < gw; ++px)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            for (std::int64_t c = 0; c < C; ++c)
              src[o++] = std::size_t(((b * H + py * p + dy) * W + px * p + dx) * C + c);
  std::vector<double> v(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) v[i] = x[src[i]];
  return ag::make_op({B * gh * gw, row}, std::move(v), {x}, [src = std::move(src)](ag::Node& self) {
    auto& in = *self.parents[0];
    for (std::size_t i = 0; i < src.size(); ++i) in.grad[src[i]] += self.grad[i];
  });
}

inline Tensor conv3x3(const Params& p, const std::string& name, const Tensor& x) {
  const Tensor cols = ag::im2col3x3(x);
  const std::int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Tensor y = ag::matmul(ag::reshape(cols, {B * H * W, cols.dim(3)}), p[name + ".w"]) + p[name + ".b"];
  return ag::reshape(y, {B, H, W, y.cols()});
}

}  // namespace detail

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    init(seed);
  }
  Model(const ModelConfig& cfg, Params params) : cfg_(cfg), params_(std::move(params)) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  // ------------------------------------------------------------ stages

  /// Images [B,H,W,3] in [0,1] -> tokens. State token s goes with images s*V .. s*V+V-1.
  TokenSet patchify(const Tensor& images, int states) const {
    const std::int64_t B = images.dim(0), H = images.dim(1), W = images.dim(2);
    const int p = cfg_.patch, D = cfg_.dim;
    if (H % p || W % p) throw InvalidInput("patchify: image size must be divisible by the patch size");
    const int gh = int(H / p), gw = int(W / p), np = gh * gw;
    TokenSet t;
    t.images = int(B);
    t.per_image = np;
    t.states = states;
    const Tensor pe = Tensor::constant({np, D}, detail::positional_encoding(gh, gw, D));
    std::vector<Tensor> pes(std::size_t(B), pe);
    t.patch = detail::apply_linear(params_, "embed", detail::patch_rows(images, p)) + ag::concat_rows(pes);
    std::vector<Tensor> cams;
    for (std::int64_t b = 0; b < B; ++b) cams.push_back(ag::reshape(params_[b == 0 ? "cam_tok.ref" : "cam_tok.other"], {1, D}));
    t.cam = ag::concat_rows(cams);
    if (cfg_.use_state) t.state = params_["state_tok"];
    return t;
  }

  /// Runs the attention stack. Returns the final token set and the patch tokens of every
  /// layer (index 0 is the embedding).
  TokenSet backbone(const TokenSet& in, std::vector<Tensor>* layer_patches = nullptr) const {
    const int B = in.images, np = in.per_image, S = in.states;
    const int per = np + 1;
    const bool st = cfg_.use_state;
    const int T = B * per + (st ? S : 0);
    const int V = B / S;
    // Sequence layout: per image [cam, patches...], then state tokens.
    std::vector<Tensor> parts;
    for (int b = 0; b < B; ++b) {
      parts.push_back(ag::slice_rows(in.cam, b, b + 1));
      parts.push_back(ag::slice_rows(in.patch, std::int64_t(b) * np, std::int64_t(b + 1) * np));
    }
    if (st) parts.push_back(in.state);
    Tensor x = ag::concat_rows(parts);
    auto frame_mask = std::make_shared<std::vector<std::uint8_t>>(std::size_t(T) * T, 0);
    auto group = [&](int tok) { return tok < B * per ? (tok / per) : -1; };
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < T; ++j) {
        const int gi = group(i), gj = group(j);
        bool ok;
        if (gi >= 0 && gj >= 0) ok = gi == gj;
        else if (gi >= 0) ok = (j - B * per) == gi / V;
        else if (gj >= 0) ok = (i - B * per) == gj / V;
        else ok = i == j;
        (*frame_mask)[std::size_t(i) * T + j] = ok;
      }
    auto patches_of = [&](const Tensor& seq) {
      std::vector<Tensor> ps;
      for (int b = 0; b < B; ++b) ps.push_back(ag::slice_rows(seq, std::int64_t(b) * per + 1, std::int64_t(b + 1) * per));
      return ag::concat_rows(ps);
    };
    if (layer_patches) {
      layer_patches->clear();
      layer_patches->push_back(in.patch);
    }
    for (int l = 1; l <= cfg_.layers; ++l) {
      const std::string n = "blk" + std::to_string(l);
      const bool frame = l % 2 == 1;
      const Tensor h = detail::apply_ln(params_, n + ".ln1", x);
      const Tensor qkv = detail::apply_linear(params_, n + ".qkv", h);
      const int D = cfg_.dim;
      const Tensor a = ag::attention(ag::slice_cols(qkv, 0, D), ag::slice_cols(qkv, D, 2 * D), ag::slice_cols(qkv, 2 * D, 3 * D),
                                     cfg_.heads, frame ? frame_mask : nullptr);
      x = x + detail::apply_linear(params_, n + ".proj", a);
      const Tensor h2 = detail::apply_ln(params_, n + ".ln2", x);
      x = x + detail::apply_linear(params_, n + ".fc2", ag::gelu(detail::apply_linear(params_, n + ".fc1", h2)));
      if (layer_patches) layer_patches->push_back(patches_of(x));
    }
    x = detail::apply_ln(params_, "final_ln", x);
    TokenSet out = in;
    out.patch = patches_of(x);
    std::vector<Tensor> cams;
    for (int b = 0; b < B; ++b) cams.push_back(ag::slice_rows(x, std::int64_t(b) * per, std::int64_t(b) * per + 1));
    out.cam = ag::concat_rows(cams);
    if (st) out.state = ag::slice_rows(x, std::int64_t(B) * per, T);
    return out;
  }

  /// z~_s = z_s + Out(Attn(Q = z_s, K = V = patch tokens of the other state)).
  std::array<Tensor, 2> cross_state_attention(const Tensor& z0, const Tensor& z1, const Tensor& f0, const Tensor& f1) const {
    auto one = [&](const Tensor& z, const Tensor& f) {
      const Tensor q = detail::apply_linear(params_, "csa.q", z);
      const Tensor k = detail::apply_linear(params_, "csa.k", f);
      const Tensor v = detail::apply_linear(params_, "csa.v", f);
      return z + detail::apply_linear(params_, "csa.out", ag::attention(q, k, v, cfg_.heads, nullptr));
    };
    return {one(z0, f1), one(z1, f0)};
  }

  /// f'' = gamma(cond) * (f + MLP(points)) + beta(cond); f [N,C], points [N,3], cond [1,D].
  Tensor film(const std::string& branch, const Tensor& f, const Tensor& points, const Tensor& cond) const {
    const std::string n = "joint." + branch;
    const Tensor geo = detail::apply_linear(params_, n + ".geo2", ag::relu(detail::apply_linear(params_, n + ".geo1", points)));
    const Tensor gamma = ag::reshape(detail::apply_linear(params_, n + ".gamma", cond), {f.cols()});
    const Tensor beta = ag::reshape(detail::apply_linear(params_, n + ".beta", cond), {f.cols()});
    return (f + geo) * gamma + beta;
  }

  /// Multi-scale fusion of the tapped patch tokens into a [B, H/2, W/2, C] map.
  Tensor fuse(const std::string& name, const std::vector<Tensor>& layer_patches, int B, int gh, int gw) const {
    const int C = cfg_.dec_channels;
    std::array<Tensor, 4> r;
    for (int i = 0; i < 4; ++i) {
      const Tensor t = layer_patches[std::size_t(cfg_.taps[std::size_t(i)])];
      r[std::size_t(i)] = ag::reshape(detail::apply_linear(params_, name + ".re" + std::to_string(i), t), {B, gh, gw, C});
    }
    const Tensor r1 = ag::upsample2x(ag::upsample2x(r[0]));
    const Tensor r2 = ag::upsample2x(r[1]);
    Tensor f = detail::conv3x3(params_, name + ".fuse0", ag::relu(r[3] + r[2]));
    f = detail::conv3x3(params_, name + ".fuse1", ag::relu(ag::upsample2x(f) + r2));
    f = detail::conv3x3(params_, name + ".fuse2", ag::relu(ag::upsample2x(f) + r1));
    return f;
  }

  /// 1x1 projection of a half-resolution map followed by a 2x bilinear upsample -> [B*H*W, K].
  Tensor project_up(const std::string& name, const Tensor& f) const {
    const std::int64_t B = f.dim(0), h = f.dim(1), w = f.dim(2);
    const Tensor y = detail::apply_linear(params_, name, ag::relu(ag::reshape(f, {B * h * w, f.dim(3)})));
    const Tensor up = ag::upsample2x(ag::reshape(y, {B, h, w, y.cols()}));
    return ag::reshape(up, {B * h * w * 4, y.cols()});
  }

  /// Canonical points from predicted depth [B*H*W,1] and cameras [B,9].
  static Tensor unproject_tensor(const Tensor& depth, const Tensor& cam, int B, int H, int W) {
    std::vector<double> xs(std::size_t(H) * W), ys(std::size_t(H) * W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        xs[std::size_t(y) * W + x] = (x + 0.5 - 0.5 * W) * 2.0 / W;
        ys[std::size_t(y) * W + x] = (y + 0.5 - 0.5 * H) * 2.0 / H;
      }
    const Tensor X = Tensor::constant({std::int64_t(H) * W, 1}, xs), Y = Tensor::constant({std::int64_t(H) * W, 1}, ys);
    const std::int64_t P = std::int64_t(H) * W;
    std::vector<Tensor> out;
    for (int b = 0; b < B; ++b) {
      const Tensor c = ag::slice_rows(cam, b, b + 1);
      const Tensor R = ag::reshape(render_detail::quat_to_rotmat(ag::slice_cols(c, 3, 7)), {3, 3});
      const Tensor half = ag::slice_cols(c, 7, 9) * 0.5;
      const Tensor tan = ag::sin(half) / ag::cos(half);
      const Tensor d = ag::slice_rows(depth, b * P, (b + 1) * P);
      const Tensor px = d * X * ag::reshape(ag::slice_cols(tan, 0, 1), {1});
      const Tensor py = d * Y * ag::reshape(ag::slice_cols(tan, 1, 2), {1});
      const Tensor pc = ag::concat_cols({px, py, d});
      out.push_back(ag::matmul(pc, ag::transpose(R)) + ag::reshape(ag::slice_cols(c, 0, 3), {3}));
    }
    return ag::concat_rows(out);
  }

  /// Dual-branch joint head over the fused trunk [B, H/2, W/2, C]; `points` [B*H*W, 3].
  /// Invariant channels see `cond_inv`, variant channels see the condition of the image's state.
  Tensor joint_head(const Tensor& trunk, const Tensor& points, const Tensor& cond_inv, const std::array<Tensor, 2>& cond_var,
                    int views) const {
    const std::int64_t B = trunk.dim(0), h2 = trunk.dim(1), w2 = trunk.dim(2), C = trunk.dim(3);
    const std::int64_t P2 = h2 * w2;
    const Tensor pts_half = ag::reshape(ag::avgpool2x(ag::reshape(points, {B, 2 * h2, 2 * w2, 3})), {B * P2, 3});
    const Tensor rows = ag::reshape(trunk, {B * P2, C});
    std::vector<Tensor> inv_rows, var_rows;
    for (std::int64_t b = 0; b < B; ++b) {
      const Tensor f = ag::slice_rows(rows, b * P2, (b + 1) * P2);
      const Tensor p = ag::slice_rows(pts_half, b * P2, (b + 1) * P2);
      inv_rows.push_back(film("inv", f, p, cond_inv));
      var_rows.push_back(film("var", f, p, cond_var[std::size_t(b / views)]));
    }
    const Tensor inv = project_up("joint.inv.out", ag::reshape(ag::concat_rows(inv_rows), {B, h2, w2, C}));
    const Tensor var = project_up("joint.var.out", ag::reshape(ag::concat_rows(var_rows), {B, h2, w2, C}));
    return ag::concat_cols({ag::slice_cols(inv, 0, 3), ag::normalize_rows(ag::slice_cols(inv, 3, 6)), ag::slice_cols(inv, 6, 9), var});
  }

  /// Full forward pass. `images` is [V*S, H, W, 3], state-major.
  ModelOutput forward(const Tensor& images, int views, int states) const {
    if (states != 2) throw InvalidInput("forward: exactly two articulation states are supported");
    if (views < 1 || images.shape().size() != 4 || images.dim(0) != std::int64_t(views) * states || images.dim(3) != 3)
      throw InvalidInput("forward: images must be [V*S, H, W, 3]");
    const int B = int(images.dim(0)), H = int(images.dim(1)), W = int(images.dim(2));
    const int gh = H / cfg_.patch, gw = W / cfg_.patch;
    ModelOutput o;
    o.images = B;
    o.views = views;
    o.states = states;
    o.height = H;
    o.width = W;

    std::vector<Tensor> taps;
    const TokenSet tok = backbone(patchify(images, states), &taps);

    // Camera head.
    const Tensor c = detail::apply_linear(params_, "cam.fc2", ag::gelu(detail::apply_linear(params_, "cam.fc1", tok.cam)));
    const Tensor fov = ag::sigmoid(ag::slice_cols(c, 7, 9)) * kPi;
    o.cam = ag::concat_cols({ag::slice_cols(c, 0, 3), ag::normalize_rows(ag::slice_cols(c, 3, 7)), fov});

    // Depth head.
    const Tensor dr = project_up("depth.out", fuse("depth", taps, B, gh, gw));
    o.depth = ag::softplus(ag::slice_cols(dr, 0, 1));
    o.depth_conf = ag::softplus(ag::slice_cols(dr, 1, 2));

    // Gaussian head.
    const Tensor gr = project_up("gauss.out", fuse("gauss", taps, B, gh, gw));
    o.attrs = ag::slice_cols(gr, 0, kGaussianAttrs);
    o.conf_logit = ag::slice_cols(gr, kGaussianAttrs, kGaussianAttrs + 1);

    o.points = unproject_tensor(o.depth, o.cam, B, H, W);

    // State summaries and conditioning.
    std::array<Tensor, 2> cond_var;
    Tensor cond_inv;
    if (cfg_.use_state) {
      const std::int64_t np = std::int64_t(gh) * gw;
      const Tensor f0 = ag::slice_rows(tok.patch, 0, views * np), f1 = ag::slice_rows(tok.patch, views * np, 2 * views * np);
      const Tensor z0 = ag::slice_rows(tok.state, 0, 1), z1 = ag::slice_rows(tok.state, 1, 2);
      o.z_tilde = cfg_.use_csa ? cross_state_attention(z0, z1, f0, f1) : std::array<Tensor, 2>{z0, z1};
      cond_inv = (o.z_tilde[0] + o.z_tilde[1]) * 0.5;
      cond_var = o.z_tilde;
    } else {
      const Tensor k = ag::reshape(params_["cond_const"], {1, cfg_.dim});
      o.z_tilde = {k, k};
      cond_inv = k;
      cond_var = {k, k};
    }

    o.joints = joint_head(fuse("joint", taps, B, gh, gw), o.points, cond_inv, cond_var, views);
    return o;
  }

 private:
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int D = cfg_.dim, C = cfg_.dec_channels, p = cfg_.patch;
    Params& P = params_;
    detail::linear(P, rng, "embed", p * p * 3, D);
    P.add("cam_tok.ref", {D}, detail::uniform(rng, std::size_t(D), 1.0));
    P.add("cam_tok.other", {D}, detail::uniform(rng, std::size_t(D), 1.0));
    if (cfg_.use_state) P.add("state_tok", {2, D}, detail::uniform(rng, std::size_t(2 * D), 1.0));
    else P.add("cond_const", {D}, detail::uniform(rng, std::size_t(D), 1.0));
    for (int l = 1; l <= cfg_.layers; ++l) {
      const std::string n = "blk" + std::to_string(l);
      detail::layernorm(P, n + ".ln1", D);
      detail::linear(P, rng, n + ".qkv", D, 3 * D);
      detail::linear(P, rng, n + ".proj", D, D, 0.5);
      detail::layernorm(P, n + ".ln2", D);
      detail::linear(P, rng, n + ".fc1", D, cfg_.mlp_ratio * D);
      detail::linear(P, rng, n + ".fc2", cfg_.mlp_ratio * D, D, 0.5);
    }
    detail::layernorm(P, "final_ln", D);
    if (cfg_.use_state && cfg_.use_csa)
      for (const char* n : {"csa.q", "csa.k", "csa.v", "csa.out"}) detail::linear(P, rng, n, D, D);
    detail::linear(P, rng, "cam.fc1", D, D);
    detail::linear(P, rng, "cam.fc2", D, 9, 0.1);
    {
      auto b = P.all().back().second.mutable_data();
      b[3] = 1.0;                                   // identity rotation
      b[7] = b[8] = std::log(50.0 / 130.0);         // ~50 degree field of view
    }
    for (const char* dec : {"depth", "gauss", "joint"}) {
      for (int i = 0; i < 4; ++i) detail::linear(P, rng, std::string(dec) + ".re" + std::to_string(i), D, C);
      for (int i = 0; i < 3; ++i) detail::linear(P, rng, std::string(dec) + ".fuse" + std::to_string(i), 9 * C, C);
    }
    detail::linear(P, rng, "depth.out", C, 2, 0.1);
    detail::linear(P, rng, "gauss.out", C, kGaussianAttrs + 1, 0.1);
    {
      auto b = P.all().back().second.mutable_data();
      for (int k = 0; k < 3; ++k) b[std::size_t(k)] = std::log(0.01);  // small initial splats
      b[3] = 1.0;                                                      // identity rotation
    }
    for (const char* br : {"inv", "var"}) {
      const std::string n = std::string("joint.") + br;
      detail::linear(P, rng, n + ".geo1", 3, C);
      detail::linear(P, rng, n + ".geo2", C, C, 0.0);
      detail::linear(P, rng, n + ".gamma", D, C, 0.1);
      auto g = P.all().back().second.mutable_data();
      std::fill(g.begin(), g.end(), 1.0);
      detail::linear(P, rng, n + ".beta", D, C, 0.1);
    }
    detail::linear(P, rng, "joint.inv.out", C, kInvariantChannels, 0.1);
    detail::linear(P, rng, "joint.var.out", C, kVariantChannels, 0.1);
  }

  ModelConfig cfg_;
  Params params_;
};

/// Stacks RGB byte frames into a [B,H,W,3] tensor in [0,1].
inline Tensor images_tensor(std::span<const Grid<std::uint8_t>* const> frames) {
  if (frames.empty()) throw InvalidInput("images_tensor: no frames");
  const int H = frames[0]->height, W = frames[0]->width;
  std::vector<double> v;
  v.reserve(frames.size() * std::size_t(H) * W * 3);
  for (const auto* f : frames) {
    if (f->height != H || f->width != W || f->channels != 3) throw InvalidInput("images_tensor: frames must share size and be RGB");
    for (std::uint8_t b : f->data) v.push_back(b / 255.0);
  }
  return Tensor::constant({std::int64_t(frames.size()), H, W, 3}, std::move(v));
}

}  // namespace artikin::model
