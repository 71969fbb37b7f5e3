#pragma once

// On-disk formats: scene bundles, datasets, Gaussian sets with joint sidecars, and
// model checkpoints. Layouts are documented in docs/formats.md.

#include "artikin/synth.hpp"
#include "artikin/train.hpp"

#include <json.hpp>
#include <png.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace artikin::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- raw binaries

template <class T>
void write_raw(const fs::path& path, std::span<const T> values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size_bytes()));
  if (!f) throw IoError("short write to " + path.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::size_t count) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot read " + path.string());
  const auto size = std::size_t(f.tellg());
  if (size != count * sizeof(T))
    throw IoError(path.string() + ": expected " + std::to_string(count * sizeof(T)) + " bytes, found " + std::to_string(size));
  std::vector<T> out(count);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(out.data()), std::streamsize(size));
  return out;
}

inline std::vector<float> to_f32(std::span<const double> v) { return {v.begin(), v.end()}; }

// ---------------------------------------------------------------- PNG

inline void write_png(const fs::path& path, const Grid<std::uint8_t>& rgb) {
  if (rgb.channels != 3 || rgb.data.size() != rgb.pixels() * 3) throw InvalidInput("write_png: expected an RGB grid");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(rgb.width);
  img.height = png_uint_32(rgb.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data.data(), 0, nullptr))
    throw IoError("png write failed for " + path.string() + ": " + img.message);
}

inline Grid<std::uint8_t> read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw IoError("png read failed for " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  Grid<std::uint8_t> out(int(img.height), int(img.width), 3);
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("png decode failed for " + path.string() + ": " + img.message);
  }
  return out;
}

/// [0,1] RGB grid to bytes, rounded and clamped.
inline Grid<std::uint8_t> to_bytes(const Grid<double>& img) {
  Grid<std::uint8_t> out(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    out.data[i] = std::uint8_t(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  return out;
}

// ---------------------------------------------------------------- JSON pieces

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json to_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

inline Mat3 mat3_from(const json& j) {
  if (!j.is_array() || j.size() != 9) throw IoError("expected 9 row-major matrix entries");
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j[std::size_t(r * 3 + c)].get<double>();
  return m;
}

inline json to_json(const CameraPose& c) {
  return {{"t", to_json(c.t)}, {"q", json::array({c.q.w, c.q.x, c.q.y, c.q.z})}, {"fov", json::array({c.f.x(), c.f.y()})}};
}

inline CameraPose camera_from(const json& j) {
  CameraPose c;
  c.t = vec3_from(j.at("t"));
  const json& q = j.at("q");
  if (q.size() != 4) throw IoError("camera quaternion needs 4 entries");
  c.q = Quat{q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()}.normalized();
  c.f = {j.at("fov").at(0).get<double>(), j.at("fov").at(1).get<double>()};
  c.validate();
  return c;
}

inline json to_json(const Box& b) {
  return {{"center", to_json(b.center)}, {"half", to_json(b.half)}, {"rotation", to_json(b.rotation)}, {"albedo", to_json(b.albedo)}};
}

inline Box box_from(const json& j) {
  Box b;
  b.center = vec3_from(j.at("center"));
  b.half = vec3_from(j.at("half"));
  b.rotation = mat3_from(j.at("rotation"));
  b.albedo = vec3_from(j.at("albedo"));
  return b;
}

inline json to_json(const SceneJoint& s) {
  return {{"kind", to_string(s.kind)}, {"axis", to_json(s.axis)}, {"pivot", to_json(s.pivot)}, {"lo", s.lo}, {"hi", s.hi}};
}

inline SceneJoint scene_joint_from(const json& j) {
  SceneJoint s;
  s.kind = joint_kind_from_string(j.at("kind").get<std::string>());
  s.axis = vec3_from(j.at("axis"));
  s.pivot = vec3_from(j.at("pivot"));
  s.lo = j.at("lo").get<double>();
  s.hi = j.at("hi").get<double>();
  return s;
}

inline json to_json(const PartJoint& p) {
  return {{"kind", to_string(p.kind)}, {"axis", to_json(p.axis)}, {"pivot", to_json(p.pivot)}};
}

inline json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------- scene bundles

inline std::string frame_stem(int s, int v) { return std::to_string(s) + "_" + std::to_string(v); }

/// Canonical frame stored with a bundle: anchored at camera 0, radius over state-0 views.
inline CanonicalFrame bundle_frame(const ObjectSample& o) {
  std::vector<PointMap> pts;
  std::vector<CameraPose> cams;
  for (int v = 0; v < o.num_views(); ++v) {
    pts.push_back(unproject(o.frame(0, v).depth, o.cams[std::size_t(v)]));
    cams.push_back(o.cams[std::size_t(v)]);
  }
  return canonicalize(pts, cams).frame;
}

inline void write_bundle(const fs::path& dir, const ObjectSample& o) {
  if (o.frames.size() != std::size_t(o.num_states()) * std::size_t(o.num_views())) throw InvalidInput("write_bundle: incomplete frame set");
  fs::create_directories(dir / "frames");
  const CanonicalFrame cf = bundle_frame(o);
  const int h = o.frames.front().rgb.height, w = o.frames.front().rgb.width;

  json cams = {{"width", w}, {"height", h}, {"convention", "camera-to-world, x right, y down, z forward"}, {"cameras", json::array()}};
  for (const CameraPose& c : o.cams) cams["cameras"].push_back(to_json(c));
  write_json(dir / "cameras.json", cams);

  json scene = {{"family", o.scene.family}, {"base", json::array()}, {"parts", json::array()}};
  for (const Box& b : o.scene.base) scene["base"].push_back(to_json(b));
  for (const auto& part : o.scene.parts) {
    json boxes = json::array();
    for (const Box& b : part) boxes.push_back(to_json(b));
    scene["parts"].push_back(boxes);
  }
  write_json(dir / "scene.json", scene);

  json joints = {{"joints", json::array()}, {"states", o.states}};
  for (const SceneJoint& j : o.scene.joints) joints["joints"].push_back(to_json(j));
  write_json(dir / "joints.json", joints);

  json canon = {{"R0", to_json(cf.R0)}, {"t0", to_json(cf.t0)}, {"r_bar", cf.r_bar}, {"joints", json::array()}};
  for (const SceneJoint& j : o.scene.joints) canon["joints"].push_back(to_json(canonical_joint(j, cf)));
  write_json(dir / "canonical.json", canon);

  for (int s = 0; s < o.num_states(); ++s)
    for (int v = 0; v < o.num_views(); ++v) {
      const RenderedFrame& f = o.frame(s, v);
      const fs::path stem = dir / "frames" / frame_stem(s, v);
      write_png(stem.string() + ".rgb.png", f.rgb);
      write_raw<float>(stem.string() + ".depth.f32", to_f32(f.depth.data));
      write_raw<std::int32_t>(stem.string() + ".labels.i32", f.labels.labels.data);
      const JointMap jm = build_gt_joint_map(f, o.scene, o.cams[0], cf.r_bar);
      write_raw<float>(stem.string() + ".joints.f32", to_f32(jm.data.data));
    }
}

/// Reads a bundle back. Depth comes back at f32 precision.
inline ObjectSample read_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a scene bundle: " + dir.string());
  ObjectSample o;
  const json cams = read_json(dir / "cameras.json");
  const int w = cams.at("width").get<int>(), h = cams.at("height").get<int>();
  for (const json& c : cams.at("cameras")) o.cams.push_back(camera_from(c));

  const json scene = read_json(dir / "scene.json");
  o.scene.family = scene.at("family").get<std::string>();
  for (const json& b : scene.at("base")) o.scene.base.push_back(box_from(b));
  for (const json& part : scene.at("parts")) {
    std::vector<Box> boxes;
    for (const json& b : part) boxes.push_back(box_from(b));
    o.scene.parts.push_back(std::move(boxes));
  }
  const json joints = read_json(dir / "joints.json");
  for (const json& j : joints.at("joints")) o.scene.joints.push_back(scene_joint_from(j));
  o.states = joints.at("states").get<std::vector<std::vector<double>>>();
  o.scene.validate();
  for (const auto& st : o.states)
    if (st.size() != o.scene.joints.size()) throw IoError(dir.string() + ": state size does not match joint count");

  const std::size_t px = std::size_t(w) * std::size_t(h);
  for (int s = 0; s < o.num_states(); ++s)
    for (int v = 0; v < o.num_views(); ++v) {
      const std::string stem = (dir / "frames" / frame_stem(s, v)).string();
      RenderedFrame f;
      f.rgb = read_png(stem + ".rgb.png");
      if (!f.rgb.same_shape(h, w)) throw IoError(stem + ".rgb.png: size differs from cameras.json");
      f.depth = Grid<double>(h, w);
      const auto d = read_raw<float>(stem + ".depth.f32", px);
      std::copy(d.begin(), d.end(), f.depth.data.begin());
      f.labels = PartLabelMap(h, w);
      f.labels.labels.data = read_raw<std::int32_t>(stem + ".labels.i32", px);
      f.cam = o.cams[std::size_t(v)];
      f.state = o.states[std::size_t(s)];
      o.frames.push_back(std::move(f));
    }
  return o;
}

// ---------------------------------------------------------------- datasets

struct DatasetEntry {
  std::string name;
  std::uint64_t seed = 0;
  std::string family;
  int joints = 0;
};

inline std::string object_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "object_%04zu", i);
  return buf;
}

/// Object seeds are drawn from one generator seeded with `seed`.
inline std::vector<DatasetEntry> generate_dataset(int n_objects, std::uint64_t seed, const fs::path& out_dir, const SynthOptions& opt) {
  if (n_objects < 0) throw InvalidInput("generate_dataset: object count must be >= 0");
  fs::create_directories(out_dir);
  std::mt19937_64 rng(seed);
  std::vector<DatasetEntry> entries;
  json manifest = {{"format", "artikin-dataset"}, {"version", 1}, {"seed", seed}, {"res", opt.res}, {"states", opt.states},
                   {"full_scale", opt.full_scale}, {"min_joints", opt.min_joints}, {"max_joints", opt.max_joints},
                   {"objects", json::array()}};
  for (int i = 0; i < n_objects; ++i) {
    DatasetEntry e{object_name(std::size_t(i)), rng(), "", 0};
    const ObjectSample o = generate_object(e.seed, opt);
    e.family = o.scene.family;
    e.joints = int(o.scene.num_joints());
    write_bundle(out_dir / e.name, o);
    manifest["objects"].push_back({{"name", e.name}, {"seed", e.seed}, {"family", e.family}, {"joints", e.joints}});
    entries.push_back(e);
  }
  write_json(out_dir / "manifest.json", manifest);
  return entries;
}

inline std::vector<DatasetEntry> read_manifest(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  if (m.value("format", "") != "artikin-dataset") throw IoError(dir.string() + ": not an artikin dataset");
  std::vector<DatasetEntry> out;
  for (const json& e : m.at("objects"))
    out.push_back({e.at("name").get<std::string>(), e.at("seed").get<std::uint64_t>(), e.at("family").get<std::string>(), e.at("joints").get<int>()});
  return out;
}

inline std::vector<ObjectSample> load_dataset(const fs::path& dir) {
  std::vector<ObjectSample> out;
  for (const DatasetEntry& e : read_manifest(dir)) out.push_back(read_bundle(dir / e.name));
  return out;
}

// ---------------------------------------------------------------- Gaussian sets

/// Gaussians of one articulation state in the canonical frame, with per-Gaussian joint
/// vectors, part labels, and per-part joints whose reference values belong to `state`.
/// `values[k]` holds part k's value at states 0 and 1; `view` is the canonical reference camera.
struct GaussianSet {
  int state = 0;
  CameraPose view;
  std::vector<Gaussian3D> gaussians;
  std::vector<JointVector> joints;
  std::vector<int> labels;
  std::vector<PartJoint> parts;
  std::vector<std::array<double, 2>> values;

  void validate() const {
    if (state != 0 && state != 1) throw InvalidInput("gaussian set: state must be 0 or 1");
    if (joints.size() != gaussians.size() || labels.size() != gaussians.size())
      throw InvalidInput("gaussian set: joint vectors and labels must match Gaussians");
    if (values.size() != parts.size()) throw InvalidInput("gaussian set: one value pair per part");
    for (int l : labels)
      if (l < 0 || std::size_t(l) > parts.size()) throw InvalidInput("gaussian set: label without a part");
  }
};

inline constexpr std::uint32_t kGaussianFormatVersion = 1;

inline fs::path sidecar_path(const fs::path& gs) {
  fs::path p = gs;
  return p.replace_extension(".gsj");
}

namespace detail {

struct Writer {
  std::ofstream f;
  explicit Writer(const fs::path& p) : f(p, std::ios::binary) {
    if (!f) throw IoError("cannot write " + p.string());
  }
  template <class T>
  void put(T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void f32(double v) { put(float(v)); }
  void bytes(const std::string& s) { f.write(s.data(), std::streamsize(s.size())); }
};

struct Reader {
  std::ifstream f;
  std::string name;
  explicit Reader(const fs::path& p) : f(p, std::ios::binary), name(p.string()) {
    if (!f) throw IoError("cannot read " + name);
  }
  template <class T>
  T get() {
    T v;
    if (!f.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError(name + ": truncated");
    return v;
  }
  double f32() { return get<float>(); }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    if (!f.read(s.data(), std::streamsize(n))) throw IoError(name + ": truncated");
    return s;
  }
  void magic(const char* m) {
    if (bytes(4) != m) throw IoError(name + ": bad magic, expected " + m);
  }
  void end() {
    if (f.peek() != std::char_traits<char>::eof()) throw IoError(name + ": trailing bytes");
  }
};

}  // namespace detail

inline void write_gaussian_set(const fs::path& path, const GaussianSet& g) {
  g.validate();
  {
    detail::Writer w(path);
    w.bytes("AKGS");
    w.put(kGaussianFormatVersion);
    w.put(std::uint64_t(g.gaussians.size()));
    for (const Gaussian3D& x : g.gaussians)
      for (double v : x.to_params()) w.f32(v);
    if (!w.f) throw IoError("short write to " + path.string());
  }
  detail::Writer w(sidecar_path(path));
  w.bytes("AKGJ");
  w.put(kGaussianFormatVersion);
  w.put(std::uint64_t(g.gaussians.size()));
  w.put(std::int32_t(g.state));
  for (double v : g.view.to_params()) w.f32(v);
  for (std::size_t i = 0; i < g.gaussians.size(); ++i) {
    for (double v : g.joints[i]) w.f32(v);
    w.put(std::int32_t(g.labels[i]));
  }
  w.put(std::uint32_t(g.parts.size()));
  for (std::size_t k = 0; k < g.parts.size(); ++k) {
    const PartJoint& p = g.parts[k];
    w.put(std::int32_t(p.kind));
    for (int a = 0; a < 3; ++a) w.f32(p.axis[a]);
    for (int a = 0; a < 3; ++a) w.f32(p.pivot[a]);
    w.f32(g.values[k][0]);
    w.f32(g.values[k][1]);
  }
  if (!w.f) throw IoError("short write to " + sidecar_path(path).string());
}

inline GaussianSet read_gaussian_set(const fs::path& path) {
  GaussianSet g;
  detail::Reader r(path);
  r.magic("AKGS");
  if (r.get<std::uint32_t>() != kGaussianFormatVersion) throw IoError(path.string() + ": unsupported version");
  const auto n = r.get<std::uint64_t>();
  g.gaussians.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::array<double, kGaussianParams> p;
    for (double& v : p) v = r.f32();
    Gaussian3D x = Gaussian3D::from_params(p);
    x.rot = x.rot.normalized();
    g.gaussians.push_back(x);
  }
  r.end();
  detail::Reader s(sidecar_path(path));
  s.magic("AKGJ");
  if (s.get<std::uint32_t>() != kGaussianFormatVersion) throw IoError(s.name + ": unsupported version");
  if (s.get<std::uint64_t>() != n) throw IoError(s.name + ": count differs from " + path.string());
  g.state = s.get<std::int32_t>();
  double c[9];
  for (double& v : c) v = s.f32();
  g.view.t = {c[0], c[1], c[2]};
  g.view.q = Quat{c[3], c[4], c[5], c[6]}.normalized();
  g.view.f = {c[7], c[8]};
  g.joints.resize(n);
  g.labels.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    for (double& v : g.joints[i]) v = s.f32();
    g.labels[i] = s.get<std::int32_t>();
  }
  const auto parts = s.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < parts; ++k) {
    PartJoint p;
    const auto kind = s.get<std::int32_t>();
    if (kind < 0 || kind > 2) throw IoError(s.name + ": bad joint kind");
    p.kind = JointKind(kind);
    for (int a = 0; a < 3; ++a) p.axis[a] = s.f32();
    for (int a = 0; a < 3; ++a) p.pivot[a] = s.f32();
    p.axis.normalize();
    std::array<double, 2> v{s.f32(), s.f32()};
    if (g.state != 0 && g.state != 1) throw IoError(s.name + ": state must be 0 or 1");
    (p.kind == JointKind::Prismatic ? p.ref_disp : p.ref_angle) = v[std::size_t(g.state)];
    g.parts.push_back(p);
    g.values.push_back(v);
  }
  s.end();
  g.validate();
  return g;
}

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  train::TrainConfig config;
  model::Params params;
  int stage = 0;  // last completed stage
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const fs::path& path, const model::Params& params, const train::TrainConfig& cfg, int stage) {
  detail::Writer w(path);
  w.bytes("AKCK");
  w.put(kCheckpointVersion);
  w.put(std::int32_t(stage));
  const std::string text = cfg.to_string();
  w.put(std::uint32_t(text.size()));
  w.bytes(text);
  w.put(std::uint32_t(params.all().size()));
  for (const auto& [name, t] : params.all()) {
    w.put(std::uint32_t(name.size()));
    w.bytes(name);
    w.put(std::uint32_t(t.shape().size()));
    for (auto d : t.shape()) w.put(std::int64_t(d));
    for (double v : t.values()) w.f32(v);
  }
  if (!w.f) throw IoError("short write to " + path.string());
}

inline Checkpoint read_checkpoint(const fs::path& path) {
  detail::Reader r(path);
  r.magic("AKCK");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw IoError(path.string() + ": unsupported checkpoint version");
  Checkpoint c;
  c.stage = r.get<std::int32_t>();
  std::istringstream text(r.bytes(r.get<std::uint32_t>()));
  c.config = train::TrainConfig::parse(text);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw IoError(path.string() + ": bad tensor rank for " + name);
    ag::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::int64_t>();
      if (e < 0) throw IoError(path.string() + ": negative dimension for " + name);
      shape.push_back(e);
      n *= std::size_t(e);
    }
    std::vector<double> v(n);
    for (double& x : v) x = r.f32();
    c.params.add(name, shape, std::move(v));
  }
  r.end();
  return c;
}

}  // namespace artikin::io
