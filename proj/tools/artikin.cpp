// artikin: synth | train | infer | articulate | eval

#include "artikin/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace artikin;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Vec3 parse_background(const std::string& s) {
  if (s == "white") return Vec3::Ones();
  if (s == "black") return Vec3::Zero();
  std::istringstream in(s);
  std::string tok;
  std::vector<double> v;
  while (std::getline(in, tok, ',')) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw UsageError("--bg: expected white, black, or r,g,b in [0,1]");
    }
  }
  if (v.size() != 3 || std::any_of(v.begin(), v.end(), [](double x) { return !(x >= 0 && x <= 1); }))
    throw UsageError("--bg: expected white, black, or r,g,b in [0,1]");
  return {v[0], v[1], v[2]};
}

std::vector<int> parse_ints(const std::string& s, const char* flag) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != tok.size()) throw UsageError(std::string(flag) + ": expected a comma-separated integer list");
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* flag) {
  std::vector<double> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != tok.size()) throw UsageError(std::string(flag) + ": expected a comma-separated number list");
    out.push_back(v);
  }
  return out;
}

// Removed again if the command fails, so errors leave no partial output.
std::optional<fs::path> created_out;

/// Output directory must be new or empty, so a run never mixes with an earlier one.
void prepare_out(const fs::path& out) {
  if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out))) throw UsageError("--out " + out.string() + " exists and is not empty");
  fs::create_directories(out);
  created_out = out;
}

void discard_output() {
  std::error_code ec;
  if (created_out) fs::remove_all(*created_out, ec);
}

void write_run_file(const fs::path& out, const std::string& command, const std::vector<std::pair<std::string, std::string>>& args) {
  std::ostringstream o;
  o << "command = " << command << "\n";
  for (const auto& [k, v] : args) o << k << " = " << v << "\n";
  io::write_text(out / "run.txt", o.str());
}

template <class T>
std::string str(const T& v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  int objects = 8, views = 16, states = 8, res = 64, min_joints = 1, max_joints = 4;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  if (a.views != 16 && a.views != 48) throw UsageError("--views: 16 (desk layout) or 48 (full layout)");
  if (a.objects < 0) throw UsageError("--objects must be >= 0");
  if (a.res < 8 || a.res % 8 != 0) throw UsageError("--res must be a positive multiple of 8");
  if (a.states < 2) throw UsageError("--states must be >= 2");
  if (a.min_joints < 1 || a.max_joints > 4 || a.min_joints > a.max_joints) throw UsageError("--min-joints/--max-joints must satisfy 1 <= min <= max <= 4");
  SynthOptions o;
  o.res = a.res;
  o.states = a.states;
  o.full_scale = a.views == 48;
  o.min_joints = a.min_joints;
  o.max_joints = a.max_joints;
  prepare_out(a.out);
  io::generate_dataset(a.objects, a.seed, a.out, o);
  write_run_file(a.out, "synth",
                 {{"objects", str(a.objects)}, {"views", str(a.views)}, {"states", str(a.states)}, {"res", str(a.res)},
                  {"min_joints", str(a.min_joints)}, {"max_joints", str(a.max_joints)}, {"seed", str(a.seed)}});
  std::printf("wrote %d objects to %s\n", a.objects, a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out, resume;
  int stage = 0;  // 0: both stages
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  train::TrainConfig cfg = train::TrainConfig::load(a.config);
  if (a.seed) cfg.seed = *a.seed;
  std::optional<io::Checkpoint> ck;
  if (!a.resume.empty()) {
    ck = io::read_checkpoint(a.resume);
    train::TrainConfig probe = cfg;
    probe.model = ck->config.model;
    if (probe.to_string() != cfg.to_string()) throw UsageError("--resume: checkpoint model settings differ from the config");
  }
  const std::vector<ObjectSample> data = io::load_dataset(a.data);
  if (data.empty()) throw UsageError("--data " + a.data + " holds no objects");
  prepare_out(a.out);
  io::write_text(fs::path(a.out) / "config.txt", cfg.to_string());
  write_run_file(a.out, "train", {{"config", a.config}, {"data", a.data}, {"stage", a.stage ? str(a.stage) : "both"}, {"resume", a.resume}});

  model::Model m = ck ? model::Model(cfg.model, ck->params) : model::Model(cfg.model, cfg.seed);
  std::ofstream log(fs::path(a.out) / "loss.csv");
  log << train::kLogHeader << "\n";
  auto on_step = [&](const train::StepLog& l) {
    log << train::format_log(l) << "\n";
    if ((l.iter + 1) % 50 == 0) std::printf("stage %d iter %d loss %.5f\n", l.stage, l.iter + 1, l.total);
  };
  int done = ck ? ck->stage : 0;
  for (int stage : {1, 2}) {
    if (a.stage && a.stage != stage) continue;
    train::run_stage(m, cfg, data, stage, on_step);
    done = stage;
    io::write_checkpoint(fs::path(a.out) / ("stage" + std::to_string(stage) + ".akck"), m.params(), cfg, done);
  }
  log.flush();
  io::write_checkpoint(fs::path(a.out) / "checkpoint.akck", m.params(), cfg, done);
  std::printf("checkpoint written to %s\n", (fs::path(a.out) / "checkpoint.akck").c_str());
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string checkpoint, scene, out, views, states = "0,1";
  std::uint64_t seed = 0;
  double conf = kDefaultConfThreshold, voxel = 0.003;
};

int run_infer(const InferArgs& a) {
  const io::Checkpoint ck = io::read_checkpoint(a.checkpoint);
  const ObjectSample obj = io::read_bundle(a.scene);
  const std::vector<int> st = parse_ints(a.states, "--states");
  if (st.size() != 2 || st[0] == st[1]) throw UsageError("--states: expected two distinct state indices");
  for (int s : st)
    if (s < 0 || s >= obj.num_states()) throw UsageError("--states: index outside the bundle's " + std::to_string(obj.num_states()) + " states");
  pipeline::EvalInputs in;
  in.states = {st[0], st[1]};
  if (a.views.empty()) {
    in.views = pipeline::choose_inputs(obj, pipeline::EvalProtocol{}, a.seed).views;
  } else {
    const std::vector<int> v = parse_ints(a.views, "--views");
    if (v.size() != 8) throw UsageError("--views: expected 8 input views (4 per state), got " + std::to_string(v.size()));
    for (int x : v)
      if (x < 0 || x >= obj.num_views()) throw UsageError("--views: index outside the bundle's " + std::to_string(obj.num_views()) + " cameras");
    in.views = {std::vector<int>(v.begin(), v.begin() + 4), std::vector<int>(v.begin() + 4, v.end())};
  }
  if (!(a.conf >= 0 && a.conf <= 1)) throw UsageError("--conf must lie in [0, 1]");
  if (!(a.voxel > 0)) throw UsageError("--voxel must be positive");
  prepare_out(a.out);
  const model::Model m(ck.config.model, ck.params);
  const train::Sample s = pipeline::eval_sample(obj, in);
  pipeline::InferOptions opt;
  opt.conf_threshold = a.conf;
  opt.voxel = a.voxel;
  const pipeline::Reconstruction r = pipeline::infer(m, s.images, s.views, opt);
  nlohmann::json parts = nlohmann::json::array();
  for (std::size_t k = 0; k < r.sets[0].parts.size(); ++k) {
    nlohmann::json j = io::to_json(r.sets[0].parts[k]);
    j["values"] = {r.sets[0].values[k][0], r.sets[0].values[k][1]};
    j["gaussians"] = {std::count(r.sets[0].labels.begin(), r.sets[0].labels.end(), int(k) + 1),
                      std::count(r.sets[1].labels.begin(), r.sets[1].labels.end(), int(k) + 1)};
    parts.push_back(j);
  }
  for (int k = 0; k < 2; ++k) io::write_gaussian_set(fs::path(a.out) / ("state" + std::to_string(k) + ".gs"), r.sets[std::size_t(k)]);
  io::write_json(fs::path(a.out) / "joints.json", {{"frame", "canonical (first input view)"}, {"states", st}, {"views", in.views}, {"parts", parts}});
  write_run_file(a.out, "infer",
                 {{"checkpoint", a.checkpoint}, {"scene", a.scene}, {"states", a.states}, {"seed", str(a.seed)}, {"conf", str(a.conf)},
                  {"voxel", str(a.voxel)}});
  std::printf("%zu + %zu Gaussians, %zu parts\n", r.sets[0].gaussians.size(), r.sets[1].gaussians.size(), r.sets[0].parts.size());
  return 0;
}

// ---------------------------------------------------------------- articulate

struct ArticulateArgs {
  std::string gaussians, out, targets, bg = "white";
  int steps = 5, res = 64, sh_degree = kShDegree;
};

int run_articulate(const ArticulateArgs& a) {
  const io::GaussianSet g = io::read_gaussian_set(a.gaussians);
  if (a.res < 1) throw UsageError("--res must be positive");
  if (a.sh_degree < 0 || a.sh_degree > kShDegree) throw UsageError("--sh-degree must lie in [0, 4]");
  RenderSettings rs;
  rs.width = rs.height = a.res;
  rs.sh_degree = a.sh_degree;
  rs.background = parse_background(a.bg);
  std::vector<double> states;
  if (!a.targets.empty()) {
    states = parse_doubles(a.targets, "--targets");
  } else {
    if (a.steps < 1) throw UsageError("--steps must be >= 1");
    for (int i = 0; i < a.steps; ++i) states.push_back(a.steps == 1 ? 0.0 : double(i) / double(a.steps - 1));
  }
  prepare_out(a.out);
  for (std::size_t i = 0; i < states.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.png", i);
    io::write_png(fs::path(a.out) / name, io::to_bytes(rasterize(pipeline::articulate_to(g, states[i]), g.view, rs).image()));
  }
  write_run_file(a.out, "articulate",
                 {{"gaussians", a.gaussians}, {"states", a.targets.empty() ? "sweep " + str(a.steps) : a.targets}, {"res", str(a.res)},
                  {"bg", a.bg}, {"sh_degree", str(a.sh_degree)}});
  std::printf("wrote %zu frames to %s\n", states.size(), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, data, out, bg = "white";
  bool gt = false;
  std::uint64_t seed = 0;
  int sh_degree = kShDegree;
};

int run_eval(const EvalArgs& a) {
  if (a.gt == !a.checkpoint.empty()) throw UsageError("eval: pass exactly one of --checkpoint or --gt");
  if (a.sh_degree < 0 || a.sh_degree > kShDegree) throw UsageError("--sh-degree must lie in [0, 4]");
  std::optional<io::Checkpoint> ck;
  if (!a.gt) ck = io::read_checkpoint(a.checkpoint);
  const auto entries = io::read_manifest(a.data);
  pipeline::EvalProtocol p;
  p.sh_degree = a.sh_degree;
  p.background = parse_background(a.bg);
  prepare_out(a.out);
  std::optional<model::Model> m;
  if (ck) m.emplace(ck->config.model, ck->params);
  std::mt19937_64 rng(a.seed);
  std::vector<pipeline::ObjectMetrics> rows;
  std::ofstream csv(fs::path(a.out) / "metrics.csv"), diag(fs::path(a.out) / "diagnostics.csv");
  csv << pipeline::kMetricsHeader << "\n";
  diag << "object,type_accuracy,psnr_static,parts\n";
  for (const io::DatasetEntry& e : entries) {
    const ObjectSample o = io::read_bundle(fs::path(a.data) / e.name);
    const std::uint64_t s = rng();
    const pipeline::EvalInputs in = pipeline::choose_inputs(o, p, s);
    const train::Sample smp = pipeline::eval_sample(o, in);
    const pipeline::Reconstruction r =
        m ? pipeline::infer(*m, smp.images, smp.views, p.infer) : pipeline::reconstruct(pipeline::gt_maps(smp, o, in), p.infer);
    pipeline::ObjectMetrics row = pipeline::evaluate(r, o, in, smp, p, s);
    row.name = e.name;
    csv << pipeline::format_metrics(row) << "\n";
    diag << e.name << "," << str(row.type_accuracy) << "," << str(row.psnr_static) << "," << row.parts << "\n";
    std::printf("%s\n", pipeline::format_metrics(row).c_str());
    rows.push_back(row);
  }
  if (!rows.empty()) csv << pipeline::format_metrics(pipeline::mean_metrics(rows, "mean")) << "\n";
  write_run_file(a.out, "eval",
                 {{"checkpoint", a.gt ? "gt" : a.checkpoint}, {"data", a.data}, {"seed", str(a.seed)}, {"bg", a.bg}, {"sh_degree", str(a.sh_degree)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Articulated-object reconstruction toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate procedural scene bundles");
  synth->add_option("--objects", sa.objects, "Number of objects")->capture_default_str();
  synth->add_option("--views", sa.views, "Cameras per object: 16 (desk) or 48 (full layout)")->capture_default_str();
  synth->add_option("--states", sa.states, "Articulation states per object")->capture_default_str();
  synth->add_option("--res", sa.res, "Render resolution")->capture_default_str();
  synth->add_option("--min-joints", sa.min_joints, "Minimum joints per object")->capture_default_str();
  synth->add_option("--max-joints", sa.max_joints, "Maximum joints per object")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Dataset seed")->capture_default_str();
  synth->add_option("--out", sa.out, "Output dataset directory")->required();

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* trn = app.add_subcommand("train", "Two-stage training");
  trn->add_option("--config", ta.config, "Training config (key = value)")->required();
  trn->add_option("--data", ta.data, "Dataset directory")->required();
  trn->add_option("--out", ta.out, "Run directory")->required();
  trn->add_option("--stage", ta.stage, "1 or 2; both when omitted")->check(CLI::IsMember({1, 2}));
  trn->add_option("--resume", ta.resume, "Checkpoint to start from");
  auto* seed_opt = trn->add_option("--seed", train_seed, "Override the config seed");

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Reconstruct an articulated Gaussian set from 8 views");
  inf->add_option("--checkpoint", ia.checkpoint, "Model checkpoint")->required();
  inf->add_option("--scene", ia.scene, "Scene bundle directory")->required();
  inf->add_option("--out", ia.out, "Run directory")->required();
  inf->add_option("--views", ia.views, "8 comma-separated view indices, 4 per state; sampled when omitted");
  inf->add_option("--states", ia.states, "Two bundle state indices")->capture_default_str();
  inf->add_option("--seed", ia.seed, "Seed for view sampling")->capture_default_str();
  inf->add_option("--conf", ia.conf, "Gaussian confidence threshold")->capture_default_str();
  inf->add_option("--voxel", ia.voxel, "Voxel merge size")->capture_default_str();

  ArticulateArgs aa;
  auto* art = app.add_subcommand("articulate", "Render a Gaussian set at new articulation states");
  art->add_option("--gaussians", aa.gaussians, "Gaussian set (.gs with .gsj sidecar)")->required();
  art->add_option("--out", aa.out, "Output directory for PNG frames")->required();
  art->add_option("--steps", aa.steps, "Sweep steps over [0, 1]")->capture_default_str();
  art->add_option("--targets", aa.targets, "Comma-separated normalized states instead of a sweep");
  art->add_option("--res", aa.res, "Render resolution")->capture_default_str();
  art->add_option("--bg", aa.bg, "Background: white, black, or r,g,b")->capture_default_str();
  art->add_option("--sh-degree", aa.sh_degree, "SH degree used for color")->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Held-out evaluation to metrics CSV");
  ev->add_option("--checkpoint", ea.checkpoint, "Model checkpoint");
  ev->add_flag("--gt", ea.gt, "Evaluate GT-derived Gaussians instead of a model");
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--out", ea.out, "Run directory")->required();
  ev->add_option("--seed", ea.seed, "Protocol seed")->capture_default_str();
  ev->add_option("--bg", ea.bg, "Background: white, black, or r,g,b")->capture_default_str();
  ev->add_option("--sh-degree", ea.sh_degree, "SH degree used for color")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return run_synth(sa);
    if (*trn) {
      if (*seed_opt) ta.seed = train_seed;
      return run_train(ta);
    }
    if (*inf) return run_infer(ia);
    if (*art) return run_articulate(aa);
    if (*ev) return run_eval(ea);
  } catch (const train::TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    discard_output();
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    discard_output();
    return 2;
  }
  return 1;
}
