#include "ins_cli/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ins/error.hpp"

namespace ins::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<RunConfig::KeyInfo>& RunConfig::keys() {
  // name, desk default, full-scale value, help
  static const std::vector<KeyInfo> k = {
      {"preset", "desk", "full", "desk | full; applied before other keys"},
      {"seed", "0", "0", "master seed for data, initialization and batching"},
      {"threads", "0", "0", "worker threads (0 = hardware concurrency)"},
      {"body.bones", "2", "2", "bones in the synthetic chain"},
      {"body.bone_length", "0.5", "0.5", "bone length"},
      {"body.radius", "0.1", "0.1", "capsule radius"},
      {"body.bulge_amplitude", "0.05", "0.05", "radial bulge at full bend"},
      {"body.bulge_width", "0.1", "0.1", "bulge falloff along the bone"},
      {"body.bend_limit_deg", "90", "90", "bend limit about z"},
      {"body.swing_limit_deg", "30", "30", "swing limit about y"},
      {"data.train_frames", "20", "20", "training poses"},
      {"data.test_frames", "4", "4", "held-out poses"},
      {"data.surface_samples", "8192", "100000", "near-surface samples per frame"},
      {"data.uniform_samples", "8192", "100000", "bounding-box samples per frame"},
      {"data.noise_sigma", "0.01", "0.01", "surface jitter"},
      {"data.box_scale", "1.1", "1.1", "uniform-sample box scale"},
      {"data.mesh_res", "64", "128", "ground-truth mesh resolution"},
      {"pin.layers", "18", "18", "coupling layers per PIN"},
      {"pin.embedding_dim", "24", "120", "pose embedding size d"},
      {"pin.encoder_hidden", "32", "64", "bone encoder width"},
      {"pin.space_hidden", "32", "64", "space encoder width"},
      {"pin.map_hidden", "32", "64", "operation map width"},
      {"pin.omega0", "30", "30", "SIREN frequency"},
      {"pin.map_beta", "1", "1", "softplus beta of operation maps"},
      {"pin.identity_anchor", "1", "1", "1: PINs are exactly the identity at the identity pose"},
      {"weights.hidden", "32", "128", "skinning weight field width"},
      {"weights.layers", "2", "3", "skinning weight field hidden layers"},
      {"weights.beta", "100", "100", "softplus beta of the weight field"},
      {"occupancy.hidden", "64", "256", "occupancy width"},
      {"occupancy.layers", "3", "4", "occupancy hidden layers"},
      {"occupancy.beta", "100", "100", "softplus beta of the occupancy net"},
      {"broyden.candidates", "2", "2", "initializations K"},
      {"broyden.tolerance", "1e-5", "1e-5", "residual max-norm tolerance"},
      {"broyden.max_iterations", "30", "30", "iteration cap"},
      {"selection.temperature", "0.02", "0.02", "candidate softmax temperature"},
      {"selection.space", "occupancy", "occupancy", "occupancy | logit"},
      {"ablate", "none", "none", "none | no-pin | no-hd | no-hc | no-lbs"},
      {"train.epochs", "30", "250", "epochs"},
      {"train.steps_per_epoch", "40", "0", "optimizer steps per epoch (0 = one pass)"},
      {"train.frames_per_batch", "8", "8", "frames per batch"},
      {"train.points_per_frame", "512", "7500", "points per frame per batch"},
      {"train.lr", "1e-3", "1e-3", "learning rate (non-PIN)"},
      {"train.pin_lr", "1e-4", "1e-4", "learning rate (PIN)"},
      {"train.warmup", "100", "2400", "linear warmup iterations"},
      {"train.warmup_start", "0.2", "0.2", "warmup start factor"},
      {"train.clip", "4", "4", "global gradient-norm clip"},
      {"train.aux_points", "512", "512", "bone prior points per batch"},
      {"train.aux_epochs", "1", "1", "epochs with auxiliary priors"},
      {"train.checkpoint_every", "5", "10", "epochs between checkpoints"},
      {"extract.res", "64", "128", "canonical extraction resolution"},
      {"extract.box_scale", "1.1", "1.1", "extraction box scale about the skeleton box"},
  };
  return k;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.desk;
}

void RunConfig::apply_preset(const std::string& preset) {
  if (preset != "desk" && preset != "full") throw UsageError("preset must be desk or full");
  for (const auto& k : keys()) {
    if (!explicit_.count(k.name)) values_[k.name] = preset == "full" ? k.full : k.desk;
  }
  values_["preset"] = preset;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown configuration key '" + key + "'");
  if (key == "preset") {
    apply_preset(value);
    return;
  }
  it->second = value;
  explicit_[key] = true;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  std::vector<std::pair<std::string, std::string>> pending;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + ":" + std::to_string(number) + ": expected key=value");
    pending.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& [k, v] : pending)
    if (k == "preset") set(k, v);
  for (const auto& [k, v] : pending)
    if (k != "preset") set(k, v);
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path);
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown configuration key '" + key + "'");
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  const auto& s = get(key);
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw UsageError("key '" + key + "' expects an integer, got '" + s + "'");
  return v;
}

std::size_t RunConfig::get_count(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw UsageError("key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

Real RunConfig::get_real(const std::string& key) const {
  const auto& s = get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return static_cast<Real>(v);
  } catch (const std::exception&) {
    throw UsageError("key '" + key + "' expects a number, got '" + s + "'");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  for (const auto& k : keys()) out << k.name << " = " << values_.at(k.name) << "\n";
  return out.str();
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  out << to_text();
  if (!out) throw DataError("cannot write '" + path + "'");
}

data::SyntheticBodyConfig body_config(const RunConfig& cfg) {
  data::SyntheticBodyConfig b;
  b.bone_count = cfg.get_count("body.bones");
  b.bone_length = cfg.get_real("body.bone_length");
  b.radius = cfg.get_real("body.radius");
  b.bulge_amplitude = cfg.get_real("body.bulge_amplitude");
  b.bulge_width = cfg.get_real("body.bulge_width");
  constexpr Real kDeg = static_cast<Real>(3.14159265358979323846 / 180);
  b.bend_limit = cfg.get_real("body.bend_limit_deg") * kDeg;
  b.swing_limit = cfg.get_real("body.swing_limit_deg") * kDeg;
  return b;
}

data::SamplingOptions sampling_options(const RunConfig& cfg, std::uint64_t seed) {
  data::SamplingOptions s;
  s.surface_count = cfg.get_count("data.surface_samples");
  s.uniform_count = cfg.get_count("data.uniform_samples");
  s.noise_sigma = cfg.get_real("data.noise_sigma");
  s.box_scale = cfg.get_real("data.box_scale");
  s.seed = seed;
  return s;
}

InsConfig model_config(const RunConfig& cfg) {
  InsConfig c;
  c.pin.bone_count = cfg.get_count("body.bones");
  c.pin.layer_count = cfg.get_count("pin.layers");
  c.pin.embedding_dim = cfg.get_count("pin.embedding_dim");
  c.pin.encoder_hidden = cfg.get_count("pin.encoder_hidden");
  c.pin.space_hidden = cfg.get_count("pin.space_hidden");
  c.pin.map_hidden = cfg.get_count("pin.map_hidden");
  c.pin.omega0 = cfg.get_real("pin.omega0");
  c.pin.identity_anchor = cfg.get_int("pin.identity_anchor") != 0;
  c.pin.map_softplus_beta = cfg.get_real("pin.map_beta");
  c.weight_hidden = cfg.get_count("weights.hidden");
  c.weight_layers = cfg.get_count("weights.layers");
  c.weight_softplus_beta = cfg.get_real("weights.beta");
  c.occupancy_hidden = cfg.get_count("occupancy.hidden");
  c.occupancy_layers = cfg.get_count("occupancy.layers");
  c.occupancy_softplus_beta = cfg.get_real("occupancy.beta");
  c.broyden.candidates = cfg.get_count("broyden.candidates");
  c.broyden.tolerance = cfg.get_real("broyden.tolerance");
  c.broyden.max_iterations = cfg.get_count("broyden.max_iterations");
  c.broyden.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  c.temperature = cfg.get_real("selection.temperature");
  const auto& space = cfg.get("selection.space");
  if (space == "occupancy") {
    c.selection = SelectionSpace::kOccupancy;
  } else if (space == "logit") {
    c.selection = SelectionSpace::kLogit;
  } else {
    throw UsageError("selection.space must be occupancy or logit");
  }
  c.ablation = Ablation::parse(cfg.get("ablate"));
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  return c;
}

TrainerConfig trainer_config(const RunConfig& cfg) {
  TrainerConfig t;
  t.learning_rate = cfg.get_real("train.lr");
  t.pin_learning_rate = cfg.get_real("train.pin_lr");
  t.warmup_iterations = cfg.get_count("train.warmup");
  t.warmup_start_factor = cfg.get_real("train.warmup_start");
  t.clip_norm = cfg.get_real("train.clip");
  t.frames_per_batch = cfg.get_count("train.frames_per_batch");
  t.points_per_frame = cfg.get_count("train.points_per_frame");
  t.steps_per_epoch = cfg.get_count("train.steps_per_epoch");
  t.auxiliary_bone_points = cfg.get_count("train.aux_points");
  t.auxiliary_epochs = cfg.get_count("train.aux_epochs");
  t.seed = static_cast<std::uint64_t>(cfg.get_int("seed")) + 1;
  return t;
}

}  // namespace ins::cli
