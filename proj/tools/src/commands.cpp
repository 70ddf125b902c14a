#include "ins_cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ins/error.hpp"
#include "ins/meshing.hpp"
#include "ins/parallel.hpp"

namespace ins::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string frame_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu", i);
  return buf;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError("cannot create directory '" + dir.string() + "'");
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw DataError("directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);
}

std::vector<data::FrameSampleSet> load_split(const fs::path& dir) {
  std::vector<data::FrameSampleSet> frames;
  if (!fs::is_directory(dir)) return frames;
  for (std::size_t i = 0;; ++i) {
    const fs::path pose = dir / (frame_stem(i) + ".pose.json");
    const fs::path samples = dir / (frame_stem(i) + ".samples");
    if (!fs::exists(pose)) break;
    auto set = data::load_samples(samples.string());
    set.pose = data::load_pose(pose.string());
    frames.push_back(std::move(set));
  }
  return frames;
}

Aabb cubic(const Aabb& box) {
  const Real half = box.extent().maxCoeff() / 2;
  const Point3 c = box.center();
  return {c - Point3::Constant(half), c + Point3::Constant(half)};
}

Aabb union_box(const std::vector<Point3>& corners) { return Aabb::of(corners); }

std::vector<Point3> box_corners(const Aabb& b) {
  std::vector<Point3> out;
  for (int m = 0; m < 8; ++m)
    out.emplace_back((m & 1) ? b.max.x() : b.min.x(), (m & 2) ? b.max.y() : b.min.y(),
                     (m & 4) ? b.max.z() : b.min.z());
  return out;
}

nn::ParamBlock scalar_block(const std::string& name, Real value) {
  nn::ParamBlock b(name, {1});
  b.values[0] = value;
  return b;
}

void perturb_zero_values(const std::vector<nn::ParamBlock*>& blocks, nn::Rng& rng, Real scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto* b : blocks)
    for (auto& v : b->values)
      if (v == 0) v = static_cast<Real>(u(rng)) * scale;
}

}  // namespace

// ---------------------------------------------------------------------------
// gen

void generate_dataset(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const std::size_t n_train = cfg.get_count("data.train_frames");
  const std::size_t n_test = cfg.get_count("data.test_frames");
  if (n_train + n_test == 0) throw UsageError("pose count must be positive");
  const std::size_t mesh_res = cfg.get_count("data.mesh_res");
  if (mesh_res < 8) throw UsageError("data.mesh_res must be at least 8");
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

  ensure_directory(dir / "train");
  ensure_directory(dir / "test");
  cfg.save((dir / "config.txt").string());

  const data::SyntheticBody body(body_config(cfg));
  const auto start = Clock::now();
  const auto frames = data::generate_frames(body, n_train + n_test, seed, mesh_res);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const bool train = i < n_train;
    const fs::path split = dir / (train ? "train" : "test");
    const std::string stem = frame_stem(train ? i : i - n_train);
    const auto samples = data::sample_frame(body, frames[i], sampling_options(cfg, seed * 7919 + 100 + i));
    data::save_samples((split / (stem + ".samples")).string(), samples);
    data::save_pose((split / (stem + ".pose.json")).string(), frames[i].pose);
    data::save_obj((split / (stem + ".obj")).string(), frames[i].mesh);
  }
  log << "wrote " << n_train << " train + " << n_test << " test frames to " << dir.string()
      << " in " << std::fixed << std::setprecision(2) << seconds_since(start) << " s\n";
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset '" + dir.string() + "' does not exist");
  Dataset d;
  const fs::path cfg = dir / "config.txt";
  if (!fs::exists(cfg)) throw DataError("dataset '" + dir.string() + "' has no config.txt");
  d.config.load_file(cfg.string());
  d.train = load_split(dir / "train");
  d.test = load_split(dir / "test");
  if (d.train.empty() && d.test.empty())
    throw DataError("dataset '" + dir.string() + "' contains no frames");
  return d;
}

const std::vector<data::FrameSampleSet>& dataset_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "test") return d.test;
  throw UsageError("split must be train or test");
}

// ---------------------------------------------------------------------------
// model files

std::unique_ptr<InsModel> build_model(const RunConfig& cfg) {
  const data::SyntheticBody body(body_config(cfg));
  auto model = std::make_unique<InsModel>(model_config(cfg), body.skeleton());
  model->initialize();
  return model;
}

void save_model(const fs::path& path, InsModel& model, std::size_t epoch, std::uint64_t step) {
  auto blocks = model.all_params();
  nn::ParamBlock e = scalar_block("meta.epoch", static_cast<Real>(epoch));
  nn::ParamBlock s = scalar_block("meta.step", static_cast<Real>(step));
  blocks.push_back(&e);
  blocks.push_back(&s);
  std::vector<const nn::ParamBlock*> view(blocks.begin(), blocks.end());
  const fs::path tmp = path.string() + ".tmp";
  nn::save_checkpoint(tmp.string(), view);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot write checkpoint '" + path.string() + "'");
}

LoadedModel load_model(const fs::path& checkpoint, const std::vector<std::string>& overrides) {
  if (!fs::exists(checkpoint))
    throw DataError("checkpoint '" + checkpoint.string() + "' does not exist");
  LoadedModel out;
  const fs::path cfg = checkpoint.parent_path() / "config.txt";
  if (fs::exists(cfg)) out.config.load_file(cfg.string());
  for (const auto& o : overrides) out.config.set_assignment(o);
  out.model = build_model(out.config);
  const auto stored = nn::read_checkpoint(checkpoint.string());
  nn::restore_blocks(stored, out.model->all_params());
  for (const auto& b : stored) {
    if (b.name == "meta.epoch" && b.size() == 1) out.epoch = static_cast<std::size_t>(b.values[0]);
    if (b.name == "meta.step" && b.size() == 1) out.step = static_cast<std::uint64_t>(b.values[0]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// train

TrainSummary train_model(RunConfig cfg, const fs::path& data_dir, const fs::path& out_dir,
                         bool resume, std::ostream& log) {
  const Dataset dataset = load_dataset(data_dir);
  if (dataset.train.empty()) throw DataError("dataset has no training frames");
  for (const auto& k : RunConfig::keys())
    if (k.name.rfind("body.", 0) == 0) cfg.set(k.name, dataset.config.get(k.name));

  const std::size_t epochs = cfg.get_count("train.epochs");
  const std::size_t every = std::max<std::size_t>(1, cfg.get_count("train.checkpoint_every"));
  ensure_directory(out_dir);
  const fs::path ckpt = out_dir / "checkpoint.bin";

  std::unique_ptr<InsModel> model;
  std::size_t start_epoch = 0;
  std::uint64_t start_step = 0;
  if (resume && fs::exists(ckpt)) {
    // The current config must describe the same architecture; restore_blocks
    // rejects any shape mismatch.
    model = build_model(cfg);
    const auto stored = nn::read_checkpoint(ckpt.string());
    nn::restore_blocks(stored, model->all_params());
    for (const auto& b : stored) {
      if (b.name == "meta.epoch" && b.size() == 1) start_epoch = static_cast<std::size_t>(b.values[0]);
      if (b.name == "meta.step" && b.size() == 1) start_step = static_cast<std::uint64_t>(b.values[0]);
    }
    log << "resuming from epoch " << start_epoch << " (step " << start_step << ")\n";
  } else {
    model = build_model(cfg);
  }
  cfg.save((out_dir / "config.txt").string());

  Trainer trainer(*model, trainer_config(cfg));
  trainer.set_progress(start_epoch, start_step);

  std::ofstream metrics(out_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw DataError("cannot write metrics log in '" + out_dir.string() + "'");

  TrainSummary summary;
  summary.checkpoint = ckpt;
  const auto start = Clock::now();
  for (std::size_t e = start_epoch; e < epochs; ++e) {
    const auto epoch_start = Clock::now();
    const EpochMetrics m = trainer.train_epoch(dataset.train);
    const double secs = seconds_since(epoch_start);
    nlohmann::json rec = {{"epoch", m.epoch},
                          {"mean_loss", m.mean_loss},
                          {"skipped_points", m.skipped_points},
                          {"mean_broyden_iterations", m.mean_broyden_iterations},
                          {"steps", m.steps},
                          {"auxiliary", m.auxiliary_active},
                          {"seconds", secs}};
    metrics << rec.dump() << "\n" << std::flush;
    log << "epoch " << m.epoch << "/" << epochs << "  loss " << std::setprecision(5)
        << m.mean_loss << "  skipped " << m.skipped_points << "  broyden "
        << std::setprecision(3) << m.mean_broyden_iterations << "  " << std::fixed
        << std::setprecision(1) << secs << " s\n"
        << std::defaultfloat;
    summary.final_loss = m.mean_loss;
    ++summary.epochs_run;
    if (trainer.epoch() % every == 0 || trainer.epoch() == epochs)
      save_model(ckpt, *model, trainer.epoch(), trainer.step());
  }
  if (summary.epochs_run == 0) save_model(ckpt, *model, trainer.epoch(), trainer.step());
  summary.final_epoch = trainer.epoch();
  summary.seconds = seconds_since(start);
  return summary;
}

// ---------------------------------------------------------------------------
// extraction

Aabb canonical_extraction_box(const InsModel& model, Real scale) {
  std::vector<Point3> corners;
  const auto& sk = model.skeleton();
  for (std::size_t i = 0; i < sk.bone_count(); ++i)
    for (const auto& c : box_corners(sk.bone_box(i))) corners.push_back(c);
  return cubic(union_box(corners).scaled(scale));
}

Aabb posed_extraction_box(const InsModel& model, const Pose& pose, Real scale) {
  if (pose.bone_count() != model.bone_count())
    throw UsageError("pose has " + std::to_string(pose.bone_count()) + " bones, model has " +
                     std::to_string(model.bone_count()));
  std::vector<Point3> corners;
  const auto& sk = model.skeleton();
  for (std::size_t i = 0; i < sk.bone_count(); ++i)
    for (const auto& c : box_corners(sk.bone_box(i))) corners.push_back(pose.bone(i).apply(c));
  return cubic(union_box(corners).scaled(scale));
}

TriMesh extract_canonical(const InsModel& model, std::size_t res, Real box_scale) {
  if (res < 8) throw UsageError("extraction resolution must be at least 8");
  const auto grid = meshing::sample_grid(model.occupancy(), canonical_extraction_box(model, box_scale), res);
  return meshing::marching_cubes(grid, static_cast<Real>(0.5));
}

TriMesh extract_posed(const InsModel& model, const Pose& pose, std::size_t res, Real box_scale) {
  if (res < 8) throw UsageError("extraction resolution must be at least 8");
  const meshing::BatchField field = [&](const Matrix& pts) {
    return model.predict_occupancy(pts, pose);
  };
  const auto grid = meshing::sample_grid(field, posed_extraction_box(model, pose, box_scale), res);
  return meshing::marching_cubes(grid, static_cast<Real>(0.5));
}

// ---------------------------------------------------------------------------
// repose

std::string ReposeReport::to_json() const {
  nlohmann::json j = {{"poses", poses},
                      {"vertices", vertices},
                      {"triangles", triangles},
                      {"extraction_samples", extraction_samples},
                      {"repose_total_seconds", repose_total_seconds},
                      {"repose_per_pose_seconds", repose_per_pose_seconds},
                      {"extraction_per_pose_seconds", extraction_per_pose_seconds},
                      {"extraction_total_estimate_seconds", extraction_total_estimate_seconds},
                      {"speedup", speedup}};
  return j.dump(2);
}

std::string ReposeReport::to_text() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "reposed " << poses << " poses (" << vertices << " vertices, " << triangles
      << " triangles)\n";
  out << "  repose:     " << repose_total_seconds << " s total, " << repose_per_pose_seconds
      << " s per pose\n";
  out << "  extraction: " << extraction_per_pose_seconds << " s per pose (mean of "
      << extraction_samples << "), " << extraction_total_estimate_seconds << " s for " << poses
      << " poses\n";
  out << std::setprecision(2) << "  speedup:    " << speedup << "x\n";
  return out.str();
}

ReposeResult repose_with_timing(const InsModel& model, const TriMesh& canonical,
                                const std::vector<Pose>& poses, std::size_t res,
                                Real box_scale, std::size_t extraction_samples) {
  if (poses.empty()) throw UsageError("at least one pose is required");
  for (const auto& p : poses)
    if (p.bone_count() != model.bone_count())
      throw UsageError("pose bone count does not match the model");
  ReposeResult out;
  out.meshes.reserve(poses.size());
  const auto start = Clock::now();
  for (const auto& p : poses) out.meshes.push_back(model.repose(canonical, p));
  auto& r = out.report;
  r.repose_total_seconds = seconds_since(start);
  r.poses = poses.size();
  r.vertices = canonical.vertices.size();
  r.triangles = canonical.triangles.size();
  r.repose_per_pose_seconds = r.repose_total_seconds / static_cast<double>(poses.size());

  r.extraction_samples = std::min(std::max<std::size_t>(extraction_samples, 1), poses.size());
  const auto ex_start = Clock::now();
  for (std::size_t i = 0; i < r.extraction_samples; ++i) {
    const auto mesh = extract_posed(model, poses[i], res, box_scale);
    (void)mesh;
  }
  r.extraction_per_pose_seconds = seconds_since(ex_start) / static_cast<double>(r.extraction_samples);
  r.extraction_total_estimate_seconds = r.extraction_per_pose_seconds * static_cast<double>(poses.size());
  r.speedup = r.repose_total_seconds > 0 ? r.extraction_total_estimate_seconds / r.repose_total_seconds : 0;
  return out;
}

// ---------------------------------------------------------------------------
// eval

namespace {

Matrix sample_matrix(const std::vector<OccupancySample>& s) {
  Matrix m(3, static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = s[i].point;
  return m;
}

std::vector<std::uint8_t> labels_of(const std::vector<OccupancySample>& s) {
  std::vector<std::uint8_t> l(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) l[i] = s[i].occupancy;
  return l;
}

}  // namespace

EvalResult evaluate(const InsModel& model, const std::vector<data::FrameSampleSet>& frames) {
  if (frames.empty()) throw DataError("no frames to evaluate");
  EvalResult r;
  std::size_t total_points = 0;
  for (const auto& f : frames) {
    Real ious[2] = {0, 0};
    const std::vector<OccupancySample>* sets[2] = {&f.surface, &f.uniform};
    for (int s = 0; s < 2; ++s) {
      const Matrix pts = sample_matrix(*sets[s]);
      const RowVector occ = model.predict_occupancy(pts, f.pose, &r.unconverged_points);
      std::vector<std::uint8_t> predicted(sets[s]->size());
      for (std::size_t i = 0; i < predicted.size(); ++i)
        predicted[i] = data::binarize(occ(static_cast<Eigen::Index>(i)));
      total_points += predicted.size();
      ious[s] = data::iou(labels_of(*sets[s]), predicted);
    }
    r.iou_surface += ious[0];
    r.iou_bbox += ious[1];
  }
  if (total_points > 0 && r.unconverged_points == total_points)
    throw NumericalError("no converged correspondences for any evaluation point");
  r.frames = frames.size();
  r.iou_surface /= static_cast<Real>(frames.size());
  r.iou_bbox /= static_cast<Real>(frames.size());
  return r;
}

EvalResult evaluate_ground_truth(const std::vector<data::FrameSampleSet>& frames) {
  if (frames.empty()) throw DataError("no frames to evaluate");
  EvalResult r;
  for (const auto& f : frames) {
    const auto s = labels_of(f.surface);
    const auto u = labels_of(f.uniform);
    r.iou_surface += data::iou(s, s);
    r.iou_bbox += data::iou(u, u);
  }
  r.frames = frames.size();
  r.iou_surface /= static_cast<Real>(frames.size());
  r.iou_bbox /= static_cast<Real>(frames.size());
  return r;
}

// ---------------------------------------------------------------------------
// gradcheck

InsConfig tiny_gradcheck_config(std::uint64_t seed) {
  InsConfig c;
  c.pin.bone_count = 2;
  c.pin.embedding_dim = 4;
  c.pin.encoder_hidden = 4;
  c.pin.space_hidden = 4;
  c.pin.map_hidden = 4;
  c.pin.layer_count = 6;
  c.weight_hidden = 4;
  c.weight_layers = 1;
  c.occupancy_hidden = 4;
  c.occupancy_layers = 1;
  c.broyden.candidates = 2;
  // Roots must be far tighter than the finite-difference step.
  c.broyden.tolerance = static_cast<Real>(1e-13);
  c.broyden.max_iterations = 200;
  c.seed = seed;
  return c;
}

GradcheckLine gradcheck_pipeline(const std::string& ablation, SelectionSpace space,
                                 std::uint64_t seed, bool auxiliary) {
  const data::SyntheticBody body;
  auto c = tiny_gradcheck_config(seed);
  c.ablation = Ablation::parse(ablation);
  c.selection = space;
  InsModel m(c, body.skeleton());
  m.initialize();
  nn::Rng rng(seed * 31 + 13);
  perturb_zero_values(m.all_params(), rng, static_cast<Real>(0.1));

  TrainBatch batch;
  FrameBatch f;
  f.pose = body.pose_from_joint_angles({Vec2(0.6, 0.2)});
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  f.points.resize(3, 3);
  for (Eigen::Index i = 0; i < 3; ++i)
    f.points.col(i) = Point3(static_cast<Real>(u(rng)), static_cast<Real>(u(rng)), static_cast<Real>(u(rng)));
  f.labels = {1, 0, static_cast<std::uint8_t>(body.occupancy(f.points.col(2), f.pose) ? 1 : 0)};
  batch.frames.push_back(std::move(f));

  nn::Rng aux_rng(seed + 1);
  const AuxiliaryBatch aux = make_auxiliary_batch(m.skeleton(), 8, aux_rng);
  const auto report = gradient_check(m, batch, auxiliary ? &aux : nullptr, static_cast<Real>(1e-5));

  GradcheckLine line;
  line.name = "loss[" + ablation + (space == SelectionSpace::kLogit ? ",logit" : "") +
              (auxiliary ? ",aux" : "") + "]";
  line.max_relative_error = report.max_relative_error;
  line.checked = report.checked;
  line.worst_block = report.worst_block;
  line.passed = report.checked > 0 && report.max_relative_error <= static_cast<Real>(1e-3);
  return line;
}

namespace {

GradcheckLine gradcheck_pin_jacobian(std::uint64_t seed) {
  pin::PinConfig pc;
  pin::Pin p("h", pc);
  nn::Rng rng(seed + 3);
  p.initialize(rng);
  perturb_zero_values(p.params(), rng, static_cast<Real>(0.05));
  const data::SyntheticBody body;
  std::uniform_real_distribution<double> u(-0.5, 0.5), a(-1.0, 1.0);
  GradcheckLine line{"pin.input_jacobian", 0, 0, "", true};
  const Real eps = static_cast<Real>(1e-6);
  for (int n = 0; n < 20; ++n) {
    const Pose pose = body.pose_from_joint_angles({Vec2(a(rng), a(rng) * 0.5)});
    const Point3 x(static_cast<Real>(u(rng)), static_cast<Real>(u(rng)), static_cast<Real>(u(rng)));
    const Mat3 analytic = p.input_jacobian(x, pose);
    Mat3 numeric;
    for (int k = 0; k < 3; ++k) {
      Point3 hi = x, lo = x;
      hi(k) += eps;
      lo(k) -= eps;
      numeric.col(k) = (p.forward(hi, pose) - p.forward(lo, pose)) / (2 * eps);
    }
    const Real err = (analytic - numeric).cwiseAbs().maxCoeff() /
                     (analytic.cwiseAbs().maxCoeff() + static_cast<Real>(1e-6));
    line.max_relative_error = std::max(line.max_relative_error, err);
    line.max_relative_error =
        std::max(line.max_relative_error, std::abs(analytic.determinant() - 1));
    ++line.checked;
  }
  line.passed = line.max_relative_error <= static_cast<Real>(1e-3);
  return line;
}

GradcheckLine gradcheck_implicit_input(std::uint64_t seed) {
  const data::SyntheticBody body;
  const data::AnalyticSkinWeights w(body.skeleton(), static_cast<Real>(0.01));
  skinning::BroydenOptions opt;
  opt.tolerance = static_cast<Real>(1e-13);
  opt.max_iterations = 200;
  nn::Rng rng(seed + 5);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  GradcheckLine line{"implicit.input", 0, 0, "", true};
  const Real eps = static_cast<Real>(1e-6);
  const Pose pose = body.pose_from_joint_angles({Vec2(0.7, 0.2)});
  for (int n = 0; n < 40 && line.checked < 10; ++n) {
    const Point3 qc(static_cast<Real>(u(rng)), static_cast<Real>(u(rng) * 0.2),
                    static_cast<Real>(u(rng) * 0.2));
    const Point3 qd = skinning::lbs_forward(w, qc, pose);
    const auto g = skinning::implicit_grad_wrt_input(w, pose, qc);
    if (g.singular) continue;
    Mat3 numeric;
    bool ok = true;
    for (int k = 0; k < 3 && ok; ++k) {
      Point3 roots[2];
      for (int s = 0; s < 2; ++s) {
        Point3 q = qd;
        q(k) += s == 0 ? eps : -eps;
        const auto res = skinning::broyden_solve(w, pose, q, opt);
        Real best = std::numeric_limits<Real>::infinity();
        bool found = false;
        for (const auto& c : res.candidates)
          if (c.converged && (c.point - qc).norm() < best) {
            best = (c.point - qc).norm();
            roots[s] = c.point;
            found = true;
          }
        ok = ok && found && best < static_cast<Real>(1e-3);
      }
      numeric.col(k) = (roots[0] - roots[1]) / (2 * eps);
    }
    if (!ok) continue;
    const Real err = (g.value - numeric).cwiseAbs().maxCoeff() /
                     (g.value.cwiseAbs().maxCoeff() + static_cast<Real>(1e-6));
    line.max_relative_error = std::max(line.max_relative_error, err);
    ++line.checked;
  }
  line.passed = line.checked > 0 && line.max_relative_error <= static_cast<Real>(1e-3);
  return line;
}

}  // namespace

std::vector<GradcheckLine> gradcheck_all(std::uint64_t seed) {
  std::vector<GradcheckLine> lines;
  lines.push_back(gradcheck_pipeline("none", SelectionSpace::kOccupancy, seed, true));
  lines.push_back(gradcheck_pipeline("none", SelectionSpace::kLogit, seed, false));
  for (const char* ab : {"no-pin", "no-hd", "no-hc", "no-lbs"})
    lines.push_back(gradcheck_pipeline(ab, SelectionSpace::kOccupancy, seed, false));
  lines.push_back(gradcheck_pin_jacobian(seed));
  lines.push_back(gradcheck_implicit_input(seed));
  return lines;
}

}  // namespace ins::cli
