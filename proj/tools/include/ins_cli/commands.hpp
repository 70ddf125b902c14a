#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ins/data.hpp"
#include "ins/pipeline.hpp"
#include "ins_cli/run_config.hpp"

namespace ins::cli {

namespace fs = std::filesystem;

// Dataset layout:
//   <dir>/config.txt
//   <dir>/{train,test}/frame_NNN.{pose.json,samples,obj}
struct Dataset {
  RunConfig config;
  std::vector<data::FrameSampleSet> train;
  std::vector<data::FrameSampleSet> test;
};

void generate_dataset(const RunConfig& cfg, const fs::path& dir, std::ostream& log);
Dataset load_dataset(const fs::path& dir);
const std::vector<data::FrameSampleSet>& dataset_split(const Dataset& d, const std::string& split);

struct TrainSummary {
  std::size_t epochs_run = 0;
  std::size_t final_epoch = 0;
  Real final_loss = 0;
  double seconds = 0;
  fs::path checkpoint;
};

/// Trains into `out_dir` (config.txt, metrics.jsonl, checkpoint.bin). Body
/// keys come from the dataset so the skeleton matches the samples.
TrainSummary train_model(RunConfig cfg, const fs::path& data_dir, const fs::path& out_dir,
                         bool resume, std::ostream& log);

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<InsModel> model;
  std::size_t epoch = 0;
  std::uint64_t step = 0;
};

void save_model(const fs::path& path, InsModel& model, std::size_t epoch, std::uint64_t step);
/// Reads `config.txt` beside the checkpoint (if present), then applies
/// `overrides` (key=value) before building the architecture.
LoadedModel load_model(const fs::path& checkpoint,
                       const std::vector<std::string>& overrides = {});
std::unique_ptr<InsModel> build_model(const RunConfig& cfg);

/// Cubic box around the canonical bone boxes.
Aabb canonical_extraction_box(const InsModel& model, Real scale);
/// Cubic box around the posed bone boxes.
Aabb posed_extraction_box(const InsModel& model, const Pose& pose, Real scale);

/// Canonical occupancy grid + marching cubes.
TriMesh extract_canonical(const InsModel& model, std::size_t res, Real box_scale);
/// Posed occupancy through the full deformed-to-canonical path + marching
/// cubes. The per-pose alternative to reposing one canonical mesh.
TriMesh extract_posed(const InsModel& model, const Pose& pose, std::size_t res, Real box_scale);

struct ReposeReport {
  std::size_t poses = 0;
  std::size_t vertices = 0;
  std::size_t triangles = 0;
  std::size_t extraction_samples = 0;
  double repose_total_seconds = 0;
  double repose_per_pose_seconds = 0;
  double extraction_per_pose_seconds = 0;
  double extraction_total_estimate_seconds = 0;
  double speedup = 0;
  std::string to_json() const;
  std::string to_text() const;
};

struct ReposeResult {
  std::vector<TriMesh> meshes;
  ReposeReport report;
};

/// Reposes `canonical` into every pose (timed), then times
/// `extraction_samples` posed extractions at `res` for comparison.
ReposeResult repose_with_timing(const InsModel& model, const TriMesh& canonical,
                                const std::vector<Pose>& poses, std::size_t res,
                                Real box_scale, std::size_t extraction_samples);

struct EvalResult {
  Real iou_surface = 0;
  Real iou_bbox = 0;
  std::size_t frames = 0;
  std::size_t unconverged_points = 0;
};

/// Mean per-frame IoU of binarized hard-argmax predictions.
EvalResult evaluate(const InsModel& model, const std::vector<data::FrameSampleSet>& frames);
/// Labels against themselves; exercises the metric path only.
EvalResult evaluate_ground_truth(const std::vector<data::FrameSampleSet>& frames);

struct GradcheckLine {
  std::string name;
  Real max_relative_error = 0;
  std::size_t checked = 0;
  std::string worst_block;
  bool passed = false;
};

/// Tiny model used by the finite-difference checks (n_b = 2, width 4).
InsConfig tiny_gradcheck_config(std::uint64_t seed);
/// Full-loss check of one tiny instance (3 samples, eps 1e-5).
GradcheckLine gradcheck_pipeline(const std::string& ablation, SelectionSpace space,
                                 std::uint64_t seed, bool auxiliary);
/// Every suite: the full loss under each ablation and selection space, the
/// PIN Jacobian determinant, and the implicit correspondence gradient.
std::vector<GradcheckLine> gradcheck_all(std::uint64_t seed);

/// Entry point of the `ins` executable; returns the process exit code.
int run(int argc, char** argv);

}  // namespace ins::cli
