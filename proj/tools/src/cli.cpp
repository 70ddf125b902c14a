#include <algorithm>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ins/error.hpp"
#include "ins/parallel.hpp"
#include "ins_cli/commands.hpp"

namespace ins::cli {

namespace {

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> assignments;
  std::string preset;
  long long seed = -1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "key=value configuration file");
  cmd->add_option("--set", o.assignments, "override one key (key=value), repeatable");
  cmd->add_option("--preset", o.preset, "desk | full");
  cmd->add_option("--seed", o.seed, "master seed");
}

/// Precedence: preset, then config file, then --set, then dedicated flags.
RunConfig resolve(const CommonOptions& o, RunConfig base = {}) {
  if (!o.preset.empty()) base.set("preset", o.preset);
  if (!o.config_file.empty()) base.load_file(o.config_file);
  for (const auto& a : o.assignments) base.set_assignment(a);
  if (o.seed >= 0) base.set("seed", std::to_string(o.seed));
  return base;
}

std::vector<std::string> override_list(const CommonOptions& o) {
  std::vector<std::string> out;
  if (!o.preset.empty()) out.push_back("preset=" + o.preset);
  if (!o.config_file.empty()) {
    RunConfig probe;
    probe.load_file(o.config_file);
    std::ifstream in(o.config_file);
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      if (line.find('=') != std::string::npos) out.push_back(line);
    }
  }
  out.insert(out.end(), o.assignments.begin(), o.assignments.end());
  if (o.seed >= 0) out.push_back("seed=" + std::to_string(o.seed));
  return out;
}

void apply_threads(const RunConfig& cfg, std::size_t flag) {
  const std::size_t n = flag > 0 ? flag : cfg.get_count("threads");
  if (n > 0) set_thread_count(n);
}

std::vector<Pose> collect_poses(const std::vector<std::string>& files, const std::string& dir,
                                std::vector<std::string>& names) {
  std::vector<fs::path> paths(files.begin(), files.end());
  if (!dir.empty()) {
    if (!fs::is_directory(dir)) throw DataError("pose directory '" + dir + "' does not exist");
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.size() > 5 && name.substr(name.size() - 5) == ".json") found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
    paths.insert(paths.end(), found.begin(), found.end());
  }
  std::vector<Pose> poses;
  for (const auto& p : paths) {
    poses.push_back(data::load_pose(p.string()));
    std::string stem = p.filename().string();
    for (const char* ext : {".json", ".pose"})
      if (stem.size() > std::string(ext).size() && stem.ends_with(ext))
        stem.resize(stem.size() - std::string(ext).size());
    names.push_back(stem);
  }
  return poses;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Invertible neural skinning: synthetic data, training, extraction and reposing"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "cap on worker threads (0 = config / hardware)");

  // gen
  CommonOptions gen_o;
  std::string gen_out;
  long long gen_frames = -1, gen_test = -1;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, gen_o);
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_option("--frames", gen_frames, "training poses");
  gen->add_option("--test-frames", gen_test, "held-out poses");

  // train
  CommonOptions train_o;
  std::string train_data, train_out, train_ablate;
  long long train_epochs = -1;
  bool train_resume = false;
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  add_common(train, train_o);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--ablate", train_ablate, "none | no-pin | no-hd | no-hc | no-lbs");
  train->add_option("--epochs", train_epochs, "total epochs");
  train->add_flag("--resume", train_resume, "continue from <out>/checkpoint.bin");

  // extract
  CommonOptions ex_o;
  std::string ex_ckpt, ex_out;
  long long ex_res = -1;
  auto* extract = app.add_subcommand("extract", "extract the canonical mesh");
  add_common(extract, ex_o);
  extract->add_option("--checkpoint", ex_ckpt, "checkpoint file")->required();
  extract->add_option("--out", ex_out, "output OBJ")->required();
  extract->add_option("--res", ex_res, "grid cells per axis");

  // repose
  CommonOptions rp_o;
  std::string rp_ckpt, rp_mesh, rp_out, rp_pose_dir;
  std::vector<std::string> rp_poses;
  long long rp_res = -1;
  std::size_t rp_samples = 1;
  auto* repose = app.add_subcommand("repose", "repose a canonical mesh into target poses");
  add_common(repose, rp_o);
  repose->add_option("--checkpoint", rp_ckpt, "checkpoint file")->required();
  repose->add_option("--mesh", rp_mesh, "canonical OBJ (extracted when omitted)");
  repose->add_option("--poses", rp_poses, "pose JSON files");
  repose->add_option("--pose-dir", rp_pose_dir, "directory of pose JSON files");
  repose->add_option("--out", rp_out, "output directory")->required();
  repose->add_option("--res", rp_res, "resolution of the reference extraction");
  repose->add_option("--extraction-samples", rp_samples,
                     "posed extractions timed for the comparison");

  // eval
  CommonOptions ev_o;
  std::string ev_ckpt, ev_data, ev_split = "test";
  bool ev_gt = false;
  auto* eval = app.add_subcommand("eval", "IoU on a dataset split");
  add_common(eval, ev_o);
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--split", ev_split, "train | test");
  eval->add_flag("--ground-truth", ev_gt, "score the labels against themselves");

  // gradcheck
  long long gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gradcheck->add_option("--seed", gc_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      RunConfig cfg = resolve(gen_o);
      if (gen_frames >= 0) cfg.set("data.train_frames", std::to_string(gen_frames));
      if (gen_test >= 0) cfg.set("data.test_frames", std::to_string(gen_test));
      apply_threads(cfg, threads);
      generate_dataset(cfg, gen_out, std::cout);
    } else if (*train) {
      RunConfig cfg = resolve(train_o);
      if (!train_ablate.empty()) cfg.set("ablate", train_ablate);
      if (train_epochs >= 0) cfg.set("train.epochs", std::to_string(train_epochs));
      if (train_resume && train_o.config_file.empty() && train_o.assignments.empty() &&
          fs::exists(fs::path(train_out) / "config.txt")) {
        // Resume with the recorded configuration unless told otherwise.
        RunConfig recorded;
        recorded.load_file((fs::path(train_out) / "config.txt").string());
        if (train_epochs >= 0) recorded.set("train.epochs", std::to_string(train_epochs));
        cfg = recorded;
      }
      apply_threads(cfg, threads);
      const auto s = train_model(cfg, train_data, train_out, train_resume, std::cout);
      std::cout << "trained " << s.epochs_run << " epochs (now at " << s.final_epoch << ") in "
                << s.seconds << " s; checkpoint " << s.checkpoint.string() << "\n";
    } else if (*extract) {
      auto loaded = load_model(ex_ckpt, override_list(ex_o));
      apply_threads(loaded.config, threads);
      const std::size_t res =
          ex_res >= 0 ? static_cast<std::size_t>(ex_res) : loaded.config.get_count("extract.res");
      const auto mesh =
          extract_canonical(*loaded.model, res, loaded.config.get_real("extract.box_scale"));
      if (mesh.empty()) std::cerr << "warning: extracted mesh is empty (no 0.5 crossing)\n";
      data::save_obj(ex_out, mesh);
      std::cout << "wrote " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
                << " triangles to " << ex_out << "\n";
    } else if (*repose) {
      auto loaded = load_model(rp_ckpt, override_list(rp_o));
      apply_threads(loaded.config, threads);
      const std::size_t res =
          rp_res >= 0 ? static_cast<std::size_t>(rp_res) : loaded.config.get_count("extract.res");
      const Real box_scale = loaded.config.get_real("extract.box_scale");
      std::vector<std::string> names;
      const auto poses = collect_poses(rp_poses, rp_pose_dir, names);
      if (poses.empty()) throw UsageError("no poses given (--poses or --pose-dir)");
      const TriMesh canonical =
          rp_mesh.empty() ? extract_canonical(*loaded.model, res, box_scale) : data::load_obj(rp_mesh);
      if (canonical.empty()) std::cerr << "warning: canonical mesh is empty\n";
      const fs::path out(rp_out);
      std::error_code ec;
      fs::create_directories(out, ec);
      if (!fs::is_directory(out)) throw DataError("cannot create '" + rp_out + "'");
      loaded.config.save((out / "config.txt").string());
      const auto result =
          repose_with_timing(*loaded.model, canonical, poses, res, box_scale, rp_samples);
      for (std::size_t i = 0; i < result.meshes.size(); ++i)
        data::save_obj((out / (names[i] + ".obj")).string(), result.meshes[i]);
      std::ofstream(out / "timing.json") << result.report.to_json() << "\n";
      std::cout << result.report.to_text();
    } else if (*eval) {
      const Dataset d = load_dataset(ev_data);
      const auto& frames = dataset_split(d, ev_split);
      EvalResult r;
      if (ev_gt) {
        r = evaluate_ground_truth(frames);
      } else {
        if (ev_ckpt.empty()) throw UsageError("--checkpoint is required unless --ground-truth");
        auto loaded = load_model(ev_ckpt, override_list(ev_o));
        apply_threads(loaded.config, threads);
        r = evaluate(*loaded.model, frames);
      }
      std::cout << "split " << ev_split << " (" << r.frames << " frames): IoU surface "
                << r.iou_surface << "  IoU bbox " << r.iou_bbox;
      if (r.unconverged_points > 0) std::cout << "  unconverged " << r.unconverged_points;
      std::cout << "\n";
    } else if (*gradcheck) {
      if (threads > 0) set_thread_count(threads);
      bool ok = true;
      for (const auto& l : gradcheck_all(static_cast<std::uint64_t>(gc_seed))) {
        std::cout << (l.passed ? "PASS " : "FAIL ") << l.name << "  max rel " << l.max_relative_error
                  << "  checked " << l.checked;
        if (!l.worst_block.empty()) std::cout << "  worst " << l.worst_block;
        std::cout << "\n";
        ok = ok && l.passed;
      }
      if (!ok) return 4;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ins::cli
