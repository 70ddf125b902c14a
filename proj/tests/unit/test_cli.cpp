#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ins/error.hpp"
#include "ins/skinning.hpp"
#include "ins_cli/commands.hpp"

using namespace ins;
using namespace ins::cli;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("ins_cli_test_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_config() {
  RunConfig c;
  for (const char* kv :
       {"data.train_frames=3", "data.test_frames=1", "data.surface_samples=96",
        "data.uniform_samples=96", "data.mesh_res=24", "pin.layers=6", "pin.embedding_dim=4",
        "pin.encoder_hidden=8", "pin.space_hidden=8", "pin.map_hidden=8", "weights.hidden=8",
        "weights.layers=1", "occupancy.hidden=8", "occupancy.layers=1", "train.epochs=1",
        "train.steps_per_epoch=2", "train.frames_per_batch=2", "train.points_per_frame=16",
        "train.aux_points=16", "train.checkpoint_every=1", "extract.res=16"})
    c.set_assignment(kv);
  return c;
}

int run_args(std::vector<std::string> args) {
  args.insert(args.begin(), "ins");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config defaults, presets and unknown keys") {
    RunConfig c;
    CHECK(c.get("preset") == "desk");
    CHECK(c.get_count("train.epochs") == 30);
    CHECK(c.get_count("data.train_frames") + c.get_count("data.test_frames") == 24);
    CHECK(c.get_count("train.frames_per_batch") * c.get_count("train.points_per_frame") == 4096);
    CHECK_THROWS_AS(c.set("no.such.key", "1"), UsageError);
    CHECK_THROWS_AS(c.set_assignment("missing_equals"), UsageError);

    c.set("train.epochs", "12");
    c.set("preset", "full");
    CHECK(c.get_count("train.epochs") == 12);  // explicit keys survive presets
    CHECK(c.get_count("pin.embedding_dim") == 120);
    CHECK(c.get_count("train.frames_per_batch") * c.get_count("train.points_per_frame") == 60000);
    CHECK(c.get_count("data.surface_samples") == 100000);
    CHECK_THROWS_AS(c.set("preset", "huge"), UsageError);

    c.set("train.lr", "abc");
    CHECK_THROWS_AS(c.get_real("train.lr"), UsageError);
    c.set("train.epochs", "-3");
    CHECK_THROWS_AS(c.get_count("train.epochs"), UsageError);
  }

  TEST_CASE("config text round trip and comments") {
    RunConfig a;
    a.set("seed", "9");
    a.set("ablate", "no-hd");
    RunConfig b;
    b.load_text("# comment\nseed = 9   # trailing\n\nablate=no-hd\n", "inline");
    CHECK(a.to_text() == b.to_text());
    RunConfig c;
    c.load_text(a.to_text(), "echo");
    CHECK(c.to_text() == a.to_text());
    CHECK_THROWS_AS(c.load_text("bogus = 1\n", "inline"), UsageError);
    CHECK(model_config(c).ablation.name() == "no-hd");
  }

  TEST_CASE("config builders carry every value") {
    RunConfig c;
    c.set("pin.layers", "12");
    c.set("broyden.candidates", "3");
    c.set("selection.space", "logit");
    const auto m = model_config(c);
    CHECK(m.pin.layer_count == 12);
    CHECK(m.broyden.candidates == 3);
    CHECK(m.selection == SelectionSpace::kLogit);
    CHECK(trainer_config(c).points_per_frame == 512);
    c.set("selection.space", "raw");
    CHECK_THROWS_AS(model_config(c), UsageError);
  }

  TEST_CASE("gen: default config writes 24 frames") {
    TempDir t("gen_default");
    std::ostringstream log;
    generate_dataset(RunConfig{}, t.path / "d", log);
    const auto d = load_dataset(t.path / "d");
    CHECK(d.train.size() == 20);
    CHECK(d.test.size() == 4);
    CHECK(d.train[0].surface.size() == 8192);
    CHECK(d.train[0].uniform.size() == 8192);
    CHECK(fs::exists(t.path / "d" / "train" / "frame_000.obj"));
    CHECK(fs::exists(t.path / "d" / "config.txt"));
  }

  TEST_CASE("gen: same seed gives byte-identical samples; zero poses is a usage error") {
    TempDir t("gen_determinism");
    std::ostringstream log;
    const auto cfg = small_config();
    generate_dataset(cfg, t.path / "a", log);
    generate_dataset(cfg, t.path / "b", log);
    for (const char* f : {"train/frame_000.samples", "train/frame_002.samples", "test/frame_000.samples",
                          "train/frame_001.pose.json"})
      CHECK(read_file(t.path / "a" / f) == read_file(t.path / "b" / f));

    auto zero = cfg;
    zero.set("data.train_frames", "0");
    zero.set("data.test_frames", "0");
    CHECK_THROWS_AS(generate_dataset(zero, t.path / "z", log), UsageError);

    std::ofstream(t.path / "plain_file") << "x";
    CHECK_THROWS_AS(generate_dataset(cfg, t.path / "plain_file" / "sub", log), DataError);
  }

  TEST_CASE("train: smoke run, loadable checkpoint, resume and shape mismatch") {
    TempDir t("train");
    std::ostringstream log;
    const auto cfg = small_config();
    generate_dataset(cfg, t.path / "d", log);
    const auto s = train_model(cfg, t.path / "d", t.path / "m", false, log);
    CHECK(s.epochs_run == 1);
    CHECK(std::isfinite(s.final_loss));
    const auto loaded = load_model(t.path / "m" / "checkpoint.bin");
    CHECK(loaded.epoch == 1);
    CHECK(loaded.step == 2);
    CHECK(fs::exists(t.path / "m" / "config.txt"));

    auto more = cfg;
    more.set("train.epochs", "2");
    const auto r = train_model(more, t.path / "d", t.path / "m", true, log);
    CHECK(r.epochs_run == 1);
    CHECK(r.final_epoch == 2);
    CHECK(load_model(t.path / "m" / "checkpoint.bin").epoch == 2);

    std::ifstream metrics(t.path / "m" / "metrics.jsonl");
    std::vector<nlohmann::json> records;
    for (std::string line; std::getline(metrics, line);) records.push_back(nlohmann::json::parse(line));
    REQUIRE(records.size() == 2);
    CHECK(records[1]["epoch"] == 2);
    for (const auto& rec : records)
      for (const char* k : {"mean_loss", "skipped_points", "mean_broyden_iterations"})
        CHECK(rec.contains(k));

    auto wider = more;
    wider.set("occupancy.hidden", "12");
    wider.set("train.epochs", "3");
    CHECK_THROWS_AS(train_model(wider, t.path / "d", t.path / "m", true, log), DataError);
  }

  TEST_CASE("train: no-pin keeps both PINs at identity") {
    TempDir t("train_nopin");
    std::ostringstream log;
    auto cfg = small_config();
    cfg.set("ablate", "no-pin");
    generate_dataset(cfg, t.path / "d", log);
    train_model(cfg, t.path / "d", t.path / "m", false, log);
    const auto loaded = load_model(t.path / "m" / "checkpoint.bin");
    const Pose pose = load_dataset(t.path / "d").train[0].pose;
    const Matrix pts = Matrix::Random(3, 20) * 0.3;
    CHECK((loaded.model->deformed_pin().forward(pts, pose) - pts).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.model->canonical_pin().forward(pts, pose) - pts).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("extract: 0.5-everywhere model gives an empty mesh; coarse grid rejected") {
    auto model = build_model(small_config());
    model->occupancy().trunk().zero_output_layer();
    CHECK(extract_canonical(*model, 16, 1.1).empty());
    CHECK_THROWS_AS(extract_canonical(*model, 2, 1.1), UsageError);
  }

  TEST_CASE("repose: identity pose on no-pin equals forward LBS; connectivity preserved") {
    auto cfg = small_config();
    cfg.set("ablate", "no-pin");
    auto model = build_model(cfg);
    // A canonical mesh from the ground-truth body.
    const data::SyntheticBody body(body_config(cfg));
    const TriMesh canonical = body.mesh(Pose::identity(2), 16);
    REQUIRE(!canonical.empty());

    std::vector<Pose> poses{Pose::identity(2)};
    nn::Rng rng(3);
    for (int i = 0; i < 3; ++i) poses.push_back(body.sample_pose(rng));
    const auto result = repose_with_timing(*model, canonical, poses, 12, 1.1, 1);
    REQUIRE(result.meshes.size() == poses.size());
    for (std::size_t v = 0; v < canonical.vertices.size(); ++v) {
      const Point3 lbs = skinning::lbs_forward(model->weight_field(), canonical.vertices[v], poses[0]);
      CHECK((result.meshes[0].vertices[v] - lbs).norm() <= 1e-12);
    }
    for (const auto& m : result.meshes) {
      CHECK(m.vertices.size() == canonical.vertices.size());
      CHECK(m.triangles == canonical.triangles);
    }
    CHECK(result.report.poses == 4);
    CHECK(result.report.repose_total_seconds > 0);
    CHECK(result.report.extraction_per_pose_seconds > 0);
    const auto j = nlohmann::json::parse(result.report.to_json());
    CHECK(j["speedup"].get<double>() == doctest::Approx(result.report.speedup));
  }

  TEST_CASE("eval: ground truth against itself is 100/100; unconverged everywhere is numerical") {
    TempDir t("eval");
    std::ostringstream log;
    const auto cfg = small_config();
    generate_dataset(cfg, t.path / "d", log);
    const auto d = load_dataset(t.path / "d");
    const auto gt = evaluate_ground_truth(d.test);
    CHECK(gt.iou_surface == 100.0);
    CHECK(gt.iou_bbox == 100.0);
    CHECK_THROWS_AS(dataset_split(d, "val"), UsageError);

    auto model = build_model(cfg);
    const auto r = evaluate(*model, d.test);
    CHECK(r.frames == 1);
    CHECK(r.iou_surface >= 0);
    CHECK(r.iou_surface <= 100);

    auto never = cfg;
    never.set("broyden.max_iterations", "0");
    auto stuck = build_model(never);
    CHECK_THROWS_AS(evaluate(*stuck, d.test), NumericalError);
  }

  TEST_CASE("exit codes") {
    TempDir t("exit");
    CHECK(run_args({"frobnicate"}) == 2);
    CHECK(run_args({"gen", "--out", (t.path / "g").string(), "--frames", "0", "--test-frames", "0"}) == 2);
    CHECK(run_args({"gen", "--out", (t.path / "g").string(), "--set", "bogus=1"}) == 2);
    CHECK(run_args({"eval", "--data", (t.path / "missing").string(), "--ground-truth"}) == 3);
    CHECK(run_args({"extract", "--checkpoint", (t.path / "none.bin").string(), "--out",
                    (t.path / "x.obj").string()}) == 3);
  }

  TEST_CASE("gen, train, extract, repose and eval through the command line") {
    TempDir t("e2e");
    const fs::path cfg_file = t.path / "small.txt";
    small_config().save(cfg_file.string());
    const std::string c = cfg_file.string();
    REQUIRE(run_args({"gen", "--config", c, "--out", (t.path / "d").string()}) == 0);
    REQUIRE(run_args({"train", "--config", c, "--data", (t.path / "d").string(), "--out",
                      (t.path / "m").string()}) == 0);
    const std::string ckpt = (t.path / "m" / "checkpoint.bin").string();
    CHECK(run_args({"extract", "--checkpoint", ckpt, "--out", (t.path / "c.obj").string()}) == 0);
    CHECK(run_args({"extract", "--checkpoint", ckpt, "--out", (t.path / "c.obj").string(), "--res",
                    "2"}) == 2);
    CHECK(run_args({"repose", "--checkpoint", ckpt, "--pose-dir", (t.path / "d" / "test").string(),
                    "--out", (t.path / "r").string(), "--res", "12"}) == 0);
    CHECK(fs::exists(t.path / "r" / "frame_000.obj"));
    CHECK(fs::exists(t.path / "r" / "timing.json"));
    CHECK(fs::exists(t.path / "r" / "config.txt"));
    CHECK(run_args({"eval", "--checkpoint", ckpt, "--data", (t.path / "d").string(), "--split",
                    "train"}) == 0);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("gradcheck suites all pass") {
    const auto lines = gradcheck_all(0);
    CHECK(lines.size() == 8);
    for (const auto& l : lines) {
      CHECK_MESSAGE(l.passed, l.name << " max rel " << l.max_relative_error << " in " << l.worst_block);
      CHECK(l.checked > 0);
    }
    CHECK(run_args({"gradcheck"}) == 0);
  }
}
