#include <benchmark/benchmark.h>

#include "ins/data.hpp"
#include "ins/meshing.hpp"
#include "ins/pin.hpp"
#include "ins/pipeline.hpp"
#include "ins/skinning.hpp"

using namespace ins;

namespace {

Matrix random_points(std::size_t n, std::uint64_t seed) {
  nn::Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Matrix m(3, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < m.cols(); ++i)
    for (int a = 0; a < 3; ++a) m(a, i) = static_cast<Real>(u(rng)) * (a == 0 ? 2 : 0.4);
  return m;
}

InsModel trained_like_model() {
  const data::SyntheticBody body;
  InsModel m(InsConfig{}, body.skeleton());
  m.initialize();
  // Perturb the identity-initialized maps so the PINs do real work.
  nn::Rng rng(5);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto* b : m.all_params())
    for (auto& v : b->values)
      if (v == 0) v = static_cast<Real>(u(rng));
  return m;
}

void BM_PinForward(benchmark::State& state) {
  pin::Pin p("h", pin::PinConfig{});
  nn::Rng rng(1);
  p.initialize(rng);
  const data::SyntheticBody body;
  const Pose pose = body.pose_from_joint_angles({Vec2(0.8, 0.2)});
  const Matrix x = random_points(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(p.forward(x, pose));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PinForward)->Arg(1024)->Arg(8192);

void BM_BroydenSolve(benchmark::State& state) {
  const data::SyntheticBody body;
  const data::AnalyticSkinWeights field(body.skeleton(), body.config().weight_temperature);
  const Pose pose = body.pose_from_joint_angles({Vec2(0.8, 0.2)});
  skinning::BroydenOptions opt;
  const Matrix qd = skinning::lbs_forward(field, random_points(static_cast<std::size_t>(state.range(0)), 3), pose);
  for (auto _ : state) benchmark::DoNotOptimize(skinning::broyden_solve(field, pose, qd, opt));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BroydenSolve)->Arg(1024);

void BM_TrainStep(benchmark::State& state) {
  const data::SyntheticBody body;
  InsConfig c;
  c.ablation = Ablation::parse(state.range(0) ? "none" : "no-pin");
  InsModel m(c, body.skeleton());
  m.initialize();
  Trainer trainer(m, TrainerConfig{});
  TrainBatch batch;
  nn::Rng rng(4);
  for (int f = 0; f < 8; ++f) {
    FrameBatch fb;
    fb.pose = body.sample_pose(rng);
    fb.points = random_points(512, 10 + static_cast<std::uint64_t>(f));
    for (Eigen::Index i = 0; i < fb.points.cols(); ++i)
      fb.labels.push_back(body.occupancy(fb.points.col(i), fb.pose) ? 1 : 0);
    batch.frames.push_back(std::move(fb));
  }
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch, nullptr));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_ReposeVsPosedExtraction(benchmark::State& state) {
  const InsModel m = trained_like_model();
  const data::SyntheticBody body;
  const TriMesh canonical = body.mesh(Pose::identity(2), 64);
  const Pose pose = body.pose_from_joint_angles({Vec2(0.8, 0.2)});
  const bool repose = state.range(0) != 0;
  const Aabb box = body.posed_box(pose).scaled(1.1);
  for (auto _ : state) {
    if (repose) {
      benchmark::DoNotOptimize(m.repose(canonical, pose));
    } else {
      const meshing::BatchField f = [&](const Matrix& pts) { return m.predict_occupancy(pts, pose); };
      benchmark::DoNotOptimize(meshing::marching_cubes(meshing::sample_grid(f, box, 32), 0.5));
    }
  }
}
BENCHMARK(BM_ReposeVsPosedExtraction)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_MarchingCubes(benchmark::State& state) {
  const meshing::BatchField sphere = [](const Matrix& pts) -> RowVector {
    return (Real(0.7) - pts.colwise().norm().array()).matrix();
  };
  const Aabb box{Point3::Constant(-1), Point3::Constant(1)};
  const auto grid = meshing::sample_grid(sphere, box, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(meshing::marching_cubes(grid, 0));
}
BENCHMARK(BM_MarchingCubes)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
