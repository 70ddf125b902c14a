#include "ins/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "ins/error.hpp"
#include "ins/parallel.hpp"

namespace ins {

Ablation Ablation::parse(const std::string& name) {
  Ablation a;
  if (name == "none" || name.empty()) return a;
  if (name == "no-pin") {
    a.deformed_pin = a.canonical_pin = false;
  } else if (name == "no-hd") {
    a.deformed_pin = false;
  } else if (name == "no-hc") {
    a.canonical_pin = false;
  } else if (name == "no-lbs") {
    a.lbs = false;
  } else {
    throw UsageError("unknown ablation '" + name + "' (none|no-pin|no-hd|no-hc|no-lbs)");
  }
  return a;
}

std::string Ablation::name() const {
  if (!lbs) return "no-lbs";
  if (!deformed_pin && !canonical_pin) return "no-pin";
  if (!deformed_pin) return "no-hd";
  if (!canonical_pin) return "no-hc";
  return "none";
}

std::size_t PointCorrespondence::converged_count() const {
  return static_cast<std::size_t>(std::count_if(
      candidates.begin(), candidates.end(), [](const CandidateOutput& c) { return c.converged; }));
}

namespace {

pin::PinConfig synced(pin::PinConfig cfg, std::size_t bones) {
  cfg.bone_count = bones;
  return cfg;
}

}  // namespace

InsModel::InsModel(InsConfig config, Skeleton skeleton)
    : config_(std::move(config)),
      skeleton_(std::move(skeleton)),
      h_d_("h_d", synced(config_.pin, skeleton_.bone_count())),
      h_c_("h_c", synced(config_.pin, skeleton_.bone_count())),
      w_("w_lbs", skeleton_.bone_count(), config_.weight_hidden, config_.weight_layers,
         config_.weight_softplus_beta),
      o_("occupancy", config_.occupancy_hidden, config_.occupancy_layers,
         config_.occupancy_softplus_beta) {
  if (skeleton_.bone_count() == 0) throw UsageError("skeleton has no bones");
  config_.pin.bone_count = skeleton_.bone_count();
  if (config_.temperature <= 0) throw UsageError("temperature must be positive");
  if (config_.broyden.candidates == 0) throw UsageError("candidate count must be positive");
  if (config_.broyden.bone_boxes.empty()) {
    for (std::size_t i = 0; i < skeleton_.bone_count(); ++i)
      config_.broyden.bone_boxes.push_back(skeleton_.bone_box(i));
  }
}

void InsModel::initialize() {
  nn::Rng rng(config_.seed);
  h_d_.initialize(rng);
  h_c_.initialize(rng);
  w_.initialize(rng);
  o_.initialize(rng);
}

std::vector<nn::ParamBlock*> InsModel::all_params() {
  std::vector<nn::ParamBlock*> out;
  for (auto* list : {&h_d_, &h_c_}) {
    auto p = list->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  auto pw = w_.params();
  out.insert(out.end(), pw.begin(), pw.end());
  auto po = o_.params();
  out.insert(out.end(), po.begin(), po.end());
  return out;
}

std::vector<nn::ParamBlock*> InsModel::trainable_pin_params() {
  std::vector<nn::ParamBlock*> out;
  if (config_.ablation.deformed_pin) {
    auto p = h_d_.params();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (config_.ablation.canonical_pin) {
    auto p = h_c_.params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<nn::ParamBlock*> InsModel::trainable_other_params() {
  std::vector<nn::ParamBlock*> out;
  if (config_.ablation.lbs) out = w_.params();
  auto po = o_.params();
  out.insert(out.end(), po.begin(), po.end());
  return out;
}

std::vector<PointCorrespondence> InsModel::deformed_to_canonical(const Matrix& points,
                                                                 const Pose& pose) const {
  if (points.rows() != 3) throw UsageError("points must be 3 x N");
  if (pose.bone_count() != bone_count()) throw UsageError("pose bone count mismatch");
  const auto n = static_cast<std::size_t>(points.cols());
  std::vector<PointCorrespondence> out(n);
  const Matrix qd = config_.ablation.deformed_pin ? h_d_.forward(points, pose) : points;

  // Flatten candidates, then one batched H_c and occupancy pass.
  std::vector<std::size_t> owner;
  std::vector<CandidateOutput> flat;
  if (config_.ablation.lbs) {
    const auto corr = skinning::broyden_solve(w_, pose, qd, config_.broyden);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& c : corr[i].candidates) {
        CandidateOutput o;
        o.canonical_pre = c.point;
        o.converged = c.converged;
        o.residual = c.residual;
        flat.push_back(o);
        owner.push_back(i);
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      CandidateOutput o;
      o.canonical_pre = qd.col(static_cast<Eigen::Index>(i));
      o.converged = true;
      flat.push_back(o);
      owner.push_back(i);
    }
  }
  Matrix qc(3, static_cast<Eigen::Index>(flat.size()));
  for (std::size_t k = 0; k < flat.size(); ++k) qc.col(static_cast<Eigen::Index>(k)) = flat[k].canonical_pre;
  const Matrix pc = config_.ablation.canonical_pin ? h_c_.forward(qc, pose) : qc;
  const RowVector logits = flat.empty() ? RowVector() : o_.logits(pc);
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    flat[k].canonical = pc.col(col);
    flat[k].logit = logits(col);
    flat[k].occupancy = nn::sigmoid(logits(col));
  }
  for (std::size_t i = 0; i < n; ++i) out[i].deformed_pre = qd.col(static_cast<Eigen::Index>(i));
  for (std::size_t k = 0; k < flat.size(); ++k) out[owner[k]].candidates.push_back(flat[k]);
  return out;
}

PointCorrespondence InsModel::deformed_to_canonical(const Point3& p, const Pose& pose) const {
  Matrix m = p;
  return deformed_to_canonical(m, pose).front();
}

RowVector InsModel::predict_occupancy(const Matrix& points, const Pose& pose,
                                      std::size_t* unconverged) const {
  RowVector out = RowVector::Zero(points.cols());
  std::atomic<std::size_t> missing{0};
  // Chunked so the per-candidate bookkeeping stays bounded.
  const std::size_t n = static_cast<std::size_t>(points.cols());
  parallel_for(n, 2048, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; b += 4096) {
      const std::size_t e = std::min(end, b + 4096);
      const auto corr = deformed_to_canonical(
          Matrix(points.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b))), pose);
      for (std::size_t i = 0; i < corr.size(); ++i) {
        Real best = -std::numeric_limits<Real>::infinity();
        bool any = false;
        for (const auto& c : corr[i].candidates) {
          if (c.converged && c.logit > best) {
            best = c.logit;
            any = true;
          }
        }
        out(static_cast<Eigen::Index>(b + i)) = any ? nn::sigmoid(best) : 0;
        if (!any) missing.fetch_add(1, std::memory_order_relaxed);
      }
    }
  });
  if (unconverged) *unconverged += missing.load();
  return out;
}

Matrix InsModel::repose_points(const Matrix& canonical, const Pose& pose) const {
  if (canonical.rows() != 3) throw UsageError("points must be 3 x N");
  if (pose.bone_count() != bone_count()) throw UsageError("pose bone count mismatch");
  Matrix out(3, canonical.cols());
  parallel_for(static_cast<std::size_t>(canonical.cols()), 1024,
               [&](std::size_t begin, std::size_t end) {
                 const auto b = static_cast<Eigen::Index>(begin);
                 const auto len = static_cast<Eigen::Index>(end - begin);
                 Matrix x = canonical.middleCols(b, len);
                 if (config_.ablation.canonical_pin) x = h_c_.inverse(x, pose);
                 if (config_.ablation.lbs) x = skinning::lbs_forward(w_, x, pose);
                 if (config_.ablation.deformed_pin) x = h_d_.inverse(x, pose);
                 out.middleCols(b, len) = x;
               });
  return out;
}

TriMesh InsModel::repose(const TriMesh& canonical, const Pose& pose) const {
  Matrix v(3, static_cast<Eigen::Index>(canonical.vertices.size()));
  for (std::size_t i = 0; i < canonical.vertices.size(); ++i)
    v.col(static_cast<Eigen::Index>(i)) = canonical.vertices[i];
  const Matrix moved = repose_points(v, pose);
  TriMesh out;
  out.triangles = canonical.triangles;
  out.vertices.resize(canonical.vertices.size());
  for (std::size_t i = 0; i < out.vertices.size(); ++i)
    out.vertices[i] = moved.col(static_cast<Eigen::Index>(i));
  return out;
}

SoftSelection select_soft(std::span<const Real> scores, std::span<const Real> values,
                          Real temperature) {
  if (scores.empty()) throw UsageError("select_soft needs at least one candidate");
  if (scores.size() != values.size()) throw UsageError("select_soft size mismatch");
  if (!(temperature > 0)) throw UsageError("temperature must be positive");
  std::vector<Real> scaled(scores.begin(), scores.end());
  for (auto& s : scaled) s /= temperature;
  SoftSelection out;
  out.weights = nn::softmax(scaled);
  for (std::size_t i = 0; i < values.size(); ++i) out.value += out.weights[i] * values[i];
  return out;
}

SoftSelection select_soft(std::span<const Real> scores, Real temperature) {
  return select_soft(scores, scores, temperature);
}

std::size_t select_hard(std::span<const Real> scores) {
  if (scores.empty()) throw UsageError("select_hard needs at least one candidate");
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

Real loss_bce(Real logit, std::uint8_t target) {
  // -y log σ(l) - (1-y) log(1-σ(l)) = log(1+e^l) - y l
  return nn::log1p_exp(logit) - (target ? logit : 0);
}

Real loss_bce_gradient(Real logit, std::uint8_t target) {
  return nn::sigmoid(logit) - (target ? 1 : 0);
}

AuxiliaryBatch make_auxiliary_batch(const Skeleton& skeleton, std::size_t bone_points,
                                    nn::Rng& rng) {
  AuxiliaryBatch aux;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t nb = skeleton.bone_count();
  aux.bone_points.resize(3, static_cast<Eigen::Index>(bone_points));
  for (std::size_t k = 0; k < bone_points; ++k) {
    const auto& s = skeleton.segments[k % nb];
    const Real t = static_cast<Real>(u(rng));
    aux.bone_points.col(static_cast<Eigen::Index>(k)) = s.head + t * (s.tail - s.head);
  }
  aux.joint_points.resize(3, static_cast<Eigen::Index>(skeleton.joints.size()));
  for (std::size_t j = 0; j < skeleton.joints.size(); ++j) {
    aux.joint_points.col(static_cast<Eigen::Index>(j)) = skeleton.joints[j].position;
    aux.joint_bones.emplace_back(skeleton.joints[j].bone_a, skeleton.joints[j].bone_b);
  }
  return aux;
}

namespace {

struct FrameLoss {
  Real loss = 0;
  std::size_t used = 0;
  std::size_t skipped = 0;
  std::size_t singular = 0;
  std::size_t candidates = 0;
  std::size_t iterations = 0;
};

FrameLoss frame_loss(InsModel& model, const FrameBatch& frame, Real frame_scale,
                     bool with_gradients) {
  const auto& cfg = model.config();
  const auto& ab = cfg.ablation;
  if (frame.points.rows() != 3 ||
      static_cast<std::size_t>(frame.points.cols()) != frame.labels.size())
    throw UsageError("frame batch points and labels disagree");
  const std::size_t n = frame.labels.size();
  FrameLoss out;
  if (n == 0) return out;

  pin::Pin::Tape tape_d;
  const Matrix qd = ab.deformed_pin ? model.deformed_pin().forward(frame.points, frame.pose, tape_d)
                                    : frame.points;

  // Converged candidates only; owner maps them back to their point.
  std::vector<std::size_t> owner;
  std::vector<Point3> roots;
  if (ab.lbs) {
    const auto corr = skinning::broyden_solve(model.weight_field(), frame.pose, qd, cfg.broyden);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& c : corr[i].candidates) {
        out.iterations += c.iterations;
        ++out.candidates;
        if (!c.converged) continue;
        roots.push_back(c.point);
        owner.push_back(i);
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      roots.push_back(qd.col(static_cast<Eigen::Index>(i)));
      owner.push_back(i);
    }
    out.candidates = n;
  }
  const auto m = static_cast<Eigen::Index>(roots.size());
  Matrix qc(3, m);
  for (Eigen::Index k = 0; k < m; ++k) qc.col(k) = roots[static_cast<std::size_t>(k)];

  pin::Pin::Tape tape_c;
  const Matrix pc = ab.canonical_pin ? model.canonical_pin().forward(qc, frame.pose, tape_c) : qc;
  nn::DenseTape tape_o;
  const RowVector logits = m > 0 ? model.occupancy().forward(pc, tape_o) : RowVector();

  // Group candidates per point (owner is non-decreasing).
  std::vector<std::size_t> start(n + 1, 0);
  for (std::size_t k = 0; k < owner.size(); ++k) ++start[owner[k] + 1];
  for (std::size_t i = 0; i < n; ++i) start[i + 1] += start[i];
  for (std::size_t i = 0; i < n; ++i) (start[i + 1] > start[i] ? out.used : out.skipped) += 1;
  if (out.used == 0) return out;

  const Real point_scale = frame_scale / static_cast<Real>(out.used);
  RowVector dlogits = RowVector::Zero(m);
  const bool occ_space = cfg.selection == SelectionSpace::kOccupancy;
  const Real t = cfg.temperature;
  std::vector<Real> scores, values;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = start[i], e = start[i + 1];
    if (b == e) continue;
    scores.clear();
    values.clear();
    for (std::size_t k = b; k < e; ++k) {
      const Real l = logits(static_cast<Eigen::Index>(k));
      values.push_back(l);
      scores.push_back(occ_space ? nn::sigmoid(l) : l);
    }
    const auto sel = select_soft(scores, values, t);
    const Real blended = sel.value;
    out.loss += point_scale * loss_bce(blended, frame.labels[i]);
    if (!with_gradients) continue;
    const Real dblend = point_scale * loss_bce_gradient(blended, frame.labels[i]);
    for (std::size_t k = b; k < e; ++k) {
      const Real a = sel.weights[k - b];
      const Real l = values[k - b];
      const Real s = scores[k - b];
      const Real dscore = occ_space ? s * (1 - s) : 1;
      dlogits(static_cast<Eigen::Index>(k)) = dblend * (a + a * (l - blended) * dscore / t);
    }
  }
  if (!with_gradients) return out;

  const Matrix dpc = model.occupancy().backward(tape_o, dlogits);
  const Matrix dqc = ab.canonical_pin ? model.canonical_pin().backward(tape_c, dpc) : dpc;
  Matrix dqd = Matrix::Zero(3, static_cast<Eigen::Index>(n));
  if (ab.lbs) {
    const auto ib = skinning::implicit_backward(model.weight_field(), frame.pose, qc, dqc);
    out.singular = ib.skipped_count;
    for (std::size_t k = 0; k < owner.size(); ++k)
      dqd.col(static_cast<Eigen::Index>(owner[k])) += ib.deformed_grad.col(static_cast<Eigen::Index>(k));
  } else {
    for (std::size_t k = 0; k < owner.size(); ++k)
      dqd.col(static_cast<Eigen::Index>(owner[k])) += dqc.col(static_cast<Eigen::Index>(k));
  }
  if (ab.deformed_pin) model.deformed_pin().backward(tape_d, dqd);
  return out;
}

Real auxiliary_loss(InsModel& model, const AuxiliaryBatch& aux, bool with_gradients) {
  Real loss = 0;
  const auto nbp = aux.bone_points.cols();
  if (nbp > 0) {
    nn::DenseTape tape;
    const RowVector l = model.occupancy().forward(aux.bone_points, tape);
    RowVector dl(nbp);
    for (Eigen::Index k = 0; k < nbp; ++k) {
      loss += loss_bce(l(k), 1) / static_cast<Real>(nbp);
      dl(k) = loss_bce_gradient(l(k), 1) / static_cast<Real>(nbp);
    }
    if (with_gradients) model.occupancy().backward(tape, dl);
  }
  const auto nj = aux.joint_points.cols();
  if (nj > 0 && model.config().ablation.lbs) {
    nn::DenseTape tape;
    const Matrix w = model.weight_field().forward(aux.joint_points, tape);
    Matrix dw = Matrix::Zero(w.rows(), w.cols());
    const Real scale = 1 / static_cast<Real>(nj);
    for (Eigen::Index j = 0; j < nj; ++j) {
      const auto [a, b] = aux.joint_bones[static_cast<std::size_t>(j)];
      for (const auto bone : {a, b}) {
        const auto r = static_cast<Eigen::Index>(bone);
        const Real diff = w(r, j) - static_cast<Real>(0.5);
        loss += scale * diff * diff;
        dw(r, j) += 2 * scale * diff;
      }
    }
    if (with_gradients) model.weight_field().backward(tape, w, dw);
  }
  return loss;
}

}  // namespace

LossReport compute_loss(InsModel& model, const TrainBatch& batch, const AuxiliaryBatch* aux,
                        bool with_gradients) {
  if (batch.frames.empty()) throw UsageError("training batch has no frames");
  LossReport report;
  const Real frame_scale = 1 / static_cast<Real>(batch.frames.size());
  for (const auto& frame : batch.frames) {
    const auto f = frame_loss(model, frame, frame_scale, with_gradients);
    report.bce += f.loss;
    report.points_used += f.used;
    report.points_skipped += f.skipped;
    report.singular_skipped += f.singular;
    report.candidates += f.candidates;
    report.broyden_iterations += f.iterations;
  }
  if (aux != nullptr) report.auxiliary = auxiliary_loss(model, *aux, with_gradients);
  report.loss = report.bce + report.auxiliary;
  if (!std::isfinite(report.loss)) throw NumericalError("training loss is not finite");
  return report;
}

GradientCheckReport gradient_check(InsModel& model, const TrainBatch& batch,
                                   const AuxiliaryBatch* aux, Real epsilon,
                                   std::size_t max_per_block, Real denominator_floor) {
  auto blocks = model.trainable_pin_params();
  const auto other = model.trainable_other_params();
  blocks.insert(blocks.end(), other.begin(), other.end());
  for (auto* b : model.all_params()) b->zero_grad();
  compute_loss(model, batch, aux, true);

  GradientCheckReport report;
  for (auto* b : blocks) {
    std::vector<std::size_t> indices;
    if (max_per_block == 0 || b->size() <= max_per_block) {
      indices.resize(b->size());
      std::iota(indices.begin(), indices.end(), 0);
    } else {
      for (std::size_t k = 0; k < max_per_block; ++k) indices.push_back(k * b->size() / max_per_block);
    }
    for (const auto idx : indices) {
      const Real saved = b->values[idx];
      b->values[idx] = saved + epsilon;
      const Real up = compute_loss(model, batch, aux, false).loss;
      b->values[idx] = saved - epsilon;
      const Real down = compute_loss(model, batch, aux, false).loss;
      b->values[idx] = saved;
      GradientCheckEntry e;
      e.block = b->name;
      e.index = idx;
      e.analytic = b->grads[idx];
      e.numeric = (up - down) / (2 * epsilon);
      e.relative_error = std::abs(e.analytic - e.numeric) /
                         (std::max(std::abs(e.analytic), std::abs(e.numeric)) + denominator_floor);
      if (e.relative_error > report.max_relative_error || report.worst_block.empty()) {
        report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
        report.worst_block = e.block;
      }
      report.entries.push_back(std::move(e));
    }
  }
  report.checked = report.entries.size();
  for (auto* b : model.all_params()) b->zero_grad();
  return report;
}

namespace {

std::vector<nn::ParamGroup> make_groups(InsModel& model, const TrainerConfig& cfg) {
  std::vector<nn::ParamGroup> groups;
  auto pins = model.trainable_pin_params();
  if (!pins.empty()) groups.push_back({std::move(pins), cfg.pin_learning_rate});
  groups.push_back({model.trainable_other_params(), cfg.learning_rate});
  return groups;
}

nn::AdamOptions adam_options(const TrainerConfig& cfg) {
  nn::AdamOptions o;
  o.clip_norm = cfg.clip_norm;
  return o;
}

}  // namespace

Trainer::Trainer(InsModel& model, TrainerConfig config)
    : model_(model),
      config_(config),
      optimizer_(make_groups(model, config), adam_options(config)),
      rng_(config.seed) {
  if (config_.frames_per_batch == 0 || config_.points_per_frame == 0)
    throw UsageError("frames_per_batch and points_per_frame must be positive");
}

void Trainer::set_progress(std::size_t epoch, std::uint64_t step) {
  epoch_ = epoch;
  step_ = step;
}

LossReport Trainer::train_step(const TrainBatch& batch, const AuxiliaryBatch* aux) {
  for (auto* b : model_.all_params()) b->zero_grad();
  const auto report = compute_loss(model_, batch, aux, true);
  optimizer_.step(nn::warmup_factor(step_, config_.warmup_iterations, config_.warmup_start_factor));
  ++step_;
  return report;
}

EpochMetrics Trainer::train_epoch(const std::vector<data::FrameSampleSet>& frames) {
  if (frames.empty()) throw UsageError("no training frames");
  EpochMetrics metrics;
  metrics.auxiliary_active = auxiliary_active();
  const std::size_t groups = (frames.size() + config_.frames_per_batch - 1) / config_.frames_per_batch;
  const std::size_t steps = config_.steps_per_epoch > 0 ? config_.steps_per_epoch : groups;

  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  Real loss_sum = 0;
  std::size_t iterations = 0, candidates = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    TrainBatch batch;
    for (std::size_t f = 0; f < std::min(config_.frames_per_batch, frames.size()); ++f) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng_);
        cursor = 0;
      }
      const auto& src = frames[order[cursor++]];
      const std::size_t pool = src.surface.size() + src.uniform.size();
      if (pool == 0) throw DataError("training frame has no samples");
      FrameBatch fb{src.pose, Matrix(3, static_cast<Eigen::Index>(config_.points_per_frame)), {}};
      std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
      for (std::size_t k = 0; k < config_.points_per_frame; ++k) {
        const std::size_t idx = pick(rng_);
        const auto& smp = idx < src.surface.size() ? src.surface[idx]
                                                   : src.uniform[idx - src.surface.size()];
        fb.points.col(static_cast<Eigen::Index>(k)) = smp.point;
        fb.labels.push_back(smp.occupancy);
      }
      batch.frames.push_back(std::move(fb));
    }
    AuxiliaryBatch aux;
    if (metrics.auxiliary_active) aux = make_auxiliary_batch(model_.skeleton(), config_.auxiliary_bone_points, rng_);
    const auto r = train_step(batch, metrics.auxiliary_active ? &aux : nullptr);
    loss_sum += r.loss;
    metrics.skipped_points += r.points_skipped;
    iterations += r.broyden_iterations;
    candidates += r.candidates;
  }
  ++epoch_;
  metrics.epoch = epoch_;
  metrics.steps = steps;
  metrics.mean_loss = loss_sum / static_cast<Real>(steps);
  metrics.mean_broyden_iterations =
      candidates > 0 ? static_cast<Real>(iterations) / static_cast<Real>(candidates) : 0;
  return metrics;
}

}  // namespace ins
