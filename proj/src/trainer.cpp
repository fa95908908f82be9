#include "srkd/trainer.hpp"

#include "srkd/numerics.hpp"
#include "srkd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace srkd {

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::Config, "train: epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::Config, "train: batch size must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorKind::Config, "train: learning rate must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw Error(ErrorKind::Config, "train: warmup fraction must be in (0, 1)");
  loss.validate();
  grid.validate();
  sampler.validate();
}

Dataset make_dataset(const std::vector<PointCloud>& clouds, std::size_t n_fixed, std::size_t knn, std::uint64_t seed) {
  if (clouds.empty()) throw Error(ErrorKind::Data, "dataset is empty");
  const MiniBatch all = assemble_batch(clouds, n_fixed, seed);
  Dataset d;
  d.n_classes = clouds.front().n_classes;
  d.samples = all.samples;
  d.graphs.reserve(d.samples.size());
  for (const auto& s : d.samples) d.graphs.push_back(knn_graph(s.cloud.positions, s.validity, knn));
  return d;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset d;
  d.n_classes = data.n_classes;
  for (auto i : indices) {
    if (i >= data.size()) throw Error(ErrorKind::Data, "subset index out of range");
    d.samples.push_back(data.samples[i]);
    d.graphs.push_back(data.graphs[i]);
  }
  return d;
}

LossSelection LossSelection::from_weights(const LossWeights& w) {
  return {w.lambda_kd != 0.0, w.lambda_p != 0.0, w.lambda_v != 0.0, w.lambda_c != 0.0, w.lambda_batch_gd != 0.0};
}

LossSelection LossSelection::all() { return {true, true, true, true, true}; }

namespace {

std::size_t labeled_count(const FixedSample& s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) n += (s.validity[i] && s.cloud.labels[i] != kIgnoreLabel) ? 1 : 0;
  return n;
}

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, std::string("non-finite loss term ") + term);
}

ad::Var weighted_add(const ad::Var& acc, const ad::Var& term, double weight) {
  return ad::add(acc, ad::scale(term, weight));
}

}  // namespace

BatchLosses record_batch_losses(ad::Tape& tape, const BoundModel& student, const SegModel& student_model,
                                const SegModel* teacher, const Dataset& data, std::span<const std::size_t> batch,
                                const TrainConfig& cfg, std::uint64_t batch_seed, const LossSelection& sel) {
  if (batch.empty()) throw Error(ErrorKind::Data, "empty mini-batch");
  if (sel.any() && teacher == nullptr)
    throw Error(ErrorKind::MissingTeacher, "distillation terms requested without a teacher; run train-teacher first");
  const bool need_amra = sel.amra_p || sel.amra_v || sel.amra_c;
  if (sel.amra_c && !student.proj_weight) throw Error(ErrorKind::Config, "channel distillation needs a projection");
  const EncoderSpec& spec = student_model.encoder.spec;
  const std::size_t b_count = batch.size();

  std::vector<ad::Var> fs(b_count), zs(b_count);
  std::vector<Matrix> ft(b_count), zt(b_count);
  std::vector<Mask> masks(b_count);
  std::size_t labeled_total = 0, valid_total = 0;
  for (std::size_t b = 0; b < b_count; ++b) {
    const FixedSample& sample = data.samples[batch[b]];
    const NeighborGraph& graph = data.graphs[batch[b]];
    masks[b] = sample.validity;
    const ad::Var x = tape.constant(encoder_input(sample, spec));
    fs[b] = encoder_forward(student, spec, x, graph, sample.validity);
    zs[b] = head_forward(student.head_weight, student.head_bias, fs[b]);
    if (teacher != nullptr && sel.any()) {
      ft[b] = encoder_forward(*teacher, sample, graph);
      zt[b] = head_forward(teacher->head, ft[b]);
    }
    labeled_total += labeled_count(sample);
    valid_total += sample.n_valid();
  }
  if (labeled_total == 0) throw Error(ErrorKind::UndefinedLoss, "loss_task: no labeled points in the batch");

  BatchLosses out;
  for (std::size_t b = 0; b < b_count; ++b) {
    const FixedSample& sample = data.samples[batch[b]];
    const std::size_t n_b = labeled_count(sample);
    if (n_b == 0) continue;
    const ad::Var term = ad::scale(loss_task(zs[b], sample.cloud.labels, sample.validity),
                                   static_cast<double>(n_b) / static_cast<double>(labeled_total));
    out.task = out.task.tape == nullptr ? term : ad::add(out.task, term);
  }

  if (sel.kd) {
    for (std::size_t b = 0; b < b_count; ++b) {
      const ad::Var term = ad::scale(loss_kd(zs[b], zt[b], cfg.loss.t_logit, masks[b]),
                                     static_cast<double>(count_valid(masks[b])) / static_cast<double>(valid_total));
      out.kd = b == 0 ? term : ad::add(out.kd, term);
    }
  }

  if (need_amra) {
    std::vector<std::size_t> hist(data.n_classes, 0);
    for (auto i : batch) {
      const auto h = class_histogram(data.samples[i].cloud);
      for (std::size_t c = 0; c < hist.size() && c < h.size(); ++c) hist[c] += h[c];
    }
    std::vector<SupervoxelView> s_views, t_views, p_views;
    for (std::size_t b = 0; b < b_count; ++b) {
      const FixedSample& sample = data.samples[batch[b]];
      const auto candidates = build_supervoxels(sample, cfg.grid, cfg.sampler, hist, derive_seed(batch_seed, {b, 0}));
      const auto chosen = sample_supervoxels(candidates, cfg.sampler.k, derive_seed(batch_seed, {b, 1}));
      const ad::Var teacher_map = tape.constant(ft[b]);
      std::optional<ad::Var> projected;
      if (sel.amra_c) projected = project_channels(*student.proj_weight, *student.proj_bias, fs[b]);
      for (const auto& sv : chosen) {
        s_views.push_back(make_view(fs[b], sv));
        t_views.push_back(make_view(teacher_map, sv));
        if (projected) p_views.push_back(make_view(*projected, sv));
      }
    }
    if (sel.amra_p) out.amra_p = loss_amra_point(s_views, t_views);
    if (sel.amra_v) out.amra_v = loss_amra_voxel(s_views, t_views);
    if (sel.amra_c) out.amra_c = loss_amra_channel(p_views, t_views);
  }

  if (sel.batch_gd) out.batch_gd = loss_batch_gd(fs, ft, masks, cfg.loss.t_gd);

  LossReport& r = out.report;
  r.l_task = out.task.scalar();
  require_finite(r.l_task, "l_task");
  ad::Var total = out.task;
  const LossWeights& w = cfg.loss;
  auto fold = [&](bool on, const ad::Var& v, double lambda, double& slot, const char* name) {
    if (!on) return;
    slot = v.scalar();
    require_finite(slot, name);
    total = weighted_add(total, v, lambda);
  };
  fold(sel.kd, out.kd, w.lambda_kd, r.l_kd, "l_kd");
  fold(sel.amra_p, out.amra_p, w.lambda_p, r.l_amra_p, "l_amra_p");
  fold(sel.amra_v, out.amra_v, w.lambda_v, r.l_amra_v, "l_amra_v");
  fold(sel.amra_c, out.amra_c, w.lambda_c, r.l_amra_c, "l_amra_c");
  fold(sel.batch_gd, out.batch_gd, w.lambda_batch_gd, r.l_batch_gd, "l_batch_gd");
  out.total = total;
  r = loss_total(r, w);
  require_finite(r.l_total, "l_total");
  return out;
}

std::string TrainLog::steps_jsonl() const {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::ordered_json j;
    j["epoch"] = s.epoch;
    j["step"] = s.step;
    j["l_task"] = s.losses.l_task;
    j["l_kd"] = s.losses.l_kd;
    j["l_amra_p"] = s.losses.l_amra_p;
    j["l_amra_v"] = s.losses.l_amra_v;
    j["l_amra_c"] = s.losses.l_amra_c;
    j["l_batch_gd"] = s.losses.l_batch_gd;
    j["l_total"] = s.losses.l_total;
    j["lr"] = s.lr;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string TrainLog::epochs_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["mIoU"] = e.val.miou;
    j["mAcc"] = e.val.macc;
    j["allAcc"] = e.val.allacc;
    out += j.dump();
    out += '\n';
  }
  return out;
}

TrainResult train_distill(const TrainConfig& cfg, const SegModel* teacher, SegModel student, const Dataset& train,
                          const Dataset* val) {
  cfg.validate();
  if (train.size() == 0) throw Error(ErrorKind::Data, "training set is empty");
  const LossSelection sel = LossSelection::from_weights(cfg.loss);
  if (sel.any() && teacher == nullptr)
    throw Error(ErrorKind::MissingTeacher, "distillation requires a trained teacher; run train-teacher first");
  if (teacher != nullptr && teacher->n_classes() != student.n_classes())
    throw Error(ErrorKind::Shape, "teacher and student class counts differ");

  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  OneCycleSchedule schedule{cfg.lr, cfg.epochs * steps_per_epoch, cfg.warmup_fraction, cfg.div_factor,
                            cfg.final_div_factor};
  schedule.validate();
  AdamW optimizer(cfg.adamw, named_parameters(student));

  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, {0x5D0FF1Eull, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
      const std::size_t lo = step * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      const std::span<const std::size_t> batch(order.data() + lo, hi - lo);

      ad::Tape tape;
      const BoundModel bound = bind_model(tape, student, true);
      const BatchLosses losses = record_batch_losses(tape, bound, student, teacher, train, batch, cfg,
                                                     derive_seed(cfg.seed, {0xBA7C4ull, epoch, step}), sel);
      tape.backward(losses.total);
      const double lr = schedule.lr(global_step);
      optimizer.step(tape.parameter_gradients(), lr);
      result.log.steps.push_back({epoch, global_step, losses.report, lr});
    }
    if (val != nullptr && (cfg.validate_each_epoch || epoch + 1 == cfg.epochs))
      result.log.epochs.push_back({epoch, evaluate(student, *val)});
  }
  if (val != nullptr) result.final_val = result.log.epochs.back().val;
  result.model = std::move(student);
  return result;
}

TrainResult train_supervised(const TrainConfig& cfg, SegModel model, const Dataset& train, const Dataset* val) {
  TrainConfig plain = cfg;
  plain.loss.lambda_kd = plain.loss.lambda_p = plain.loss.lambda_v = plain.loss.lambda_c = plain.loss.lambda_batch_gd = 0.0;
  return train_distill(plain, nullptr, std::move(model), train, val);
}

Matrix predict_logits(const SegModel& model, const FixedSample& sample, const NeighborGraph& graph) {
  return head_forward(model.head, encoder_forward(model, sample, graph));
}

Metrics evaluate(const SegModel& model, const Dataset& data) {
  Confusion confusion = make_confusion(data.n_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto pred = argmax_rows(predict_logits(model, data.samples[i], data.graphs[i]));
    accumulate(confusion, pred, data.samples[i].cloud.labels, data.samples[i].validity);
  }
  return compute_metrics(confusion);
}

void NoiseConfig::validate() const {
  if (taus.empty()) throw Error(ErrorKind::Config, "noise: tau list is empty");
  for (double t : taus)
    if (!(t >= 0.0) || !std::isfinite(t)) throw Error(ErrorKind::Config, "noise: tau must be finite and >= 0");
  if (trials < 1) throw Error(ErrorKind::Config, "noise: trials must be >= 1");
}

Metrics evaluate_with_noise(const SegModel& model, const Dataset& data, double tau, std::uint64_t seed) {
  if (tau == 0.0) return evaluate(model, data);
  const double stddev = std::sqrt(tau);
  Confusion confusion = make_confusion(data.n_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const FixedSample& sample = data.samples[i];
    Matrix features = encoder_forward(model, sample, data.graphs[i]);
    Rng rng(derive_seed(seed, {i}));
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
      if (!sample.validity[static_cast<std::size_t>(r)]) continue;
      const double norm = features.row(r).norm();
      RowVector dir = features.row(r) / std::max(norm, kNormFloor);
      for (Eigen::Index k = 0; k < dir.size(); ++k) dir[k] += stddev * rng.normal();
      features.row(r) = dir * norm;
    }
    const auto pred = argmax_rows(head_forward(model.head, features));
    accumulate(confusion, pred, sample.cloud.labels, sample.validity);
  }
  return compute_metrics(confusion);
}

std::vector<NoiseRow> noise_sweep(const SegModel& model, const Dataset& data, const NoiseConfig& cfg) {
  cfg.validate();
  std::vector<NoiseRow> rows;
  for (double tau : cfg.taus) {
    NoiseRow row;
    row.tau = tau;
    // The same noise draws are reused across tau levels, only rescaled.
    for (std::size_t t = 0; t < cfg.trials; ++t)
      row.trial_miou.push_back(evaluate_with_noise(model, data, tau, derive_seed(cfg.seed, {t})).miou);
    row.mean_miou = std::accumulate(row.trial_miou.begin(), row.trial_miou.end(), 0.0) /
                    static_cast<double>(row.trial_miou.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace srkd
