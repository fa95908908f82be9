#pragma once

#include "srkd/autodiff.hpp"
#include "srkd/core.hpp"
#include "srkd/losses.hpp"
#include "srkd/metrics.hpp"
#include "srkd/models.hpp"
#include "srkd/optim.hpp"
#include "srkd/voxelizer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace srkd {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 8;
  double lr = 0.006;
  double warmup_fraction = 0.05;
  double div_factor = 10.0;
  double final_div_factor = 1000.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  LossWeights loss;
  CylGrid grid;
  SamplerConfig sampler;
  bool validate_each_epoch = true;

  void validate() const;
};

// Fixed-size samples with their precomputed neighbor graphs.
struct Dataset {
  std::vector<FixedSample> samples;
  std::vector<NeighborGraph> graphs;
  std::size_t n_classes = 0;

  std::size_t size() const noexcept { return samples.size(); }
};

Dataset make_dataset(const std::vector<PointCloud>& clouds, std::size_t n_fixed, std::size_t knn, std::uint64_t seed);
Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

// Which distillation terms to evaluate; the task loss is always evaluated.
struct LossSelection {
  bool kd = false;
  bool amra_p = false;
  bool amra_v = false;
  bool amra_c = false;
  bool batch_gd = false;

  static LossSelection from_weights(const LossWeights& w);
  static LossSelection all();
  bool any() const { return kd || amra_p || amra_v || amra_c || batch_gd; }
};

// Recorded loss terms for one mini-batch. Terms that were not selected hold an
// invalid Var and report 0.
struct BatchLosses {
  ad::Var task, kd, amra_p, amra_v, amra_c, batch_gd, total;
  LossReport report;
};

// Teacher forward (constants), student forward (recorded), shared supervoxel
// layouts, then every selected loss term and the weighted total.
BatchLosses record_batch_losses(ad::Tape& tape, const BoundModel& student, const SegModel& student_model,
                                const SegModel* teacher, const Dataset& data, std::span<const std::size_t> batch,
                                const TrainConfig& cfg, std::uint64_t batch_seed, const LossSelection& selection);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossReport losses;
  double lr = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  Metrics val;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  // One JSON object per step: epoch, step, the seven loss fields and lr.
  std::string steps_jsonl() const;
  std::string epochs_jsonl() const;
};

struct TrainResult {
  SegModel model;
  TrainLog log;
  std::optional<Metrics> final_val;
};

// Distills the frozen teacher into the student. With every lambda at zero the
// teacher is not consulted and this is plain cross-entropy training.
TrainResult train_distill(const TrainConfig& cfg, const SegModel* teacher, SegModel student, const Dataset& train,
                          const Dataset* val);

// Cross-entropy-only training of a freshly initialized model.
TrainResult train_supervised(const TrainConfig& cfg, SegModel model, const Dataset& train, const Dataset* val);

Matrix predict_logits(const SegModel& model, const FixedSample& sample, const NeighborGraph& graph);
Metrics evaluate(const SegModel& model, const Dataset& data);

// Noise is added to the row-normalized features and the row norm restored
// before the head; tau = 0 takes the unperturbed path.
struct NoiseConfig {
  std::vector<double> taus{0.01, 0.05, 0.1, 0.5, 0.7, 1.0};
  std::size_t trials = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NoiseRow {
  double tau = 0.0;
  double mean_miou = 0.0;
  std::vector<double> trial_miou;
};

Metrics evaluate_with_noise(const SegModel& model, const Dataset& data, double tau, std::uint64_t seed);
std::vector<NoiseRow> noise_sweep(const SegModel& model, const Dataset& data, const NoiseConfig& cfg);

}  // namespace srkd
