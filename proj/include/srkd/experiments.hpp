#pragma once

#include "srkd/trainer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace srkd {

struct ExperimentConfig {
  SceneSpec scenes;
  std::size_t n_train = 64;
  std::size_t n_val = 16;
  std::size_t n_fixed = 1024;
  EncoderSpec teacher_encoder{{6, 64, 128, 128}};
  TrainConfig teacher_train;
  TrainConfig student_train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t jobs = 1;

  void validate() const;
};

struct Benchmark {
  Dataset train;
  Dataset val;
};

// Scenes [0, n_train) form the training split and [n_train, n_train + n_val)
// the validation split, all drawn from cfg.scenes.
Benchmark make_benchmark(const ExperimentConfig& cfg);

// Cross-entropy training of a teacher with cfg.teacher_encoder.
SegModel train_teacher(const ExperimentConfig& cfg, const Benchmark& bench);

// Student for one paired seed: initialized from the teacher's layout, trained
// with cfg.student_train under the given loss weights.
TrainResult train_student(const ExperimentConfig& cfg, const SegModel& teacher, const Dataset& train, const Dataset& val,
                          const LossWeights& weights, std::uint64_t seed, std::size_t batch_size = 0);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results must be written
// to per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct SweepRow {
  std::string key;    // variant name, fraction, batch size or dim
  std::vector<std::uint64_t> seeds;
  std::vector<Metrics> runs;
  std::vector<SegModel> models;
  double miou = 0.0, macc = 0.0, allacc = 0.0;  // means over runs
  double miou_min = 0.0, miou_max = 0.0;
  double teacher_miou = 0.0;  // dim sweep only
};

void summarize(SweepRow& row);

struct Variant {
  std::string name;
  LossWeights weights;
};

// Baseline, +L_kd, +L_kd+CSMBGD and the full objective, in that order; each
// zeroes a subset of base's lambdas.
std::vector<Variant> ablation_variants(const LossWeights& base);

std::vector<SweepRow> ablate(const ExperimentConfig& cfg, const SegModel& teacher, const Benchmark& bench,
                             const std::vector<Variant>& variants);

// Seeded subset of floor(fraction * n) training scenes; fraction 1 keeps the
// full split in its original order.
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed);

std::vector<SweepRow> subsample_sweep(const ExperimentConfig& cfg, const SegModel& teacher, const Benchmark& bench,
                                      const std::vector<double>& fractions);

std::vector<SweepRow> batch_sensitivity(const ExperimentConfig& cfg, const SegModel& teacher, const Benchmark& bench,
                                        const std::vector<std::size_t>& batch_sizes);

// Retrains the teacher at each output width and a half-width student against it.
std::vector<SweepRow> dim_sensitivity(const ExperimentConfig& cfg, const Benchmark& bench,
                                      const std::vector<std::size_t>& dims);

// CSV with a "# config_hash=" comment line, a header row and one row per entry.
std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& key_column, const std::string& config_hash,
                      bool with_teacher = false);
std::string noise_csv(const std::vector<NoiseRow>& rows, const std::string& config_hash);

}  // namespace srkd
