#include "srkd/experiments.hpp"

#include "srkd/rng.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace srkd {

void ExperimentConfig::validate() const {
  scenes.validate();
  if (n_train < 1 || n_val < 1) throw Error(ErrorKind::Config, "benchmark needs at least one train and one val scene");
  if (n_fixed < 1) throw Error(ErrorKind::Config, "n_fixed must be >= 1");
  teacher_encoder.validate();
  if (teacher_encoder.widths.front() != 3 + scenes.feature_dim)
    throw Error(ErrorKind::Config, "teacher input width must equal 3 + scene feature_dim");
  teacher_train.validate();
  student_train.validate();
  if (seeds.empty()) throw Error(ErrorKind::Config, "seed list is empty");
  if (jobs < 1) throw Error(ErrorKind::Config, "jobs must be >= 1");
}

Benchmark make_benchmark(const ExperimentConfig& cfg) {
  std::vector<PointCloud> train, val;
  for (std::size_t i = 0; i < cfg.n_train + cfg.n_val; ++i)
    (i < cfg.n_train ? train : val).push_back(generate_scene(cfg.scenes, i));
  const std::size_t knn = cfg.teacher_encoder.knn;
  return {make_dataset(train, cfg.n_fixed, knn, derive_seed(cfg.scenes.seed, {1})),
          make_dataset(val, cfg.n_fixed, knn, derive_seed(cfg.scenes.seed, {2}))};
}

SegModel train_teacher(const ExperimentConfig& cfg, const Benchmark& bench) {
  SegModel init = init_model(cfg.teacher_encoder, bench.train.n_classes, derive_seed(cfg.teacher_train.seed, {0x7EAC4E7ull}));
  return train_supervised(cfg.teacher_train, std::move(init), bench.train, nullptr).model;
}

TrainResult train_student(const ExperimentConfig& cfg, const SegModel& teacher, const Dataset& train, const Dataset& val,
                          const LossWeights& weights, std::uint64_t seed, std::size_t batch_size) {
  TrainConfig tc = cfg.student_train;
  tc.seed = seed;
  tc.loss = weights;
  tc.validate_each_epoch = false;
  if (batch_size != 0) tc.batch_size = batch_size;
  SegModel student = make_student_model(teacher, derive_seed(seed, {0x57D0ull}));
  return train_distill(tc, &teacher, std::move(student), train, &val);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

void summarize(SweepRow& row) {
  if (row.runs.empty()) return;
  const double n = static_cast<double>(row.runs.size());
  row.miou = row.macc = row.allacc = 0.0;
  row.miou_min = row.miou_max = row.runs.front().miou;
  for (const auto& m : row.runs) {
    row.miou += m.miou / n;
    row.macc += m.macc / n;
    row.allacc += m.allacc / n;
    row.miou_min = std::min(row.miou_min, m.miou);
    row.miou_max = std::max(row.miou_max, m.miou);
  }
}

std::vector<Variant> ablation_variants(const LossWeights& base) {
  LossWeights none = base;
  none.lambda_kd = none.lambda_p = none.lambda_v = none.lambda_c = none.lambda_batch_gd = 0.0;
  LossWeights kd = none;
  kd.lambda_kd = base.lambda_kd;
  LossWeights kd_gd = kd;
  kd_gd.lambda_batch_gd = base.lambda_batch_gd;
  return {{"Baseline", none}, {"Baseline+L_kd", kd}, {"Baseline+L_kd+CSMBGD", kd_gd}, {"Baseline+L_kd+CSMBGD+AMRA", base}};
}

namespace {

// Runs every (row, seed) cell of a sweep through parallel_for.
template <class Run>
std::vector<SweepRow> run_grid(const ExperimentConfig& cfg, std::vector<std::string> keys, Run run) {
  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<SweepRow> rows(keys.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    rows[r].key = keys[r];
    rows[r].seeds = cfg.seeds;
    rows[r].runs.resize(n_seeds);
    rows[r].models.resize(n_seeds);
  }
  parallel_for(rows.size() * n_seeds, cfg.jobs, [&](std::size_t cell) {
    const std::size_t r = cell / n_seeds, s = cell % n_seeds;
    TrainResult res = run(r, cfg.seeds[s]);
    rows[r].runs[s] = *res.final_val;
    rows[r].models[s] = std::move(res.model);
  });
  for (auto& row : rows) summarize(row);
  return rows;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_key(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::vector<SweepRow> ablate(const ExperimentConfig& cfg, const SegModel& teacher, const Benchmark& bench,
                             const std::vector<Variant>& variants) {
  cfg.validate();
  std::vector<std::string> keys;
  for (const auto& v : variants) keys.push_back(v.name);
  return run_grid(cfg, keys, [&](std::size_t r, std::uint64_t seed) {
    return train_student(cfg, teacher, bench.train, bench.val, variants[r].weights, seed);
  });
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::Config, "subsample fraction must be in (0, 1]");
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (count == 0) throw Error(ErrorKind::Config, "subsample fraction " + format_key(fraction) + " yields zero scenes");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count == n) return idx;
  Rng rng(derive_seed(seed, {std::bit_cast<std::uint64_t>(fraction)}));
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<SweepRow> subsample_sweep(const ExperimentConfig& cfg, const SegModel& teacher, const Benchmark& bench,
                                      const std::vector<double>& fractions) {
  cfg.validate();
  if (fractions.empty()) throw Error(ErrorKind::Config, "fraction list is empty");
  std::vector<std::string> keys;
  for (double f : fractions) {
    subsample_indices(bench.train.size(), f, 0);  // rejects empty subsets before any training starts
    keys.push_back(format_key(f));
  }
  return run_grid(cfg, keys, [&](std::size_t r, std::uint64_t seed) {
    const Dataset part = subset(bench.train, subsample_indices(bench.train.size(), fractions[r], seed));
    return train_student(cfg, teacher, part, bench.val, cfg.student_train.loss, seed);
  });
}

std::vector<SweepRow> batch_sensitivity(const ExperimentConfig& cfg, const SegModel& teacher, const Benchmark& bench,
                                        const std::vector<std::size_t>& batch_sizes) {
  cfg.validate();
  if (batch_sizes.empty()) throw Error(ErrorKind::Config, "batch size list is empty");
  std::vector<std::string> keys;
  for (auto b : batch_sizes) {
    if (b < 1) throw Error(ErrorKind::Config, "batch sizes must be >= 1");
    keys.push_back(std::to_string(b));
  }
  return run_grid(cfg, keys, [&](std::size_t r, std::uint64_t seed) {
    return train_student(cfg, teacher, bench.train, bench.val, cfg.student_train.loss, seed, batch_sizes[r]);
  });
}

std::vector<SweepRow> dim_sensitivity(const ExperimentConfig& cfg, const Benchmark& bench,
                                      const std::vector<std::size_t>& dims) {
  cfg.validate();
  if (dims.empty()) throw Error(ErrorKind::Config, "dim list is empty");
  std::vector<std::string> keys;
  std::vector<SegModel> teachers(dims.size());
  std::vector<double> teacher_miou(dims.size());
  for (auto d : dims) {
    if (d < 2) throw Error(ErrorKind::Config, "feature dims must be >= 2");
    keys.push_back(std::to_string(d));
  }
  parallel_for(dims.size(), cfg.jobs, [&](std::size_t i) {
    ExperimentConfig c = cfg;
    c.teacher_encoder.widths.back() = dims[i];
    teachers[i] = train_teacher(c, bench);
    teacher_miou[i] = evaluate(teachers[i], bench.val).miou;
  });
  auto rows = run_grid(cfg, keys, [&](std::size_t r, std::uint64_t seed) {
    return train_student(cfg, teachers[r], bench.train, bench.val, cfg.student_train.loss, seed);
  });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].teacher_miou = teacher_miou[i];
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& key_column, const std::string& config_hash,
                      bool with_teacher) {
  std::string out = "# config_hash=" + config_hash + "\n";
  out += key_column + ",n_seeds,mIoU,mAcc,allAcc,mIoU_min,mIoU_max";
  if (with_teacher) out += ",teacher_mIoU";
  out += '\n';
  for (const auto& r : rows) {
    out += r.key + ',' + std::to_string(r.runs.size()) + ',' + format_double(r.miou) + ',' + format_double(r.macc) + ',' +
           format_double(r.allacc) + ',' + format_double(r.miou_min) + ',' + format_double(r.miou_max);
    if (with_teacher) out += ',' + format_double(r.teacher_miou);
    out += '\n';
  }
  return out;
}

std::string noise_csv(const std::vector<NoiseRow>& rows, const std::string& config_hash) {
  std::string out = "# config_hash=" + config_hash + "\ntau,trials,mIoU\n";
  for (const auto& r : rows)
    out += format_key(r.tau) + ',' + std::to_string(r.trial_miou.size()) + ',' + format_double(r.mean_miou) + '\n';
  return out;
}

}  // namespace srkd
