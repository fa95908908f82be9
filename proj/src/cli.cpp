#include "srkd/cli.hpp"

#include "srkd/numerics.hpp"
#include "srkd/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace srkd {

namespace fs = std::filesystem;

RunConfig resolve_config(const CliOptions& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config(opts.config_path);
  if (opts.seed) cfg.apply_seed(*opts.seed);
  cfg.experiment.jobs = opts.jobs;
  if (const char* det = std::getenv("SRKD_DETERMINISTIC"); det != nullptr && std::string(det) == "1")
    cfg.experiment.jobs = 1;
  cfg.validate();
  return cfg;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create directory '" + path.parent_path().string() + "'");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

std::vector<fs::path> scene_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "missing scene directory '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pcbin") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::Data, "no .pcbin scenes in '" + dir.string() + "'");
  return files;
}

Benchmark load_benchmark(const RunConfig& cfg) {
  const ExperimentConfig& e = cfg.experiment;
  if (cfg.data_dir.empty()) return make_benchmark(e);
  auto read_all = [](const fs::path& dir) {
    std::vector<PointCloud> clouds;
    for (const auto& f : scene_files(dir)) clouds.push_back(read_cloud(f));
    return clouds;
  };
  const fs::path root(cfg.data_dir);
  const std::size_t knn = e.teacher_encoder.knn;
  Benchmark b{make_dataset(read_all(root / "train"), e.n_fixed, knn, derive_seed(e.scenes.seed, {1})),
              make_dataset(read_all(root / "val"), e.n_fixed, knn, derive_seed(e.scenes.seed, {2}))};
  if (b.train.n_classes != e.scenes.n_classes || b.val.n_classes != e.scenes.n_classes)
    throw Error(ErrorKind::Data, "scene class count does not match scene.n_classes");
  return b;
}

fs::path teacher_path(const RunConfig& cfg, const CliOptions& opts) {
  return cfg.teacher_checkpoint.empty() ? opts.out_dir / "teacher.ckpt" : fs::path(cfg.teacher_checkpoint);
}

fs::path student_path(const RunConfig& cfg, const CliOptions& opts) {
  return cfg.student_checkpoint.empty() ? opts.out_dir / "student.ckpt" : fs::path(cfg.student_checkpoint);
}

SegModel load_teacher(const RunConfig& cfg, const CliOptions& opts) {
  const fs::path path = teacher_path(cfg, opts);
  if (!fs::exists(path))
    throw Error(ErrorKind::MissingTeacher, "teacher checkpoint '" + path.string() + "' not found; run train-teacher first");
  return load_checkpoint(path, cfg.experiment.teacher_encoder, cfg.experiment.scenes.n_classes, false);
}

SegModel load_student(const RunConfig& cfg, const CliOptions& opts) {
  const EncoderSpec& t = cfg.experiment.teacher_encoder;
  return load_checkpoint(student_path(cfg, opts), student_spec(t), cfg.experiment.scenes.n_classes, true, t.out_dim());
}

void echo_config(const RunConfig& cfg, const CliOptions& opts) {
  write_text(opts.out_dir / "config.txt", format_config(cfg));
}

std::string metrics_json(const Metrics& m) {
  nlohmann::json j = m;
  return j.dump(2) + "\n";
}

int cmd_generate(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const ExperimentConfig& e = cfg.experiment;
  const std::size_t c = e.scenes.n_classes;
  std::vector<std::size_t> train_hist(c, 0), val_hist(c, 0);
  nlohmann::ordered_json train_files = nlohmann::json::array(), val_files = nlohmann::json::array();
  for (std::size_t i = 0; i < e.n_train + e.n_val; ++i) {
    const bool is_train = i < e.n_train;
    const PointCloud cloud = generate_scene(e.scenes, i);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu.pcbin", is_train ? i : i - e.n_train);
    const fs::path rel = fs::path(is_train ? "train" : "val") / name;
    fs::create_directories(opts.out_dir / rel.parent_path());
    write_cloud(cloud, opts.out_dir / rel);
    const auto h = class_histogram(cloud);
    auto& hist = is_train ? train_hist : val_hist;
    for (std::size_t k = 0; k < c; ++k) hist[k] += h[k];
    (is_train ? train_files : val_files).push_back(rel.generic_string());
  }
  std::vector<std::size_t> total(c);
  for (std::size_t k = 0; k < c; ++k) total[k] = train_hist[k] + val_hist[k];

  nlohmann::ordered_json m;
  m["seed"] = cfg.seed;
  m["config_hash"] = config_hash(cfg);
  m["n_train"] = e.n_train;
  m["n_val"] = e.n_val;
  m["points_per_scene"] = e.scenes.points_per_scene;
  m["n_classes"] = e.scenes.n_classes;
  m["feature_dim"] = e.scenes.feature_dim;
  m["class_histogram"] = {{"train", train_hist}, {"val", val_hist}, {"total", total}};
  m["train_files"] = train_files;
  m["val_files"] = val_files;
  write_text(opts.out_dir / "manifest.json", m.dump(2) + "\n");
  echo_config(cfg, opts);
  out << "wrote " << e.n_train << " train and " << e.n_val << " val scenes to " << opts.out_dir.string() << "\n";
  return 0;
}

int cmd_train_teacher(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const Benchmark bench = load_benchmark(cfg);
  const ExperimentConfig& e = cfg.experiment;
  SegModel init = init_model(e.teacher_encoder, bench.train.n_classes, derive_seed(e.teacher_train.seed, {0x7EAC4E7ull}));
  TrainConfig tc = e.teacher_train;
  tc.validate_each_epoch = e.student_train.validate_each_epoch;
  const TrainResult r = train_supervised(tc, std::move(init), bench.train, &bench.val);
  fs::create_directories(opts.out_dir);
  save_checkpoint(r.model, teacher_path(cfg, opts));
  write_text(opts.out_dir / "teacher_log.jsonl", r.log.steps_jsonl());
  write_text(opts.out_dir / "teacher_val.jsonl", r.log.epochs_jsonl());
  write_text(opts.out_dir / "teacher_metrics.json", metrics_json(*r.final_val));
  echo_config(cfg, opts);
  out << "teacher mIoU " << r.final_val->miou << " (" << r.model.parameter_count() << " parameters)\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const ExperimentConfig& e = cfg.experiment;
  const Benchmark bench = load_benchmark(cfg);
  std::optional<SegModel> teacher;
  if (e.student_train.loss.any_distillation()) teacher = load_teacher(cfg, opts);
  // Without a teacher an untrained model of the teacher's layout fixes the
  // student's shapes; the student init depends only on shapes and seed.
  const SegModel layout = teacher ? *teacher
                                  : init_model(e.teacher_encoder, bench.train.n_classes, derive_seed(e.teacher_train.seed, {0x7EAC4E7ull}));
  SegModel student = make_student_model(layout, derive_seed(e.student_train.seed, {0x57D0ull}));
  const TrainResult r = train_distill(e.student_train, teacher ? &*teacher : nullptr, std::move(student), bench.train, &bench.val);
  fs::create_directories(opts.out_dir);
  save_checkpoint(r.model, student_path(cfg, opts));
  write_text(opts.out_dir / "train_log.jsonl", r.log.steps_jsonl());
  write_text(opts.out_dir / "val_log.jsonl", r.log.epochs_jsonl());
  write_text(opts.out_dir / "metrics.json", metrics_json(*r.final_val));
  echo_config(cfg, opts);
  out << "student mIoU " << r.final_val->miou << " (" << r.model.parameter_count() << " parameters)\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const SegModel student = load_student(cfg, opts);
  const Metrics m = evaluate(student, load_benchmark(cfg).val);
  const std::string j = metrics_json(m);
  write_text(opts.out_dir / "eval_metrics.json", j);
  out << j;
  return 0;
}

int write_table(const CliOptions& opts, const std::string& file, const std::string& csv, std::ostream& out) {
  write_text(opts.out_dir / file, csv);
  out << csv;
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const SegModel teacher = load_teacher(cfg, opts);
  const auto rows = ablate(cfg.experiment, teacher, load_benchmark(cfg), ablation_variants(cfg.experiment.student_train.loss));
  echo_config(cfg, opts);
  return write_table(opts, "ablation.csv", sweep_csv(rows, "variant", config_hash(cfg)), out);
}

int cmd_noise(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const SegModel student = load_student(cfg, opts);
  const auto rows = noise_sweep(student, load_benchmark(cfg).val, cfg.noise);
  echo_config(cfg, opts);
  return write_table(opts, "noise.csv", noise_csv(rows, config_hash(cfg)), out);
}

int cmd_subsample(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const SegModel teacher = load_teacher(cfg, opts);
  const auto rows = subsample_sweep(cfg.experiment, teacher, load_benchmark(cfg), cfg.fractions);
  echo_config(cfg, opts);
  return write_table(opts, "subsample.csv", sweep_csv(rows, "fraction", config_hash(cfg)), out);
}

int cmd_batch(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const SegModel teacher = load_teacher(cfg, opts);
  const auto rows = batch_sensitivity(cfg.experiment, teacher, load_benchmark(cfg), cfg.batch_sizes);
  echo_config(cfg, opts);
  return write_table(opts, "batch.csv", sweep_csv(rows, "batch_size", config_hash(cfg)), out);
}

int cmd_dim(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const auto rows = dim_sensitivity(cfg.experiment, load_benchmark(cfg), cfg.dims);
  echo_config(cfg, opts);
  return write_table(opts, "dim.csv", sweep_csv(rows, "teacher_dim", config_hash(cfg), true), out);
}

int cmd_gradcheck(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(cfg.seed, opts.corrupt_gradient);
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["parameters"] = report.n_parameters;
  j["tolerance"] = report.tolerance;
  for (const auto& t : report.terms) {
    j["value"][t.name] = t.value;
    j["max_abs_grad"][t.name] = t.max_abs_grad;
    j["max_rel_error"][t.name] = t.max_rel_error;
  }
  j["passed"] = report.passed();
  out << j.dump(2) << "\n";
  if (!report.passed()) throw Error(ErrorKind::GradCheck, "analytic and finite-difference gradients disagree");
  return 0;
}

}  // namespace

int run_command(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = resolve_config(opts);
    const std::string& c = opts.command;
    if (c == "generate") return cmd_generate(cfg, opts, out);
    if (c == "train-teacher") return cmd_train_teacher(cfg, opts, out);
    if (c == "train") return cmd_train(cfg, opts, out);
    if (c == "eval") return cmd_eval(cfg, opts, out);
    if (c == "ablate") return cmd_ablate(cfg, opts, out);
    if (c == "noise") return cmd_noise(cfg, opts, out);
    if (c == "subsample") return cmd_subsample(cfg, opts, out);
    if (c == "batch-sweep") return cmd_batch(cfg, opts, out);
    if (c == "dim-sweep") return cmd_dim(cfg, opts, out);
    if (c == "gradcheck") return cmd_gradcheck(cfg, opts, out);
    throw Error(ErrorKind::Config, "unknown command '" + c + "'");
  } catch (const Error& e) {
    err << nlohmann::json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump() << "\n";
    return e.kind() == ErrorKind::GradCheck ? 3 : 2;
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", "internal_error"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}

bool GradcheckReport::passed() const {
  return std::all_of(terms.begin(), terms.end(), [&](const GradcheckTerm& t) { return t.max_rel_error < tolerance; });
}

GradcheckReport run_gradcheck(std::uint64_t seed, bool corrupt_gradient) {
  SceneSpec scene;
  scene.n_classes = 4;
  scene.points_per_scene = 14;  // resampled to 16, so two rows per sample are padding
  scene.seed = seed;
  const Dataset data = make_dataset({generate_scene(scene, 0), generate_scene(scene, 1)}, 16, 4, derive_seed(seed, {1}));

  EncoderSpec spec{{3 + scene.feature_dim, 16, 16, 16}};
  spec.knn = 4;
  const SegModel teacher = init_model(spec, scene.n_classes, derive_seed(seed, {2}));
  SegModel student = make_student_model(teacher, derive_seed(seed, {3}));

  TrainConfig cfg;
  cfg.grid.radial_cell = cfg.grid.radial_extent;
  cfg.grid.angular_cell = std::numbers::pi;
  cfg.grid.height_cell = 2.0;
  cfg.sampler = {2, 8, 4, 2};
  const std::vector<std::size_t> batch{0, 1};
  const std::uint64_t batch_seed = derive_seed(seed, {4});

  const std::vector<std::string> names{"l_task", "l_kd", "l_amra_p", "l_amra_v", "l_amra_c", "l_batch_gd", "l_total"};
  auto pick = [](const BatchLosses& l, std::size_t k) -> const ad::Var& {
    const ad::Var* vars[] = {&l.task, &l.kd, &l.amra_p, &l.amra_v, &l.amra_c, &l.batch_gd, &l.total};
    return *vars[k];
  };

  auto params = named_parameters(student);
  Eigen::Index n = 0;
  for (const auto& [name, p] : params) n += p->size();
  Vector theta(n);
  auto flatten_into = [&](Vector& v, auto getter) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix& m = getter(i);
      v.segment(off, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
      off += m.size();
    }
  };
  flatten_into(theta, [&](std::size_t i) -> const Matrix& { return *params[i].second; });
  auto assign = [&](const Vector& v) {
    Eigen::Index off = 0;
    for (auto& [name, p] : params) {
      Eigen::Map<Vector>(p->data(), p->size()) = v.segment(off, p->size());
      off += p->size();
    }
  };

  GradcheckReport report;
  report.n_parameters = static_cast<std::size_t>(n);
  for (std::size_t k = 0; k < names.size(); ++k) {
    assign(theta);
    ad::Tape tape;
    const BoundModel bound = bind_model(tape, student, true);
    const BatchLosses losses = record_batch_losses(tape, bound, student, &teacher, data, batch, cfg, batch_seed,
                                                   LossSelection::all());
    tape.backward(pick(losses, k));
    const auto grads = tape.parameter_gradients();
    Vector analytic(n);
    flatten_into(analytic, [&](std::size_t i) -> const Matrix& { return grads[i].second; });
    if (corrupt_gradient) analytic[0] += 1e-2 * std::max(1.0, std::abs(analytic[0]));

    auto f = [&](const Vector& v) {
      assign(v);
      ad::Tape t;
      const BoundModel b = bind_model(t, student, false);
      return pick(record_batch_losses(t, b, student, &teacher, data, batch, cfg, batch_seed, LossSelection::all()), k)
          .scalar();
    };
    const Vector numeric = finite_diff_gradient(f, theta, 1e-5);
    assign(theta);

    GradcheckTerm term{names[k], pick(losses, k).scalar(), 0.0, numeric.cwiseAbs().maxCoeff()};
    for (Eigen::Index i = 0; i < n; ++i) term.max_rel_error = std::max(term.max_rel_error, relative_error(analytic[i], numeric[i]));
    report.terms.push_back(term);
  }
  return report;
}

}  // namespace srkd
