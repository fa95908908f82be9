#include "srkd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace srkd {

RunConfig::RunConfig() { apply_seed(0); }

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  experiment.scenes.seed = s;
  experiment.teacher_train.seed = s;
  experiment.student_train.seed = s;
  noise.seed = s;
  experiment.seeds.clear();
  for (std::size_t i = 0; i < sweep_seeds; ++i) experiment.seeds.push_back(s + i);
}

void RunConfig::validate() const {
  experiment.validate();
  noise.validate();
  if (sweep_seeds < 1) throw Error(ErrorKind::Config, "sweep.n_seeds must be >= 1");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorKind::Config, "sweep.fractions must lie in (0, 1]");
  for (auto b : batch_sizes)
    if (b < 1) throw Error(ErrorKind::Config, "sweep.batch_sizes must be >= 1");
  for (auto d : dims)
    if (d < 2) throw Error(ErrorKind::Config, "sweep.dims must be >= 2");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
T parse_number(const std::string& s) {
  T value{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end || s.empty()) throw Error(ErrorKind::Config, "cannot parse '" + s + "'");
  return value;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_number(std::uint64_t v) { return std::to_string(v); }

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(ErrorKind::Config, "expected true or false, got '" + s + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T, class Access>
Field scalar(std::string key, Access access) {
  return {std::move(key),
          [access](const RunConfig& c) {
            const T& v = access(const_cast<RunConfig&>(c));
            if constexpr (std::is_same_v<T, double>) return format_number(v);
            else if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
            else if constexpr (std::is_same_v<T, std::string>) return v;
            else return format_number(static_cast<std::uint64_t>(v));
          },
          [access](RunConfig& c, const std::string& s) {
            T& v = access(c);
            if constexpr (std::is_same_v<T, double>) v = parse_number<double>(s);
            else if constexpr (std::is_same_v<T, bool>) v = parse_bool(s);
            else if constexpr (std::is_same_v<T, std::string>) v = s;
            else v = static_cast<T>(parse_number<std::uint64_t>(s));
          }};
}

template <class T, class Access>
Field list(std::string key, Access access) {
  return {std::move(key),
          [access](const RunConfig& c) {
            const std::vector<T>& v = access(const_cast<RunConfig&>(c));
            std::string out;
            for (std::size_t i = 0; i < v.size(); ++i) {
              if (i) out += ", ";
              if constexpr (std::is_same_v<T, double>) out += format_number(v[i]);
              else out += format_number(static_cast<std::uint64_t>(v[i]));
            }
            return out;
          },
          [access](RunConfig& c, const std::string& s) {
            std::vector<T>& v = access(c);
            v.clear();
            for (const auto& item : split_list(s)) {
              if constexpr (std::is_same_v<T, double>) v.push_back(parse_number<double>(item));
              else v.push_back(static_cast<T>(parse_number<std::uint64_t>(item)));
            }
          }};
}

#define SRKD_FIELD(T, key, expr) scalar<T>(key, [](RunConfig& c) -> T& { return expr; })
#define SRKD_LIST(T, key, expr) list<T>(key, [](RunConfig& c) -> std::vector<T>& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using sz = std::size_t;
    using u32 = std::uint32_t;
    std::vector<Field> f;
    f.push_back(SRKD_FIELD(std::uint64_t, "seed", c.seed));

    f.push_back(SRKD_FIELD(u32, "scene.n_classes", c.experiment.scenes.n_classes));
    f.push_back(SRKD_FIELD(u32, "scene.points_per_scene", c.experiment.scenes.points_per_scene));
    f.push_back(SRKD_FIELD(u32, "scene.feature_dim", c.experiment.scenes.feature_dim));
    f.push_back(SRKD_FIELD(double, "scene.radial_extent", c.experiment.scenes.radial_extent));
    f.push_back(SRKD_FIELD(double, "scene.height_extent", c.experiment.scenes.height_extent));
    f.push_back(SRKD_FIELD(double, "scene.noise_std", c.experiment.scenes.noise_std));
    f.push_back(SRKD_FIELD(double, "scene.feature_noise", c.experiment.scenes.feature_noise));
    f.push_back(SRKD_FIELD(double, "scene.class_decay", c.experiment.scenes.class_decay));

    f.push_back(SRKD_FIELD(sz, "data.n_train", c.experiment.n_train));
    f.push_back(SRKD_FIELD(sz, "data.n_val", c.experiment.n_val));
    f.push_back(SRKD_FIELD(sz, "data.n_fixed", c.experiment.n_fixed));

    f.push_back(SRKD_LIST(sz, "model.teacher_widths", c.experiment.teacher_encoder.widths));
    f.push_back(SRKD_FIELD(sz, "model.knn", c.experiment.teacher_encoder.knn));
    f.push_back(SRKD_FIELD(sz, "model.agg_rounds", c.experiment.teacher_encoder.agg_rounds));
    f.push_back(SRKD_FIELD(double, "model.position_scale", c.experiment.teacher_encoder.position_scale));

    for (const char* who : {"teacher", "train"}) {
      const bool teacher = std::string(who) == "teacher";
      auto pick = [teacher](RunConfig& c) -> TrainConfig& {
        return teacher ? c.experiment.teacher_train : c.experiment.student_train;
      };
      const std::string p = std::string(who) + ".";
      f.push_back(scalar<sz>(p + "epochs", [pick](RunConfig& c) -> sz& { return pick(c).epochs; }));
      f.push_back(scalar<sz>(p + "batch_size", [pick](RunConfig& c) -> sz& { return pick(c).batch_size; }));
      f.push_back(scalar<double>(p + "lr", [pick](RunConfig& c) -> double& { return pick(c).lr; }));
      f.push_back(scalar<double>(p + "warmup_fraction", [pick](RunConfig& c) -> double& { return pick(c).warmup_fraction; }));
      f.push_back(scalar<double>(p + "div_factor", [pick](RunConfig& c) -> double& { return pick(c).div_factor; }));
      f.push_back(scalar<double>(p + "final_div_factor", [pick](RunConfig& c) -> double& { return pick(c).final_div_factor; }));
      f.push_back(scalar<double>(p + "weight_decay", [pick](RunConfig& c) -> double& { return pick(c).adamw.weight_decay; }));
      f.push_back(scalar<double>(p + "beta1", [pick](RunConfig& c) -> double& { return pick(c).adamw.beta1; }));
      f.push_back(scalar<double>(p + "beta2", [pick](RunConfig& c) -> double& { return pick(c).adamw.beta2; }));
      f.push_back(scalar<double>(p + "eps", [pick](RunConfig& c) -> double& { return pick(c).adamw.eps; }));
    }
    f.push_back(SRKD_FIELD(bool, "train.validate_each_epoch", c.experiment.student_train.validate_each_epoch));

    f.push_back(SRKD_FIELD(double, "loss.lambda_kd", c.experiment.student_train.loss.lambda_kd));
    f.push_back(SRKD_FIELD(double, "loss.lambda_p", c.experiment.student_train.loss.lambda_p));
    f.push_back(SRKD_FIELD(double, "loss.lambda_v", c.experiment.student_train.loss.lambda_v));
    f.push_back(SRKD_FIELD(double, "loss.lambda_c", c.experiment.student_train.loss.lambda_c));
    f.push_back(SRKD_FIELD(double, "loss.lambda_batch_gd", c.experiment.student_train.loss.lambda_batch_gd));
    f.push_back(SRKD_FIELD(double, "loss.t_logit", c.experiment.student_train.loss.t_logit));
    f.push_back(SRKD_FIELD(double, "loss.t_gd", c.experiment.student_train.loss.t_gd));

    f.push_back(SRKD_FIELD(double, "grid.radial_extent", c.experiment.student_train.grid.radial_extent));
    f.push_back(SRKD_FIELD(double, "grid.angular_extent", c.experiment.student_train.grid.angular_extent));
    f.push_back(SRKD_FIELD(double, "grid.height_extent", c.experiment.student_train.grid.height_extent));
    f.push_back(SRKD_FIELD(double, "grid.height_origin", c.experiment.student_train.grid.height_origin));
    f.push_back(SRKD_FIELD(double, "grid.radial_cell", c.experiment.student_train.grid.radial_cell));
    f.push_back(SRKD_FIELD(double, "grid.angular_cell", c.experiment.student_train.grid.angular_cell));
    f.push_back(SRKD_FIELD(double, "grid.height_cell", c.experiment.student_train.grid.height_cell));

    f.push_back(SRKD_FIELD(sz, "sampler.k", c.experiment.student_train.sampler.k));
    f.push_back(SRKD_FIELD(sz, "sampler.n_point", c.experiment.student_train.sampler.n_point));
    f.push_back(SRKD_FIELD(sz, "sampler.n_voxel", c.experiment.student_train.sampler.n_voxel));
    f.push_back(SRKD_FIELD(sz, "sampler.sub_div", c.experiment.student_train.sampler.sub_div));

    f.push_back(SRKD_LIST(double, "noise.taus", c.noise.taus));
    f.push_back(SRKD_FIELD(sz, "noise.trials", c.noise.trials));

    f.push_back(SRKD_FIELD(sz, "sweep.n_seeds", c.sweep_seeds));
    f.push_back(SRKD_LIST(double, "sweep.fractions", c.fractions));
    f.push_back(SRKD_LIST(sz, "sweep.batch_sizes", c.batch_sizes));
    f.push_back(SRKD_LIST(sz, "sweep.dims", c.dims));

    f.push_back(SRKD_FIELD(std::string, "io.data_dir", c.data_dir));
    f.push_back(SRKD_FIELD(std::string, "io.teacher", c.teacher_checkpoint));
    f.push_back(SRKD_FIELD(std::string, "io.student", c.student_checkpoint));
    return f;
  }();
  return table;
}

#undef SRKD_FIELD
#undef SRKD_LIST

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw Error(ErrorKind::Config, where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw Error(ErrorKind::Config, where + "unknown key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, where + key + ": " + e.what());
    }
  }
  cfg.apply_seed(cfg.seed);
  // The grid and sampler are owned by the student run; the teacher never reads them.
  cfg.experiment.teacher_train.grid = cfg.experiment.student_train.grid;
  cfg.experiment.teacher_train.sampler = cfg.experiment.student_train.sampler;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = dot == std::string::npos ? std::string() : f.key.substr(0, dot);
    if (!out.empty() && s != section) out += '\n';
    section = s;
    out += f.key + " = " + f.get(cfg) + '\n';
  }
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : format_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace srkd
