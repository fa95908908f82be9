#pragma once

#include "srkd/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace srkd {

struct CliOptions {
  std::string command;
  std::string config_path;  // empty: defaults
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "out";
  std::size_t jobs = 1;
  bool corrupt_gradient = false;  // gradcheck negative control
};

inline const std::vector<std::string>& cli_commands() {
  static const std::vector<std::string> names{"generate", "train-teacher", "train",     "eval",     "ablate",
                                              "noise",    "subsample",     "batch-sweep", "dim-sweep", "gradcheck"};
  return names;
}

// Effective config: file (if any), then --seed, then SRKD_DETERMINISTIC.
RunConfig resolve_config(const CliOptions& opts);

// Runs one command. Returns the process exit code; failures are reported on
// `err` as a single JSON object {"error": kind, "message": ...}.
int run_command(const CliOptions& opts, std::ostream& out, std::ostream& err);

struct GradcheckTerm {
  std::string name;
  double value = 0.0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckTerm> terms;  // the six loss terms, then l_total
  std::size_t n_parameters = 0;
  double tolerance = 1e-4;
  bool passed() const;
};

// Random tiny batch (B=2, N=16, student D=8, C=4); analytic gradients of every
// term with respect to every student and projection parameter against central
// differences with h = 1e-5.
GradcheckReport run_gradcheck(std::uint64_t seed, bool corrupt_gradient = false);

}  // namespace srkd
