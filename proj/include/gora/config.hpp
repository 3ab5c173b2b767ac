#pragma once

#include "gora/adapter.hpp"
#include "gora/allocate.hpp"
#include "gora/gorainit.hpp"
#include "gora/probe.hpp"
#include "gora/tasks.hpp"
#include "gora/trainkit.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gora {

enum class TaskFamily { teacher, cluster };
enum class Method { gora, lora };

std::string to_string(TaskFamily f);
std::string to_string(Method m);

struct TaskSpec {
  TaskFamily family = TaskFamily::teacher;
  TeacherTaskConfig teacher;
  ClusterTaskConfig cluster;
};

/// Hidden layers of the classifier used by the cluster task.
struct ModelSpec {
  std::vector<std::size_t> hidden{32};
  Activation activation = Activation::tanh;
  bool bias = true;
};

struct AdapterRunSpec {
  Method method = Method::gora;
  AdapterSpec adapter;
  AllocConfig alloc;
  bool gamma_auto = false;
  double gamma = 5e-2;
  XiRule xi_rule = XiRule::magnitude_matched;
  AutotuneConfig autotune;
};

struct ProbeRunSpec {
  ProbeConfig probe;  // probe.adaptive is set by "probe.steps = auto"
};

struct TrainSpec {
  OptimConfig optim;
  std::size_t steps = 200;
};

/// Full experiment description. Every random stream derives from `seed`:
/// task data from (seed, "task"), model weights from (seed, "model"),
/// adapter A₀ from (seed, "init") then (layer, attempt).
struct RunConfig {
  std::uint64_t seed = 0;
  std::string label;
  TaskSpec task;
  ModelSpec model;
  AdapterRunSpec adapter;
  ProbeRunSpec probe;
  TrainSpec train;
  std::size_t workers = 1;
  std::string out_dir = "run";

  /// Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;
  /// "method" or the explicit label.
  std::string display_label() const;
};

/// Parses "key.path = value" lines; '#' starts a comment. Unknown keys and
/// malformed values raise ConfigError naming the key. The result is validated.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text form that parses back to an identical configuration.
std::string to_config_text(const RunConfig& cfg);

}  // namespace gora
