#pragma once

#include "gora/config.hpp"
#include "gora/ddpsim.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace gora {

inline constexpr const char* kManifestSchema = "gora-manifest/1";
inline constexpr const char* kVersion = "0.1.0";

/// Missing or inconsistent upstream artifact.
class StageOrderError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Network and data regenerated from the config's root seed.
struct RunContext {
  Network net;
  std::vector<Batch> train;
  Batch eval;
};

RunContext build_context(const RunConfig& cfg);

/// Artifact names inside a run directory.
namespace artifact {
inline constexpr const char* manifest = "manifest.json";
inline constexpr const char* probe = "probe.gprb";
inline constexpr const char* plan = "plan.txt";
inline constexpr const char* adapters_init = "adapters_init.gadp";
inline constexpr const char* init_report = "init_report.json";
inline constexpr const char* train_csv = "train.csv";
inline constexpr const char* adapters_final = "adapters_final.gadp";
}  // namespace artifact

struct StageTimings {
  double probe = 0.0, init = 0.0, train = 0.0;
};

// Each stage reads its upstream artifacts from `dir`, writes its own, and
// updates dir/manifest.json.
ProbeResult cmd_probe(const RunConfig& cfg, const std::filesystem::path& dir);
RankPlan cmd_allocate(const RunConfig& cfg, const std::filesystem::path& dir);
InitReport cmd_init(const RunConfig& cfg, const std::filesystem::path& dir);
TrainRecord cmd_train(const RunConfig& cfg, const std::filesystem::path& dir);
nlohmann::json cmd_pipeline(const RunConfig& cfg, const std::filesystem::path& dir);

nlohmann::json load_manifest(const std::filesystem::path& path);
/// The config embedded in a manifest (its canonical text).
RunConfig config_from_manifest(const nlohmann::json& manifest);
/// Accepts a key = value config file or a manifest.json.
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json plan_to_json(const RankPlan& plan);
nlohmann::json init_report_to_json(const InitReport& report);

struct ReportRow {
  std::string family;
  std::string label;
  std::size_t runs = 0;
  double final_mean = 0.0, final_std = 0.0;
  double first_mean = 0.0, first_std = 0.0;
  double params_mean = 0.0;
};

/// Groups manifests by (task family, label); std is the sample deviation.
std::vector<ReportRow> summarize_manifests(const std::vector<std::filesystem::path>& manifests);
std::string format_report(const std::vector<ReportRow>& rows);
std::string report_csv(const std::vector<ReportRow>& rows);
/// Long-format loss curves: run,family,label,seed,step,loss,lr.
std::string curves_csv(const std::vector<std::filesystem::path>& manifests);

}  // namespace gora
