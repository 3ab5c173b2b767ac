#include "gora/pipeline.hpp"
#include "gora/verify.hpp"

#include "gora/io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitVerify = 3;

struct RunFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "config file (key = value) or manifest.json")->required();
  cmd->add_option("--out", f.out, "run directory (default: output.dir from the config)");
  cmd->add_option("--seed", f.seed, "override the root seed");
  cmd->add_option("--workers", f.workers, "override the simulated data-parallel world size");
}

gora::RunConfig resolve(const RunFlags& f, std::filesystem::path& dir) {
  gora::RunConfig cfg = gora::load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "run";
  cfg.validate();
  dir = cfg.out_dir;
  return cfg;
}

void print_init(const gora::InitReport& r) {
  std::printf("init: gamma=%.6g xi_rule=%s layers=%zu time=%.6fs\n", r.gamma, gora::to_string(r.xi_rule).c_str(),
              r.layers.size(), r.seconds);
  for (const auto& l : r.layers) {
    std::printf("  layer %zu rank %zu xi %.6g rel_error %.6g retries %d\n", l.id, l.rank, l.xi, l.rel_error,
                l.retries);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-driven low-rank adapter allocation and initialization"};
  app.require_subcommand(1);

  RunFlags flags;
  auto* probe = app.add_subcommand("probe", "accumulate probe gradients");
  auto* allocate = app.add_subcommand("allocate", "allocate per-layer ranks from the probe");
  auto* init = app.add_subcommand("init", "initialize adapters");
  auto* train_cmd = app.add_subcommand("train", "train adapters");
  auto* pipeline = app.add_subcommand("pipeline", "probe, allocate, init and train");
  for (auto* cmd : {probe, allocate, init, train_cmd, pipeline}) add_run_flags(cmd, flags);

  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  std::string verify_out;
  auto* verify = app.add_subcommand("verify", "run verification suites");
  verify->add_option("--suite", suite, "suite name or 'all'");
  verify->add_option("--seed", verify_seed, "root seed");
  verify->add_option("--out", verify_out, "also write the CSV report here");

  std::vector<std::string> manifests;
  std::string report_out;
  auto* report = app.add_subcommand("report", "compare finished runs");
  report->add_option("manifests", manifests, "manifest.json files")->required();
  report->add_option("--out", report_out, "directory for report.csv and curves.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::path dir;
    if (*probe) {
      const gora::RunConfig cfg = resolve(flags, dir);
      const auto r = gora::cmd_probe(cfg, dir);
      std::printf("probe: steps=%zu batches=%zu -> %s\n", r.steps_used, r.batches_used,
                  (dir / gora::artifact::probe).c_str());
    } else if (*allocate) {
      const gora::RunConfig cfg = resolve(flags, dir);
      const auto plan = gora::cmd_allocate(cfg, dir);
      gora::write_plan_table(std::cout, plan);
    } else if (*init) {
      const gora::RunConfig cfg = resolve(flags, dir);
      print_init(gora::cmd_init(cfg, dir));
    } else if (*train_cmd) {
      const gora::RunConfig cfg = resolve(flags, dir);
      const auto rec = gora::cmd_train(cfg, dir);
      std::printf("train: steps=%zu first_batch_loss=%.6g final_eval_loss=%.6g\n", rec.steps.size(),
                  rec.first_batch_loss, rec.final_eval_loss);
    } else if (*pipeline) {
      const gora::RunConfig cfg = resolve(flags, dir);
      const auto m = gora::cmd_pipeline(cfg, dir);
      std::printf("pipeline: %s\n", (dir / gora::artifact::manifest).c_str());
      std::printf("init time %.6fs, final eval loss %.6g\n", m["timings"]["init"].get<double>(),
                  m["train"]["final_eval_loss"].get<double>());
    } else if (*verify) {
      const auto cases = gora::run_verify(suite, verify_seed);
      const std::string csv = gora::verify_csv(cases);
      std::cout << csv;
      if (!verify_out.empty()) gora::io::write_file(verify_out, csv);
      std::size_t failed = 0;
      for (const auto& c : cases) failed += c.pass ? 0 : 1;
      std::fprintf(stderr, "%zu/%zu cases passed\n", cases.size() - failed, cases.size());
      return failed ? kExitVerify : 0;
    } else if (*report) {
      std::vector<std::filesystem::path> paths(manifests.begin(), manifests.end());
      const auto rows = gora::summarize_manifests(paths);
      std::cout << gora::format_report(rows);
      if (!report_out.empty()) {
        std::filesystem::create_directories(report_out);
        gora::io::write_file(std::filesystem::path(report_out) / "report.csv", gora::report_csv(rows));
        gora::io::write_file(std::filesystem::path(report_out) / "curves.csv", gora::curves_csv(paths));
      }
    }
  } catch (const gora::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const gora::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return 0;
}
