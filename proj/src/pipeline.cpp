#include "gora/pipeline.hpp"

#include "gora/io.hpp"

#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace gora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string version_string() {
  std::string eigen = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION);
#ifdef __VERSION__
  const std::string compiler = __VERSION__;
#else
  const std::string compiler = "unknown";
#endif
  return "gora " + std::string(kVersion) + "; eigen " + eigen + "; compiler " + compiler;
}

void require_artifact(const fs::path& dir, const char* name, const char* stage, const char* producer) {
  if (!fs::exists(dir / name)) {
    throw StageOrderError(std::string(stage) + ": missing upstream artifact " + (dir / name).string() +
                          " (run '" + producer + "' first)");
  }
}

/// Config text without the output directory, so runs can be relocated.
std::string identity_text(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.out_dir.clear();
  return to_config_text(c);
}

/// Loads the manifest a previous stage left, checking it belongs to this config.
json open_manifest(const RunConfig& cfg, const fs::path& dir, const char* stage) {
  require_artifact(dir, artifact::manifest, stage, "probe");
  json m = load_manifest(dir / artifact::manifest);
  if (m.value("config_text", std::string()) != identity_text(cfg)) {
    throw StageOrderError(std::string(stage) + ": artifacts in " + dir.string() +
                          " were produced by a different config");
  }
  return m;
}

void save_manifest(const fs::path& dir, const json& m) {
  io::write_file(dir / artifact::manifest, m.dump(2) + "\n");
}

void record_artifact(json& m, const fs::path& dir, const char* name) {
  m["artifacts"][name] = name;
  m["checksums"][name] = io::file_checksum(dir / name);
}

ProbeResult load_probe(const fs::path& dir) {
  std::ifstream in(dir / artifact::probe, std::ios::binary);
  return read_probe(in);
}

RankPlan load_plan(const fs::path& dir) {
  std::ifstream in(dir / artifact::plan);
  return read_plan_table(in);
}

AdapterSet load_adapters(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return read_adapters(in);
}

void save_adapters(const fs::path& path, const AdapterSet& adapters) {
  io::write_file(path, serialize_adapters(adapters));
}

InitConfig init_config(const RunConfig& cfg) {
  InitConfig ic;
  ic.gamma = cfg.adapter.gamma;
  ic.seed = derive_seed(cfg.seed, "init");
  ic.xi_rule = cfg.adapter.xi_rule;
  return ic;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json checked_manifest(const fs::path& path) {
  json m = load_manifest(path);
  if (m.value("schema", std::string()) != kManifestSchema) {
    throw FormatError("manifest schema mismatch in " + path.string() + ": expected " + kManifestSchema);
  }
  if (!m.contains("train")) throw FormatError("manifest " + path.string() + " has no train stage");
  return m;
}

}  // namespace

RunContext build_context(const RunConfig& cfg) {
  Rng task_rng(derive_seed(cfg.seed, "task"));
  if (cfg.task.family == TaskFamily::teacher) {
    TeacherTask t = make_lowrank_teacher_task(task_rng, cfg.task.teacher);
    return RunContext{std::move(t.network), std::move(t.train), std::move(t.eval)};
  }
  ClusterTask t = make_cluster_classification_task(task_rng, cfg.task.cluster);
  std::vector<LayerSpec> specs;
  std::size_t in = cfg.task.cluster.dims;
  for (std::size_t h : cfg.model.hidden) {
    specs.push_back(LayerSpec{in, h, cfg.model.activation, true});
    in = h;
  }
  specs.push_back(LayerSpec{in, cfg.task.cluster.classes, Activation::linear, true});
  Rng model_rng(derive_seed(cfg.seed, "model"));
  Network net = make_network(specs, LossKind::softmax_cross_entropy, model_rng, cfg.model.bias);
  return RunContext{std::move(net), std::move(t.train), std::move(t.eval)};
}

json plan_to_json(const RankPlan& plan) {
  json layers = json::array();
  for (const auto& r : plan.records) {
    layers.push_back({{"id", r.id},
                      {"m", r.m},
                      {"n", r.n},
                      {"importance", r.importance},
                      {"advantage", r.advantage},
                      {"budget", r.budget},
                      {"rank", r.rank}});
  }
  return {{"r_ref", plan.r_ref},
          {"layers", layers},
          {"total_budget", plan.total_budget()},
          {"allocated_params", plan.allocated_params()},
          {"lora_params", plan.lora_params()},
          {"param_deviation", plan.param_deviation()}};
}

json init_report_to_json(const InitReport& report) {
  json layers = json::array();
  for (const auto& l : report.layers) {
    layers.push_back({{"id", l.id},
                      {"rank", l.rank},
                      {"xi", l.xi},
                      {"abs_error", l.abs_error},
                      {"rel_error", l.rel_error},
                      {"projection_residual", l.projection_residual},
                      {"retries", l.retries}});
  }
  return {{"gamma", report.gamma}, {"xi_rule", to_string(report.xi_rule)}, {"layers", layers}};
}

json load_manifest(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse manifest " + path.string() + ": " + e.what());
  }
}

RunConfig config_from_manifest(const json& manifest) {
  if (manifest.value("schema", std::string()) != kManifestSchema) {
    throw FormatError(std::string("manifest schema mismatch: expected ") + kManifestSchema);
  }
  return parse_config(manifest.at("config_text").get<std::string>());
}

RunConfig load_run_config(const fs::path& path) {
  if (path.extension() == ".json") return config_from_manifest(load_manifest(path));
  return load_config(path);
}

ProbeResult cmd_probe(const RunConfig& cfg, const fs::path& dir) {
  cfg.validate();
  fs::create_directories(dir);
  const RunContext ctx = build_context(cfg);

  const auto t0 = std::chrono::steady_clock::now();
  ProbeResult probe;
  json stage;
  if (cfg.workers == 1) {
    probe = run_probe(ctx.net, ctx.train, cfg.probe.probe);
    stage["host_peak_bytes"] = probe.buffer_peak_bytes;
    stage["dropped_batches"] = 0;
  } else {
    ShardedStream stream(ctx.train, cfg.workers);
    DdpProbeConfig dc;
    dc.probe = cfg.probe.probe;
    DdpProbeResult d = ddp_probe(ctx.net, stream, WorkerTopology{cfg.workers}, dc);
    probe = std::move(d.result);
    stage["host_peak_bytes"] = d.host_peak_bytes;
    stage["device_peak_bytes"] = d.device_peak_bytes;
    stage["dropped_batches"] = d.dropped_batches;
  }
  const double elapsed = seconds_since(t0);

  {
    std::ofstream out(dir / artifact::probe, std::ios::binary);
    write_probe(out, probe);
  }
  stage["steps_used"] = probe.steps_used;
  stage["batches_used"] = probe.batches_used;
  stage["adaptive"] = probe.adaptive;

  json m;
  m["schema"] = kManifestSchema;
  m["versions"] = version_string();
  m["config_text"] = identity_text(cfg);
  m["seed"] = cfg.seed;
  m["label"] = cfg.display_label();
  m["family"] = to_string(cfg.task.family);
  m["method"] = to_string(cfg.adapter.method);
  m["workers"] = cfg.workers;
  m["probe"] = stage;
  m["timings"]["probe"] = elapsed;
  record_artifact(m, dir, artifact::probe);
  save_manifest(dir, m);
  return probe;
}

RankPlan cmd_allocate(const RunConfig& cfg, const fs::path& dir) {
  require_artifact(dir, artifact::probe, "allocate", "probe");
  json m = open_manifest(cfg, dir, "allocate");
  const RunContext ctx = build_context(cfg);
  const ProbeResult probe = load_probe(dir);

  RankPlan plan;
  if (cfg.adapter.method == Method::gora) {
    plan = plan_from_probe(ctx.net, probe, cfg.adapter.alloc);
  } else {
    plan = uniform_plan(layer_shapes(ctx.net, ctx.net.adapted_layers()), cfg.adapter.alloc.r_ref);
  }
  {
    std::ofstream out(dir / artifact::plan);
    write_plan_table(out, plan);
  }
  m["plan"] = plan_to_json(plan);
  record_artifact(m, dir, artifact::plan);
  save_manifest(dir, m);
  return plan;
}

InitReport cmd_init(const RunConfig& cfg, const fs::path& dir) {
  require_artifact(dir, artifact::probe, "init", "probe");
  require_artifact(dir, artifact::plan, "init", "allocate");
  json m = open_manifest(cfg, dir, "init");
  const RunContext ctx = build_context(cfg);
  const ProbeResult probe = load_probe(dir);
  const RankPlan plan = load_plan(dir);
  InitConfig ic = init_config(cfg);
  const AdapterSpec& spec = cfg.adapter.adapter;

  const auto t0 = std::chrono::steady_clock::now();
  AdapterSet adapters;
  InitReport report;
  json stage;
  if (cfg.adapter.method == Method::lora) {
    adapters = lora_initialize(plan, spec, ic.seed);
    report.gamma = 0.0;
    report.xi_rule = ic.xi_rule;
    for (const auto& [id, ad] : adapters) report.layers.push_back(LayerInitRecord{id, ad.rank(), 0, 0, 0, 0, 0});
  } else {
    PreparedInit prepared = prepare_gora_init(plan, probe, spec, ic);
    if (cfg.adapter.gamma_auto) {
      const AutotuneResult tuned =
          autotune_gamma(ctx.net, prepared, ctx.train.front(), ic.xi_rule, cfg.adapter.autotune);
      ic.gamma = tuned.gamma;
      stage["autotune"] = {{"gamma", tuned.gamma},
                           {"loss", tuned.loss},
                           {"candidates", tuned.candidates.size()},
                           {"skipped", tuned.skipped}};
    }
    adapters = apply_gamma(prepared, ic.gamma, ic.xi_rule);
    report = build_init_report(prepared, adapters, ic.gamma, ic.xi_rule);
    if (cfg.workers > 1) {
      const DdpInitResult d =
          ddp_allocate_and_init(ctx.net, probe, WorkerTopology{cfg.workers}, cfg.adapter.alloc, spec, ic);
      const std::uint64_t want = adapter_checksum(adapters);
      for (const auto& w : d.workers) {
        if (!(w.plan == plan) || adapter_checksum(w.adapters) != want) {
          throw NumericalError("init: worker " + std::to_string(w.worker) + " diverged from the root replica");
        }
      }
      stage["replicas_consistent"] = true;
    }
  }
  report.seconds = seconds_since(t0);

  save_adapters(dir / artifact::adapters_init, adapters);
  json rj = init_report_to_json(report);
  io::write_file(dir / artifact::init_report, rj.dump(2) + "\n");
  stage["report"] = rj;
  m["init"] = stage;
  m["timings"]["init"] = report.seconds;
  record_artifact(m, dir, artifact::adapters_init);
  record_artifact(m, dir, artifact::init_report);
  save_manifest(dir, m);
  return report;
}

TrainRecord cmd_train(const RunConfig& cfg, const fs::path& dir) {
  require_artifact(dir, artifact::adapters_init, "train", "init");
  json m = open_manifest(cfg, dir, "train");
  const RunContext ctx = build_context(cfg);
  AdapterSet adapters = load_adapters(dir / artifact::adapters_init);
  check_adapters(ctx.net, adapters);

  TrainOptions opts;
  opts.steps = cfg.train.steps;
  opts.eval = &ctx.eval;
  opts.seed = cfg.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainRecord rec = train(ctx.net, adapters, ctx.train, cfg.train.optim, opts);
  const double elapsed = seconds_since(t0);

  {
    std::ofstream out(dir / artifact::train_csv);
    write_train_csv(out, rec);
  }
  save_adapters(dir / artifact::adapters_final, adapters);
  m["train"] = {{"steps", rec.steps.size()},
                {"first_batch_loss", rec.first_batch_loss},
                {"initial_eval_loss", rec.initial_eval_loss},
                {"final_eval_loss", rec.final_eval_loss},
                {"record", artifact::train_csv}};
  m["timings"]["train"] = elapsed;
  record_artifact(m, dir, artifact::train_csv);
  record_artifact(m, dir, artifact::adapters_final);
  save_manifest(dir, m);
  return rec;
}

json cmd_pipeline(const RunConfig& cfg, const fs::path& dir) {
  cmd_probe(cfg, dir);
  cmd_allocate(cfg, dir);
  cmd_init(cfg, dir);
  cmd_train(cfg, dir);
  return load_manifest(dir / artifact::manifest);
}

std::vector<ReportRow> summarize_manifests(const std::vector<fs::path>& manifests) {
  if (manifests.empty()) throw ConfigError("report: at least one manifest is required");
  struct Acc {
    std::vector<double> final_loss, first_loss, params;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (const auto& path : manifests) {
    const json m = checked_manifest(path);
    Acc& a = groups[{m.at("family").get<std::string>(), m.at("label").get<std::string>()}];
    a.final_loss.push_back(m.at("train").at("final_eval_loss").get<double>());
    a.first_loss.push_back(m.at("train").at("first_batch_loss").get<double>());
    a.params.push_back(m.at("plan").at("allocated_params").get<double>());
  }
  std::vector<ReportRow> rows;
  for (const auto& [key, a] : groups) {
    ReportRow r;
    r.family = key.first;
    r.label = key.second;
    r.runs = a.final_loss.size();
    r.final_mean = mean(a.final_loss);
    r.final_std = sample_std(a.final_loss);
    r.first_mean = mean(a.first_loss);
    r.first_std = sample_std(a.first_loss);
    r.params_mean = mean(a.params);
    rows.push_back(r);
  }
  return rows;
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream o;
  std::string family;
  char buf[256];
  for (const auto& r : rows) {
    if (r.family != family) {
      family = r.family;
      o << (o.tellp() > 0 ? "\n" : "") << "[" << family << "]\n";
      std::snprintf(buf, sizeof buf, "%-20s %5s %26s %26s %10s\n", "label", "runs", "final eval loss",
                    "first batch loss", "params");
      o << buf;
    }
    std::snprintf(buf, sizeof buf, "%-20s %5zu %12.6g +- %-10.4g %12.6g +- %-10.4g %10.0f\n", r.label.c_str(),
                  r.runs, r.final_mean, r.final_std, r.first_mean, r.first_std, r.params_mean);
    o << buf;
  }
  return o.str();
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream o;
  o << "family,label,runs,final_eval_mean,final_eval_std,first_batch_mean,first_batch_std,params\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.family.c_str(),
                  r.label.c_str(), r.runs, r.final_mean, r.final_std, r.first_mean, r.first_std, r.params_mean);
    o << buf;
  }
  return o.str();
}

std::string curves_csv(const std::vector<fs::path>& manifests) {
  std::ostringstream o;
  o << "run,family,label,seed,step,loss,lr\n";
  for (const auto& path : manifests) {
    const json m = checked_manifest(path);
    const fs::path csv = path.parent_path() / m.at("train").at("record").get<std::string>();
    std::istringstream in(io::read_file(csv));
    std::string line;
    std::getline(in, line);  // header
    const std::string prefix = path.parent_path().string() + "," + m.at("family").get<std::string>() + "," +
                               m.at("label").get<std::string>() + "," +
                               std::to_string(m.at("seed").get<std::uint64_t>()) + ",";
    while (std::getline(in, line)) {
      if (!line.empty()) o << prefix << line << "\n";
    }
  }
  return o.str();
}

}  // namespace gora
