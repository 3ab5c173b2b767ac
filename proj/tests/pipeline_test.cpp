#include "gora/io.hpp"
#include "gora/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace gora {
namespace {

namespace fs = std::filesystem;

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("gora_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  static RunConfig small(const std::string& extra = "") {
    return parse_config(
        "task.dims = 12,10,8\n"
        "task.r_true = 2\n"
        "task.train_samples = 256\n"
        "task.eval_samples = 64\n"
        "task.batch_size = 16\n"
        "task.layer_decay = 0.5\n"
        "adapter.r_ref = 4\n"
        "probe.steps = 8\n"
        "optim.steps = 20\n"
        "optim.lr = 0.005\n" +
        extra);
  }

  fs::path root_;
};

TEST_F(PipelineTest, WritesAllArtifacts) {
  const nlohmann::json m = cmd_pipeline(small(), root_ / "run");
  for (const char* name : {artifact::probe, artifact::plan, artifact::adapters_init, artifact::init_report,
                           artifact::train_csv, artifact::adapters_final}) {
    EXPECT_TRUE(fs::exists(root_ / "run" / name)) << name;
    EXPECT_EQ(m["checksums"][name].get<std::string>(), io::file_checksum(root_ / "run" / name));
  }
  EXPECT_EQ(m["schema"], kManifestSchema);
  EXPECT_TRUE(m["timings"].contains("init"));
  EXPECT_EQ(m["train"]["steps"], 20);
}

TEST_F(PipelineTest, RerunGivesIdenticalChecksums) {
  const auto a = cmd_pipeline(small(), root_ / "a");
  const auto b = cmd_pipeline(small(), root_ / "b");
  EXPECT_EQ(a["checksums"], b["checksums"]);
  const auto c = cmd_pipeline(small("seed = 1\n"), root_ / "c");
  EXPECT_NE(a["checksums"], c["checksums"]);
}

TEST_F(PipelineTest, GammaZeroEqualsZeroInitLora) {
  const std::string pinned = "adapter.r_min = 4\nadapter.r_max = 4\n";
  cmd_pipeline(small(pinned + "adapter.gamma = 0\n"), root_ / "gora");
  cmd_pipeline(small(pinned + "adapter.method = lora\n"), root_ / "lora");
  EXPECT_EQ(io::read_file(root_ / "gora" / artifact::adapters_init),
            io::read_file(root_ / "lora" / artifact::adapters_init));
  EXPECT_EQ(io::read_file(root_ / "gora" / artifact::adapters_final),
            io::read_file(root_ / "lora" / artifact::adapters_final));
}

TEST_F(PipelineTest, StageOrderErrors) {
  const RunConfig cfg = small();
  EXPECT_THROW(cmd_allocate(cfg, root_ / "x"), StageOrderError);
  cmd_probe(cfg, root_ / "x");
  EXPECT_THROW(cmd_init(cfg, root_ / "x"), StageOrderError);
  try {
    cmd_train(cfg, root_ / "x");
    FAIL();
  } catch (const StageOrderError& e) {
    EXPECT_NE(std::string(e.what()).find("init"), std::string::npos) << e.what();
  }
  cmd_allocate(cfg, root_ / "x");
  EXPECT_THROW(cmd_init(small("seed = 9\n"), root_ / "x"), StageOrderError);
}

TEST_F(PipelineTest, StagesReplayFromArtifacts) {
  const RunConfig cfg = small();
  const auto first = cmd_pipeline(cfg, root_ / "run");
  cmd_train(cfg, root_ / "run");
  const auto again = load_manifest(root_ / "run" / artifact::manifest);
  EXPECT_EQ(first["checksums"], again["checksums"]);
}

TEST_F(PipelineTest, ManifestReproducesRun) {
  RunConfig cfg = small("adapter.gamma = auto\nprobe.steps = auto\n");
  cfg.out_dir = (root_ / "orig").string();
  const auto m = cmd_pipeline(cfg, root_ / "orig");
  RunConfig again = load_run_config(root_ / "orig" / artifact::manifest);
  const auto m2 = cmd_pipeline(again, root_ / "copy");
  EXPECT_EQ(m["checksums"], m2["checksums"]);
  EXPECT_TRUE(m["init"].contains("autotune"));
}

TEST_F(PipelineTest, SimulatedWorkersAgree) {
  const auto m = cmd_pipeline(small("topology.workers = 2\n"), root_ / "w2");
  EXPECT_TRUE(m["init"]["replicas_consistent"].get<bool>());
  EXPECT_EQ(m["probe"]["batches_used"], 16);
}

TEST_F(PipelineTest, ClusterFamilyRuns) {
  const RunConfig cfg = parse_config(
      "task.family = cluster\ntask.input_dim = 6\ntask.classes = 3\nmodel.hidden = 8\n"
      "task.train_samples = 192\ntask.eval_samples = 60\ntask.batch_size = 16\nprobe.steps = 4\n"
      "adapter.r_ref = 2\noptim.steps = 30\noptim.lr = 0.01\n");
  const auto m = cmd_pipeline(cfg, root_ / "cl");
  EXPECT_LT(m["train"]["final_eval_loss"].get<double>(), m["train"]["initial_eval_loss"].get<double>());
}

TEST_F(PipelineTest, ReportGroupsAndAggregates) {
  std::vector<fs::path> manifests;
  std::vector<double> gora_losses;
  for (int s = 0; s < 3; ++s) {
    for (const char* method : {"gora", "lora"}) {
      const fs::path dir = root_ / (std::string(method) + std::to_string(s));
      const auto m = cmd_pipeline(small("seed = " + std::to_string(s) + "\nadapter.method = " + method + "\n"), dir);
      manifests.push_back(dir / artifact::manifest);
      if (std::string(method) == "gora") gora_losses.push_back(m["train"]["final_eval_loss"].get<double>());
    }
  }
  const auto rows = summarize_manifests(manifests);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].label, "gora");
  EXPECT_EQ(rows[0].runs, 3u);
  const double mean = (gora_losses[0] + gora_losses[1] + gora_losses[2]) / 3.0;
  double var = 0.0;
  for (double l : gora_losses) var += (l - mean) * (l - mean);
  EXPECT_NEAR(rows[0].final_mean, mean, 1e-12 * mean);
  EXPECT_NEAR(rows[0].final_std, std::sqrt(var / 2.0), 1e-9 * mean);

  const auto single = summarize_manifests({manifests.front()});
  EXPECT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].final_std, 0.0);

  const std::string curves = curves_csv(manifests);
  std::size_t lines = 0;
  for (char ch : curves) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 6u * 20u);
  EXPECT_NE(format_report(rows).find("[teacher]"), std::string::npos);
}

TEST_F(PipelineTest, ReportSectionsAndSchema) {
  const auto t = cmd_pipeline(small(), root_ / "t");
  const RunConfig cl = parse_config(
      "task.family = cluster\ntask.input_dim = 6\ntask.classes = 3\nmodel.hidden = 8\n"
      "task.train_samples = 192\ntask.batch_size = 16\nprobe.steps = 4\nadapter.r_ref = 2\noptim.steps = 5\n");
  cmd_pipeline(cl, root_ / "c");
  const std::string text =
      format_report(summarize_manifests({root_ / "t" / artifact::manifest, root_ / "c" / artifact::manifest}));
  EXPECT_NE(text.find("[teacher]"), std::string::npos);
  EXPECT_NE(text.find("[cluster]"), std::string::npos);

  nlohmann::json bad = t;
  bad["schema"] = "something-else/9";
  io::write_file(root_ / "bad.json", bad.dump());
  EXPECT_THROW(summarize_manifests({root_ / "bad.json"}), FormatError);
  EXPECT_THROW(summarize_manifests({}), ConfigError);
}

}  // namespace
}  // namespace gora
