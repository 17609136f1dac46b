#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "kifsod/checkpoint.hpp"
#include "kifsod/dataset_io.hpp"
#include "kifsod/evalkit.hpp"

using namespace kifsod;
namespace fs = std::filesystem;
using kifsod::cli::run;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("kifsod_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  return dir;
}

std::vector<std::string> tiny_data(const fs::path& out) {
  return {"gen-data", "--out", out.string(), "--base_train", "30",  "--base_test", "8", "--novel_pool", "16", "--test",
          "8",        "--k",   "2",          "--episodes",   "0,1", "--seed",      "7"};
}

std::vector<std::string> tiny_pretrain(const fs::path& data, const fs::path& out) {
  return {"pretrain",
          "--data",
          data.string(),
          "--out",
          out.string(),
          "--iterations",
          "12",
          "--log_interval",
          "6",
          "--warmup_iterations",
          "2",
          "--lr_steps",
          "10",
          "--batch_size",
          "4"};
}

// One benchmark and one base model shared by the tests of a process.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("pipeline"));
    ASSERT_EQ(run(tiny_data(*root_ / "data")), 0);
    ASSERT_EQ(run(tiny_pretrain(*root_ / "data", *root_ / "pretrain")), 0);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }
  static fs::path data() { return *root_ / "data"; }
  static fs::path ckpt() { return *root_ / "pretrain" / "base.ckpt"; }
  static fs::path dir(const std::string& name) { return *root_ / name; }

  static std::vector<std::string> transfer(const std::string& preset, const std::string& init, const fs::path& out,
                                           const std::string& iterations = "0") {
    return {"transfer",
            "--checkpoint",
            ckpt().string(),
            "--data",
            data().string(),
            "--out",
            out.string(),
            "--preset",
            preset,
            "--init",
            init,
            "--iterations",
            iterations,
            "--eval_interval",
            "2",
            "--patience",
            "2",
            "--views",
            "1",
            "--batch_size",
            "2"};
  }

  static fs::path* root_;
};

fs::path* CliPipeline::root_ = nullptr;

}  // namespace

TEST(CliGenData, ManifestListsClassesPoolsAndEpisodes) {
  const fs::path out = scratch("gen");
  ASSERT_EQ(run(tiny_data(out)), 0);
  const json m = read_json(out / "manifest.json");
  ASSERT_EQ(m.at("classes").size(), 12u);
  int novel = 0;
  for (const auto& c : m.at("classes")) novel += c.at("split") == "novel";
  EXPECT_EQ(novel, 4);
  EXPECT_EQ(m.at("pools").at("test").at("images"), 8);
  ASSERT_EQ(m.at("episodes").size(), 2u);
  for (const auto& e : m.at("episodes"))
    for (const auto& [cls, n] : e.at("per_class_instance_count").items()) EXPECT_EQ(n, 2) << cls;

  const FewShotSet fs1 = load_fewshot_set(cli::episode_dir(out, 1));
  EXPECT_EQ(fs1.k, 2);
  EXPECT_EQ(load_dataset(out / "test").images.size(), 8u);
  fs::remove_all(out);
}

TEST(CliGenData, SameSeedIsByteIdentical) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(run(tiny_data(a)), 0);
  ASSERT_EQ(run(tiny_data(b)), 0);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(CliGenData, NonEmptyOutputNeedsForce) {
  const fs::path out = scratch("gen_force");
  fs::create_directories(out);
  std::ofstream(out / "keep.txt") << "x";
  EXPECT_EQ(run(tiny_data(out)), cli::kUsage);
  EXPECT_TRUE(fs::exists(out / "keep.txt"));
  auto args = tiny_data(out);
  args.push_back("--force");
  EXPECT_EQ(run(args), 0);
  EXPECT_FALSE(fs::exists(out / "keep.txt"));
  fs::remove_all(out);
}

TEST(CliGenData, HonorsOutputRootEnvironment) {
  const fs::path root = scratch("env_root");
  fs::create_directories(root);
  ::setenv("KIFSOD_OUT", root.c_str(), 1);
  auto args = tiny_data("relative_data");
  const int rc = run(args);
  ::unsetenv("KIFSOD_OUT");
  EXPECT_EQ(rc, 0);
  EXPECT_TRUE(fs::exists(root / "relative_data" / "manifest.json"));
  EXPECT_FALSE(fs::exists(fs::current_path() / "relative_data"));
  fs::remove_all(root);
}

TEST(CliExitCodes, UsageDataAndHelp) {
  EXPECT_EQ(run({"no-such-command"}), cli::kUsage);
  EXPECT_EQ(run({"gen-data", "--k", "zero"}), cli::kUsage);
  EXPECT_EQ(run({"gen-data", "--out", scratch("bad_k").string(), "--k", "0"}), cli::kUsage);
  EXPECT_EQ(run({"pretrain", "--data", scratch("missing").string(), "--out", scratch("p").string()}), cli::kData);
  EXPECT_EQ(run({"report", scratch("missing_runs").string()}), cli::kData);
  EXPECT_EQ(run({"flops", "--preset", "tfa"}), cli::kUsage);
  EXPECT_EQ(run({"--help"}), cli::kOk);
}

TEST(CliExitCodes, BinaryReturnsCodes) {
  const auto status = [](const std::string& args) {
    const int raw = std::system((std::string(KIFSOD_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status("flops"), 0);
  EXPECT_EQ(status("transfer --iterations 7"), 1);
  EXPECT_EQ(status("transfer --data " + scratch("nowhere").string()), 2);
}

TEST_F(CliPipeline, PretrainWritesLoadableCheckpointAndConsistentAp) {
  const Checkpoint ck = load_checkpoint(ckpt());
  const json manifest = read_json(data() / "manifest.json");
  const DatasetSpec spec = manifest.at("spec").get<DatasetSpec>();
  EXPECT_EQ(ck.params.class_ids, spec.base_class_ids);
  EXPECT_EQ(ck.header.at("config").at("train").at("iterations"), 12);

  // AP recomputed from the dumped detections matches the reported one.
  const auto held_out = load_dataset(data() / "base_test").images;
  std::vector<DetectionRecord> dets;
  const json dumped = read_json(dir("pretrain") / "detections.json");
  EXPECT_EQ(dumped.at("pool"), "base_test");
  for (const auto& d : dumped.at("detections")) {
    const auto& b = d.at("box");
    dets.push_back({d.at("image_id").get<int>(),
                    Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                    d.at("score").get<double>(), d.at("class_id").get<ClassId>()});
  }
  const MetricReport again = compute_ap(dets, held_out, 0.5, ClassSplit{spec.base_class_ids, {}});
  const json report = read_json(dir("pretrain") / "pretrain.json");
  EXPECT_NEAR(again.bap, report.at("metrics").at("bAP").get<double>(), 1e-9);
  EXPECT_TRUE(report.at("hypersphere").contains("feature_length_mean"));

  const std::string log = slurp(dir("pretrain") / "train_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), "iteration,L_rpn,L_cls,L_loc");
}

TEST_F(CliPipeline, CosineClassifierIsRecorded) {
  auto args = tiny_pretrain(data(), dir("pretrain_cos"));
  args.insert(args.end(), {"--classifier", "cosine"});
  ASSERT_EQ(run(args), 0);
  const Checkpoint ck = load_checkpoint(dir("pretrain_cos") / "base.ckpt");
  EXPECT_EQ(ck.params.classifier_kind, ClassifierKind::cosine);
  EXPECT_EQ(ck.header.at("config").at("train").at("classifier_kind"), "cosine");
}

TEST_F(CliPipeline, ZeroIterationTransferMatchesDirectEvaluation) {
  ASSERT_EQ(run(transfer("ptf", "random", dir("random0"))), 0);
  const fs::path seed_dir = dir("random0") / "seed_0";
  const json r = read_json(seed_dir / "result.json");
  const auto test = load_dataset(data() / "test").images;
  const DatasetSpec spec = read_json(data() / "manifest.json").at("spec").get<DatasetSpec>();
  const MetricReport direct = evaluate_ap50(load_checkpoint(seed_dir / "initial.ckpt").params, test, spec.split());
  EXPECT_NEAR(r.at("initial").at("nAP50").get<double>(), direct.nap, 1e-9);
  EXPECT_NEAR(r.at("metrics").at("nAP").get<double>(), direct.nap, 1e-9);
  EXPECT_EQ(r.at("iterations_run"), 0);
  EXPECT_EQ(r.at("config").at("init"), "random");
}

TEST_F(CliPipeline, AlrTransferRecordsRatioAndCurve) {
  ASSERT_EQ(run(transfer("ptf_ki", "alr", dir("alr"), "4")), 0);
  const json r = read_json(dir("alr") / "seed_0" / "result.json");
  EXPECT_EQ(r.at("ki").at("mode"), "alr");
  EXPECT_GT(r.at("ki").at("ratio").get<double>(), 0.0);
  EXPECT_TRUE(r.at("metrics").at("ar").contains("100"));
  const std::string curve = slurp(dir("alr") / "seed_0" / "curve.csv");
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "iteration,bAP50,nAP50");
  EXPECT_TRUE(fs::exists(dir("alr") / "seed_0" / "final.ckpt"));
}

TEST_F(CliPipeline, TransferIsDeterministicAcrossConcurrentSeeds) {
  auto args = transfer("ptf_ki", "alr", dir("det_a"), "4");
  args.insert(args.end(), {"--seeds", "0,1"});
  ASSERT_EQ(run(args), 0);
  args[6] = dir("det_b").string();
  ASSERT_EQ(run(args), 0);
  for (const char* seed : {"seed_0", "seed_1"})
    for (const char* file : {"result.json", "curve.csv", "final.ckpt"})
      EXPECT_EQ(slurp(dir("det_a") / seed / file), slurp(dir("det_b") / seed / file)) << seed << "/" << file;
  EXPECT_NE(slurp(dir("det_a") / "seed_0" / "result.json"), slurp(dir("det_a") / "seed_1" / "result.json"));
}

TEST_F(CliPipeline, RejectsCheckpointOfAnotherSplit) {
  const fs::path other = dir("other.ckpt");
  save_checkpoint(other, init_detector({}, {0, 1, 2}, ClassifierKind::linear, 1));
  auto args = transfer("ptf", "alr", dir("mismatch"));
  args[2] = other.string();
  EXPECT_EQ(run(args), cli::kData);
}

TEST_F(CliPipeline, ReportMergesRunsWithEqualFlops) {
  ASSERT_EQ(run(transfer("ptf", "random", dir("runs/ptf_random"))), 0);
  ASSERT_EQ(run(transfer("ptf_ki", "alr", dir("runs/ptf_ki_alr"))), 0);
  ASSERT_EQ(run({"report", dir("runs").string(), "--out", dir("report").string()}), 0);
  const json report = read_json(dir("report") / "report.json");
  ASSERT_EQ(report.at("rows").size(), 2u);
  EXPECT_EQ(report.at("rows")[0].at("flops_train"), report.at("rows")[1].at("flops_train"));
  EXPECT_EQ(report.at("rows")[0].at("flops_infer"), report.at("rows")[1].at("flops_infer"));
  EXPECT_EQ(report.at("hypersphere").size(), 2u);
  EXPECT_TRUE(fs::exists(dir("report") / "hypersphere.csv"));
  EXPECT_TRUE(fs::exists(dir("report") / "report.csv"));
  EXPECT_EQ(std::distance(fs::directory_iterator(dir("report") / "curves"), fs::directory_iterator{}), 2);
}

TEST_F(CliPipeline, ReportRefusesMixedBenchmarks) {
  ASSERT_EQ(run(transfer("ptf", "random", dir("mixed/a"))), 0);
  fs::create_directories(dir("mixed/b/seed_0"));
  json r = read_json(dir("mixed/a/seed_0/result.json"));
  r["benchmark"]["k"] = 5;
  std::ofstream(dir("mixed/b/seed_0/result.json")) << r.dump();
  fs::copy_file(dir("mixed/a/seed_0/curve.csv"), dir("mixed/b/seed_0/curve.csv"));
  EXPECT_EQ(run({"report", dir("mixed").string(), "--out", dir("mixed_report").string()}), cli::kData);
}

TEST(CliFlops, PresetsShareCounts) {
  cli::FlopsOptions a, b;
  a.preset = "ptf";
  b.preset = "ptf_ki";
  const json ja = cli::cmd_flops(a), jb = cli::cmd_flops(b);
  EXPECT_EQ(ja.at("train_forward").at("total"), jb.at("train_forward").at("total"));
  EXPECT_EQ(ja.at("inference").at("total"), jb.at("inference").at("total"));
}
