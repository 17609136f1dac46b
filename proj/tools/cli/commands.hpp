#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "kifsod/efficiency.hpp"
#include "kifsod/ki_init.hpp"
#include "kifsod/pretrain.hpp"
#include "kifsod/synthgen.hpp"
#include "kifsod/transfer.hpp"

namespace kifsod::cli {

namespace fs = std::filesystem;

/// Process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Output paths are relative to $KIFSOD_OUT when it is set, else to the working directory.
fs::path output_root();
fs::path resolve_output(const fs::path& p);
/// Input paths: used as given when they exist, otherwise looked up under $KIFSOD_OUT.
fs::path resolve_input(const fs::path& p);

struct GenDataOptions {
  fs::path out = "data";
  DatasetSpec spec;
  int base_train = 600;
  int base_test = 100;
  int novel_pool = 60;
  int test = 100;
  int k = 10;
  std::vector<std::uint64_t> episodes{0, 1, 2, 3, 4};
  bool force = false;
};

struct PretrainOptions {
  fs::path data = "data";
  fs::path out = "pretrain";
  TrainConfig train;
  bool force = false;
};

struct TransferOptions {
  fs::path checkpoint = "pretrain/base.ckpt";
  fs::path data = "data";
  fs::path out;  // default: runs/<preset>_<init>
  InitMode init = InitMode::alr;
  std::string preset = "ptf_ki";
  std::vector<std::uint64_t> seeds{0};
  int iterations = 3000;
  std::optional<double> global_lr;
  std::optional<int> batch_size;
  std::optional<double> dropout_rate;
  std::optional<std::string> batch_mode;
  SpeedProtocol protocol;
  int views = 10;
  bool early_stop = true;
  bool force = false;
};

struct FlopsOptions {
  std::optional<fs::path> checkpoint;
  std::string preset = "ptf_ki";
  int proposal_cap_infer = 100;
  std::optional<fs::path> out;
};

struct ReportOptions {
  std::vector<fs::path> runs;
  fs::path out = "report";
  bool force = false;
};

/// Pool directories written by gen-data.
inline constexpr const char* kBaseTrain = "base_train";
inline constexpr const char* kBaseTest = "base_test";
inline constexpr const char* kNovelPool = "novel_pool";
inline constexpr const char* kTest = "test";
fs::path episode_dir(const fs::path& data, std::uint64_t seed);

void cmd_gen_data(const GenDataOptions& o);
/// Returns the held-out base AP50 it prints.
double cmd_pretrain(const PretrainOptions& o);
/// One result directory per seed under the output directory; returns their paths.
std::vector<fs::path> cmd_transfer(const TransferOptions& o);
/// Early-stopped transfer that only records the convergence measurement.
std::vector<fs::path> cmd_speed(const TransferOptions& o);
nlohmann::json cmd_flops(const FlopsOptions& o);
nlohmann::json cmd_report(const ReportOptions& o);

/// Parses the command line and runs the selected subcommand; returns the process exit code.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace kifsod::cli
