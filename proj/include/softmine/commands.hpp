#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "softmine/config.hpp"
#include "softmine/lmc_check.hpp"

namespace softmine {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitDiverged = 3;

/// Entry point shared by the executable and the tests; `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Trains one field and writes the run directory:
///   convergence.csv, final.ckpt, final.png, error.png, metadata.json, run.cfg
/// plus walkers.csv and images/ when requested.
int cmd_fit(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);

struct BenchRun {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<ConvergenceRecord> records;
  std::optional<std::int64_t> iterations_to_target;
  double target_db = 0.0;
};

struct BenchRow {
  std::string variant;
  std::size_t runs = 0;
  std::size_t failed = 0;
  std::vector<double> psnr_at_checkpoints;  // NaN where no run reached it
  double final_psnr = 0.0;
  std::optional<double> mean_iterations_to_target;
  std::optional<double> speedup;
};

struct BenchSummary {
  std::vector<std::int64_t> checkpoints;
  std::vector<BenchRun> runs;
  std::vector<BenchRow> rows;
  std::size_t failures() const;
};

/// Runs every variant × seed (seed offsets 0..seeds-1 from the variant's
/// seed), up to `jobs` at a time. The target for seed k is the baseline's
/// final PSNR on seed k unless the baseline sets target_psnr.
BenchSummary run_bench(const BenchPlan& plan, int jobs, std::ostream* log = nullptr);
void write_bench_summary_csv(std::ostream& os, const BenchSummary& summary);
int cmd_bench(const BenchPlan& plan, int jobs, std::ostream& out, std::ostream& err);

int cmd_lmc_check(const StationarityConfig& cfg, const std::optional<std::filesystem::path>& report, std::ostream& out,
                  std::ostream& err);

struct RenderOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path out = "render.png";
  std::optional<int> width, height;
  /// When set, the raster defaults to its size and PSNR against it is printed.
  std::optional<std::filesystem::path> reference;
};
int cmd_render(const RenderOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace softmine
