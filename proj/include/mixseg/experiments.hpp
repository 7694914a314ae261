#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixseg/datagen.hpp"
#include "mixseg/model.hpp"
#include "mixseg/patch.hpp"
#include "mixseg/training.hpp"

namespace mixseg {

struct SweepConfig {
  std::vector<Mode> modes = {Mode::kS, Mode::kSC, Mode::kSCStar};
  std::vector<double> percent_grid = {0, 1, 2.5, 5, 7.5, 10, 15, 20, 25, 30, 40, 50, 75, 100};
  int repeats = 5;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t base_seed = 0;
  int jobs = 1;
  std::vector<SplitOverride> overrides;

  void validate() const;
};

struct RunSpec {
  Mode mode = Mode::kS;
  double percent = 0.0;
  int repeat = 0;
  std::uint64_t schedule_seed = 0;  // mode-independent: modes share subsets
  std::uint64_t train_seed = 0;
  bool degenerate = false;  // scheduled without any training data
};

// Enumerates every (mode, percent, repeat) cell with its derived seeds.
std::vector<RunSpec> plan_sweep(const SweepConfig& config);

struct RunResult {
  std::string mode;
  double percent = 0.0;
  int repeat = 0;
  std::uint64_t seed = 0;
  double f1_macro = 0.0;
  double f1_micro = 0.0;
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  double wall_seconds = 0.0;
  std::vector<std::int64_t> confusion;  // flattened CxC, filled by head runs
  std::vector<EpochStats> history;
};

struct RunFailure {
  std::string mode;
  double percent = 0.0;
  int repeat = 0;
  std::string error;
};

struct SweepOutcome {
  std::vector<RunResult> results;
  std::vector<RunFailure> failures;
};

// Pools plus the fixed evaluation splits the sweep reuses for every run.
struct SweepDataset {
  PatchPools train;
  std::vector<SegSample> val;   // checkpoint selection
  std::vector<SegSample> test;  // segmentation evaluation
};

// Trains and evaluates every planned cell on the fixed test split. A failed
// run is recorded and skipped. Runs are independent and may execute on
// config.jobs threads; results are deterministic for a fixed base seed.
SweepOutcome run_sweep(const SweepDataset& dataset, const SweepConfig& config);

// Classifier-head settings (S2+C2, S2+C2*, S2*+C2): the classification pool
// is split in half (seeded by the base seed); percentages refer to the full
// pool, training samples come from one half and accuracy plus the confusion
// matrix are computed on the other.
SweepOutcome run_cls_head_sweep(const SweepDataset& dataset, const SweepConfig& config);

enum class NormalizeTo { kNone, kS100, kC50 };

// Writes results.csv (raw rows, always), results_normalized.csv when a
// baseline is requested (value / mean of the same mode's metric at the
// baseline percentage), summary.csv with mean and standard deviation per
// (mode, percent), per-run history files, wall-clock timings, and
// gnuplot-ready plot data.
void write_report(const std::vector<RunResult>& rows, int num_classes, NormalizeTo normalize,
                  const std::filesystem::path& out_dir);

void write_failures_csv(const std::vector<RunFailure>& failures, const std::filesystem::path& path);

std::vector<RunResult> read_results_csv(const std::filesystem::path& path);

std::string run_id(const RunResult& row);

}  // namespace mixseg
