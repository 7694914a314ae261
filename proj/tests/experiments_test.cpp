#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "mixseg/experiments.hpp"
#include "mixseg/preprocess.hpp"

using namespace mixseg;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("mixseg_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<SegSample> all_tiles_as_seg(const WsiRecord& wsi, int side) {
  std::vector<SegSample> tiles;
  for (int r = 0; r + side <= wsi.image.height; r += side) {
    for (int c = 0; c + side <= wsi.image.width; c += side) {
      tiles.push_back({crop(wsi.image, r, c, side), crop(wsi.mask, r, c, side), {wsi.id, r, c, "tile"}});
    }
  }
  return tiles;
}

SweepDataset tiny_dataset(int patch_side, std::uint64_t seed) {
  SynthConfig synth;
  synth.num_wsis = 3;
  synth.side = 4 * patch_side;
  synth.num_classes = 3;
  synth.seed = seed;
  auto records = synth_dataset(synth);

  PrepConfig prep;
  prep.patch_side = patch_side;
  SweepDataset dataset;
  for (int w = 0; w < 2; ++w) {
    auto extraction = extract_tiles(records[static_cast<std::size_t>(w)], prep);
    for (auto& s : extraction.pools.seg) dataset.train.seg.push_back(std::move(s));
    for (auto& s : extraction.pools.cls) dataset.train.cls.push_back(std::move(s));
  }
  auto held_out = all_tiles_as_seg(records[2], patch_side);
  dataset.val.assign(held_out.begin(), held_out.begin() + 4);
  dataset.test.assign(held_out.begin() + 4, held_out.end());
  return dataset;
}

SweepConfig tiny_config(int patch_side) {
  SweepConfig config;
  config.modes = {Mode::kS, Mode::kSC};
  config.percent_grid = {50, 100};
  config.repeats = 1;
  config.model.num_classes = 3;
  config.model.input_size = patch_side;
  config.model.widths = {4, 4, 8, 8};
  config.train.epochs = 2;
  config.train.batch_size = 8;
  config.base_seed = 31;
  return config;
}

}  // namespace

TEST_CASE("the default plan enumerates 14 x 3 x 5 runs with degenerate cells flagged") {
  SweepConfig config;
  auto specs = plan_sweep(config);
  CHECK(specs.size() == 14 * 3 * 5);
  CHECK(config.repeats == 5);
  int degenerate = 0;
  for (const auto& spec : specs) {
    if (spec.degenerate) {
      ++degenerate;
      CHECK(spec.mode == Mode::kS);
      CHECK(spec.percent == 0.0);
    }
  }
  CHECK(degenerate == 5);
}

TEST_CASE("plans share schedule seeds across modes but not train seeds") {
  SweepConfig config;
  config.modes = {Mode::kS, Mode::kSC, Mode::kSCStar};
  config.percent_grid = {10};
  config.repeats = 1;
  auto specs = plan_sweep(config);
  REQUIRE(specs.size() == 3);
  CHECK(specs[0].schedule_seed == specs[1].schedule_seed);
  CHECK(specs[1].schedule_seed == specs[2].schedule_seed);
  CHECK(specs[0].train_seed != specs[1].train_seed);
}

TEST_CASE("a small sweep is reproducible bitwise, regardless of the job count") {
  const int side = 32;
  auto dataset = tiny_dataset(side, 8);
  auto config = tiny_config(side);

  auto first = run_sweep(dataset, config);
  config.jobs = 2;
  auto second = run_sweep(dataset, config);
  REQUIRE(first.failures.empty());
  REQUIRE(second.failures.empty());
  REQUIRE(first.results.size() == second.results.size());
  CHECK(first.results.size() == 4);

  TempDir dir_a, dir_b;
  write_report(first.results, 3, NormalizeTo::kS100, dir_a.path);
  write_report(second.results, 3, NormalizeTo::kS100, dir_b.path);
  CHECK(slurp(dir_a.path / "results.csv") == slurp(dir_b.path / "results.csv"));
  CHECK(slurp(dir_a.path / "results_normalized.csv") == slurp(dir_b.path / "results_normalized.csv"));
  CHECK(slurp(dir_a.path / "summary.csv") == slurp(dir_b.path / "summary.csv"));
  CHECK(!slurp(dir_a.path / "results.csv").empty());
}

TEST_CASE("classifier-head sweep trains on one half and scores the other") {
  const int side = 32;
  auto dataset = tiny_dataset(side, 9);
  auto config = tiny_config(side);
  config.percent_grid = {0, 50};

  auto outcome = run_cls_head_sweep(dataset, config);
  REQUIRE(outcome.failures.empty());
  CHECK(outcome.results.size() == 6);  // three settings x two percentages

  const int eval_half = static_cast<int>(dataset.train.cls.size()) -
                        static_cast<int>(dataset.train.cls.size() + 1) / 2;
  for (const auto& row : outcome.results) {
    CHECK(row.accuracy >= 0.0);
    CHECK(row.accuracy <= 1.0);
    REQUIRE(row.confusion.size() == 9);
    std::int64_t total = 0;
    for (std::int64_t cell : row.confusion) total += cell;
    CHECK(total == eval_half);
  }
}

TEST_CASE("head schedules follow their percentage rules inside the sweep") {
  // Re-derive the schedules the runner used and check the counts.
  const int seg_pool = 40, cls_pool = 30;
  auto at = [&](Mode mode, double c) {
    return split_schedule(seg_pool, cls_pool, mode, c, 0, 123, {}, (cls_pool + 1) / 2);
  };
  CHECK(at(Mode::kS2C2, 50.0).seg_count == 0);
  CHECK(at(Mode::kS2StarC2, 0.0).seg_count == seg_pool);
  CHECK(at(Mode::kS2StarC2, 50.0).seg_count == seg_pool);
  CHECK(at(Mode::kS2C2, 0.0).cls_count == 0);
}

TEST_CASE("normalization divides by the mode's baseline mean") {
  std::vector<RunResult> rows;
  auto make_row = [](const std::string& mode, double percent, int repeat, double value) {
    RunResult row;
    row.mode = mode;
    row.percent = percent;
    row.repeat = repeat;
    row.f1_macro = value;
    row.f1_micro = value;
    row.accuracy = value;
    return row;
  };
  rows.push_back(make_row("S", 100, 0, 0.42));
  rows.push_back(make_row("S", 10, 0, 0.40));
  rows.push_back(make_row("S", 10, 1, 0.42));

  TempDir dir;
  write_report(rows, 2, NormalizeTo::kS100, dir.path);
  const std::string normalized = slurp(dir.path / "results_normalized.csv");
  CHECK(normalized.find("S,10,0,0,0.9523809524,0.9523809524,0.9523809524") != std::string::npos);
  CHECK(normalized.find("S,10,1,0,1,1,1") != std::string::npos);
  CHECK(normalized.find("S,100,0,0,1,1,1") != std::string::npos);

  // Baseline summary row normalizes to exactly one; single-repeat groups
  // report zero standard deviation.
  const std::string summary = slurp(dir.path / "summary.csv");
  CHECK(summary.find("S,100,1,0.42,0,0.42,0,0.42,0,1,0,1,0,1,0") != std::string::npos);
}

TEST_CASE("normalization is scale invariant") {
  auto build = [](double scale) {
    std::vector<RunResult> rows;
    for (int repeat = 0; repeat < 3; ++repeat) {
      RunResult row;
      row.mode = "S+C";
      row.percent = repeat == 0 ? 100.0 : 25.0;
      row.repeat = repeat;
      row.f1_macro = row.f1_micro = row.accuracy = scale * (0.3 + 0.1 * repeat);
      rows.push_back(row);
    }
    return rows;
  };
  TempDir dir_a, dir_b;
  write_report(build(1.0), 2, NormalizeTo::kS100, dir_a.path);
  write_report(build(7.0), 2, NormalizeTo::kS100, dir_b.path);
  CHECK(slurp(dir_a.path / "results_normalized.csv") == slurp(dir_b.path / "results_normalized.csv"));
}

TEST_CASE("missing baseline rows are a report error") {
  RunResult row;
  row.mode = "S";
  row.percent = 10;
  row.f1_macro = row.f1_micro = row.accuracy = 0.5;
  TempDir dir;
  CHECK_THROWS_AS(write_report({row}, 2, NormalizeTo::kS100, dir.path), ReportError);
  // Raw-only reporting works without the baseline.
  write_report({row}, 2, NormalizeTo::kNone, dir.path);
  CHECK(std::filesystem::exists(dir.path / "results.csv"));
  CHECK_FALSE(std::filesystem::exists(dir.path / "results_normalized.csv"));
}

TEST_CASE("results round-trip through the CSV reader") {
  std::vector<RunResult> rows;
  RunResult row;
  row.mode = "S+C*";
  row.percent = 2.5;
  row.repeat = 3;
  row.seed = 12345;
  row.f1_macro = 0.625;
  row.f1_micro = 0.75;
  row.accuracy = 0.8125;
  row.precision = {0.5, 0.25};
  row.recall = {0.125, 1.0};
  rows.push_back(row);

  TempDir dir;
  write_report(rows, 2, NormalizeTo::kNone, dir.path);
  auto loaded = read_results_csv(dir.path / "results.csv");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].mode == "S+C*");
  CHECK(loaded[0].percent == 2.5);
  CHECK(loaded[0].repeat == 3);
  CHECK(loaded[0].seed == 12345);
  CHECK(loaded[0].f1_micro == 0.75);
  CHECK(loaded[0].precision == row.precision);
  CHECK(loaded[0].recall == row.recall);
}

TEST_CASE("failure rows are recorded, not fatal") {
  const int side = 32;
  auto dataset = tiny_dataset(side, 10);
  auto config = tiny_config(side);
  dataset.test.clear();  // forces every run to fail at evaluation
  auto outcome = run_sweep(dataset, config);
  CHECK(outcome.results.empty());
  CHECK(outcome.failures.size() == 4);
  TempDir dir;
  write_failures_csv(outcome.failures, dir.path / "failures.csv");
  CHECK(slurp(dir.path / "failures.csv").find("test split") != std::string::npos);
}
