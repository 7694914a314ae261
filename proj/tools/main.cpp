// mixseg: synthesize data, build patch pools, train and sweep the
// mixed-supervision segmentation model, and report results.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "mixseg/checkpoint.hpp"
#include "mixseg/datagen.hpp"
#include "mixseg/experiments.hpp"
#include "mixseg/metrics.hpp"
#include "mixseg/preprocess.hpp"
#include "mixseg/training.hpp"

namespace {

using namespace mixseg;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void log_effective_config(const CLI::App* cmd) {
  std::cout << "[config] command=" << cmd->get_name() << "\n";
  for (const CLI::Option* opt : cmd->get_options()) {
    if (opt->get_name() == "--help") continue;
    const std::string value = opt->count() ? opt->as<std::string>() : opt->get_default_str();
    std::cout << "[config] " << opt->get_name() << "=" << (value.empty() ? "(unset)" : value) << "\n";
  }
}

struct ModelCli {
  int classes = 4;
  int input_size = 128;
  std::vector<int> widths = {64, 64, 128, 256};

  void add_options(CLI::App* cmd) {
    cmd->add_option("--classes", classes, "Number of classes, background included")->capture_default_str();
    cmd->add_option("--input-size", input_size, "Model input side in pixels (multiple of 16)")
        ->capture_default_str();
    cmd->add_option("--widths", widths, "Encoder stage widths (4 values)")->expected(4)->capture_default_str();
  }

  ModelConfig config() const {
    ModelConfig cfg;
    cfg.num_classes = classes;
    cfg.input_size = input_size;
    std::copy_n(widths.begin(), 4, cfg.widths.begin());
    return cfg;
  }
};

struct TrainCli {
  TrainConfig config;
  std::string weight_mode = "inverse_frequency";

  void add_options(CLI::App* cmd) {
    cmd->add_option("--lr", config.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--beta1", config.beta1, "Adam beta1")->capture_default_str();
    cmd->add_option("--beta2", config.beta2, "Adam beta2")->capture_default_str();
    cmd->add_option("--batch", config.batch_size, "Batch size")->capture_default_str();
    cmd->add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--weight-mode", weight_mode, "Class weighting: inverse_frequency or uniform")
        ->check(CLI::IsMember({"inverse_frequency", "uniform"}))
        ->capture_default_str();
    cmd->add_flag("--hflip", config.hflip, "Random horizontal flips");
    cmd->add_flag("--vflip", config.vflip, "Random vertical flips");
  }

  TrainConfig resolved() const {
    TrainConfig out = config;
    out.class_weight_mode = weight_mode == "uniform" ? WeightMode::kUniform : WeightMode::kInverseFrequency;
    return out;
  }
};

struct PrepCli {
  PrepConfig config;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--patch", config.patch_side, "Patch side in pixels")->capture_default_str();
    cmd->add_option("--sat-threshold", config.sat_threshold, "Background saturation threshold")
        ->capture_default_str();
    cmd->add_option("--fg-min", config.fg_min_fraction, "Minimum foreground fraction to keep a patch")
        ->capture_default_str();
    cmd->add_option("--dominance", config.dominance_threshold, "Dominant-class share for classification tiles")
        ->capture_default_str();
    cmd->add_option("--opening-radius", config.opening_radius, "Disk radius of the morphological opening")
        ->capture_default_str();
    cmd->add_option("--mag", config.magnification_tag, "Magnification metadata tag")->capture_default_str();
  }
};

std::vector<SegSample> all_tiles_as_seg(const WsiRecord& wsi, int side) {
  std::vector<SegSample> tiles;
  for (int r = 0; r + side <= wsi.image.height; r += side) {
    for (int c = 0; c + side <= wsi.image.width; c += side) {
      tiles.push_back({crop(wsi.image, r, c, side), crop(wsi.mask, r, c, side), {wsi.id, r, c, "tile"}});
    }
  }
  return tiles;
}

// Splits pooled patches by source image id: held-out ids provide the
// validation and test patches so no image contributes to both sides.
struct WsiSplit {
  SweepDataset dataset;
  std::vector<std::string> train_ids, val_ids, test_ids;
};

WsiSplit split_pools_by_wsi(PatchPools pools, double val_frac, double test_frac, std::uint64_t seed) {
  std::set<std::string> id_set;
  for (const auto& s : pools.seg) id_set.insert(s.origin.wsi_id);
  for (const auto& s : pools.cls) id_set.insert(s.origin.wsi_id);
  std::vector<std::string> ids(id_set.begin(), id_set.end());
  if (ids.size() < 3) throw DataError("need at least 3 source images to split into train/val/test");

  Rng rng(derive_seed(seed, "wsi-split"));
  rng.shuffle(ids);
  const int n = static_cast<int>(ids.size());
  const int n_test = std::max(1, percent_count(test_frac * 100.0, n));
  const int n_val = std::max(1, percent_count(val_frac * 100.0, n));
  if (n_test + n_val >= n) throw ConfigError("validation and test fractions leave no training images");

  WsiSplit split;
  split.test_ids.assign(ids.begin(), ids.begin() + n_test);
  split.val_ids.assign(ids.begin() + n_test, ids.begin() + n_test + n_val);
  split.train_ids.assign(ids.begin() + n_test + n_val, ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  std::sort(split.val_ids.begin(), split.val_ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());

  auto belongs = [](const std::vector<std::string>& ids_sorted, const std::string& id) {
    return std::binary_search(ids_sorted.begin(), ids_sorted.end(), id);
  };
  for (auto& s : pools.seg) {
    if (belongs(split.train_ids, s.origin.wsi_id)) {
      split.dataset.train.seg.push_back(std::move(s));
    } else if (belongs(split.val_ids, s.origin.wsi_id)) {
      split.dataset.val.push_back(std::move(s));
    } else {
      split.dataset.test.push_back(std::move(s));
    }
  }
  for (auto& s : pools.cls) {
    if (belongs(split.train_ids, s.origin.wsi_id)) split.dataset.train.cls.push_back(std::move(s));
  }
  return split;
}

// Replaces the pool-derived val/test patches with complete tilings of the
// held-out source images.
void retile_eval_splits(WsiSplit& split, const std::filesystem::path& data_dir, int patch_side) {
  auto records = load_dataset(data_dir);
  split.dataset.val.clear();
  split.dataset.test.clear();
  for (const auto& record : records) {
    const bool is_val = std::binary_search(split.val_ids.begin(), split.val_ids.end(), record.id);
    const bool is_test = std::binary_search(split.test_ids.begin(), split.test_ids.end(), record.id);
    if (!is_val && !is_test) continue;
    auto tiles = all_tiles_as_seg(record, patch_side);
    auto& target = is_val ? split.dataset.val : split.dataset.test;
    for (auto& tile : tiles) target.push_back(std::move(tile));
  }
}

void print_split(const WsiSplit& split) {
  auto join = [](const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : " ") + id;
    return out;
  };
  std::cout << "[split] train: " << join(split.train_ids) << "\n";
  std::cout << "[split] val:   " << join(split.val_ids) << "\n";
  std::cout << "[split] test:  " << join(split.test_ids) << "\n";
  std::cout << "[split] pools: " << split.dataset.train.seg.size() << " seg / " << split.dataset.train.cls.size()
            << " cls, val " << split.dataset.val.size() << ", test " << split.dataset.test.size() << "\n";
}

std::vector<Mode> parse_modes(const std::string& csv) {
  std::vector<Mode> modes;
  std::string current;
  std::stringstream ss(csv);
  while (std::getline(ss, current, ',')) {
    if (!current.empty()) modes.push_back(parse_mode(current));
  }
  if (modes.empty()) throw ConfigError("no modes given");
  return modes;
}

int cmd_synth(const SynthConfig& config, const std::string& out_dir) {
  auto records = synth_dataset(config);
  write_dataset(records, out_dir);
  std::int64_t fg = 0, total = 0;
  for (const auto& record : records) {
    for (std::uint8_t label : record.mask.labels) {
      fg += label > 0 ? 1 : 0;
      ++total;
    }
  }
  std::cout << "wrote " << records.size() << " image/mask pairs to " << out_dir << " (foreground share "
            << static_cast<double>(fg) / static_cast<double>(total) << ")\n";
  return 0;
}

int cmd_prep(const std::string& in_dir, const std::string& out_dir, PrepConfig config, std::uint64_t seed) {
  config.seed = seed;
  PatchPools pools;
  int wsis = 0;
  for (const auto& record : load_dataset(in_dir)) {
    auto samples = extract_centered_patches(record, config);
    for (auto& s : samples) pools.seg.push_back(std::move(s));
    ++wsis;
  }
  write_pools(pools, out_dir);
  std::cout << "extracted " << pools.seg.size() << " centered patches from " << wsis << " images into " << out_dir
            << "\n";
  return 0;
}

int cmd_tiles(const std::string& in_dir, const std::string& out_dir, const PrepConfig& config) {
  PatchPools pools;
  int ignored = 0, total = 0;
  for (const auto& record : load_dataset(in_dir)) {
    auto extraction = extract_tiles(record, config);
    for (auto& s : extraction.pools.seg) pools.seg.push_back(std::move(s));
    for (auto& s : extraction.pools.cls) pools.cls.push_back(std::move(s));
    ignored += extraction.ignored;
    total += extraction.total_tiles;
  }
  write_pools(pools, out_dir);
  std::cout << "tiled " << total << " tiles: " << pools.cls.size() << " classification, " << pools.seg.size()
            << " segmentation, " << ignored << " ignored -> " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-supervision segmentation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key=value configuration file; command-line flags take precedence");

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with ground-truth masks");
  SynthConfig synth_config;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--wsis", synth_config.num_wsis, "Number of images")->capture_default_str();
  synth->add_option("--side", synth_config.side, "Image side in pixels")->capture_default_str();
  synth->add_option("--classes", synth_config.num_classes, "Number of classes, background included")
      ->capture_default_str();
  synth->add_option("--blobs-min", synth_config.blob_count_min, "Minimum blobs per image")->capture_default_str();
  synth->add_option("--blobs-max", synth_config.blob_count_max, "Maximum blobs per image")->capture_default_str();
  synth->add_option("--radius-min", synth_config.blob_radius_min_frac, "Minimum blob radius (fraction of side)")
      ->capture_default_str();
  synth->add_option("--radius-max", synth_config.blob_radius_max_frac, "Maximum blob radius (fraction of side)")
      ->capture_default_str();
  synth->add_option("--texture-amp", synth_config.texture_amp, "Class texture contrast")->capture_default_str();
  synth->add_option("--noise-amp", synth_config.noise_amp, "Per-pixel noise amplitude")->capture_default_str();
  synth->add_option("--color-jitter", synth_config.color_jitter, "Per-blob color jitter")->capture_default_str();
  synth->add_option("--seed", synth_config.seed, "Random seed")->envname("MIXSEG_SEED")->capture_default_str();

  // ---- prep ----
  auto* prep = app.add_subcommand("prep", "Centered ground-truth patch extraction with background removal");
  std::string prep_in, prep_out;
  PrepCli prep_cli;
  std::uint64_t prep_seed = 0;
  prep->add_option("--in", prep_in, "Dataset directory (images/ + masks/)")->required();
  prep->add_option("--out", prep_out, "Output pool directory")->required();
  prep_cli.add_options(prep);
  prep->add_option("--seed", prep_seed, "Random seed")->envname("MIXSEG_SEED")->capture_default_str();

  // ---- tiles ----
  auto* tiles = app.add_subcommand("tiles", "Split masks into classification/segmentation patch pools");
  std::string tiles_in, tiles_out;
  PrepCli tiles_cli;
  tiles->add_option("--in", tiles_in, "Dataset directory (images/ + masks/)")->required();
  tiles->add_option("--out", tiles_out, "Output pool directory")->required();
  tiles_cli.add_options(tiles);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train one model from patch pools");
  std::string train_pools, train_out, train_mode = "S+C", train_data;
  double train_percent = 100.0, train_val_frac = 0.15, train_test_frac = 0.25;
  int train_repeat = 0;
  std::uint64_t train_seed = 0;
  ModelCli train_model;
  TrainCli train_train;
  train_cmd->add_option("--pools", train_pools, "Patch pool directory")->required();
  train_cmd->add_option("--out", train_out, "Output run directory")->required();
  train_cmd->add_option("--mode", train_mode, "Training mode (S, S+C, S+C*)")->capture_default_str();
  train_cmd->add_option("--percent", train_percent, "Segmentation share s in percent")->capture_default_str();
  train_cmd->add_option("--repeat", train_repeat, "Repeat index (seeds the subset draw)")->capture_default_str();
  train_cmd->add_option("--val-frac", train_val_frac, "Fraction of images held out for validation")
      ->capture_default_str();
  train_cmd->add_option("--test-frac", train_test_frac, "Fraction of images held out for testing")
      ->capture_default_str();
  train_cmd->add_option("--data", train_data, "Dataset directory; evaluates on full tilings of held-out images");
  train_model.add_options(train_cmd);
  train_train.add_options(train_cmd);
  train_cmd->add_option("--seed", train_seed, "Base seed")->envname("MIXSEG_SEED")->capture_default_str();

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_data, eval_checkpoint, eval_out;
  ModelCli eval_model;
  eval_cmd->add_option("--data", eval_data, "Dataset directory (images/ + masks/)")->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();
  eval_model.add_options(eval_cmd);

  // ---- sweep ----
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the segmentation-share sweep");
  std::string sweep_pools, sweep_out, sweep_modes = "S,S+C,S+C*", sweep_data;
  std::vector<double> sweep_grid = {0, 1, 2.5, 5, 7.5, 10, 15, 20, 25, 30, 40, 50, 75, 100};
  int sweep_repeats = 5, sweep_jobs = 1;
  double sweep_val_frac = 0.15, sweep_test_frac = 0.25;
  std::uint64_t sweep_seed = 0;
  bool sweep_ref_counts = false;
  ModelCli sweep_model;
  TrainCli sweep_train;
  sweep_cmd->add_option("--pools", sweep_pools, "Patch pool directory")->required();
  sweep_cmd->add_option("--out", sweep_out, "Output results directory")->required();
  sweep_cmd->add_option("--modes", sweep_modes, "Comma-separated modes")->capture_default_str();
  sweep_cmd->add_option("--grid", sweep_grid, "Percentage grid")->capture_default_str();
  sweep_cmd->add_option("--repeats", sweep_repeats, "Repeats per grid cell")->capture_default_str();
  sweep_cmd->add_option("--jobs", sweep_jobs, "Worker threads (runs stay deterministic)")->capture_default_str();
  sweep_cmd->add_option("--val-frac", sweep_val_frac, "Validation image fraction")->capture_default_str();
  sweep_cmd->add_option("--test-frac", sweep_test_frac, "Test image fraction")->capture_default_str();
  sweep_cmd->add_option("--data", sweep_data, "Dataset directory; evaluates on full tilings of held-out images");
  sweep_cmd->add_flag("--use-615-400-counts", sweep_ref_counts,
                      "Use the published 615/400 subset counts instead of round-half-up");
  sweep_model.add_options(sweep_cmd);
  sweep_train.add_options(sweep_cmd);
  sweep_cmd->add_option("--seed", sweep_seed, "Base seed")->envname("MIXSEG_SEED")->capture_default_str();

  // ---- cls-sweep ----
  auto* cls_cmd = app.add_subcommand("cls-sweep", "Run the classifier-head sweep");
  std::string cls_pools, cls_out;
  std::vector<double> cls_grid = {0, 1, 2.5, 5, 7.5, 10, 15, 20, 25, 30, 40, 50};
  int cls_repeats = 5, cls_jobs = 1;
  double cls_val_frac = 0.15, cls_test_frac = 0.25;
  std::uint64_t cls_seed = 0;
  ModelCli cls_model;
  TrainCli cls_train;
  cls_cmd->add_option("--pools", cls_pools, "Patch pool directory")->required();
  cls_cmd->add_option("--out", cls_out, "Output results directory")->required();
  cls_cmd->add_option("--grid", cls_grid, "Classification share grid (c, up to 50)")->capture_default_str();
  cls_cmd->add_option("--repeats", cls_repeats, "Repeats per grid cell")->capture_default_str();
  cls_cmd->add_option("--jobs", cls_jobs, "Worker threads")->capture_default_str();
  cls_cmd->add_option("--val-frac", cls_val_frac, "Validation image fraction")->capture_default_str();
  cls_cmd->add_option("--test-frac", cls_test_frac, "Test image fraction")->capture_default_str();
  cls_model.add_options(cls_cmd);
  cls_train.add_options(cls_cmd);
  cls_cmd->add_option("--seed", cls_seed, "Base seed")->envname("MIXSEG_SEED")->capture_default_str();

  // ---- report ----
  auto* report_cmd = app.add_subcommand("report", "Normalize and summarize a results table");
  std::string report_results, report_out, report_norm = "none";
  int report_classes = 4;
  report_cmd->add_option("--results", report_results, "results.csv produced by sweep or cls-sweep")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->required();
  report_cmd->add_option("--normalize", report_norm, "Normalization baseline: none, s100 or c50")
      ->check(CLI::IsMember({"none", "s100", "c50"}))
      ->capture_default_str();
  report_cmd->add_option("--classes", report_classes, "Class count of the result rows")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    log_effective_config(active);

    if (synth->parsed()) return cmd_synth(synth_config, synth_out);
    if (prep->parsed()) return cmd_prep(prep_in, prep_out, prep_cli.config, prep_seed);
    if (tiles->parsed()) return cmd_tiles(tiles_in, tiles_out, tiles_cli.config);

    if (train_cmd->parsed()) {
      auto split = split_pools_by_wsi(load_pools(train_pools), train_val_frac, train_test_frac, train_seed);
      ModelConfig model_config = train_model.config();
      if (!train_data.empty()) retile_eval_splits(split, train_data, model_config.input_size);
      print_split(split);

      const Mode mode = parse_mode(train_mode);
      const auto schedule = split_schedule(
          static_cast<int>(split.dataset.train.seg.size()), static_cast<int>(split.dataset.train.cls.size()), mode,
          train_percent, train_repeat, derive_seed(train_seed, "schedule", train_percent, train_repeat));
      std::vector<SegSample> seg_subset;
      for (int i : schedule.seg_indices) seg_subset.push_back(split.dataset.train.seg[static_cast<std::size_t>(i)]);
      std::vector<ClsSample> cls_subset;
      for (int i : schedule.cls_indices) cls_subset.push_back(split.dataset.train.cls[static_cast<std::size_t>(i)]);
      std::cout << "[schedule] mode " << mode_name(mode) << " s=" << train_percent << "%: " << seg_subset.size()
                << " seg / " << cls_subset.size() << " cls patches\n";

      TrainConfig train_config = train_train.resolved();
      train_config.seed = derive_seed(train_seed, "train", mode_name(mode), train_percent, train_repeat);
      model_config.seed = train_config.seed;
      auto result = train(seg_subset, cls_subset, split.dataset.val, model_config, train_config);

      std::filesystem::create_directories(train_out);
      write_history_csv(std::filesystem::path(train_out) / "history.csv", result.history);
      save_checkpoint(result.model, nullptr, std::filesystem::path(train_out) / "model.ckpt");
      auto cm = evaluate_segmentation(result.model, split.dataset.test);
      write_metrics_report(cm, std::filesystem::path(train_out) / "metrics.csv",
                           std::filesystem::path(train_out) / "metrics.json");
      auto agg = aggregate_scores(class_prf1(cm), cm);
      std::cout << "test f1_micro=" << agg.f1_micro << " f1_macro=" << agg.f1_macro << " accuracy=" << agg.accuracy
                << " (best epoch " << result.best_epoch << ")\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      ModelConfig expected = eval_model.config();
      auto model = load_checkpoint(eval_checkpoint, expected);
      ConfusionMatrix cm(expected.num_classes);
      for (const auto& record : load_dataset(eval_data)) {
        auto tiles_of_record = all_tiles_as_seg(record, expected.input_size);
        cm.merge(evaluate_segmentation(model, tiles_of_record));
      }
      std::filesystem::create_directories(eval_out);
      write_metrics_report(cm, std::filesystem::path(eval_out) / "metrics.csv",
                           std::filesystem::path(eval_out) / "metrics.json");
      auto agg = aggregate_scores(class_prf1(cm), cm);
      std::cout << "f1_micro=" << agg.f1_micro << " f1_macro=" << agg.f1_macro << " accuracy=" << agg.accuracy
                << "\n";
      return 0;
    }

    if (sweep_cmd->parsed() || cls_cmd->parsed()) {
      const bool head = cls_cmd->parsed();
      const std::string pools_dir = head ? cls_pools : sweep_pools;
      const std::string out_dir = head ? cls_out : sweep_out;
      const std::uint64_t seed = head ? cls_seed : sweep_seed;

      SweepConfig config;
      config.model = (head ? cls_model : sweep_model).config();
      config.train = (head ? cls_train : sweep_train).resolved();
      config.percent_grid = head ? cls_grid : sweep_grid;
      config.repeats = head ? cls_repeats : sweep_repeats;
      config.jobs = head ? cls_jobs : sweep_jobs;
      config.base_seed = seed;
      if (!head) {
        config.modes = parse_modes(sweep_modes);
        if (sweep_ref_counts) config.overrides = pool_615_400_reference_counts();
      }

      auto split = split_pools_by_wsi(load_pools(pools_dir), head ? cls_val_frac : sweep_val_frac,
                                      head ? cls_test_frac : sweep_test_frac, seed);
      if (!head && !sweep_data.empty()) retile_eval_splits(split, sweep_data, config.model.input_size);
      print_split(split);

      const auto outcome = head ? run_cls_head_sweep(split.dataset, config) : run_sweep(split.dataset, config);
      // Normalized tables need baseline rows; grids without the baseline
      // percentage get the raw tables only.
      const double baseline = head ? 50.0 : 100.0;
      const bool has_baseline =
          std::find(config.percent_grid.begin(), config.percent_grid.end(), baseline) != config.percent_grid.end();
      const NormalizeTo norm = !has_baseline        ? NormalizeTo::kNone
                               : head               ? NormalizeTo::kC50
                                                    : NormalizeTo::kS100;
      write_report(outcome.results, config.model.num_classes, norm, out_dir);
      write_failures_csv(outcome.failures, std::filesystem::path(out_dir) / "failures.csv");

      std::cout << "completed " << outcome.results.size() << " runs (" << outcome.failures.size() << " failures) -> "
                << out_dir << "/results.csv\n";
      for (const auto& failure : outcome.failures) {
        std::cerr << "[failed] " << failure.mode << " at " << failure.percent << "% repeat " << failure.repeat << ": "
                  << failure.error << "\n";
      }
      return 0;
    }

    if (report_cmd->parsed()) {
      auto rows = read_results_csv(report_results);
      const NormalizeTo norm = report_norm == "s100"  ? NormalizeTo::kS100
                               : report_norm == "c50" ? NormalizeTo::kC50
                                                      : NormalizeTo::kNone;
      write_report(rows, report_classes, norm, report_out);
      std::cout << "report for " << rows.size() << " rows -> " << report_out << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
