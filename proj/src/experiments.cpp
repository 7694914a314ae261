#include "mixseg/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "mixseg/errors.hpp"
#include "mixseg/metrics.hpp"
#include "mixseg/rng.hpp"

namespace mixseg {

void SweepConfig::validate() const {
  if (modes.empty()) throw ConfigError("sweep needs at least one mode");
  if (percent_grid.empty()) throw ConfigError("sweep needs at least one percentage");
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  double prev = -1.0;
  for (double p : percent_grid) {
    if (p < 0.0 || p > 100.0) throw ConfigError("grid percentage outside [0,100]");
    if (p <= prev) throw ConfigError("grid percentages must be strictly increasing");
    prev = p;
  }
}

std::vector<RunSpec> plan_sweep(const SweepConfig& config) {
  config.validate();
  std::vector<RunSpec> specs;
  for (Mode mode : config.modes) {
    for (double percent : config.percent_grid) {
      for (int repeat = 0; repeat < config.repeats; ++repeat) {
        RunSpec spec;
        spec.mode = mode;
        spec.percent = percent;
        spec.repeat = repeat;
        spec.schedule_seed = derive_seed(config.base_seed, "schedule", percent, repeat);
        spec.train_seed = derive_seed(config.base_seed, "train", mode_name(mode), percent, repeat);
        spec.degenerate = mode == Mode::kS && percent == 0.0;
        specs.push_back(spec);
      }
    }
  }
  return specs;
}

namespace {

struct ClsSplit {
  std::vector<int> order;  // seeded permutation of the classification pool
  int eligible = 0;        // training prefix length; the rest is evaluation
};

ClsSplit head_split(int cls_pool, std::uint64_t base_seed) {
  ClsSplit split;
  split.order.resize(static_cast<std::size_t>(cls_pool));
  std::iota(split.order.begin(), split.order.end(), 0);
  Rng rng(derive_seed(base_seed, "cls-eval-split"));
  rng.shuffle(split.order);
  split.eligible = (cls_pool + 1) / 2;
  return split;
}

RunResult run_one(const SweepDataset& dataset, const SweepConfig& config, const RunSpec& spec,
                  const ClsSplit* cls_split) {
  const auto start = std::chrono::steady_clock::now();
  const int seg_pool = static_cast<int>(dataset.train.seg.size());
  const int cls_pool = static_cast<int>(dataset.train.cls.size());

  const auto schedule =
      split_schedule(seg_pool, cls_pool, spec.mode, spec.percent, spec.repeat, spec.schedule_seed, config.overrides,
                     cls_split ? cls_split->eligible : -1);

  std::vector<SegSample> seg_subset;
  for (int index : schedule.seg_indices) seg_subset.push_back(dataset.train.seg[static_cast<std::size_t>(index)]);
  std::vector<ClsSample> cls_subset;
  for (int index : schedule.cls_indices) {
    const int mapped = cls_split ? cls_split->order[static_cast<std::size_t>(index)] : index;
    cls_subset.push_back(dataset.train.cls[static_cast<std::size_t>(mapped)]);
  }

  ModelConfig model_config = config.model;
  model_config.seed = spec.train_seed;
  TrainConfig train_config = config.train;
  train_config.seed = spec.train_seed;

  RunResult row;
  row.mode = mode_name(spec.mode);
  row.percent = spec.percent;
  row.repeat = spec.repeat;
  row.seed = spec.train_seed;

  Model<float> model;
  if (seg_subset.empty() && cls_subset.empty()) {
    // Degenerate cell: no training data scheduled, evaluate the random
    // initialization as-is.
    model = build_model<float>(model_config);
  } else {
    auto outcome = train(seg_subset, cls_subset, dataset.val, model_config, train_config);
    model = std::move(outcome.model);
    row.history = std::move(outcome.history);
  }

  ConfusionMatrix cm(model_config.num_classes);
  if (cls_split) {
    std::vector<ClsSample> eval_half;
    for (std::size_t i = static_cast<std::size_t>(cls_split->eligible); i < cls_split->order.size(); ++i) {
      eval_half.push_back(dataset.train.cls[static_cast<std::size_t>(cls_split->order[i])]);
    }
    if (eval_half.empty()) throw DataError("classifier-head evaluation half is empty");
    cm = evaluate_classification(model, eval_half);
    row.confusion.reserve(static_cast<std::size_t>(cm.num_classes()) * cm.num_classes());
    for (int t = 0; t < cm.num_classes(); ++t) {
      for (int p = 0; p < cm.num_classes(); ++p) row.confusion.push_back(cm.at(t, p));
    }
  } else {
    if (dataset.test.empty()) throw DataError("sweep dataset has no test split");
    cm = evaluate_segmentation(model, dataset.test);
  }
  const auto scores = class_prf1(cm);
  const auto agg = aggregate_scores(scores, cm);
  row.f1_macro = agg.f1_macro;
  row.f1_micro = agg.f1_micro;
  row.accuracy = agg.accuracy;
  for (const auto& s : scores) {
    row.precision.push_back(s.precision);
    row.recall.push_back(s.recall);
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

SweepOutcome run_specs(const SweepDataset& dataset, const SweepConfig& config, const std::vector<RunSpec>& specs,
                       const ClsSplit* cls_split) {
  std::vector<RunResult> results(specs.size());
  std::vector<std::string> errors(specs.size());
  std::vector<char> failed(specs.size(), 0);

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      try {
        results[i] = run_one(dataset, config, specs[i], cls_split);
      } catch (const std::exception& e) {
        failed[i] = 1;
        errors[i] = e.what();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(specs.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  SweepOutcome outcome;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (failed[i]) {
      outcome.failures.push_back({mode_name(specs[i].mode), specs[i].percent, specs[i].repeat, errors[i]});
    } else {
      outcome.results.push_back(std::move(results[i]));
    }
  }
  // Deterministic merge order regardless of scheduling.
  std::sort(outcome.results.begin(), outcome.results.end(), [](const RunResult& a, const RunResult& b) {
    return std::tie(a.mode, a.percent, a.repeat) < std::tie(b.mode, b.percent, b.repeat);
  });
  return outcome;
}

}  // namespace

SweepOutcome run_sweep(const SweepDataset& dataset, const SweepConfig& config) {
  const auto specs = plan_sweep(config);
  return run_specs(dataset, config, specs, nullptr);
}

SweepOutcome run_cls_head_sweep(const SweepDataset& dataset, const SweepConfig& config) {
  SweepConfig head_config = config;
  head_config.modes = {Mode::kS2C2, Mode::kS2C2Star, Mode::kS2StarC2};
  for (double p : head_config.percent_grid) {
    if (p > 50.0) throw ConfigError("classifier-head grid percentages are capped at 50");
  }
  if (dataset.train.cls.size() < 2) throw DataError("classifier-head sweep needs at least two classification patches");
  const auto specs = plan_sweep(head_config);
  const ClsSplit split = head_split(static_cast<int>(dataset.train.cls.size()), head_config.base_seed);
  return run_specs(dataset, head_config, specs, &split);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct MetricColumns {
  double RunResult::* field;
  const char* name;
};

constexpr MetricColumns kMetrics[] = {
    {&RunResult::f1_macro, "f1_macro"},
    {&RunResult::f1_micro, "f1_micro"},
    {&RunResult::accuracy, "accuracy"},
};

struct GroupStats {
  int n = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

GroupStats stats_of(const std::vector<double>& values) {
  GroupStats s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / values.size());
  return s;
}

}  // namespace

std::string run_id(const RunResult& row) {
  std::string mode_tag;
  for (char c : row.mode) mode_tag += c == '*' ? 's' : c;
  std::string tag = mode_tag + "_p" + fmt(row.percent) + "_r" + std::to_string(row.repeat);
  std::string out;
  for (char c : tag) out += (c == '+' || c == '.') ? '_' : c;
  return out;
}

void write_report(const std::vector<RunResult>& rows, int num_classes, NormalizeTo normalize,
                  const std::filesystem::path& out_dir) {
  if (rows.empty()) throw ReportError("no result rows to report");
  std::filesystem::create_directories(out_dir);

  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const RunResult& a, const RunResult& b) {
    return std::tie(a.mode, a.percent, a.repeat) < std::tie(b.mode, b.percent, b.repeat);
  });

  // Raw rows.
  {
    std::ofstream out(out_dir / "results.csv");
    if (!out) throw IoError("cannot write results.csv under " + out_dir.string());
    out << "mode,percent,repeat,seed,f1_macro,f1_micro,accuracy";
    for (int c = 0; c < num_classes; ++c) out << ",precision_" << c;
    for (int c = 0; c < num_classes; ++c) out << ",recall_" << c;
    out << "\n";
    for (const auto& row : sorted) {
      out << row.mode << "," << fmt(row.percent) << "," << row.repeat << "," << row.seed << ","
          << fmt(row.f1_macro) << "," << fmt(row.f1_micro) << "," << fmt(row.accuracy);
      for (int c = 0; c < num_classes; ++c) {
        out << "," << fmt(c < static_cast<int>(row.precision.size()) ? row.precision[static_cast<std::size_t>(c)] : 0.0);
      }
      for (int c = 0; c < num_classes; ++c) {
        out << "," << fmt(c < static_cast<int>(row.recall.size()) ? row.recall[static_cast<std::size_t>(c)] : 0.0);
      }
      out << "\n";
    }
  }

  // Wall-clock timings live apart from the deterministic result tables.
  {
    std::ofstream out(out_dir / "timings.csv");
    out << "mode,percent,repeat,wall_seconds\n";
    for (const auto& row : sorted) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.3f", row.wall_seconds);
      out << row.mode << "," << fmt(row.percent) << "," << row.repeat << "," << buf << "\n";
    }
  }

  // Per-run training histories and head-run confusion matrices.
  {
    const auto history_dir = out_dir / "history";
    std::filesystem::create_directories(history_dir);
    for (const auto& row : sorted) {
      if (!row.history.empty()) write_history_csv(history_dir / (run_id(row) + ".csv"), row.history);
      if (!row.confusion.empty()) {
        std::ofstream out(history_dir / (run_id(row) + "_confusion.csv"));
        for (int t = 0; t < num_classes; ++t) {
          for (int p = 0; p < num_classes; ++p) {
            out << row.confusion[static_cast<std::size_t>(t) * num_classes + p]
                << (p + 1 == num_classes ? "\n" : ",");
          }
        }
      }
    }
  }

  // Group rows per (mode, percent) for the summary and plot data.
  std::map<std::string, std::map<double, std::vector<const RunResult*>>> groups;
  for (const auto& row : sorted) groups[row.mode][row.percent].push_back(&row);

  const double baseline_percent = normalize == NormalizeTo::kS100 ? 100.0 : 50.0;
  std::map<std::string, std::vector<double>> baselines;  // mode -> per-metric baseline mean
  if (normalize != NormalizeTo::kNone) {
    for (const auto& [mode, by_percent] : groups) {
      auto it = by_percent.find(baseline_percent);
      if (it == by_percent.end() || it->second.empty()) {
        throw ReportError("normalization requested but mode " + mode + " has no rows at " + fmt(baseline_percent) +
                          "%");
      }
      std::vector<double> means;
      for (const auto& metric : kMetrics) {
        std::vector<double> values;
        for (const RunResult* row : it->second) values.push_back(row->*(metric.field));
        const double mean = stats_of(values).mean;
        if (mean == 0.0) throw ReportError("zero baseline mean for " + std::string(metric.name) + " in mode " + mode);
        means.push_back(mean);
      }
      baselines[mode] = means;
    }

    std::ofstream out(out_dir / "results_normalized.csv");
    if (!out) throw IoError("cannot write results_normalized.csv");
    out << "mode,percent,repeat,seed,f1_macro,f1_micro,accuracy\n";
    for (const auto& row : sorted) {
      const auto& base = baselines[row.mode];
      out << row.mode << "," << fmt(row.percent) << "," << row.repeat << "," << row.seed;
      int m = 0;
      for (const auto& metric : kMetrics) {
        out << "," << fmt(row.*(metric.field) / base[static_cast<std::size_t>(m++)]);
      }
      out << "\n";
    }
  }

  // Summary with mean and standard deviation over repeats.
  {
    std::ofstream out(out_dir / "summary.csv");
    if (!out) throw IoError("cannot write summary.csv");
    out << "mode,percent,n";
    for (const auto& metric : kMetrics) out << "," << metric.name << "_mean," << metric.name << "_std";
    if (normalize != NormalizeTo::kNone) {
      for (const auto& metric : kMetrics) out << "," << metric.name << "_norm_mean," << metric.name << "_norm_std";
    }
    out << "\n";
    for (const auto& [mode, by_percent] : groups) {
      for (const auto& [percent, group_rows] : by_percent) {
        out << mode << "," << fmt(percent) << "," << group_rows.size();
        std::vector<GroupStats> raw_stats;
        for (const auto& metric : kMetrics) {
          std::vector<double> values;
          for (const RunResult* row : group_rows) values.push_back(row->*(metric.field));
          raw_stats.push_back(stats_of(values));
          out << "," << fmt(raw_stats.back().mean) << "," << fmt(raw_stats.back().stddev);
        }
        if (normalize != NormalizeTo::kNone) {
          const auto& base = baselines[mode];
          for (std::size_t m = 0; m < raw_stats.size(); ++m) {
            out << "," << fmt(raw_stats[m].mean / base[m]) << "," << fmt(raw_stats[m].stddev / base[m]);
          }
        }
        out << "\n";
      }
    }
  }

  // Plain-text plot data: one file per metric and mode, "percent mean std".
  {
    const auto plot_dir = out_dir / "plots";
    std::filesystem::create_directories(plot_dir);
    for (const auto& [mode, by_percent] : groups) {
      std::string mode_tag;
      for (char c : mode) mode_tag += c == '*' ? 's' : (c == '+' ? '_' : c);
      for (std::size_t m = 0; m < std::size(kMetrics); ++m) {
        std::ofstream out(plot_dir / (std::string(kMetrics[m].name) + "_" + mode_tag + ".dat"));
        out << "# percent mean std (" << kMetrics[m].name << ", mode " << mode << ")\n";
        for (const auto& [percent, group_rows] : by_percent) {
          std::vector<double> values;
          for (const RunResult* row : group_rows) values.push_back(row->*(kMetrics[m].field));
          auto s = stats_of(values);
          if (normalize != NormalizeTo::kNone) {
            const double base = baselines[mode][m];
            s.mean /= base;
            s.stddev /= base;
          }
          out << fmt(percent) << " " << fmt(s.mean) << " " << fmt(s.stddev) << "\n";
        }
      }
    }
  }
}

void write_failures_csv(const std::vector<RunFailure>& failures, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "mode,percent,repeat,error\n";
  for (const auto& f : failures) {
    std::string sanitized = f.error;
    std::replace(sanitized.begin(), sanitized.end(), ',', ';');
    std::replace(sanitized.begin(), sanitized.end(), '\n', ' ');
    out << f.mode << "," << fmt(f.percent) << "," << f.repeat << "," << sanitized << "\n";
  }
}

std::vector<RunResult> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw FormatError(path.string() + " is empty");
  std::vector<std::string> columns;
  {
    std::stringstream ss(header);
    std::string field;
    while (std::getline(ss, field, ',')) columns.push_back(field);
  }
  if (columns.size() < 7 || columns[0] != "mode") throw FormatError(path.string() + " has an unexpected header");

  std::vector<RunResult> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> fields;
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != columns.size()) throw FormatError("row width mismatch in " + path.string());
    RunResult row;
    row.mode = fields[0];
    row.percent = std::stod(fields[1]);
    row.repeat = std::stoi(fields[2]);
    row.seed = std::stoull(fields[3]);
    row.f1_macro = std::stod(fields[4]);
    row.f1_micro = std::stod(fields[5]);
    row.accuracy = std::stod(fields[6]);
    for (std::size_t i = 7; i < fields.size(); ++i) {
      if (columns[i].rfind("precision_", 0) == 0) row.precision.push_back(std::stod(fields[i]));
      if (columns[i].rfind("recall_", 0) == 0) row.recall.push_back(std::stod(fields[i]));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mixseg
