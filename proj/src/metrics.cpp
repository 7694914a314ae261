#include "mixseg/metrics.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "mixseg/errors.hpp"

namespace mixseg {

ConfusionMatrix::ConfusionMatrix(int num_classes) : classes_(num_classes) {
  if (num_classes < 2) throw ConfigError("confusion matrix needs at least 2 classes");
  cells_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

void ConfusionMatrix::add(int truth, int predicted, std::int64_t count) {
  if (truth < 0 || truth >= classes_) {
    throw LabelError("ground-truth label " + std::to_string(truth) + " outside [0," + std::to_string(classes_) + ")");
  }
  if (predicted < 0 || predicted >= classes_) {
    throw LabelError("predicted label " + std::to_string(predicted) + " outside [0," + std::to_string(classes_) + ")");
  }
  cells_[static_cast<std::size_t>(truth) * classes_ + predicted] += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DimensionError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += other.cells_[i];
}

std::int64_t ConfusionMatrix::at(int truth, int predicted) const {
  return cells_[static_cast<std::size_t>(truth) * classes_ + predicted];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (std::int64_t c : cells_) n += c;
  return n;
}

std::int64_t ConfusionMatrix::fp(int c) const {
  std::int64_t n = 0;
  for (int truth = 0; truth < classes_; ++truth) {
    if (truth != c) n += at(truth, c);
  }
  return n;
}

std::int64_t ConfusionMatrix::fn(int c) const {
  std::int64_t n = 0;
  for (int predicted = 0; predicted < classes_; ++predicted) {
    if (predicted != c) n += at(c, predicted);
  }
  return n;
}

std::int64_t ConfusionMatrix::support(int c) const {
  std::int64_t n = 0;
  for (int predicted = 0; predicted < classes_; ++predicted) n += at(c, predicted);
  return n;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes,
                                 int ignore_label) {
  if (predicted.size() != truth.size()) {
    throw DimensionError("prediction and ground-truth sequences differ in length: " +
                         std::to_string(predicted.size()) + " vs " + std::to_string(truth.size()));
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == ignore_label) continue;
    cm.add(truth[i], predicted[i]);
  }
  return cm;
}

std::vector<ClassScore> class_prf1(const ConfusionMatrix& cm) {
  std::vector<ClassScore> scores(static_cast<std::size_t>(cm.num_classes()));
  for (int c = 0; c < cm.num_classes(); ++c) {
    auto& s = scores[static_cast<std::size_t>(c)];
    const auto tp = static_cast<double>(cm.tp(c));
    const auto fp = static_cast<double>(cm.fp(c));
    const auto fn = static_cast<double>(cm.fn(c));
    s.support = cm.support(c);
    s.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    s.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? (s.precision * s.recall) / ((s.precision + s.recall) / 2.0) : 0.0;
  }
  return scores;
}

AggregateScores aggregate_scores(const std::vector<ClassScore>& scores, const ConfusionMatrix& cm,
                                 bool exclude_undefined) {
  const std::int64_t total = cm.total();
  if (total == 0) throw DataError("aggregate_scores requires at least one evaluated position");

  AggregateScores out;
  double macro_sum = 0.0;
  int macro_count = 0;
  double weighted_sum = 0.0;
  std::int64_t diag = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    const auto& s = scores[static_cast<std::size_t>(c)];
    const bool undefined = s.support == 0 && cm.fp(c) == 0;
    if (!(exclude_undefined && undefined)) {
      macro_sum += s.f1;
      ++macro_count;
    }
    weighted_sum += (static_cast<double>(s.support) / static_cast<double>(total)) * s.f1;
    diag += cm.tp(c);
  }
  out.f1_macro = macro_count > 0 ? macro_sum / macro_count : 0.0;
  out.f1_micro = weighted_sum;
  out.accuracy = static_cast<double>(diag) / static_cast<double>(total);

  // Pooled counts: single-label problems pool tp over all positions, so the
  // conventional micro-F1 coincides with accuracy.
  out.f1_micro_pooled = out.accuracy;
  return out;
}

void write_metrics_report(const ConfusionMatrix& cm, const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path) {
  const auto scores = class_prf1(cm);
  const auto agg = aggregate_scores(scores, cm);

  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "class,precision,recall,f1,support\n";
  char buf[128];
  for (int c = 0; c < cm.num_classes(); ++c) {
    const auto& s = scores[static_cast<std::size_t>(c)];
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%lld\n", c, s.precision, s.recall, s.f1,
                  static_cast<long long>(s.support));
    csv << buf;
  }

  nlohmann::json summary = {{"f1_macro", agg.f1_macro},
                            {"f1_micro", agg.f1_micro},
                            {"f1_micro_pooled", agg.f1_micro_pooled},
                            {"accuracy", agg.accuracy},
                            {"total", cm.total()}};
  nlohmann::json matrix = nlohmann::json::array();
  for (int truth = 0; truth < cm.num_classes(); ++truth) {
    nlohmann::json row = nlohmann::json::array();
    for (int predicted = 0; predicted < cm.num_classes(); ++predicted) row.push_back(cm.at(truth, predicted));
    matrix.push_back(row);
  }
  summary["confusion"] = matrix;
  std::ofstream json(json_path);
  if (!json) throw IoError("cannot write " + json_path.string());
  json << summary.dump(2) << "\n";
}

}  // namespace mixseg
