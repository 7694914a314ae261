#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mixseg/errors.hpp"

namespace mixseg {

inline constexpr int kMetricsIgnoreLabel = -1;

// C x C count matrix; rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(int truth, int predicted, std::int64_t count = 1);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return classes_; }
  std::int64_t at(int truth, int predicted) const;
  std::int64_t total() const;
  std::int64_t tp(int c) const { return at(c, c); }
  std::int64_t fp(int c) const;
  std::int64_t fn(int c) const;
  std::int64_t support(int c) const;  // ground-truth count (row sum)

 private:
  int classes_;
  std::vector<std::int64_t> cells_;
};

// Builds a matrix from parallel label sequences; positions labeled with
// ignore_label in the ground truth are skipped.
ConfusionMatrix confusion_matrix(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes,
                                 int ignore_label = kMetricsIgnoreLabel);

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

// Per-class precision, recall and F1; zero denominators yield zero scores.
std::vector<ClassScore> class_prf1(const ConfusionMatrix& cm);

struct AggregateScores {
  double f1_macro = 0.0;
  // Class-wise F1 weighted by ground-truth frequency (the reporting default
  // here); f1_micro_pooled is the conventional pooled-count variant.
  double f1_micro = 0.0;
  double f1_micro_pooled = 0.0;
  double accuracy = 0.0;
};

// When exclude_undefined is set, classes with no ground truth and no
// predictions drop out of the macro mean instead of contributing zeros.
AggregateScores aggregate_scores(const std::vector<ClassScore>& scores, const ConfusionMatrix& cm,
                                 bool exclude_undefined = false);

// One evaluation run serialized as CSV rows plus a JSON summary.
void write_metrics_report(const ConfusionMatrix& cm, const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path);

}  // namespace mixseg
