#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mixseg/adam.hpp"
#include "mixseg/errors.hpp"
#include "mixseg/metrics.hpp"
#include "mixseg/model.hpp"
#include "mixseg/patch.hpp"
#include "mixseg/rng.hpp"

namespace mixseg {

enum class WeightMode { kInverseFrequency, kUniform };

struct TrainConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  int batch_size = 20;
  int epochs = 100;
  std::uint64_t seed = 0;
  WeightMode class_weight_mode = WeightMode::kInverseFrequency;
  bool hflip = false;
  bool vflip = false;

  void validate() const;
};

// Inverse-frequency class weights from the pixelwise label distribution of
// the segmentation samples, normalized to mean one. Classes absent from
// every mask receive the largest observed-class weight. Uniform mode
// returns all ones.
std::vector<float> compute_class_weights(const std::vector<SegSample>& samples, int num_classes, WeightMode mode);

// One training batch as indices into the segmentation and classification
// pools handed to train().
struct MixedBatch {
  std::vector<int> seg_items;
  std::vector<int> cls_items;
};

// Shuffles both pools (seeded per epoch) and interleaves them so every batch
// carries the two supervision kinds in proportion to the remaining pool
// sizes; each sample appears exactly once per epoch.
std::vector<MixedBatch> make_mixed_batches(int seg_count, int cls_count, int batch_size, std::uint64_t seed,
                                           int epoch);

struct LossPair {
  float seg = 0.0f;
  float cls = 0.0f;
  float total() const { return seg + cls; }
};

struct StepItems {
  std::vector<const SegSample*> seg;
  std::vector<const ClsSample*> cls;
};

// One optimization step of the mixed objective: the segmentation sub-batch
// drives the pixel loss, the classification sub-batch drives the image-level
// loss through the segmentation pathway, and a single Adam step minimizes
// their sum.
LossPair train_step(Model<float>& model, const StepItems& items, const std::vector<float>& class_weights,
                    const std::vector<TensorPtr<float>>& params, AdamState<float>& optimizer);

struct EpochStats {
  int epoch = 0;
  float seg_loss = 0.0f;
  float cls_loss = 0.0f;
  double val_f1_micro = 0.0;
  double val_f1_macro = 0.0;
  float total_loss() const { return seg_loss + cls_loss; }
};

struct TrainResult {
  Model<float> model;  // best-validation parameters when a validation pool is given
  std::vector<EpochStats> history;
  int best_epoch = -1;
};

// Full training loop. Validation (micro-F1 on val_pool) runs once per epoch
// and selects the retained checkpoint; with an empty val_pool the final
// parameters are kept.
TrainResult train(const std::vector<SegSample>& seg_pool, const std::vector<ClsSample>& cls_pool,
                  const std::vector<SegSample>& val_pool, const ModelConfig& model_config,
                  const TrainConfig& train_config);

// Pixel-level confusion over seg logits argmax.
ConfusionMatrix evaluate_segmentation(const Model<float>& model, const std::vector<SegSample>& samples);
// Item-level confusion over cls logits argmax.
ConfusionMatrix evaluate_classification(const Model<float>& model, const std::vector<ClsSample>& samples);

// Input tensor from patches, channels-first, scaled to [0,1].
TensorPtr<float> images_to_tensor(const std::vector<const ImageRgb*>& images);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history);

}  // namespace mixseg
