#include "mixseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mixseg/ops.hpp"

namespace mixseg {

void TrainConfig::validate() const {
  if (lr <= 0.0f) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
}

std::vector<float> compute_class_weights(const std::vector<SegSample>& samples, int num_classes, WeightMode mode) {
  if (mode == WeightMode::kUniform) return std::vector<float>(static_cast<std::size_t>(num_classes), 1.0f);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  std::int64_t total = 0;
  for (const auto& sample : samples) {
    for (std::uint8_t label : sample.mask.labels) {
      if (label >= num_classes) {
        throw LabelError("mask label " + std::to_string(label) + " outside [0," + std::to_string(num_classes) + ")");
      }
      counts[label] += 1;
      ++total;
    }
  }
  if (total == 0) throw DataError("class weights need at least one labeled pixel");

  // Inverse frequency for observed classes; unobserved classes are capped at
  // the largest observed weight.
  std::vector<double> weights(static_cast<std::size_t>(num_classes), 0.0);
  double max_weight = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) {
      const double freq = static_cast<double>(counts[static_cast<std::size_t>(c)]) / static_cast<double>(total);
      weights[static_cast<std::size_t>(c)] = 1.0 / freq;
      max_weight = std::max(max_weight, weights[static_cast<std::size_t>(c)]);
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) weights[static_cast<std::size_t>(c)] = max_weight;
  }
  double mean = std::accumulate(weights.begin(), weights.end(), 0.0) / num_classes;
  std::vector<float> out(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    out[static_cast<std::size_t>(c)] = static_cast<float>(weights[static_cast<std::size_t>(c)] / mean);
  }
  return out;
}

std::vector<MixedBatch> make_mixed_batches(int seg_count, int cls_count, int batch_size, std::uint64_t seed,
                                           int epoch) {
  if (seg_count < 0 || cls_count < 0) throw ConfigError("pool sizes must be non-negative");
  if (seg_count + cls_count == 0) throw DataError("both sample pools are empty");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (seg_count > 0 && cls_count > 0 && batch_size < 2) {
    throw ConfigError("batch_size must be at least 2 when both supervision kinds are present");
  }

  std::vector<int> seg_order(static_cast<std::size_t>(seg_count));
  std::vector<int> cls_order(static_cast<std::size_t>(cls_count));
  std::iota(seg_order.begin(), seg_order.end(), 0);
  std::iota(cls_order.begin(), cls_order.end(), 0);
  Rng seg_rng(derive_seed(seed, "epoch-shuffle-seg", epoch));
  Rng cls_rng(derive_seed(seed, "epoch-shuffle-cls", epoch));
  seg_rng.shuffle(seg_order);
  cls_rng.shuffle(cls_order);

  // Proportional interleave: at every position pick the pool lagging behind
  // its overall share, then cut the merged sequence into batches.
  const int total = seg_count + cls_count;
  std::vector<MixedBatch> batches;
  batches.resize(static_cast<std::size_t>((total + batch_size - 1) / batch_size));
  int seg_taken = 0, cls_taken = 0;
  for (int t = 0; t < total; ++t) {
    auto& batch = batches[static_cast<std::size_t>(t / batch_size)];
    const bool take_seg =
        cls_taken >= cls_count ||
        (seg_taken < seg_count &&
         static_cast<std::int64_t>(seg_taken) * cls_count <= static_cast<std::int64_t>(cls_taken) * seg_count);
    if (take_seg) {
      batch.seg_items.push_back(seg_order[static_cast<std::size_t>(seg_taken++)]);
    } else {
      batch.cls_items.push_back(cls_order[static_cast<std::size_t>(cls_taken++)]);
    }
  }
  return batches;
}

TensorPtr<float> images_to_tensor(const std::vector<const ImageRgb*>& images) {
  if (images.empty()) throw DataError("images_to_tensor requires at least one image");
  const int h = images[0]->height;
  const int w = images[0]->width;
  auto out = zeros<float>({static_cast<std::int64_t>(images.size()), 3, h, w});
  float* dst = out->data.data();
  for (const ImageRgb* image : images) {
    if (image->height != h || image->width != w) throw DimensionError("batch images must share one size");
    const std::uint8_t* src = image->pixels.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (std::int64_t p = 0; p < plane; ++p) {
      dst[p] = static_cast<float>(src[3 * p]) / 255.0f;
      dst[plane + p] = static_cast<float>(src[3 * p + 1]) / 255.0f;
      dst[2 * plane + p] = static_cast<float>(src[3 * p + 2]) / 255.0f;
    }
    dst += 3 * plane;
  }
  return out;
}

namespace {

std::vector<int> masks_to_targets(const std::vector<const SegSample*>& items) {
  std::vector<int> targets;
  for (const SegSample* item : items) {
    for (std::uint8_t label : item->mask.labels) targets.push_back(label);
  }
  return targets;
}

}  // namespace

LossPair train_step(Model<float>& model, const StepItems& items, const std::vector<float>& class_weights,
                    const std::vector<TensorPtr<float>>& params, AdamState<float>& optimizer) {
  if (items.seg.empty() && items.cls.empty()) throw DataError("train_step requires a non-empty batch");
  model.zero_grad();

  LossPair losses;
  TensorPtr<float> seg_loss, cls_loss;

  if (!items.seg.empty()) {
    std::vector<const ImageRgb*> images;
    for (const SegSample* item : items.seg) images.push_back(&item->image);
    auto x = images_to_tensor(images);
    // Pixel-supervised items never pass through the classifier head.
    auto out = forward(model, x, RunMode::kTrain, /*with_classifier=*/false);
    seg_loss = softmax_cross_entropy(out.seg_logits, masks_to_targets(items.seg), class_weights);
    losses.seg = seg_loss->data[0];
  }
  if (!items.cls.empty()) {
    std::vector<const ImageRgb*> images;
    std::vector<int> labels;
    for (const ClsSample* item : items.cls) {
      images.push_back(&item->image);
      labels.push_back(item->label);
    }
    auto x = images_to_tensor(images);
    auto out = forward(model, x, RunMode::kTrain, /*with_classifier=*/true);
    cls_loss = softmax_cross_entropy(out.cls_logits, labels, class_weights);
    losses.cls = cls_loss->data[0];
  }

  if (!std::isfinite(losses.seg) || !std::isfinite(losses.cls)) {
    throw NumericError("non-finite loss at optimizer step " + std::to_string(optimizer.step_count + 1) +
                       " (seg=" + std::to_string(losses.seg) + ", cls=" + std::to_string(losses.cls) + ")");
  }

  TensorPtr<float> total =
      seg_loss && cls_loss ? add(seg_loss, cls_loss) : (seg_loss ? seg_loss : cls_loss);
  backward(total);
  adam_step(params, optimizer);
  return losses;
}

namespace {

void flip_image(ImageRgb& image, bool horizontal, bool vertical) {
  if (horizontal) {
    for (int r = 0; r < image.height; ++r) {
      for (int c = 0; c < image.width / 2; ++c) {
        for (int ch = 0; ch < 3; ++ch) std::swap(image.at(r, c)[ch], image.at(r, image.width - 1 - c)[ch]);
      }
    }
  }
  if (vertical) {
    for (int r = 0; r < image.height / 2; ++r) {
      for (int c = 0; c < image.width; ++c) {
        for (int ch = 0; ch < 3; ++ch) std::swap(image.at(r, c)[ch], image.at(image.height - 1 - r, c)[ch]);
      }
    }
  }
}

void flip_mask(LabelMask& mask, bool horizontal, bool vertical) {
  if (horizontal) {
    for (int r = 0; r < mask.height; ++r) {
      for (int c = 0; c < mask.width / 2; ++c) std::swap(mask.at(r, c), mask.at(r, mask.width - 1 - c));
    }
  }
  if (vertical) {
    for (int r = 0; r < mask.height / 2; ++r) {
      for (int c = 0; c < mask.width; ++c) std::swap(mask.at(r, c), mask.at(mask.height - 1 - r, c));
    }
  }
}

struct ParamSnapshot {
  std::vector<std::vector<float>> parameters;
  std::vector<std::vector<float>> buffers;
};

ParamSnapshot snapshot(const Model<float>& model) {
  ParamSnapshot snap;
  for (const auto& p : model.parameters) snap.parameters.push_back(p.tensor->data);
  for (const auto& b : model.buffers) snap.buffers.push_back(b.tensor->data);
  return snap;
}

void restore(Model<float>& model, const ParamSnapshot& snap) {
  for (std::size_t i = 0; i < model.parameters.size(); ++i) model.parameters[i].tensor->data = snap.parameters[i];
  for (std::size_t i = 0; i < model.buffers.size(); ++i) model.buffers[i].tensor->data = snap.buffers[i];
}

}  // namespace

TrainResult train(const std::vector<SegSample>& seg_pool, const std::vector<ClsSample>& cls_pool,
                  const std::vector<SegSample>& val_pool, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
  train_config.validate();
  if (seg_pool.empty() && cls_pool.empty()) throw DataError("training requires at least one sample");

  TrainResult result;
  result.model = build_model<float>(model_config);
  auto params = result.model.parameter_tensors();
  auto optimizer =
      make_adam_state(params, train_config.lr, train_config.beta1, train_config.beta2);

  const std::vector<float> class_weights =
      seg_pool.empty() ? std::vector<float>(static_cast<std::size_t>(model_config.num_classes), 1.0f)
                       : compute_class_weights(seg_pool, model_config.num_classes, train_config.class_weight_mode);

  const bool augment = train_config.hflip || train_config.vflip;
  ParamSnapshot best;
  double best_val = -1.0;

  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    const auto batches = make_mixed_batches(static_cast<int>(seg_pool.size()), static_cast<int>(cls_pool.size()),
                                            train_config.batch_size, derive_seed(train_config.seed, "batches"), epoch);
    Rng augment_rng(derive_seed(train_config.seed, "augment", epoch));
    float seg_sum = 0.0f, cls_sum = 0.0f;
    // Flipped copies live here so StepItems can keep plain pointers.
    std::vector<SegSample> seg_flipped;
    std::vector<ClsSample> cls_flipped;
    for (const auto& batch : batches) {
      StepItems items;
      seg_flipped.clear();
      cls_flipped.clear();
      seg_flipped.reserve(batch.seg_items.size());
      cls_flipped.reserve(batch.cls_items.size());
      for (int index : batch.seg_items) {
        const SegSample& sample = seg_pool[static_cast<std::size_t>(index)];
        if (augment) {
          const bool h = train_config.hflip && augment_rng.next_double() < 0.5;
          const bool v = train_config.vflip && augment_rng.next_double() < 0.5;
          seg_flipped.push_back(sample);
          flip_image(seg_flipped.back().image, h, v);
          flip_mask(seg_flipped.back().mask, h, v);
          items.seg.push_back(&seg_flipped.back());
        } else {
          items.seg.push_back(&sample);
        }
      }
      for (int index : batch.cls_items) {
        const ClsSample& sample = cls_pool[static_cast<std::size_t>(index)];
        if (augment) {
          const bool h = train_config.hflip && augment_rng.next_double() < 0.5;
          const bool v = train_config.vflip && augment_rng.next_double() < 0.5;
          cls_flipped.push_back(sample);
          flip_image(cls_flipped.back().image, h, v);
          items.cls.push_back(&cls_flipped.back());
        } else {
          items.cls.push_back(&sample);
        }
      }
      const LossPair losses = train_step(result.model, items, class_weights, params, optimizer);
      seg_sum += losses.seg;
      cls_sum += losses.cls;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.seg_loss = seg_sum / static_cast<float>(batches.size());
    stats.cls_loss = cls_sum / static_cast<float>(batches.size());
    if (!val_pool.empty()) {
      auto cm = evaluate_segmentation(result.model, val_pool);
      auto agg = aggregate_scores(class_prf1(cm), cm);
      stats.val_f1_micro = agg.f1_micro;
      stats.val_f1_macro = agg.f1_macro;
      if (agg.f1_micro > best_val) {
        best_val = agg.f1_micro;
        best = snapshot(result.model);
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(stats);
  }

  if (result.best_epoch >= 0) restore(result.model, best);
  return result;
}

namespace {

constexpr int kEvalChunk = 16;

}  // namespace

ConfusionMatrix evaluate_segmentation(const Model<float>& model, const std::vector<SegSample>& samples) {
  ConfusionMatrix cm(model.config.num_classes);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const std::size_t end = std::min(samples.size(), start + kEvalChunk);
    std::vector<const ImageRgb*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&samples[i].image);
    auto out = forward(model, images_to_tensor(images), RunMode::kEval, /*with_classifier=*/false);
    const auto& logits = *out.seg_logits;
    const std::int64_t c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    for (std::size_t i = start; i < end; ++i) {
      const std::int64_t n = static_cast<std::int64_t>(i - start);
      for (std::int64_t p = 0; p < hw; ++p) {
        int arg = 0;
        float best = logits.data[static_cast<std::size_t>((n * c) * hw + p)];
        for (std::int64_t cc = 1; cc < c; ++cc) {
          const float v = logits.data[static_cast<std::size_t>((n * c + cc) * hw + p)];
          if (v > best) {
            best = v;
            arg = static_cast<int>(cc);
          }
        }
        cm.add(samples[i].mask.labels[static_cast<std::size_t>(p)], arg);
      }
    }
  }
  return cm;
}

ConfusionMatrix evaluate_classification(const Model<float>& model, const std::vector<ClsSample>& samples) {
  ConfusionMatrix cm(model.config.num_classes);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const std::size_t end = std::min(samples.size(), start + kEvalChunk);
    std::vector<const ImageRgb*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&samples[i].image);
    auto out = forward(model, images_to_tensor(images), RunMode::kEval);
    const auto& logits = *out.cls_logits;
    const std::int64_t c = logits.dim(1);
    for (std::size_t i = start; i < end; ++i) {
      const std::int64_t n = static_cast<std::int64_t>(i - start);
      int arg = 0;
      float best = logits.data[static_cast<std::size_t>(n * c)];
      for (std::int64_t cc = 1; cc < c; ++cc) {
        const float v = logits.data[static_cast<std::size_t>(n * c + cc)];
        if (v > best) {
          best = v;
          arg = static_cast<int>(cc);
        }
      }
      cm.add(samples[i].label, arg);
    }
  }
  return cm;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,seg_loss,cls_loss,val_f1_micro,val_f1_macro\n";
  char buf[160];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", e.epoch, static_cast<double>(e.seg_loss),
                  static_cast<double>(e.cls_loss), e.val_f1_micro, e.val_f1_macro);
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace mixseg
