#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixseg/errors.hpp"
#include "mixseg/ops.hpp"
#include "mixseg/rng.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

// Encoder downsamples by this factor; the decoder's learned path brings the
// map back up 2x before the final nearest interpolation covers the rest.
inline constexpr int kEncoderStride = 16;

struct ModelConfig {
  int num_classes = 4;
  int input_size = 128;
  std::array<int, 4> widths = {64, 64, 128, 256};
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
    if (input_size < kEncoderStride || input_size % kEncoderStride != 0) {
      throw ConfigError("input_size must be a positive multiple of " + std::to_string(kEncoderStride) + ", got " +
                        std::to_string(input_size));
    }
    for (int w : widths) {
      if (w <= 0) throw ConfigError("channel widths must be positive");
    }
  }
};

template <typename T>
struct ConvLayer {
  TensorPtr<T> weight;
  TensorPtr<T> bias;  // null when the layer has no bias
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

template <typename T>
struct BatchNormLayer {
  TensorPtr<T> gamma;
  TensorPtr<T> beta;
  TensorPtr<T> running_mean;
  TensorPtr<T> running_var;
};

template <typename T>
struct ResidualBlock {
  ConvLayer<T> conv1;
  BatchNormLayer<T> bn1;
  ConvLayer<T> conv2;
  BatchNormLayer<T> bn2;
  std::optional<ConvLayer<T>> proj;  // 1x1 shortcut projection when shape changes
  std::optional<BatchNormLayer<T>> proj_bn;
};

template <typename T>
struct NamedTensor {
  std::string name;
  TensorPtr<T> tensor;
};

template <typename T>
struct Model {
  ModelConfig config;

  ConvLayer<T> stem;
  BatchNormLayer<T> stem_bn;
  std::vector<ResidualBlock<T>> blocks;  // three stages of two blocks

  ConvLayer<T> dec_conv;
  BatchNormLayer<T> dec_bn;
  ConvLayer<T> dec_out;  // 1x1, decoder_width -> C, with bias

  ConvLayer<T> head_conv1;  // 1x1, C -> 8, no bias
  BatchNormLayer<T> head_bn;
  ConvLayer<T> head_conv2;  // 1x1, 8 -> C, no bias

  std::vector<NamedTensor<T>> parameters;  // trainable, ordered, unique names
  std::vector<NamedTensor<T>> buffers;     // batch-norm running statistics

  std::vector<TensorPtr<T>> parameter_tensors() const {
    std::vector<TensorPtr<T>> out;
    out.reserve(parameters.size());
    for (const auto& p : parameters) out.push_back(p.tensor);
    return out;
  }

  void zero_grad() const {
    for (const auto& p : parameters) p.tensor->zero_grad();
  }
};

inline constexpr int kDecoderWidth = 64;
inline constexpr int kHeadWidth = 8;

namespace detail {

template <typename T>
class ModelBuilder {
 public:
  explicit ModelBuilder(Model<T>& model, Rng& rng) : model_(model), rng_(rng) {}

  ConvLayer<T> conv(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t kernel,
                    std::int64_t stride, std::int64_t padding, bool with_bias) {
    ConvLayer<T> layer;
    const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(cin * kernel * kernel)));
    layer.weight = randn<T>({cout, cin, kernel, kernel}, rng_, stddev, true);
    layer.stride = stride;
    layer.padding = padding;
    param(name + ".weight", layer.weight);
    if (with_bias) {
      layer.bias = zeros<T>({cout}, true);
      param(name + ".bias", layer.bias);
    }
    return layer;
  }

  BatchNormLayer<T> batchnorm(const std::string& name, std::int64_t channels) {
    BatchNormLayer<T> layer;
    layer.gamma = full<T>({channels}, T(1), true);
    layer.beta = zeros<T>({channels}, true);
    layer.running_mean = zeros<T>({channels}, false);
    layer.running_var = full<T>({channels}, T(1), false);
    param(name + ".gamma", layer.gamma);
    param(name + ".beta", layer.beta);
    buffer(name + ".running_mean", layer.running_mean);
    buffer(name + ".running_var", layer.running_var);
    return layer;
  }

  ResidualBlock<T> block(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t stride) {
    ResidualBlock<T> b;
    b.conv1 = conv(name + ".conv1", cin, cout, 3, stride, 1, false);
    b.bn1 = batchnorm(name + ".bn1", cout);
    b.conv2 = conv(name + ".conv2", cout, cout, 3, 1, 1, false);
    b.bn2 = batchnorm(name + ".bn2", cout);
    if (stride != 1 || cin != cout) {
      b.proj = conv(name + ".proj", cin, cout, 1, stride, 0, false);
      b.proj_bn = batchnorm(name + ".proj_bn", cout);
    }
    return b;
  }

 private:
  void param(std::string name, TensorPtr<T> t) { model_.parameters.push_back({std::move(name), std::move(t)}); }
  void buffer(std::string name, TensorPtr<T> t) { model_.buffers.push_back({std::move(name), std::move(t)}); }

  Model<T>& model_;
  Rng& rng_;
};

}  // namespace detail

// Builds the full architecture: a ResNet-18 encoder truncated after its
// third stage, the segmentation decoder, and the classification head fed by
// the decoder output prior to spatial interpolation. Convolutions use
// He-style initialization seeded by config.seed.
template <typename T>
Model<T> build_model(const ModelConfig& config) {
  config.validate();
  Model<T> model;
  model.config = config;
  Rng rng(derive_seed(config.seed, "model-init"));
  detail::ModelBuilder<T> b(model, rng);

  const auto& w = config.widths;
  model.stem = b.conv("stem.conv", 3, w[0], 7, 2, 3, false);
  model.stem_bn = b.batchnorm("stem.bn", w[0]);

  int cin = w[0];
  for (int stage = 1; stage <= 3; ++stage) {
    const int cout = w[static_cast<std::size_t>(stage)];
    const std::int64_t first_stride = stage == 1 ? 1 : 2;
    for (int i = 0; i < 2; ++i) {
      const std::string name = "encoder.stage" + std::to_string(stage) + ".block" + std::to_string(i);
      model.blocks.push_back(b.block(name, i == 0 ? cin : cout, cout, i == 0 ? first_stride : 1));
    }
    cin = cout;
  }

  model.dec_conv = b.conv("decoder.conv", w[3], kDecoderWidth, 3, 1, 1, false);
  model.dec_bn = b.batchnorm("decoder.bn", kDecoderWidth);
  model.dec_out = b.conv("decoder.out", kDecoderWidth, config.num_classes, 1, 1, 0, true);

  model.head_conv1 = b.conv("classifier.conv1", config.num_classes, kHeadWidth, 1, 1, 0, false);
  model.head_bn = b.batchnorm("classifier.bn", kHeadWidth);
  model.head_conv2 = b.conv("classifier.conv2", kHeadWidth, config.num_classes, 1, 1, 0, false);
  return model;
}

enum class RunMode { kTrain, kEval };

template <typename T>
TensorPtr<T> apply_conv(const ConvLayer<T>& layer, const TensorPtr<T>& x) {
  return conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding);
}

template <typename T>
TensorPtr<T> apply_batchnorm(const BatchNormLayer<T>& layer, const TensorPtr<T>& x, RunMode mode) {
  return batchnorm2d(x, layer.gamma, layer.beta, layer.running_mean, layer.running_var,
                     mode == RunMode::kTrain ? BatchNormMode::kTrain : BatchNormMode::kEval);
}

template <typename T>
TensorPtr<T> block_forward(const ResidualBlock<T>& block, const TensorPtr<T>& x, RunMode mode) {
  auto main = relu(apply_batchnorm(block.bn1, apply_conv(block.conv1, x), mode));
  main = apply_batchnorm(block.bn2, apply_conv(block.conv2, main), mode);
  auto skip = block.proj ? apply_batchnorm(*block.proj_bn, apply_conv(*block.proj, x), mode) : x;
  return relu(add(main, skip));
}

template <typename T>
TensorPtr<T> encode(const Model<T>& model, const TensorPtr<T>& x, RunMode mode) {
  auto y = relu(apply_batchnorm(model.stem_bn, apply_conv(model.stem, x), mode));
  y = max_pool2d(y, 3, 2, 1);
  for (const auto& block : model.blocks) y = block_forward(block, y, mode);
  return y;
}

template <typename T>
struct ForwardOut {
  TensorPtr<T> seg_logits;  // N x C x S x S
  TensorPtr<T> pre_interp;  // N x C x S/8 x S/8, classifier input
  TensorPtr<T> cls_logits;  // N x C; null when the classifier head is skipped
};

// Full forward pass. Segmentation-only batches skip the classifier head so
// its batch-norm statistics are only driven by classification items.
template <typename T>
ForwardOut<T> forward(const Model<T>& model, const TensorPtr<T>& x, RunMode mode, bool with_classifier = true) {
  detail::check_4d(x->shape, "model input");
  const std::int64_t side = model.config.input_size;
  if (x->dim(1) != 3 || x->dim(2) != side || x->dim(3) != side) {
    throw DimensionError("model input must be Nx3x" + std::to_string(side) + "x" + std::to_string(side) + ", got " +
                         shape_str(x->shape));
  }

  auto features = encode(model, x, mode);

  auto y = relu(apply_batchnorm(model.dec_bn, apply_conv(model.dec_conv, features), mode));
  y = upsample_nearest(y, y->dim(2) * 2, y->dim(3) * 2);
  ForwardOut<T> out;
  out.pre_interp = apply_conv(model.dec_out, y);
  out.seg_logits = upsample_nearest(out.pre_interp, side, side);

  if (with_classifier) {
    auto head = adaptive_avg_pool2d(out.pre_interp, 1, 1);
    head = relu(apply_batchnorm(model.head_bn, apply_conv(model.head_conv1, head), mode));
    head = apply_conv(model.head_conv2, head);
    out.cls_logits = reshape(head, {head->dim(0), head->dim(1)});
  }
  return out;
}

}  // namespace mixseg
