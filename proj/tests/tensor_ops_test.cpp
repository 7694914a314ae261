#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mixseg/adam.hpp"
#include "mixseg/ops.hpp"
#include "mixseg/rng.hpp"
#include "mixseg/tensor.hpp"

using namespace mixseg;

namespace {

TensorPtr<double> tensor4d(Shape shape, std::vector<double> values, bool rg = false) {
  return make_tensor<double>(std::move(shape), std::move(values), rg);
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  auto x = tensor4d({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto w = tensor4d({1, 1, 1, 1}, {1.0});
  auto b = make_tensor<double>({1}, {0.0});
  auto y = conv2d(x, w, b, 1, 0);
  CHECK(y->shape == Shape{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(y->data[i] == doctest::Approx(x->data[i]));
}

TEST_CASE("conv2d all-ones 3x3 kernel sums the window") {
  auto x = tensor4d({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto w = tensor4d({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  auto y = conv2d(x, w, nullptr, 1, 0);
  CHECK(y->shape == Shape{1, 1, 1, 1});
  CHECK(y->data[0] == doctest::Approx(45.0));
}

TEST_CASE("conv2d output shape follows the floor formula") {
  // Every (kernel, stride, padding) combination the model uses.
  struct Case {
    std::int64_t k, s, p, h;
  };
  const std::vector<Case> cases = {{7, 2, 3, 128}, {3, 1, 1, 32}, {3, 2, 1, 32}, {1, 2, 0, 32}, {1, 1, 0, 16}};
  for (const auto& c : cases) {
    auto x = zeros<double>({1, 2, c.h, c.h});
    auto w = zeros<double>({3, 2, c.k, c.k});
    auto y = conv2d(x, w, nullptr, c.s, c.p);
    const std::int64_t expected = (c.h + 2 * c.p - c.k) / c.s + 1;
    CHECK(y->dim(2) == expected);
    CHECK(y->dim(3) == expected);
  }
}

TEST_CASE("conv2d rejects mismatched channel axes") {
  auto x = zeros<double>({1, 3, 4, 4});
  auto w = zeros<double>({2, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 0), DimensionError);
  auto w2 = zeros<double>({2, 3, 3, 3});
  auto bad_bias = zeros<double>({3});
  CHECK_THROWS_AS(conv2d(x, w2, bad_bias, 1, 0), DimensionError);
  auto big_kernel = zeros<double>({2, 3, 5, 5});
  CHECK_THROWS_AS(conv2d(x, big_kernel, nullptr, 1, 0), DimensionError);
}

TEST_CASE("batchnorm2d maps constant input to zero") {
  auto x = full<double>({2, 3, 2, 2}, 7.5);
  auto gamma = full<double>({3}, 1.0);
  auto beta = zeros<double>({3});
  auto rm = zeros<double>({3});
  auto rv = full<double>({3}, 1.0);
  auto y = batchnorm2d(x, gamma, beta, rm, rv, BatchNormMode::kTrain);
  for (double v : y->data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("batchnorm2d normalizes a two-value batch to about +-1") {
  auto x = tensor4d({2, 1, 1, 1}, {1.0, 3.0});
  auto gamma = full<double>({1}, 1.0);
  auto beta = zeros<double>({1});
  auto rm = zeros<double>({1});
  auto rv = full<double>({1}, 1.0);
  auto y = batchnorm2d(x, gamma, beta, rm, rv, BatchNormMode::kTrain);
  // mean 2, variance 1, so outputs are +-1 up to the epsilon correction.
  CHECK(y->data[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y->data[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("batchnorm2d affine transform applies gamma and beta") {
  auto x = tensor4d({2, 1, 1, 1}, {1.0, 3.0});
  auto gamma1 = full<double>({1}, 1.0);
  auto beta0 = zeros<double>({1});
  auto gamma2 = full<double>({1}, 2.0);
  auto beta5 = full<double>({1}, 5.0);
  auto rm = zeros<double>({1});
  auto rv = full<double>({1}, 1.0);
  auto base = batchnorm2d(x, gamma1, beta0, rm, rv, BatchNormMode::kTrain);
  auto affine = batchnorm2d(x, gamma2, beta5, rm, rv, BatchNormMode::kTrain);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(affine->data[i] == doctest::Approx(2.0 * base->data[i] + 5.0));
  }
}

TEST_CASE("batchnorm2d rejects mis-sized affine parameters") {
  auto x = zeros<double>({1, 3, 2, 2});
  auto gamma = full<double>({2}, 1.0);
  auto beta = zeros<double>({3});
  auto rm = zeros<double>({3});
  auto rv = full<double>({3}, 1.0);
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, rm, rv, BatchNormMode::kTrain), DimensionError);
}

TEST_CASE("relu clamps negatives and gates the gradient") {
  auto x = make_tensor<double>({3}, {-1.0, 0.0, 2.0}, true);
  auto y = relu(x);
  CHECK(y->data == std::vector<double>{0.0, 0.0, 2.0});

  auto all_neg = make_tensor<double>({4}, {-3.0, -2.0, -1.0, -0.5}, true);
  auto loss = sum(relu(all_neg));
  backward(loss);
  all_neg->ensure_grad();
  for (double g : all_neg->grad) CHECK(g == 0.0);
  CHECK(loss->data[0] == 0.0);
}

TEST_CASE("max_pool2d picks window maxima") {
  auto x = tensor4d({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = max_pool2d(x, 2, 2, 0);
  CHECK(y->shape == Shape{1, 1, 1, 1});
  CHECK(y->data[0] == 4.0);
}

TEST_CASE("max_pool2d 3x3 stride 2 pad 1 on 4x4 yields 2x2") {
  auto x = zeros<double>({1, 1, 4, 4});
  auto y = max_pool2d(x, 3, 2, 1);
  CHECK(y->shape == Shape{1, 1, 2, 2});
}

TEST_CASE("max_pool2d routes gradient to the first maximum on ties") {
  auto x = make_tensor<double>({1, 1, 2, 2}, {5.0, 5.0, 5.0, 5.0}, true);
  auto y = max_pool2d(x, 2, 2, 0);
  backward(sum(y));
  CHECK(x->grad == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("adaptive_avg_pool2d returns the channel mean with uniform gradient") {
  auto x = full<double>({1, 2, 3, 3}, 4.25, true);
  auto y = adaptive_avg_pool2d(x, 1, 1);
  CHECK(y->shape == Shape{1, 2, 1, 1});
  CHECK(y->data[0] == doctest::Approx(4.25));
  CHECK(y->data[1] == doctest::Approx(4.25));
  backward(sum(y));
  for (double g : x->grad) CHECK(g == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("adaptive_avg_pool2d rejects unsupported output sizes") {
  auto x = zeros<double>({1, 1, 4, 4});
  CHECK_THROWS_AS(adaptive_avg_pool2d(x, 2, 2), ConfigError);
}

TEST_CASE("upsample_nearest replicates pixels") {
  auto x = tensor4d({1, 1, 1, 1}, {3.5});
  auto y = upsample_nearest(x, 2, 2);
  CHECK(y->data == std::vector<double>{3.5, 3.5, 3.5, 3.5});
}

TEST_CASE("upsample_nearest 16 to 128 replicates each pixel 8x8") {
  Rng rng(11);
  auto x = randn<double>({1, 1, 16, 16}, rng);
  auto y = upsample_nearest(x, 128, 128);
  for (std::int64_t h = 0; h < 128; ++h) {
    for (std::int64_t w = 0; w < 128; w += 17) {
      CHECK(y->data[static_cast<std::size_t>(h * 128 + w)] ==
            x->data[static_cast<std::size_t>((h / 8) * 16 + w / 8)]);
    }
  }
  // Gradient consistency: output total is 64x the input total for ratio 8.
  double sx = 0.0, sy = 0.0;
  for (double v : x->data) sx += v;
  for (double v : y->data) sy += v;
  CHECK(sy == doctest::Approx(64.0 * sx));
}

TEST_CASE("upsample_nearest rejects non-integer ratios") {
  auto x = zeros<double>({1, 1, 3, 3});
  CHECK_THROWS_AS(upsample_nearest(x, 4, 4), ConfigError);
}

TEST_CASE("softmax_cross_entropy equals ln C for uniform logits") {
  auto logits = zeros<double>({1, 4});
  auto loss = softmax_cross_entropy(logits, {2});
  CHECK(loss->data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy vanishes for a dominant correct logit") {
  auto logits = make_tensor<double>({1, 2}, {50.0, 0.0});
  auto loss = softmax_cross_entropy(logits, {0});
  CHECK(loss->data[0] < 1e-12);
  CHECK(loss->data[0] >= 0.0);
}

TEST_CASE("softmax_cross_entropy class weight scales the loss term") {
  auto logits = make_tensor<double>({1, 2}, {0.3, -0.7});
  auto unweighted = softmax_cross_entropy(logits, {1});
  auto weighted = softmax_cross_entropy(logits, {1}, {1.0, 2.0});
  CHECK(weighted->data[0] == doctest::Approx(2.0 * unweighted->data[0]).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy is non-negative on random logits") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = randn<double>({3, 5}, rng, 3.0);
    std::vector<int> targets = {static_cast<int>(rng.next_below(5)), static_cast<int>(rng.next_below(5)),
                                static_cast<int>(rng.next_below(5))};
    auto loss = softmax_cross_entropy(logits, targets);
    CHECK(loss->data[0] >= 0.0);
  }
}

TEST_CASE("softmax_cross_entropy spatial variant honours the ignore label") {
  auto logits = zeros<double>({1, 2, 1, 2});
  logits->data = {3.0, 1.0, 0.0, 0.0};  // channel-major: class0 at both pixels, then class1
  auto full_loss = softmax_cross_entropy(logits, {0, 1});
  auto ignore_second = softmax_cross_entropy(logits, {0, kIgnoreLabel});
  // Ignoring the second pixel leaves only the first pixel's term.
  auto only_first = softmax_cross_entropy(logits, {0, 0});
  CHECK(ignore_second->data[0] < full_loss->data[0]);
  CHECK(ignore_second->data[0] == doctest::Approx(-std::log(std::exp(3.0) / (std::exp(3.0) + 1.0))));
  (void)only_first;
}

TEST_CASE("softmax_cross_entropy rejects out-of-range targets") {
  auto logits = zeros<double>({1, 3});
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {3}), LabelError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {-2}), LabelError);
}

TEST_CASE("backward leaves unreachable tensors with zero gradient") {
  auto x = make_tensor<double>({2}, {1.0, 2.0}, true);
  auto unrelated = make_tensor<double>({2}, {5.0, 6.0}, true);
  backward(sum(relu(x)));
  unrelated->ensure_grad();
  for (double g : unrelated->grad) CHECK(g == 0.0);
}

TEST_CASE("backward accumulates across repeated calls") {
  auto x = make_tensor<double>({3}, {1.0, 2.0, 3.0}, true);
  auto loss = sum(relu(x));
  backward(loss, /*retain_graph=*/true);
  const std::vector<double> first = x->grad;
  backward(loss);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(x->grad[i] == doctest::Approx(2.0 * first[i]));
  }
}

TEST_CASE("backward rejects non-scalar outputs") {
  auto x = make_tensor<double>({2}, {1.0, 2.0}, true);
  auto y = relu(x);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  auto p = make_tensor<float>({3}, {1.0f, -2.0f, 3.0f}, true);
  const std::vector<float> before = p->data;
  std::vector<TensorPtr<float>> params = {p};
  auto state = make_adam_state(params);
  p->ensure_grad();
  adam_step(params, state);
  CHECK(state.step_count == 1);
  CHECK(p->data == before);
}

TEST_CASE("adam first step moves each weight by about lr against the gradient sign") {
  auto p = make_tensor<double>({2}, {0.5, -0.25}, true);
  std::vector<TensorPtr<double>> params = {p};
  auto state = make_adam_state<double>(params, 1e-4, 0.9, 0.999, 1e-12);
  p->ensure_grad();
  p->grad = {0.07, -3.2};
  adam_step(params, state);
  CHECK(p->data[0] == doctest::Approx(0.5 - 1e-4).epsilon(1e-6));
  CHECK(p->data[1] == doctest::Approx(-0.25 + 1e-4).epsilon(1e-6));
}

TEST_CASE("adam defaults match the training configuration") {
  auto p = zeros<float>({1}, true);
  std::vector<TensorPtr<float>> params = {p};
  auto state = make_adam_state(params);
  CHECK(state.lr == doctest::Approx(1e-4f));
  CHECK(state.beta1 == doctest::Approx(0.9f));
  CHECK(state.beta2 == doctest::Approx(0.999f));
}

TEST_CASE("adam rejects mismatched state shapes") {
  auto p = zeros<float>({4}, true);
  auto q = zeros<float>({2}, true);
  std::vector<TensorPtr<float>> params = {p};
  auto state = make_adam_state(params);
  std::vector<TensorPtr<float>> wrong = {q};
  CHECK_THROWS_AS(adam_step(wrong, state), DimensionError);
}

TEST_CASE("ops are bitwise deterministic for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    auto x = randn<float>({2, 3, 8, 8}, rng, 1.0f, true);
    auto w = randn<float>({4, 3, 3, 3}, rng, 0.5f, true);
    auto y = conv2d(x, w, nullptr, 1, 1);
    auto z = max_pool2d(relu(y), 2, 2, 0);
    return z->data;
  };
  CHECK(run(42) == run(42));
  CHECK(run(42) != run(43));
}
