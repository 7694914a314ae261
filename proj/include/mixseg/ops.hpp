#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixseg/errors.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

namespace detail {

inline void check_4d(const Shape& s, const char* what) {
  if (s.size() != 4) {
    throw DimensionError(std::string(what) + " must be 4-D (N,C,H,W), got " + shape_str(s));
  }
}

// Gathers conv input windows into a (Cin*Kh*Kw) x (Hout*Wout) matrix with
// zero padding, so the convolution and its gradients are plain GEMM loops.
template <typename T>
void im2col(const T* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
            std::int64_t stride, std::int64_t pad, std::int64_t hout, std::int64_t wout, T* col) {
  const std::int64_t patch = hout * wout;
  for (std::int64_t ci = 0; ci < cin; ++ci) {
    for (std::int64_t dy = 0; dy < kh; ++dy) {
      for (std::int64_t dx = 0; dx < kw; ++dx) {
        T* dst = col + ((ci * kh + dy) * kw + dx) * patch;
        for (std::int64_t ho = 0; ho < hout; ++ho) {
          const std::int64_t hi = ho * stride - pad + dy;
          T* row = dst + ho * wout;
          if (hi < 0 || hi >= h) {
            std::fill(row, row + wout, T(0));
            continue;
          }
          const T* src = x + (ci * h + hi) * w;
          for (std::int64_t wo = 0; wo < wout; ++wo) {
            const std::int64_t wi = wo * stride - pad + dx;
            row[wo] = (wi >= 0 && wi < w) ? src[wi] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add counterpart of im2col.
template <typename T>
void col2im_add(const T* col, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
                std::int64_t stride, std::int64_t pad, std::int64_t hout, std::int64_t wout, T* dx) {
  const std::int64_t patch = hout * wout;
  for (std::int64_t ci = 0; ci < cin; ++ci) {
    for (std::int64_t dy = 0; dy < kh; ++dy) {
      for (std::int64_t dx_off = 0; dx_off < kw; ++dx_off) {
        const T* src = col + ((ci * kh + dy) * kw + dx_off) * patch;
        for (std::int64_t ho = 0; ho < hout; ++ho) {
          const std::int64_t hi = ho * stride - pad + dy;
          if (hi < 0 || hi >= h) continue;
          T* row = dx + (ci * h + hi) * w;
          const T* s = src + ho * wout;
          for (std::int64_t wo = 0; wo < wout; ++wo) {
            const std::int64_t wi = wo * stride - pad + dx_off;
            if (wi >= 0 && wi < w) row[wi] += s[wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, NCHW input against (Cout,Cin,Kh,Kw) weights.
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& weight,
                    const std::type_identity_t<TensorPtr<T>>& bias, std::int64_t stride, std::int64_t padding) {
  detail::check_4d(x->shape, "conv2d input");
  detail::check_4d(weight->shape, "conv2d weight");
  if (stride <= 0 || padding < 0) throw ConfigError("conv2d requires stride > 0 and padding >= 0");
  const std::int64_t n = x->dim(0), cin = x->dim(1), h = x->dim(2), w = x->dim(3);
  const std::int64_t cout = weight->dim(0), kh = weight->dim(2), kw = weight->dim(3);
  if (weight->dim(1) != cin) {
    throw DimensionError("conv2d channel axis mismatch: input C=" + std::to_string(cin) + ", weight Cin=" +
                         std::to_string(weight->dim(1)));
  }
  if (kh > h + 2 * padding) {
    throw DimensionError("conv2d kernel height " + std::to_string(kh) + " exceeds padded input height " +
                         std::to_string(h + 2 * padding));
  }
  if (kw > w + 2 * padding) {
    throw DimensionError("conv2d kernel width " + std::to_string(kw) + " exceeds padded input width " +
                         std::to_string(w + 2 * padding));
  }
  if (bias && (bias->shape.size() != 1 || bias->dim(0) != cout)) {
    throw DimensionError("conv2d bias axis must have length Cout=" + std::to_string(cout) + ", got " +
                         shape_str(bias->shape));
  }

  const std::int64_t hout = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t wout = (w + 2 * padding - kw) / stride + 1;
  const std::int64_t k = cin * kh * kw;
  const std::int64_t patch = hout * wout;

  auto out = zeros<T>({n, cout, hout, wout});
  std::vector<T> col(static_cast<std::size_t>(k * patch));
  for (std::int64_t i = 0; i < n; ++i) {
    detail::im2col(x->data.data() + i * cin * h * w, cin, h, w, kh, kw, stride, padding, hout, wout, col.data());
    T* y = out->data.data() + i * cout * patch;
    for (std::int64_t co = 0; co < cout; ++co) {
      T* yrow = y + co * patch;
      if (bias) {
        std::fill(yrow, yrow + patch, bias->data[static_cast<std::size_t>(co)]);
      }
      const T* wrow = weight->data.data() + co * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const T wv = wrow[kk];
        if (wv == T(0)) continue;
        const T* crow = col.data() + kk * patch;
        for (std::int64_t p = 0; p < patch; ++p) yrow[p] += wv * crow[p];
      }
    }
  }

  std::vector<TensorPtr<T>> parents = {x, weight};
  if (bias) parents.push_back(bias);
  attach<T>(out, std::move(parents), "conv2d",
            [x, weight, bias, n, cin, h, w, cout, kh, kw, stride, padding, hout, wout, k, patch](Tensor<T>& o) {
              const bool need_dx = x->requires_grad;
              const bool need_dw = weight->requires_grad;
              const bool need_db = bias && bias->requires_grad;
              std::vector<T> col(static_cast<std::size_t>(k * patch));
              std::vector<T> dcol(need_dx ? static_cast<std::size_t>(k * patch) : 0);
              if (need_dx) x->ensure_grad();
              if (need_dw) weight->ensure_grad();
              if (need_db) bias->ensure_grad();
              for (std::int64_t i = 0; i < n; ++i) {
                const T* dy = o.grad.data() + i * cout * patch;
                if (need_dw || need_dx) {
                  detail::im2col(x->data.data() + i * cin * h * w, cin, h, w, kh, kw, stride, padding, hout, wout,
                                 col.data());
                }
                if (need_db) {
                  for (std::int64_t co = 0; co < cout; ++co) {
                    T acc = T(0);
                    const T* dyr = dy + co * patch;
                    for (std::int64_t p = 0; p < patch; ++p) acc += dyr[p];
                    bias->grad[static_cast<std::size_t>(co)] += acc;
                  }
                }
                if (need_dw) {
                  for (std::int64_t co = 0; co < cout; ++co) {
                    const T* dyr = dy + co * patch;
                    T* dwr = weight->grad.data() + co * k;
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                      const T* crow = col.data() + kk * patch;
                      T acc = T(0);
                      for (std::int64_t p = 0; p < patch; ++p) acc += dyr[p] * crow[p];
                      dwr[kk] += acc;
                    }
                  }
                }
                if (need_dx) {
                  std::fill(dcol.begin(), dcol.end(), T(0));
                  for (std::int64_t kk = 0; kk < k; ++kk) {
                    T* drow = dcol.data() + kk * patch;
                    for (std::int64_t co = 0; co < cout; ++co) {
                      const T wv = weight->data[static_cast<std::size_t>(co * k + kk)];
                      if (wv == T(0)) continue;
                      const T* dyr = dy + co * patch;
                      for (std::int64_t p = 0; p < patch; ++p) drow[p] += wv * dyr[p];
                    }
                  }
                  detail::col2im_add(dcol.data(), cin, h, w, kh, kw, stride, padding, hout, wout,
                                     x->grad.data() + i * cin * h * w);
                }
              }
            });
  return out;
}

enum class BatchNormMode { kTrain, kEval };

// Per-channel batch normalization over (N,H,W). Running statistics live in
// plain (non-grad) tensors and are updated in place during training.
template <typename T>
TensorPtr<T> batchnorm2d(const TensorPtr<T>& x, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                         const TensorPtr<T>& running_mean, const TensorPtr<T>& running_var, BatchNormMode mode,
                         T momentum = T(0.1), T eps = T(1e-5)) {
  detail::check_4d(x->shape, "batchnorm2d input");
  const std::int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (gamma->numel() != c || beta->numel() != c) {
    throw DimensionError("batchnorm2d gamma/beta axis must have length C=" + std::to_string(c) + ", got " +
                         shape_str(gamma->shape) + "/" + shape_str(beta->shape));
  }
  if (running_mean->numel() != c || running_var->numel() != c) {
    throw DimensionError("batchnorm2d running stats must have length C=" + std::to_string(c));
  }
  const std::int64_t m = n * h * w;
  if (m < 1) throw DataError("batchnorm2d requires at least one element per channel");
  const std::int64_t hw = h * w;
  const bool training = mode == BatchNormMode::kTrain;

  std::vector<T> mean(static_cast<std::size_t>(c), T(0));
  std::vector<T> var(static_cast<std::size_t>(c), T(0));
  if (training) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const T* src = x->data.data() + (i * c + ci) * hw;
        T acc = T(0);
        for (std::int64_t p = 0; p < hw; ++p) acc += src[p];
        mean[static_cast<std::size_t>(ci)] += acc;
      }
    }
    for (std::int64_t ci = 0; ci < c; ++ci) mean[static_cast<std::size_t>(ci)] /= static_cast<T>(m);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const T* src = x->data.data() + (i * c + ci) * hw;
        const T mu = mean[static_cast<std::size_t>(ci)];
        T acc = T(0);
        for (std::int64_t p = 0; p < hw; ++p) {
          const T d = src[p] - mu;
          acc += d * d;
        }
        var[static_cast<std::size_t>(ci)] += acc;
      }
    }
    for (std::int64_t ci = 0; ci < c; ++ci) var[static_cast<std::size_t>(ci)] /= static_cast<T>(m);
    // Exponential moving average; running variance stores the unbiased
    // estimate, matching the usual batch-norm implementations.
    const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
    for (std::int64_t ci = 0; ci < c; ++ci) {
      auto i = static_cast<std::size_t>(ci);
      running_mean->data[i] = (T(1) - momentum) * running_mean->data[i] + momentum * mean[i];
      running_var->data[i] = (T(1) - momentum) * running_var->data[i] + momentum * var[i] * unbias;
    }
  } else {
    mean = running_mean->data;
    var = running_var->data;
  }

  std::vector<T> invstd(static_cast<std::size_t>(c));
  for (std::int64_t ci = 0; ci < c; ++ci) {
    invstd[static_cast<std::size_t>(ci)] = T(1) / std::sqrt(var[static_cast<std::size_t>(ci)] + eps);
  }

  auto out = zeros<T>(x->shape);
  std::vector<T> xhat(x->data.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const std::int64_t base = (i * c + ci) * hw;
      const T mu = mean[static_cast<std::size_t>(ci)];
      const T is = invstd[static_cast<std::size_t>(ci)];
      const T g = gamma->data[static_cast<std::size_t>(ci)];
      const T b = beta->data[static_cast<std::size_t>(ci)];
      for (std::int64_t p = 0; p < hw; ++p) {
        const T xn = (x->data[static_cast<std::size_t>(base + p)] - mu) * is;
        xhat[static_cast<std::size_t>(base + p)] = xn;
        out->data[static_cast<std::size_t>(base + p)] = xn * g + b;
      }
    }
  }

  attach<T>(out, {x, gamma, beta}, "batchnorm2d",
            [x, gamma, beta, n, c, hw, m, training, invstd = std::move(invstd),
             xhat = std::move(xhat)](Tensor<T>& o) {
              std::vector<T> sum_dy(static_cast<std::size_t>(c), T(0));
              std::vector<T> sum_dy_xhat(static_cast<std::size_t>(c), T(0));
              for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t ci = 0; ci < c; ++ci) {
                  const std::int64_t base = (i * c + ci) * hw;
                  T s1 = T(0), s2 = T(0);
                  for (std::int64_t p = 0; p < hw; ++p) {
                    const T dy = o.grad[static_cast<std::size_t>(base + p)];
                    s1 += dy;
                    s2 += dy * xhat[static_cast<std::size_t>(base + p)];
                  }
                  sum_dy[static_cast<std::size_t>(ci)] += s1;
                  sum_dy_xhat[static_cast<std::size_t>(ci)] += s2;
                }
              }
              if (beta->requires_grad) beta->accumulate_grad(sum_dy);
              if (gamma->requires_grad) gamma->accumulate_grad(sum_dy_xhat);
              if (x->requires_grad) {
                x->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                  for (std::int64_t ci = 0; ci < c; ++ci) {
                    const std::int64_t base = (i * c + ci) * hw;
                    const T g = gamma->data[static_cast<std::size_t>(ci)];
                    const T is = invstd[static_cast<std::size_t>(ci)];
                    if (training) {
                      const T sdy = sum_dy[static_cast<std::size_t>(ci)];
                      const T sdyx = sum_dy_xhat[static_cast<std::size_t>(ci)];
                      const T scale = g * is / static_cast<T>(m);
                      for (std::int64_t p = 0; p < hw; ++p) {
                        const T dy = o.grad[static_cast<std::size_t>(base + p)];
                        const T xh = xhat[static_cast<std::size_t>(base + p)];
                        x->grad[static_cast<std::size_t>(base + p)] +=
                            scale * (static_cast<T>(m) * dy - sdy - xh * sdyx);
                      }
                    } else {
                      const T scale = g * is;
                      for (std::int64_t p = 0; p < hw; ++p) {
                        x->grad[static_cast<std::size_t>(base + p)] +=
                            scale * o.grad[static_cast<std::size_t>(base + p)];
                      }
                    }
                  }
                }
              }
            });
  return out;
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
  auto out = zeros<T>(x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    const bool open = x->data[i] > T(0);
    trace_gate(open);
    out->data[i] = open ? x->data[i] : T(0);
  }
  attach<T>(out, {x}, "relu", [x](Tensor<T>& o) {
    x->ensure_grad();
    for (std::size_t i = 0; i < x->data.size(); ++i) {
      if (x->data[i] > T(0)) x->grad[i] += o.grad[i];
    }
  });
  return out;
}

// Max pooling; gradient flows to the first (row-major) maximum of each
// window. Padded positions never win.
template <typename T>
TensorPtr<T> max_pool2d(const TensorPtr<T>& x, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  detail::check_4d(x->shape, "max_pool2d input");
  if (kernel <= 0 || stride <= 0 || padding < 0) throw ConfigError("max_pool2d requires kernel,stride > 0, padding >= 0");
  if (padding >= kernel) throw ConfigError("max_pool2d padding must be smaller than kernel");
  const std::int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (kernel > h + 2 * padding || kernel > w + 2 * padding) {
    throw DimensionError("max_pool2d kernel " + std::to_string(kernel) + " exceeds padded extent of input " +
                         shape_str(x->shape));
  }
  const std::int64_t hout = (h + 2 * padding - kernel) / stride + 1;
  const std::int64_t wout = (w + 2 * padding - kernel) / stride + 1;

  auto out = zeros<T>({n, c, hout, wout});
  std::vector<std::int64_t> argmax(out->data.size());
  std::int64_t oi = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T* src = x->data.data() + (i * c + ci) * h * w;
      const std::int64_t plane = (i * c + ci) * h * w;
      for (std::int64_t ho = 0; ho < hout; ++ho) {
        for (std::int64_t wo = 0; wo < wout; ++wo, ++oi) {
          T best = T(0);
          std::int64_t best_idx = -1;
          for (std::int64_t dy = 0; dy < kernel; ++dy) {
            const std::int64_t hi = ho * stride - padding + dy;
            if (hi < 0 || hi >= h) continue;
            for (std::int64_t dx = 0; dx < kernel; ++dx) {
              const std::int64_t wi = wo * stride - padding + dx;
              if (wi < 0 || wi >= w) continue;
              const T v = src[hi * w + wi];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = plane + hi * w + wi;
              }
            }
          }
          out->data[static_cast<std::size_t>(oi)] = best;
          argmax[static_cast<std::size_t>(oi)] = best_idx;
          trace_gate_index(best_idx);
        }
      }
    }
  }

  attach<T>(out, {x}, "max_pool2d", [x, argmax = std::move(argmax)](Tensor<T>& o) {
    x->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      x->grad[static_cast<std::size_t>(argmax[i])] += o.grad[i];
    }
  });
  return out;
}

// Adaptive average pooling; only the global (1,1) variant the classifier
// head needs is supported.
template <typename T>
TensorPtr<T> adaptive_avg_pool2d(const TensorPtr<T>& x, std::int64_t out_h, std::int64_t out_w) {
  detail::check_4d(x->shape, "adaptive_avg_pool2d input");
  if (out_h != 1 || out_w != 1) {
    throw ConfigError("adaptive_avg_pool2d supports output size (1,1) only, got (" + std::to_string(out_h) + "," +
                      std::to_string(out_w) + ")");
  }
  const std::int64_t n = x->dim(0), c = x->dim(1), hw = x->dim(2) * x->dim(3);
  auto out = zeros<T>({n, c, 1, 1});
  for (std::int64_t i = 0; i < n * c; ++i) {
    const T* src = x->data.data() + i * hw;
    T acc = T(0);
    for (std::int64_t p = 0; p < hw; ++p) acc += src[p];
    out->data[static_cast<std::size_t>(i)] = acc / static_cast<T>(hw);
  }
  attach<T>(out, {x}, "adaptive_avg_pool2d", [x, n, c, hw](Tensor<T>& o) {
    x->ensure_grad();
    for (std::int64_t i = 0; i < n * c; ++i) {
      const T g = o.grad[static_cast<std::size_t>(i)] / static_cast<T>(hw);
      T* dst = x->grad.data() + i * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] += g;
    }
  });
  return out;
}

// Nearest-neighbour upsampling by integer ratio per axis.
template <typename T>
TensorPtr<T> upsample_nearest(const TensorPtr<T>& x, std::int64_t out_h, std::int64_t out_w) {
  detail::check_4d(x->shape, "upsample_nearest input");
  const std::int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (out_h < h || out_w < w || out_h % h != 0 || out_w % w != 0) {
    throw ConfigError("upsample_nearest target (" + std::to_string(out_h) + "," + std::to_string(out_w) +
                      ") is not an integer multiple of source (" + std::to_string(h) + "," + std::to_string(w) + ")");
  }
  const std::int64_t rh = out_h / h, rw = out_w / w;
  auto out = zeros<T>({n, c, out_h, out_w});
  for (std::int64_t i = 0; i < n * c; ++i) {
    const T* src = x->data.data() + i * h * w;
    T* dst = out->data.data() + i * out_h * out_w;
    for (std::int64_t ho = 0; ho < out_h; ++ho) {
      const T* srow = src + (ho / rh) * w;
      T* drow = dst + ho * out_w;
      for (std::int64_t wo = 0; wo < out_w; ++wo) drow[wo] = srow[wo / rw];
    }
  }
  attach<T>(out, {x}, "upsample_nearest", [x, n, c, h, w, out_h, out_w, rh, rw](Tensor<T>& o) {
    x->ensure_grad();
    for (std::int64_t i = 0; i < n * c; ++i) {
      const T* gy = o.grad.data() + i * out_h * out_w;
      T* gx = x->grad.data() + i * h * w;
      for (std::int64_t ho = 0; ho < out_h; ++ho) {
        T* grow = gx + (ho / rh) * w;
        const T* gyr = gy + ho * out_w;
        for (std::int64_t wo = 0; wo < out_w; ++wo) grow[wo / rw] += gyr[wo];
      }
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape) {
    throw DimensionError("add shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  }
  auto out = zeros<T>(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  attach<T>(out, {a, b}, "add", [a, b](Tensor<T>& o) {
    if (a->requires_grad) a->accumulate_grad(o.grad);
    if (b->requires_grad) b->accumulate_grad(o.grad);
  });
  return out;
}

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& x, Shape new_shape) {
  if (numel(new_shape) != x->numel()) {
    throw DimensionError("reshape " + shape_str(x->shape) + " -> " + shape_str(new_shape) +
                         " changes the element count");
  }
  auto out = make_tensor<T>(std::move(new_shape), x->data);
  attach<T>(out, {x}, "reshape", [x](Tensor<T>& o) { x->accumulate_grad(o.grad); });
  return out;
}

template <typename T>
TensorPtr<T> sum(const TensorPtr<T>& x) {
  T acc = T(0);
  for (T v : x->data) acc += v;
  auto out = make_tensor<T>(Shape{}, std::vector<T>{acc});
  attach<T>(out, {x}, "sum", [x](Tensor<T>& o) {
    x->ensure_grad();
    for (auto& g : x->grad) g += o.grad[0];
  });
  return out;
}

inline constexpr int kIgnoreLabel = -1;

// Weighted softmax cross-entropy, mean reduction over the non-ignored
// positions. Accepts (N,C) logits with one target per item, or (N,C,H,W)
// logits with one target per pixel. The per-position term is
// w[target] * -log softmax(logits)[target]; the divisor is the plain
// position count, so class weights rescale the loss.
template <typename T>
TensorPtr<T> softmax_cross_entropy(const TensorPtr<T>& logits, const std::vector<int>& targets,
                                   const std::vector<T>& class_weights = {}, int ignore_label = kIgnoreLabel) {
  if (logits->shape.size() != 2 && logits->shape.size() != 4) {
    throw DimensionError("softmax_cross_entropy expects (N,C) or (N,C,H,W) logits, got " + shape_str(logits->shape));
  }
  const std::int64_t n = logits->dim(0);
  const std::int64_t c = logits->dim(1);
  const std::int64_t spatial = logits->shape.size() == 4 ? logits->dim(2) * logits->dim(3) : 1;
  if (static_cast<std::int64_t>(targets.size()) != n * spatial) {
    throw DimensionError("softmax_cross_entropy targets length " + std::to_string(targets.size()) +
                         " does not match logits positions " + std::to_string(n * spatial));
  }
  if (!class_weights.empty() && static_cast<std::int64_t>(class_weights.size()) != c) {
    throw DimensionError("softmax_cross_entropy class_weights length must be C=" + std::to_string(c));
  }

  std::vector<T> probs(logits->data.size());
  double total = 0.0;
  std::int64_t counted = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t s = 0; s < spatial; ++s) {
      const int t = targets[static_cast<std::size_t>(i * spatial + s)];
      const std::int64_t base = i * c * spatial + s;
      T max_z = logits->data[static_cast<std::size_t>(base)];
      for (std::int64_t cc = 1; cc < c; ++cc) {
        max_z = std::max(max_z, logits->data[static_cast<std::size_t>(base + cc * spatial)]);
      }
      T denom = T(0);
      for (std::int64_t cc = 0; cc < c; ++cc) {
        const T e = std::exp(logits->data[static_cast<std::size_t>(base + cc * spatial)] - max_z);
        probs[static_cast<std::size_t>(base + cc * spatial)] = e;
        denom += e;
      }
      for (std::int64_t cc = 0; cc < c; ++cc) probs[static_cast<std::size_t>(base + cc * spatial)] /= denom;
      if (t == ignore_label) continue;
      if (t < 0 || t >= c) {
        throw LabelError("softmax_cross_entropy target " + std::to_string(t) + " at position " +
                         std::to_string(i * spatial + s) + " is outside [0," + std::to_string(c) + ")");
      }
      const T w = class_weights.empty() ? T(1) : class_weights[static_cast<std::size_t>(t)];
      const T log_p = logits->data[static_cast<std::size_t>(base + t * spatial)] - max_z - std::log(denom);
      total += static_cast<double>(w) * -static_cast<double>(log_p);
      ++counted;
    }
  }
  const T loss = counted > 0 ? static_cast<T>(total / static_cast<double>(counted)) : T(0);
  auto out = make_tensor<T>(Shape{}, std::vector<T>{loss});
  if (counted == 0) return out;

  attach<T>(out, {logits}, "softmax_cross_entropy",
            [logits, targets, class_weights, ignore_label, n, c, spatial, counted,
             probs = std::move(probs)](Tensor<T>& o) {
              logits->ensure_grad();
              const T upstream = o.grad[0] / static_cast<T>(counted);
              for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const int t = targets[static_cast<std::size_t>(i * spatial + s)];
                  if (t == ignore_label) continue;
                  const T w = class_weights.empty() ? T(1) : class_weights[static_cast<std::size_t>(t)];
                  const std::int64_t base = i * c * spatial + s;
                  const T coef = w * upstream;
                  for (std::int64_t cc = 0; cc < c; ++cc) {
                    const T p = probs[static_cast<std::size_t>(base + cc * spatial)];
                    const T indicator = cc == t ? T(1) : T(0);
                    logits->grad[static_cast<std::size_t>(base + cc * spatial)] += coef * (p - indicator);
                  }
                }
              }
            });
  return out;
}

}  // namespace mixseg
