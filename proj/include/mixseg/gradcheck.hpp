#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mixseg/errors.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::int64_t worst_index = -1;
  std::int64_t compared = 0;
  std::int64_t skipped = 0;  // perturbations that crossed a relu/pool gate
  bool passed = true;
};

struct GradCheckReport {
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::int64_t compared = 0;
  std::int64_t skipped = 0;
  bool passed = true;
  std::vector<GradCheckEntry> entries;
};

// Independent oracle: compares the analytic gradients produced by backward()
// against central finite differences of the closure. The closure must
// rebuild its graph from the current input values on every call and reduce
// to a scalar; evaluation runs in f64 to give the differences headroom.
//
// Central differences are only defined on a smooth piece of the function, so
// a perturbation that flips a relu gate or a pooling argmax (detected via
// gate signatures) is skipped rather than compared.
inline GradCheckReport grad_check(const std::function<TensorPtr<double>()>& fn,
                                  const std::vector<TensorPtr<double>>& inputs, double tolerance,
                                  double step = 1e-4, const std::vector<std::string>& names = {}) {
  auto evaluate = [&fn](std::uint64_t& signature) {
    NoGradGuard ng;
    GateTrace trace;
    auto y = fn();
    if (y->numel() != 1) {
      throw ContractError("grad_check closure must produce a scalar, got " + shape_str(y->shape));
    }
    signature = trace.digest();
    return y->data[0];
  };

  // A closure whose two forward evaluations disagree cannot be differenced.
  std::uint64_t base_sig, repeat_sig;
  const double base1 = evaluate(base_sig);
  const double base2 = evaluate(repeat_sig);
  if (base1 != base2 || base_sig != repeat_sig) {
    throw OracleError("grad_check closure is not deterministic: " + std::to_string(base1) + " vs " +
                      std::to_string(base2));
  }

  for (const auto& in : inputs) {
    in->requires_grad = true;
    in->grad.clear();
  }
  auto y = fn();
  backward(y);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& in = *inputs[i];
    in.ensure_grad();
    GradCheckEntry entry;
    entry.name = i < names.size() ? names[i] : "input" + std::to_string(i);
    for (std::size_t j = 0; j < in.data.size(); ++j) {
      const double saved = in.data[j];
      std::uint64_t sig_plus, sig_minus;
      in.data[j] = saved + step;
      const double plus = evaluate(sig_plus);
      in.data[j] = saved - step;
      const double minus = evaluate(sig_minus);
      in.data[j] = saved;
      if (sig_plus != base_sig || sig_minus != base_sig) {
        ++entry.skipped;
        continue;
      }
      ++entry.compared;
      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = in.grad[j];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = static_cast<std::int64_t>(j);
      }
    }
    entry.passed = entry.max_rel_error <= tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.compared += entry.compared;
    report.skipped += entry.skipped;
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mixseg
