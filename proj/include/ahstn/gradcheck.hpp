#pragma once

#include <functional>
#include <span>
#include <string>

#include "ahstn/tensor.hpp"

namespace ahstn::diff {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  std::string worst;  // "input[i] coordinate j: analytic a, numeric n"
  bool passed() const { return failures == 0; }
};

struct GradCheckOptions {
  double h = 1e-6;
  double tol = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // coordinates whose true gradient is zero from reporting pure roundoff.
  double floor = 1e-3;
};

// Compares the reverse-mode gradient of the scalar function `f` with respect
// to each tensor in `inputs` against central differences. `f` must rebuild
// its result from the current contents of `inputs` on every call.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace ahstn::diff
