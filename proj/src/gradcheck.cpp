#include "ahstn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "ahstn/errors.hpp"

namespace ahstn::diff {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           const GradCheckOptions& options) {
  if (options.h < 1e-8 || options.h > 1e-4) throw ParameterError("grad_check: h must lie in [1e-8, 1e-4]");

  std::vector<std::vector<double>> analytic;
  {
    for (auto& in : inputs) {
      in.set_requires_grad(true);
      in.zero_grad();
    }
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f();
    tape.backward(out);
    for (auto& in : inputs) {
      if (in.has_grad()) {
        analytic.emplace_back(in.grad().begin(), in.grad().end());
      } else {
        analytic.emplace_back(in.numel(), 0.0);
      }
    }
  }

  GradCheckReport report;
  NoGradScope no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + options.h;
      const double up = f().item();
      values[j] = saved - options.h;
      const double down = f().item();
      values[j] = saved;

      const double numeric = (up - down) / (2.0 * options.h);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++report.coordinates;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (!(rel_err <= options.tol)) ++report.failures;
      if (rel_err > report.max_rel_error || std::isnan(rel_err)) {
        report.max_rel_error = std::isnan(rel_err) ? INFINITY : rel_err;
        std::ostringstream os;
        os << "input[" << i << "] coordinate " << j << ": analytic " << a << ", numeric " << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

}  // namespace ahstn::diff
