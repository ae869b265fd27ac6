#include "cbnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cbnn/errors.hpp"

namespace cbnn {

namespace {
double finite_loss(const std::function<double()>& loss) {
  const double v = loss();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}
}  // namespace

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& backprop, const ParameterList& params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  std::size_t total = 0;
  for (const Parameter* p : params) total += p->value.size();
  if (total == 0) return report;

  finite_loss(loss);
  backprop();
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + options.step;
      const double up = finite_loss(loss);
      p.value[i] = orig - options.step;
      const double down = finite_loss(loss);
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.ok = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace cbnn
