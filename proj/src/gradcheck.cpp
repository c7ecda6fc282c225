#include "qtn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qtn {

FiniteDiffResult finite_diff_check(const std::function<double()>& f, std::span<double> point,
                                   std::span<const double> analytic, double step,
                                   std::span<const std::size_t> coords) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (analytic.size() != point.size()) {
    throw std::invalid_argument("finite_diff_check: analytic gradient has " + std::to_string(analytic.size()) +
                                " entries for a point of " + std::to_string(point.size()));
  }

  FiniteDiffResult result;
  auto check_one = [&](std::size_t i) {
    if (i >= point.size()) throw std::invalid_argument("finite_diff_check: coordinate out of range");
    const double a = analytic[i];
    if (!std::isfinite(a)) {
      throw std::invalid_argument("finite_diff_check: analytic gradient is not finite at coordinate " +
                                  std::to_string(i));
    }
    const double x0 = point[i];
    point[i] = x0 + step;
    const double fp = f();
    point[i] = x0 - step;
    const double fm = f();
    point[i] = x0;
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (!std::isfinite(err) || err > result.max_rel_error || result.checked == 0) {
      result.max_rel_error = std::isfinite(err) ? err : HUGE_VAL;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
    ++result.checked;
  };

  if (coords.empty()) {
    for (std::size_t i = 0; i < point.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : coords) check_one(i);
  }
  return result;
}

FiniteDiffResult finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                   std::vector<double> point, std::span<const double> analytic,
                                   double step) {
  std::span<double> view(point);
  return finite_diff_check([&] { return f(view); }, view, analytic, step);
}

}  // namespace qtn
