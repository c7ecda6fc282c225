#ifndef QTN_GRADCHECK_HPP
#define QTN_GRADCHECK_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace qtn {

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Central-difference check of `analytic` against `f` around `point`.
///
/// `f` is evaluated with `point` perturbed in place one coordinate at a time;
/// each coordinate is restored before the next. Error per coordinate is
/// |a - n| / max(1, |a|, |n|). When `coords` is empty every coordinate is
/// checked, otherwise only the listed ones.
///
/// Throws std::invalid_argument for step <= 0, size mismatch, or a non-finite
/// analytic gradient.
FiniteDiffResult finite_diff_check(const std::function<double()>& f, std::span<double> point,
                                   std::span<const double> analytic, double step,
                                   std::span<const std::size_t> coords = {});

/// Convenience overload for functions of an immutable point.
FiniteDiffResult finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                   std::vector<double> point, std::span<const double> analytic,
                                   double step);

}  // namespace qtn

#endif  // QTN_GRADCHECK_HPP
