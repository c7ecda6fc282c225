#ifndef QTN_TESTS_METRIC_ORACLE_HPP
#define QTN_TESTS_METRIC_ORACLE_HPP

// Brute-force counterparts of the metric suite.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <vector>

namespace qtn::test {

inline std::optional<double> oracle_dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                                         std::uint8_t c) {
  std::set<std::size_t> a, b;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == c) a.insert(i);
    if (truth[i] == c) b.insert(i);
  }
  if (b.empty()) return std::nullopt;
  std::size_t both = 0;
  for (auto i : a) both += b.count(i);
  return 2.0 * both / static_cast<double>(a.size() + b.size());
}

// Probability that a random positive outranks a random negative, ties 0.5.
inline double oracle_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

struct MeanStd {
  double mean;
  double std;
};

inline MeanStd oracle_mean_std(const std::vector<double>& v) {
  long double s = 0.0L;
  for (double x : v) s += x;
  const long double m = s / v.size();
  long double ss = 0.0L;
  for (double x : v) ss += (x - m) * (x - m);
  return {static_cast<double>(m), static_cast<double>(std::sqrt(ss / v.size()))};
}

}  // namespace qtn::test

#endif  // QTN_TESTS_METRIC_ORACLE_HPP
