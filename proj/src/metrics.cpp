#include "pathseek/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pathseek {

double binary_auc(const std::vector<double>& scores, const std::vector<int>& positives) {
  if (scores.size() != positives.size()) throw std::invalid_argument("auc: scores/labels size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0, sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positives[i]) {
      pos += 1;
      sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auc: needs both positives and negatives");
  return (sum - pos * (pos + 1) / 2) / (pos * neg);
}

AucResult compute_auc(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores/labels size mismatch");
  if (scores.empty()) throw std::invalid_argument("auc: degenerate label set");
  const std::size_t classes = scores.front().size();
  AucResult r;
  r.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double total = 0;
  int used = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    int pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != classes) throw std::invalid_argument("auc: ragged score rows");
      s[i] = scores[i][k];
      y[i] = labels[i] == static_cast<int>(k);
      pos += y[i];
    }
    if (pos == 0 || pos == static_cast<int>(scores.size())) {
      r.notes.push_back("class " + std::to_string(k) + " skipped: needs positives and negatives");
      continue;
    }
    r.per_class[k] = binary_auc(s, y);
    total += r.per_class[k];
    ++used;
  }
  if (used == 0) throw std::invalid_argument("auc: degenerate label set");
  r.macro = total / used;
  return r;
}

}  // namespace pathseek
