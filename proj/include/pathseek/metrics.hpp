#pragma once

// Rank-based ROC AUC with midrank ties.

#include <string>
#include <vector>

namespace pathseek {

// Binary AUC of scores against 0/1 labels; throws when a class is absent.
double binary_auc(const std::vector<double>& scores, const std::vector<int>& positives);

struct AucResult {
  double macro = 0.0;
  std::vector<double> per_class;  // NaN for skipped classes
  std::vector<std::string> notes;
};

// Macro one-vs-rest AUC.  scores[i][k] is instance i's score for class k.
// Classes lacking positives or negatives are skipped with a note; throws if
// every class is skipped.
AucResult compute_auc(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels);

}  // namespace pathseek
