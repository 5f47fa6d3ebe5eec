#pragma once

#include <string>
#include <vector>

#include "ift/rasch.h"
#include "ift/types.h"

namespace ift {

/// Group label per person plus the reference label. Labels need not be contiguous.
struct GroupAssignment {
  std::vector<int> labels;
  int reference = 0;

  /// Distinct labels, reference first, then the others ascending.
  std::vector<int> groups() const;
  void validate(std::size_t persons) const;
};

struct ItemDetection {
  double statistic = 0.0;
  int df = 1;
  double p_value = 1.0;
  bool flagged = false;
  bool testable = true;
  std::string note;
};

struct DetectionResult {
  std::string method;
  double alpha = 0.05;
  std::vector<ItemDetection> items;

  std::vector<bool> flagged() const;
};

/// Upper tail of the chi-square distribution.
double chi_square_sf(double statistic, int df);

/// Mantel-Haenszel chi-square with continuity correction, strata by total score (df 1).
/// With more than two groups the generalized Mantel-Haenszel statistic (df G-1) is used.
DetectionResult mantel_haenszel(const ResponseMatrix& responses, const GroupAssignment& groups, double alpha);

/// Likelihood-ratio test of group and score-by-group terms in a logistic regression on
/// the total score (df 2(G-1)).
DetectionResult logistic_dif(const ResponseMatrix& responses, const GroupAssignment& groups, double alpha,
                             double ridge = kDefaultRidge);

/// Lord's chi-square on separately calibrated, mean-centred Rasch difficulties (df G-1).
DetectionResult lord_chi2(const ResponseMatrix& responses, const GroupAssignment& groups, double alpha,
                          double ridge = kDefaultRidge);

}  // namespace ift
