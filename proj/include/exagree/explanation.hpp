#pragma once

#include <string>
#include <vector>

namespace exagree {

/// Per-token importance scores for one prediction. `scores[i]` belongs to
/// `tokens[i]`; padding positions are never included.
struct Explanation {
  std::string method;
  std::vector<std::string> tokens;
  std::vector<double> scores;
  int target_class = -1;
  double prediction_prob = 0.0;
};

}  // namespace exagree
