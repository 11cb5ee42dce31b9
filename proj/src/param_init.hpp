#pragma once

#include <cmath>

#include "exagree/rng.hpp"
#include "exagree/tensor.hpp"

namespace exagree {

inline Matrix init_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

inline Matrix init_xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

}  // namespace exagree
