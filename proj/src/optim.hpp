#pragma once

#include "gmilab/core.hpp"

#include <functional>

namespace gmilab::detail {

// Returns f(x); writes the gradient into *grad when it is non-null.
using Objective = std::function<double(const Vec& x, Vec* grad)>;

struct MinimizeOptions {
  int max_epochs = 500;
  double grad_tol = 1e-5;
};

struct MinimizeResult {
  Vec x;
  double value = 0.0;
  double grad_norm = 0.0;
  int epochs = 0;
  bool converged = false;
};

// Unconstrained L-BFGS with a Wolfe line search (Ceres). Stops when the
// Euclidean gradient norm drops below grad_tol or after max_epochs iterations.
MinimizeResult minimize(const Objective& f, Vec x0, const MinimizeOptions& opts);

}  // namespace gmilab::detail
