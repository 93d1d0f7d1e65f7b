#include "optim.hpp"

#include <ceres/ceres.h>

#include <cmath>

namespace gmilab::detail {

namespace {

class CeresObjective final : public ceres::FirstOrderFunction {
 public:
  CeresObjective(const Objective& f, int n) : f_(f), n_(n), x_(n), g_(n) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    x_ = Eigen::Map<const Vec>(parameters, n_);
    *cost = f_(x_, gradient ? &g_ : nullptr);
    if (gradient) Eigen::Map<Vec>(gradient, n_) = g_;
    return std::isfinite(*cost);
  }

  int NumParameters() const override { return n_; }

 private:
  const Objective& f_;
  int n_;
  mutable Vec x_;
  mutable Vec g_;
};

// Ceres tests the max-norm of the gradient; the Euclidean norm is at most
// sqrt(n) times larger, so this threshold never stops short of grad_tol.
double max_norm_tolerance(double grad_tol, Eigen::Index n) {
  return grad_tol / std::sqrt(static_cast<double>(std::max<Eigen::Index>(n, 1)));
}

}  // namespace

MinimizeResult minimize(const Objective& f, Vec x0, const MinimizeOptions& opts) {
  MinimizeResult r;
  r.x = std::move(x0);
  Vec grad(r.x.size());
  r.value = f(r.x, &grad);
  r.grad_norm = grad.norm();
  if (r.grad_norm < opts.grad_tol || opts.max_epochs <= 0 || r.x.size() == 0) {
    r.converged = r.grad_norm < opts.grad_tol;
    return r;
  }

  ceres::GradientProblemSolver::Options so;
  so.line_search_direction_type = ceres::LBFGS;
  so.max_num_iterations = opts.max_epochs;
  so.gradient_tolerance = max_norm_tolerance(opts.grad_tol, r.x.size());
  so.function_tolerance = 1e-16;
  so.parameter_tolerance = 1e-16;
  so.logging_type = ceres::SILENT;
  so.minimizer_progress_to_stdout = false;

  // GradientProblem takes ownership of the function object.
  ceres::GradientProblem problem(new CeresObjective(f, static_cast<int>(r.x.size())));
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(so, problem, r.x.data(), &summary);

  r.epochs = static_cast<int>(summary.iterations.size());
  r.value = f(r.x, &grad);
  r.grad_norm = grad.norm();
  r.converged = r.grad_norm < opts.grad_tol;
  return r;
}

}  // namespace gmilab::detail
