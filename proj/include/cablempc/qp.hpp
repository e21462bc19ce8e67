#pragma once

#include <Eigen/Core>

#include <optional>

namespace cablempc {

/// min 1/2 z'Hz + g'z
///   s.t. lower <= z <= upper          (entries may be +-infinity)
///        ineq * z <= ineq_upper
///        eq * z == eq_rhs
struct QpProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::MatrixXd ineq;
  Eigen::VectorXd ineq_upper;
  Eigen::MatrixXd eq;
  Eigen::VectorXd eq_rhs;

  /// Unconstrained problem of dimension n with infinite bounds.
  static QpProblem unconstrained(const Eigen::MatrixXd& h, const Eigen::VectorXd& g);
  int size() const { return static_cast<int>(gradient.size()); }
};

enum class QpStatus { optimal, max_iterations, infeasible };

const char* to_string(QpStatus s);

struct QpOptions {
  int max_iterations = 200;
  double feasibility_tol = 1e-9;
  double dual_tol = 1e-10;
};

/// Multipliers follow the Lagrangian
///   L = f + ineq_dual'(A z - b) + eq_dual'(E z - e)
///         + upper_dual'(z - u) + lower_dual'(l - z)
/// so every inequality multiplier is non-negative at a KKT point.
struct QpResult {
  Eigen::VectorXd primal;
  Eigen::VectorXd lower_dual;
  Eigen::VectorXd upper_dual;
  Eigen::VectorXd ineq_dual;
  Eigen::VectorXd eq_dual;
  QpStatus status = QpStatus::infeasible;
  int iterations = 0;
  double stationarity = 0.0;
  double complementarity = 0.0;
  double primal_infeasibility = 0.0;
};

/// Dense primal active-set method for strictly convex QPs. Bounds are
/// handled by fixing variables, inequality rows through the working set.
/// Ties in the ratio test and in the choice of the constraint to release go
/// to the lowest index (bounds first, then rows). Without a feasible start a
/// phase-1 problem is solved first; equality-constrained problems require a
/// feasible `start`.
QpResult qp_solve(const QpProblem& qp, const QpOptions& options = {},
                  const std::optional<Eigen::VectorXd>& start = std::nullopt);

/// Stationarity, complementarity and primal feasibility of a candidate.
void qp_evaluate_kkt(const QpProblem& qp, QpResult& r);

}  // namespace cablempc
