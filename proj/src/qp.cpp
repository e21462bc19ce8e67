#include "cablempc/qp.hpp"

#include "cablempc/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace cablempc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarState { free, lower, upper };

bool has_rows(const Eigen::MatrixXd& m) { return m.rows() > 0; }

void check_dimensions(const QpProblem& qp) {
  const int n = qp.size();
  auto fail = [](const char* what) { throw Error(ErrorCode::invalid_argument, what); };
  if (qp.hessian.rows() != n || qp.hessian.cols() != n) fail("qp: hessian size mismatch");
  if (qp.lower.size() != n || qp.upper.size() != n) fail("qp: bound size mismatch");
  if (has_rows(qp.ineq) && (qp.ineq.cols() != n || qp.ineq_upper.size() != qp.ineq.rows())) {
    fail("qp: inequality size mismatch");
  }
  if (has_rows(qp.eq) && (qp.eq.cols() != n || qp.eq_rhs.size() != qp.eq.rows())) {
    fail("qp: equality size mismatch");
  }
  if (!qp.hessian.allFinite() || !qp.gradient.allFinite()) fail("qp: non-finite data");
  for (int i = 0; i < n; ++i) {
    if (qp.lower(i) > qp.upper(i)) fail("qp: lower bound above upper bound");
  }
}

double max_row_violation(const QpProblem& qp, const Eigen::VectorXd& z) {
  double v = 0.0;
  if (has_rows(qp.ineq)) {
    v = std::max(v, (qp.ineq * z - qp.ineq_upper).maxCoeff());
  }
  if (has_rows(qp.eq)) {
    v = std::max(v, (qp.eq * z - qp.eq_rhs).cwiseAbs().maxCoeff());
  }
  return v;
}

class ActiveSetSolver {
 public:
  ActiveSetSolver(const QpProblem& qp, const QpOptions& opt) : qp_(qp), opt_(opt) {}

  QpResult run(Eigen::VectorXd z) {
    const int n = qp_.size();
    const int m_in = static_cast<int>(qp_.ineq.rows());
    const int m_eq = static_cast<int>(qp_.eq.rows());

    state_.assign(n, VarState::free);
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(qp_.lower(i)) && z(i) <= qp_.lower(i)) {
        z(i) = qp_.lower(i);
        state_[i] = VarState::lower;
      } else if (std::isfinite(qp_.upper(i)) && z(i) >= qp_.upper(i)) {
        z(i) = qp_.upper(i);
        state_[i] = VarState::upper;
      }
    }
    row_active_.assign(m_in, false);

    QpResult res;
    res.status = QpStatus::max_iterations;
    Eigen::VectorXd row_mult;
    for (int iter = 0; iter < opt_.max_iterations; ++iter) {
      res.iterations = iter + 1;
      std::vector<int> free;
      for (int i = 0; i < n; ++i) {
        if (state_[i] == VarState::free) free.push_back(i);
      }
      std::vector<int> active;
      for (int j = 0; j < m_in; ++j) {
        if (row_active_[j]) active.push_back(j);
      }
      const int nf = static_cast<int>(free.size());
      const int nw = m_eq + static_cast<int>(active.size());

      const Eigen::VectorXd grad = qp_.hessian * z + qp_.gradient;

      // Working-set rows restricted to the free variables.
      Eigen::MatrixXd aw(nw, nf);
      for (int r = 0; r < nw; ++r) {
        for (int c = 0; c < nf; ++c) {
          aw(r, c) = r < m_eq ? qp_.eq(r, free[c]) : qp_.ineq(active[r - m_eq], free[c]);
        }
      }
      Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
      Eigen::VectorXd lambda = Eigen::VectorXd::Zero(nw);
      if (nf > 0) {
        Eigen::MatrixXd hff(nf, nf);
        Eigen::VectorXd gf(nf);
        for (int a = 0; a < nf; ++a) {
          gf(a) = grad(free[a]);
          for (int b = 0; b < nf; ++b) hff(a, b) = qp_.hessian(free[a], free[b]);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(hff);
        if (llt.info() != Eigen::Success) {
          throw Error(ErrorCode::invalid_argument, "qp: hessian is not positive definite");
        }
        const Eigen::VectorXd hinv_g = llt.solve(gf);
        Eigen::VectorXd pf = -hinv_g;
        if (nw > 0) {
          const Eigen::MatrixXd hinv_at = llt.solve(aw.transpose());
          const Eigen::MatrixXd schur = aw * hinv_at;
          Eigen::LDLT<Eigen::MatrixXd> ldlt(schur);
          lambda = ldlt.solve(-aw * hinv_g);
          pf -= hinv_at * lambda;
        }
        for (int a = 0; a < nf; ++a) p(free[a]) = pf(a);
      } else if (nw > 0) {
        // Every variable fixed: multipliers from a least-squares fit.
        lambda.setZero();
      }

      // A full working set pins z, so any p left is roundoff of the Schur solve.
      if (nw >= nf) p.setZero();
      const double pnorm = p.lpNorm<Eigen::Infinity>();
      if (pnorm <= 1e-10 * (1.0 + z.lpNorm<Eigen::Infinity>())) {
        // Stationary on the working set: inspect multipliers.
        Eigen::VectorXd full_grad = grad;
        for (int r = 0; r < nw; ++r) {
          if (r < m_eq) {
            full_grad += lambda(r) * qp_.eq.row(r).transpose();
          } else {
            full_grad += lambda(r) * qp_.ineq.row(active[r - m_eq]).transpose();
          }
        }
        int release = -1;
        double most_negative = -opt_.dual_tol;
        for (int i = 0; i < n; ++i) {
          if (state_[i] == VarState::free || qp_.lower(i) == qp_.upper(i)) continue;
          const double mult = state_[i] == VarState::lower ? full_grad(i) : -full_grad(i);
          if (mult < most_negative) {
            most_negative = mult;
            release = i;
          }
        }
        for (int r = m_eq; r < nw; ++r) {
          if (lambda(r) < most_negative) {
            most_negative = lambda(r);
            release = n + active[r - m_eq];
          }
        }
        if (release < 0) {
          res.status = QpStatus::optimal;
          fill_duals(res, full_grad, lambda, active);
          res.primal = z;
          return res;
        }
        if (release < n) {
          state_[release] = VarState::free;
        } else {
          row_active_[release - n] = false;
        }
        continue;
      }

      // Ratio test, lowest index wins ties.
      double alpha = 1.0;
      int blocking = -1;
      for (int i = 0; i < n; ++i) {
        if (state_[i] != VarState::free) continue;
        double a = kInf;
        if (p(i) < 0.0 && std::isfinite(qp_.lower(i))) {
          a = std::max(0.0, (qp_.lower(i) - z(i)) / p(i));
        } else if (p(i) > 0.0 && std::isfinite(qp_.upper(i))) {
          a = std::max(0.0, (qp_.upper(i) - z(i)) / p(i));
        }
        if (a < alpha) {
          alpha = a;
          blocking = i;
        }
      }
      if (m_in > 0) {
        const Eigen::VectorXd ap = qp_.ineq * p;
        const Eigen::VectorXd az = qp_.ineq * z;
        for (int j = 0; j < m_in; ++j) {
          if (row_active_[j] || ap(j) <= 1e-14 * (1.0 + pnorm)) continue;
          const double a = std::max(0.0, (qp_.ineq_upper(j) - az(j)) / ap(j));
          if (a < alpha) {
            alpha = a;
            blocking = n + j;
          }
        }
      }
      z += alpha * p;
      if (blocking >= 0 && blocking < n) {
        if (p(blocking) < 0.0) {
          z(blocking) = qp_.lower(blocking);
          state_[blocking] = VarState::lower;
        } else {
          z(blocking) = qp_.upper(blocking);
          state_[blocking] = VarState::upper;
        }
      } else if (blocking >= n) {
        row_active_[blocking - n] = true;
      }
    }
    // Iteration cap: report the current (feasible) iterate.
    res.primal = z;
    res.lower_dual = Eigen::VectorXd::Zero(n);
    res.upper_dual = Eigen::VectorXd::Zero(n);
    res.ineq_dual = Eigen::VectorXd::Zero(m_in);
    res.eq_dual = Eigen::VectorXd::Zero(m_eq);
    return res;
  }

 private:
  void fill_duals(QpResult& res, const Eigen::VectorXd& full_grad, const Eigen::VectorXd& lambda,
                  const std::vector<int>& active) const {
    const int n = qp_.size();
    const int m_eq = static_cast<int>(qp_.eq.rows());
    res.lower_dual = Eigen::VectorXd::Zero(n);
    res.upper_dual = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      if (state_[i] == VarState::lower) res.lower_dual(i) = full_grad(i);
      if (state_[i] == VarState::upper) res.upper_dual(i) = -full_grad(i);
    }
    res.ineq_dual = Eigen::VectorXd::Zero(qp_.ineq.rows());
    for (std::size_t r = 0; r < active.size(); ++r) res.ineq_dual(active[r]) = lambda(m_eq + r);
    res.eq_dual = lambda.head(m_eq);
  }

  const QpProblem& qp_;
  const QpOptions& opt_;
  std::vector<VarState> state_;
  std::vector<bool> row_active_;
};

Eigen::VectorXd clamp_to_bounds(const QpProblem& qp, Eigen::VectorXd z) {
  for (int i = 0; i < z.size(); ++i) z(i) = std::clamp(z(i), qp.lower(i), qp.upper(i));
  return z;
}

}  // namespace

QpProblem QpProblem::unconstrained(const Eigen::MatrixXd& h, const Eigen::VectorXd& g) {
  QpProblem qp;
  const auto n = g.size();
  qp.hessian = h;
  qp.gradient = g;
  qp.lower = Eigen::VectorXd::Constant(n, -kInf);
  qp.upper = Eigen::VectorXd::Constant(n, kInf);
  qp.ineq.resize(0, n);
  qp.ineq_upper.resize(0);
  qp.eq.resize(0, n);
  qp.eq_rhs.resize(0);
  return qp;
}

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::max_iterations: return "max-iterations";
    case QpStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

void qp_evaluate_kkt(const QpProblem& qp, QpResult& r) {
  const Eigen::VectorXd& z = r.primal;
  Eigen::VectorXd stat = qp.hessian * z + qp.gradient + r.upper_dual - r.lower_dual;
  double comp = 0.0;
  double infeas = 0.0;
  for (int i = 0; i < z.size(); ++i) {
    if (std::isfinite(qp.lower(i))) {
      comp = std::max(comp, std::abs(r.lower_dual(i) * (z(i) - qp.lower(i))));
      infeas = std::max(infeas, qp.lower(i) - z(i));
    }
    if (std::isfinite(qp.upper(i))) {
      comp = std::max(comp, std::abs(r.upper_dual(i) * (qp.upper(i) - z(i))));
      infeas = std::max(infeas, z(i) - qp.upper(i));
    }
  }
  if (qp.ineq.rows() > 0) {
    stat += qp.ineq.transpose() * r.ineq_dual;
    const Eigen::VectorXd slack = qp.ineq_upper - qp.ineq * z;
    comp = std::max(comp, (r.ineq_dual.array() * slack.array()).abs().maxCoeff());
    infeas = std::max(infeas, -slack.minCoeff());
  }
  if (qp.eq.rows() > 0) {
    stat += qp.eq.transpose() * r.eq_dual;
    infeas = std::max(infeas, (qp.eq * z - qp.eq_rhs).cwiseAbs().maxCoeff());
  }
  r.stationarity = stat.size() > 0 ? stat.lpNorm<Eigen::Infinity>() : 0.0;
  r.complementarity = comp;
  r.primal_infeasibility = std::max(0.0, infeas);
}

QpResult qp_solve(const QpProblem& qp, const QpOptions& options,
                  const std::optional<Eigen::VectorXd>& start) {
  check_dimensions(qp);
  const int n = qp.size();

  Eigen::VectorXd z0 = clamp_to_bounds(qp, start ? *start : Eigen::VectorXd::Zero(n));
  if (max_row_violation(qp, z0) > options.feasibility_tol) {
    if (qp.eq.rows() > 0) {
      QpResult r;
      r.status = QpStatus::infeasible;
      r.primal = z0;
      return r;
    }
    // Phase 1: min t + tiny regularization, s.t. A z - t <= b, t >= 0.
    constexpr double kReg = 1e-8;
    QpProblem ph;
    ph.hessian = kReg * Eigen::MatrixXd::Identity(n + 1, n + 1);
    ph.gradient = Eigen::VectorXd::Zero(n + 1);
    ph.gradient.head(n) = -kReg * z0;
    ph.gradient(n) = 1.0;
    ph.lower.resize(n + 1);
    ph.upper.resize(n + 1);
    ph.lower << qp.lower, 0.0;
    ph.upper << qp.upper, kInf;
    ph.ineq.resize(qp.ineq.rows(), n + 1);
    ph.ineq << qp.ineq, -Eigen::VectorXd::Ones(qp.ineq.rows());
    ph.ineq_upper = qp.ineq_upper;
    ph.eq.resize(0, n + 1);
    ph.eq_rhs.resize(0);
    Eigen::VectorXd w(n + 1);
    w << z0, max_row_violation(qp, z0);
    QpOptions popt = options;
    popt.max_iterations = std::max(options.max_iterations, 4 * (n + static_cast<int>(qp.ineq.rows())));
    QpResult pr = ActiveSetSolver(ph, popt).run(w);
    if (pr.primal(n) > options.feasibility_tol) {
      QpResult r;
      r.status = QpStatus::infeasible;
      r.primal = pr.primal.head(n);
      r.iterations = pr.iterations;
      return r;
    }
    z0 = pr.primal.head(n);
  }

  QpResult r = ActiveSetSolver(qp, options).run(z0);
  qp_evaluate_kkt(qp, r);
  return r;
}

}  // namespace cablempc
