#pragma once

// Box-constrained strictly convex QP:
//   min 0.5 u'Hu + f'u   s.t.  lb <= u <= ub
//
// Solved by accelerated projected gradient with a fixed 1/L step (monotone:
// momentum is dropped whenever it would increase the cost) followed by a
// primal active-set refinement that lands on the exact vertex/face solution.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "fjmpc/errors.hpp"
#include "fjmpc/model.hpp"

#include <nlohmann/json.hpp>

namespace fjmpc {

struct BoxQp {
  Mat H;
  Vec f, lb, ub;

  int size() const { return static_cast<int>(f.size()); }

  double cost(const Vec& u) const { return 0.5 * u.dot(H * u) + f.dot(u); }

  Vec project(const Vec& u) const { return u.cwiseMax(lb).cwiseMin(ub); }

  void check_dimensions() const {
    const long p = f.size();
    if (H.rows() != p || H.cols() != p) throw DimensionError("BoxQp: H must be p x p");
    detail::require_size(lb.size(), p, "BoxQp.lb");
    detail::require_size(ub.size(), p, "BoxQp.ub");
  }
};

enum class QpStatus { optimal, max_iter, infeasible_bounds };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::max_iter: return "max-iter";
    case QpStatus::infeasible_bounds: return "infeasible-bounds";
  }
  return "?";
}

struct QpSolution {
  Vec u_star;
  int iterations = 0;
  double kkt_residual = 0.0;
  double cost = 0.0;
  QpStatus status = QpStatus::optimal;
};

struct QpOptions {
  double tol = 1e-8;
  int max_iter = 500;
  bool check_descent = false;  // assert monotone cost across iterations
};

/// Optimality measure: stationarity on free coordinates, sign conditions on
/// coordinates sitting exactly on a bound.
inline double kkt_residual(const BoxQp& qp, const Vec& u) {
  qp.check_dimensions();
  detail::require_size(u.size(), qp.size(), "kkt_residual.u");
  if ((u.array() < qp.lb.array()).any() || (u.array() > qp.ub.array()).any())
    throw Error("kkt_residual: point outside the box");
  const Vec g = qp.H * u + qp.f;
  double r = 0.0;
  for (int i = 0; i < qp.size(); ++i) {
    const bool at_lb = u(i) == qp.lb(i);
    const bool at_ub = u(i) == qp.ub(i);
    double ri;
    if (at_lb && at_ub) {
      ri = 0.0;
    } else if (at_lb) {
      ri = std::max(0.0, -g(i));
    } else if (at_ub) {
      ri = std::max(0.0, g(i));
    } else {
      ri = std::abs(g(i));
    }
    r = std::max(r, ri);
  }
  return r;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double largest_eigenvalue(const Mat& H, double rel_tol = 1e-6, int max_iter = 1000) {
  const long p = H.rows();
  if (p == 0) return 0.0;
  if (p == 1) return H(0, 0);
  Vec v = Vec::Ones(p) / std::sqrt(static_cast<double>(p));
  double lambda = 0.0;
  for (int k = 0; k < max_iter; ++k) {
    Vec w = H * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (k > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next)) return std::max(next, norm);
    lambda = next;
  }
  return std::max(lambda, (H * v).norm());
}

namespace detail {

inline double projected_gradient_norm(const BoxQp& qp, const Vec& u, const Vec& g) {
  return (u - qp.project(u - g)).cwiseAbs().maxCoeff();
}

// Primal active-set iterations from a feasible point. Returns true when the
// KKT conditions hold for the final working set.
inline bool active_set_refine(const BoxQp& qp, Vec& u, int& iterations) {
  const int p = qp.size();
  // working-set codes: 0 free, -1 at lb, +1 at ub
  std::vector<int> ws(p, 0);
  Vec g = qp.H * u + qp.f;
  for (int i = 0; i < p; ++i) {
    if (qp.lb(i) == qp.ub(i)) {
      ws[i] = -1;
      u(i) = qp.lb(i);
    } else if (u(i) <= qp.lb(i) && g(i) >= 0.0) {
      ws[i] = -1;
      u(i) = qp.lb(i);
    } else if (u(i) >= qp.ub(i) && g(i) <= 0.0) {
      ws[i] = 1;
      u(i) = qp.ub(i);
    }
  }

  const int max_rounds = 4 * p + 10;
  for (int round = 0; round < max_rounds; ++round) {
    ++iterations;
    std::vector<int> free_idx;
    for (int i = 0; i < p; ++i)
      if (ws[i] == 0) free_idx.push_back(i);
    const int nf = static_cast<int>(free_idx.size());

    Vec candidate = u;
    if (nf > 0) {
      Mat Hff(nf, nf);
      Vec rhs(nf);
      for (int a = 0; a < nf; ++a) {
        const int i = free_idx[a];
        double s = qp.f(i);
        for (int k = 0; k < p; ++k)
          if (ws[k] != 0) s += qp.H(i, k) * u(k);
        rhs(a) = -s;
        for (int b = 0; b < nf; ++b) Hff(a, b) = qp.H(i, free_idx[b]);
      }
      const Eigen::LDLT<Mat> ldlt(Hff);
      if (ldlt.info() != Eigen::Success) return false;
      const Vec uf = ldlt.solve(rhs);
      if (!uf.allFinite()) return false;
      for (int a = 0; a < nf; ++a) candidate(free_idx[a]) = uf(a);
    }

    // Largest feasible step towards the subspace minimizer.
    double alpha = 1.0;
    int blocking = -1, blocking_side = 0;
    for (int i : free_idx) {
      const double d = candidate(i) - u(i);
      if (d < 0.0 && candidate(i) < qp.lb(i)) {
        const double a = (qp.lb(i) - u(i)) / d;
        if (a < alpha) alpha = a, blocking = i, blocking_side = -1;
      } else if (d > 0.0 && candidate(i) > qp.ub(i)) {
        const double a = (qp.ub(i) - u(i)) / d;
        if (a < alpha) alpha = a, blocking = i, blocking_side = 1;
      }
    }
    alpha = std::clamp(alpha, 0.0, 1.0);
    for (int i : free_idx) u(i) += alpha * (candidate(i) - u(i));
    u = qp.project(u);

    if (blocking >= 0) {
      ws[blocking] = blocking_side;
      u(blocking) = blocking_side < 0 ? qp.lb(blocking) : qp.ub(blocking);
      continue;
    }

    // Subspace minimizer reached; release the worst multiplier of wrong sign.
    g = qp.H * u + qp.f;
    int release = -1;
    double worst = 0.0;
    for (int i = 0; i < p; ++i) {
      if (ws[i] == 0 || qp.lb(i) == qp.ub(i)) continue;
      const double violation = ws[i] < 0 ? -g(i) : g(i);
      if (violation > worst) worst = violation, release = i;
    }
    if (release < 0) return true;
    ws[release] = 0;
  }
  return false;
}

}  // namespace detail

inline QpSolution solve_box_qp(const BoxQp& qp, const QpOptions& opt = {},
                               const std::optional<Vec>& warm_start = std::nullopt) {
  qp.check_dimensions();
  if (!(opt.tol > 0.0)) throw ConfigError("solve_box_qp: tol must be > 0");
  const int p = qp.size();
  QpSolution sol;
  if ((qp.lb.array() > qp.ub.array()).any()) {
    sol.status = QpStatus::infeasible_bounds;
    sol.u_star = qp.lb;
    sol.kkt_residual = std::numeric_limits<double>::infinity();
    sol.cost = std::numeric_limits<double>::infinity();
    return sol;
  }
  if (p == 0) {
    sol.u_star = Vec();
    return sol;
  }

  Vec u = warm_start && warm_start->size() == p ? qp.project(*warm_start) : qp.project(Vec::Zero(p));
  Vec g = qp.H * u + qp.f;
  double cost = qp.cost(u);

  const double L = largest_eigenvalue(qp.H);
  const double step = L > 0.0 ? 1.0 / L : 1.0;
  Vec u_prev = u;
  double t_k = 1.0;
  int it = 0;
  bool converged = detail::projected_gradient_norm(qp, u, g) < opt.tol;
  while (!converged && it < opt.max_iter) {
    ++it;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_k * t_k));
    const double beta = (t_k - 1.0) / t_next;
    const Vec y = u + beta * (u - u_prev);
    Vec candidate = qp.project(y - step * (qp.H * y + qp.f));
    double c_candidate = qp.cost(candidate);
    if (c_candidate > cost) {
      // Plain projected-gradient step: guaranteed descent for step <= 1/L.
      candidate = qp.project(u - step * g);
      c_candidate = qp.cost(candidate);
      t_k = 1.0;
    } else {
      t_k = t_next;
    }
    if (opt.check_descent && c_candidate > cost + 1e-12 * (1.0 + std::abs(cost)))
      throw Error("solve_box_qp: cost increased during projected gradient");
    if (c_candidate > cost) {
      // Step estimate too long (power-iteration error); stop descending.
      break;
    }
    u_prev = u;
    u = std::move(candidate);
    cost = c_candidate;
    g = qp.H * u + qp.f;
    converged = detail::projected_gradient_norm(qp, u, g) < opt.tol;
  }
  sol.iterations = it;

  Vec polished = u;
  int refine_iters = 0;
  const bool refined = detail::active_set_refine(qp, polished, refine_iters);
  sol.iterations += refine_iters;
  polished = qp.project(polished);
  // Near the optimum the two costs differ only by roundoff.
  const double slack = refined ? 1e-12 * (1.0 + std::abs(cost)) : 0.0;
  if (polished.allFinite() && qp.cost(polished) <= cost + slack) {
    u = polished;
    cost = qp.cost(u);
  }

  sol.u_star = qp.project(u);
  sol.cost = qp.cost(sol.u_star);
  sol.kkt_residual = kkt_residual(qp, sol.u_star);
  const double g_scale = 1.0 + qp.f.cwiseAbs().maxCoeff();
  sol.status = (refined || converged || sol.kkt_residual < opt.tol * g_scale) ? QpStatus::optimal
                                                                              : QpStatus::max_iter;
  return sol;
}

// Debug dump for offline reproduction.
inline nlohmann::json to_json(const BoxQp& qp) {
  nlohmann::json H = nlohmann::json::array();
  for (long i = 0; i < qp.H.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (long k = 0; k < qp.H.cols(); ++k) row.push_back(qp.H(i, k));
    H.push_back(std::move(row));
  }
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"H", H}, {"f", vec(qp.f)}, {"lb", vec(qp.lb)}, {"ub", vec(qp.ub)}};
}

inline BoxQp box_qp_from_json(const nlohmann::json& j) {
  BoxQp qp;
  const auto rows = j.at("H").get<std::vector<std::vector<double>>>();
  const long p = static_cast<long>(rows.size());
  qp.H.resize(p, p);
  for (long i = 0; i < p; ++i) {
    detail::require_size(static_cast<long>(rows[i].size()), p, "BoxQp.H row");
    for (long k = 0; k < p; ++k) qp.H(i, k) = rows[i][k];
  }
  auto vec = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<double>>();
    return Vec(Eigen::Map<const Vec>(v.data(), static_cast<long>(v.size())));
  };
  qp.f = vec("f");
  qp.lb = vec("lb");
  qp.ub = vec("ub");
  qp.check_dimensions();
  return qp;
}

}  // namespace fjmpc
