#pragma once

// Set-membership bounds for horizon-p predictors: the minimal residual
// bound lambda_p, its inflation, feasible parameter sets, exponential-decay
// parameter boxes and the guaranteed error bound tau_p.

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <vector>

#include "smid/dataset.hpp"
#include "smid/lp.hpp"
#include "smid/polytope.hpp"

namespace smid {

struct InflationConfig {
  double alpha = 1.3;
  double gamma = 1.2;

  void validate() const {
    require(alpha > 1.0, "alpha must be > 1");
    require(gamma > 1.0, "gamma must be > 1");
  }
};

/// Exponential envelope of the true predictor parameters.
struct DecayBound {
  double rho = 0.0;
  double Lz = 0.0;
  double Lu = 0.0;

  void validate() const {
    require(rho > 0.0 && rho < 1.0, "decay rate must lie in (0, 1)");
    require(Lz > 0.0 && Lu > 0.0, "decay constants must be positive");
  }
};

/// Per-horizon bound estimates, index 0 <-> p = 1.
struct BoundSeries {
  int order = 0;
  double dbar = 0.0;
  std::vector<double> lambda;
  std::vector<double> eps_hat;
  std::vector<double> tau_hat;          // may be empty until computed
  std::vector<double> validation_error;  // may be empty until computed

  int horizons() const { return static_cast<int>(lambda.size()); }
};

/// Tolerance under which lambda_p counts as zero.
inline double zero_tolerance(double output_scale) { return std::max(1e-8, 1e-6 * output_scale); }

inline double output_scale(const SampleSet& s) {
  return s.size() > 0 ? s.targets.cwiseAbs().maxCoeff() : 0.0;
}

namespace detail {

// Minimum-norm least squares; stays bounded on rank-deficient regressors.
inline Vector least_squares(const RowMatrix& rows, const Vector& targets) {
  if (rows.rows() == 0) return Vector::Zero(rows.cols());
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(rows);
  cod.setThreshold(1e-10);
  return cod.solve(targets);
}

}  // namespace detail

/// Polytope in (theta, lambda) of the minimal-residual LP
///   |y_i - phi_i' theta| <= lambda + dbar,  theta in Omega, lambda >= 0.
inline Polytope lambda_polytope(const SampleSet& S, double dbar, double omega = kOmegaBound) {
  const int d = S.dim();
  const long n = S.size();
  Polytope poly(d + 1, omega);
  poly.lower(d) = 0.0;
  poly.A.resize(2 * n, d + 1);
  poly.b.resize(2 * n);
  poly.A.topLeftCorner(n, d) = S.rows;
  poly.A.bottomLeftCorner(n, d) = -S.rows;
  poly.A.col(d).setConstant(-1.0);
  poly.b.head(n) = S.targets.array() + dbar;
  poly.b.tail(n) = dbar - S.targets.array();
  return poly;
}

struct LambdaResult {
  double lambda = 0.0;
  Vector theta;  // a minimizer
};

/// Smallest lambda >= 0 such that some theta keeps every residual within
/// lambda + dbar. Solved as one LP in (theta, lambda), started from the
/// least-squares fit.
inline LambdaResult lambda_underbar_lp(const SampleSet& S, double dbar, const LpOptions& lp = {},
                                       double omega = kOmegaBound) {
  require(S.size() > 0, "sample set is empty");
  require(dbar >= 0.0, "disturbance bound must be non-negative");
  const int d = S.dim();
  const Polytope poly = lambda_polytope(S, dbar, omega);
  Vector start(d + 1);
  start.head(d) = detail::least_squares(S.rows, S.targets);
  const Vector resid = S.targets - S.rows * start.head(d);
  const double worst = resid.cwiseAbs().maxCoeff();
  start(d) = std::max(0.0, worst - dbar) * (1.0 + 1e-9) + 1e-12;
  SimplexSolver solver(poly, lp);
  if (!solver.find_feasible(start)) throw NumericalError("minimal-residual LP reported infeasible");
  Vector obj = Vector::Zero(d + 1);
  obj(d) = 1.0;
  const LpOutcome out = solver.solve(obj, Sense::minimize);
  if (out.status != LpStatus::optimal) {
    throw NumericalError(std::string("minimal-residual LP is ") + to_string(out.status));
  }
  return {std::max(0.0, out.value), out.point.head(d)};
}

inline double lambda_underbar(const SampleSet& S, double dbar, const LpOptions& lp = {}) {
  return lambda_underbar_lp(S, dbar, lp).lambda;
}

/// Chebyshev (minimax) residual of the sample set. Because
///   lambda(dbar) = max(0, minimax - dbar)
/// one LP per (p, o) serves every trial value of dbar.
inline double minimax_residual(const SampleSet& S, const LpOptions& lp = {}) {
  return lambda_underbar_lp(S, 0.0, lp).lambda;
}

inline double lambda_from_minimax(double minimax, double dbar) { return std::max(0.0, minimax - dbar); }

inline double eps_hat(double lambda, const InflationConfig& cfg) {
  require(lambda >= 0.0, "lambda must be non-negative");
  return cfg.alpha * lambda;
}

/// Feasible parameter set {theta : |y_i - phi_i' theta| <= eps_hat + dbar} within Omega.
inline Polytope fps(const SampleSet& S, double eps, double dbar, double omega = kOmegaBound) {
  require(eps >= 0.0 && dbar >= 0.0, "bounds must be non-negative");
  Polytope poly(S.dim(), omega);
  poly.add_abs_constraints(S.rows, S.targets, Vector::Constant(S.size(), eps + dbar));
  return poly;
}

/// Box of decay bounds: |theta_y(i)| <= Lz rho^(p+i), |theta_u(i)| <= Lu rho^i.
inline Polytope gamma_set(int o, int p, const DecayBound& decay) {
  decay.validate();
  const RegressorLayout layout(o, p);
  Vector hi(layout.dim());
  for (int i = 1; i <= o; ++i) hi(i - 1) = decay.Lz * std::pow(decay.rho, p + i);
  for (int i = 1; i <= layout.input_size(); ++i) hi(o + i - 1) = decay.Lu * std::pow(decay.rho, i);
  return Polytope::box(-hi, hi);
}

inline Polytope refined_fps(const SampleSet& S, double eps, double dbar, const DecayBound& decay) {
  return intersect(fps(S, eps, dbar), gamma_set(S.layout.order, S.layout.horizon, decay));
}

/// Support values c_j = max over the set of +/- phi_j' theta, j = 1..2N:
/// the first N entries use +phi_j, the last N use -phi_j.
struct SupportValues {
  Vector c;  // length 2N
  int lp_count = 0;
};

inline SupportValues c_coeffs(const SampleSet& S, const Polytope& set, const LpOptions& lp = {},
                              const std::optional<Vector>& hint = std::nullopt) {
  require(set.dim() == S.dim(), "set dimension does not match the sample layout");
  const long n = S.size();
  SupportValues sv;
  sv.lp_count = static_cast<int>(2 * n);
  // the usual case: the set's own rows are +-phi_j
  if (set.rows() == 2 * n && set.A.topRows(n) == S.rows && set.A.bottomRows(n) == -S.rows) {
    sv.c = row_support(set, lp, hint);
    return sv;
  }
  RowMatrix objectives(2 * n, S.dim());
  objectives.topRows(n) = S.rows;
  objectives.bottomRows(n) = -S.rows;
  const auto outs = solve_lp_batch(objectives, Sense::maximize, set, lp, hint);
  sv.c.resize(2 * n);
  for (long j = 0; j < 2 * n; ++j) {
    const auto& o = outs[static_cast<std::size_t>(j)];
    if (o.status == LpStatus::infeasible) throw InvalidInput("support values requested on an empty set");
    if (o.status != LpStatus::optimal) throw NumericalError("support LP did not reach an optimum");
    sv.c(j) = o.value;
  }
  return sv;
}

/// max_j (c_j - check_phi_j' theta): the worst-case |phi_j'(theta' - theta)|
/// over the set, given the support values.
inline double worst_deviation(const SampleSet& S, const SupportValues& sv, const Vector& theta) {
  require(theta.size() == S.dim(), "parameter dimension does not match the sample layout");
  const long n = S.size();
  const Vector proj = S.rows * theta;
  double worst = -std::numeric_limits<double>::infinity();
  for (long j = 0; j < n; ++j) {
    worst = std::max(worst, sv.c(j) - proj(j));
    worst = std::max(worst, sv.c(n + j) + proj(j));
  }
  return worst;
}

/// Guaranteed bound gamma * max_j max_{theta' in set} |phi_j'(theta' - theta)| + eps_hat.
inline double tau_hat_from_support(const SampleSet& S, const SupportValues& sv, const Vector& theta,
                                   double eps, const InflationConfig& cfg) {
  return cfg.gamma * std::max(0.0, worst_deviation(S, sv, theta)) + eps;
}

inline double tau_hat(const Vector& theta, const SampleSet& S, const Polytope& set, double eps,
                      const InflationConfig& cfg, const LpOptions& lp = {}) {
  if (is_empty(set, lp)) throw InvalidInput("tau_hat requested on an empty parameter set");
  return tau_hat_from_support(S, c_coeffs(S, set, lp), theta, eps, cfg);
}

struct EnsureNonemptyResult {
  double factor = 1.0;
  std::vector<double> eps_hat;
  DecayBound decay;
  int rebuilds = 0;
};

/// Enlarges (eps_hat_p, Lz, Lu) by `step` until every refined set for
/// p = 1..eps.size() is nonempty. Throws once the factor would pass `cap`.
inline EnsureNonemptyResult ensure_nonempty(const std::vector<SampleSet>& sets,
                                            const std::vector<double>& eps, double dbar,
                                            const DecayBound& decay, double step = 1.05,
                                            double cap = 10.0, const LpOptions& lp = {}) {
  require(step > 1.0, "inflation step must be > 1");
  require(sets.size() == eps.size(), "one eps_hat per sample set is required");
  EnsureNonemptyResult r;
  r.eps_hat = eps;
  r.decay = decay;
  while (true) {
    bool all = true;
    for (std::size_t i = 0; i < sets.size() && all; ++i) {
      if (is_empty(refined_fps(sets[i], r.eps_hat[i], dbar, r.decay), lp)) all = false;
    }
    if (all) return r;
    const double next = r.factor * step;
    if (next > cap * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "refined feasible sets stay empty up to inflation factor " << r.factor << " (cap " << cap
          << ")";
      throw NumericalError(msg.str());
    }
    r.factor = next;
    for (std::size_t i = 0; i < eps.size(); ++i) r.eps_hat[i] = eps[i] * r.factor;
    r.decay.Lz = decay.Lz * r.factor;
    r.decay.Lu = decay.Lu * r.factor;
    ++r.rebuilds;
  }
}

}  // namespace smid
