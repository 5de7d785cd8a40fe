#pragma once

// One-step ARX predictors, their iterated multi-step parameters and the
// identification methods compared on them.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "smid/sm_bounds.hpp"

namespace smid {

/// theta_p = h(theta_1, p, o) for p = 1..p_max, with d theta_p / d theta_1.
struct Propagation {
  std::vector<Vector> theta;  // index p - 1
  std::vector<Matrix> jac;    // (2o + p - 1) x 2o, empty unless requested
};

/// Iterates z(k+j) = sum_i a_i z(k+j-i) + sum_i b_i u(k+j-i), substituting
/// predictions for unavailable outputs. theta_1 = [a_1..a_o | b_1..b_o].
inline Propagation propagate_all(const Vector& theta1, int o, int p_max, bool with_jac = false) {
  require(o >= 1, "model order must be >= 1");
  require(p_max >= 1, "horizon must be >= 1");
  require(theta1.size() == 2 * o, "one-step parameters must have dimension 2o");
  require(theta1.allFinite(), "parameters must be finite");
  // Shared basis: y(k)..y(k-o+1), then u(k+s) at index o + s + o - 1 for
  // s = -(o-1)..p_max-1.
  const int L = o + p_max + o - 1;
  auto u_index = [&](int s) { return o + s + o - 1; };
  // w[t + o - 1] is the coefficient vector of the output at k + t, t >= -(o-1)
  std::vector<Vector> w(static_cast<std::size_t>(p_max + o), Vector::Zero(L));
  std::vector<Matrix> dw;
  for (int t = 0; t < o; ++t) w[static_cast<std::size_t>(o - 1 - t)](t) = 1.0;
  if (with_jac) dw.assign(static_cast<std::size_t>(p_max + o), Matrix::Zero(L, 2 * o));
  Propagation out;
  out.theta.reserve(static_cast<std::size_t>(p_max));
  for (int j = 1; j <= p_max; ++j) {
    const auto cur = static_cast<std::size_t>(j + o - 1);
    Vector& wj = w[cur];
    for (int i = 1; i <= o; ++i) {
      const auto prev = static_cast<std::size_t>(j - i + o - 1);
      wj += theta1(i - 1) * w[prev];
      wj(u_index(j - i)) += theta1(o + i - 1);
      if (with_jac) {
        dw[cur] += theta1(i - 1) * dw[prev];
        dw[cur].col(i - 1) += w[prev];
        dw[cur](u_index(j - i), o + i - 1) += 1.0;
      }
    }
    const int d = 2 * o + j - 1;
    Vector th(d);
    th.head(o) = wj.head(o);
    for (int m = 0; m < o + j - 1; ++m) th(o + m) = wj(u_index(j - 1 - m));
    out.theta.push_back(std::move(th));
    if (with_jac) {
      Matrix D(d, 2 * o);
      D.topRows(o) = dw[cur].topRows(o);
      for (int m = 0; m < o + j - 1; ++m) D.row(o + m) = dw[cur].row(u_index(j - 1 - m));
      out.jac.push_back(std::move(D));
    }
  }
  return out;
}

inline Vector propagate(const Vector& theta1, int p, int o) { return propagate_all(theta1, o, p).theta.back(); }

/// Free run of the one-step model from index `start`: outputs up to `start`
/// are measured, later ones fed back. Returns zhat(start+1..start+horizon).
inline std::vector<double> simulate_predictor(const Vector& theta1, const IORecord& io, std::size_t start,
                                              int horizon) {
  require(theta1.size() % 2 == 0 && theta1.size() >= 2, "one-step parameters must have dimension 2o");
  const int o = static_cast<int>(theta1.size() / 2);
  require(start + 1 >= static_cast<std::size_t>(o), "not enough history before the start index");
  require(horizon >= 0 && start + static_cast<std::size_t>(horizon) < io.size(), "horizon runs past the record");
  std::vector<double> v(io.y.begin(), io.y.begin() + static_cast<std::ptrdiff_t>(start + 1));
  std::vector<double> out;
  for (int j = 1; j <= horizon; ++j) {
    const std::size_t t = start + static_cast<std::size_t>(j);
    double z = 0.0;
    for (int i = 1; i <= o; ++i) {
      z += theta1(i - 1) * v[t - static_cast<std::size_t>(i)];
      z += theta1(o + i - 1) * io.u[t - static_cast<std::size_t>(i)];
    }
    v.push_back(z);
    out.push_back(z);
  }
  return out;
}

/// Free-run predictions zhat(o..N-1) from the first admissible regressor,
/// with forward sensitivities d zhat / d theta_1.
struct FreeRun {
  Vector zhat;
  Matrix jac;
  std::size_t first = 0;  // record index of zhat(0)
};

inline FreeRun free_run(const Vector& theta1, const IORecord& io, bool with_jac) {
  const int o = static_cast<int>(theta1.size() / 2);
  require(theta1.size() == 2 * o && o >= 1, "one-step parameters must have dimension 2o");
  require(io.size() > static_cast<std::size_t>(o), "record too short for a free run");
  const auto N = static_cast<long>(io.size());
  FreeRun fr;
  fr.first = static_cast<std::size_t>(o);
  const long count = N - o;
  fr.zhat.resize(count);
  if (with_jac) fr.jac = Matrix::Zero(count, 2 * o);
  auto out = [&](long t) { return t < o ? io.y[static_cast<std::size_t>(t)] : fr.zhat(t - o); };
  for (long t = o; t < N; ++t) {
    double z = 0.0;
    for (int i = 1; i <= o; ++i) z += theta1(i - 1) * out(t - i) + theta1(o + i - 1) * io.u[static_cast<std::size_t>(t - i)];
    fr.zhat(t - o) = z;
    if (with_jac) {
      auto row = fr.jac.row(t - o);
      for (int i = 1; i <= o; ++i) {
        row(i - 1) += out(t - i);
        row(o + i - 1) += io.u[static_cast<std::size_t>(t - i)];
        if (t - i >= o) row += theta1(i - 1) * fr.jac.row(t - i - o);
      }
    }
  }
  return fr;
}

/// Sum of squared free-run errors against the measured output.
inline double simulation_cost(const Vector& theta1, const IORecord& io) {
  const FreeRun fr = free_run(theta1, io, false);
  double s = 0.0;
  for (long i = 0; i < fr.zhat.size(); ++i) {
    const double r = io.y[fr.first + static_cast<std::size_t>(i)] - fr.zhat(i);
    s += r * r;
  }
  return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

/// Ordinary least squares on one-step residuals.
inline Vector identify_pem(const SampleSet& S1) {
  require(S1.layout.horizon == 1, "PEM needs the one-step sample set");
  require(S1.size() >= S1.dim(), "fewer samples than parameters");
  Eigen::ColPivHouseholderQR<Matrix> qr(Matrix(S1.rows));
  qr.setThreshold(1e-10);
  if (qr.rank() < S1.dim()) throw InvalidInput("one-step regressor matrix is rank deficient");
  return qr.solve(S1.targets);
}

struct SolverDiagnostics {
  int iterations = 0;
  double objective = 0.0;
  double feasibility = 0.0;  // largest row-normalized constraint violation
  bool converged = false;
  std::string start;
  std::string note;
};

struct NlpOptions {
  int max_iterations = 200;
  double feasibility_tol = 1e-6;
  double initial_radius = 0.05;
  double min_radius = 1e-12;
  double penalty = 0.0;  // 0: chosen from the objective scale
};

namespace detail {

/// min 1/2 z'Hz + g'z  s.t.  A z <= b, by a primal active-set method from a
/// feasible z. H must be positive definite.
inline Vector active_set_qp(const Matrix& H, const Vector& g, const RowMatrix& A, const Vector& b, Vector z,
                            int max_iter = 0) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  if (max_iter <= 0) max_iter = 50 * (n + 10);
  const double tol = 1e-13;
  std::vector<int> W;
  std::vector<char> in(static_cast<std::size_t>(m), 0);
  Vector slack = b - A * z;
  bool at_min = false;
  for (int i = 0; i < m && static_cast<int>(W.size()) < n; ++i) {
    if (slack(i) <= 1e-13 * (1.0 + std::abs(b(i)))) {
      Matrix Aw(static_cast<long>(W.size()) + 1, n);
      for (std::size_t k = 0; k < W.size(); ++k) Aw.row(static_cast<long>(k)) = A.row(W[k]);
      Aw.row(static_cast<long>(W.size())) = A.row(i);
      Eigen::FullPivLU<Matrix> lu(Aw);
      if (lu.rank() == Aw.rows()) {
        W.push_back(i);
        in[static_cast<std::size_t>(i)] = 1;
      }
    }
  }
  for (int it = 0; it < max_iter; ++it) {
    // null-space step: A_W s = 0 holds exactly by construction
    const int w = static_cast<int>(W.size());
    const Vector grad = H * z + g;
    Matrix Q = Matrix::Identity(n, n);
    Matrix R;
    if (w > 0) {
      Matrix Aw(n, w);
      for (int k = 0; k < w; ++k) Aw.col(k) = A.row(W[static_cast<std::size_t>(k)]).transpose();
      Eigen::HouseholderQR<Matrix> qr(Aw);
      Q = qr.householderQ() * Matrix::Identity(n, n);
      R = qr.matrixQR().topRows(w).triangularView<Eigen::Upper>();
    }
    Vector s = Vector::Zero(n);
    if (!at_min && n - w > 0) {
      const Matrix Z = Q.rightCols(n - w);
      const Matrix Hr = Z.transpose() * H * Z;
      s = -Z * Hr.llt().solve(Z.transpose() * grad);
    }
    // after an unblocked step z minimizes over the working set; recomputing
    // the step there would only return rounding noise
    if (at_min || s.lpNorm<Eigen::Infinity>() <= tol * (1.0 + z.lpNorm<Eigen::Infinity>())) {
      at_min = false;
      if (w == 0) return z;
      const Vector lambda = R.triangularView<Eigen::Upper>().solve(-(Q.leftCols(w).transpose() * grad));
      int worst = -1;
      double most = -1e-10 * (1.0 + grad.lpNorm<Eigen::Infinity>() + g.lpNorm<Eigen::Infinity>());
      for (int k = 0; k < w; ++k) {
        if (lambda(k) < most) {
          most = lambda(k);
          worst = k;
        }
      }
      if (worst < 0) return z;
      in[static_cast<std::size_t>(W[static_cast<std::size_t>(worst)])] = 0;
      W.erase(W.begin() + worst);
      continue;
    }
    double alpha = 1.0;
    int block = -1;
    const Vector As = A * s;
    slack = b - A * z;
    for (int i = 0; i < m; ++i) {
      if (in[static_cast<std::size_t>(i)] || As(i) <= 1e-14) continue;
      const double a = std::max(0.0, slack(i)) / As(i);
      if (a < alpha) {
        alpha = a;
        block = i;
      }
    }
    z += alpha * s;
    if (block >= 0) {
      W.push_back(block);
      in[static_cast<std::size_t>(block)] = 1;
    } else {
      at_min = true;
    }
  }
  throw NumericalError("active-set QP did not converge");
}

// Linearized constraints g(x) + G dx <= 0, rows scaled to unit gradient norm.
struct Linearization {
  Vector g;
  RowMatrix G;
  Vector scale;
};

inline void normalize_rows(Linearization& lin) {
  lin.scale.resize(lin.g.size());
  for (long i = 0; i < lin.g.size(); ++i) {
    const double n = lin.G.row(i).norm();
    lin.scale(i) = n > 0.0 ? n : 1.0;
    lin.g(i) /= lin.scale(i);
    lin.G.row(i) /= lin.scale(i);
  }
}

inline double max_violation(const Vector& g) { return g.size() == 0 ? 0.0 : std::max(0.0, g.maxCoeff()); }

}  // namespace detail

/// Smooth least-squares program: min 1/2 |r(x)|^2 s.t. c(x) <= 0.
struct LeastSquaresProgram {
  int n = 0;
  // residual and its Jacobian; returns false when not finite
  std::function<bool(const Vector&, Vector&, Matrix*)> residual;
  // constraint values and Jacobian (may be empty)
  std::function<void(const Vector&, Vector&, RowMatrix*)> constraints;
};

struct NlpResult {
  Vector x;
  SolverDiagnostics diag;
};

/// Trust-region SQP with Gauss-Newton Hessian and an l-infinity exact
/// penalty on the linearized constraints.
inline NlpResult solve_least_squares(const LeastSquaresProgram& prog, Vector x, const NlpOptions& opt = {}) {
  const int n = prog.n;
  require(x.size() == n, "start point dimension mismatch");
  auto eval_constraints = [&](const Vector& at, Vector& g, RowMatrix* G) {
    if (prog.constraints) {
      prog.constraints(at, g, G);
    } else {
      g.resize(0);
      if (G) G->resize(0, n);
    }
  };
  Vector r;
  Matrix J;
  if (!prog.residual(x, r, &J)) throw NumericalError("objective is not finite at the start point");
  double f = 0.5 * r.squaredNorm();
  double M = opt.penalty > 0.0 ? opt.penalty : 10.0 * std::max(1.0, f);
  double radius = opt.initial_radius * std::max(1.0, x.lpNorm<Eigen::Infinity>());
  NlpResult res;
  detail::Linearization lin;
  eval_constraints(x, lin.g, &lin.G);
  detail::normalize_rows(lin);
  double viol = detail::max_violation(lin.g);
  int it = 0;
  bool converged = false;
  for (; it < opt.max_iterations; ++it) {
    // QP in (dx, v): rows G dx - v <= -g, v >= 0, |dx| <= radius
    const int q = n + 1;
    const long mc = lin.g.size();
    RowMatrix A(mc + 1 + 2 * n, q);
    Vector b(mc + 1 + 2 * n);
    A.setZero();
    if (mc > 0) {
      A.topLeftCorner(mc, n) = lin.G;
      A.block(0, n, mc, 1).setConstant(-1.0);
      b.head(mc) = -lin.g;
    }
    A(mc, n) = -1.0;
    b(mc) = 0.0;
    for (int k = 0; k < n; ++k) {
      A(mc + 1 + k, k) = 1.0;
      b(mc + 1 + k) = radius;
      A(mc + 1 + n + k, k) = -1.0;
      b(mc + 1 + n + k) = radius;
    }
    Matrix H = Matrix::Zero(q, q);
    H.topLeftCorner(n, n) = J.transpose() * J;
    const double reg = 1e-10 * std::max(1.0, H.diagonal().maxCoeff());
    H.diagonal().array() += reg;
    Vector gq(q);
    gq.head(n) = J.transpose() * r;
    Vector z0 = Vector::Zero(q);
    z0(n) = viol;
    // least linearized violation reachable inside the trust region
    double v_min = 0.0;
    if (viol > opt.feasibility_tol) {
      Polytope F(q);
      F.A = A.topRows(mc);
      F.b = b.head(mc);
      F.lower.head(n).setConstant(-radius);
      F.upper.head(n).setConstant(radius);
      F.lower(n) = 0.0;
      F.upper(n) = viol;
      Vector gf = Vector::Zero(q);
      gf(n) = 1.0;
      const LpOutcome lo = solve_lp(gf, Sense::minimize, F, {}, z0);
      if (lo.status == LpStatus::optimal) v_min = std::max(0.0, lo.value);
    }
    Vector z;
    while (true) {
      gq(n) = M;
      z = detail::active_set_qp(H, gq, A, b, z0);
      const double v_try = std::max(0.0, z(n));
      const bool steered = viol - v_try >= 0.5 * (viol - v_min) - 1e-15;
      if (steered || M >= 1e12) break;
      M *= 10.0;
    }
    const Vector dx = z.head(n);
    const double v = std::max(0.0, z(n));
    const double model = -(gq.head(n).dot(dx) + 0.5 * dx.dot(H.topLeftCorner(n, n) * dx));
    const double pred = model + M * (viol - v);
    if (pred <= 1e-12 * (1.0 + f) || radius < opt.min_radius) {
      if (viol <= opt.feasibility_tol || M >= 1e12) {
        converged = pred <= 1e-12 * (1.0 + f);
        break;
      }
      M *= 10.0;
      continue;
    }
    const Vector xt = x + dx;
    Vector rt;
    Matrix Jt;
    double ared = -std::numeric_limits<double>::infinity();
    Vector gt;
    if (prog.residual(xt, rt, nullptr)) {
      eval_constraints(xt, gt, nullptr);
      if (gt.size() > 0) gt = gt.cwiseQuotient(lin.scale);
      const double ft = 0.5 * rt.squaredNorm();
      ared = (f + M * viol) - (ft + M * detail::max_violation(gt));
    }
    const double ratio = ared / pred;
    const bool at_edge = dx.lpNorm<Eigen::Infinity>() >= 0.99 * radius;
    if (!(ratio >= 0.1)) {
      radius *= 0.25;
      continue;
    }
    if (ratio > 0.75 && at_edge) radius *= 2.0;
    x = xt;
    prog.residual(x, r, &J);
    f = 0.5 * r.squaredNorm();
    eval_constraints(x, lin.g, &lin.G);
    detail::normalize_rows(lin);
    viol = detail::max_violation(lin.g);
  }
  res.x = x;
  res.diag.iterations = it;
  res.diag.objective = f;
  res.diag.feasibility = viol;
  res.diag.converged = converged;
  return res;
}

/// Local minimizer of the free-run simulation error, started at theta_init.
inline NlpResult identify_sem(const IORecord& io, int o, const Vector& theta_init, const NlpOptions& opt = {}) {
  require(theta_init.size() == 2 * o, "start point must have dimension 2o");
  LeastSquaresProgram prog;
  prog.n = 2 * o;
  prog.residual = [&](const Vector& th, Vector& r, Matrix* J) {
    const FreeRun fr = free_run(th, io, J != nullptr);
    if (!fr.zhat.allFinite()) return false;
    r.resize(fr.zhat.size());
    for (long i = 0; i < r.size(); ++i) r(i) = io.y[fr.first + static_cast<std::size_t>(i)] - fr.zhat(i);
    if (r.squaredNorm() > 1e200) return false;
    if (J) *J = -fr.jac;
    return true;
  };
  NlpResult res = solve_least_squares(prog, theta_init, opt);
  res.diag.objective = 2.0 * res.diag.objective;
  return res;
}

/// The ingredients shared by the set-membership methods for p = 1..pbar.
struct HorizonData {
  SampleSet S;        // identification samples (measured target)
  Polytope set;       // refined feasible parameter set
  SupportValues sv;   // support values over `set`
  double eps = 0.0;   // inflated residual bound
  Vector gamma_hi;    // decay box half-widths
};

/// Per-horizon minimizer of the guaranteed bound over the refined set.
struct DecoupledResult {
  Vector theta;
  double tau = 0.0;
  double worst = 0.0;  // max_j (c_j - check_phi_j' theta)
};

inline DecoupledResult identify_multistep_decoupled(const HorizonData& h, const InflationConfig& cfg,
                                                    const LpOptions& lp = {}) {
  const int d = h.S.dim();
  const long n = h.S.size();
  require(h.set.dim() == d, "set dimension does not match the sample layout");
  require(h.sv.c.size() == 2 * n, "support values do not match the sample set");
  // variables (theta, t): c_j -/+ phi_j' theta <= t, plus the set rows
  Polytope P(d + 1);
  P.lower.head(d) = h.set.lower;
  P.upper.head(d) = h.set.upper;
  const double span = 1.0 + h.sv.c.cwiseAbs().maxCoeff();
  P.lower(d) = -1e3 * span;
  P.upper(d) = 1e3 * span;
  P.A = RowMatrix::Zero(2 * n + h.set.rows(), d + 1);
  P.b.resize(2 * n + h.set.rows());
  P.A.block(0, 0, n, d) = -h.S.rows;
  P.A.block(n, 0, n, d) = h.S.rows;
  P.A.block(0, d, 2 * n, 1).setConstant(-1.0);
  P.b.head(2 * n) = -h.sv.c;
  P.A.block(2 * n, 0, h.set.rows(), d) = h.set.A;
  P.b.tail(h.set.rows()) = h.set.b;
  SimplexSolver probe(h.set, lp);
  if (!probe.find_feasible()) throw InvalidInput("decoupled multi-step LP on an empty set");
  Vector hint(d + 1);
  hint.head(d) = probe.point();
  hint(d) = worst_deviation(h.S, h.sv, probe.point());
  Vector obj = Vector::Zero(d + 1);
  obj(d) = 1.0;
  const LpOutcome out = solve_lp(obj, Sense::minimize, P, lp, hint);
  if (out.status != LpStatus::optimal) throw NumericalError("decoupled multi-step LP did not reach an optimum");
  DecoupledResult r;
  r.theta = out.point.head(d);
  r.worst = worst_deviation(h.S, h.sv, r.theta);
  r.tau = tau_hat_from_support(h.S, h.sv, r.theta, h.eps, cfg);
  return r;
}

namespace detail {

// Row-normalized violation of theta_p against the refined set of one horizon.
inline double set_violation(const HorizonData& h, const Vector& theta) { return h.set.max_violation(theta); }

}  // namespace detail

struct Method1Options {
  int max_iterations = 100;
  double feasibility_tol = 1e-6;
  double initial_radius = 0.02;
  double min_radius = 1e-12;
};

/// max_p tau_p(h(theta_1, p, o)) and the largest refined-set violation.
struct Method1Value {
  double objective = 0.0;
  double violation = 0.0;
  std::vector<double> tau;
};

inline Method1Value method1_value(const Vector& theta1, const std::vector<HorizonData>& hs, int o,
                                  const InflationConfig& cfg) {
  const auto prop = propagate_all(theta1, o, static_cast<int>(hs.size()));
  Method1Value v;
  v.objective = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const double t = cfg.gamma * worst_deviation(hs[i].S, hs[i].sv, prop.theta[i]) + hs[i].eps;
    v.tau.push_back(t);
    v.objective = std::max(v.objective, t);
    v.violation = std::max(v.violation, detail::set_violation(hs[i], prop.theta[i]));
  }
  return v;
}

/// Trust-region sequential LP on the epigraph form of
///   min_theta1 max_p tau_p(h(theta_1, p, o))  s.t.  h(theta_1, p, o) in the refined set,
/// with an l-infinity penalty on the set constraints so that infeasible
/// starts are admissible.
inline NlpResult identify_method1(const std::vector<HorizonData>& hs, int o, const InflationConfig& cfg,
                                  const Vector& theta_init, const Method1Options& opt = {},
                                  const LpOptions& lp = {}) {
  require(!hs.empty(), "Method I needs at least one horizon");
  require(theta_init.size() == 2 * o, "start point must have dimension 2o");
  const int n = 2 * o;
  const int pbar = static_cast<int>(hs.size());
  Vector x = theta_init;
  Method1Value val = method1_value(x, hs, o, cfg);
  double M = 100.0 * std::max(1.0, val.objective);
  double radius = opt.initial_radius * std::max(1.0, x.lpNorm<Eigen::Infinity>());
  int it = 0;
  bool converged = false;
  for (; it < opt.max_iterations; ++it) {
    const auto prop = propagate_all(x, o, pbar, true);
    // epigraph rows e + E dx <= w and set rows s + F dx <= v
    double floor_w = -std::numeric_limits<double>::infinity();
    struct Row {
      double value;
      Eigen::RowVectorXd grad;
    };
    std::vector<Row> epi, con;
    for (int p = 1; p <= pbar; ++p) {
      const HorizonData& h = hs[static_cast<std::size_t>(p - 1)];
      const Vector& th = prop.theta[static_cast<std::size_t>(p - 1)];
      const Matrix& Jp = prop.jac[static_cast<std::size_t>(p - 1)];
      const long N = h.S.size();
      const Vector proj = h.S.rows * th;
      const Matrix Q = h.S.rows * Jp;
      for (long j = 0; j < N; ++j) {
        const double lo_w = cfg.gamma * (h.sv.c(j) - proj(j)) + h.eps;
        const double hi_w = cfg.gamma * (h.sv.c(N + j) + proj(j)) + h.eps;
        const double reach = cfg.gamma * Q.row(j).lpNorm<1>() * radius;
        floor_w = std::max(floor_w, std::max(lo_w, hi_w) - reach);
        epi.push_back({lo_w, -cfg.gamma * Q.row(j)});
        epi.push_back({hi_w, cfg.gamma * Q.row(j)});
      }
      for (long r = 0; r < h.set.rows(); ++r) {
        const Eigen::RowVectorXd a = h.set.A.row(r) * Jp;
        const double nrm = a.norm();
        if (nrm == 0.0) continue;
        con.push_back({(h.set.A.row(r).dot(th) - h.set.b(r)) / nrm, a / nrm});
      }
      for (int k = 0; k < h.S.dim(); ++k) {
        const Eigen::RowVectorXd a = Jp.row(k);
        const double nrm = a.norm();
        if (nrm == 0.0) continue;
        con.push_back({(th(k) - h.set.upper(k)) / nrm, a / nrm});
        con.push_back({(h.set.lower(k) - th(k)) / nrm, -a / nrm});
      }
    }
    double viol = 0.0;
    for (const Row& c : con) viol = std::max(viol, c.value);
    // rows that cannot become binding inside the trust region are dropped
    std::vector<const Row*> keep_e, keep_c;
    for (const Row& r : epi) {
      if (r.value + r.grad.lpNorm<1>() * radius >= floor_w - 1e-12) keep_e.push_back(&r);
    }
    for (const Row& r : con) {
      if (r.value + r.grad.lpNorm<1>() * radius > -1e-12) keep_c.push_back(&r);
    }
    // LP in (dx, w, v): min w + M v
    const long m = static_cast<long>(keep_e.size() + keep_c.size());
    Polytope P(n + 2);
    P.lower.head(n).setConstant(-radius);
    P.upper.head(n).setConstant(radius);
    const double wspan = 1e3 * (1.0 + std::abs(val.objective));
    P.lower(n) = -wspan;
    P.upper(n) = wspan;
    P.lower(n + 1) = 0.0;
    P.upper(n + 1) = std::max(1.0, 10.0 * viol);
    P.A = RowMatrix::Zero(m, n + 2);
    P.b.resize(m);
    long row = 0;
    for (const Row* r : keep_e) {
      P.A.block(row, 0, 1, n) = r->grad;
      P.A(row, n) = -1.0;
      P.b(row) = -r->value;
      ++row;
    }
    for (const Row* r : keep_c) {
      P.A.block(row, 0, 1, n) = r->grad;
      P.A(row, n + 1) = -1.0;
      P.b(row) = -r->value;
      ++row;
    }
    Vector hint = Vector::Zero(n + 2);
    hint(n) = val.objective;
    hint(n + 1) = viol;
    Vector obj = Vector::Zero(n + 2);
    obj(n) = 1.0;
    obj(n + 1) = M;
    const LpOutcome out = solve_lp(obj, Sense::minimize, P, lp, hint);
    if (out.status != LpStatus::optimal) throw NumericalError("Method I subproblem did not reach an optimum");
    const Vector dx = out.point.head(n);
    const double w = out.point(n);
    const double v = std::max(0.0, out.point(n + 1));
    const double merit = val.objective + M * viol;
    const double pred = merit - (w + M * v);
    if (pred <= 1e-12 * (1.0 + std::abs(merit)) || radius < opt.min_radius) {
      if (viol <= opt.feasibility_tol || M >= 1e12) {
        converged = pred <= 1e-12 * (1.0 + std::abs(merit));
        break;
      }
      M *= 10.0;
      continue;
    }
    const Vector xt = x + dx;
    const Method1Value vt = method1_value(xt, hs, o, cfg);
    const double ared = merit - (vt.objective + M * vt.violation);
    const double ratio = ared / pred;
    if (!(ratio >= 0.1)) {
      radius *= 0.25;
      continue;
    }
    if (ratio > 0.75 && dx.lpNorm<Eigen::Infinity>() >= 0.99 * radius) radius *= 2.0;
    x = xt;
    val = vt;
  }
  NlpResult res;
  res.x = x;
  res.diag.iterations = it;
  res.diag.objective = val.objective;
  res.diag.feasibility = val.violation;
  res.diag.converged = converged;
  return res;
}

/// Free-run least squares with theta_1 in the refined one-step set and
/// h(theta_1, p, o) in the decay box for p = 2..gamma_boxes.size() + 1.
inline NlpResult identify_method2(const IORecord& io, int o, const Polytope& set1,
                                  const std::vector<Polytope>& gamma_boxes, const Vector& theta_init,
                                  const NlpOptions& opt = {}) {
  require(theta_init.size() == 2 * o, "start point must have dimension 2o");
  require(set1.dim() == 2 * o, "one-step set has the wrong dimension");
  const int pmax = static_cast<int>(gamma_boxes.size()) + 1;
  LeastSquaresProgram prog;
  prog.n = 2 * o;
  prog.residual = [&](const Vector& th, Vector& r, Matrix* J) {
    const FreeRun fr = free_run(th, io, J != nullptr);
    if (!fr.zhat.allFinite()) return false;
    r.resize(fr.zhat.size());
    for (long i = 0; i < r.size(); ++i) r(i) = io.y[fr.first + static_cast<std::size_t>(i)] - fr.zhat(i);
    if (r.squaredNorm() > 1e200) return false;
    if (J) *J = -fr.jac;
    return true;
  };
  long rows = set1.rows() + 2 * set1.dim();
  for (const auto& g : gamma_boxes) rows += 2 * g.dim();
  prog.constraints = [&, rows](const Vector& th, Vector& g, RowMatrix* G) {
    g.resize(rows);
    if (G) G->setZero(rows, 2 * o);
    long r = 0;
    g.segment(r, set1.rows()) = set1.A * th - set1.b;
    if (G) G->middleRows(r, set1.rows()) = set1.A;
    r += set1.rows();
    for (int k = 0; k < set1.dim(); ++k) {
      g(r) = th(k) - set1.upper(k);
      g(r + 1) = set1.lower(k) - th(k);
      if (G) {
        (*G)(r, k) = 1.0;
        (*G)(r + 1, k) = -1.0;
      }
      r += 2;
    }
    if (pmax < 2) return;
    const auto prop = propagate_all(th, o, pmax, G != nullptr);
    for (int p = 2; p <= pmax; ++p) {
      const Polytope& box = gamma_boxes[static_cast<std::size_t>(p - 2)];
      const Vector& tp = prop.theta[static_cast<std::size_t>(p - 1)];
      require(box.dim() == tp.size(), "decay box has the wrong dimension");
      for (int k = 0; k < box.dim(); ++k) {
        g(r) = tp(k) - box.upper(k);
        g(r + 1) = box.lower(k) - tp(k);
        if (G) {
          G->row(r) = prop.jac[static_cast<std::size_t>(p - 1)].row(k);
          G->row(r + 1) = -prop.jac[static_cast<std::size_t>(p - 1)].row(k);
        }
        r += 2;
      }
    }
  };
  NlpResult res = solve_least_squares(prog, theta_init, opt);
  res.diag.objective = 2.0 * res.diag.objective;
  return res;
}

/// max over admissible k of |z(k+p) - theta_p' phi_p(k)| on the noise-free
/// channel of `io` (the measured channel when no true output is recorded).
inline double validation_error(const Vector& theta_p, const IORecord& io, int o, int p) {
  const SampleSet S =
      build_sample_set(io, o, p, io.has_true_output ? TargetChannel::noise_free : TargetChannel::measured);
  require(theta_p.size() == S.dim(), "parameter dimension does not match the horizon");
  return (S.targets - S.rows * theta_p).lpNorm<Eigen::Infinity>();
}

/// Zero-pads the order-n one-step parameters [a | b] to order o >= n.
inline Vector pad_one_step(const Vector& theta1, int o) {
  const int n = static_cast<int>(theta1.size() / 2);
  require(o >= n, "cannot pad to a smaller order");
  Vector out = Vector::Zero(2 * o);
  out.head(n) = theta1.head(n);
  out.segment(o, n) = theta1.tail(n);
  return out;
}

/// True p-step parameters theta_p^0 in the order-o layout for p = 1..p_max.
inline std::vector<Vector> true_parameter_series(const DiscreteSS& ss, int o, int p_max) {
  return propagate_all(pad_one_step(true_arx_parameters(ss), o), o, p_max).theta;
}

struct ContainmentResult {
  double factor = 1.0;
  std::vector<double> eps_hat;
  DecayBound decay;
  int steps = 0;
  std::vector<int> outside_before;  // horizons whose set missed theta_p^0 at factor 1
};

/// Enlarges the total residual radius eps_p + dbar and the decay constants
/// by `step` until theta_p^0 lies in every refined set, p = 1..sets.size().
inline ContainmentResult ensure_containment(const std::vector<SampleSet>& sets, const std::vector<double>& eps,
                                            double dbar, const DecayBound& decay,
                                            const std::vector<Vector>& truth, double step = 1.05,
                                            double cap = 10.0) {
  require(step > 1.0, "inflation step must be > 1");
  require(sets.size() == eps.size() && truth.size() >= sets.size(), "one bound and one true vector per horizon");
  ContainmentResult r;
  r.eps_hat = eps;
  r.decay = decay;
  auto outside = [&]() {
    std::vector<int> miss;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (!refined_fps(sets[i], r.eps_hat[i], dbar, r.decay).contains(truth[i], 1e-9))
        miss.push_back(static_cast<int>(i) + 1);
    }
    return miss;
  };
  r.outside_before = outside();
  if (r.outside_before.empty()) return r;
  while (true) {
    const double next = r.factor * step;
    if (next > cap * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "true parameters stay outside the refined sets up to inflation factor " << r.factor << " (cap "
          << cap << ")";
      throw NumericalError(msg.str());
    }
    r.factor = next;
    ++r.steps;
    for (std::size_t i = 0; i < eps.size(); ++i) r.eps_hat[i] = r.factor * (eps[i] + dbar) - dbar;
    r.decay.Lz = decay.Lz * r.factor;
    r.decay.Lu = decay.Lu * r.factor;
    if (outside().empty()) return r;
  }
}

}  // namespace smid
