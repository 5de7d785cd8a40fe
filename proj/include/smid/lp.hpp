#pragma once

// Dense revised simplex for LPs in inequality form
//
//     max c'x  s.t.  A x <= b,  lower <= x <= upper,
//
// run on the active-set (dual) side: a vertex is described by d active
// constraints whose normals form the d x d basis, so the cost per pivot is
// one m x d matrix-vector product plus O(d^2) basis-inverse updates. This
// suits the shapes met here (d <= a few hundred, m up to 10^5..10^6).
//
// Pricing is Dantzig with a Harris two-pass ratio test; after a streak of
// degenerate pivots the solver falls back to Bland's smallest-index rule
// until it makes progress again, which rules out cycling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "smid/polytope.hpp"
#include "smid/types.hpp"

namespace smid {

enum class LpStatus { optimal, infeasible, unbounded };
enum class Sense { minimize, maximize };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::optimal: return "optimal";
    case LpStatus::infeasible: return "infeasible";
    case LpStatus::unbounded: return "unbounded";
  }
  return "?";
}

struct LpOptions {
  double feasibility_tol = 1e-9;
  /// primal feasibility / dual residual / duality gap certificate
  double certificate_tol = 1e-7;
  double dual_tol = 1e-10;
  int refactor_interval = 64;
  int degenerate_streak = 32;
  long max_iterations = 0;  // 0: derived from the problem size
};

struct LpOutcome {
  LpStatus status = LpStatus::infeasible;
  Vector point;
  double value = std::numeric_limits<double>::quiet_NaN();
  long iterations = 0;
};

/// Row-normalized, immutable copy of a polytope. Shared by every solver
/// instance working on the same feasible set.
struct LpProblem {
  RowMatrix A;
  Vector b;
  Vector lower;
  Vector upper;
  bool contradictory = false;  // zero row with negative rhs or crossed bounds

  explicit LpProblem(const Polytope& poly, double tol = 1e-9)
      : A(poly.A), b(poly.b), lower(poly.lower), upper(poly.upper) {
    for (long i = 0; i < A.rows(); ++i) {
      const double n = A.row(i).norm();
      if (n > 0.0) {
        A.row(i) /= n;
        b(i) /= n;
      } else if (b(i) < -tol) {
        contradictory = true;
      } else {
        b(i) = std::numeric_limits<double>::infinity();  // 0 <= b: never binding
      }
    }
    for (long k = 0; k < lower.size(); ++k) {
      if (lower(k) > upper(k) + tol) contradictory = true;
    }
  }

  int dim() const { return static_cast<int>(lower.size()); }
  int rows() const { return static_cast<int>(A.rows()); }
};

class SimplexSolver {
 public:
  explicit SimplexSolver(std::shared_ptr<const LpProblem> problem, LpOptions options = {})
      : p_(std::move(problem)), opt_(options), d_(p_->dim()), m_(p_->rows()) {
    if (opt_.max_iterations <= 0) opt_.max_iterations = 20L * (m_ + 2L * d_) + 10000;
  }

  explicit SimplexSolver(const Polytope& poly, LpOptions options = {})
      : SimplexSolver(std::make_shared<const LpProblem>(poly, options.feasibility_tol), options) {}

  const LpProblem& problem() const { return *p_; }
  const Vector& point() const { return x_; }
  bool started() const { return started_; }

  /// Constraint ids of the current basis: row i < m, upper bound m + k,
  /// lower bound m + d + k, artificial -(k + 1).
  const std::vector<int>& basis() const { return active_; }

  /// Starts at the vertex `x` with the given basis (ids as in basis()).
  void start_with_basis(const Vector& x, const std::vector<int>& ids) {
    require(static_cast<int>(ids.size()) == d_, "basis size mismatch");
    start_at(x);
    n_art_ = 0;
    for (int pos = 0; pos < d_; ++pos) {
      const int id = ids[static_cast<std::size_t>(pos)];
      active_[static_cast<std::size_t>(pos)] = id;
      if (id < 0) {
        ++n_art_;
      } else {
        require(id < m_ + 2 * d_, "basis id out of range");
        in_active_[static_cast<std::size_t>(id)] = 1;
      }
    }
    refactor();
  }

  /// General rows (indices into A) held tight by the current basis.
  std::vector<int> basis_rows() const {
    std::vector<int> out;
    for (int id : active_) {
      if (is_general(id)) out.push_back(id);
    }
    return out;
  }

  /// Starts from `x` (clipped into the box) with every coordinate held by
  /// an artificial constraint. `x` must satisfy the rows within tolerance.
  void start_at(const Vector& x) {
    require(x.size() == d_, "start point dimension mismatch");
    x_ = x.cwiseMax(p_->lower).cwiseMin(p_->upper);
    art_rhs_ = x_;
    active_.resize(static_cast<std::size_t>(d_));
    for (int k = 0; k < d_; ++k) active_[static_cast<std::size_t>(k)] = -(k + 1);
    in_active_.assign(static_cast<std::size_t>(m_ + 2 * d_), 0);
    stuck_.assign(static_cast<std::size_t>(d_), 0);
    n_art_ = d_;
    Binv_ = Matrix::Identity(d_, d_);
    refresh_slacks();
    since_refactor_ = 0;
    started_ = true;
  }

  /// Phase 1: finds a feasible point (starting from `hint` when given) and
  /// starts there. Returns false when the feasible set is empty.
  bool find_feasible(const std::optional<Vector>& hint = std::nullopt) {
    if (p_->contradictory) return false;
    Vector x0 = hint ? *hint : Vector::Zero(d_);
    require(x0.size() == d_, "hint dimension mismatch");
    x0 = x0.cwiseMax(p_->lower).cwiseMin(p_->upper);
    double viol = 0.0;
    if (m_ > 0) viol = std::max(0.0, (p_->A * x0 - p_->b).maxCoeff());
    if (viol <= opt_.feasibility_tol) {
      start_at(x0);
      return true;
    }
    // min t  s.t.  a_i x - t <= b_i, box on x, 0 <= t <= 2 viol + 1
    Polytope ext(d_ + 1);
    ext.A.resize(m_, d_ + 1);
    ext.A.leftCols(d_) = p_->A;
    ext.A.col(d_).setConstant(-1.0);
    ext.b = p_->b;
    for (long i = 0; i < ext.b.size(); ++i) {
      if (!std::isfinite(ext.b(i))) {  // zero rows
        ext.A.row(i).setZero();
        ext.b(i) = 0.0;
      }
    }
    ext.lower.head(d_) = p_->lower;
    ext.upper.head(d_) = p_->upper;
    ext.lower(d_) = 0.0;
    ext.upper(d_) = 2.0 * viol + 1.0;
    SimplexSolver phase1(ext, opt_);
    Vector start(d_ + 1);
    start.head(d_) = x0;
    start(d_) = viol;
    phase1.start_at(start);
    Vector obj = Vector::Zero(d_ + 1);
    obj(d_) = 1.0;
    const LpOutcome out = phase1.solve(obj, Sense::minimize);
    if (out.status != LpStatus::optimal || out.value > opt_.feasibility_tol) return false;
    start_at(out.point.head(d_));
    return true;
  }

  /// Optimizes from the current vertex (warm start). Requires a prior
  /// start_at / find_feasible.
  LpOutcome solve(const Vector& objective, Sense sense) {
    require(started_, "solver has no starting point");
    require(objective.size() == d_, "objective dimension mismatch");
    const Vector c = sense == Sense::maximize ? objective : Vector(-objective);
    const double cscale = std::max(1.0, c.cwiseAbs().maxCoeff());
    const double ytol = opt_.dual_tol * cscale;
    LpOutcome out;
    long iter = 0;
    int degenerate = 0;
    bool bland = false;
    Vector y(d_), dir(d_), rates(m_);
    while (true) {
      if (iter > opt_.max_iterations) {
        throw NumericalError("simplex iteration limit reached");
      }
      if (since_refactor_ >= opt_.refactor_interval) refactor();
      y.noalias() = Binv_.transpose() * c;

      int q = -1;
      bool artificial = false;
      if (n_art_ > 0) {
        double best = -1.0;
        for (int pos = 0; pos < d_; ++pos) {
          if (active_[static_cast<std::size_t>(pos)] < 0 && !stuck_[static_cast<std::size_t>(pos)] &&
              std::abs(y(pos)) > best) {
            best = std::abs(y(pos));
            q = pos;
          }
        }
        artificial = q >= 0;
      }
      if (q < 0) {
        if (bland) {
          int best_id = std::numeric_limits<int>::max();
          for (int pos = 0; pos < d_; ++pos) {
            const int id = active_[static_cast<std::size_t>(pos)];
            if (id >= 0 && y(pos) < -ytol && id < best_id) {
              best_id = id;
              q = pos;
            }
          }
        } else {
          // steepest edge: the edge leaving position pos is Binv.col(pos)
          double most = 0.0;
          for (int pos = 0; pos < d_; ++pos) {
            if (active_[static_cast<std::size_t>(pos)] >= 0 && y(pos) < -ytol) {
              const double score = y(pos) / Binv_.col(pos).norm();
              if (score < most) {
                most = score;
                q = pos;
              }
            }
          }
        }
      }
      if (q < 0) {
        // Candidate optimum: refresh the factorization before certifying.
        if (since_refactor_ > 0) {
          refactor();
          continue;
        }
        bool revived = false;
        for (int pos = 0; pos < d_; ++pos) {
          auto& s = stuck_[static_cast<std::size_t>(pos)];
          if (s && active_[static_cast<std::size_t>(pos)] < 0 && std::abs(y(pos)) > ytol) {
            s = 0;
            revived = true;
          }
        }
        if (revived) continue;
        certify(c, y, cscale);
        out.status = LpStatus::optimal;
        out.point = x_;
        out.value = objective.dot(x_);
        out.iterations = iter;
        return out;
      }

      double sigma = -1.0;
      if (artificial) sigma = y(q) >= 0.0 ? 1.0 : -1.0;
      dir = sigma * Binv_.col(q);
      int enter = -1;
      double step = 0.0;
      ratio_test(dir, rates, bland, enter, step);
      if (artificial && std::abs(y(q)) <= ytol) {
        // Objective-neutral: take the nearer blocking constraint. A free
        // direction (e.g. the null space of rank-deficient data) only meets
        // the far box, so the coordinate keeps its artificial instead.
        Vector back = -dir, back_rates(m_);
        int back_enter = -1;
        double back_step = 0.0;
        ratio_test(back, back_rates, bland, back_enter, back_step);
        if (back_enter >= 0 && (enter < 0 || back_step < step)) {
          dir = back;
          rates = back_rates;
          enter = back_enter;
          step = back_step;
        }
        const double reach = step * dir.cwiseAbs().maxCoeff();
        if (enter < 0 || reach > kFarStep * (1.0 + x_.cwiseAbs().maxCoeff())) {
          stuck_[static_cast<std::size_t>(q)] = 1;
          ++iter;
          continue;
        }
      } else if (enter < 0 && artificial) {
        out.status = LpStatus::unbounded;
        out.point = x_;
        out.iterations = iter;
        return out;
      } else if (enter < 0) {
        out.status = LpStatus::unbounded;
        out.point = x_;
        out.iterations = iter;
        return out;
      }

      const double dnorm = dir.cwiseAbs().maxCoeff();
      if (step * dnorm <= 1e-13) {
        if (++degenerate >= opt_.degenerate_streak) bland = true;
      } else {
        degenerate = 0;
        bland = false;
      }
      pivot(q, enter, step, dir, rates);
      ++iter;
    }
  }

 private:
  // relative step length treated as "reaching the Omega box"
  static constexpr double kFarStep = 1e8;

  bool is_general(int id) const { return id >= 0 && id < m_; }

  double row_dot(int id, const Vector& v) const {
    if (id < 0) return v(-id - 1);
    if (id < m_) return p_->A.row(id).dot(v);
    if (id < m_ + d_) return v(id - m_);
    return -v(id - m_ - d_);
  }

  double rhs(int id) const {
    if (id < 0) return art_rhs_(-id - 1);
    if (id < m_) return p_->b(id);
    if (id < m_ + d_) return p_->upper(id - m_);
    return -p_->lower(id - m_ - d_);
  }

  template <class Row>
  void row_into(int id, Row&& out) const {
    out.setZero();
    if (id < 0) {
      out(-id - 1) = 1.0;
    } else if (id < m_) {
      out = p_->A.row(id);
    } else if (id < m_ + d_) {
      out(id - m_) = 1.0;
    } else {
      out(id - m_ - d_) = -1.0;
    }
  }

  void refresh_slacks() {
    if (m_ > 0) slack_.noalias() = p_->b - p_->A * x_;
    for (long i = 0; i < m_; ++i) {
      if (!std::isfinite(slack_(i))) slack_(i) = std::numeric_limits<double>::infinity();
    }
  }

  void refactor() {
    Matrix B(d_, d_);
    Vector r(d_);
    for (int pos = 0; pos < d_; ++pos) {
      const int id = active_[static_cast<std::size_t>(pos)];
      row_into(id, B.row(pos));
      r(pos) = rhs(id);
    }
    Eigen::PartialPivLU<Matrix> lu(B);
    Binv_ = lu.inverse();
    if (!Binv_.allFinite()) throw NumericalError("simplex basis became singular");
    Vector xr = Binv_ * r;
    // one step of iterative refinement
    xr += Binv_ * (r - B * xr);
    x_ = xr;
    refresh_slacks();
    since_refactor_ = 0;
  }

  // Harris two-pass ratio test (Bland: smallest index among minimal ratios).
  void ratio_test(const Vector& dir, Vector& rates, bool bland, int& enter, double& step) const {
    const double rtol = 1e-9 * std::max(1.0, dir.cwiseAbs().maxCoeff());
    if (m_ > 0) rates.noalias() = p_->A * dir;
    const double ftol = opt_.feasibility_tol;
    auto slack_of = [&](int id) -> double {
      if (id < m_) return slack_(id);
      if (id < m_ + d_) return p_->upper(id - m_) - x_(id - m_);
      return x_(id - m_ - d_) - p_->lower(id - m_ - d_);
    };
    auto rate_of = [&](int id) -> double {
      if (id < m_) return rates(id);
      if (id < m_ + d_) return dir(id - m_);
      return -dir(id - m_ - d_);
    };
    auto bound_finite = [&](int id) -> bool {
      if (id < m_) return std::isfinite(slack_(id));
      if (id < m_ + d_) return std::isfinite(p_->upper(id - m_));
      return std::isfinite(p_->lower(id - m_ - d_));
    };
    const int total = m_ + 2 * d_;
    enter = -1;
    step = 0.0;
    double limit = std::numeric_limits<double>::infinity();
    for (int id = 0; id < total; ++id) {
      if (in_active_[static_cast<std::size_t>(id)]) continue;
      const double r = rate_of(id);
      if (r <= rtol || !bound_finite(id)) continue;
      const double s = std::max(slack_of(id), 0.0);
      const double t = bland ? s / r : (s + ftol) / r;
      if (t < limit) limit = t;
    }
    if (!std::isfinite(limit)) return;
    double best_rate = 0.0;
    const double cut = bland ? limit * (1.0 + 1e-12) + 1e-300 : limit;
    for (int id = 0; id < total; ++id) {
      if (in_active_[static_cast<std::size_t>(id)]) continue;
      const double r = rate_of(id);
      if (r <= rtol || !bound_finite(id)) continue;
      const double s = std::max(slack_of(id), 0.0);
      if (s / r > cut) continue;
      if (bland) {
        enter = id;
        break;
      }
      if (r > best_rate) {
        best_rate = r;
        enter = id;
      }
    }
    if (enter >= 0) step = std::max(slack_of(enter), 0.0) / rate_of(enter);
  }

  void pivot(int q, int enter, double step, const Vector& dir, const Vector& rates) {
    x_ += step * dir;
    if (m_ > 0) slack_ -= step * rates;
    if (enter < m_) slack_(enter) = 0.0;

    Vector& w = work_col_;
    Eigen::RowVectorXd& v = work_row_;
    w = Binv_.col(q);
    if (enter < m_) {
      v.noalias() = p_->A.row(enter) * Binv_;
    } else if (enter < m_ + d_) {
      v = Binv_.row(enter - m_);
    } else {
      v = -Binv_.row(enter - m_ - d_);
    }
    const double piv = v(q);
    const int old = active_[static_cast<std::size_t>(q)];
    if (old < 0) {
      --n_art_;
    } else {
      in_active_[static_cast<std::size_t>(old)] = 0;
    }
    active_[static_cast<std::size_t>(q)] = enter;
    in_active_[static_cast<std::size_t>(enter)] = 1;
    if (std::abs(piv) < 1e-11) {
      refactor();
      return;
    }
    v(q) -= 1.0;
    Binv_.noalias() -= (w / piv) * v;
    ++since_refactor_;
  }

  void certify(const Vector& c, const Vector& y, double cscale) const {
    const double tol = opt_.certificate_tol;
    double primal = 0.0;
    for (long i = 0; i < m_; ++i) primal = std::max(primal, -slack_(i));
    for (int k = 0; k < d_; ++k) {
      primal = std::max(primal, x_(k) - p_->upper(k));
      primal = std::max(primal, p_->lower(k) - x_(k));
    }
    Vector resid = -c;
    double dual_obj = 0.0;
    Eigen::RowVectorXd row(d_);
    for (int pos = 0; pos < d_; ++pos) {
      const int id = active_[static_cast<std::size_t>(pos)];
      row_into(id, row);
      resid += y(pos) * row.transpose();
      dual_obj += y(pos) * rhs(id);
    }
    const double primal_obj = c.dot(x_);
    const double gap = std::abs(primal_obj - dual_obj);
    const double dual_res = resid.cwiseAbs().maxCoeff();
    if (primal > tol * std::max(1.0, x_.cwiseAbs().maxCoeff() * 1e-6) ||
        dual_res > tol * cscale || gap > tol * (1.0 + std::abs(primal_obj))) {
      std::ostringstream msg;
      msg << "LP optimality certificate failed: primal violation " << primal << ", dual residual "
          << dual_res << ", duality gap " << gap;
      throw NumericalError(msg.str());
    }
  }

  std::shared_ptr<const LpProblem> p_;
  LpOptions opt_;
  int d_;
  int m_;
  bool started_ = false;
  Vector x_;
  Vector slack_;
  Vector art_rhs_;
  std::vector<int> active_;
  std::vector<char> in_active_;
  std::vector<char> stuck_;
  int n_art_ = 0;
  Matrix Binv_;
  int since_refactor_ = 0;
  Vector work_col_;
  Eigen::RowVectorXd work_row_;
};

inline LpOutcome solve_lp(const Vector& objective, Sense sense, const Polytope& poly,
                          const LpOptions& options = {},
                          const std::optional<Vector>& hint = std::nullopt) {
  require(poly.dim() >= 1, "LP needs at least one variable");
  require(objective.size() == poly.dim(), "objective dimension mismatch");
  SimplexSolver solver(poly, options);
  if (!solver.find_feasible(hint)) {
    LpOutcome out;
    out.status = LpStatus::infeasible;
    return out;
  }
  return solver.solve(objective, sense);
}

inline bool is_empty(const Polytope& poly, const LpOptions& options = {}) {
  if (poly.dim() == 0) return false;
  SimplexSolver solver(poly, options);
  return !solver.find_feasible();
}

/// Runs `task(i)` for i in [0, n) over a small thread pool. Tasks must be
/// independent; results therefore do not depend on the schedule.
template <class Fn>
void parallel_for(int n, Fn&& task, int threads = 0) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n && !failed; i = next++) {
        try {
          task(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Solves one LP per objective row over the same polytope. Objectives are
/// processed in fixed-size chunks; each chunk warm-starts along its rows
/// from a common feasible vertex, so results are identical for any thread
/// count.
inline std::vector<LpOutcome> solve_lp_batch(const RowMatrix& objectives, Sense sense,
                                             const Polytope& poly, const LpOptions& options = {},
                                             const std::optional<Vector>& hint = std::nullopt,
                                             int chunk = 512) {
  require(objectives.cols() == poly.dim(), "objective dimension mismatch");
  const int n = static_cast<int>(objectives.rows());
  std::vector<LpOutcome> out(static_cast<std::size_t>(n));
  if (n == 0) return out;
  SimplexSolver base(poly, options);
  if (!base.find_feasible(hint)) {
    for (auto& o : out) o.status = LpStatus::infeasible;
    return out;
  }
  const int chunks = (n + chunk - 1) / chunk;
  parallel_for(chunks, [&](int c) {
    SimplexSolver solver = base;
    const int begin = c * chunk;
    const int end = std::min(n, begin + chunk);
    for (int i = begin; i < end; ++i) {
      out[static_cast<std::size_t>(i)] = solver.solve(objectives.row(i).transpose(), sense);
    }
  });
  return out;
}

inline std::vector<LpOutcome> solve_lp_batch(const std::vector<Vector>& objectives, Sense sense,
                                             const Polytope& poly, const LpOptions& options = {}) {
  RowMatrix rows(static_cast<long>(objectives.size()), poly.dim());
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    require(objectives[i].size() == poly.dim(), "objective dimension mismatch");
    rows.row(static_cast<long>(i)) = objectives[i].transpose();
  }
  return solve_lp_batch(rows, sense, poly, options);
}

namespace detail {

// Greedy nearest-neighbour chain over the row directions, starting at row 0,
// so that consecutive warm starts see similar objectives.
inline std::vector<int> similarity_order(const RowMatrix& rows) {
  const int m = static_cast<int>(rows.rows());
  RowMatrix unit = rows;
  for (int i = 0; i < m; ++i) {
    const double n = unit.row(i).norm();
    if (n > 0.0) unit.row(i) /= n;
  }
  std::vector<int> order;
  std::vector<char> used(static_cast<std::size_t>(m), 0);
  Vector sim(m);
  int cur = 0;
  for (int k = 0; k < m; ++k) {
    order.push_back(cur);
    used[static_cast<std::size_t>(cur)] = 1;
    sim.noalias() = unit * unit.row(cur).transpose();
    int next = -1;
    double best = -2.0;
    for (int i = 0; i < m; ++i) {
      if (!used[static_cast<std::size_t>(i)] && sim(i) > best) {
        best = sim(i);
        next = i;
      }
    }
    cur = next;
  }
  return order;
}

}  // namespace detail

/// max of a_i' x over the polytope for every one of its own rows a_i.
///
/// Same values as solve_lp_batch(poly.A, maximize, poly), much cheaper:
///  - the LPs run over a working set of rows; an optimum that satisfies every
///    row is optimal for the polytope, otherwise the violated rows join the
///    working set and the solve restarts from the last vertex of the polytope;
///  - a row tight at an optimal vertex attains its bound b_i;
///  - a row whose maximum stays below b_i is redundant and leaves the problem.
/// The next objective is the pending row with the least slack at the current
/// vertex. Sequential and deterministic. Throws InvalidInput when the
/// polytope is empty.
inline Vector row_support(const Polytope& poly, const LpOptions& options = {},
                          const std::optional<Vector>& hint = std::nullopt) {
  constexpr int kAddPerRestart = 16;
  const int m = poly.rows(), d = poly.dim();
  Vector value = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
  if (m == 0) return value;
  const LpProblem full(poly, options.feasibility_tol);
  if (full.contradictory) throw InvalidInput("support values requested on an empty set");
  std::vector<char> done(static_cast<std::size_t>(m), 0), dropped(static_cast<std::size_t>(m), 0);
  std::vector<char> in_work(static_cast<std::size_t>(m), 0);
  std::vector<int> work;  // working rows, indices into poly
  for (int i = 0; i < m; ++i) {
    if (!std::isfinite(full.b(i))) {  // zero row
      value(i) = 0.0;
      done[static_cast<std::size_t>(i)] = 1;
      dropped[static_cast<std::size_t>(i)] = 1;
    }
  }

  auto build = [&]() {
    Polytope sub(d);
    sub.lower = poly.lower;
    sub.upper = poly.upper;
    sub.A.resize(static_cast<long>(work.size()), d);
    sub.b.resize(static_cast<long>(work.size()));
    for (std::size_t r = 0; r < work.size(); ++r) {
      sub.A.row(static_cast<long>(r)) = poly.A.row(work[r]);
      sub.b(static_cast<long>(r)) = poly.b(work[r]);
    }
    return SimplexSolver(sub, options);
  };
  // basis ids over `rows` rewritten for the current working set
  auto remap = [&](const std::vector<int>& ids, const std::vector<int>& rows) {
    std::vector<int> pos_of(static_cast<std::size_t>(m), -1);
    for (std::size_t r = 0; r < work.size(); ++r) pos_of[static_cast<std::size_t>(work[r])] = static_cast<int>(r);
    const int m_old = static_cast<int>(rows.size()), m_new = static_cast<int>(work.size());
    std::vector<int> out;
    for (int id : ids) {
      if (id < 0) {
        out.push_back(id);
      } else if (id < m_old) {
        out.push_back(pos_of[static_cast<std::size_t>(rows[static_cast<std::size_t>(id)])]);
      } else {
        out.push_back(id - m_old + m_new);
      }
    }
    return out;
  };

  SimplexSolver probe(poly, options);
  if (!probe.find_feasible(hint)) throw InvalidInput("support values requested on an empty set");
  Vector x = probe.point();
  SimplexSolver solver = build();
  solver.start_at(x);
  std::vector<int> basis = solver.basis();
  const double ftol = options.feasibility_tol;
  Vector slack(m);

  while (true) {
    slack.noalias() = full.b - full.A * x;
    int i = -1;
    double least = std::numeric_limits<double>::infinity();
    for (int k = 0; k < m; ++k) {
      if (!done[static_cast<std::size_t>(k)] && slack(k) < least) {
        least = slack(k);
        i = k;
      }
    }
    if (i < 0) break;
    LpOutcome out;
    while (true) {
      out = solver.solve(poly.A.row(i).transpose(), Sense::maximize);
      if (out.status != LpStatus::optimal) throw NumericalError("support LP did not reach an optimum");
      slack.noalias() = full.b - full.A * out.point;
      std::vector<int> add;
      for (int k = 0; k < m; ++k) {
        if (!dropped[static_cast<std::size_t>(k)] && !in_work[static_cast<std::size_t>(k)] && slack(k) < -ftol)
          add.push_back(k);
      }
      if (add.empty()) break;
      // Restart from the last vertex of the polytope with the most violated
      // rows added and the known redundant ones (outside the basis) removed.
      if (static_cast<int>(add.size()) > kAddPerRestart) {
        std::partial_sort(add.begin(), add.begin() + kAddPerRestart, add.end(),
                          [&](int a, int b) { return slack(a) < slack(b) || (slack(a) == slack(b) && a < b); });
        add.resize(kAddPerRestart);
      }
      const std::vector<int> rows = work;
      std::vector<char> in_basis(static_cast<std::size_t>(m), 0);
      for (int id : basis) {
        if (id >= 0 && id < static_cast<int>(rows.size())) in_basis[static_cast<std::size_t>(rows[static_cast<std::size_t>(id)])] = 1;
      }
      work.clear();
      for (int k : rows) {
        if (dropped[static_cast<std::size_t>(k)] && !in_basis[static_cast<std::size_t>(k)]) {
          in_work[static_cast<std::size_t>(k)] = 0;
        } else {
          work.push_back(k);
        }
      }
      for (int k : add) {
        work.push_back(k);
        in_work[static_cast<std::size_t>(k)] = 1;
      }
      basis = remap(basis, rows);
      solver = build();
      solver.start_with_basis(x, basis);
    }
    x = out.point;
    value(i) = out.value;
    done[static_cast<std::size_t>(i)] = 1;
    for (int r : solver.basis_rows()) {
      const int k = work[static_cast<std::size_t>(r)];
      if (!done[static_cast<std::size_t>(k)]) {
        value(k) = poly.b(k);
        done[static_cast<std::size_t>(k)] = 1;
      }
    }
    if (out.value < poly.b(i) - 1e-6 * (poly.A.row(i).norm() + std::abs(poly.b(i)))) dropped[static_cast<std::size_t>(i)] = 1;
    basis = solver.basis();
  }
  return value;
}

}  // namespace smid
