#pragma once

// Data-driven estimation of the disturbance bound, the predictor order, the
// decay rate of the predictor parameters and the decay constants.

#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smid/sm_bounds.hpp"

namespace smid {

/// Lazily computed minimax residuals mu(o, p) of one identification record.
/// lambda(o, p, dbar) = max(0, mu(o, p) - dbar) for every dbar.
class MinimaxTable {
 public:
  explicit MinimaxTable(IORecord io, LpOptions lp = {}) : io_(std::move(io)), lp_(lp) {}

  const IORecord& record() const { return io_; }

  double get(int o, int p) {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = cache_.find({o, p});
      if (it != cache_.end()) return it->second;
    }
    const double mu = minimax_residual(build_sample_set(io_, o, p), lp_);
    std::lock_guard<std::mutex> lock(mutex_);
    cache_.emplace(std::make_pair(o, p), mu);
    return mu;
  }

  /// mu(o, p) for p = 1..p_hi, index 0 <-> p = 1.
  std::vector<double> series(int o, int p_hi, int threads = 0) {
    std::vector<double> out(static_cast<std::size_t>(p_hi));
    parallel_for(p_hi, [&](int i) { out[static_cast<std::size_t>(i)] = get(o, i + 1); }, threads);
    return out;
  }

  std::vector<double> lambda_series(int o, int p_hi, double dbar, int threads = 0) {
    auto mu = series(o, p_hi, threads);
    for (double& v : mu) v = lambda_from_minimax(v, dbar);
    return mu;
  }

 private:
  IORecord io_;
  LpOptions lp_;
  std::mutex mutex_;
  std::map<std::pair<int, int>, double> cache_;
};

struct ProcedureTrace {
  std::string kind;                         // "dbar" or "order"
  std::vector<double> grid;                 // tried values, in trial order
  std::vector<std::vector<double>> lambda;  // per trial, p = 1..lambda[i].size()
  double decision = 0.0;
  int pbar = 0;
  std::string note;
};

/// Ascending dbar candidates. When `refine_step` > 0 the interval between
/// the first qualifying value and its predecessor is rescanned with that step.
struct DbarGrid {
  std::vector<double> values;
  double refine_step = 0.0;

  /// 40 log-spaced points on [0.1 s, 2 s], refined with step 1e-3 s, where
  /// s is the standard deviation of the measured output.
  static DbarGrid around(double sigma_y, int points = 40) {
    require(sigma_y > 0.0, "output standard deviation must be positive");
    require(points >= 2, "grid needs at least two points");
    DbarGrid g;
    const double lo = std::log(0.1 * sigma_y), hi = std::log(2.0 * sigma_y);
    for (int i = 0; i < points; ++i) g.values.push_back(std::exp(lo + (hi - lo) * i / (points - 1)));
    g.refine_step = 1e-3 * sigma_y;
    return g;
  }

  void validate() const {
    require(!values.empty(), "dbar grid is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
      require(values[i] >= 0.0, "dbar grid values must be non-negative");
      require(i == 0 || values[i] > values[i - 1], "dbar grid must be strictly ascending");
    }
    require(refine_step >= 0.0, "refinement step must be non-negative");
  }
};

inline double output_std(const IORecord& io) {
  require(io.size() > 1, "record too short");
  const Eigen::Map<const Vector> y(io.y.data(), static_cast<long>(io.y.size()));
  return std::sqrt((y.array() - y.mean()).square().mean());
}

inline double output_scale(const IORecord& io) {
  double s = 0.0;
  for (double v : io.y) s = std::max(s, std::abs(v));
  return s;
}

/// Horizon ratio p_max / pbar.
inline constexpr double kTailFactor = 1.5;

inline int tail_end(int pbar) { return static_cast<int>(std::ceil(kTailFactor * pbar)); }

/// Smallest P with lambda_p <= tol on every p in (P, ceil(1.5 P)], the
/// window staying within the series. `lambda[0]` is p = 1.
inline std::optional<int> vanishing_horizon(const std::vector<double>& lambda, double tol) {
  const int n = static_cast<int>(lambda.size());
  for (int P = 1; tail_end(P) <= n; ++P) {
    const int hi = tail_end(P);
    if (hi <= P) continue;
    bool zero = true;
    for (int p = P + 1; p <= hi && zero; ++p) zero = lambda[static_cast<std::size_t>(p - 1)] <= tol;
    if (zero) return P;
  }
  return std::nullopt;
}

struct DbarEstimate {
  double dbar = 0.0;
  int pbar = 0;
  ProcedureTrace trace;
};

/// Raises dbar along the grid until lambda vanishes beyond some pbar.
inline DbarEstimate estimate_dbar(MinimaxTable& table, int o_init, const DbarGrid& grid, int max_horizon,
                                  int threads = 0) {
  grid.validate();
  require(o_init >= 1, "initial order must be >= 1");
  require(max_horizon >= 2, "horizon scan limit must be >= 2");
  const double tol = zero_tolerance(output_scale(table.record()));
  const auto mu = table.series(o_init, max_horizon, threads);
  DbarEstimate est;
  est.trace.kind = "dbar";
  auto attempt = [&](double d) -> std::optional<int> {
    std::vector<double> lam(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) lam[i] = lambda_from_minimax(mu[i], d);
    const auto P = vanishing_horizon(lam, tol);
    est.trace.grid.push_back(d);
    est.trace.lambda.push_back(std::move(lam));
    return P;
  };
  double prev = -1.0;
  for (double g : grid.values) {
    const auto P = attempt(g);
    if (!P) {
      prev = g;
      continue;
    }
    est.dbar = g;
    est.pbar = *P;
    if (grid.refine_step > 0.0 && prev >= 0.0) {
      for (double d = prev + grid.refine_step; d < g - 1e-15; d += grid.refine_step) {
        if (const auto Q = attempt(d)) {
          est.dbar = d;
          est.pbar = *Q;
          break;
        }
      }
    }
    est.trace.decision = est.dbar;
    est.trace.pbar = est.pbar;
    return est;
  }
  std::ostringstream msg;
  msg << "no dbar in the grid (largest " << grid.values.back() << ") makes lambda_p vanish beyond some pbar"
      << " with p <= " << max_horizon << "; extend the grid or the horizon limit";
  throw InvalidInput(msg.str());
}

struct OrderEstimate {
  int order = 0;
  ProcedureTrace trace;
};

/// Lowers the order from o_init while lambda_p stays zero on (pbar, ceil(1.5 pbar)].
inline OrderEstimate estimate_order(MinimaxTable& table, double dbar, int pbar, int o_init, int threads = 0) {
  require(o_init >= 1, "initial order must be >= 1");
  require(pbar >= 1, "pbar must be >= 1");
  const double tol = zero_tolerance(output_scale(table.record()));
  const int hi = tail_end(pbar);
  OrderEstimate est;
  est.trace.kind = "order";
  est.trace.pbar = pbar;
  auto tail_zero = [&](int o) {
    auto lam = table.lambda_series(o, hi, dbar, threads);
    bool zero = true;
    for (int p = pbar + 1; p <= hi; ++p) zero = zero && lam[static_cast<std::size_t>(p - 1)] <= tol;
    est.trace.grid.push_back(o);
    est.trace.lambda.push_back(std::move(lam));
    return zero;
  };
  if (!tail_zero(o_init)) {
    std::ostringstream msg;
    msg << "lambda_p does not vanish beyond pbar = " << pbar << " at the initial order " << o_init
        << "; the initial order is too small";
    throw InvalidInput(msg.str());
  }
  int o = o_init;
  while (o > 1 && tail_zero(o - 1)) --o;
  if (o == 1) est.trace.note = "order 1 already satisfies the test";
  est.order = o;
  est.trace.decision = o;
  return est;
}

struct DecayFit {
  double L = 0.0;
  double rho = 0.0;
  double objective = 0.0;
};

namespace detail {

// log L*(rho) = max_p (log f_p - p log rho) over positive entries
inline double log_envelope(const std::vector<double>& f, double rho) {
  const double lr = std::log(rho);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] > 0.0) best = std::max(best, std::log(f[i]) - static_cast<double>(i + 1) * lr);
  }
  return best;
}

inline double decay_objective(const std::vector<double>& f, double rho) {
  const double logL = log_envelope(f, rho);
  const double lr = std::log(rho);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double g = std::exp(logL + static_cast<double>(i + 1) * lr);
    s += (f[i] - g) * (f[i] - g);
  }
  return s;
}

}  // namespace detail

/// Tightest exponential envelope L rho^p >= f_p (p = 1..f.size()) in the
/// least-squares sense. For fixed rho the best L is the envelope value
/// max_p f_p rho^-p, so only rho is searched: a 1e-3 scan of (0, 1)
/// followed by golden-section refinement.
inline DecayFit fit_decay(const std::vector<double>& f, int pbar) {
  require(static_cast<int>(f.size()) > pbar, "the series must extend beyond pbar");
  bool any = false;
  for (double v : f) {
    require(v >= 0.0 && std::isfinite(v), "the series must be finite and non-negative");
    any = any || v > 0.0;
  }
  require(any, "an all-zero series has no decay rate");
  const double step = 1e-3;
  double best_rho = step, best = std::numeric_limits<double>::infinity();
  for (int k = 1; k < 1000; ++k) {
    const double rho = k * step;
    const double obj = detail::decay_objective(f, rho);
    if (obj < best) {
      best = obj;
      best_rho = rho;
    }
  }
  double a = std::max(best_rho - step, 1e-9), b = std::min(best_rho + step, 1.0 - 1e-12);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = detail::decay_objective(f, c), fd = detail::decay_objective(f, d);
  for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = detail::decay_objective(f, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = detail::decay_objective(f, d);
    }
  }
  double rho = 0.5 * (a + b);
  double obj = detail::decay_objective(f, rho);
  if (best < obj) {
    rho = best_rho;
    obj = best;
  }
  return {std::exp(detail::log_envelope(f, rho)), rho, obj};
}

namespace detail {

// max over p, theta in sets[p], i in [first, first + count) of theta(i)
inline double max_entry(const std::vector<Polytope>& sets, int first, int count, const LpOptions& lp,
                        int threads) {
  std::vector<double> best(sets.size(), -std::numeric_limits<double>::infinity());
  parallel_for(
      static_cast<int>(sets.size()),
      [&](int s) {
        const Polytope& poly = sets[static_cast<std::size_t>(s)];
        require(first + count <= poly.dim(), "parameter set is too small for the requested entries");
        RowMatrix obj = RowMatrix::Zero(count, poly.dim());
        for (int i = 0; i < count; ++i) obj(i, first + i) = 1.0;
        for (const auto& o : solve_lp_batch(obj, Sense::maximize, poly, lp)) {
          if (o.status == LpStatus::infeasible) throw InvalidInput("decay constant requested on an empty set");
          if (o.status != LpStatus::optimal) throw NumericalError("entry maximization did not reach an optimum");
          best[static_cast<std::size_t>(s)] = std::max(best[static_cast<std::size_t>(s)], o.value);
        }
      },
      threads);
  double m = -std::numeric_limits<double>::infinity();
  for (double v : best) m = std::max(m, v);
  return m;
}

}  // namespace detail

/// (max over p, theta in Theta_p, i = 1..o of theta(i)) / rho.
inline double estimate_Lz(const std::vector<Polytope>& sets, int o, double rho, const LpOptions& lp = {},
                          int threads = 0) {
  require(!sets.empty(), "no parameter sets given");
  require(rho > 0.0 && rho < 1.0, "decay rate must lie in (0, 1)");
  return detail::max_entry(sets, 0, o, lp, threads) / rho;
}

/// (max over p, theta in Theta_p, i = o+1..2o of theta(i)) / rho.
inline double estimate_Lu(const std::vector<Polytope>& sets, int o, double rho, const LpOptions& lp = {},
                          int threads = 0) {
  require(!sets.empty(), "no parameter sets given");
  require(rho > 0.0 && rho < 1.0, "decay rate must lie in (0, 1)");
  return detail::max_entry(sets, o, o, lp, threads) / rho;
}

}  // namespace smid
