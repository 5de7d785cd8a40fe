#pragma once

// Brute-force references used by the test suites and the acceptance run.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "smid/predictors.hpp"

namespace smid::oracle {

/// All vertices of a small polytope (box bounds included as rows), found
/// by solving every d-subset of constraints.
inline std::vector<Vector> vertices(const Polytope& poly, double tol = 1e-9) {
  const int d = poly.dim();
  const int m = poly.rows();
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int i = 0; i < m; ++i) {
    rows.push_back(poly.A.row(i));
    rhs.push_back(poly.b(i));
  }
  for (int k = 0; k < d; ++k) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(d);
    e(k) = 1.0;
    rows.push_back(e);
    rhs.push_back(poly.upper(k));
    rows.push_back(-e);
    rhs.push_back(-poly.lower(k));
  }
  const int total = static_cast<int>(rows.size());
  std::vector<Vector> out;
  std::vector<int> pick(d);
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == d) {
      Matrix B(d, d);
      Vector r(d);
      for (int j = 0; j < d; ++j) {
        B.row(j) = rows[pick[j]];
        r(j) = rhs[pick[j]];
      }
      Eigen::FullPivLU<Matrix> lu(B);
      if (lu.rank() < d) return;
      const Vector x = lu.solve(r);
      if (poly.max_violation(x) <= tol * (1.0 + x.cwiseAbs().maxCoeff())) out.push_back(x);
      return;
    }
    for (int i = start; i < total; ++i) {
      pick[depth] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return out;
}

/// max c'x over the vertex list; nullopt when the polytope is empty.
inline std::optional<double> max_over_vertices(const Polytope& poly, const Vector& c) {
  const auto vs = vertices(poly);
  if (vs.empty()) return std::nullopt;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& v : vs) best = std::max(best, c.dot(v));
  return best;
}

/// p-step prediction by literally iterating the one-step model from k.
inline double iterate_prediction(const Vector& theta1, const std::vector<double>& y, const std::vector<double>& u,
                                 std::size_t k, int p) {
  const int o = static_cast<int>(theta1.size() / 2);
  std::vector<double> v(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(k + 1));
  for (int j = 1; j <= p; ++j) {
    const std::size_t t = k + static_cast<std::size_t>(j);
    double z = 0.0;
    for (int i = 1; i <= o; ++i) z += theta1(i - 1) * v[t - i] + theta1(o + i - 1) * u[t - i];
    v.push_back(z);
  }
  return v.back();
}

/// [y(k) .. y(k-o+1) | u(k+p-1) .. u(k-o+1)]
inline Vector regressor(const std::vector<double>& y, const std::vector<double>& u, std::size_t k, int o, int p) {
  Vector phi(2 * o + p - 1);
  for (int j = 0; j < o; ++j) phi(j) = y[k - j];
  for (int j = 0; j < o + p - 1; ++j) phi(o + j) = u[k + p - 1 - j];
  return phi;
}

/// sum_p (f_p - L rho^p)^2 with L the smallest envelope, no logarithms.
inline double decay_objective(const std::vector<double>& f, double rho) {
  double L = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) L = std::max(L, f[i] / std::pow(rho, static_cast<double>(i + 1)));
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double g = L * std::pow(rho, static_cast<double>(i + 1));
    s += (f[i] - g) * (f[i] - g);
  }
  return s;
}

/// min over the set of max_j (c_j - check_phi_j' theta), by enumerating the
/// vertices of the epigraph in (theta, t).
inline std::optional<double> decoupled_by_vertices(const HorizonData& h, double t_bound = 50.0) {
  const int d = h.S.dim();
  const long n = h.S.size();
  Polytope epi(d + 1, t_bound);
  epi.lower.head(d) = h.set.lower;
  epi.upper.head(d) = h.set.upper;
  epi.A = RowMatrix::Zero(2 * n + h.set.rows(), d + 1);
  epi.b.resize(2 * n + h.set.rows());
  for (long j = 0; j < n; ++j) {
    epi.A.block(j, 0, 1, d) = -h.S.rows.row(j);
    epi.A.block(n + j, 0, 1, d) = h.S.rows.row(j);
    epi.A(j, d) = epi.A(n + j, d) = -1.0;
    epi.b(j) = -h.sv.c(j);
    epi.b(n + j) = -h.sv.c(n + j);
  }
  epi.A.block(2 * n, 0, h.set.rows(), d) = h.set.A;
  epi.b.tail(h.set.rows()) = h.set.b;
  Vector c = Vector::Zero(d + 1);
  c(d) = -1.0;
  const auto best = max_over_vertices(epi, c);
  if (!best) return std::nullopt;
  return -*best;
}

}  // namespace smid::oracle
