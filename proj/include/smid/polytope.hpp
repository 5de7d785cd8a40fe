#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "smid/types.hpp"

namespace smid {

/// Compact approximation of R^d used wherever a parameter set would
/// otherwise be unbounded.
inline constexpr double kOmegaBound = 1e15;

/// Halfspace polytope {x : A x <= b, lower <= x <= upper}. Rows may be
/// absent (box only); bounds may be +-infinity but every LP in this
/// library keeps them finite.
struct Polytope {
  RowMatrix A;
  Vector b;
  Vector lower;
  Vector upper;

  Polytope() = default;

  explicit Polytope(int d, double omega = kOmegaBound)
      : A(0, d), b(0), lower(Vector::Constant(d, -omega)), upper(Vector::Constant(d, omega)) {}

  static Polytope box(const Vector& lo, const Vector& hi) {
    require(lo.size() == hi.size(), "box bounds have different dimensions");
    Polytope p(static_cast<int>(lo.size()));
    p.lower = lo;
    p.upper = hi;
    return p;
  }

  int dim() const { return static_cast<int>(lower.size()); }
  int rows() const { return static_cast<int>(A.rows()); }

  /// Largest violation over rows and bounds; rows are measured in
  /// Euclidean distance (row-normalized).
  double max_violation(const Vector& x) const {
    require(x.size() == dim(), "point dimension mismatch");
    double worst = 0.0;
    if (rows() > 0) {
      const Vector r = A * x - b;
      for (int i = 0; i < rows(); ++i) {
        const double n = A.row(i).norm();
        const double v = n > 0.0 ? r(i) / n : r(i);
        worst = std::max(worst, v);
      }
    }
    for (int k = 0; k < dim(); ++k) {
      worst = std::max(worst, x(k) - upper(k));
      worst = std::max(worst, lower(k) - x(k));
    }
    return worst;
  }

  bool contains(const Vector& x, double tol = 1e-9) const { return max_violation(x) <= tol; }

  /// Appends the two rows encoding |target - row . x| <= radius.
  void add_abs_constraints(const RowMatrix& rows_in, const Vector& targets, const Vector& radius) {
    require(rows_in.cols() == dim(), "constraint rows have the wrong dimension");
    require(targets.size() == rows_in.rows() && radius.size() == rows_in.rows(),
            "constraint targets/radius size mismatch");
    const long m0 = A.rows();
    const long k = rows_in.rows();
    RowMatrix A2(m0 + 2 * k, dim());
    Vector b2(m0 + 2 * k);
    A2.topRows(m0) = A;
    b2.head(m0) = b;
    A2.middleRows(m0, k) = rows_in;
    b2.segment(m0, k) = targets + radius;
    A2.bottomRows(k) = -rows_in;
    b2.tail(k) = radius - targets;
    A = std::move(A2);
    b = std::move(b2);
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a(A.data(), sizeof(double) * static_cast<std::size_t>(A.size()));
    h = fnv1a(b.data(), sizeof(double) * static_cast<std::size_t>(b.size()), h);
    h = fnv1a(lower.data(), sizeof(double) * static_cast<std::size_t>(lower.size()), h);
    return fnv1a(upper.data(), sizeof(double) * static_cast<std::size_t>(upper.size()), h);
  }
};

/// Rows are concatenated, boxes intersected componentwise.
inline Polytope intersect(const Polytope& p1, const Polytope& p2) {
  require(p1.dim() == p2.dim(), "cannot intersect polytopes of different dimension");
  Polytope out(p1.dim());
  out.A.resize(p1.rows() + p2.rows(), p1.dim());
  out.b.resize(p1.rows() + p2.rows());
  out.A.topRows(p1.rows()) = p1.A;
  out.A.bottomRows(p2.rows()) = p2.A;
  out.b.head(p1.rows()) = p1.b;
  out.b.tail(p2.rows()) = p2.b;
  out.lower = p1.lower.cwiseMax(p2.lower);
  out.upper = p1.upper.cwiseMin(p2.upper);
  return out;
}

}  // namespace smid
