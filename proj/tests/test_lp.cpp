#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "smid/lp.hpp"

using namespace smid;

namespace {

Polytope interval_box(int d, double lo, double hi) {
  return Polytope::box(Vector::Constant(d, lo), Vector::Constant(d, hi));
}

Polytope random_polytope(std::mt19937_64& rng, bool allow_empty) {
  std::uniform_int_distribution<int> dim(1, 4), rows(0, 8);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), margin(0.05, 2.0), width(0.5, 10.0);
  const int d = dim(rng);
  const int m = rows(rng);
  Polytope p(d);
  for (int k = 0; k < d; ++k) {
    p.lower(k) = -width(rng);
    p.upper(k) = width(rng);
  }
  Vector center(d);
  for (int k = 0; k < d; ++k) center(k) = 0.5 * (p.lower(k) + p.upper(k));
  p.A.resize(m, d);
  p.b.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < d; ++k) p.A(i, k) = unit(rng);
    p.b(i) = p.A.row(i).dot(center) + (allow_empty ? 3.0 * unit(rng) : margin(rng));
  }
  return p;
}

}  // namespace

TEST(SolveLp, SingleUpperBound) {
  Polytope p = interval_box(1, -10, 10);
  p.A.resize(1, 1);
  p.A << 1.0;
  p.b.resize(1);
  p.b << 1.0;
  const auto out = solve_lp(Vector::Ones(1), Sense::maximize, p);
  ASSERT_EQ(out.status, LpStatus::optimal);
  EXPECT_NEAR(out.value, 1.0, 1e-12);
  EXPECT_NEAR(out.point(0), 1.0, 1e-12);
}

TEST(SolveLp, BoxCorner) {
  const Polytope p = interval_box(2, -1, 1);
  const auto out = solve_lp(Vector::Ones(2), Sense::maximize, p);
  ASSERT_EQ(out.status, LpStatus::optimal);
  EXPECT_NEAR(out.value, 2.0, 1e-12);
  EXPECT_NEAR(out.point(0), 1.0, 1e-12);
  EXPECT_NEAR(out.point(1), 1.0, 1e-12);
}

TEST(SolveLp, SimplexVertexMatchesEnumeration) {
  // max 3x + 2y  s.t. x + y <= 1, x, y >= 0
  Polytope p = interval_box(2, 0, 100);
  p.A.resize(1, 2);
  p.A << 1.0, 1.0;
  p.b.resize(1);
  p.b << 1.0;
  Vector c(2);
  c << 3.0, 2.0;
  const auto oracle_value = oracle::max_over_vertices(p, c);
  ASSERT_TRUE(oracle_value.has_value());
  EXPECT_NEAR(*oracle_value, 3.0, 1e-12);
  const auto out = solve_lp(c, Sense::maximize, p);
  ASSERT_EQ(out.status, LpStatus::optimal);
  EXPECT_NEAR(out.value, *oracle_value, 1e-9);
  EXPECT_NEAR(out.point(0), 1.0, 1e-9);
  EXPECT_NEAR(out.point(1), 0.0, 1e-9);
}

TEST(SolveLp, MinimizeIsNegatedMaximize) {
  Polytope p = interval_box(2, -3, 2);
  Vector c(2);
  c << 1.0, -2.0;
  const auto lo = solve_lp(c, Sense::minimize, p);
  ASSERT_EQ(lo.status, LpStatus::optimal);
  EXPECT_NEAR(lo.value, -3.0 - 4.0, 1e-12);
}

TEST(SolveLp, InfeasibleIsAStatusNotAnException) {
  Polytope p = interval_box(1, -10, 10);
  p.A.resize(2, 1);
  p.A << 1.0, -1.0;
  p.b.resize(2);
  p.b << 0.0, -1.0;  // x <= 0 and x >= 1
  LpOutcome out;
  EXPECT_NO_THROW(out = solve_lp(Vector::Ones(1), Sense::maximize, p));
  EXPECT_EQ(out.status, LpStatus::infeasible);
}

TEST(SolveLp, UnboundedWithoutBox) {
  Polytope p(1, std::numeric_limits<double>::infinity());
  const auto out = solve_lp(Vector::Ones(1), Sense::maximize, p);
  EXPECT_EQ(out.status, LpStatus::unbounded);
}

TEST(SolveLp, OmegaBoxKeepsItBounded) {
  Polytope p(2);  // default +-1e15 box
  p.A.resize(1, 2);
  p.A << 1.0, 1.0;
  p.b.resize(1);
  p.b << 1.0;
  Vector c(2);
  c << 1.0, 1.0;
  const auto out = solve_lp(c, Sense::maximize, p);
  ASSERT_EQ(out.status, LpStatus::optimal);
  EXPECT_NEAR(out.value, 1.0, 1e-6);
}

TEST(IsEmpty, ContradictoryRows) {
  Polytope p = interval_box(1, -10, 10);
  p.A.resize(2, 1);
  p.A << 1.0, -1.0;
  p.b.resize(2);
  p.b << 0.0, -1.0;
  EXPECT_TRUE(is_empty(p));
}

TEST(IsEmpty, BoxOnly) {
  EXPECT_FALSE(is_empty(interval_box(3, -1, 1)));
  EXPECT_FALSE(is_empty(Polytope(5)));
}

TEST(Intersect, WithFullBoxIsIdentity) {
  Polytope p = interval_box(2, -1, 1);
  p.A.resize(1, 2);
  p.A << 1.0, 2.0;
  p.b.resize(1);
  p.b << 0.5;
  const Polytope q = intersect(p, Polytope(2));
  EXPECT_EQ(q.rows(), p.rows());
  EXPECT_TRUE(q.A.isApprox(p.A));
  EXPECT_TRUE(q.lower.isApprox(p.lower));
  EXPECT_TRUE(q.upper.isApprox(p.upper));
}

TEST(Intersect, DisjointHalflinesAreEmpty) {
  Polytope a(1), b(1);
  a.A.resize(1, 1);
  a.A << 1.0;
  a.b.resize(1);
  a.b << 1.0;  // x <= 1
  b.A.resize(1, 1);
  b.A << -1.0;
  b.b.resize(1);
  b.b << -2.0;  // x >= 2
  const Polytope c = intersect(a, b);
  EXPECT_EQ(c.rows(), 2);
  EXPECT_TRUE(is_empty(c));
}

TEST(Intersect, DimensionMismatchThrows) {
  EXPECT_THROW(intersect(Polytope(2), Polytope(3)), InvalidInput);
}

TEST(SolveLp, RandomPolytopesMatchVertexEnumeration) {
  std::mt19937_64 rng(20181);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  int solved = 0, empty = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const Polytope p = random_polytope(rng, trial % 3 == 0);
    Vector c(p.dim());
    for (int k = 0; k < p.dim(); ++k) c(k) = unit(rng);
    const auto expected = oracle::max_over_vertices(p, c);
    const auto out = solve_lp(c, Sense::maximize, p);
    if (!expected) {
      EXPECT_EQ(out.status, LpStatus::infeasible) << "trial " << trial;
      ++empty;
      continue;
    }
    ASSERT_EQ(out.status, LpStatus::optimal) << "trial " << trial;
    EXPECT_NEAR(out.value, *expected, 1e-6) << "trial " << trial;
    EXPECT_LE(p.max_violation(out.point), 1e-7);
    ++solved;
  }
  EXPECT_GE(solved, 200);
  EXPECT_GT(empty, 0);
}

TEST(SolveLp, AddingAConstraintNeverIncreasesTheMaximum) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Polytope p = random_polytope(rng, false);
    Vector c(p.dim());
    for (int k = 0; k < p.dim(); ++k) c(k) = unit(rng);
    const auto before = solve_lp(c, Sense::maximize, p);
    ASSERT_EQ(before.status, LpStatus::optimal);
    Polytope extra(p.dim());
    extra.A = RowMatrix::Zero(1, p.dim());
    for (int k = 0; k < p.dim(); ++k) extra.A(0, k) = unit(rng);
    extra.b = Vector::Constant(1, unit(rng));
    const auto after = solve_lp(c, Sense::maximize, intersect(p, extra));
    if (after.status == LpStatus::optimal) {
      EXPECT_LE(after.value, before.value + 1e-9);
    }
  }
}

TEST(SolveLp, Deterministic) {
  std::mt19937_64 rng(99);
  const Polytope p = random_polytope(rng, false);
  const Vector c = Vector::LinSpaced(p.dim(), -1.0, 1.0);
  const auto a = solve_lp(c, Sense::maximize, p);
  const auto b = solve_lp(c, Sense::maximize, p);
  ASSERT_EQ(a.status, b.status);
  EXPECT_EQ(a.value, b.value);
  EXPECT_TRUE((a.point.array() == b.point.array()).all());
}

TEST(SolveLpBatch, EqualsSequentialSolves) {
  Polytope p = interval_box(2, 0, 100);
  p.A.resize(1, 2);
  p.A << 1.0, 1.0;
  p.b.resize(1);
  p.b << 1.0;
  std::vector<Vector> objectives;
  objectives.push_back((Vector(2) << 3.0, 2.0).finished());
  objectives.push_back((Vector(2) << 1.0, 1.0).finished());
  objectives.push_back((Vector(2) << -1.0, 0.5).finished());
  const auto batch = solve_lp_batch(objectives, Sense::maximize, p);
  ASSERT_EQ(batch.size(), 3u);
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    const auto single = solve_lp(objectives[i], Sense::maximize, p);
    ASSERT_EQ(batch[i].status, LpStatus::optimal);
    EXPECT_NEAR(batch[i].value, single.value, 1e-12);
  }
}

TEST(SolveLpBatch, ChunkingDoesNotChangeResults) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const int d = 6, m = 60;
  Polytope p(d);
  p.A.resize(m, d);
  p.b.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < d; ++k) p.A(i, k) = g(rng);
    p.b(i) = 1.0 + std::abs(g(rng));
  }
  RowMatrix objectives(40, d);
  for (int i = 0; i < 40; ++i)
    for (int k = 0; k < d; ++k) objectives(i, k) = g(rng);
  const auto one = solve_lp_batch(objectives, Sense::maximize, p, {}, std::nullopt, 1);
  const auto many = solve_lp_batch(objectives, Sense::maximize, p, {}, std::nullopt, 7);
  for (int i = 0; i < 40; ++i) {
    ASSERT_EQ(one[i].status, LpStatus::optimal);
    EXPECT_NEAR(one[i].value, many[i].value, 1e-9 * (1.0 + std::abs(one[i].value)));
  }
}

TEST(RowSupport, MatchesVertexEnumeration) {
  std::mt19937_64 rng(77);
  int checked = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const Polytope p = random_polytope(rng, false);
    if (p.rows() == 0) continue;
    const Vector v = row_support(p);
    for (int i = 0; i < p.rows(); ++i) {
      const auto expected = oracle::max_over_vertices(p, p.A.row(i).transpose());
      ASSERT_TRUE(expected.has_value());
      EXPECT_NEAR(v(i), *expected, 1e-6) << "trial " << trial << " row " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(RowSupport, MatchesBatchOnSlabs) {
  // slab rows +-phi_j as in a feasible parameter set, many of them redundant
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  const int d = 8, n = 150;
  RowMatrix phi(n, d);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < d; ++k) phi(j, k) = g(rng);
  Vector theta = Vector::Zero(d), target(n);
  for (int j = 0; j < n; ++j) target(j) = phi.row(j).dot(theta) + 0.3 * g(rng);
  Polytope p(d, 50.0);
  p.add_abs_constraints(phi, target, Vector::Constant(n, 1.2));
  const Vector fast = row_support(p);
  const auto batch = solve_lp_batch(p.A, Sense::maximize, p);
  int tight = 0;
  for (int i = 0; i < p.rows(); ++i) {
    ASSERT_EQ(batch[static_cast<std::size_t>(i)].status, LpStatus::optimal);
    EXPECT_NEAR(fast(i), batch[static_cast<std::size_t>(i)].value, 1e-7 * (1.0 + std::abs(fast(i))));
    EXPECT_LE(fast(i), p.b(i) + 1e-9);
    tight += fast(i) == p.b(i);
  }
  EXPECT_GT(tight, 0);
  EXPECT_LT(tight, p.rows());
}

TEST(RowSupport, EmptyPolytopeThrows) {
  Polytope p = interval_box(1, -1, 1);
  p.A.resize(2, 1);
  p.A << 1.0, -1.0;
  p.b.resize(2);
  p.b << -0.5, -0.5;
  EXPECT_THROW(row_support(p), InvalidInput);
}
