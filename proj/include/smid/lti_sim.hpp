#pragma once

// Benchmark data generation: continuous transfer function -> ZOH discrete
// state space -> simulation under a random piecewise-constant input, plus
// bounded uniform measurement noise.

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include "smid/types.hpp"

namespace smid {

struct ContinuousTF {
  std::vector<double> numerator;    // descending powers of s
  std::vector<double> denominator;  // descending powers of s
};

struct DiscreteSS {
  Matrix A;
  Vector B;
  Eigen::RowVectorXd C;
  double Ts = 0.0;

  int order() const { return static_cast<int>(A.rows()); }
};

struct IORecord {
  std::vector<double> u;
  std::vector<double> z;  // noise-free output; equals y for external data
  std::vector<double> y;
  double Ts = 1.0;
  std::uint64_t seed = 0;
  double dbar0 = 0.0;
  bool has_true_output = true;
  std::optional<ContinuousTF> system;

  std::size_t size() const { return u.size(); }
};

namespace detail {

inline std::vector<double> strip_leading_zeros(std::vector<double> c) {
  auto first = std::find_if(c.begin(), c.end(), [](double v) { return v != 0.0; });
  c.erase(c.begin(), first);
  return c;
}

}  // namespace detail

/// Poles of the transfer function (roots of the denominator).
inline std::vector<std::complex<double>> poles(const ContinuousTF& tf) {
  const auto den = detail::strip_leading_zeros(tf.denominator);
  require(!den.empty(), "transfer function denominator is zero");
  const int n = static_cast<int>(den.size()) - 1;
  std::vector<std::complex<double>> roots;
  if (n == 0) return roots;
  Matrix companion = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) companion(0, j) = -den[j + 1] / den[0];
  for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Matrix> es(companion, false);
  for (int i = 0; i < n; ++i) roots.push_back(es.eigenvalues()(i));
  return roots;
}

/// Checks strict properness, a nonzero leading denominator coefficient and
/// (unless `allow_marginal`) that every pole has negative real part.
inline void validate_tf(const ContinuousTF& tf, bool allow_marginal = false) {
  const auto den = detail::strip_leading_zeros(tf.denominator);
  const auto num = detail::strip_leading_zeros(tf.numerator);
  require(!den.empty(), "transfer function denominator is zero");
  require(num.size() < den.size(),
          "transfer function is not strictly proper (deg num >= deg den)");
  for (const auto& p : poles(tf)) {
    if (allow_marginal) {
      require(p.real() <= 1e-12, "transfer function has a pole in the open right half-plane");
    } else {
      require(p.real() < 0.0, "transfer function is not asymptotically stable (pole with Re >= 0)");
    }
  }
}

/// Controllable canonical realization. For a coprime numerator/denominator
/// pair the realization is minimal.
inline void controllable_canonical(const ContinuousTF& tf, Matrix& A, Vector& B,
                                   Eigen::RowVectorXd& C) {
  const auto den = detail::strip_leading_zeros(tf.denominator);
  auto num = detail::strip_leading_zeros(tf.numerator);
  const int n = static_cast<int>(den.size()) - 1;
  A = Matrix::Zero(n, n);
  B = Vector::Zero(n);
  C = Eigen::RowVectorXd::Zero(n);
  for (int j = 0; j < n; ++j) A(0, j) = -den[j + 1] / den[0];
  for (int i = 1; i < n; ++i) A(i, i - 1) = 1.0;
  B(0) = 1.0;
  // numerator padded to length n: b0 s^{n-1} + ... + b_{n-1}
  const int pad = n - static_cast<int>(num.size());
  for (int j = 0; j < static_cast<int>(num.size()); ++j) C(pad + j) = num[j] / den[0];
}

/// Exact zero-order-hold discretization through the matrix exponential of
/// the augmented matrix [[A, B], [0, 0]] * Ts (scaling and squaring with
/// Pade approximants, as implemented by Eigen's MatrixFunctions module).
inline DiscreteSS discretize_zoh(const ContinuousTF& tf, double Ts, bool allow_marginal = false) {
  require(Ts > 0.0, "sample time must be positive");
  validate_tf(tf, allow_marginal);
  Matrix A;
  Vector B;
  Eigen::RowVectorXd C;
  controllable_canonical(tf, A, B, C);
  const int n = static_cast<int>(A.rows());
  Matrix M = Matrix::Zero(n + 1, n + 1);
  M.topLeftCorner(n, n) = A * Ts;
  M.topRightCorner(n, 1) = B * Ts;
  const Matrix E = M.exp();
  DiscreteSS ss;
  ss.A = E.topLeftCorner(n, n);
  ss.B = E.topRightCorner(n, 1);
  ss.C = C;
  ss.Ts = Ts;
  return ss;
}

inline double spectral_radius(const Matrix& A) {
  if (A.rows() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// 5 time constants of the slowest pole, in samples.
inline int settling_samples(const ContinuousTF& tf, double Ts) {
  double slowest = std::numeric_limits<double>::infinity();
  for (const auto& p : poles(tf)) slowest = std::min(slowest, std::abs(p.real()));
  require(slowest > 0.0 && std::isfinite(slowest), "settling time undefined for marginal systems");
  return static_cast<int>(std::ceil(5.0 / slowest / Ts - 1e-9));
}

/// Piecewise-constant input: a fresh level, drawn uniformly from `levels`,
/// every `hold` time units.
inline std::vector<double> random_step_input(const std::vector<double>& levels, double hold,
                                             std::size_t length, double Ts, std::uint64_t seed) {
  require(!levels.empty(), "input level set is empty");
  require(Ts > 0.0 && hold > 0.0, "hold and sample time must be positive");
  const double ratio = hold / Ts;
  const double window = std::round(ratio);
  require(window >= 1.0 && std::abs(ratio - window) <= 1e-9 * std::max(1.0, ratio),
          "input hold must be an integer multiple of the sample time");
  const auto samples = static_cast<std::size_t>(window);
  SplitMix64 rng(seed);
  std::vector<double> u(length);
  double level = 0.0;
  for (std::size_t k = 0; k < length; ++k) {
    if (k % samples == 0) level = levels[rng.below(levels.size())];
    u[k] = level;
  }
  return u;
}

inline std::vector<double> simulate(const DiscreteSS& ss, const std::vector<double>& u,
                                    const Vector& x0) {
  const int n = ss.order();
  require(ss.B.size() == n && ss.C.size() == n && ss.A.cols() == n,
          "state-space dimensions are inconsistent");
  require(x0.size() == n, "initial state dimension mismatch");
  std::vector<double> z(u.size());
  Vector x = x0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    z[k] = ss.C.dot(x);
    x = ss.A * x + ss.B * u[k];
  }
  return z;
}

inline std::vector<double> simulate(const DiscreteSS& ss, const std::vector<double>& u) {
  return simulate(ss, u, Vector::Zero(ss.order()));
}

/// y = z + d with d i.i.d. uniform on [-dbar0, dbar0].
inline std::vector<double> add_noise(const std::vector<double>& z, double dbar0, std::uint64_t seed) {
  require(dbar0 >= 0.0, "noise amplitude must be non-negative");
  SplitMix64 rng(seed);
  std::vector<double> y(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double d = rng.uniform(-dbar0, dbar0);
    y[k] = z[k] + d;
  }
  return y;
}

struct GenerationSpec {
  ContinuousTF system;
  double Ts = 0.1;
  std::vector<double> levels{-1.0, 0.0, 1.0};
  double hold = 10.0;
  std::size_t length = 3000;  // samples kept after warm-up
  double dbar0 = 0.1;
  std::uint64_t seed = 1;
  // warm-up multiplier of the settling time; negative disables the warm-up
  double warmup_settling_factor = 2.0;
};

/// Simulates `length + warm-up` samples from rest and discards the warm-up
/// prefix. Input and noise streams use independent seeds derived from
/// `spec.seed`.
inline IORecord generate_record(const GenerationSpec& spec) {
  const DiscreteSS ss = discretize_zoh(spec.system, spec.Ts);
  std::size_t warmup = 0;
  if (spec.warmup_settling_factor > 0.0) {
    warmup = static_cast<std::size_t>(
        std::ceil(spec.warmup_settling_factor * settling_samples(spec.system, spec.Ts)));
  }
  const std::size_t total = warmup + spec.length;
  const std::uint64_t input_seed = spec.seed * 2 + 1;
  const std::uint64_t noise_seed = spec.seed * 2 + 2;
  auto u = random_step_input(spec.levels, spec.hold, total, spec.Ts, input_seed);
  auto z = simulate(ss, u);
  auto y = add_noise(z, spec.dbar0, noise_seed);
  IORecord rec;
  rec.u.assign(u.begin() + static_cast<std::ptrdiff_t>(warmup), u.end());
  rec.z.assign(z.begin() + static_cast<std::ptrdiff_t>(warmup), z.end());
  rec.y.assign(y.begin() + static_cast<std::ptrdiff_t>(warmup), y.end());
  rec.Ts = spec.Ts;
  rec.seed = spec.seed;
  rec.dbar0 = spec.dbar0;
  rec.system = spec.system;
  return rec;
}

/// One-step ARX coefficients [a_1..a_n | b_1..b_n] of a discrete system,
/// z(k+1) = sum a_i z(k+1-i) + sum b_i u(k+1-i).
inline Vector true_arx_parameters(const DiscreteSS& ss) {
  const int n = ss.order();
  // characteristic polynomial z^n + c_1 z^{n-1} + ... + c_n via Faddeev-LeVerrier
  std::vector<double> c(n + 1, 0.0);
  c[0] = 1.0;
  Matrix M = Matrix::Zero(n, n);
  const Matrix I = Matrix::Identity(n, n);
  for (int k = 1; k <= n; ++k) {
    M = ss.A * M + c[k - 1] * I;
    c[k] = -(ss.A * M).trace() / k;
  }
  Vector theta = Vector::Zero(2 * n);
  for (int i = 1; i <= n; ++i) theta(i - 1) = -c[i];
  // Markov parameters g_i = C A^{i-1} B
  std::vector<double> g(n + 1, 0.0);
  Vector v = ss.B;
  for (int i = 1; i <= n; ++i) {
    g[i] = ss.C.dot(v);
    v = ss.A * v;
  }
  for (int i = 1; i <= n; ++i) {
    double b = g[i];
    for (int l = 1; l < i; ++l) b -= theta(l - 1) * g[i - l];
    theta(n + i - 1) = b;
  }
  return theta;
}

/// The benchmark plant 160 / ((s + 10)(s^2 + 0.8 s + 16)).
inline ContinuousTF benchmark_system() {
  // (s + 10)(s^2 + 0.8 s + 16) = s^3 + 10.8 s^2 + 24 s + 160
  return ContinuousTF{{160.0}, {1.0, 10.8, 24.0, 160.0}};
}

}  // namespace smid
