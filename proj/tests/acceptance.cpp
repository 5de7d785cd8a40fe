// Acceptance run on the benchmark plant: prints one PASS/FAIL line per
// criterion. The exit status only reports whether the run completed.
//
//   acceptance [work_dir]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "smid/pipeline.hpp"

using namespace smid;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// ------------------------------------------------------------------ 1

Verdict estimation_chain(const EstimationReport& est, double seconds) {
  Verdict v;
  const bool dbar_ok = est.dbar >= 0.090 && est.dbar <= 0.101;
  const bool pbar_ok = est.pbar >= 95 && est.pbar <= 140;
  const bool order_ok = est.order == 3;
  const bool rho_ok = est.fit.rho >= 0.945 && est.fit.rho <= 0.985;
  const bool time_ok = seconds <= 600.0;
  v.pass = dbar_ok && pbar_ok && order_ok && rho_ok && time_ok;
  v.detail = "dbar " + fmt(est.dbar) + (dbar_ok ? "" : " (out of [0.090, 0.101])") + ", pbar " +
             std::to_string(est.pbar) + (pbar_ok ? "" : " (out of [95, 140])") + ", o " + std::to_string(est.order) +
             (order_ok ? "" : " (expected 3)") + ", rho " + fmt(est.fit.rho) + (rho_ok ? "" : " (out of [0.945, 0.985])") +
             ", " + fmt(seconds, 3) + " s" + (time_ok ? "" : " (over 600 s)");
  return v;
}

// ------------------------------------------------------------------ 2

Verdict bound_validity(const EstimationReport& est, const IdentificationReport& rep) {
  Verdict v;
  int violations = 0, checked = 0;
  std::string first;
  for (const auto& m : rep.methods) {
    for (int p = 1; p <= rep.pbar; ++p) {
      const auto i = static_cast<std::size_t>(p - 1);
      ++checked;
      if (m.bounds.validation_error[i] > m.bounds.tau_hat[i]) {
        if (violations++ == 0)
          first = m.method + " p=" + std::to_string(p) + " e=" + fmt(m.bounds.validation_error[i], 6) +
                  " tau=" + fmt(m.bounds.tau_hat[i], 6);
      }
    }
  }
  const bool contained = est.containment == "contained";
  v.pass = contained && violations == 0 && rep.methods.size() == method_names().size();
  v.detail = std::to_string(violations) + " of " + std::to_string(checked) + " (method, p) pairs with e_p > tau_p" +
             (first.empty() ? "" : ", first: " + first) + "; containment: " + est.containment + " (factor " +
             fmt(est.containment_factor) + ")";
  return v;
}

// ------------------------------------------------------------------ 3

Verdict method_ordering(const IdentificationReport& rep) {
  const auto last = static_cast<std::size_t>(rep.pbar - 1);
  auto tau = [&](const char* m) { return rep.get(m).bounds.tau_hat[last]; };
  auto err = [&](const char* m, int p) { return rep.get(m).bounds.validation_error[static_cast<std::size_t>(p - 1)]; };
  const double slack = 1.05;
  std::vector<std::pair<std::string, bool>> checks{
      {"tau MultiStep <= MethodI", tau("MultiStep") <= slack * tau("MethodI")},
      {"tau MethodI <= PEM", tau("MethodI") <= slack * tau("PEM")},
      {"tau MethodII <= SEM", tau("MethodII") <= slack * tau("SEM")},
      {"tau SEM <= PEM", tau("SEM") <= slack * tau("PEM")},
      {"e35 MethodII <= PEM", rep.pbar < 35 || err("MethodII", 35) <= err("PEM", 35)},
      {"e_pbar MethodII <= PEM", err("MethodII", rep.pbar) <= err("PEM", rep.pbar)}};
  Verdict v;
  v.pass = true;
  std::string failed;
  for (const auto& [name, ok] : checks) {
    if (!ok) {
      v.pass = false;
      failed += (failed.empty() ? "" : "; ") + name;
    }
  }
  v.detail = "tau at pbar: MultiStep " + fmt(tau("MultiStep")) + ", MethodI " + fmt(tau("MethodI")) + ", MethodII " +
             fmt(tau("MethodII")) + ", SEM " + fmt(tau("SEM")) + ", PEM " + fmt(tau("PEM")) + "; e at 35/pbar: MethodII " +
             fmt(err("MethodII", std::min(35, rep.pbar))) + "/" + fmt(err("MethodII", rep.pbar)) + ", PEM " +
             fmt(err("PEM", std::min(35, rep.pbar))) + "/" + fmt(err("PEM", rep.pbar)) +
             (failed.empty() ? "" : "; failed: " + failed);
  return v;
}

// ------------------------------------------------------------------ 4

Verdict lambda_properties(const IORecord& id, const EstimationReport& est, MinimaxTable& table) {
  const int o = est.order, hi = est.p_max;
  const double tol = zero_tolerance(output_scale(id));
  const auto above = table.lambda_series(o, hi, 0.105);
  const auto below = table.lambda_series(o, hi, 0.05);
  double worst_above = 0.0, least_below = std::numeric_limits<double>::infinity();
  for (int p = est.pbar + 1; p <= hi; ++p) {
    worst_above = std::max(worst_above, above[static_cast<std::size_t>(p - 1)]);
    least_below = std::min(least_below, below[static_cast<std::size_t>(p - 1)]);
  }
  // half of the regressor rows, drawn independently for each p
  const auto full = table.lambda_series(o, hi, est.dbar);
  SplitMix64 rng(2024);
  int sub_violations = 0;
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (int p = 1; p <= hi; ++p) {
    const SampleSet S = build_sample_set(id, o, p);
    std::vector<int> keep;
    for (int j = 0; j < static_cast<int>(S.size()); ++j) {
      if (rng.uniform() < 0.5) keep.push_back(j);
    }
    const double sub = lambda_from_minimax(minimax_residual(select_rows(S, keep)), est.dbar);
    const double gap = sub - full[static_cast<std::size_t>(p - 1)];
    worst_gap = std::max(worst_gap, gap);
    if (gap > 1e-9) ++sub_violations;
  }
  Verdict v;
  v.pass = worst_above <= tol && least_below >= 0.03 && sub_violations == 0;
  v.detail = "o " + std::to_string(o) + ", p in (" + std::to_string(est.pbar) + ", " + std::to_string(hi) +
             "]: max lambda(0.105) " + fmt(worst_above) + " (tol " + fmt(tol) + "), min lambda(0.05) " + fmt(least_below) +
             "; 50% subsample above full set at " + std::to_string(sub_violations) + " of " + std::to_string(hi) +
             " horizons (max difference " + fmt(worst_gap) + ")";
  return v;
}

// ------------------------------------------------------------------ 5

Verdict corollary_decay(const EstimationReport& est, MinimaxTable& table, double dbar0, int n_true) {
  Verdict v;
  if (est.order < n_true) {
    v.detail = "estimated order " + std::to_string(est.order) + " is below the true order";
    return v;
  }
  const auto lam = table.lambda_series(est.order, est.pbar, dbar0);
  int bad = 0;
  double worst_ratio = 0.0;
  for (int p = 5; p <= est.pbar; ++p) {
    const double bound = n_true * dbar0 * est.Lz_hat * std::pow(est.fit.rho, p + 1) * 1.2;
    const double l = lam[static_cast<std::size_t>(p - 1)];
    worst_ratio = std::max(worst_ratio, l / bound);
    if (l > bound) ++bad;
  }
  v.pass = bad == 0;
  v.detail = "lambda(dbar0) above n dbar0 Lz rho^(p+1) 1.2 at " + std::to_string(bad) + " of " +
             std::to_string(est.pbar - 4) + " horizons; largest lambda / bound " + fmt(worst_ratio);
  return v;
}

// ------------------------------------------------------------------ 6

Polytope random_polytope(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(1, 4), rows(1, 8);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), margin(0.05, 2.0), width(0.5, 10.0);
  const int d = dim(rng), m = rows(rng);
  Polytope p(d);
  for (int k = 0; k < d; ++k) {
    p.lower(k) = -width(rng);
    p.upper(k) = width(rng);
  }
  const Vector center = 0.5 * (p.lower + p.upper);
  p.A.resize(m, d);
  p.b.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < d; ++k) p.A(i, k) = unit(rng);
    p.b(i) = p.A.row(i).dot(center) + margin(rng);
  }
  return p;
}

Verdict oracle_suites() {
  std::vector<std::string> parts;
  bool pass = true;
  auto timed = [&](const std::string& name, const std::function<std::string(bool&)>& suite) {
    const auto t0 = Clock::now();
    bool ok = true;
    const std::string what = suite(ok);
    const double s = seconds_since(t0);
    ok = ok && s <= 60.0;
    pass = pass && ok;
    parts.push_back(name + " " + (ok ? "ok" : "FAILED") + " (" + what + ", " + fmt(s, 2) + " s)");
  };

  timed("LP vs vertices", [](bool& ok) {
    std::mt19937_64 rng(20181);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double worst = 0.0;
    const int cases = 250;
    for (int t = 0; t < cases; ++t) {
      const Polytope p = random_polytope(rng);
      Vector c(p.dim());
      for (int k = 0; k < p.dim(); ++k) c(k) = unit(rng);
      const auto expected = oracle::max_over_vertices(p, c);
      const auto out = solve_lp(c, Sense::maximize, p);
      if (!expected || out.status != LpStatus::optimal) {
        ok = false;
        continue;
      }
      worst = std::max(worst, std::abs(out.value - *expected));
    }
    ok = ok && worst <= 1e-6;
    return std::to_string(cases) + " polytopes, max error " + fmt(worst, 3);
  });

  timed("propagate vs iteration", [](bool& ok) {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double worst = 0.0;
    const int cases = 600;
    for (int t = 0; t < cases; ++t) {
      const int o = 1 + t % 4;
      const int p = 1 + (t * 7) % 30;
      Vector th(2 * o);
      for (int i = 0; i < 2 * o; ++i) th(i) = unit(gen) * (i < o ? 0.9 / o : 1.0);
      std::vector<double> y(80), u(80);
      for (auto& v : y) v = unit(gen);
      for (auto& v : u) v = unit(gen);
      const double direct = propagate(th, p, o).dot(oracle::regressor(y, u, 40, o, p));
      const double iterated = oracle::iterate_prediction(th, y, u, 40, p);
      worst = std::max(worst, std::abs(direct - iterated) / (1.0 + std::abs(iterated)));
    }
    ok = worst <= 1e-10;
    return std::to_string(cases) + " cases, max relative error " + fmt(worst, 3);
  });

  timed("fit_decay vs grid", [](bool& ok) {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int cases = 60;
    int worse = 0;
    for (int t = 0; t < cases; ++t) {
      const int n = 20 + static_cast<int>(unit(gen) * 60);
      const double rho0 = 0.5 + 0.49 * unit(gen), L0 = 0.1 + 3.0 * unit(gen);
      const int cut = static_cast<int>(n * (0.4 + 0.5 * unit(gen)));
      std::vector<double> f(static_cast<std::size_t>(n), 0.0);
      for (int p = 1; p <= cut; ++p) f[static_cast<std::size_t>(p - 1)] = L0 * std::pow(rho0, p) * (0.3 + 0.7 * unit(gen));
      const DecayFit fit = fit_decay(f, cut);
      double best = std::numeric_limits<double>::infinity();
      for (int k = 1; k < 20000; ++k) best = std::min(best, oracle::decay_objective(f, k * 5e-5));
      if (fit.objective > best * (1.0 + 1e-6) + 1e-14) ++worse;
    }
    ok = worse == 0;
    return std::to_string(cases) + " series, " + std::to_string(worse) + " worse than the grid";
  });

  timed("decoupled LP vs vertices", [](bool& ok) {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const int cases = 30;
    double worst = 0.0;
    for (int t = 0; t < cases; ++t) {
      HorizonData h;
      h.S.layout = RegressorLayout(1, 1);
      h.S.rows = RowMatrix(4, 2);
      h.S.targets = Vector(4);
      for (int i = 0; i < 4; ++i) {
        h.S.rows(i, 0) = unit(gen);
        h.S.rows(i, 1) = unit(gen);
        h.S.targets(i) = unit(gen);
      }
      h.eps = 0.1;
      const double radius = 0.2 + (h.S.targets - h.S.rows * identify_pem(h.S)).lpNorm<Eigen::Infinity>();
      h.set = fps(h.S, 0.0, radius, 5.0);
      h.sv = c_coeffs(h.S, h.set);
      const DecoupledResult r = identify_multistep_decoupled(h, InflationConfig{});
      const auto best = oracle::decoupled_by_vertices(h);
      if (!best) {
        ok = false;
        continue;
      }
      worst = std::max(worst, std::abs(r.worst - *best));
    }
    ok = ok && worst <= 1e-6;
    return std::to_string(cases) + " instances, max error " + fmt(worst, 3);
  });

  Verdict v;
  v.pass = pass;
  for (const auto& p : parts) v.detail += (v.detail.empty() ? "" : "; ") + p;
  return v;
}

// ------------------------------------------------------------------ 7

Verdict determinism(const fs::path& a, const fs::path& b) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<std::string> differ;
  for (const auto& n : names) {
    if (!fs::exists(b / n) || read_file((a / n).string()) != read_file((b / n).string())) differ.push_back(n);
  }
  std::size_t count_b = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++count_b;
  Verdict v;
  v.pass = differ.empty() && count_b == names.size() && !names.empty();
  v.detail = std::to_string(names.size()) + " files compared";
  for (const auto& n : differ) v.detail += ", differs: " + n;
  return v;
}

void print(int k, const std::string& title, const Verdict& v) {
  std::printf("criterion %d %s: %s -- %s\n", k, v.pass ? "PASS" : "FAIL", title.c_str(), v.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "smid_acceptance";
    fs::remove_all(work);
    ExperimentConfig cfg;  // benchmark defaults: seed 42, N = N_v = 1500
    cfg.output_dir = (work / "run1").string();
    const Log log = stderr_log();

    stage::generate(cfg);
    const auto t_est = Clock::now();
    const EstimationReport est = stage::estimate(cfg, log);
    const double est_seconds = seconds_since(t_est);
    stage::identify(cfg, log);
    const IdentificationReport rep = stage::report(cfg);

    print(1, "benchmark estimation chain", estimation_chain(est, est_seconds));
    print(2, "e_p <= tau_p for every method and p <= pbar", bound_validity(est, rep));
    print(3, "method ordering at pbar", method_ordering(rep));

    const IORecord id = stage::load_record(cfg, "id.csv");
    MinimaxTable table(id);
    log("lambda properties");
    print(4, "lambda properties", lambda_properties(id, est, table));
    print(5, "decay bound with dbar = dbar0", corollary_decay(est, table, cfg.dbar0, 3));
    log("oracle suites");
    print(6, "oracle suites", oracle_suites());

    ExperimentConfig again = cfg;
    again.output_dir = (work / "run2").string();
    log("second full run");
    stage::all(again, log);
    print(7, "byte-identical reruns", determinism(cfg.output_dir, again.output_dir));
  } catch (const std::exception& e) {
    std::cerr << "acceptance run aborted: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
