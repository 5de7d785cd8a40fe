#pragma once

// The experiment chain: data, estimation of the bounds, identification with
// every method, and the comparison tables.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "smid/estimators.hpp"
#include "smid/io.hpp"
#include "smid/predictors.hpp"

namespace smid {

using Json = nlohmann::ordered_json;

/// Progress messages; the default discards them.
using Log = std::function<void(const std::string&)>;

inline Log stderr_log() {
  const auto t0 = std::chrono::steady_clock::now();
  return [t0](const std::string& msg) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
  };
}

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"PEM", "SEM", "MethodI", "MethodII", "MultiStep"};
  return names;
}

struct ExperimentConfig {
  // plant and data
  std::vector<double> numerator{160.0};
  std::vector<double> denominator{1.0, 10.8, 24.0, 160.0};
  std::string data_path;  // external k,u,y CSV; replaces generation when set
  double Ts = 0.1;
  int N = 1500;
  int N_v = 1500;
  std::vector<double> levels{-1.0, 0.0, 1.0};
  double hold = 10.0;
  double dbar0 = 0.1;
  std::uint64_t seed = 42;
  double warmup_settling_factor = 2.0;
  // estimation
  int o_init = 5;
  double alpha = 1.3;
  double gamma = 1.2;
  int max_horizon = 210;
  int dbar_grid_points = 40;
  double dbar_grid_low = 0.1;    // times the output standard deviation
  double dbar_grid_high = 2.0;   // times the output standard deviation
  double dbar_refine = 1e-3;     // times the output standard deviation; 0 disables
  std::vector<double> dbar_grid;  // explicit ascending grid; overrides the above
  double inflation_step = 1.05;
  double inflation_cap = 10.0;
  bool enforce_containment = true;
  // identification
  std::vector<std::string> methods = method_names();
  int sqp_iterations = 200;
  int slp_iterations = 100;
  double feasibility_tol = 1e-6;
  // report
  std::vector<int> report_horizons;  // empty: {1, 10, 35, pbar}
  int threads = 0;
  std::string output_dir = "out";

  ContinuousTF system() const { return {numerator, denominator}; }
  bool external() const { return !data_path.empty(); }

  void validate() const {
    require(Ts > 0.0, "Ts must be positive");
    require(N >= 10 && N_v >= 10, "N and N_v must be at least 10");
    require(!levels.empty(), "input levels must not be empty");
    require(hold > 0.0, "hold must be positive");
    require(dbar0 >= 0.0, "dbar0 must be non-negative");
    require(o_init >= 1, "o_init must be >= 1");
    InflationConfig{alpha, gamma}.validate();
    require(max_horizon >= 2, "max_horizon must be >= 2");
    require(2 * o_init + max_horizon - 1 < N, "max_horizon is too long for N samples");
    require(dbar_grid_points >= 2, "dbar_grid_points must be >= 2");
    require(dbar_grid_low > 0.0 && dbar_grid_high > dbar_grid_low, "dbar grid range must be increasing");
    require(dbar_refine >= 0.0, "dbar_refine must be non-negative");
    if (!dbar_grid.empty()) DbarGrid{dbar_grid, 0.0}.validate();
    require(inflation_step > 1.0 && inflation_cap > 1.0, "inflation step and cap must exceed 1");
    for (const auto& m : methods) {
      require(std::find(method_names().begin(), method_names().end(), m) != method_names().end(),
              "unknown method " + m);
    }
    require(sqp_iterations >= 1 && slp_iterations >= 1, "iteration limits must be >= 1");
    require(feasibility_tol > 0.0, "feasibility_tol must be positive");
    for (int p : report_horizons) require(p >= 1, "report horizons must be >= 1");
    require(!output_dir.empty(), "output_dir must not be empty");
    if (!external()) validate_tf(system());
  }

  bool runs(const std::string& m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
};

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["numerator"] = c.numerator;
  j["denominator"] = c.denominator;
  j["data_path"] = c.data_path;
  j["Ts"] = c.Ts;
  j["N"] = c.N;
  j["N_v"] = c.N_v;
  j["levels"] = c.levels;
  j["hold"] = c.hold;
  j["dbar0"] = c.dbar0;
  j["seed"] = c.seed;
  j["warmup_settling_factor"] = c.warmup_settling_factor;
  j["o_init"] = c.o_init;
  j["alpha"] = c.alpha;
  j["gamma"] = c.gamma;
  j["max_horizon"] = c.max_horizon;
  j["dbar_grid_points"] = c.dbar_grid_points;
  j["dbar_grid_low"] = c.dbar_grid_low;
  j["dbar_grid_high"] = c.dbar_grid_high;
  j["dbar_refine"] = c.dbar_refine;
  j["dbar_grid"] = c.dbar_grid;
  j["inflation_step"] = c.inflation_step;
  j["inflation_cap"] = c.inflation_cap;
  j["enforce_containment"] = c.enforce_containment;
  j["methods"] = c.methods;
  j["sqp_iterations"] = c.sqp_iterations;
  j["slp_iterations"] = c.slp_iterations;
  j["feasibility_tol"] = c.feasibility_tol;
  j["report_horizons"] = c.report_horizons;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  return j;
}

/// Applies the keys present in `j` on top of `c`; unknown keys are errors.
inline void apply_json(ExperimentConfig& c, const Json& j) {
  require(j.is_object(), "configuration must be a JSON object");
  const Json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw InvalidInput("unknown configuration key '" + it.key() + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw InvalidInput(std::string("configuration key '") + key + "' has the wrong type");
    }
  };
  get("numerator", c.numerator);
  get("denominator", c.denominator);
  get("data_path", c.data_path);
  get("Ts", c.Ts);
  get("N", c.N);
  get("N_v", c.N_v);
  get("levels", c.levels);
  get("hold", c.hold);
  get("dbar0", c.dbar0);
  get("seed", c.seed);
  get("warmup_settling_factor", c.warmup_settling_factor);
  get("o_init", c.o_init);
  get("alpha", c.alpha);
  get("gamma", c.gamma);
  get("max_horizon", c.max_horizon);
  get("dbar_grid_points", c.dbar_grid_points);
  get("dbar_grid_low", c.dbar_grid_low);
  get("dbar_grid_high", c.dbar_grid_high);
  get("dbar_refine", c.dbar_refine);
  get("dbar_grid", c.dbar_grid);
  get("inflation_step", c.inflation_step);
  get("inflation_cap", c.inflation_cap);
  get("enforce_containment", c.enforce_containment);
  get("methods", c.methods);
  get("sqp_iterations", c.sqp_iterations);
  get("slp_iterations", c.slp_iterations);
  get("feasibility_tol", c.feasibility_tol);
  get("report_horizons", c.report_horizons);
  get("threads", c.threads);
  get("output_dir", c.output_dir);
}

// ---------------------------------------------------------------- records

struct Records {
  IORecord id;
  IORecord val;
};

inline Records make_records(const ExperimentConfig& cfg) {
  cfg.validate();
  IORecord all;
  if (cfg.external()) {
    all = parse_record_csv(read_file(cfg.data_path), cfg.data_path);
    all.Ts = cfg.Ts;
  } else {
    GenerationSpec g;
    g.system = cfg.system();
    g.Ts = cfg.Ts;
    g.levels = cfg.levels;
    g.hold = cfg.hold;
    g.length = static_cast<std::size_t>(cfg.N + cfg.N_v);
    g.dbar0 = cfg.dbar0;
    g.seed = cfg.seed;
    g.warmup_settling_factor = cfg.warmup_settling_factor;
    all = generate_record(g);
  }
  auto [id, val] = split(all, static_cast<std::size_t>(cfg.N), static_cast<std::size_t>(cfg.N_v));
  return {std::move(id), std::move(val)};
}

// ------------------------------------------------------------- estimation

struct EstimationReport {
  double sigma_y = 0.0;
  double dbar = 0.0;
  int pbar = 0;
  int order = 0;
  int p_max = 0;
  std::vector<double> lambda;   // order `order`, p = 1..p_max
  std::vector<double> eps_raw;  // alpha * lambda, p = 1..p_max
  DecayFit fit;
  double Lz_hat = 0.0;
  double Lu_hat = 0.0;
  // bounds handed to identification, p = 1..pbar
  std::vector<double> eps;
  DecayBound decay;
  double nonempty_factor = 1.0;
  double containment_factor = 1.0;
  std::string containment = "not checked";
  std::vector<int> outside_before;
  ProcedureTrace dbar_trace;
  ProcedureTrace order_trace;
};

inline EstimationReport estimate(const ExperimentConfig& cfg, const IORecord& id, const LpOptions& lp = {},
                                 const Log& log = {}) {
  auto note = [&](const std::string& m) {
    if (log) log(m);
  };
  cfg.validate();
  const InflationConfig infl{cfg.alpha, cfg.gamma};
  EstimationReport est;
  MinimaxTable table(id, lp);
  est.sigma_y = output_std(id);
  DbarGrid grid;
  if (!cfg.dbar_grid.empty()) {
    grid.values = cfg.dbar_grid;
  } else {
    const double lo = std::log(cfg.dbar_grid_low * est.sigma_y), hi = std::log(cfg.dbar_grid_high * est.sigma_y);
    for (int i = 0; i < cfg.dbar_grid_points; ++i)
      grid.values.push_back(std::exp(lo + (hi - lo) * i / (cfg.dbar_grid_points - 1)));
    grid.refine_step = cfg.dbar_refine * est.sigma_y;
  }
  note("estimating dbar");
  const DbarEstimate d = estimate_dbar(table, cfg.o_init, grid, cfg.max_horizon, cfg.threads);
  est.dbar = d.dbar;
  est.pbar = d.pbar;
  est.dbar_trace = d.trace;
  note("dbar " + format_double(est.dbar) + ", pbar " + std::to_string(est.pbar) + "; estimating the order");
  const OrderEstimate o = estimate_order(table, est.dbar, est.pbar, cfg.o_init, cfg.threads);
  est.order = o.order;
  est.order_trace = o.trace;
  est.p_max = tail_end(est.pbar);
  est.lambda = table.lambda_series(est.order, est.p_max, est.dbar, cfg.threads);
  for (double l : est.lambda) est.eps_raw.push_back(eps_hat(l, infl));
  est.fit = fit_decay(est.eps_raw, est.pbar);

  note("order " + std::to_string(est.order) + ", rho " + format_double(est.fit.rho) + "; decay constants");
  std::vector<SampleSet> sets;
  std::vector<Polytope> fpss;
  for (int p = 1; p <= est.pbar; ++p) {
    sets.push_back(build_sample_set(id, est.order, p));
    fpss.push_back(fps(sets.back(), est.eps_raw[static_cast<std::size_t>(p - 1)], est.dbar));
  }
  est.Lz_hat = estimate_Lz(fpss, est.order, est.fit.rho, lp, cfg.threads);
  est.Lu_hat = estimate_Lu(fpss, est.order, est.fit.rho, lp, cfg.threads);
  const std::vector<double> eps(est.eps_raw.begin(), est.eps_raw.begin() + est.pbar);
  const DecayBound decay{est.fit.rho, std::max(est.Lz_hat, 0.0), std::max(est.Lu_hat, 0.0)};
  const EnsureNonemptyResult ne =
      ensure_nonempty(sets, eps, est.dbar, decay, cfg.inflation_step, cfg.inflation_cap, lp);
  est.nonempty_factor = ne.factor;
  est.eps = ne.eps_hat;
  est.decay = ne.decay;
  if (cfg.enforce_containment && !cfg.external()) {
    const DiscreteSS ss = discretize_zoh(cfg.system(), cfg.Ts);
    if (ss.order() > est.order) {
      est.containment = "not representable: estimated order below the true order";
    } else {
      const auto truth = true_parameter_series(ss, est.order, est.pbar);
      const ContainmentResult c =
          ensure_containment(sets, est.eps, est.dbar, est.decay, truth, cfg.inflation_step, cfg.inflation_cap);
      est.containment_factor = c.factor;
      est.outside_before = c.outside_before;
      est.eps = c.eps_hat;
      est.decay = c.decay;
      est.containment = "contained";
    }
  }
  return est;
}

inline Json trace_json(const ProcedureTrace& t) {
  Json j;
  j["kind"] = t.kind;
  j["decision"] = t.decision;
  j["pbar"] = t.pbar;
  j["note"] = t.note;
  j["tried"] = t.grid;
  return j;
}

inline Json to_json(const EstimationReport& e) {
  Json j;
  j["sigma_y"] = e.sigma_y;
  j["dbar"] = e.dbar;
  j["pbar"] = e.pbar;
  j["order"] = e.order;
  j["p_max"] = e.p_max;
  j["rho"] = e.fit.rho;
  j["L_fit"] = e.fit.L;
  j["fit_objective"] = e.fit.objective;
  j["Lz_hat"] = e.Lz_hat;
  j["Lu_hat"] = e.Lu_hat;
  j["lambda"] = e.lambda;
  j["eps_raw"] = e.eps_raw;
  j["eps"] = e.eps;
  j["decay"] = {{"rho", e.decay.rho}, {"Lz", e.decay.Lz}, {"Lu", e.decay.Lu}};
  j["nonempty_factor"] = e.nonempty_factor;
  j["containment_factor"] = e.containment_factor;
  j["containment"] = e.containment;
  j["outside_before"] = e.outside_before;
  j["dbar_trace"] = trace_json(e.dbar_trace);
  j["order_trace"] = trace_json(e.order_trace);
  return j;
}

inline EstimationReport estimation_from_json(const Json& j) {
  EstimationReport e;
  try {
    e.sigma_y = j.at("sigma_y").get<double>();
    e.dbar = j.at("dbar").get<double>();
    e.pbar = j.at("pbar").get<int>();
    e.order = j.at("order").get<int>();
    e.p_max = j.at("p_max").get<int>();
    e.fit.rho = j.at("rho").get<double>();
    e.fit.L = j.at("L_fit").get<double>();
    e.fit.objective = j.at("fit_objective").get<double>();
    e.Lz_hat = j.at("Lz_hat").get<double>();
    e.Lu_hat = j.at("Lu_hat").get<double>();
    e.lambda = j.at("lambda").get<std::vector<double>>();
    e.eps_raw = j.at("eps_raw").get<std::vector<double>>();
    e.eps = j.at("eps").get<std::vector<double>>();
    e.decay.rho = j.at("decay").at("rho").get<double>();
    e.decay.Lz = j.at("decay").at("Lz").get<double>();
    e.decay.Lu = j.at("decay").at("Lu").get<double>();
    e.nonempty_factor = j.at("nonempty_factor").get<double>();
    e.containment_factor = j.at("containment_factor").get<double>();
    e.containment = j.at("containment").get<std::string>();
    e.outside_before = j.at("outside_before").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidInput(std::string("malformed estimation report: ") + ex.what());
  }
  require(e.pbar >= 1 && e.order >= 1 && static_cast<int>(e.eps.size()) == e.pbar, "inconsistent estimation report");
  return e;
}

/// Traces behind the lambda-versus-dbar and lambda-versus-order plots:
/// one row per (trial value, p).
inline std::string trace_csv(const ProcedureTrace& t) {
  CsvTable csv({t.kind == "dbar" ? "dbar" : "order", "p", "lambda"});
  for (std::size_t i = 0; i < t.grid.size(); ++i) {
    for (std::size_t p = 0; p < t.lambda[i].size(); ++p)
      csv.add({format_double(t.grid[i]), std::to_string(p + 1), format_double(t.lambda[i][p])});
  }
  return csv.str();
}

/// lambda, eps_hat and the fitted envelope L rho^p.
inline std::string decay_csv(const EstimationReport& e) {
  CsvTable csv({"p", "lambda", "eps_hat", "envelope"});
  for (int p = 1; p <= e.p_max; ++p) {
    const auto i = static_cast<std::size_t>(p - 1);
    csv.add({std::to_string(p), format_double(e.lambda[i]), format_double(e.eps_raw[i]),
             format_double(e.fit.L * std::pow(e.fit.rho, p))});
  }
  return csv.str();
}

// --------------------------------------------------------- identification

struct MethodResult {
  std::string method;
  Vector theta1;                 // one-step methods
  std::vector<Vector> theta_p;   // per-horizon parameters (all methods)
  SolverDiagnostics diag;
  BoundSeries bounds;            // tau_hat and, after evaluation, e_p
};

struct IdentificationReport {
  int order = 0;
  int pbar = 0;
  double dbar = 0.0;
  std::vector<MethodResult> methods;
  long support_lps = 0;
  std::string constraint_note;

  const MethodResult& get(const std::string& name) const {
    for (const auto& m : methods)
      if (m.method == name) return m;
    throw InvalidInput("method " + name + " was not run");
  }
  bool has(const std::string& name) const {
    return std::any_of(methods.begin(), methods.end(), [&](const MethodResult& m) { return m.method == name; });
  }
};

inline std::vector<HorizonData> horizon_data(const IORecord& id, const EstimationReport& est, const LpOptions& lp,
                                             int threads) {
  std::vector<HorizonData> hs(static_cast<std::size_t>(est.pbar));
  parallel_for(
      est.pbar,
      [&](int i) {
        const int p = i + 1;
        HorizonData& h = hs[static_cast<std::size_t>(i)];
        h.S = build_sample_set(id, est.order, p);
        h.eps = est.eps[static_cast<std::size_t>(i)];
        h.set = refined_fps(h.S, h.eps, est.dbar, est.decay);
        h.gamma_hi = h.set.upper;
        h.sv = c_coeffs(h.S, h.set, lp);
      },
      threads);
  return hs;
}

namespace detail {

inline void one_step_bounds(MethodResult& m, const std::vector<HorizonData>& hs, const EstimationReport& est,
                            const InflationConfig& infl) {
  const auto prop = propagate_all(m.theta1, est.order, est.pbar);
  m.theta_p = prop.theta;
  m.bounds.tau_hat.clear();
  for (std::size_t i = 0; i < hs.size(); ++i)
    m.bounds.tau_hat.push_back(tau_hat_from_support(hs[i].S, hs[i].sv, prop.theta[i], hs[i].eps, infl));
}

// lowest objective among feasible runs, then lowest residual, then first
inline std::size_t pick_best(const std::vector<NlpResult>& runs, double tol) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const auto& a = runs[i].diag;
    const auto& b = runs[best].diag;
    const bool fa = a.feasibility <= tol, fb = b.feasibility <= tol;
    if (fa != fb) {
      if (fa) best = i;
      continue;
    }
    if (!fa) {
      if (a.feasibility < b.feasibility) best = i;
      continue;
    }
    if (a.objective < b.objective || (a.objective == b.objective && a.feasibility < b.feasibility)) best = i;
  }
  return best;
}

}  // namespace detail

inline IdentificationReport identify(const ExperimentConfig& cfg, const IORecord& id, const EstimationReport& est,
                                     const LpOptions& lp = {}, const Log& log = {}) {
  auto note = [&](const std::string& m) {
    if (log) log(m);
  };
  cfg.validate();
  const InflationConfig infl{cfg.alpha, cfg.gamma};
  const int o = est.order;
  IdentificationReport rep;
  rep.order = o;
  rep.pbar = est.pbar;
  rep.dbar = est.dbar;
  note("support values for p = 1.." + std::to_string(est.pbar));
  const auto hs = horizon_data(id, est, lp, cfg.threads);
  for (const auto& h : hs) rep.support_lps += h.sv.lp_count;
  auto base = [&](const std::string& name) {
    MethodResult m;
    m.method = name;
    m.bounds.order = o;
    m.bounds.dbar = est.dbar;
    m.bounds.lambda.assign(est.lambda.begin(), est.lambda.begin() + est.pbar);
    m.bounds.eps_hat = est.eps;
    return m;
  };

  note("PEM and SEM");
  const Vector pem = identify_pem(hs[0].S);
  NlpOptions sqp;
  sqp.max_iterations = cfg.sqp_iterations;
  sqp.feasibility_tol = cfg.feasibility_tol;
  const NlpResult sem = identify_sem(id, o, pem, sqp);

  if (cfg.runs("PEM")) {
    MethodResult m = base("PEM");
    m.theta1 = pem;
    m.diag.objective = (hs[0].S.targets - hs[0].S.rows * pem).squaredNorm();
    m.diag.converged = true;
    m.diag.start = "least squares";
    detail::one_step_bounds(m, hs, est, infl);
    rep.methods.push_back(std::move(m));
  }
  if (cfg.runs("SEM")) {
    MethodResult m = base("SEM");
    m.theta1 = sem.x;
    m.diag = sem.diag;
    m.diag.start = "PEM";
    detail::one_step_bounds(m, hs, est, infl);
    rep.methods.push_back(std::move(m));
  }

  note("multi-step LPs");
  std::vector<DecoupledResult> dec(hs.size());
  parallel_for(
      static_cast<int>(hs.size()),
      [&](int i) { dec[static_cast<std::size_t>(i)] = identify_multistep_decoupled(hs[static_cast<std::size_t>(i)], infl, lp); },
      cfg.threads);
  if (cfg.runs("MultiStep")) {
    MethodResult m = base("MultiStep");
    for (const auto& d : dec) {
      m.theta_p.push_back(d.theta);
      m.bounds.tau_hat.push_back(d.tau);
    }
    m.diag.objective = *std::max_element(m.bounds.tau_hat.begin(), m.bounds.tau_hat.end());
    m.diag.converged = true;
    m.diag.start = "LP";
    rep.methods.push_back(std::move(m));
  }

  const std::vector<std::pair<std::string, Vector>> starts{{"PEM", pem}, {"SEM", sem.x}, {"MultiStep p=1", dec[0].theta}};
  if (cfg.runs("MethodI")) {
    note("Method I");
    Method1Options m1;
    m1.max_iterations = cfg.slp_iterations;
    m1.feasibility_tol = cfg.feasibility_tol;
    std::vector<NlpResult> runs(starts.size());
    parallel_for(
        static_cast<int>(starts.size()),
        [&](int i) {
          runs[static_cast<std::size_t>(i)] = identify_method1(hs, o, infl, starts[static_cast<std::size_t>(i)].second, m1, lp);
          runs[static_cast<std::size_t>(i)].diag.start = starts[static_cast<std::size_t>(i)].first;
        },
        cfg.threads);
    const std::size_t b = detail::pick_best(runs, cfg.feasibility_tol);
    MethodResult m = base("MethodI");
    m.theta1 = runs[b].x;
    m.diag = runs[b].diag;
    if (m.diag.feasibility > cfg.feasibility_tol) {
      std::ostringstream msg;
      msg << "no start reached a feasible point; largest violation " << m.diag.feasibility;
      m.diag.note = msg.str();
    }
    detail::one_step_bounds(m, hs, est, infl);
    rep.methods.push_back(std::move(m));
  }
  if (cfg.runs("MethodII")) {
    note("Method II");
    std::vector<Polytope> boxes;
    for (int p = 2; p <= est.pbar; ++p) boxes.push_back(gamma_set(o, p, est.decay));
    std::vector<NlpResult> runs(starts.size());
    parallel_for(
        static_cast<int>(starts.size()),
        [&](int i) {
          runs[static_cast<std::size_t>(i)] =
              identify_method2(id, o, hs[0].set, boxes, starts[static_cast<std::size_t>(i)].second, sqp);
          runs[static_cast<std::size_t>(i)].diag.start = starts[static_cast<std::size_t>(i)].first;
        },
        cfg.threads);
    const std::size_t b = detail::pick_best(runs, cfg.feasibility_tol);
    MethodResult m = base("MethodII");
    m.theta1 = runs[b].x;
    m.diag = runs[b].diag;
    if (m.diag.feasibility > cfg.feasibility_tol) {
      std::ostringstream msg;
      msg << "no start reached a feasible point; largest violation " << m.diag.feasibility;
      m.diag.note = msg.str();
    }
    detail::one_step_bounds(m, hs, est, infl);
    rep.methods.push_back(std::move(m));
  }
  {
    std::ostringstream note;
    note << "decay boxes enforced for p = 2.." << est.pbar << " (not up to N); Method I has "
         << 2 * hs[0].S.size() << " linear and " << [&] {
              long s = 0;
              for (std::size_t i = 1; i < hs.size(); ++i) s += 2 * hs[i].S.size();
              return s;
            }() << " nonlinear set rows";
    rep.constraint_note = note.str();
  }
  return rep;
}

/// e_p on the validation record for p = 1..pbar.
inline void evaluate(IdentificationReport& rep, const IORecord& val) {
  for (auto& m : rep.methods) {
    m.bounds.validation_error.clear();
    for (int p = 1; p <= rep.pbar; ++p)
      m.bounds.validation_error.push_back(validation_error(m.theta_p[static_cast<std::size_t>(p - 1)], val, rep.order, p));
  }
}

inline Json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Json to_json(const IdentificationReport& r) {
  Json j;
  j["order"] = r.order;
  j["pbar"] = r.pbar;
  j["dbar"] = r.dbar;
  j["support_lps"] = r.support_lps;
  j["constraint_note"] = r.constraint_note;
  Json ms = Json::array();
  for (const auto& m : r.methods) {
    Json mj;
    mj["method"] = m.method;
    if (m.theta1.size() > 0) mj["theta1"] = vec_json(m.theta1);
    if (m.method == "MultiStep") {
      Json tp = Json::array();
      for (const auto& t : m.theta_p) tp.push_back(vec_json(t));
      mj["theta_p"] = tp;
    }
    mj["tau_hat"] = m.bounds.tau_hat;
    mj["diagnostics"] = {{"iterations", m.diag.iterations}, {"objective", m.diag.objective},
                         {"feasibility", m.diag.feasibility}, {"converged", m.diag.converged},
                         {"start", m.diag.start}, {"note", m.diag.note}};
    ms.push_back(mj);
  }
  j["methods"] = ms;
  return j;
}

inline Vector json_vec(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<long>(v.size()));
}

inline IdentificationReport identification_from_json(const Json& j, const EstimationReport& est) {
  IdentificationReport r;
  try {
    r.order = j.at("order").get<int>();
    r.pbar = j.at("pbar").get<int>();
    r.dbar = j.at("dbar").get<double>();
    r.support_lps = j.at("support_lps").get<long>();
    r.constraint_note = j.at("constraint_note").get<std::string>();
    for (const auto& mj : j.at("methods")) {
      MethodResult m;
      m.method = mj.at("method").get<std::string>();
      if (mj.contains("theta1")) {
        m.theta1 = json_vec(mj.at("theta1"));
        m.theta_p = propagate_all(m.theta1, r.order, r.pbar).theta;
      } else {
        for (const auto& t : mj.at("theta_p")) m.theta_p.push_back(json_vec(t));
      }
      m.bounds.order = r.order;
      m.bounds.dbar = r.dbar;
      m.bounds.eps_hat = est.eps;
      m.bounds.tau_hat = mj.at("tau_hat").get<std::vector<double>>();
      const Json& d = mj.at("diagnostics");
      m.diag.iterations = d.at("iterations").get<int>();
      m.diag.objective = d.at("objective").get<double>();
      m.diag.feasibility = d.at("feasibility").get<double>();
      m.diag.converged = d.at("converged").get<bool>();
      m.diag.start = d.at("start").get<std::string>();
      m.diag.note = d.at("note").get<std::string>();
      r.methods.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidInput(std::string("malformed identification report: ") + ex.what());
  }
  require(r.order == est.order && r.pbar == est.pbar, "identification report does not match the estimation report");
  return r;
}

// ----------------------------------------------------------------- report

inline std::vector<int> report_horizons(const ExperimentConfig& cfg, int pbar) {
  std::vector<int> ps = cfg.report_horizons;
  if (ps.empty()) ps = {1, 10, 35, pbar};
  std::vector<int> out;
  for (int p : ps) {
    if (p > pbar) throw InvalidInput("report horizon " + std::to_string(p) + " exceeds pbar = " + std::to_string(pbar));
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

/// Methods x {tau_hat_p, e_p} at the requested horizons.
inline std::string table_csv(const IdentificationReport& r, const std::vector<int>& ps) {
  CsvTable csv({"p", "method", "tau_hat", "e_p", "e_le_tau"});
  for (int p : ps) {
    for (const auto& m : r.methods) {
      const auto i = static_cast<std::size_t>(p - 1);
      const double t = m.bounds.tau_hat[i], e = m.bounds.validation_error[i];
      csv.add({std::to_string(p), m.method, format_double(t), format_double(e), e <= t ? "1" : "0"});
    }
  }
  return csv.str();
}

/// Per-horizon curves: tau_hat and e_p of every method.
inline std::string curves_csv(const IdentificationReport& r) {
  std::vector<std::string> header{"p"};
  for (const auto& m : r.methods) header.push_back("tau_" + m.method);
  for (const auto& m : r.methods) header.push_back("e_" + m.method);
  CsvTable csv(header);
  for (int p = 1; p <= r.pbar; ++p) {
    const auto i = static_cast<std::size_t>(p - 1);
    std::vector<std::string> row{std::to_string(p)};
    for (const auto& m : r.methods) row.push_back(format_double(m.bounds.tau_hat[i]));
    for (const auto& m : r.methods) row.push_back(format_double(m.bounds.validation_error[i]));
    csv.add(row);
  }
  return csv.str();
}

/// Counts of e_p > tau_hat_p per method over p = 1..pbar.
inline Json summary_json(const IdentificationReport& r, const std::vector<int>& ps) {
  Json j;
  j["pbar"] = r.pbar;
  j["horizons"] = ps;
  Json viol;
  for (const auto& m : r.methods) {
    int n = 0;
    for (std::size_t i = 0; i < m.bounds.tau_hat.size(); ++i) n += m.bounds.validation_error[i] > m.bounds.tau_hat[i];
    viol[m.method] = n;
  }
  j["bound_violations"] = viol;
  return j;
}

// ------------------------------------------------------------ file stages
//
// Each stage reads its inputs from cfg.output_dir and writes its outputs
// there, recording the FNV-1a hash of every input file.

namespace stage {

inline std::string path(const ExperimentConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.output_dir) / name).string();
}

// run-independent part of the configuration
inline Json config_json(const ExperimentConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("threads");
  return j;
}

inline Json inputs_json(const ExperimentConfig& cfg, const std::vector<std::string>& names) {
  Json j;
  for (const auto& n : names) j[n] = file_hash(path(cfg, n));
  return j;
}

inline IORecord load_record(const ExperimentConfig& cfg, const std::string& name) {
  const std::string p = path(cfg, name);
  if (!std::filesystem::exists(p)) throw InvalidInput("missing " + p + "; run generate first");
  IORecord io = parse_record_csv(read_file(p), p);
  io.Ts = cfg.Ts;
  return io;
}

inline Json load_json(const ExperimentConfig& cfg, const std::string& name, const std::string& producer) {
  const std::string p = path(cfg, name);
  if (!std::filesystem::exists(p)) throw InvalidInput("missing " + p + "; run " + producer + " first");
  try {
    return Json::parse(read_file(p));
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidInput("cannot parse " + p + ": " + ex.what());
  }
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

/// id.csv, val.csv, generate.json
inline void generate(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  const Records r = make_records(cfg);
  write_file(path(cfg, "id.csv"), record_csv(r.id));
  write_file(path(cfg, "val.csv"), record_csv(r.val));
  Json j;
  j["config"] = config_json(cfg);
  if (cfg.external()) j["inputs"] = {{"data", file_hash(cfg.data_path)}};
  j["has_true_output"] = r.id.has_true_output;
  j["outputs"] = inputs_json(cfg, {"id.csv", "val.csv"});
  write_file(path(cfg, "generate.json"), dump(j));
}

/// estimate.json, trace_dbar.csv, trace_order.csv, decay.csv
inline EstimationReport estimate(const ExperimentConfig& cfg, const Log& log = {}, const LpOptions& lp = {}) {
  cfg.validate();
  const IORecord id = load_record(cfg, "id.csv");
  EstimationReport est = smid::estimate(cfg, id, lp, log);
  if (!id.has_true_output) est.containment = "not checked: no true output";
  Json j;
  j["config"] = config_json(cfg);
  j["inputs"] = inputs_json(cfg, {"id.csv"});
  j["estimation"] = to_json(est);
  write_file(path(cfg, "estimate.json"), dump(j));
  write_file(path(cfg, "trace_dbar.csv"), trace_csv(est.dbar_trace));
  write_file(path(cfg, "trace_order.csv"), trace_csv(est.order_trace));
  write_file(path(cfg, "decay.csv"), decay_csv(est));
  return est;
}

inline EstimationReport load_estimation(const ExperimentConfig& cfg) {
  const Json j = load_json(cfg, "estimate.json", "estimate");
  if (!j.contains("estimation")) throw InvalidInput("estimate.json has no estimation section");
  return estimation_from_json(j.at("estimation"));
}

/// identify.json
inline IdentificationReport identify(const ExperimentConfig& cfg, const Log& log = {}, const LpOptions& lp = {}) {
  cfg.validate();
  const IORecord id = load_record(cfg, "id.csv");
  const EstimationReport est = load_estimation(cfg);
  IdentificationReport rep = smid::identify(cfg, id, est, lp, log);
  Json j;
  j["config"] = config_json(cfg);
  j["inputs"] = inputs_json(cfg, {"id.csv", "estimate.json"});
  j["identification"] = to_json(rep);
  write_file(path(cfg, "identify.json"), dump(j));
  return rep;
}

/// table.csv, curves.csv, report.json
inline IdentificationReport report(const ExperimentConfig& cfg) {
  cfg.validate();
  const IORecord val = load_record(cfg, "val.csv");
  const EstimationReport est = load_estimation(cfg);
  const Json ij = load_json(cfg, "identify.json", "identify");
  if (!ij.contains("identification")) throw InvalidInput("identify.json has no identification section");
  IdentificationReport rep = identification_from_json(ij.at("identification"), est);
  evaluate(rep, val);
  const auto ps = report_horizons(cfg, rep.pbar);
  write_file(path(cfg, "table.csv"), table_csv(rep, ps));
  write_file(path(cfg, "curves.csv"), curves_csv(rep));
  Json j;
  j["config"] = config_json(cfg);
  j["inputs"] = inputs_json(cfg, {"val.csv", "estimate.json", "identify.json"});
  j["evaluated_on"] = val.has_true_output ? "noise-free validation output z" : "measured validation output y";
  j["summary"] = summary_json(rep, ps);
  j["outputs"] = inputs_json(cfg, {"table.csv", "curves.csv"});
  write_file(path(cfg, "report.json"), dump(j));
  return rep;
}

inline IdentificationReport all(const ExperimentConfig& cfg, const Log& log = {}, const LpOptions& lp = {}) {
  generate(cfg);
  estimate(cfg, log, lp);
  identify(cfg, log, lp);
  return report(cfg);
}

}  // namespace stage

}  // namespace smid
