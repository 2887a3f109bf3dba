#include <CLI11.hpp>

#include <atomic>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "lookback/certifier.hpp"
#include "lookback/config.hpp"
#include "lookback/engine.hpp"
#include "lookback/renewal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lookback;

namespace {

struct Common {
  std::string config;
  std::string out = "out";
  uint64_t seed = 1;
  long long n_max = -1;  // unset; env LOOKBACK_N_MAX overrides either way
};

long long resolve_cap(long long flag) {
  if (const char* env = std::getenv("LOOKBACK_N_MAX")) {
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0' || v <= 0)
      throw config_error("LOOKBACK_N_MAX must be a positive integer");
    return v;
  }
  if (flag >= 0) {
    if (flag == 0) throw config_error("--n-max must be positive");
    return flag;
  }
  return 10'000'000;
}

std::vector<double> parse_init(const json& cfg, const EnvelopeParams& p) {
  std::vector<double> init;
  if (cfg.contains("init")) {
    init = jvec(cfg, "init");
  } else {
    long long k = jint_or(cfg, "k", 64);
    if (k < 2) throw config_error("'k' must be at least 2");
    init.resize(static_cast<std::size_t>(k));
    for (long long j = 0; j < k; ++j)
      init[static_cast<std::size_t>(j)] = (j % 2 == 0) ? 0.0 : 1.0;
  }
  for (double v : init)
    if (!std::isfinite(v)) throw config_error("'init' must hold finite values");
  long long n_min;
  try {
    n_min = p.min_valid_index();
  } catch (const std::domain_error& e) {
    throw config_error(std::string("schedule unusable at integer indices: ") + e.what());
  }
  if (static_cast<long long>(init.size()) < n_min)
    throw config_error("initial segment shorter than the schedule validity index " +
                       std::to_string(n_min));
  return init;
}

int dump_finding(const std::string& out, const invariant_violation& e,
                 const ProcessTrace* trace) {
  std::ofstream f(out + "/finding.txt", std::ios::binary);
  f << "invariant finding: " << e.what() << "\n";
  if (trace != nullptr) {
    f << "n,a_n\n";
    const std::vector<double>& v = trace->values();
    for (std::size_t i = 0; i < v.size(); ++i)
      f << (i + 1) << ',' << fmt17(v[i]) << '\n';
  }
  std::cerr << "invariant finding: " << e.what() << '\n';
  return 4;
}

int run_simulate(const json& cfg, const Common& c) {
  EnvelopeParams p = parse_schedule(cfg);
  std::vector<double> init = parse_init(cfg, p);
  long long cap = resolve_cap(c.n_max);
  long long horizon = jint_or(cfg, "horizon", 10000);
  if (horizon <= static_cast<long long>(init.size()))
    throw config_error("'horizon' must exceed the initial segment length");
  if (horizon > cap)
    throw cap_exceeded("horizon " + std::to_string(horizon) +
                           " exceeds the index cap " + std::to_string(cap), cap);
  long long stride = jint_or(cfg, "stride", 1);
  if (stride < 1) throw config_error("'stride' must be positive");
  std::string mode = jstr_or(cfg, "mode", "interval");
  if (mode != "interval" && mode != "max" && mode != "min")
    throw config_error("'mode' must be interval, max, or min");

  LambdaSchedule lam = LambdaSchedule::constant(0.5);
  std::string lam_desc = "0.5";
  if (cfg.contains("lambda")) {
    const json& l = cfg.at("lambda");
    if (l.is_string()) {
      if (l.get<std::string>() != "random")
        throw config_error("'lambda' must be a number or \"random\"");
      auto rng = std::make_shared<std::mt19937_64>(c.seed);
      lam = LambdaSchedule{[rng](long long) {
        std::uniform_real_distribution<double> U(0.0, 1.0);
        return U(*rng);
      }};
      lam_desc = "random";
    } else if (l.is_number()) {
      lam = LambdaSchedule::constant(l.get<double>());
      lam_desc = fmt17(l.get<double>());
    } else {
      throw config_error("'lambda' must be a number or \"random\"");
    }
  }

  fs::create_directories(c.out);
  ProcessTrace trace(init, cap);
  try {
    while (trace.size() < horizon) {
      long long n = trace.size();
      if (mode == "interval")
        step_interval(trace, p.eps(n), p.delta(n), lam.at(n));
      else if (mode == "max")
        step_extremal_max(trace, p.eps(n), p.delta(n));
      else
        step_extremal_min(trace, p.eps(n), p.delta(n));
    }
  } catch (const invariant_violation& e) {
    return dump_finding(c.out, e, &trace);
  }

  CsvWriter w(c.out + "/trace.csv",
              {"simulate mode=" + mode + " lambda=" + lam_desc,
               "horizon=" + std::to_string(horizon) + " seed=" + std::to_string(c.seed)},
              {});
  export_csv(trace, w.stream(), stride);
  return 0;
}

int run_diverge(const json& cfg, const Common& c) {
  EnvelopeParams p = parse_schedule(cfg);
  ConstantsLedger led = parse_ledger(cfg);
  long long cap = resolve_cap(c.n_max);
  DivergenceOpts opts;
  opts.k = jint_or(cfg, "k", 10000);
  opts.T_max = jint_or(cfg, "T_max", 16);
  opts.erosion_C = jnum_or(cfg, "erosion_C", -1.0);
  opts.n_max = cap;
  if (opts.k < 2 || opts.T_max < 1) throw config_error("'k' and 'T_max' must be positive");
  if (opts.k > cap)
    throw cap_exceeded("initial length " + std::to_string(opts.k) +
                           " exceeds the index cap " + std::to_string(cap), cap);

  DivergenceReport rep;
  try {
    rep = construct_divergence(p, led, opts);
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("diverge rejected: ") + e.what());
  }

  fs::create_directories(c.out);
  CsvWriter stages(c.out + "/stages.csv", {"diverge stage ledger"},
                   {"T", "n_T", "log_n_T", "B_T", "U_T", "eps_star", "delta_star",
                    "stage_max", "stage_min", "invariant_ok", "witness_ok", "direct"});
  for (const DivergenceStage& st : rep.stages)
    stages.row(st.T, st.n_T, st.log_n_T, st.B_T, st.U_T, st.eps_star, st.delta_star,
               st.stage_max, st.stage_min, st.invariant_ok, st.witness_ok, st.direct);

  CsvWriter sum(c.out + "/summary.csv", {"diverge summary"},
                {"direct_stages", "alternations", "invariants_ok", "pi_seq", "pi_log",
                 "pi_consistent", "final_B", "final_U"});
  sum.row(rep.direct_stages, rep.alternations, rep.invariants_ok, rep.pi_product_seq,
          rep.pi_product_log, rep.pi_consistent, rep.final_B, rep.final_U);

  long long stride = jint_or(cfg, "stride", 1);
  if (stride < 1) throw config_error("'stride' must be positive");
  CsvWriter tr(c.out + "/trace.csv", {"diverge trace"}, {"n", "a_n"});
  for (std::size_t i = 0; i < rep.values.size();
       i += static_cast<std::size_t>(stride))
    tr.row(static_cast<long long>(i + 1), rep.values[i]);
  return 0;
}

int run_certify(const json& cfg, const Common& c) {
  EnvelopeParams p = parse_schedule(cfg);
  ConstantsLedger led = parse_ledger(cfg);
  long long cap = resolve_cap(c.n_max);
  CertifyOpts opts;
  opts.n0 = jint_or(cfg, "n0", 64);
  opts.B0 = jnum_or(cfg, "B0", 0.0);
  opts.U0 = jnum_or(cfg, "U0", 1.0);
  opts.T_max = jint_or(cfg, "T_max", 32);
  opts.n_direct_max = std::min(jint_or(cfg, "n_direct_max", 1'000'000), cap);
  opts.max_log_n = jnum_or(cfg, "max_log_n", 1e6);
  opts.gap_floor = jnum_or(cfg, "gap_floor", 1e-9);
  opts.lambda_even = jnum_or(cfg, "lambda_even", 1.0);
  opts.lambda_odd = jnum_or(cfg, "lambda_odd", 0.0);
  if (cfg.contains("init")) opts.init = jvec(cfg, "init");
  if (!(opts.lambda_even >= 0.0 && opts.lambda_even <= 1.0) ||
      !(opts.lambda_odd >= 0.0 && opts.lambda_odd <= 1.0))
    throw config_error("stage mixing weights must lie in [0,1]");

  CertifyReport rep;
  try {
    rep = certify_convergence_schedule(p, led, opts);
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("certify rejected: ") + e.what());
  }

  fs::create_directories(c.out);
  CsvWriter stages(c.out + "/stages.csv", {"certify stage ledger"},
                   {"T", "n_T", "log_n_T", "B_T", "U_T", "gap", "eps_star",
                    "delta_star", "case", "fired_at", "margin", "tie", "term",
                    "partial_sum", "containment_violations", "direct"});
  for (const StageRow& r : rep.stages)
    stages.row(r.T, r.n_T, r.log_n_T, r.B_T, r.U_T, r.gap, r.eps_star, r.delta_star,
               r.case_fired, r.fired_at, r.margin, r.tie, r.term, r.partial_sum,
               r.containment_violations, r.direct);

  CsvWriter sum(c.out + "/summary.csv", {"certify summary"},
                {"terminated", "summability_warning", "direct_stages", "final_gap",
                 "final_B", "final_U", "containment_violations"});
  sum.row(rep.terminated, rep.summability_warning, rep.direct_stages, rep.final_gap,
          rep.final_B, rep.final_U, rep.containment_violations);
  return 0;
}

int run_series(const json& cfg, const Common& c) {
  EnvelopeParams p = parse_schedule(cfg);
  ConstantsLedger led = parse_ledger(cfg);
  SeriesOpts opts;
  if (cfg.contains("log_n0"))
    opts.log_n0 = jnum(cfg, "log_n0");
  else
    opts.log_n0 = std::log(static_cast<double>(jint_or(cfg, "n0", 10000)));
  opts.T_max = jint_or(cfg, "T_max", 1'000'000);
  opts.gap0 = jnum_or(cfg, "gap0", 1.0);
  opts.cauchy_tol = jnum_or(cfg, "cauchy_tol", 1e-3);
  opts.deadline_seconds = jnum_or(cfg, "deadline_seconds", 120.0);

  SeriesReport rep;
  try {
    rep = series_dichotomy(p, led, opts);
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("series rejected: ") + e.what());
  }

  fs::create_directories(c.out);
  CsvWriter rows(c.out + "/rows.csv", {"series partial sums (sampled rows)"},
                 {"T", "x_T", "term", "partial", "gap"});
  for (const SeriesRow& r : rep.rows) rows.row(r.T, r.x_T, r.term, r.partial, r.gap);

  CsvWriter sum(c.out + "/summary.csv", {"series summary"},
                {"regime", "s_exponent", "total", "iterations", "cauchy_T",
                 "remainder_bound", "fitted_exponent", "notes"});
  sum.row(rep.regime, rep.s_exponent, rep.total, rep.iterations, rep.cauchy_T,
          rep.remainder_bound, rep.fitted_exponent, rep.notes);
  return 0;
}

int run_renewal(const json& cfg, const Common& c) {
  ShapeDensity shape = parse_shape(cfg);
  long long cap = resolve_cap(c.n_max);
  std::string op = jstr_or(cfg, "op", "overshoot");

  if (op == "overshoot") {
    double s = jnum_or(cfg, "s", 30.0);
    long long samples = jint_or(cfg, "samples", 100000);
    if (!(s > 0.0) || samples < 1) throw config_error("'s' and 'samples' must be positive");
    OvershootLaw law;
    try {
      law = overshoot_law(shape);
    } catch (const std::domain_error& e) {
      throw config_error(std::string("overshoot rejected: ") + e.what());
    }
    OvershootSample sim = simulate_overshoot(shape, s, samples, c.seed);
    double ks = ks_distance(sim.r, law.overshoot_cdf);

    fs::create_directories(c.out);
    CsvWriter sum(c.out + "/summary.csv", {"overshoot law against simulation"},
                  {"mu", "s", "samples", "ks", "overshoot_norm", "tilted_norm",
                   "mean_steps"});
    sum.row(law.mu, s, samples, ks, law.overshoot_norm, law.tilted_norm,
            sim.mean_steps);
    long long stride =
        std::max<long long>(1, static_cast<long long>(sim.r.size()) / 10000);
    CsvWriter samp(c.out + "/samples.csv", {"sorted overshoot samples"},
                   {"rank", "r", "model_cdf"});
    for (std::size_t i = 0; i < sim.r.size(); i += static_cast<std::size_t>(stride))
      samp.row(static_cast<long long>(i), sim.r[i], law.overshoot_cdf(sim.r[i]));
    return 0;
  }

  if (op == "limit") {
    std::vector<double> init = cfg.contains("init") ? jvec(cfg, "init")
                                                    : std::vector<double>{0.0, 1.0};
    long long N = jint_or(cfg, "N", 100000);
    if (N <= static_cast<long long>(init.size()))
      throw config_error("'N' must exceed the initial segment length");
    if (N > cap)
      throw cap_exceeded("N " + std::to_string(N) + " exceeds the index cap " +
                             std::to_string(cap), cap);
    FixedShapeOpts fopts;
    fopts.n_max = cap;
    fopts.exact_until = jint_or(cfg, "exact_until", fopts.exact_until);
    FixedShapeResult run = run_fixed_shape(shape, init, N, fopts);
    LimitFormulaReport rep;
    bool have_formula = true;
    try {
      rep = verify_limit_formula(shape, run, jnum_or(cfg, "tol", 1e-3));
    } catch (const std::invalid_argument&) {
      have_formula = false;  // trace did not stabilize; still emit the trace
    }

    fs::create_directories(c.out);
    long long stride = std::max<long long>(1, N / 100000);
    CsvWriter tr(c.out + "/trace.csv", {"fixed-shape trace"}, {"n", "a_n"});
    for (std::size_t i = 0; i < run.values.size();
         i += static_cast<std::size_t>(stride))
      tr.row(static_cast<long long>(i + 1), run.values[i]);
    CsvWriter sum(c.out + "/limit.csv", {"limit identity check"},
                  {"N", "limit", "stabilization", "formula_available", "a1_term",
                   "correction", "rhs", "resid", "tail_bound", "mu", "pass"});
    sum.row(run.N, run.limit, run.stabilization, have_formula, rep.a1_term,
            rep.correction, rep.rhs, rep.resid, rep.tail_bound, rep.mu, rep.pass);
    return 0;
  }

  if (op == "l1") {
    std::vector<double> xs;
    if (cfg.contains("xs")) {
      xs = jvec(cfg, "xs");
    } else {
      double x0 = jnum_or(cfg, "x_min", 10.0);
      double x1 = jnum_or(cfg, "x_max", 10000.0);
      long long pts = jint_or(cfg, "points", 12);
      if (!(x0 >= 1.0) || !(x1 > x0) || pts < 2)
        throw config_error("need 1 <= x_min < x_max and points >= 2");
      double r = std::pow(x1 / x0, 1.0 / static_cast<double>(pts - 1));
      for (long long i = 0; i < pts; ++i) xs.push_back(x0 * std::pow(r, static_cast<double>(i)));
    }
    for (double x : xs)
      if (!(x >= 1.0)) throw config_error("'xs' entries must be >= 1");
    DecayFit fit = l1_decay_fit(shape, xs);

    fs::create_directories(c.out);
    CsvWriter rows(c.out + "/l1.csv", {"discretization error by index scale"},
                   {"x", "l1"});
    for (const L1Report& r : fit.points) rows.row(r.x, r.l1);
    CsvWriter sum(c.out + "/fit.csv", {"power-law fit of the decay"},
                  {"C_hat", "kappa_hat"});
    sum.row(fit.C_hat, fit.kappa_hat);
    return 0;
  }

  if (op == "identity") {
    std::string gname = jstr_or(cfg, "g", "capped-exp");
    GFunc g;
    if (gname == "const") {
      g = {"const", [](double) { return 0.7; }, 0.7};
    } else if (gname == "capped-exp") {
      g = {"capped-exp", [](double s) { return std::min(1.0, std::exp(-s)); }, 1.0};
    } else if (gname == "smoothstep") {
      g = {"smoothstep",
           [](double s) {
             if (s <= 0.0) return 1.0;
             if (s >= 1.0) return 0.0;
             return 1.0 - s * s * (3.0 - 2.0 * s);
           },
           1.0};
    } else {
      throw config_error("'g' must be const, capped-exp, or smoothstep");
    }
    std::vector<double> s_list =
        cfg.contains("s_list") ? jvec(cfg, "s_list") : std::vector<double>{2.0, 10.0};
    long long paths = jint_or(cfg, "paths", 20000);
    if (paths < 1) throw config_error("'paths' must be positive");
    std::vector<IdentityRow> rows;
    try {
      rows = renewal_identity_check(g, shape, s_list, paths, c.seed);
    } catch (const std::invalid_argument& e) {
      throw config_error(std::string("identity rejected: ") + e.what());
    }
    fs::create_directories(c.out);
    CsvWriter w(c.out + "/identity.csv", {"renewal identity, g=" + g.name},
                {"s", "lhs", "mc_mean", "mc_stderr", "tol", "pass"});
    for (const IdentityRow& r : rows)
      w.row(r.s, r.lhs, r.mc_mean, r.mc_stderr, r.tol, r.pass);
    return 0;
  }

  if (op == "measure") {
    double a = jnum_or(cfg, "a", 2.0), b = jnum_or(cfg, "b", 3.0);
    long long paths = jint_or(cfg, "paths", 20000);
    RenewalMeasureEstimate est;
    try {
      est = estimate_renewal_measure(shape, a, b, paths, c.seed);
    } catch (const std::invalid_argument& e) {
      throw config_error(std::string("measure rejected: ") + e.what());
    }
    fs::create_directories(c.out);
    CsvWriter w(c.out + "/measure.csv", {"renewal measure estimate"},
                {"a", "b", "visits_mean", "visits_stderr", "blackwell_ratio"});
    w.row(est.a, est.b, est.visits_mean, est.visits_stderr, est.blackwell_ratio);
    return 0;
  }

  throw config_error("renewal op must be overshoot, limit, l1, identity, or measure");
}

struct SweepCell {
  std::string name;
  double A, alpha, B, beta;
  double lambda;
  bool has_lambda;
  uint64_t seed;
  long long n = 0;
  double final_v = 0.0, mean = 0.0, vmin = 0.0, vmax = 0.0;
  std::string status = "ok";
};

int run_sweep(const json& cfg, const Common& c, int workers) {
  const json& base = jrequire(cfg, "base");
  if (!base.is_object()) throw config_error("'base' must be an object");
  const json& axes = jrequire(cfg, "axes");
  if (!axes.is_object() || axes.empty())
    throw config_error("'axes' must be a non-empty object");

  const json& sched = jrequire(base, "schedule");
  double A0 = jnum(sched, "A"), alpha0 = jnum(sched, "alpha");
  double B0 = jnum(sched, "B"), beta0 = jnum(sched, "beta");
  double lambda0 = jnum_or(base, "lambda", 0.5);
  long long cap = resolve_cap(c.n_max);
  long long horizon = jint_or(base, "horizon", 10000);
  if (horizon > cap)
    throw cap_exceeded("horizon " + std::to_string(horizon) +
                           " exceeds the index cap " + std::to_string(cap), cap);
  std::string mode = jstr_or(base, "mode", "interval");
  if (mode != "interval" && mode != "max" && mode != "min")
    throw config_error("'mode' must be interval, max, or min");

  std::vector<std::string> keys;
  std::vector<std::vector<double>> grids;
  for (auto it = axes.begin(); it != axes.end(); ++it) {
    const std::string& k = it.key();
    if (k != "A" && k != "alpha" && k != "B" && k != "beta" && k != "lambda")
      throw config_error("sweep axis '" + k + "' is not a schedule field");
    std::vector<double> vals = jvec(axes, k.c_str());
    if (vals.empty()) throw config_error("sweep axis '" + k + "' is empty");
    keys.push_back(k);
    grids.push_back(std::move(vals));
  }

  std::vector<SweepCell> cells;
  std::vector<std::size_t> idx(keys.size(), 0);
  for (;;) {
    SweepCell cell;
    cell.A = A0;
    cell.alpha = alpha0;
    cell.B = B0;
    cell.beta = beta0;
    cell.lambda = lambda0;
    cell.has_lambda = base.contains("lambda");
    std::string name;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      double v = grids[i][idx[i]];
      if (keys[i] == "A") cell.A = v;
      else if (keys[i] == "alpha") cell.alpha = v;
      else if (keys[i] == "B") cell.B = v;
      else if (keys[i] == "beta") cell.beta = v;
      else { cell.lambda = v; cell.has_lambda = true; }
      if (i) name += ',';
      name += keys[i] + "=" + fmt17(v);
    }
    cell.name = name;
    cell.seed = c.seed ^ fnv1a64(name);
    cells.push_back(std::move(cell));
    std::size_t d = 0;
    while (d < idx.size() && ++idx[d] == grids[d].size()) idx[d++] = 0;
    if (d == idx.size()) break;
  }

  // every cell must validate before anything is written
  std::vector<std::vector<double>> inits(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    json cell_cfg = base;
    cell_cfg["schedule"] =
        json{{"A", cells[i].A}, {"alpha", cells[i].alpha}, {"B", cells[i].B},
             {"beta", cells[i].beta}};
    try {
      EnvelopeParams p = parse_schedule(cell_cfg);
      inits[i] = parse_init(cell_cfg, p);
    } catch (const config_error& e) {
      throw config_error("cell '" + cells[i].name + "': " + e.what());
    }
    if (horizon <= static_cast<long long>(inits[i].size()))
      throw config_error("'horizon' must exceed the initial segment length");
  }

  int nw = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      SweepCell& cell = cells[i];
      try {
        EnvelopeParams p =
            EnvelopeParams::make(cell.A, cell.alpha, cell.B, cell.beta);
        ProcessTrace trace(inits[i], cap);
        std::mt19937_64 rng(cell.seed);
        std::uniform_real_distribution<double> U(0.0, 1.0);
        double vmin = trace.init_min(), vmax = trace.init_max();
        while (trace.size() < horizon) {
          long long n = trace.size();
          double a;
          if (mode == "interval")
            a = step_interval(trace, p.eps(n), p.delta(n),
                              cell.has_lambda ? cell.lambda : U(rng));
          else if (mode == "max")
            a = step_extremal_max(trace, p.eps(n), p.delta(n));
          else
            a = step_extremal_min(trace, p.eps(n), p.delta(n));
          vmin = std::min(vmin, a);
          vmax = std::max(vmax, a);
        }
        cell.n = trace.size();
        cell.final_v = trace.value(trace.size());
        cell.mean = trace.mean();
        cell.vmin = vmin;
        cell.vmax = vmax;
      } catch (const invariant_violation&) {
        cell.status = "invariant";
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < nw; ++t) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();

  fs::create_directories(c.out);
  CsvWriter sum(c.out + "/summary.csv",
                {"sweep mode=" + mode + " horizon=" + std::to_string(horizon),
                 "seed=" + std::to_string(c.seed)},
                {"cell", "A", "alpha", "B", "beta", "lambda", "n", "final",
                 "mean", "min", "max", "status"});
  bool any_invariant = false;
  for (const SweepCell& cell : cells) {
    sum.row(cell.name, cell.A, cell.alpha, cell.B, cell.beta,
            cell.has_lambda ? fmt17(cell.lambda) : std::string("random"),
            cell.n, cell.final_v, cell.mean, cell.vmin, cell.vmax, cell.status);
    if (cell.status != "ok") any_invariant = true;
  }
  if (any_invariant) {
    std::cerr << "invariant finding: one or more sweep cells failed\n";
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lookback-averaging process toolkit"};
  app.set_version_flag("--version", "lookback 0.1.0");
  app.require_subcommand(1);

  Common common;
  int workers = 1;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file")->required();
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed, "RNG seed");
    sub->add_option("--n-max", common.n_max, "hard cap on simulated indices");
  };
  add_common(app.add_subcommand("simulate", "run one trace under a schedule"));
  add_common(app.add_subcommand("diverge", "alternating extremal stage construction"));
  add_common(app.add_subcommand("certify", "stagewise convergence certificate"));
  add_common(app.add_subcommand("series", "stage-index series dichotomy"));
  add_common(app.add_subcommand("renewal", "fixed-shape and renewal checks"));
  CLI::App* sweep = app.add_subcommand("sweep", "grid of simulate runs");
  add_common(sweep);
  sweep->add_option("--workers", workers, "thread count for sweep cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }

  std::string sub = app.get_subcommands().front()->get_name();
  try {
    json cfg = load_json_file(common.config);
    if (sub == "simulate") return run_simulate(cfg, common);
    if (sub == "diverge") return run_diverge(cfg, common);
    if (sub == "certify") return run_certify(cfg, common);
    if (sub == "series") return run_series(cfg, common);
    if (sub == "renewal") return run_renewal(cfg, common);
    if (sub == "sweep") return run_sweep(cfg, common, workers);
    std::cerr << "unknown subcommand\n";
    return 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cap_exceeded& e) {
    std::cerr << e.what() << '\n';
    return 3;
  } catch (const invariant_violation& e) {
    std::cerr << "invariant finding: " << e.what() << '\n';
    return 4;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
