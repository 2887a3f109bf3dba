#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lookback/common.hpp"
#include "lookback/engine.hpp"
#include "lookback/envelope.hpp"

namespace lookback {

namespace detail {

// Smallest root of x - s*log(x) = tau to the right of the vertex x = s.
// The map is increasing and convex there, so Newton from any point with
// h(x) >= tau descends monotonically onto the root.
inline double solve_stage_h(double s, double tau) {
  if (s <= 0.0) return tau;
  double hmin = s - s * std::log(s);
  if (tau < hmin - 1e-12)
    throw std::invalid_argument("stage equation has no root right of its vertex");
  double x = std::max(tau + s * std::log(std::max(tau, s + 1.0)), s * 1.5 + 1.0);
  auto h = [s](double y) { return y - s * std::log(y); };
  while (h(x) < tau) x *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double f = h(x) - tau;
    if (std::abs(f) <= 1e-13 * std::max(1.0, std::abs(tau))) break;
    double step = f / (1.0 - s / x);
    double nx = x - step;
    if (!(nx > s)) nx = 0.5 * (x + s);
    if (std::abs(nx - x) <= 1e-15 * x) {
      x = nx;
      break;
    }
    x = nx;
  }
  return x;
}

}  // namespace detail

struct StageSolve {
  double tau = 0.0;
  double log_n_next = 0.0;
  long long n_next = 0;  // 0 once past the integer range
};

// Next stage index n_{T+1} from log n_T and the current gap:
// log n_{T+1} - (2 alpha + 3 beta) log log n_{T+1} = log n_T
//   + 2 log K - 2 log gap - 2 log A - 3 log B.
inline StageSolve solve_next_stage_index(const EnvelopeParams& p,
                                         const ConstantsLedger& ledger,
                                         double log_n_T, double gap,
                                         double max_log_n = 1e6) {
  if (!(gap > 0.0) || !(gap <= 1.0))
    throw std::invalid_argument("solve_next_stage_index: gap in (0,1]");
  if (!(log_n_T >= p.log_min_valid_index() * (1.0 - 1e-12)))
    throw std::invalid_argument("solve_next_stage_index: start below schedule validity");
  StageSolve out;
  out.tau = log_n_T + 2.0 * std::log(ledger.K) - 2.0 * std::log(gap) -
            2.0 * std::log(p.A()) - 3.0 * std::log(p.B());
  double s = 2.0 * p.alpha() + 3.0 * p.beta();
  double x = detail::solve_stage_h(s, out.tau);
  if (x <= log_n_T)
    throw invariant_violation("solve_next_stage_index: stage index failed to advance");
  if (x > max_log_n) throw cap_exceeded(static_cast<long long>(max_log_n));
  out.log_n_next = x;
  if (x <= 43.0) {
    long long n0 = static_cast<long long>(std::ceil(std::exp(x) - 1e-9));
    auto h = [s](double y) { return y - s * std::log(y); };
    long long best = n0 + 2;
    for (long long n = std::max<long long>(n0 - 2, 2); n <= n0 + 2; ++n) {
      if (h(std::log(static_cast<double>(n))) >= out.tau - 1e-12) {
        best = n;
        break;
      }
    }
    out.n_next = best;
  }
  return out;
}

struct AuxBoundReport {
  long long k = 0;
  long long horizon = 0;
  long long ones = 0;
  double gamma_eff = 0.0;
  double eps_k = 0.0, delta_k = 0.0;
  bool hypothesis_ok = false;  // gamma_eff <= delta at the freeze index
  bool dominated = false;      // a_n <= u_n for every generated index
  long long first_violation = 0;
  double max_ratio = 0.0;  // sup_n a_n * eps_k * delta_k / gamma_eff
  bool recursion_consistent = false;
  double delta_rec_final = 0.0, delta_direct_final = 0.0;
  bool delta_bounded = false;  // Delta_n <= ones/(eps_n delta_n) throughout
  double bound_slack = 0.0;
};

// Pits the hardest-driving trace (extremal-max from a 0/1 split with
// ones = round(gamma k)) against the scalar recursion
//   u_{n+1} = eps_n ubar_n + (1 - eps_n) u_n + ones/(delta_n n),  u_j = 0 (j <= k)
// and tracks Delta_n = n u_n - sum_{j<=n} u_j both recursively and directly.
inline AuxBoundReport run_aux_bound(const EnvelopeParams& p, long long k,
                                    double gamma, long long horizon,
                                    long long n_max = 10'000'000) {
  if (k < 2) throw std::invalid_argument("run_aux_bound: k >= 2");
  if (!(gamma > 0.0 && gamma <= 0.5))
    throw std::invalid_argument("run_aux_bound: gamma in (0, 1/2]");
  if (horizon <= k) throw std::invalid_argument("run_aux_bound: horizon > k");
  if (k < p.min_valid_index())
    throw std::invalid_argument("run_aux_bound: k below schedule validity");

  AuxBoundReport rep;
  rep.k = k;
  rep.horizon = horizon;
  rep.ones = std::llround(gamma * static_cast<double>(k));
  if (rep.ones < 1) rep.ones = 1;
  rep.gamma_eff = static_cast<double>(rep.ones) / static_cast<double>(k);
  rep.eps_k = p.eps(k);
  rep.delta_k = p.delta(k);
  rep.hypothesis_ok = rep.gamma_eff <= rep.delta_k + 1e-12;

  std::vector<double> init(static_cast<std::size_t>(k), 0.0);
  for (long long j = k - rep.ones; j < k; ++j) init[static_cast<std::size_t>(j)] = 1.0;
  ProcessTrace trace(init, n_max);

  double u_cur = 0.0;
  RunningSum u_sum;
  double delta_rec = 0.0;
  double ones_d = static_cast<double>(rep.ones);
  rep.dominated = true;
  rep.recursion_consistent = true;
  rep.delta_bounded = true;
  rep.bound_slack = std::numeric_limits<double>::infinity();

  for (long long n = k; n < horizon; ++n) {
    double eps = p.eps(n), delta = p.delta(n);
    double a_next = step_extremal_max(trace, eps, delta);
    double ubar = u_sum.value() / static_cast<double>(n);
    double u_next = eps * ubar + (1.0 - eps) * u_cur + ones_d / (delta * static_cast<double>(n));
    u_sum.add(u_next);
    u_cur = u_next;

    delta_rec = (1.0 - eps) * delta_rec + ones_d / delta;
    double delta_direct =
        static_cast<double>(n + 1) * u_next - u_sum.value();
    if (std::abs(delta_rec - delta_direct) >
        1e-10 * std::max(1.0, std::abs(delta_direct)))
      rep.recursion_consistent = false;
    rep.delta_rec_final = delta_rec;
    rep.delta_direct_final = delta_direct;

    double cap = ones_d / (eps * delta);
    rep.bound_slack = std::min(rep.bound_slack, cap - delta_direct);
    if (delta_direct > cap * (1.0 + 1e-9) + 1e-12) rep.delta_bounded = false;

    if (a_next > u_next * (1.0 + 1e-9) + 1e-12 && rep.dominated) {
      rep.dominated = false;
      rep.first_violation = n + 1;
    }
    rep.max_ratio = std::max(rep.max_ratio,
                             a_next * rep.eps_k * rep.delta_k / rep.gamma_eff);
  }
  return rep;
}

struct LowerBoundReport {
  long long k = 0;
  long long ones = 0;
  long long N_star = 0;
  double eps = 0.0, delta = 0.0, gamma_eff = 0.0;
  double threshold = 0.0;
  long long count_above = 0;
  bool pass = false;
};

// With frozen parameters and gamma >= 2 delta, at least half of the first
// N* = ones/(2 delta) indices of the extremal-max trace sit above
// 1 - eps (5 delta / gamma)^{1 - eps}.
inline LowerBoundReport check_lower_bound_growth(double eps, double delta,
                                                 double gamma, long long k,
                                                 long long n_max = 10'000'000) {
  check_step_params(eps, delta);
  if (!(gamma > 0.0 && gamma <= 0.5))
    throw std::invalid_argument("check_lower_bound_growth: gamma in (0, 1/2]");
  if (!(gamma >= 2.0 * delta))
    throw std::invalid_argument("check_lower_bound_growth: needs gamma >= 2 delta");
  if (k < 2) throw std::invalid_argument("check_lower_bound_growth: k >= 2");

  LowerBoundReport rep;
  rep.k = k;
  rep.eps = eps;
  rep.delta = delta;
  rep.ones = std::llround(gamma * static_cast<double>(k));
  if (rep.ones < 1) rep.ones = 1;
  rep.gamma_eff = static_cast<double>(rep.ones) / static_cast<double>(k);
  rep.N_star = static_cast<long long>(
      std::floor(static_cast<double>(rep.ones) / (2.0 * delta) + 1e-9));
  if (rep.N_star > n_max) throw cap_exceeded(n_max);
  rep.threshold =
      1.0 - eps * std::pow(5.0 * delta / rep.gamma_eff, 1.0 - eps);

  std::vector<double> init(static_cast<std::size_t>(k), 0.0);
  for (long long j = k - rep.ones; j < k; ++j) init[static_cast<std::size_t>(j)] = 1.0;
  ProcessTrace trace(init, n_max);
  while (trace.size() < rep.N_star) step_extremal_max(trace, eps, delta);

  long long cnt = 0;
  long long upto = std::min(rep.N_star, trace.size());
  for (long long j = 1; j <= upto; ++j)
    if (trace.value(j) >= rep.threshold - 1e-12) ++cnt;
  rep.count_above = cnt;
  rep.pass = 2 * cnt >= rep.N_star;
  return rep;
}

inline LowerBoundReport check_lower_bound_growth(const EnvelopeParams& p,
                                                 double gamma, long long k,
                                                 long long n_max = 10'000'000) {
  if (k < p.min_valid_index())
    throw std::invalid_argument("check_lower_bound_growth: k below schedule validity");
  return check_lower_bound_growth(p.eps(k), p.delta(k), gamma, k, n_max);
}

struct CertifyOpts {
  long long n0 = 64;
  double B0 = 0.0, U0 = 1.0;
  std::vector<double> init;  // empty: alternating B0/U0 fill of length n0
  long long T_max = 32;
  long long n_direct_max = 1'000'000;
  double max_log_n = 1e6;
  double gap_floor = 1e-9;
  double lambda_even = 1.0, lambda_odd = 0.0;
};

struct StageRow {
  long long T = 0;
  double log_n_T = 0.0;
  long long n_T = 0;  // 0 in the log-space continuation
  double B_T = 0.0, U_T = 0.0, gap = 0.0;
  double eps_star = 0.0, delta_star = 0.0;
  int case_fired = 0;  // 1 mean-low, 2 mean-high, 3 neither, -1 synthetic
  long long fired_at = 0;
  double margin = 0.0;
  bool tie = false;
  double term = 0.0;         // drift applied to the active bound
  double partial_sum = 0.0;  // running sum of drifts
  long long containment_violations = 0;
  bool direct = false;
};

struct CertifyReport {
  std::vector<StageRow> stages;
  bool terminated = false;  // gap hit the floor
  bool summability_warning = false;
  long long direct_stages = 0;
  double final_gap = 0.0;
  double final_U = 0.0, final_B = 0.0;
  long long containment_violations = 0;
};

// Stagewise certificate: run the true schedule between stage indices, watch
// the running mean against the sqrt(delta)-interpolated bracket, and tighten
// whichever side the mean certifies.  Once indices leave the direct range the
// gap continues in log space under the worst-case tightening factor.
inline CertifyReport certify_convergence_schedule(const EnvelopeParams& p,
                                                  const ConstantsLedger& ledger,
                                                  const CertifyOpts& opts) {
  ledger.validate();
  if (opts.n0 < p.min_valid_index())
    throw std::invalid_argument("certify: n0 below schedule validity");
  if (!(opts.U0 >= opts.B0))
    throw std::invalid_argument("certify: U0 >= B0 required");

  CertifyReport rep;
  rep.summability_warning = p.alpha() + 0.5 * p.beta() > 1.0;

  std::vector<double> init = opts.init;
  if (init.empty()) {
    init.resize(static_cast<std::size_t>(opts.n0));
    for (long long j = 0; j < opts.n0; ++j)
      init[static_cast<std::size_t>(j)] = (j % 2 == 0) ? opts.B0 : opts.U0;
  }
  if (static_cast<long long>(init.size()) != opts.n0)
    throw std::invalid_argument("certify: init length must equal n0");
  for (double v : init)
    if (v < opts.B0 - 1e-12 || v > opts.U0 + 1e-12)
      throw std::invalid_argument("certify: init outside [B0, U0]");

  double B = opts.B0, U = opts.U0;
  double gap = U - B;
  double partial = 0.0;
  double log_n = std::log(static_cast<double>(opts.n0));
  long long n_cur = opts.n0;
  bool direct = true;
  ProcessTrace trace(init, std::max(opts.n_direct_max, opts.n0));

  for (long long T = 0; T < opts.T_max; ++T) {
    StageRow row;
    row.T = T;
    row.log_n_T = log_n;
    row.n_T = direct ? n_cur : 0;
    row.B_T = B;
    row.U_T = U;
    row.gap = gap;
    row.direct = direct;

    if (gap <= opts.gap_floor) {
      row.term = 0.0;
      row.partial_sum = partial;
      rep.stages.push_back(row);
      rep.terminated = true;
      break;
    }

    StageSolve solve = solve_next_stage_index(p, ledger, log_n, gap, opts.max_log_n);
    if (direct && (solve.n_next == 0 || solve.n_next > opts.n_direct_max))
      direct = false;

    double eps_s, delta_s;
    if (direct) {
      eps_s = p.eps(solve.n_next);
      delta_s = p.delta(solve.n_next);
    } else {
      eps_s = p.eps_log(solve.log_n_next);
      delta_s = p.delta_log(solve.log_n_next);
    }
    row.eps_star = eps_s;
    row.delta_star = delta_s;

    double drift;
    if (direct) {
      long long n_next = solve.n_next;
      double lam = (T % 2 == 0) ? opts.lambda_even : opts.lambda_odd;
      long long scan_from = static_cast<long long>(std::ceil(
          static_cast<double>(n_cur) * ledger.K / (eps_s * delta_s * delta_s * gap)));
      scan_from = std::clamp(scan_from, n_cur + 1, n_next);

      long long fired = 0;
      int which = 0;
      double margin = 0.0;
      bool tie = false;
      while (trace.size() < n_next) {
        step_interval(trace, p.eps(trace.size()), p.delta(trace.size()), lam);
        long long m = trace.size();
        double a_new = trace.value(m);
        if (a_new < B - 1e-9 || a_new > U + 1e-9) ++row.containment_violations;
        if (fired == 0 && m >= scan_from) {
          double sd = std::sqrt(p.delta(m));
          double mbar = trace.mean();
          double low_rhs = sd * U + (1.0 - sd) * B;
          double high_rhs = sd * B + (1.0 - sd) * U;
          double ma = low_rhs - mbar;   // mean certifies the top is slack
          double mb = mbar - high_rhs;  // mean certifies the bottom is slack
          if (ma >= 0.0 || mb >= 0.0) {
            fired = m;
            tie = (ma >= 0.0 && mb >= 0.0 && std::abs(ma - mb) <= 1e-15);
            which = (ma >= mb) ? 1 : 2;
            margin = std::max(ma, mb);
          }
        }
      }
      row.fired_at = fired;
      row.tie = tie;
      if (fired > 0) {
        row.case_fired = which;
        row.margin = margin;
        drift = ledger.c_small * eps_s * std::sqrt(delta_s) * gap;
        if (which == 1)
          U -= drift;
        else
          B += drift;
      } else {
        row.case_fired = 3;
        drift = 0.5 * eps_s * std::sqrt(delta_s) * gap;
        U -= drift;
      }
      n_cur = n_next;
      ++rep.direct_stages;
    } else {
      row.case_fired = -1;
      drift = ledger.c_small * eps_s * std::sqrt(delta_s) * gap;
      U -= drift;
    }

    gap = U - B;
    partial += drift;
    row.term = drift;
    row.partial_sum = partial;
    rep.containment_violations += row.containment_violations;
    rep.stages.push_back(row);
    log_n = solve.log_n_next;
  }

  rep.final_gap = gap;
  rep.final_U = U;
  rep.final_B = B;
  if (gap <= opts.gap_floor) rep.terminated = true;
  return rep;
}

struct DivergenceOpts {
  long long k = 10'000;
  long long n_max = 1'000'000;
  long long T_max = 24;
  double erosion_C = -1.0;  // negative: use the ledger constant
};

struct DivergenceStage {
  long long T = 0;
  long long n_T = 0;  // 0 in the log-space continuation
  double log_n_T = 0.0;
  double B_T = 0.0, U_T = 0.0;
  double eps_star = 0.0, delta_star = 0.0;
  double stage_max = 0.0, stage_min = 0.0;
  bool invariant_ok = true;
  bool witness_ok = true;
  bool direct = false;
};

struct DivergenceReport {
  std::vector<DivergenceStage> stages;
  long long direct_stages = 0;
  long long alternations = 0;
  bool invariants_ok = true;
  double pi_product_seq = 1.0;
  double pi_product_log = 1.0;
  bool pi_consistent = false;
  std::vector<double> values;
  double final_B = 0.0, final_U = 1.0;
};

// Alternating extremal stages with parameters frozen at each stage start.
// Even stages drive the trace up and erode the upper envelope U; odd stages
// drive it down and raise the lower envelope B.  The recorded invariants and
// oscillation witnesses are what a divergence certificate consumes.
inline DivergenceReport construct_divergence(const EnvelopeParams& p,
                                             const ConstantsLedger& ledger,
                                             const DivergenceOpts& opts) {
  ledger.validate();
  double C = opts.erosion_C < 0.0 ? ledger.C_big : opts.erosion_C;
  if (C <= 0.0) throw std::invalid_argument("construct_divergence: erosion constant > 0");
  long long k = opts.k;
  if (k < p.min_valid_index())
    throw std::invalid_argument("construct_divergence: k below schedule validity");
  {
    double d0 = p.delta(k);
    if (!(d0 < 0.25))
      throw std::invalid_argument(
          "construct_divergence: stage map needs delta < 1/4 at the start index");
    if (!(1.0 - C * p.eps(k) * std::sqrt(d0) > 0.0))
      throw std::invalid_argument(
          "construct_divergence: erosion constant too large at the start index");
  }

  DivergenceReport rep;
  std::vector<double> init(static_cast<std::size_t>(k), 0.0);
  for (long long j = k / 2; j < k; ++j) init[static_cast<std::size_t>(j)] = 1.0;
  ProcessTrace trace(init, opts.n_max);

  double B = 0.0, U = 1.0;
  double log_n = std::log(static_cast<double>(k));
  long long n_cur = k;
  bool direct = true;
  RunningSum log_pi;
  double pi_seq = 1.0;

  for (long long T = 0; T < opts.T_max; ++T) {
    DivergenceStage st;
    st.T = T;
    st.direct = direct;
    st.n_T = direct ? n_cur : 0;
    st.log_n_T = log_n;
    st.B_T = B;
    st.U_T = U;

    double eps_s = direct ? p.eps(n_cur) : p.eps_log(log_n);
    double delta_s = direct ? p.delta(n_cur) : p.delta_log(log_n);
    st.eps_star = eps_s;
    st.delta_star = delta_s;
    double sd = std::sqrt(delta_s);
    double factor = 1.0 - C * eps_s * sd;
    if (!(factor > 0.0))
      throw invariant_violation("construct_divergence: erosion factor went nonpositive");
    pi_seq *= factor;
    log_pi.add(std::log1p(-C * eps_s * sd));

    bool even = (T % 2 == 0);
    if (direct) {
      // entry invariant: a sqrt(delta) fraction hugs the active extreme and
      // at least half the trace hugs the other one (sides swap with parity)
      long long hi = 0, lo = 0;
      for (long long j = 1; j <= n_cur; ++j) {
        double v = trace.value(j);
        if (v >= U - 1e-12) ++hi;
        if (v <= B + 1e-12) ++lo;
      }
      double frac_hi = static_cast<double>(hi) / static_cast<double>(n_cur);
      double frac_lo = static_cast<double>(lo) / static_cast<double>(n_cur);
      if (even)
        st.invariant_ok = frac_hi >= sd - 1e-12 && frac_lo >= 0.5 - 1e-12;
      else
        st.invariant_ok = frac_lo >= sd - 1e-12 && frac_hi >= 0.5 - 1e-12;

      double next_ll = std::ceil(static_cast<double>(n_cur) / (2.0 * sd));
      long long n_next = static_cast<long long>(next_ll);
      if (n_next <= n_cur)
        throw invariant_violation("construct_divergence: stage index failed to advance");
      if (n_next > opts.n_max) {
        direct = false;
      } else {
        double smax = -std::numeric_limits<double>::infinity();
        double smin = std::numeric_limits<double>::infinity();
        while (trace.size() < n_next) {
          double a = even ? step_extremal_max(trace, eps_s, delta_s)
                          : step_extremal_min(trace, eps_s, delta_s);
          smax = std::max(smax, a);
          smin = std::min(smin, a);
        }
        st.stage_max = smax;
        st.stage_min = smin;
        n_cur = n_next;
        ++rep.direct_stages;
      }
    }
    if (even) {
      U = (1.0 - C * eps_s * sd) * U;
    } else {
      B = B + C * eps_s * sd * (1.0 - B);
    }
    if (st.direct && direct) {
      st.witness_ok = even ? (st.stage_max >= U - 1e-12)
                           : (st.stage_min <= B + 1e-12);
      if (st.witness_ok) ++rep.alternations;
    }
    if (!st.invariant_ok) rep.invariants_ok = false;
    rep.stages.push_back(st);
    log_n = direct ? std::log(static_cast<double>(n_cur))
                   : log_n + std::log(1.0 / (2.0 * sd));
  }

  rep.pi_product_seq = pi_seq;
  rep.pi_product_log = std::exp(log_pi.value());
  rep.pi_consistent =
      std::abs(rep.pi_product_seq - rep.pi_product_log) <=
      1e-6 * std::max(rep.pi_product_seq, rep.pi_product_log);
  rep.values = trace.values();
  rep.final_B = B;
  rep.final_U = U;
  return rep;
}

struct SeriesOpts {
  double log_n0 = 0.0;
  long long T_max = 1'000'000;
  double gap0 = 1.0;
  double cauchy_tol = 1e-3;
  double deadline_seconds = 120.0;
};

struct SeriesRow {
  long long T = 0;
  double x_T = 0.0;
  double term = 0.0;
  double partial = 0.0;
  double gap = 0.0;
};

struct SeriesReport {
  int regime = 0;  // 0: certificate stage map, 1: divergence stage map
  double s_exponent = 0.0;
  std::vector<SeriesRow> rows;
  double total = 0.0;
  long long iterations = 0;
  long long cauchy_T = 0;       // regime 1: earliest sampled tail below tol
  double remainder_bound = 0.0; // regime 1: analytic tail at the final index
  double fitted_exponent = 0.0; // slope of log term against log(T log T)
  std::string notes;
};

// Sum of eps(x_T) sqrt(delta(x_T)) along the stage recursion.  For
// s = alpha + beta/2 <= 1 the certificate map is used and the partial sums
// must keep growing; for s > 1 the divergence map is used and the series is
// Cauchy with an analytic remainder.
inline SeriesReport series_dichotomy(const EnvelopeParams& p,
                                     const ConstantsLedger& ledger,
                                     const SeriesOpts& opts) {
  ledger.validate();
  double s = p.alpha() + 0.5 * p.beta();
  SeriesReport rep;
  rep.s_exponent = s;
  rep.regime = s > 1.0 ? 1 : 0;
  double x = opts.log_n0;
  if (!(x >= p.log_min_valid_index() * (1.0 - 1e-12)))
    throw std::invalid_argument("series_dichotomy: log_n0 below schedule validity");

  double s2 = 2.0 * p.alpha() + 3.0 * p.beta();
  double gap = opts.gap0;
  if (rep.regime == 1) {
    if (!(p.beta() > 0.0))
      throw std::invalid_argument("divergence stage map requires beta > 0");
    double x_floor = std::pow(2.0 * std::sqrt(p.B()), 2.0 / p.beta());
    if (!(x > x_floor))
      throw std::invalid_argument("series_dichotomy: log_n0 below stage map validity");
  } else {
    if (!(gap > 0.0 && gap <= 1.0))
      throw std::invalid_argument("series_dichotomy: gap0 in (0,1]");
  }

  Deadline deadline(opts.deadline_seconds);
  RunningSum total;
  double next_keep = 1.0;
  auto term_at = [&](double xx) { return p.eps_log(xx) * std::sqrt(p.delta_log(xx)); };

  long long T = 0;
  for (; T < opts.T_max; ++T) {
    double term = term_at(x);
    total.add(term);
    if (T + 1 >= static_cast<long long>(next_keep) || T + 1 == opts.T_max) {
      rep.rows.push_back({T + 1, x, term, total.value(), gap});
      next_keep = std::max(next_keep + 1.0, next_keep * 1.005);
    }
    if ((T & 4095) == 0 && deadline.expired()) {
      rep.notes = "timeout";
      break;
    }
    if (rep.regime == 0) {
      double tau = x + 2.0 * std::log(ledger.K) - 2.0 * std::log(gap) -
                   2.0 * std::log(p.A()) - 3.0 * std::log(p.B());
      double xn = detail::solve_stage_h(s2, tau);
      gap *= 1.0 - ledger.c_small * term_at(xn);
      if (!(gap > 0.0)) {
        rep.notes = "gap collapsed";
        ++T;
        break;
      }
      x = xn;
    } else {
      x = x + 0.5 * p.beta() * std::log(x) - std::log(2.0 * std::sqrt(p.B()));
    }
  }
  rep.iterations = T;
  rep.total = total.value();

  if (rep.regime == 1 && !rep.rows.empty()) {
    double xf = rep.rows.back().x_T;
    double gf = 0.5 * p.beta() * std::log(xf) - std::log(2.0 * std::sqrt(p.B()));
    double AB = p.A() * std::sqrt(p.B());
    rep.remainder_bound =
        AB * (std::pow(xf, -s) + std::pow(xf, 1.0 - s) / (gf * (s - 1.0)));
    double target = rep.total;
    for (const SeriesRow& r : rep.rows) {
      if (target - r.partial + rep.remainder_bound < opts.cauchy_tol) {
        rep.cauchy_T = r.T;
        break;
      }
    }
  }

  if (rep.rows.size() >= 8) {
    double t_hi = static_cast<double>(rep.rows.back().T);
    double t_lo = t_hi / 100.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    long long cnt = 0;
    for (const SeriesRow& r : rep.rows) {
      if (r.T < t_lo || r.T < 2) continue;
      double lx = std::log(static_cast<double>(r.T) *
                           std::log(static_cast<double>(r.T)));
      double ly = std::log(std::max(r.term, 1e-300));
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      ++cnt;
    }
    if (cnt >= 2) {
      double slope = (static_cast<double>(cnt) * sxy - sx * sy) /
                     (static_cast<double>(cnt) * sxx - sx * sx);
      rep.fitted_exponent = -slope;
    }
  }
  return rep;
}

}  // namespace lookback
