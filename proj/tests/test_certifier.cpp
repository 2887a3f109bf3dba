#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lookback/certifier.hpp"

using namespace lookback;

namespace {

ConstantsLedger unit_K_ledger() {
  ConstantsLedger c;
  c.K = 1.0;
  return c;
}

}  // namespace

TEST_CASE("constant schedules reduce the stage solve to a closed form") {
  EnvelopeParams p = EnvelopeParams::make(0.5, 0.0, 0.5, 0.0);
  ConstantsLedger led = unit_K_ledger();

  StageSolve s = solve_next_stage_index(p, led, std::log(64.0), 1.0);
  CHECK(s.n_next == 2048);  // 32 * 64 * K^2 / gap^2
  CHECK(s.log_n_next == doctest::Approx(std::log(2048.0)).epsilon(1e-12));

  s = solve_next_stage_index(p, led, std::log(64.0), 0.5);
  CHECK(s.n_next == 8192);

  ConstantsLedger led8;  // default K = 8
  s = solve_next_stage_index(p, led8, std::log(64.0), 1.0);
  CHECK(s.n_next == 131072);
}

TEST_CASE("log-law stage solve agrees with the fixed-point oracle") {
  EnvelopeParams p = EnvelopeParams::make(1.0, 1.0, 1.0, 1.0);
  ConstantsLedger led;
  StageSolve s = solve_next_stage_index(p, led, std::log(100.0), 0.25);

  double y = std::max(s.tau, 6.0);
  for (int i = 0; i < 500; ++i) y = s.tau + 5.0 * std::log(y);
  CHECK(s.log_n_next == doctest::Approx(y).epsilon(1e-9));
  CHECK(s.log_n_next - 5.0 * std::log(s.log_n_next) ==
        doctest::Approx(s.tau).epsilon(1e-10));

  REQUIRE(s.n_next > 0);
  auto h = [](double x) { return x - 5.0 * std::log(x); };
  CHECK(h(std::log(static_cast<double>(s.n_next))) >= s.tau - 1e-9);
  CHECK(h(std::log(static_cast<double>(s.n_next - 1))) < s.tau + 1e-9);
}

TEST_CASE("stage solve validates its inputs") {
  EnvelopeParams p = EnvelopeParams::make(1.0, 1.0, 1.0, 1.0);
  ConstantsLedger led;
  CHECK_THROWS_AS(solve_next_stage_index(p, led, std::log(100.0), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_next_stage_index(p, led, std::log(100.0), 2.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_next_stage_index(p, led, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(solve_next_stage_index(p, led, 600.0, 0.5, 620.0), cap_exceeded);
}

TEST_CASE("auxiliary recursion dominates the extremal trace") {
  EnvelopeParams p = EnvelopeParams::make(0.5, 0.0, 0.5, 0.0);
  AuxBoundReport rep = run_aux_bound(p, 400, 0.1, 4000);
  CHECK(rep.ones == 40);
  CHECK(rep.hypothesis_ok);
  CHECK(rep.dominated);
  CHECK(rep.first_violation == 0);
  CHECK(rep.recursion_consistent);
  CHECK(rep.delta_bounded);
  CHECK(rep.bound_slack >= -1e-9);
  CHECK(rep.max_ratio > 0.0);
  CHECK(rep.delta_rec_final ==
        doctest::Approx(rep.delta_direct_final).epsilon(1e-9));
}

TEST_CASE("auxiliary bound flags a top block too small for the ones") {
  EnvelopeParams p = EnvelopeParams::make(0.5, 0.0, 0.25, 0.0);
  AuxBoundReport rep = run_aux_bound(p, 400, 0.3, 1200);
  CHECK_FALSE(rep.hypothesis_ok);
  CHECK(rep.recursion_consistent);

  EnvelopeParams plog = EnvelopeParams::make(1.0, 1.0, 1.0, 1.0);
  CHECK_THROWS_AS(run_aux_bound(plog, 5, 0.1, 100), std::invalid_argument);
  CHECK_THROWS_AS(run_aux_bound(p, 400, 0.7, 800), std::invalid_argument);
}

TEST_CASE("lower bound growth holds at the pinned threshold") {
  LowerBoundReport rep = check_lower_bound_growth(0.25, 0.125, 0.5, 4096);
  CHECK(rep.threshold == doctest::Approx(0.704456).epsilon(1e-5));
  CHECK(rep.ones == 2048);
  CHECK(rep.N_star == 8192);
  CHECK(rep.pass);
  CHECK(2 * rep.count_above >= rep.N_star);

  CHECK_THROWS_AS(check_lower_bound_growth(0.25, 0.2, 0.3, 512),
                  std::invalid_argument);
  CHECK_THROWS_AS(check_lower_bound_growth(0.25, 0.125, 0.6, 512),
                  std::invalid_argument);
}

TEST_CASE("lower bound growth via a frozen schedule point") {
  EnvelopeParams p = EnvelopeParams::make(0.5, 0.0, 0.0625, 0.0);
  LowerBoundReport rep = check_lower_bound_growth(p, 0.25, 512);
  CHECK(rep.eps == 0.5);
  CHECK(rep.delta == 0.0625);
  CHECK(rep.pass);
}

TEST_CASE("certificate runs direct stages then continues in log space") {
  EnvelopeParams p = EnvelopeParams::make(0.5, 0.0, 0.5, 0.0);
  ConstantsLedger led = unit_K_ledger();
  CertifyOpts opts;
  opts.n0 = 64;
  opts.T_max = 8;
  CertifyReport rep = certify_convergence_schedule(p, led, opts);

  REQUIRE(rep.stages.size() == 8);
  CHECK(rep.stages[0].n_T == 64);
  CHECK(rep.stages[1].n_T == 2048);
  CHECK(rep.direct_stages == 2);
  CHECK(rep.stages[3].n_T == 0);
  CHECK(rep.stages[3].case_fired == -1);
  CHECK(rep.containment_violations == 0);

  StageSolve s2 =
      solve_next_stage_index(p, led, std::log(2048.0), rep.stages[1].gap);
  CHECK(rep.stages[2].n_T == s2.n_next);

  double prev_gap = 1.0 + 1e-12;
  double prev_partial = -1.0;
  for (const StageRow& r : rep.stages) {
    CHECK(r.gap < prev_gap);
    CHECK(r.partial_sum > prev_partial);
    prev_gap = r.gap;
    prev_partial = r.partial_sum;
  }
  CHECK(rep.final_gap < 1.0);
  CHECK(rep.final_gap > 0.0);
}

TEST_CASE("certificate terminates immediately on a collapsed bracket") {
  EnvelopeParams p = EnvelopeParams::make(0.5, 0.0, 0.5, 0.0);
  CertifyOpts opts;
  opts.n0 = 64;
  opts.B0 = 0.3;
  opts.U0 = 0.3;
  CertifyReport rep = certify_convergence_schedule(p, unit_K_ledger(), opts);
  CHECK(rep.terminated);
  CHECK(rep.stages.size() == 1);
  CHECK(rep.final_gap == 0.0);
}

TEST_CASE("certificate warns when the schedule series is summable") {
  EnvelopeParams p = EnvelopeParams::make(1.0, 1.2, 1.0, 0.5);
  CertifyOpts opts;
  opts.n0 = std::max<long long>(64, p.min_valid_index());
  opts.T_max = 2;
  CertifyReport rep = certify_convergence_schedule(p, ConstantsLedger{}, opts);
  CHECK(rep.summability_warning);

  EnvelopeParams pc = EnvelopeParams::make(0.5, 0.0, 0.5, 0.0);
  CertifyOpts bad;
  bad.n0 = 64;
  bad.init = {0.1, 0.2};
  CHECK_THROWS_AS(certify_convergence_schedule(pc, ConstantsLedger{}, bad),
                  std::invalid_argument);
  bad.init.assign(64, 2.0);
  CHECK_THROWS_AS(certify_convergence_schedule(pc, ConstantsLedger{}, bad),
                  std::invalid_argument);
}

TEST_CASE("divergence construction alternates and erodes its envelopes") {
  EnvelopeParams p = EnvelopeParams::make(1.0, 1.0, 1.0, 1.0);
  DivergenceOpts opts;
  opts.k = 10000;
  opts.n_max = 200000;
  opts.T_max = 12;
  DivergenceReport rep = construct_divergence(p, ConstantsLedger{}, opts);

  REQUIRE(rep.stages.size() == 12);
  CHECK(rep.stages[0].n_T == 10000);
  CHECK(rep.stages[1].n_T == 15175);
  CHECK(rep.direct_stages >= 6);
  CHECK(rep.stages.back().n_T == 0);
  CHECK(rep.invariants_ok);
  CHECK(rep.alternations >= 4);
  CHECK(rep.pi_consistent);
  CHECK(rep.final_U < 1.0);
  CHECK(rep.final_U > 0.0);
  CHECK(rep.final_B > 0.0);
  CHECK(rep.final_B < 1.0);

  for (const DivergenceStage& st : rep.stages) {
    if (st.direct && st.n_T > 0 && st.stage_max > st.stage_min)
      CHECK(st.witness_ok);
  }
}

TEST_CASE("divergence construction rejects unusable schedules") {
  EnvelopeParams flat = EnvelopeParams::make(0.5, 0.0, 0.5, 0.0);
  DivergenceOpts opts;
  opts.k = 64;
  CHECK_THROWS_AS(construct_divergence(flat, ConstantsLedger{}, opts),
                  std::invalid_argument);

  EnvelopeParams p = EnvelopeParams::make(1.0, 1.0, 1.0, 1.0);
  DivergenceOpts heavy;
  heavy.k = 10000;
  heavy.erosion_C = 50.0;
  CHECK_THROWS_AS(construct_divergence(p, ConstantsLedger{}, heavy),
                  std::invalid_argument);
}

TEST_CASE("summable schedule series is Cauchy under the divergence map") {
  EnvelopeParams p = EnvelopeParams::make(1.0, 1.0, 1.0, 1.0);
  SeriesOpts opts;
  opts.log_n0 = std::log(1e4);
  opts.T_max = 200000;
  SeriesReport rep = series_dichotomy(p, ConstantsLedger{}, opts);

  CHECK(rep.regime == 1);
  CHECK(rep.s_exponent == doctest::Approx(1.5));
  CHECK(rep.notes.empty());
  CHECK(rep.iterations == 200000);
  CHECK(rep.remainder_bound > 0.0);
  CHECK(rep.remainder_bound < 1e-3);
  CHECK(rep.cauchy_T > 0);
  CHECK(rep.cauchy_T < 100000);
  CHECK(rep.fitted_exponent > 1.4);
  CHECK(rep.fitted_exponent < 1.6);
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    CHECK(rep.rows[i].term <= rep.rows[i - 1].term);
}

TEST_CASE("non-summable schedule series keeps growing under the stage map") {
  EnvelopeParams p = EnvelopeParams::make(0.5, 0.0, 5000.0, 2.0);
  SeriesOpts opts;
  opts.log_n0 = 100.0;
  opts.T_max = 20000;
  SeriesReport rep = series_dichotomy(p, ConstantsLedger{}, opts);

  CHECK(rep.regime == 0);
  CHECK(rep.notes.empty());
  REQUIRE(rep.rows.size() > 100);
  CHECK(rep.rows.front().term == doctest::Approx(0.5 * std::sqrt(0.5)).epsilon(1e-9));

  double s_early = 0.0, s_late = rep.total;
  for (const SeriesRow& r : rep.rows)
    if (r.T <= opts.T_max / 10) s_early = r.partial;
  CHECK(s_late - s_early >= 0.5);
  CHECK(rep.fitted_exponent > 0.8);
  CHECK(rep.fitted_exponent < 1.2);
}

TEST_CASE("series dichotomy validates and honors its deadline") {
  EnvelopeParams p15 = EnvelopeParams::make(0.5, 1.5, 0.5, 0.0);
  SeriesOpts opts;
  opts.log_n0 = 5.0;
  CHECK_THROWS_AS(series_dichotomy(p15, ConstantsLedger{}, opts),
                  std::invalid_argument);  // s > 1 needs beta > 0

  EnvelopeParams p = EnvelopeParams::make(1.0, 1.0, 1.0, 1.0);
  SeriesOpts low;
  low.log_n0 = 0.5;
  CHECK_THROWS_AS(series_dichotomy(p, ConstantsLedger{}, low),
                  std::invalid_argument);

  SeriesOpts dead;
  dead.log_n0 = std::log(1e4);
  dead.T_max = 1000000;
  dead.deadline_seconds = 1e-9;
  SeriesReport rep = series_dichotomy(p, ConstantsLedger{}, dead);
  CHECK(rep.notes == "timeout");
}
