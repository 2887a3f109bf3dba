#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lookback/renewal.hpp"

using namespace lookback;

namespace {

ShapeDensity spike_shape() {
  // p(t) = c / (t (log 1/t)^{1.1}) on (e^-600, e^-0.01), normalized;
  // log-moment is finite (about 33.2) but nearly all of it sits far out.
  const double y_lo = 0.01, y_hi = 600.0;
  const double c = 1.0 / (10.0 * (std::pow(y_lo, -0.1) - std::pow(y_hi, -0.1)));
  auto pdf = [=](double t) {
    if (t <= 0.0 || t >= 1.0) return 0.0;
    double y = std::log(1.0 / t);
    if (y < y_lo || y > y_hi) return 0.0;
    return c / (t * std::pow(y, 1.1));
  };
  auto cdf = [=](double t) {
    if (t <= std::exp(-y_hi)) return 0.0;
    if (t >= std::exp(-y_lo)) return 1.0;
    double y = std::log(1.0 / t);
    return 10.0 * c * (std::pow(y, -0.1) - std::pow(y_hi, -0.1));
  };
  return ShapeDensity::custom("spike", pdf, cdf);
}

double spike_mu_expected() {
  const double y_lo = 0.01, y_hi = 600.0;
  const double c = 1.0 / (10.0 * (std::pow(y_lo, -0.1) - std::pow(y_hi, -0.1)));
  return c * (std::pow(y_hi, 0.9) - std::pow(y_lo, 0.9)) / 0.9;
}

}  // namespace

TEST_CASE("uniform and beta shapes expose exact densities") {
  ShapeDensity u = ShapeDensity::uniform();
  CHECK(u.pdf(0.37) == 1.0);
  CHECK(u.cdf(0.3) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_FALSE(u.lattice());

  ShapeDensity b = ShapeDensity::beta(2.0, 2.0);
  CHECK(b.pdf(0.5) == doctest::Approx(1.5).epsilon(1e-12));
  for (double t : {0.1, 0.25, 0.5, 0.9}) {
    double exact = 3.0 * t * t - 2.0 * t * t * t;
    CHECK(b.cdf(t) == doctest::Approx(exact).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ShapeDensity::beta(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("table shape integrates its trapezoids exactly") {
  ShapeDensity tri = ShapeDensity::table({0.0, 0.5, 1.0}, {0.0, 2.0, 0.0});
  CHECK(tri.cdf(0.25) == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(tri.cdf(0.5) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(tri.cdf(0.75) == doctest::Approx(0.875).epsilon(1e-14));
  CHECK(tri.pdf(0.25) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(ShapeDensity::table({0.0, 1.0}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(ShapeDensity::table({0.5, 0.25}, {1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("spline cdf reproduces a cubic integral") {
  auto pdf = [](double t) { return 6.0 * t * (1.0 - t); };
  ShapeDensity s = ShapeDensity::custom("cubic", pdf);
  for (double t = 0.05; t < 1.0; t += 0.05) {
    double exact = 3.0 * t * t - 2.0 * t * t * t;
    CHECK(s.cdf(t) == doctest::Approx(exact).epsilon(1e-10));
  }
  CHECK(s.cdf(-1.0) == 0.0);
  CHECK(s.cdf(2.0) == 1.0);
}

TEST_CASE("custom shape rejects a non-density") {
  auto pdf = [](double t) { return 2.0 * t + 0.5; };  // integrates to 1.5
  CHECK_THROWS_AS(ShapeDensity::custom("bad", pdf), std::invalid_argument);
}

TEST_CASE("geometric lattice carries atoms, not a density") {
  ShapeDensity g = ShapeDensity::geometric_lattice(0.5);
  CHECK(g.lattice());
  CHECK(g.cdf(0.5) == doctest::Approx(1.0));
  CHECK(g.cdf(0.25) == doctest::Approx(0.5));
  CHECK(g.cdf(0.2) == doctest::Approx(0.25));
  CHECK_THROWS_AS(g.pdf(0.3), std::logic_error);
  CHECK(log_moment(g) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));

  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    double t = g.sample(rng);
    double l = std::log(t) / std::log(0.5);
    CHECK(std::abs(l - std::round(l)) < 1e-12);
  }
}

TEST_CASE("log moments of the standard shapes") {
  CHECK(log_moment(ShapeDensity::uniform()) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(log_moment(ShapeDensity::beta(2.0, 2.0)) ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-8));

  LogMomentReport r = log_moment_report(ShapeDensity::uniform());
  CHECK_FALSE(r.near_divergent);
  CHECK(r.tail_share < 1e-10);
}

TEST_CASE("heavy log-tail shape trips the cap and the divergence flag") {
  ShapeDensity s = spike_shape();
  CHECK_THROWS_AS(log_moment(s, 20.0), std::domain_error);

  LogMomentReport r = log_moment_report(s);
  CHECK(r.mu == doctest::Approx(spike_mu_expected()).epsilon(1e-6));
  CHECK(r.near_divergent);
  CHECK(r.tail_share > 0.8);
}

TEST_CASE("discretize folds the residual and keeps exact bins") {
  ShapeDensity b = ShapeDensity::beta(2.0, 2.0);
  DiscretizedShape d = discretize(b, 10);
  CHECK(d.mass.size() == 10);
  CHECK(d.mass[0] == doctest::Approx(0.028).epsilon(1e-12));
  RunningSum s;
  for (double m : d.mass) {
    CHECK(m >= 0.0);
    s.add(m);
  }
  CHECK(s.value() == doctest::Approx(1.0).epsilon(1e-14));

  DiscretizedShape one = discretize(b, 1);
  CHECK(one.mass[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(discretize(b, 0), std::invalid_argument);
}

TEST_CASE("uniform overshoot law is exactly exponential") {
  OvershootLaw law = overshoot_law(ShapeDensity::uniform());
  CHECK(law.mu == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(law.overshoot_pdf(0.5) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(law.tilted_pdf(0.3) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(law.tilted_norm == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(law.overshoot_norm == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(law.overshoot_cdf(0.7) ==
        doctest::Approx(1.0 - std::exp(-0.7)).epsilon(1e-6));

  CHECK_THROWS_AS(overshoot_law(ShapeDensity::geometric_lattice(0.5)),
                  std::domain_error);
}

TEST_CASE("beta overshoot law normalizes under its own mean") {
  OvershootLaw law = overshoot_law(ShapeDensity::beta(2.0, 2.0));
  CHECK(law.mu == doctest::Approx(5.0 / 6.0).epsilon(1e-8));
  CHECK(law.tilted_norm == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(law.overshoot_norm == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("simulated overshoots match the stationary law") {
  ShapeDensity u = ShapeDensity::uniform();
  OvershootLaw law = overshoot_law(u);
  OvershootSample sim = simulate_overshoot(u, 30.0, 20000, 20240801ull);
  CHECK(sim.r.size() == 20000);
  CHECK(sim.mean_steps == doctest::Approx(31.0).epsilon(0.01));
  double ks = ks_distance(sim.r, law.overshoot_cdf);
  CHECK(ks < 0.015);

  CHECK_THROWS_AS(simulate_overshoot(u, -1.0, 10, 1), std::invalid_argument);
}

TEST_CASE("renewal identity holds for bounded test functions") {
  ShapeDensity u = ShapeDensity::uniform();
  GFunc gconst{"const", [](double) { return 0.7; }, 0.7};
  GFunc gexp{"capped-exp", [](double s) { return std::min(1.0, std::exp(-s)); }, 1.0};

  auto rows = renewal_identity_check(gconst, u, {2.0, 10.0}, 2000, 5ull);
  REQUIRE(rows.size() == 2);
  for (const IdentityRow& r : rows) {
    CHECK(r.pass);
    CHECK(r.mc_mean == doctest::Approx(0.7).epsilon(1e-9));
  }

  rows = renewal_identity_check(gexp, u, {2.0, 10.0}, 4000, 6ull);
  for (const IdentityRow& r : rows) {
    INFO("s=", r.s, " lhs=", r.lhs, " mc=", r.mc_mean, " tol=", r.tol);
    CHECK(r.pass);
  }
}

TEST_CASE("identity checker rejects unbounded test functions") {
  ShapeDensity u = ShapeDensity::uniform();
  GFunc liar{"liar", [](double s) { return s; }, 1.0};
  CHECK_THROWS_AS(renewal_identity_check(liar, u, {1.0}, 10, 1ull),
                  std::invalid_argument);
  GFunc inf_bound{"inf", [](double) { return 0.0; },
                  std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(renewal_identity_check(inf_bound, u, {1.0}, 10, 1ull),
                  std::invalid_argument);
}

TEST_CASE("mesh sums close for a smooth integrand") {
  EtaFn eta;
  eta.value = [](double s) { return std::exp(-s); };
  eta.tail_envelope = [](double s) { return std::exp(-s); };
  MeshReport rep = dri_mesh_check(eta, {0.2, 0.1, 0.05, 0.025}, 12.0);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.dri_like);
  for (const MeshRow& r : rep.rows) CHECK(r.gap >= 0.0);
  CHECK(rep.rows.back().gap < rep.rows.front().gap * 0.3);
  CHECK(rep.tail_bound == doctest::Approx(std::exp(-12.0)).epsilon(1e-6));
}

TEST_CASE("mesh sums refuse to close for the oscillator") {
  // eta(s) = sin(e^s) e^{-s/2}: integrable but oscillating too fast for
  // direct Riemann sums.  Cells holding a full period get exact envelopes.
  EtaFn eta;
  eta.value = [](double s) { return std::sin(std::exp(s)) * std::exp(-0.5 * s); };
  auto cell_bound = [](double a, double b, bool upper) {
    if (std::exp(a) * (std::exp(b - a) - 1.0) >= 2.0 * 3.14159265358979323846) {
      double env = std::exp(-0.5 * a);
      return upper ? env : -env;
    }
    double best = upper ? -1e300 : 1e300;
    for (int i = 0; i <= 200; ++i) {
      double s = a + (b - a) * i / 200.0;
      double v = std::sin(std::exp(s)) * std::exp(-0.5 * s);
      best = upper ? std::max(best, v) : std::min(best, v);
    }
    return best;
  };
  eta.cell_inf = [&](double a, double b) { return cell_bound(a, b, false); };
  eta.cell_sup = [&](double a, double b) { return cell_bound(a, b, true); };
  MeshReport rep = dri_mesh_check(eta, {0.2, 0.1, 0.05, 0.025}, 12.0);
  CHECK_FALSE(rep.dri_like);
  CHECK(rep.rows.back().gap > 0.2);

  CHECK_THROWS_AS(dri_mesh_check(eta, {0.1}, 12.0), std::invalid_argument);
  CHECK_THROWS_AS(dri_mesh_check(eta, {0.1, 0.2}, 12.0), std::invalid_argument);
}

TEST_CASE("uniform lookback from a 0/1 start settles at one half") {
  FixedShapeResult r = run_fixed_shape(ShapeDensity::uniform(), {0.0, 1.0}, 20000);
  CHECK(r.used_blocked_path);
  CHECK(std::abs(r.limit - 0.5) <= 1e-12);
  CHECK(r.stabilization <= 1e-12);
  CHECK(r.values.size() == 20000);

  FixedShapeOpts tight;
  tight.n_max = 100;
  CHECK_THROWS_AS(run_fixed_shape(ShapeDensity::uniform(), {0.0, 1.0}, 200, tight),
                  cap_exceeded);
}

TEST_CASE("blocked stepper agrees with the exact convolution") {
  auto pdf = [](double t) { return 6.0 * t * (1.0 - t); };
  auto cdf = [](double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return 3.0 * t * t - 2.0 * t * t * t;
  };
  ShapeDensity s = ShapeDensity::custom("cubic", pdf, cdf);
  std::vector<double> init = {0.0, 1.0, 0.25};

  FixedShapeOpts all_exact;
  all_exact.exact_until = 20000;
  FixedShapeResult ex = run_fixed_shape(s, init, 12000, all_exact);
  FixedShapeResult bl = run_fixed_shape(s, init, 12000);
  CHECK_FALSE(ex.used_blocked_path);
  CHECK(bl.used_blocked_path);
  double worst = 0.0;
  for (std::size_t i = 0; i < ex.values.size(); ++i)
    worst = std::max(worst, std::abs(ex.values[i] - bl.values[i]));
  CHECK(worst <= 1e-9);
  CHECK(std::abs(ex.limit - bl.limit) <= 1e-10);
}

TEST_CASE("limit formula closes for the uniform shape") {
  FixedShapeResult r = run_fixed_shape(ShapeDensity::uniform(), {0.0, 1.0}, 20000);
  LimitFormulaReport rep = verify_limit_formula(ShapeDensity::uniform(), r);
  CHECK(rep.pass);
  CHECK(rep.mu == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.a1_term == 0.0);
  CHECK(std::abs(rep.correction - 0.5) <= 5e-4);
  CHECK(rep.resid <= 1e-3);

  FixedShapeResult fake;
  fake.values = {0.0, 1.0};
  fake.N = 2;
  fake.stabilization = 0.2;
  CHECK_THROWS_AS(verify_limit_formula(ShapeDensity::uniform(), fake),
                  std::invalid_argument);
}

TEST_CASE("uniform discretization error is x over floor x minus one") {
  ShapeDensity u = ShapeDensity::uniform();
  for (double x : {7.5, 12.25, 33.9}) {
    double expect = x / std::floor(x) - 1.0;
    CHECK(l1_discretization_error(u, x) == doctest::Approx(expect).epsilon(1e-10));
  }
  CHECK(l1_discretization_error(u, 7.0) <= 1e-12);
  CHECK_THROWS_AS(l1_discretization_error(u, 0.5), std::invalid_argument);
}

TEST_CASE("smooth shape discretization decays about like one over x") {
  ShapeDensity b = ShapeDensity::beta(2.0, 2.0);
  std::vector<double> xs;
  for (double x = 10.0; x <= 700.0; x *= 2.0) xs.push_back(x);
  DecayFit fit = l1_decay_fit(b, xs);
  CHECK(fit.kappa_hat >= 0.9);
  CHECK(fit.kappa_hat <= 1.2);
  for (std::size_t i = 1; i < fit.points.size(); ++i)
    CHECK(fit.points[i].l1 < fit.points[i - 1].l1);
}

TEST_CASE("renewal measure of the uniform shape is Lebesgue") {
  RenewalMeasureEstimate est =
      estimate_renewal_measure(ShapeDensity::uniform(), 2.0, 3.0, 20000, 99ull);
  CHECK(std::abs(est.visits_mean - 1.0) <= 0.03);
  CHECK(std::abs(est.blackwell_ratio - 1.0) <= 0.03);
  CHECK_THROWS_AS(estimate_renewal_measure(ShapeDensity::uniform(), 3.0, 2.0, 10, 1ull),
                  std::invalid_argument);
}
