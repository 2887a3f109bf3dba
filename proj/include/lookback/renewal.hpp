#pragma once

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lookback/common.hpp"
#include "lookback/quadrature.hpp"

namespace lookback {

// Probability density on (0,1) describing the relative lookback depth.
// Lattice shapes carry point masses on a geometric grid instead of a
// density; they exist to exercise the rejection paths.
class ShapeDensity {
 public:
  static ShapeDensity uniform() {
    ShapeDensity s;
    s.name_ = "uniform";
    s.kind_ = Kind::Uniform;
    s.pdf_ = [](double) { return 1.0; };
    s.cdf_ = [](double t) { return std::clamp(t, 0.0, 1.0); };
    return s;
  }

  static ShapeDensity beta(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0))
      throw std::invalid_argument("ShapeDensity::beta: parameters must be positive");
    ShapeDensity s;
    s.name_ = "beta(" + fmt17(a) + "," + fmt17(b) + ")";
    s.kind_ = Kind::Beta;
    s.pa_ = a;
    s.pb_ = b;
    double logB = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    s.pdf_ = [a, b, logB](double t) {
      if (t <= 0.0 || t >= 1.0) return 0.0;
      return std::exp((a - 1.0) * std::log(t) + (b - 1.0) * std::log1p(-t) - logB);
    };
    s.cdf_ = [a, b](double t) {
      if (t <= 0.0) return 0.0;
      if (t >= 1.0) return 1.0;
      return boost::math::ibeta(a, b, t);
    };
    return s;
  }

  // Piecewise linear density between grid points, zero outside the grid.
  static ShapeDensity table(std::vector<double> grid, std::vector<double> pdf) {
    if (grid.size() != pdf.size() || grid.size() < 2)
      throw std::invalid_argument("ShapeDensity::table: need matching grids of size >= 2");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!(grid[i] >= 0.0 && grid[i] <= 1.0) || !(pdf[i] >= 0.0))
        throw std::invalid_argument("ShapeDensity::table: grid in [0,1], pdf >= 0");
      if (i > 0 && !(grid[i] > grid[i - 1]))
        throw std::invalid_argument("ShapeDensity::table: grid must increase strictly");
    }
    auto cum = std::make_shared<std::vector<double>>(grid.size(), 0.0);
    RunningSum s;
    for (std::size_t i = 1; i < grid.size(); ++i) {
      s.add(0.5 * (pdf[i] + pdf[i - 1]) * (grid[i] - grid[i - 1]));
      (*cum)[i] = s.value();
    }
    if (std::abs(s.value() - 1.0) > 1e-8)
      throw std::invalid_argument("ShapeDensity::table: density integrates to " +
                                  fmt17(s.value()));
    auto g = std::make_shared<std::vector<double>>(std::move(grid));
    auto p = std::make_shared<std::vector<double>>(std::move(pdf));
    ShapeDensity sd;
    sd.name_ = "table";
    sd.kind_ = Kind::Generic;
    sd.pdf_ = [g, p](double t) {
      if (t <= g->front() || t >= g->back()) {
        if (t == g->front()) return p->front();
        if (t == g->back()) return p->back();
        return 0.0;
      }
      std::size_t i = static_cast<std::size_t>(
          std::upper_bound(g->begin(), g->end(), t) - g->begin());
      double w = (t - (*g)[i - 1]) / ((*g)[i] - (*g)[i - 1]);
      return (1.0 - w) * (*p)[i - 1] + w * (*p)[i];
    };
    sd.cdf_ = [g, p, cum](double t) {
      if (t <= g->front()) return 0.0;
      if (t >= g->back()) return 1.0;
      std::size_t i = static_cast<std::size_t>(
          std::upper_bound(g->begin(), g->end(), t) - g->begin());
      double h = t - (*g)[i - 1];
      double slope = ((*p)[i] - (*p)[i - 1]) / ((*g)[i] - (*g)[i - 1]);
      return (*cum)[i - 1] + (*p)[i - 1] * h + 0.5 * slope * h * h;
    };
    sd.compute_sup();
    return sd;
  }

  // Arbitrary density handle.  Without an analytic cdf a monotone cubic
  // Hermite interpolant of the integral is built on 4096 panels; it is exact
  // whenever the true cdf is a cubic polynomial.
  static ShapeDensity custom(std::string name, std::function<double(double)> pdf,
                             std::function<double(double)> cdf = {}) {
    ShapeDensity s;
    s.name_ = std::move(name);
    s.kind_ = Kind::Generic;
    s.pdf_ = std::move(pdf);
    if (cdf) {
      if (std::abs(cdf(1.0) - 1.0) > 1e-8 || std::abs(cdf(0.0)) > 1e-12)
        throw std::invalid_argument("ShapeDensity::custom: cdf endpoints wrong");
      s.cdf_ = std::move(cdf);
    } else {
      s.build_spline_cdf();
    }
    s.compute_sup();
    return s;
  }

  // Point masses (1-q) q^{i-1} at t = q^i.  Carries no density.
  static ShapeDensity geometric_lattice(double q) {
    if (!(q > 0.0 && q < 1.0))
      throw std::invalid_argument("ShapeDensity::geometric_lattice: q in (0,1)");
    ShapeDensity s;
    s.name_ = "geometric_lattice(" + fmt17(q) + ")";
    s.kind_ = Kind::Lattice;
    s.pa_ = q;
    s.pdf_ = [](double) -> double {
      throw std::logic_error("lattice shape carries no density");
    };
    s.cdf_ = [q](double t) {
      if (t >= q) return 1.0;
      if (t <= 0.0) return 0.0;
      double i0 = std::ceil(std::log(t) / std::log(q));
      return std::pow(q, i0 - 1.0);
    };
    return s;
  }

  const std::string& name() const { return name_; }
  bool lattice() const { return kind_ == Kind::Lattice; }
  double pdf(double t) const { return pdf_(t); }
  double cdf(double t) const { return cdf_(t); }
  double pdf_sup() const { return sup_; }

  double sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    switch (kind_) {
      case Kind::Uniform: {
        double u;
        do u = U(rng); while (u <= 0.0);
        return u;
      }
      case Kind::Beta: {
        std::gamma_distribution<double> Ga(pa_, 1.0), Gb(pb_, 1.0);
        for (;;) {
          double x = Ga(rng), y = Gb(rng);
          if (x + y > 0.0) {
            double t = x / (x + y);
            if (t > 0.0 && t < 1.0) return t;
          }
        }
      }
      case Kind::Lattice: {
        double u = U(rng);
        long long i = 1;
        double acc = 1.0 - pa_, m = 1.0 - pa_;
        while (u > acc && i < 1000000) {
          m *= pa_;
          acc += m;
          ++i;
        }
        return std::pow(pa_, static_cast<double>(i));
      }
      case Kind::Generic:
      default: {
        if (sup_ <= 64.0) {
          for (;;) {
            double t = U(rng);
            if (t <= 0.0 || t >= 1.0) continue;
            if (U(rng) * sup_ <= pdf_(t)) return t;
          }
        }
        double u;
        do u = U(rng); while (u <= 0.0 || u >= 1.0);
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 64; ++it) {
          double mid = 0.5 * (lo + hi);
          (cdf_(mid) < u ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
      }
    }
  }

 private:
  enum class Kind { Uniform, Beta, Generic, Lattice };

  void compute_sup() {
    double s = 0.0;
    for (int i = 1; i < 4096; ++i)
      s = std::max(s, pdf_(static_cast<double>(i) / 4096.0));
    sup_ = s * 1.05 + 1e-12;
  }

  void build_spline_cdf() {
    const int N = 4096;
    auto vals = std::make_shared<std::vector<double>>(N + 1, 0.0);
    auto ders = std::make_shared<std::vector<double>>(N + 1, 0.0);
    RunningSum acc;
    for (int i = 1; i <= N; ++i) {
      double a = static_cast<double>(i - 1) / N, b = static_cast<double>(i) / N;
      double panel = (i == 1) ? integrate_singular(pdf_, a, b, 1e-12)
                              : gauss15(pdf_, a, b);
      acc.add(panel);
      (*vals)[static_cast<std::size_t>(i)] = acc.value();
    }
    if (std::abs(acc.value() - 1.0) > 1e-8)
      throw std::invalid_argument("ShapeDensity: density integrates to " +
                                  fmt17(acc.value()));
    for (int i = 0; i <= N; ++i) {
      double d = (i == 0) ? pdf_(1e-12) : pdf_(static_cast<double>(i) / N);
      if (!std::isfinite(d)) d = 0.0;
      (*ders)[static_cast<std::size_t>(i)] = d;
    }
    auto pdf = pdf_;
    cdf_ = [vals, ders](double t) {
      if (t <= 0.0) return 0.0;
      if (t >= 1.0) return 1.0;
      const int N2 = 4096;
      double x = t * N2;
      int i = std::min(static_cast<int>(x), N2 - 1);
      double s = x - i, h = 1.0 / N2;
      double s2 = s * s, s3 = s2 * s;
      double v0 = (*vals)[static_cast<std::size_t>(i)],
             v1 = (*vals)[static_cast<std::size_t>(i + 1)];
      double d0 = (*ders)[static_cast<std::size_t>(i)],
             d1 = (*ders)[static_cast<std::size_t>(i + 1)];
      return (2 * s3 - 3 * s2 + 1) * v0 + h * (s3 - 2 * s2 + s) * d0 +
             (-2 * s3 + 3 * s2) * v1 + h * (s3 - s2) * d1;
    };
    (void)pdf;
  }

  std::string name_;
  Kind kind_ = Kind::Generic;
  std::function<double(double)> pdf_;
  std::function<double(double)> cdf_;
  double pa_ = 0.0, pb_ = 0.0;
  double sup_ = 1.0;
};

struct DiscretizedShape {
  long long n = 0;
  std::vector<double> mass;  // mass[j-1] = p_n(j)
};

// Exact bin integrals of the shape, with the rounding residual folded into
// the largest bin so the masses sum to one.
inline DiscretizedShape discretize(const ShapeDensity& shape, long long n) {
  if (n < 1) throw std::invalid_argument("discretize: n >= 1");
  DiscretizedShape d;
  d.n = n;
  d.mass.resize(static_cast<std::size_t>(n));
  RunningSum tot;
  double prev = 0.0;
  std::size_t argmax = 0;
  for (long long j = 1; j <= n; ++j) {
    double cj = shape.cdf(static_cast<double>(j) / static_cast<double>(n));
    double m = cj - prev;
    prev = cj;
    if (m < 0.0) {
      if (m < -1e-12) throw invariant_violation("discretize: negative bin mass");
      m = 0.0;
    }
    d.mass[static_cast<std::size_t>(j - 1)] = m;
    if (m > d.mass[argmax]) argmax = static_cast<std::size_t>(j - 1);
    tot.add(m);
  }
  double resid = 1.0 - tot.value();
  if (std::abs(resid) > 1e-8)
    throw invariant_violation("discretize: masses sum to " + fmt17(tot.value()));
  d.mass[argmax] += resid;
  return d;
}

struct LogMomentReport {
  double mu = 0.0;
  double tail_share = 0.0;  // contribution from t < e^{-32}
  bool near_divergent = false;
};

// mu = E[log(1/T)] via dyadic blocks in y = log(1/t).  Slowly decaying block
// contributions that push past the cap are reported as an infinite
// log-moment.
inline LogMomentReport log_moment_report(const ShapeDensity& shape,
                                         double cap = 256.0) {
  LogMomentReport rep;
  if (shape.lattice())
    throw std::invalid_argument("log_moment_report: use log_moment for lattice shapes");
  auto g = [&shape](double y) {
    return shape.pdf(std::exp(-y)) * std::exp(-y) * y;
  };
  double total = 0.0, tail32 = 0.0;
  double y_lo = 0.0, y_hi = 1.0;
  double prev_block = -1.0;
  int tiny_streak = 0;
  for (int i = 0; i < 64; ++i) {
    double block = (i == 0) ? integrate_singular(g, 1e-300, 1.0, 1e-11)
                            : integrate(g, y_lo, y_hi, 1e-11);
    total += block;
    if (y_lo >= 32.0) tail32 += block;
    if (total > cap)
      throw std::domain_error("infinite log-moment: exceeded cap " + fmt17(cap) +
                              " with unresolved tail");
    if (block < 1e-13 * std::max(1.0, total)) {
      if (++tiny_streak >= 2) break;
    } else {
      tiny_streak = 0;
    }
    prev_block = block;
    y_lo = y_hi;
    y_hi = 2.0 * y_hi;
    if (y_lo > 745.0) {
      // exp(-y) underflows past here; only a shape with no mass left below
      // the smallest positive double can be declared fully integrated
      if (shape.cdf(std::numeric_limits<double>::denorm_min()) > 0.0)
        throw std::domain_error("infinite log-moment: tail unresolved at underflow");
      break;
    }
  }
  (void)prev_block;
  rep.mu = total;
  rep.tail_share = total > 0.0 ? tail32 / total : 0.0;
  rep.near_divergent = rep.tail_share > 0.2;
  return rep;
}

inline double log_moment(const ShapeDensity& shape, double cap = 256.0) {
  if (shape.lattice()) {
    // Recover q from the first support point: cdf jumps to 1 at t = q.
    // The lattice factories store q internally; probing the cdf at its own
    // atoms reconstructs it without widening the interface.
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      double mid = 0.5 * (lo + hi);
      (shape.cdf(mid) >= 1.0 ? hi : lo) = mid;
    }
    double q = hi;
    return std::log(1.0 / q) / (1.0 - q);
  }
  return log_moment_report(shape, cap).mu;
}

struct OvershootLaw {
  double mu = 0.0;
  double r_max = 0.0;
  std::function<double(double)> overshoot_pdf;  // P(Y > r)/mu
  std::function<double(double)> tilted_pdf;     // C(t)/(mu t)
  std::function<double(double)> overshoot_cdf;
  double overshoot_norm = 0.0;  // quadrature check values
  double tilted_norm = 0.0;
};

inline OvershootLaw overshoot_law(const ShapeDensity& shape) {
  if (shape.lattice())
    throw std::domain_error("overshoot_law: undefined for lattice shapes");
  OvershootLaw law;
  law.mu = log_moment(shape);
  double mu = law.mu;
  auto tail = [&shape](double r) { return shape.cdf(std::exp(-r)); };
  double r = 1.0;
  while (r < 745.0 && tail(r) > 1e-14) r *= 1.25;
  law.r_max = std::min(r, 745.0);

  law.overshoot_pdf = [shape, mu](double rr) {
    if (rr < 0.0) return 0.0;
    return shape.cdf(std::exp(-rr)) / mu;
  };
  law.tilted_pdf = [shape, mu](double t) {
    if (t <= 0.0 || t > 1.0) return 0.0;
    return shape.cdf(t) / (mu * t);
  };

  const int M = 16384;
  auto cum = std::make_shared<std::vector<double>>(M + 1, 0.0);
  double h = law.r_max / M;
  RunningSum acc;
  const double x1 = 0.5 - 0.5 / std::sqrt(3.0), x2 = 0.5 + 0.5 / std::sqrt(3.0);
  for (int i = 0; i < M; ++i) {
    double a = i * h;
    double f1 = law.overshoot_pdf(a + x1 * h), f2 = law.overshoot_pdf(a + x2 * h);
    acc.add(0.5 * h * (f1 + f2));
    (*cum)[static_cast<std::size_t>(i + 1)] = acc.value();
  }
  law.overshoot_norm = acc.value();
  law.tilted_norm = integrate_singular(law.tilted_pdf, 0.0, 1.0, 1e-10);
  double rmax = law.r_max;
  auto pdf = law.overshoot_pdf;
  law.overshoot_cdf = [cum, h, rmax, pdf](double rr) {
    if (rr <= 0.0) return 0.0;
    if (rr >= rmax) return (*cum)[cum->size() - 1];
    int i = static_cast<int>(rr / h);
    double a = i * h;
    const double y1 = 0.5 - 0.5 / std::sqrt(3.0), y2 = 0.5 + 0.5 / std::sqrt(3.0);
    double w = rr - a;
    return (*cum)[static_cast<std::size_t>(i)] +
           0.5 * w * (pdf(a + y1 * w) + pdf(a + y2 * w));
  };
  return law;
}

struct OvershootSample {
  std::vector<double> r;  // sorted overshoots
  double mean_steps = 0.0;
};

inline OvershootSample simulate_overshoot(const ShapeDensity& shape, double s,
                                          long long n_samples, uint64_t seed) {
  if (!(s > 0.0)) throw std::invalid_argument("simulate_overshoot: s > 0");
  if (n_samples < 1) throw std::invalid_argument("simulate_overshoot: samples >= 1");
  std::mt19937_64 rng(seed);
  OvershootSample out;
  out.r.reserve(static_cast<std::size_t>(n_samples));
  double steps = 0.0;
  for (long long i = 0; i < n_samples; ++i) {
    double S = 0.0;
    while (S < s) {
      S += std::log(1.0 / shape.sample(rng));
      steps += 1.0;
    }
    out.r.push_back(S - s);
  }
  std::sort(out.r.begin(), out.r.end());
  out.mean_steps = steps / static_cast<double>(n_samples);
  return out;
}

inline double ks_distance(const std::vector<double>& sorted,
                          const std::function<double(double)>& cdf) {
  double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    double F = cdf(sorted[i]);
    d = std::max(d, std::max(F - static_cast<double>(i) / n,
                             static_cast<double>(i + 1) / n - F));
  }
  return d;
}

struct GFunc {
  std::string name;
  std::function<double(double)> g;
  double sup_abs = 1.0;
};

struct IdentityRow {
  double s = 0.0;
  double lhs = 0.0;
  double mc_mean = 0.0;
  double mc_stderr = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Checks G(s) = E[G(-R_s)] + E[sum_{n < tau_s} eta(s - S_n)] by Monte Carlo,
// with eta(u) = G(u) - E[G(u - Y)] tabulated on a dense grid.
inline std::vector<IdentityRow> renewal_identity_check(
    const GFunc& G, const ShapeDensity& shape, const std::vector<double>& s_list,
    long long n_paths, uint64_t seed) {
  if (shape.lattice())
    throw std::invalid_argument("renewal_identity_check: lattice shapes unsupported");
  if (!(std::isfinite(G.sup_abs)))
    throw std::invalid_argument("renewal_identity_check: unbounded G rejected");
  for (double u = -60.0; u <= 60.0; u += 0.25)
    if (std::abs(G.g(u)) > G.sup_abs * (1.0 + 1e-9))
      throw std::invalid_argument("renewal_identity_check: G exceeds declared bound");
  if (s_list.empty()) return {};

  double s_max = *std::max_element(s_list.begin(), s_list.end());
  const int M = 4096;
  std::vector<double> eta(static_cast<std::size_t>(M) + 1, 0.0);
  double h = s_max / M;
  for (int i = 0; i <= M; ++i) {
    double u = i * h;
    auto integrand = [&](double t) { return shape.pdf(t) * G.g(u + std::log(t)); };
    eta[static_cast<std::size_t>(i)] =
        G.g(u) - integrate_singular(integrand, 0.0, 1.0, 1e-8);
  }
  std::vector<double> eta_slope(static_cast<std::size_t>(M) + 1, 0.0);
  for (int i = 1; i < M; ++i)
    eta_slope[static_cast<std::size_t>(i)] =
        (eta[static_cast<std::size_t>(i) + 1] - eta[static_cast<std::size_t>(i) - 1]) /
        (2.0 * h);
  eta_slope[0] = (eta[1] - eta[0]) / h;
  eta_slope[static_cast<std::size_t>(M)] =
      (eta[static_cast<std::size_t>(M)] - eta[static_cast<std::size_t>(M) - 1]) / h;
  auto eta_at = [&eta, &eta_slope, h, M](double u) {
    double x = u / h;
    int i = std::clamp(static_cast<int>(x), 0, M - 1);
    double w = x - i;
    double w2 = w * w, w3 = w2 * w;
    std::size_t a = static_cast<std::size_t>(i);
    return (2.0 * w3 - 3.0 * w2 + 1.0) * eta[a] + (w3 - 2.0 * w2 + w) * h * eta_slope[a] +
           (-2.0 * w3 + 3.0 * w2) * eta[a + 1] + (w3 - w2) * h * eta_slope[a + 1];
  };

  std::vector<IdentityRow> rows;
  for (double s : s_list) {
    std::mt19937_64 rng(seed ^ fnv1a64(&s, sizeof s));
    MeanVar mv;
    for (long long p = 0; p < n_paths; ++p) {
      double S = 0.0, acc = 0.0;
      while (S < s) {
        acc += eta_at(s - S);
        S += std::log(1.0 / shape.sample(rng));
      }
      mv.add(G.g(-(S - s)) + acc);
    }
    IdentityRow row;
    row.s = s;
    row.lhs = G.g(s);
    row.mc_mean = mv.mean;
    row.mc_stderr = mv.stderr_mean();
    row.tol = 3.0 * row.mc_stderr + 1e-6;
    row.pass = std::abs(row.lhs - row.mc_mean) <= row.tol;
    rows.push_back(row);
  }
  return rows;
}

struct EtaFn {
  std::function<double(double)> value;
  std::function<double(double, double)> cell_inf;  // optional exact cell oracles
  std::function<double(double, double)> cell_sup;
  std::function<double(double)> tail_envelope;  // integrable bound beyond s_cap
};

struct MeshRow {
  double h = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double gap = 0.0;
};

struct MeshReport {
  std::vector<MeshRow> rows;
  double tail_bound = 0.0;
  bool dri_like = false;
};

// Direct Riemann integrability probe: lower and upper mesh sums on [0, s_cap]
// must close as h shrinks at least like sqrt(h).
inline MeshReport dri_mesh_check(const EtaFn& eta, std::vector<double> h_grid,
                                 double s_cap, int samples_per_cell = 33) {
  if (h_grid.size() < 2)
    throw std::invalid_argument("dri_mesh_check: need at least two mesh widths");
  for (std::size_t i = 1; i < h_grid.size(); ++i)
    if (!(h_grid[i] < h_grid[i - 1]))
      throw std::invalid_argument("dri_mesh_check: mesh widths must decrease");
  MeshReport rep;
  for (double h : h_grid) {
    RunningSum lo, hi;
    for (double a = 0.0; a < s_cap; a += h) {
      double b = std::min(a + h, s_cap);
      double vlo, vhi;
      if (eta.cell_inf && eta.cell_sup) {
        vlo = eta.cell_inf(a, b);
        vhi = eta.cell_sup(a, b);
      } else {
        vlo = vhi = eta.value(a);
        for (int i = 1; i < samples_per_cell; ++i) {
          double x = a + (b - a) * static_cast<double>(i) /
                             static_cast<double>(samples_per_cell - 1);
          double v = eta.value(x);
          vlo = std::min(vlo, v);
          vhi = std::max(vhi, v);
        }
      }
      lo.add(h * vlo);
      hi.add(h * vhi);
    }
    rep.rows.push_back({h, lo.value(), hi.value(), hi.value() - lo.value()});
  }
  if (eta.tail_envelope)
    rep.tail_bound = integrate(eta.tail_envelope, s_cap,
                               std::numeric_limits<double>::infinity(), 1e-9);
  double g0 = rep.rows.front().gap, g1 = rep.rows.back().gap;
  double shrink = std::sqrt(h_grid.back() / h_grid.front());
  rep.dri_like = g1 <= g0 * shrink + 1e-12;
  return rep;
}

struct FixedShapeOpts {
  long long n_max = 10'000'000;
  long long exact_until = 8192;
  long long fine_prefix = 1024;
  double tail_window = 0.1;
};

struct FixedShapeResult {
  std::vector<double> values;
  long long N = 0;
  double limit = 0.0;
  double stabilization = 0.0;
  bool used_blocked_path = false;
};

namespace detail {

inline long long pow2floor(long long x) {
  long long p = 1;
  while (p * 2 <= x) p *= 2;
  return p;
}

inline long long fs_block_width(long long l) {
  return std::max<long long>(16, pow2floor(l) / 64);
}

// Quadratic in-block mass model fitted to the exact block total and the two
// exact endpoint masses.  Exact whenever the bin masses are quadratic in the
// index, which covers every cubic cdf.
struct MassFit {
  double alpha, beta, gamma, cc;
};

inline MassFit fit_masses(double M, double ml, double mr, long long l, long long r) {
  double L = static_cast<double>(r - l + 1);
  double cc = 0.5 * static_cast<double>(l + r);
  double d = 0.5 * (L - 1.0);
  double gamma = 6.0 * (L * 0.5 * (ml + mr) - M) / (L * (L - 1.0) * (L - 2.0));
  double beta = (mr - ml) / (L - 1.0);
  double alpha = 0.5 * (ml + mr) - gamma * d * d;
  return {alpha, beta, gamma, cc};
}

}  // namespace detail

// Steps a_{n+1} = sum_j p_n(j) a_j with p_n = discretize(shape, n).  Small
// lengths run the exact convolution; past exact_until a dyadic block
// decomposition with the quadratic mass model takes over.
inline FixedShapeResult run_fixed_shape(const ShapeDensity& shape,
                                        const std::vector<double>& init,
                                        long long N, FixedShapeOpts opts = {}) {
  if (init.empty()) throw std::invalid_argument("run_fixed_shape: empty init");
  long long k = static_cast<long long>(init.size());
  if (N < k) throw std::invalid_argument("run_fixed_shape: N below init length");
  if (N > opts.n_max) throw cap_exceeded(opts.n_max);

  FixedShapeResult res;
  std::vector<double>& v = res.values;
  v = init;
  v.reserve(static_cast<std::size_t>(N));

  struct Block {
    long long l, cap_end, r;
    double c;  // fixed moment center
    double S0 = 0.0, S1 = 0.0, S2 = 0.0;
  };
  std::vector<Block> blocks;
  long long F = std::min(opts.fine_prefix, opts.exact_until);

  auto push_block_stats = [&](long long j, double a) {
    if (j <= F) return;
    if (blocks.empty() || blocks.back().r == blocks.back().cap_end) {
      Block b;
      b.l = b.r = j;
      b.cap_end = j + detail::fs_block_width(j) - 1;
      b.c = 0.5 * static_cast<double>(j + b.cap_end);
      blocks.push_back(b);
    }
    Block& b = blocks.back();
    b.r = j;
    double d = static_cast<double>(j) - b.c;
    b.S0 += a;
    b.S1 += d * a;
    b.S2 += d * d * a;
  };

  auto cdf_at = [&shape](double t) { return shape.cdf(t); };

  for (long long n = k; n < N; ++n) {
    double a_next;
    if (n <= opts.exact_until) {
      RunningSum dot;
      double prev = 0.0;
      for (long long j = 1; j <= n; ++j) {
        double cj = cdf_at(static_cast<double>(j) / static_cast<double>(n));
        dot.add((cj - prev) * v[static_cast<std::size_t>(j - 1)]);
        prev = cj;
      }
      a_next = dot.value();
    } else {
      res.used_blocked_path = true;
      if (blocks.empty())
        for (long long j = F + 1; j <= n; ++j)
          push_block_stats(j, v[static_cast<std::size_t>(j - 1)]);
      RunningSum dot;
      double dn = static_cast<double>(n);
      double prev = 0.0;
      for (long long j = 1; j <= F; ++j) {
        double cj = cdf_at(static_cast<double>(j) / dn);
        dot.add((cj - prev) * v[static_cast<std::size_t>(j - 1)]);
        prev = cj;
      }
      for (const Block& b : blocks) {
        long long L = b.r - b.l + 1;
        double cl = cdf_at(static_cast<double>(b.l - 1) / dn);
        double cr = cdf_at(static_cast<double>(b.r) / dn);
        if (L <= 4) {
          double p2 = cl;
          for (long long j = b.l; j <= b.r; ++j) {
            double cj = cdf_at(static_cast<double>(j) / dn);
            dot.add((cj - p2) * v[static_cast<std::size_t>(j - 1)]);
            p2 = cj;
          }
          continue;
        }
        double ml = cdf_at(static_cast<double>(b.l) / dn) - cl;
        double mr = cr - cdf_at(static_cast<double>(b.r - 1) / dn);
        double M = cr - cl;
        auto fit = detail::fit_masses(M, ml, mr, b.l, b.r);
        double dc = fit.cc - b.c;
        double S0 = b.S0;
        double S1 = b.S1 - dc * b.S0;
        double S2 = b.S2 - 2.0 * dc * b.S1 + dc * dc * b.S0;
        dot.add(fit.alpha * S0 + fit.beta * S1 + fit.gamma * S2);
      }
      a_next = dot.value();
    }
    v.push_back(a_next);
    if (!blocks.empty()) push_block_stats(n + 1, a_next);
  }

  res.N = N;
  long long tail = std::max<long long>(1, static_cast<long long>(
                                              opts.tail_window * static_cast<double>(N)));
  RunningSum s;
  double mn = v[static_cast<std::size_t>(N - tail)], mx = mn;
  for (long long j = N - tail; j < N; ++j) {
    double x = v[static_cast<std::size_t>(j)];
    s.add(x);
    mn = std::min(mn, x);
    mx = std::max(mx, x);
  }
  res.limit = s.value() / static_cast<double>(tail);
  res.stabilization = mx - mn;
  return res;
}

struct L1Report {
  double x = 0.0;
  double l1 = 0.0;
};

// ||p_x - p||_1 where p_x(t) = x * p_n(clamp(ceil(t x), 1, n)), n = floor(x).
// Each cell integral is an exact cdf difference on sign-constant segments.
inline double l1_discretization_error(const ShapeDensity& shape, double x) {
  if (!(x >= 1.0)) throw std::invalid_argument("l1_discretization_error: x >= 1");
  long long n = static_cast<long long>(std::floor(x));
  DiscretizedShape d = discretize(shape, n);

  auto cell = [&](double a, double b, double q) {
    // integral of |q - p| over [a, b]
    if (!(b > a)) return 0.0;
    std::vector<double> cuts = {a};
    const int PROBE = 8;
    double fa = q - shape.pdf(std::max(a, 1e-300));
    double prev_t = a, prev_f = fa;
    for (int i = 1; i <= PROBE; ++i) {
      double t = a + (b - a) * static_cast<double>(i) / PROBE;
      double ft = q - shape.pdf(std::min(t, 1.0 - 1e-16));
      if ((prev_f < 0.0) != (ft < 0.0)) {
        double lo = prev_t, hi = t, flo = prev_f;
        for (int it = 0; it < 60; ++it) {
          double mid = 0.5 * (lo + hi);
          double fm = q - shape.pdf(mid);
          if ((flo < 0.0) == (fm < 0.0)) {
            lo = mid;
            flo = fm;
          } else {
            hi = mid;
          }
        }
        cuts.push_back(0.5 * (lo + hi));
      }
      prev_t = t;
      prev_f = ft;
    }
    cuts.push_back(b);
    double acc = 0.0;
    for (std::size_t i = 1; i < cuts.size(); ++i) {
      double u = cuts[i - 1], w = cuts[i];
      double piece = q * (w - u) - (shape.cdf(w) - shape.cdf(u));
      acc += std::abs(piece);
    }
    return acc;
  };

  RunningSum total;
  for (long long j = 1; j <= n; ++j) {
    double a = static_cast<double>(j - 1) / x;
    double b = std::min(static_cast<double>(j) / x, 1.0);
    total.add(cell(a, b, x * d.mass[static_cast<std::size_t>(j - 1)]));
  }
  double a_cl = static_cast<double>(n) / x;
  if (a_cl < 1.0)
    total.add(cell(a_cl, 1.0, x * d.mass[static_cast<std::size_t>(n - 1)]));
  return total.value();
}

struct DecayFit {
  double C_hat = 0.0;
  double kappa_hat = 0.0;
  std::vector<L1Report> points;
};

inline DecayFit l1_decay_fit(const ShapeDensity& shape, const std::vector<double>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("l1_decay_fit: need >= 2 points");
  DecayFit fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (double x : xs) {
    double l1 = l1_discretization_error(shape, x);
    fit.points.push_back({x, l1});
    double lx = std::log(x), ly = std::log(std::max(l1, 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double n = static_cast<double>(xs.size());
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double inter = (sy - slope * sx) / n;
  fit.kappa_hat = -slope;
  fit.C_hat = std::exp(inter);
  return fit;
}

struct LimitFormulaReport {
  double limit = 0.0;
  double a1_term = 0.0;
  double correction = 0.0;
  double rhs = 0.0;
  double resid = 0.0;
  double tail_bound = 0.0;
  double mu = 0.0;
  bool pass = false;
};

// lim F = E[F(T~)] + (1/mu) * integral from 1 to N of eps(x)/x, with
// eps(x) = F(x) - E[F(Tx)] and F(x) = a_ceil(x).  The x-integral is dense
// Gauss-3 per unit interval up to x_dense and a geometric trapezoid beyond,
// where eps has already collapsed to the stabilization scale.
inline LimitFormulaReport verify_limit_formula(const ShapeDensity& shape,
                                               const FixedShapeResult& run,
                                               double tol = 1e-3,
                                               long long x_dense_cap = 100000) {
  if (run.stabilization > 1e-2)
    throw std::invalid_argument("verify_limit_formula: trace has not stabilized");
  const std::vector<double>& v = run.values;
  long long N = run.N;

  LimitFormulaReport rep;
  rep.limit = run.limit;
  rep.a1_term = v[0];
  rep.mu = log_moment(shape);

  // prefix moments about j=0; recentering happens per queried range
  std::vector<double> P0(static_cast<std::size_t>(N) + 1, 0.0);
  std::vector<double> P1(P0.size(), 0.0), P2(P0.size(), 0.0);
  for (long long j = 1; j <= N; ++j) {
    double a = v[static_cast<std::size_t>(j - 1)], dj = static_cast<double>(j);
    P0[static_cast<std::size_t>(j)] = P0[static_cast<std::size_t>(j - 1)] + a;
    P1[static_cast<std::size_t>(j)] = P1[static_cast<std::size_t>(j - 1)] + dj * a;
    P2[static_cast<std::size_t>(j)] = P2[static_cast<std::size_t>(j - 1)] + dj * dj * a;
  }

  const long long FINE = 64;
  auto mean_under_shape = [&](double x) {
    // E[F(Tx)] = sum_j a_j (C(min(1, j/x)) - C((j-1)/x))
    long long jmax = static_cast<long long>(std::ceil(x - 1e-12));
    jmax = std::min(jmax, N);
    RunningSum dot;
    double prev = 0.0;
    long long j = 1;
    for (; j <= std::min(FINE, jmax); ++j) {
      double cj = shape.cdf(std::min(1.0, static_cast<double>(j) / x));
      dot.add((cj - prev) * v[static_cast<std::size_t>(j - 1)]);
      prev = cj;
    }
    while (j <= jmax) {
      long long w = detail::fs_block_width(j);
      long long r = std::min(j + w - 1, jmax);
      long long L = r - j + 1;
      double cl = prev;
      double cr = shape.cdf(std::min(1.0, static_cast<double>(r) / x));
      if (L <= 4) {
        double p2 = cl;
        for (long long q = j; q <= r; ++q) {
          double cq = shape.cdf(std::min(1.0, static_cast<double>(q) / x));
          dot.add((cq - p2) * v[static_cast<std::size_t>(q - 1)]);
          p2 = cq;
        }
      } else {
        double ml = shape.cdf(std::min(1.0, static_cast<double>(j) / x)) - cl;
        double mr = cr - shape.cdf(std::min(1.0, static_cast<double>(r - 1) / x));
        auto fit = detail::fit_masses(cr - cl, ml, mr, j, r);
        double S0 = P0[static_cast<std::size_t>(r)] - P0[static_cast<std::size_t>(j - 1)];
        double S1r = P1[static_cast<std::size_t>(r)] - P1[static_cast<std::size_t>(j - 1)];
        double S2r = P2[static_cast<std::size_t>(r)] - P2[static_cast<std::size_t>(j - 1)];
        double S1 = S1r - fit.cc * S0;
        double S2 = S2r - 2.0 * fit.cc * S1r + fit.cc * fit.cc * S0;
        dot.add(fit.alpha * S0 + fit.beta * S1 + fit.gamma * S2);
      }
      prev = cr;
      j = r + 1;
    }
    return dot.value();
  };

  auto eps_at = [&](double x) {
    long long ix = static_cast<long long>(std::ceil(x - 1e-12));
    ix = std::min(ix, N);
    return v[static_cast<std::size_t>(ix - 1)] - mean_under_shape(x);
  };

  RunningSum integral;
  long long x_dense = std::min(N, x_dense_cap);
  const double g1 = 0.5 - 0.5 * std::sqrt(0.6), g2 = 0.5, g3 = 0.5 + 0.5 * std::sqrt(0.6);
  const double w1 = 5.0 / 18.0, w2 = 8.0 / 18.0, w3 = 5.0 / 18.0;
  for (long long u = 1; u < x_dense; ++u) {
    double a = static_cast<double>(u);
    auto f = [&](double xx) { return eps_at(xx) / xx; };
    integral.add(w1 * f(a + g1) + w2 * f(a + g2) + w3 * f(a + g3));
  }
  if (x_dense < N) {
    // trapezoid in y = log x; eps is at the stabilization scale out here
    const int SPARSE = 2048;
    double y0 = std::log(static_cast<double>(x_dense)), y1 = std::log(static_cast<double>(N));
    double hy = (y1 - y0) / SPARSE;
    double prev = eps_at(std::exp(y0));
    for (int i = 1; i <= SPARSE; ++i) {
      double cur = eps_at(std::exp(y0 + hy * static_cast<double>(i)));
      integral.add(0.5 * hy * (prev + cur));
      prev = cur;
    }
  }
  rep.correction = integral.value() / rep.mu;
  rep.rhs = rep.a1_term + rep.correction;
  rep.resid = std::abs(rep.limit - rep.rhs);

  double fmax = 0.0;
  for (double a : v) fmax = std::max(fmax, std::abs(a));
  std::vector<double> xs;
  for (double x = 10.5; x <= std::min<double>(1e4, static_cast<double>(N) / 10.0); x *= 1.9)
    xs.push_back(x);
  if (xs.size() >= 2) {
    DecayFit fit = l1_decay_fit(shape, xs);
    if (fit.kappa_hat > 0.05)
      rep.tail_bound = fmax * fit.C_hat *
                       std::pow(static_cast<double>(N), -fit.kappa_hat) /
                       (fit.kappa_hat * rep.mu);
    // a sloppy fit must not mask a genuine residual
    if (!(rep.tail_bound <= 0.1)) rep.tail_bound = 0.0;
  }
  rep.pass = rep.resid <= std::max(tol, rep.tail_bound);
  return rep;
}

struct RenewalMeasureEstimate {
  double a = 0.0, b = 0.0;
  double visits_mean = 0.0;
  double visits_stderr = 0.0;
  double blackwell_ratio = 0.0;  // visits * mu / (b - a)
};

inline RenewalMeasureEstimate estimate_renewal_measure(const ShapeDensity& shape,
                                                       double a, double b,
                                                       long long paths,
                                                       uint64_t seed) {
  if (!(b > a && a >= 0.0))
    throw std::invalid_argument("estimate_renewal_measure: need 0 <= a < b");
  std::mt19937_64 rng(seed);
  MeanVar mv;
  for (long long p = 0; p < paths; ++p) {
    double S = 0.0;
    long long hits = 0;
    while (S < b) {
      S += std::log(1.0 / shape.sample(rng));
      if (S >= a && S < b) ++hits;
    }
    mv.add(static_cast<double>(hits));
  }
  RenewalMeasureEstimate est;
  est.a = a;
  est.b = b;
  est.visits_mean = mv.mean;
  est.visits_stderr = mv.stderr_mean();
  est.blackwell_ratio = mv.mean * log_moment(shape) / (b - a);
  return est;
}

}  // namespace lookback
