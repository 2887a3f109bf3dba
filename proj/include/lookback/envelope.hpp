#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lookback/common.hpp"

namespace lookback {

// Calibration constants for the bound checkers.  The theory only asserts
// existence; these defaults were tuned against the certifier's checks.
struct ConstantsLedger {
  double K = 8.0;
  double C_big = 8.0;
  double c_small = 1.0 / 64.0;

  void validate() const {
    if (!(std::isfinite(K) && K >= 1.0))
      throw config_error("ConstantsLedger: K >= 1 required");
    if (!(std::isfinite(C_big) && C_big >= 1.0))
      throw config_error("ConstantsLedger: C_big >= 1 required");
    if (!(std::isfinite(c_small) && c_small > 0.0 && c_small <= 1.0))
      throw config_error("ConstantsLedger: c_small in (0,1] required");
  }
};

struct Repar {
  double eps;
  double delta;
  bool uniform;  // floor == ceiling forces the uniform measure
};

// (f, c) -> (eps, delta) with eps = f and delta = (1-f)/(c-f).
inline Repar reparametrize(double f_n, double c_n) {
  if (!(std::isfinite(f_n) && f_n > 0.0 && f_n <= 1.0))
    throw std::invalid_argument("reparametrize: floor must lie in (0,1]");
  if (!(std::isfinite(c_n)) || c_n < f_n)
    throw std::invalid_argument("reparametrize: ceiling below floor");
  if (c_n == f_n) return {f_n, 1.0, true};
  return {f_n, (1.0 - f_n) / (c_n - f_n), false};
}

// Top-block size m_n = max(1, floor(delta*n)), clamped to n.  The nudge
// absorbs rounding in delta when it was produced by a ratio that is exact
// in rational arithmetic (for example delta = m/n).
inline long long block_size(double delta, long long n) {
  if (n < 1) throw std::invalid_argument("block_size: n >= 1 required");
  double x = delta * static_cast<double>(n);
  long long m = static_cast<long long>(std::floor(x + 1e-9 + x * 4e-15));
  return std::clamp(m, 1LL, n);
}

// Polylogarithmic schedules eps_n = A (log n)^-alpha, delta_n = B (log n)^-beta.
class EnvelopeParams {
 public:
  static EnvelopeParams make(double A, double alpha, double B, double beta) {
    if (!(std::isfinite(A) && A > 0.0) || !(std::isfinite(B) && B > 0.0))
      throw std::invalid_argument("EnvelopeParams: amplitudes must be positive");
    if (!(std::isfinite(alpha) && alpha >= 0.0) ||
        !(std::isfinite(beta) && beta >= 0.0))
      throw std::invalid_argument("EnvelopeParams: exponents must be nonnegative");
    if (alpha == 0.0 && A > 0.5)
      throw std::domain_error("EnvelopeParams: constant eps schedule never enters (0,1/2]");
    if (beta == 0.0 && B > 0.5)
      throw std::domain_error("EnvelopeParams: constant delta schedule never enters (0,1/2]");
    EnvelopeParams p;
    p.A_ = A;
    p.alpha_ = alpha;
    p.B_ = B;
    p.beta_ = beta;
    p.log_n_min_ = p.analytic_log_floor();
    if (p.log_n_min_ <= 43.0) {
      p.n_min_ = p.scan_min_index();
      p.log_n_min_ = std::log(static_cast<double>(p.n_min_));
    }
    return p;
  }

  double A() const { return A_; }
  double alpha() const { return alpha_; }
  double B() const { return B_; }
  double beta() const { return beta_; }

  // Smallest integer index where both schedules are in (0,1/2] and the
  // monotonicity invariants hold on a sampled range.
  long long min_valid_index() const {
    if (n_min_ < 0)
      throw std::domain_error("EnvelopeParams: first valid index exceeds representable range");
    return n_min_;
  }
  double log_min_valid_index() const { return log_n_min_; }

  double eps(long long n) const {
    require_valid(n);
    return eps_log(std::log(static_cast<double>(n)));
  }
  double delta(long long n) const {
    require_valid(n);
    return delta_log(std::log(static_cast<double>(n)));
  }

  // Schedule values at x = log n, for the log-space stage maps.
  double eps_log(double x) const {
    if (!(x >= log_n_min_ * (1.0 - 1e-12)))
      throw std::domain_error("EnvelopeParams: index below first valid index");
    return A_ * std::pow(x, -alpha_);
  }
  double delta_log(double x) const {
    if (!(x >= log_n_min_ * (1.0 - 1e-12)))
      throw std::domain_error("EnvelopeParams: index below first valid index");
    return B_ * std::pow(x, -beta_);
  }

 private:
  EnvelopeParams() = default;

  void require_valid(long long n) const {
    if (n_min_ < 0 || n < n_min_)
      throw std::domain_error("EnvelopeParams: index below first valid index");
  }

  double raw_eps(double n) const { return A_ * std::pow(std::log(n), -alpha_); }
  double raw_delta(double n) const { return B_ * std::pow(std::log(n), -beta_); }

  double analytic_log_floor() const {
    double x = std::log(3.0);
    if (alpha_ > 0.0 && 2.0 * A_ > 1.0)
      x = std::max(x, std::pow(2.0 * A_, 1.0 / alpha_));
    if (beta_ > 0.0 && 2.0 * B_ > 1.0)
      x = std::max(x, std::pow(2.0 * B_, 1.0 / beta_));
    x = std::max(x, alpha_ + beta_);
    return x;
  }

  bool locally_valid(long long n) const {
    double dn = static_cast<double>(n);
    double e0 = raw_eps(dn), d0 = raw_delta(dn);
    double e1 = raw_eps(dn + 1.0), d1 = raw_delta(dn + 1.0);
    if (!(e0 > 0.0 && e0 <= 0.5 + 1e-15)) return false;
    if (!(d0 > 0.0 && d0 <= 0.5 + 1e-15)) return false;
    if (e1 > e0 * (1.0 + 1e-15)) return false;
    if (d1 > d0 * (1.0 + 1e-15)) return false;
    return e1 * d1 * (dn + 1.0) > e0 * d0 * dn * (1.0 - 1e-15);
  }

  long long scan_min_index() const {
    long long n = std::max<long long>(
        3, static_cast<long long>(std::ceil(std::exp(analytic_log_floor()) - 1e-9)));
    const long long give_up = static_cast<long long>(5e18);
    for (;; ++n) {
      if (n > give_up)
        throw std::domain_error("EnvelopeParams: first valid index exceeds representable range");
      if (!locally_valid(n)) continue;
      bool ok = true;
      double lo = std::log(static_cast<double>(n));
      for (int i = 1; i <= 24 && ok; ++i) {
        double lx = lo * (1.0 + static_cast<double>(i) / 24.0);
        if (lx > 42.0) break;  // range [n, n^2], capped inside int64
        long long m = static_cast<long long>(std::llround(std::exp(lx)));
        if (m <= n) continue;
        ok = locally_valid(m);
      }
      if (ok) return n;
    }
  }

  double A_ = 0, alpha_ = 0, B_ = 0, beta_ = 0;
  long long n_min_ = -1;
  double log_n_min_ = std::numeric_limits<double>::infinity();
};

inline std::pair<double, double> schedule_at(const EnvelopeParams& p, long long n) {
  return {p.eps(n), p.delta(n)};
}

// Raw floor/ceiling view: f(n) = A (log n)^-alpha, c(n) = Bc (log n)^+beta.
struct FloorCeiling {
  double A = 1.0;
  double alpha = 1.0;
  double Bc = 1.0;
  double beta = 1.0;

  double f(long long n) const {
    check(n);
    return A * std::pow(std::log(static_cast<double>(n)), -alpha);
  }
  double c(long long n) const {
    check(n);
    return Bc * std::pow(std::log(static_cast<double>(n)), beta);
  }
  // Smallest n >= 3 with 0 < f(n) <= 1 <= c(n).
  long long min_index() const {
    for (long long n = 3;; ++n) {
      if (n > (1LL << 40))
        throw std::domain_error("FloorCeiling: no valid index in range");
      double lg = std::log(static_cast<double>(n));
      if (A * std::pow(lg, -alpha) <= 1.0 && Bc * std::pow(lg, beta) >= 1.0)
        return n;
    }
  }
  Repar repar_at(long long n) const { return reparametrize(f(n), c(n)); }

 private:
  void check(long long n) const {
    if (n < 3) throw std::domain_error("FloorCeiling: n >= 3 required");
  }
};

// Weight vector by rank: top m_n ranks get c/n, the rest f/n, and the
// leftover mass lands on the boundary rank m_n so the total is exactly 1.
// At most that one index can sit outside [f/n, c/n].
inline std::vector<double> boundary_mass_weights(long long n, double f, double c) {
  Repar r = reparametrize(f, c);
  long long m = block_size(r.delta, n);
  std::vector<double> w(static_cast<std::size_t>(n), f / static_cast<double>(n));
  for (long long j = 0; j < m; ++j) w[static_cast<std::size_t>(j)] = c / static_cast<double>(n);
  RunningSum others;
  for (long long j = 0; j < n; ++j)
    if (j != m - 1) others.add(w[static_cast<std::size_t>(j)]);
  w[static_cast<std::size_t>(m - 1)] = 1.0 - others.value();
  return w;
}

}  // namespace lookback
