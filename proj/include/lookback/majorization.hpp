#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "lookback/common.hpp"
#include "lookback/engine.hpp"
#include "lookback/envelope.hpp"

namespace lookback {

struct PrefixProfile {
  std::vector<double> sorted_desc;
  std::vector<double> prefix;  // prefix[j] = sum of j largest

  static PrefixProfile build(const std::vector<double>& v) {
    PrefixProfile p;
    p.sorted_desc = v;
    std::sort(p.sorted_desc.begin(), p.sorted_desc.end(), std::greater<>());
    p.prefix.resize(v.size() + 1, 0.0);
    RunningSum s;
    for (std::size_t i = 0; i < p.sorted_desc.size(); ++i) {
      s.add(p.sorted_desc[i]);
      p.prefix[i + 1] = s.value();
    }
    return p;
  }
};

// Descending prefix-sum dominance.  No total-sum equality is required; the
// final prefix comparison is one-sided like all the others.
inline bool majorizes(const std::vector<double>& a, const std::vector<double>& b,
                      double tol_per_len = 1e-12) {
  if (a.size() != b.size())
    throw std::invalid_argument("majorizes: length mismatch");
  if (a.empty()) throw std::invalid_argument("majorizes: empty sequences");
  PrefixProfile pa = PrefixProfile::build(a);
  PrefixProfile pb = PrefixProfile::build(b);
  double tol = tol_per_len * static_cast<double>(a.size());
  for (std::size_t j = 1; j <= a.size(); ++j)
    if (pa.prefix[j] < pb.prefix[j] - tol) return false;
  return true;
}

// Replaces the m largest entries (ties by lower index first) by their mean.
inline std::vector<double> collapse_top_m(const std::vector<double>& a, long long m) {
  long long k = static_cast<long long>(a.size());
  if (m < 1 || m > k)
    throw std::invalid_argument("collapse_top_m: m outside [1, k]");
  std::vector<long long> idx(a.size());
  for (long long i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::sort(idx.begin(), idx.end(), [&a](long long x, long long y) {
    if (a[static_cast<std::size_t>(x)] != a[static_cast<std::size_t>(y)])
      return a[static_cast<std::size_t>(x)] > a[static_cast<std::size_t>(y)];
    return x < y;
  });
  RunningSum s;
  for (long long r = 0; r < m; ++r)
    s.add(a[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])]);
  double avg = s.value() / static_cast<double>(m);
  std::vector<double> out = a;
  for (long long r = 0; r < m; ++r)
    out[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])] = avg;
  return out;
}

struct DominanceReport {
  bool ok = true;
  long long checked_steps = 0;
  long long first_violation_step = -1;  // trace length at the failing check
  long long offending_prefix_j = -1;
  double max_deficit = 0.0;
  bool pointwise_ok = true;
  long long first_pointwise_fail = -1;
  uint64_t instance_hash = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"ok", ok},
                          {"checked_steps", checked_steps},
                          {"first_violation_step", first_violation_step},
                          {"offending_prefix_j", offending_prefix_j},
                          {"max_deficit", max_deficit},
                          {"pointwise_ok", pointwise_ok},
                          {"first_pointwise_fail", first_pointwise_fail},
                          {"instance_hash", instance_hash}};
  }
};

// Runs the extremal-max rule on a and a random admissible interval rule on b,
// checking after every step that a still majorizes b and that the new a-term
// dominates the new b-term.  Both sequences share the envelope schedules.
inline DominanceReport check_dominance_propagation(
    const std::vector<double>& a_init, const std::vector<double>& b_init,
    const EnvelopeParams& params, long long horizon, uint64_t seed = 1,
    double tol_per_len = 1e-12) {
  if (a_init.size() != b_init.size())
    throw std::invalid_argument("check_dominance_propagation: length mismatch");
  long long k = static_cast<long long>(a_init.size());
  if (k < params.min_valid_index())
    throw std::invalid_argument(
        "check_dominance_propagation: init shorter than the first valid index");
  if (horizon < k)
    throw std::invalid_argument("check_dominance_propagation: horizon below k");
  if (!majorizes(a_init, b_init, tol_per_len))
    throw std::invalid_argument(
        "check_dominance_propagation: init pair is not ordered");

  DominanceReport rep;
  {
    uint64_t h = fnv1a64(&seed, sizeof seed);
    h = fnv1a64(a_init.data(), a_init.size() * sizeof(double), h);
    rep.instance_hash = fnv1a64(b_init.data(), b_init.size() * sizeof(double), h);
  }

  std::vector<double> va = a_init, vb = b_init;
  std::vector<double> sa = a_init, sb = b_init;  // kept sorted descending
  std::sort(sa.begin(), sa.end(), std::greater<>());
  std::sort(sb.begin(), sb.end(), std::greater<>());
  double tot_a = 0.0, tot_b = 0.0;
  for (double x : sa) tot_a += x;
  for (double x : sb) tot_b += x;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);

  for (long long n = k; n < horizon; ++n) {
    double eps = params.eps(n), delta = params.delta(n);
    long long m = block_size(delta, n);
    double tol = tol_per_len * static_cast<double>(n);

    // One descending pass: dominance on every prefix plus the block sums
    // needed by the two step rules.
    double ca = 0.0, cca = 0.0, cb = 0.0, ccb = 0.0;  // compensated sums
    double top_a = 0.0, top_b = 0.0, bot_b = 0.0;
    for (long long j = 0; j < n; ++j) {
      double ya = sa[static_cast<std::size_t>(j)] - cca;
      double ta = ca + ya;
      cca = (ta - ca) - ya;
      ca = ta;
      double yb = sb[static_cast<std::size_t>(j)] - ccb;
      double tb = cb + yb;
      ccb = (tb - cb) - yb;
      cb = tb;
      if (ca < cb - tol) {
        if (rep.ok) {
          rep.first_violation_step = n;
          rep.offending_prefix_j = j + 1;
        }
        rep.ok = false;
        rep.max_deficit = std::max(rep.max_deficit, cb - ca);
      }
      if (j == m - 1) {
        top_a = ca;
        top_b = cb;
      }
      if (j == n - m - 1) bot_b = tot_b - cb;
    }

    double lambda = U(rng);
    double a_next = eps * (tot_a / static_cast<double>(n)) +
                    (1.0 - eps) * top_a / static_cast<double>(m);
    double b_next = eps * (tot_b / static_cast<double>(n)) +
                    (1.0 - eps) *
                        (lambda * top_b + (1.0 - lambda) * bot_b) /
                        static_cast<double>(m);
    if (a_next < b_next - 1e-10 && rep.pointwise_ok) {
      rep.pointwise_ok = false;
      rep.first_pointwise_fail = n + 1;
    }

    va.push_back(a_next);
    vb.push_back(b_next);
    sa.insert(std::upper_bound(sa.begin(), sa.end(), a_next, std::greater<>()), a_next);
    sb.insert(std::upper_bound(sb.begin(), sb.end(), b_next, std::greater<>()), b_next);
    tot_a += a_next;
    tot_b += b_next;
    ++rep.checked_steps;
  }
  rep.ok = rep.ok && rep.pointwise_ok;
  return rep;
}

struct ReverseReport {
  bool ok = true;
  long long k = 0;
  long long m = 0;
  double guard = 0.0;          // m-th largest initial value
  long long guard_tripped_at = -1;
  long long equal_through = 0;  // last index with both traces compared equal
  long long first_mismatch = -1;
  double max_abs_diff = 0.0;
};

// Collapsing the top m initial entries to their mean must not change the
// extremal-max evolution while the generated terms stay at or below the
// m-th largest initial value.  Once a term crosses that guard the collapsed
// block no longer fills the top of the order statistics and the check stops.
inline ReverseReport check_reverse_majorization(const std::vector<double>& a_init,
                                                long long m,
                                                const EnvelopeParams& params,
                                                long long horizon,
                                                double tol = 1e-10) {
  long long k = static_cast<long long>(a_init.size());
  if (k < params.min_valid_index())
    throw std::invalid_argument(
        "check_reverse_majorization: init shorter than the first valid index");
  if (m < 1 || m > block_size(params.delta(k), k))
    throw std::invalid_argument(
        "check_reverse_majorization: m must lie in [1, floor(delta_k * k)]");
  long long prev = block_size(params.delta(k), k);
  for (long long n = k; n <= horizon; ++n) {
    long long bn = block_size(params.delta(n), n);
    if (bn < prev)
      throw std::invalid_argument(
          "check_reverse_majorization: block sizes must be non-decreasing");
    prev = bn;
  }

  ReverseReport rep;
  rep.k = k;
  rep.m = m;
  std::vector<double> sorted = a_init;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  rep.guard = sorted[static_cast<std::size_t>(m - 1)];

  ProcessTrace a(a_init, horizon + 1);
  ProcessTrace b(collapse_top_m(a_init, m), horizon + 1);
  rep.equal_through = k;
  for (long long n = k; n < horizon; ++n) {
    double eps = params.eps(n), delta = params.delta(n);
    double an = step_extremal_max(a, eps, delta);
    double bn = step_extremal_max(b, eps, delta);
    // The step just taken started from a state inside the guard, so it must
    // still agree; only future steps are off the hook after a trip.
    double d = std::abs(an - bn);
    rep.max_abs_diff = std::max(rep.max_abs_diff, d);
    if (d > tol) {
      rep.ok = false;
      rep.first_mismatch = n + 1;
      break;
    }
    rep.equal_through = n + 1;
    if (bn > rep.guard + tol) {
      rep.guard_tripped_at = n + 1;
      break;
    }
  }
  return rep;
}

}  // namespace lookback
