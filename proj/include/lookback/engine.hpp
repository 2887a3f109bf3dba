#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lookback/common.hpp"
#include "lookback/envelope.hpp"
#include "lookback/order_stats.hpp"

namespace lookback {

// Full history of one scalar process together with a running mean and an
// order-statistic mirror.  Appends outside the closed initial hull are
// invariant findings, appends past the cap are cap findings.
class ProcessTrace {
 public:
  explicit ProcessTrace(std::vector<double> init, long long n_max = 10'000'000)
      : v_(std::move(init)), n_max_(n_max) {
    if (v_.empty()) throw std::invalid_argument("ProcessTrace: empty init");
    if (n_max_ < static_cast<long long>(v_.size()))
      throw std::invalid_argument("ProcessTrace: cap below init length");
    k_ = static_cast<long long>(v_.size());
    lo_ = hi_ = v_[0];
    for (double x : v_) {
      if (!std::isfinite(x))
        throw std::invalid_argument("ProcessTrace: non-finite init value");
      lo_ = std::min(lo_, x);
      hi_ = std::max(hi_, x);
    }
    for (double x : v_) {
      sum_.add(x);
      acc_.insert(x);
    }
  }

  static ProcessTrace from_history(std::vector<double> values, long long k,
                                   long long n_max = 10'000'000) {
    if (k < 1 || k > static_cast<long long>(values.size()))
      throw std::invalid_argument("ProcessTrace: bad init length");
    ProcessTrace t(std::vector<double>(values.begin(), values.begin() + k), n_max);
    for (std::size_t i = static_cast<std::size_t>(k); i < values.size(); ++i)
      t.append(values[i]);
    return t;
  }

  long long size() const { return static_cast<long long>(v_.size()); }
  long long init_len() const { return k_; }
  double init_min() const { return lo_; }
  double init_max() const { return hi_; }
  long long n_max() const { return n_max_; }

  double value(long long i) const {  // 1-based
    if (i < 1 || i > size())
      throw std::out_of_range("ProcessTrace: index out of range");
    return v_[static_cast<std::size_t>(i - 1)];
  }
  const std::vector<double>& values() const { return v_; }

  double mean() const { return sum_.value() / static_cast<double>(size()); }

  double top_block_mean(long long m) const {
    if (m < 1 || m > size())
      throw std::out_of_range("ProcessTrace: block size out of range");
    return acc_.sum_top(m) / static_cast<double>(m);
  }
  double bottom_block_mean(long long m) const {
    if (m < 1 || m > size())
      throw std::out_of_range("ProcessTrace: block size out of range");
    return acc_.sum_bottom(m) / static_cast<double>(m);
  }

  const OrderStatAccumulator& order_stats() const { return acc_; }

  void append(double a) {
    if (size() + 1 > n_max_) throw cap_exceeded(n_max_);
    if (!std::isfinite(a))
      throw invariant_violation("ProcessTrace: non-finite term at n=" +
                                std::to_string(size() + 1));
    double tol = 1e-9 * std::max({1.0, std::abs(lo_), std::abs(hi_)});
    if (a < lo_ - tol || a > hi_ + tol)
      throw invariant_violation("ProcessTrace: term " + fmt17(a) + " at n=" +
                                std::to_string(size() + 1) +
                                " escapes the initial hull [" + fmt17(lo_) +
                                ", " + fmt17(hi_) + "]");
    v_.push_back(a);
    sum_.add(a);
    acc_.insert(a);
  }

 private:
  std::vector<double> v_;
  long long k_ = 0;
  double lo_ = 0.0, hi_ = 0.0;
  RunningSum sum_;
  OrderStatAccumulator acc_;
  long long n_max_;
};

struct LambdaSchedule {
  std::function<double(long long)> fn;

  double at(long long n) const {
    double l = fn(n);
    if (!(l >= 0.0 && l <= 1.0))
      throw invariant_violation("LambdaSchedule: lambda " + fmt17(l) + " at n=" +
                                std::to_string(n) + " outside [0,1]");
    return l;
  }
  static LambdaSchedule constant(double l) {
    return {[l](long long) { return l; }};
  }
};

struct WeightPolicy {
  std::string name;
  std::function<std::vector<double>(const ProcessTrace&)> weights;
};

inline void check_step_params(double eps, double delta) {
  if (!(eps > 0.0 && eps <= 0.5))
    throw std::invalid_argument("step: eps must lie in (0,1/2]");
  if (!(delta > 0.0 && delta <= 0.5))
    throw std::invalid_argument("step: delta must lie in (0,1/2]");
}

inline double step_extremal_max(ProcessTrace& t, double eps, double delta) {
  check_step_params(eps, delta);
  long long m = block_size(delta, t.size());
  double a = eps * t.mean() + (1.0 - eps) * t.top_block_mean(m);
  t.append(a);
  return a;
}

inline double step_extremal_min(ProcessTrace& t, double eps, double delta) {
  check_step_params(eps, delta);
  long long m = block_size(delta, t.size());
  double a = eps * t.mean() + (1.0 - eps) * t.bottom_block_mean(m);
  t.append(a);
  return a;
}

// a_{n+1} = eps*mean + (1-eps)*(lambda*top_m + (1-lambda)*bottom_m).
inline double step_interval(ProcessTrace& t, double eps, double delta, double lambda) {
  check_step_params(eps, delta);
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw invariant_violation("step_interval: lambda " + fmt17(lambda) + " outside [0,1]");
  long long m = block_size(delta, t.size());
  double a = eps * t.mean() +
             (1.0 - eps) * (lambda * t.top_block_mean(m) +
                            (1.0 - lambda) * t.bottom_block_mean(m));
  t.append(a);
  return a;
}

inline double step_general(ProcessTrace& t, const std::vector<double>& w) {
  if (static_cast<long long>(w.size()) != t.size())
    throw std::invalid_argument("step_general: weight length mismatch");
  RunningSum s, dot;
  for (long long j = 0; j < t.size(); ++j) {
    double wj = w[static_cast<std::size_t>(j)];
    if (!(wj >= 0.0))
      throw std::invalid_argument("step_general: negative weight at j=" +
                                  std::to_string(j + 1));
    s.add(wj);
    dot.add(wj * t.value(j + 1));
  }
  if (std::abs(s.value() - 1.0) > 1e-9)
    throw std::invalid_argument("step_general: weights sum to " + fmt17(s.value()));
  double a = dot.value();
  t.append(a);
  return a;
}

inline double step_general(ProcessTrace& t, const WeightPolicy& p) {
  return step_general(t, p.weights(t));
}

// One shared weight vector applied to every coordinate of a vector state.
inline void step_coordinatewise(std::vector<ProcessTrace>& coords,
                                const std::vector<double>& w) {
  for (auto& t : coords) step_general(t, w);
}

// Explicit weights realizing the interval step: floor mass f/n everywhere,
// the lambda share of the remaining mass spread uniformly over the top block
// and the rest over the bottom block.  In-block weights can exceed the
// nominal ceiling c/n when delta*n is fractional; they never exceed
// (f + (1-f)*n/m)/n.
inline std::vector<double> reconstruct_weights(const ProcessTrace& t, double eps,
                                               double delta, double lambda,
                                               double f, double c) {
  check_step_params(eps, delta);
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("reconstruct_weights: lambda outside [0,1]");
  Repar r = reparametrize(f, c);
  if (std::abs(r.eps - eps) > 1e-9 || std::abs(r.delta - delta) > 1e-9)
    throw std::invalid_argument(
        "reconstruct_weights: (f,c) disagrees with (eps,delta)");
  long long n = t.size();
  long long m = block_size(delta, n);
  if (2 * m > n)
    throw std::invalid_argument(
        "reconstruct_weights: top and bottom blocks overlap (2m > n)");

  std::vector<long long> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  const std::vector<double>& v = t.values();
  std::sort(idx.begin(), idx.end(), [&v](long long a, long long b) {
    if (v[static_cast<std::size_t>(a)] != v[static_cast<std::size_t>(b)])
      return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)];
    return a < b;
  });

  double base = f / static_cast<double>(n);
  double top_extra = lambda * (1.0 - f) / static_cast<double>(m);
  double bot_extra = (1.0 - lambda) * (1.0 - f) / static_cast<double>(m);
  std::vector<double> w(static_cast<std::size_t>(n), base);
  for (long long r2 = 0; r2 < m; ++r2) {
    w[static_cast<std::size_t>(idx[static_cast<std::size_t>(r2)])] += top_extra;
    w[static_cast<std::size_t>(idx[static_cast<std::size_t>(n - 1 - r2)])] += bot_extra;
  }
  return w;
}

// Recovers lambda from an observed next term.  Degenerate block averages
// collapse the interval to a point; lambda is reported as 0 there.
inline double infer_lambda(const ProcessTrace& t, double a_next, double eps,
                           double delta) {
  check_step_params(eps, delta);
  long long m = block_size(delta, t.size());
  double top = t.top_block_mean(m);
  double bot = t.bottom_block_mean(m);
  double lo = eps * t.mean() + (1.0 - eps) * bot;
  double hi = eps * t.mean() + (1.0 - eps) * top;
  double scale = std::max({1.0, std::abs(lo), std::abs(hi)});
  if (a_next < lo - 1e-9 * scale || a_next > hi + 1e-9 * scale)
    throw std::invalid_argument("infer_lambda: a_next " + fmt17(a_next) +
                                " outside the reachable interval [" + fmt17(lo) +
                                ", " + fmt17(hi) + "]");
  double denom = hi - lo;
  if (denom <= 1e-15 * scale) return 0.0;
  return std::clamp((a_next - lo) / denom, 0.0, 1.0);
}

inline ProcessTrace affine_map(const ProcessTrace& t, double scale, double shift) {
  if (scale == 0.0 || !std::isfinite(scale) || !std::isfinite(shift))
    throw std::invalid_argument("affine_map: scale must be nonzero and finite");
  std::vector<double> v = t.values();
  for (double& x : v) x = scale * x + shift;
  return ProcessTrace::from_history(std::move(v), t.init_len(), t.n_max());
}

inline void export_csv(const ProcessTrace& t, std::ostream& out,
                       long long stride = 1) {
  if (stride < 1) throw std::invalid_argument("export_csv: stride >= 1");
  out << "n,a_n,mean_n\n";
  RunningSum s;
  for (long long n = 1; n <= t.size(); ++n) {
    s.add(t.value(n));
    if (n % stride == 0 || n == t.size())
      out << n << ',' << fmt17(t.value(n)) << ','
          << fmt17(s.value() / static_cast<double>(n)) << '\n';
  }
}

// Accepts either one value per line or the first numeric column of a CSV
// with an optional header line.
inline std::vector<double> import_init_csv(std::istream& in) {
  std::vector<double> vals;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::string cell = line.substr(0, line.find(','));
    char* end = nullptr;
    double x = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || !std::isfinite(x)) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw config_error("import_init_csv: unparsable line: " + line);
    }
    first = false;
    vals.push_back(x);
  }
  if (vals.empty()) throw config_error("import_init_csv: no values");
  return vals;
}

}  // namespace lookback
