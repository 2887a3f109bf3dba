#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace lookback {

// Thrown when a run would exceed its configured index cap.  Carries the cap
// so callers can report how far they got.
class cap_exceeded : public std::runtime_error {
 public:
  cap_exceeded(const std::string& what, long long cap)
      : std::runtime_error(what), cap_(cap) {}
  explicit cap_exceeded(long long cap)
      : std::runtime_error("index cap " + std::to_string(cap) + " exceeded"),
        cap_(cap) {}
  long long cap() const { return cap_; }

 private:
  long long cap_;
};

// Thrown when a structural invariant of the process fails mid-run (weight
// closure, bound ordering, ...).  The message is the finding.
class invariant_violation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Kahan-compensated accumulator.  Totals over 1e7-term traces must not drift.
class RunningSum {
 public:
  void add(double x) {
    double y = x - comp_;
    double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }
  void reset() { sum_ = 0.0; comp_ = 0.0; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct MeanVar {
  long long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderr_mean() const {
    return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
  }
};

// Cooperative wall-clock budget for long sweeps.
class Deadline {
 public:
  Deadline() : has_limit_(false) {}
  explicit Deadline(double seconds)
      : has_limit_(seconds > 0),
        end_(std::chrono::steady_clock::now() +
             std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                 std::chrono::duration<double>(seconds > 0 ? seconds : 0))) {}
  bool expired() const {
    return has_limit_ && std::chrono::steady_clock::now() >= end_;
  }

 private:
  bool has_limit_;
  std::chrono::steady_clock::time_point end_{};
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// 17 significant digits round-trip a double exactly.
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace lookback
