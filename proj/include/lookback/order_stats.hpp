#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lookback/common.hpp"

namespace lookback {

// Augmented treap keyed by (value, insertion sequence) with subtree counts
// and sums.  Priorities come from splitmix64 on the insertion sequence, so
// the tree shape is a pure function of the inserted multiset order.
class OrderStatAccumulator {
 public:
  void insert(double x) {
    if (!std::isfinite(x))
      throw std::invalid_argument("OrderStatAccumulator: non-finite value");
    int id = static_cast<int>(nodes_.size());
    uint64_t s = static_cast<uint64_t>(id) + 0x9e3779b97f4a7c15ULL;
    Node nd;
    nd.value = x;
    nd.seq = id;
    nd.prio = splitmix64(s);
    nd.sum = x;
    nodes_.push_back(nd);
    int lo = -1, hi = -1;
    split(root_, x, id, lo, hi);
    root_ = merge(merge(lo, id), hi);
#ifndef NDEBUG
    if ((nodes_.size() & ((1u << 20) - 1)) == 0) force_audit();
#endif
  }

  long long count() const { return root_ < 0 ? 0 : nodes_[root_].cnt; }
  double total() const { return root_ < 0 ? 0.0 : nodes_[root_].sum; }

  // Sum of the j smallest values.
  double sum_bottom(long long j) const {
    check_rank(j);
    double acc = 0.0;
    int t = root_;
    while (j > 0) {
      const Node& n = nodes_[t];
      long long lc = n.left < 0 ? 0 : nodes_[n.left].cnt;
      if (j <= lc) {
        t = n.left;
      } else {
        if (n.left >= 0) acc += nodes_[n.left].sum;
        acc += n.value;
        j -= lc + 1;
        t = n.right;
      }
    }
    return acc;
  }

  // Sum of the j largest values.
  double sum_top(long long j) const {
    check_rank(j);
    double acc = 0.0;
    int t = root_;
    while (j > 0) {
      const Node& n = nodes_[t];
      long long rc = n.right < 0 ? 0 : nodes_[n.right].cnt;
      if (j <= rc) {
        t = n.right;
      } else {
        if (n.right >= 0) acc += nodes_[n.right].sum;
        acc += n.value;
        j -= rc + 1;
        t = n.left;
      }
    }
    return acc;
  }

  unsigned long long comparisons() const { return cmps_; }

  // Recomputes every subtree count and sum and compares against the
  // augmented fields.  Count drift throws; sum drift beyond 1e-9 relative
  // throws as well.
  void force_audit() const {
    if (root_ < 0) return;
    audit(root_);
  }

 private:
  struct Node {
    double value = 0.0;
    int seq = 0;
    uint64_t prio = 0;
    int left = -1;
    int right = -1;
    long long cnt = 1;
    double sum = 0.0;
  };

  void check_rank(long long j) const {
    if (j < 0 || j > count())
      throw std::out_of_range("OrderStatAccumulator: rank out of range");
  }

  bool key_less(double av, int as, double bv, int bs) const {
    ++cmps_;
    if (av != bv) return av < bv;
    return as < bs;
  }

  void pull(int t) {
    Node& n = nodes_[t];
    n.cnt = 1;
    n.sum = n.value;
    if (n.left >= 0) {
      n.cnt += nodes_[n.left].cnt;
      n.sum += nodes_[n.left].sum;
    }
    if (n.right >= 0) {
      n.cnt += nodes_[n.right].cnt;
      n.sum += nodes_[n.right].sum;
    }
  }

  // Everything with key < (v, s) goes to lo.
  void split(int t, double v, int s, int& lo, int& hi) {
    if (t < 0) {
      lo = hi = -1;
      return;
    }
    Node& n = nodes_[t];
    if (key_less(n.value, n.seq, v, s)) {
      split(n.right, v, s, n.right, hi);
      lo = t;
    } else {
      split(n.left, v, s, lo, n.left);
      hi = t;
    }
    pull(t);
  }

  int merge(int a, int b) {
    if (a < 0) return b;
    if (b < 0) return a;
    if (nodes_[a].prio >= nodes_[b].prio) {
      nodes_[a].right = merge(nodes_[a].right, b);
      pull(a);
      return a;
    }
    nodes_[b].left = merge(a, nodes_[b].left);
    pull(b);
    return b;
  }

  struct Agg {
    long long cnt;
    double sum;
  };

  Agg audit(int t) const {
    const Node& n = nodes_[t];
    Agg a{1, n.value};
    if (n.left >= 0) {
      Agg l = audit(n.left);
      a.cnt += l.cnt;
      a.sum += l.sum;
    }
    if (n.right >= 0) {
      Agg r = audit(n.right);
      a.cnt += r.cnt;
      a.sum += r.sum;
    }
    if (a.cnt != n.cnt)
      throw invariant_violation("OrderStatAccumulator: count drift detected");
    double scale = std::max(1.0, std::abs(a.sum));
    if (std::abs(a.sum - n.sum) > 1e-9 * scale)
      throw invariant_violation("OrderStatAccumulator: sum drift detected");
    return a;
  }

  std::vector<Node> nodes_;
  int root_ = -1;
  mutable unsigned long long cmps_ = 0;
};

}  // namespace lookback
