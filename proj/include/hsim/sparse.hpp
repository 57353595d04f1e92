#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hsim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Sparse nonnegative vector over the dictionary, entries sorted by index.
struct SparseVector {
  struct Entry {
    std::size_t index;
    double value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::vector<Entry> entries;

  SparseVector() = default;
  SparseVector(std::initializer_list<Entry> init) : entries(init) { canonicalize(); }

  static SparseVector from_map(const std::map<std::size_t, double>& m) {
    SparseVector v;
    v.entries.reserve(m.size());
    for (const auto& [i, x] : m)
      if (x != 0.0) v.entries.push_back({i, x});
    return v;
  }

  bool empty() const { return entries.empty(); }
  std::size_t nnz() const { return entries.size(); }

  double sum() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.value;
    return s;
  }

  double at(std::size_t i) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), i,
                               [](const Entry& e, std::size_t j) { return e.index < j; });
    return (it != entries.end() && it->index == i) ? it->value : 0.0;
  }

  SparseVector scaled(double f) const {
    SparseVector out = *this;
    for (auto& e : out.entries) e.value *= f;
    return out;
  }

  Vector to_dense(std::size_t dim) const {
    Vector d = Vector::Zero(static_cast<Eigen::Index>(dim));
    for (const auto& e : entries) d[static_cast<Eigen::Index>(e.index)] = e.value;
    return d;
  }

  /// Sorts by index and merges duplicates.
  void canonicalize() {
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.index < b.index; });
    std::vector<Entry> merged;
    merged.reserve(entries.size());
    for (const auto& e : entries) {
      if (!merged.empty() && merged.back().index == e.index)
        merged.back().value += e.value;
      else
        merged.push_back(e);
    }
    std::erase_if(merged, [](const Entry& e) { return e.value == 0.0; });
    entries = std::move(merged);
  }

  friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

/// x^T diag(w) y for sparse x and dense y.
inline double weighted_dot(const SparseVector& x, const Vector& w, const Vector& y) {
  double s = 0.0;
  for (const auto& e : x.entries) {
    const auto i = static_cast<Eigen::Index>(e.index);
    s += e.value * w[i] * y[i];
  }
  return s;
}

/// x^T diag(w) y for two sparse vectors.
inline double weighted_dot(const SparseVector& x, const Vector& w, const SparseVector& y) {
  double s = 0.0;
  auto a = x.entries.begin();
  auto b = y.entries.begin();
  while (a != x.entries.end() && b != y.entries.end()) {
    if (a->index < b->index) {
      ++a;
    } else if (b->index < a->index) {
      ++b;
    } else {
      s += a->value * w[static_cast<Eigen::Index>(a->index)] * b->value;
      ++a;
      ++b;
    }
  }
  return s;
}

inline double weighted_norm2(const SparseVector& x, const Vector& w) {
  double s = 0.0;
  for (const auto& e : x.entries) s += e.value * e.value * w[static_cast<Eigen::Index>(e.index)];
  return s;
}

}  // namespace hsim
