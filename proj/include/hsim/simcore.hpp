#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsim/corpus.hpp"
#include "hsim/error.hpp"
#include "hsim/sparse.hpp"

namespace hsim {

/// Lower bound applied to every word weight so that the weighting stays
/// positive definite for negative entropy coefficients.
inline constexpr double kLambdaMin = 1e-6;

struct Normalized {
  SparseVector x;
  bool degenerate = false;  // input was zero under the weighting
};

/// Scales x so that x^T diag(lambda) x = 1. A zero vector comes back unchanged
/// and flagged.
inline Normalized normalize(const SparseVector& x, const Vector& lambda) {
  const double n2 = weighted_norm2(x, lambda);
  if (!(n2 > 0.0)) return {x, true};
  return {x.scaled(1.0 / std::sqrt(n2)), false};
}

/// Weighted cosine similarity; zero when either vector has zero weighted norm.
inline double weighted_similarity(const SparseVector& x, const SparseVector& y, const Vector& lambda) {
  const double nx = weighted_norm2(x, lambda);
  const double ny = weighted_norm2(y, lambda);
  if (!(nx > 0.0) || !(ny > 0.0)) return 0.0;
  return weighted_dot(x, lambda, y) / (std::sqrt(nx) * std::sqrt(ny));
}

inline double weighted_similarity(const Vector& x, const Vector& y, const Vector& lambda) {
  const double nx = (x.array() * x.array() * lambda.array()).sum();
  const double ny = (y.array() * y.array() * lambda.array()).sum();
  if (!(nx > 0.0) || !(ny > 0.0)) return 0.0;
  return (x.array() * lambda.array() * y.array()).sum() / (std::sqrt(nx) * std::sqrt(ny));
}

// ---------------------------------------------------------------------------
// Centroids

struct LabeledVector {
  SparseVector x;
  std::size_t leaf = 0;
};

/// Mean vectors of every tree node, indexed by node id.
struct CentroidSet {
  std::vector<Vector> mu;
  std::vector<std::size_t> members;

  const Vector& at(const TopicTree& tree, std::size_t level, std::size_t k) const {
    return mu.at(tree.node_id(level, k));
  }

  /// Columns are the means of the branch of `leaf`, root first.
  Matrix branch_matrix(const TopicTree& tree, std::size_t leaf) const {
    const std::size_t h = tree.height();
    const auto dim = mu.empty() ? 0 : mu.front().size();
    Matrix m(dim, static_cast<Eigen::Index>(h));
    for (std::size_t lvl = 0; lvl < h; ++lvl)
      m.col(static_cast<Eigen::Index>(lvl)) = mu.at(tree.parent(leaf, h - 1 - lvl));
    return m;
  }
};

/// Averages the lambda-normalized member documents of every node. Internal
/// nodes average over all documents of their descendant leaves.
inline CentroidSet cluster_means(const std::vector<LabeledVector>& docs, const TopicTree& tree,
                                 const Vector& lambda) {
  const auto dim = lambda.size();
  const std::size_t h = tree.height();
  CentroidSet c;
  c.mu.assign(tree.node_count(), Vector::Zero(dim));
  c.members.assign(tree.node_count(), 0);
  for (const auto& d : docs) {
    const auto xn = normalize(d.x, lambda);
    for (std::size_t steps = 0; steps < h; ++steps) {
      const auto id = tree.parent(d.leaf, steps);
      ++c.members[id];
      for (const auto& e : xn.x.entries) c.mu[id][static_cast<Eigen::Index>(e.index)] += e.value;
    }
  }
  for (std::size_t id = 0; id < tree.node_count(); ++id) {
    if (c.members[id] == 0) throw EmptyCluster(tree.node(id).level, tree.node(id).index);
    c.mu[id] /= static_cast<double>(c.members[id]);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Entropy model

struct WordDistribution {
  Vector p;
  bool flagged = false;  // word absent from every centroid; uniform returned
};

/// Distribution of word m over the clusters of one level, from the m-th
/// components of their centroids.
inline WordDistribution word_cluster_distribution(const std::vector<const Vector*>& level_centroids,
                                                  std::size_t m) {
  const auto K = static_cast<Eigen::Index>(level_centroids.size());
  Vector p(K);
  for (Eigen::Index k = 0; k < K; ++k)
    p[k] = std::max(0.0, (*level_centroids[static_cast<std::size_t>(k)])[static_cast<Eigen::Index>(m)]);
  const double s = p.sum();
  if (!(s > 0.0)) return {Vector::Constant(K, 1.0 / static_cast<double>(K)), true};
  return {p / s, false};
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double word_entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
  return std::max(0.0, h);
}

/// |W| x h matrix of log(1 + H) per word and level.
inline Matrix entropy_features(const CentroidSet& centroids, const TopicTree& tree, std::size_t dim) {
  const std::size_t h = tree.height();
  Matrix iota = Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(h));
  std::size_t flagged = 0;
  for (std::size_t lvl = 0; lvl < h; ++lvl) {
    std::vector<const Vector*> level;
    for (auto id : tree.level_nodes(lvl)) level.push_back(&centroids.mu.at(id));
    if (level.size() == 1) continue;  // single cluster: entropy 0
    for (std::size_t m = 0; m < dim; ++m) {
      const auto dist = word_cluster_distribution(level, m);
      flagged += dist.flagged ? 1 : 0;
      iota(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(lvl)) = std::log1p(word_entropy(dist.p));
    }
  }
  if (flagged > 0)
    log::warn(std::to_string(flagged) + " word/level pair(s) absent from all centroids; treated as uniform");
  return iota;
}

inline Matrix entropy_features(const std::vector<LabeledVector>& docs, const TopicTree& tree,
                               const Vector& lambda) {
  return entropy_features(cluster_means(docs, tree, lambda), tree, static_cast<std::size_t>(lambda.size()));
}

/// lambda_m = 1 + alpha^T iota_m, clamped below at kLambdaMin.
inline Vector lambda_weights(const Vector& alpha, const Matrix& iota, std::size_t* clamped_out = nullptr) {
  if (alpha.size() != iota.cols()) throw Error("alpha length does not match the tree height");
  Vector lambda = Vector::Ones(iota.rows()) + iota * alpha;
  std::size_t clamped = 0;
  for (Eigen::Index m = 0; m < lambda.size(); ++m) {
    if (!(lambda[m] >= kLambdaMin)) {
      lambda[m] = kLambdaMin;
      ++clamped;
    }
  }
  if (clamped > 0) log::warn(std::to_string(clamped) + " word weight(s) clamped to the minimum");
  if (clamped_out) *clamped_out = clamped;
  return lambda;
}

// ---------------------------------------------------------------------------
// Hierarchical similarity model

struct WeightModel {
  Vector alpha;
  Matrix iota;
  Vector lambda;
};

/// s_h = x^T Lambda M_k theta_k for an already normalized x.
inline double hierarchical_similarity(const SparseVector& x, const Matrix& branch, const Vector& theta,
                                      const Vector& lambda) {
  if (branch.cols() != theta.size()) throw Error("theta length does not match the branch matrix");
  double s = 0.0;
  for (Eigen::Index lvl = 0; lvl < branch.cols(); ++lvl)
    if (theta[lvl] != 0.0) s += theta[lvl] * weighted_dot(x, lambda, Vector(branch.col(lvl)));
  return s;
}

struct HsimModel {
  Dictionary dictionary;
  TopicTree tree;
  WeightModel weights;
  CentroidSet centroids;
  std::vector<Vector> theta;  // one vector of length h per leaf

  std::size_t height() const { return tree.height(); }
  std::size_t leaves() const { return tree.leaf_count(); }
  std::size_t dim() const { return dictionary.size(); }

  /// x^T Lambda mu for every node, x normalized internally.
  std::vector<double> node_similarities(const SparseVector& x) const {
    const auto xn = normalize(x, weights.lambda);
    std::vector<double> sims(tree.node_count(), 0.0);
    if (xn.degenerate) return sims;
    for (std::size_t id = 0; id < sims.size(); ++id)
      sims[id] = weighted_dot(xn.x, weights.lambda, centroids.mu[id]);
    return sims;
  }

  /// Per-level similarities of x with the branch of `leaf`, root first.
  Vector level_similarities(const std::vector<double>& node_sims, std::size_t leaf) const {
    const std::size_t h = height();
    Vector a(static_cast<Eigen::Index>(h));
    for (std::size_t lvl = 0; lvl < h; ++lvl)
      a[static_cast<Eigen::Index>(lvl)] = node_sims[tree.parent(leaf, h - 1 - lvl)];
    return a;
  }

  /// Hierarchical similarity of x with every branch.
  std::vector<double> scores(const SparseVector& x) const {
    const auto sims = node_similarities(x);
    std::vector<double> s(leaves());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = level_similarities(sims, k).dot(theta.at(k));
    return s;
  }

  void check() const {
    const auto h = static_cast<Eigen::Index>(height());
    if (weights.alpha.size() != h || weights.iota.cols() != h) throw Error("model: alpha/iota height mismatch");
    if (weights.lambda.size() != static_cast<Eigen::Index>(dim()) ||
        weights.iota.rows() != static_cast<Eigen::Index>(dim()))
      throw Error("model: dictionary size mismatch");
    if (centroids.mu.size() != tree.node_count()) throw Error("model: centroid count mismatch");
    if (theta.size() != leaves()) throw Error("model: theta count mismatch");
    for (const auto& t : theta)
      if (t.size() != h) throw Error("model: theta length mismatch");
  }
};

/// Builds the weights and centroids for a given alpha from labeled documents.
/// Entropy features are re-derived under the weighting implied by alpha: a
/// first pass at unit weights gives base features, the centroids under those
/// weights give the final features, and the final centroids use the weights
/// computed from them.
inline std::pair<WeightModel, CentroidSet> fit_weights(const std::vector<LabeledVector>& docs,
                                                       const TopicTree& tree, std::size_t dim,
                                                       const Vector& alpha) {
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(dim));
  CentroidSet base = cluster_means(docs, tree, ones);
  Matrix iota = entropy_features(base, tree, dim);
  if (alpha.isZero(0.0)) return {WeightModel{alpha, std::move(iota), ones}, std::move(base)};

  const Vector first = lambda_weights(alpha, iota);
  iota = entropy_features(cluster_means(docs, tree, first), tree, dim);
  Vector lambda = lambda_weights(alpha, iota);
  CentroidSet centroids = cluster_means(docs, tree, lambda);
  return {WeightModel{alpha, std::move(iota), std::move(lambda)}, std::move(centroids)};
}

inline HsimModel make_model(Dictionary dict, TopicTree tree, const std::vector<LabeledVector>& docs,
                            const Vector& alpha, std::vector<Vector> theta) {
  auto [weights, centroids] = fit_weights(docs, tree, dict.size(), alpha);
  HsimModel m{std::move(dict), std::move(tree), std::move(weights), std::move(centroids), std::move(theta)};
  m.check();
  return m;
}

// ---------------------------------------------------------------------------
// Ranking

struct RankedList {
  std::vector<std::size_t> order;  // leaf indices, most relevant first
  std::vector<double> scores;      // parallel to order, non-increasing
};

/// Sorts leaves by descending score, ties by ascending leaf index.
inline RankedList rank_by_scores(const std::vector<double>& scores) {
  RankedList r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  r.scores.reserve(scores.size());
  for (auto k : r.order) r.scores.push_back(scores[k]);
  return r;
}

inline RankedList rank_leaves_hsim(const SparseVector& x, const HsimModel& model) {
  return rank_by_scores(model.scores(x));
}

/// Ranks leaves by similarity with their own centroid only.
inline RankedList rank_leaves_flat(const SparseVector& x, const HsimModel& model) {
  const auto sims = model.node_similarities(x);
  std::vector<double> s(model.leaves());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = sims[model.tree.leaf_id(k)];
  return rank_by_scores(s);
}

/// Top-down ranking: children of each node are ordered by similarity and all
/// leaves of a better-ranked subtree precede those of a worse one. Scores are
/// positional, 1 - position / K.
inline RankedList rank_leaves_topdown(const SparseVector& x, const HsimModel& model) {
  const auto sims = model.node_similarities(x);
  RankedList r;
  const auto& tree = model.tree;
  auto visit = [&](auto&& self, std::size_t id) -> void {
    const auto& node = tree.node(id);
    if (node.children.empty()) {
      r.order.push_back(node.index);
      return;
    }
    std::vector<std::size_t> ch = node.children;
    std::stable_sort(ch.begin(), ch.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    for (auto c : ch) self(self, c);
  };
  visit(visit, tree.root());
  const double K = static_cast<double>(r.order.size());
  for (std::size_t i = 0; i < r.order.size(); ++i) r.scores.push_back(1.0 - static_cast<double>(i) / K);
  return r;
}

}  // namespace hsim
