#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hsim/corpus.hpp"
#include "hsim/error.hpp"
#include "hsim/eval.hpp"
#include "hsim/simcore.hpp"

namespace hsim {

/// Labeled count vectors for the given document ids.
inline std::vector<LabeledVector> labeled_vectors(const Corpus& corpus, const std::vector<std::string>& ids) {
  std::vector<LabeledVector> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto n = corpus.index_of(id);
    const auto& leaf = corpus.labels().leaf(n);
    if (!leaf) throw Error("document '" + id + "' is unlabeled");
    out.push_back({corpus.document(n).counts, *leaf});
  }
  return out;
}

/// AUCH of the hierarchical-similarity ranking on labeled vectors.
inline double auch_hsim(const HsimModel& model, const std::vector<LabeledVector>& docs) {
  std::vector<std::size_t> ranks;
  ranks.reserve(docs.size());
  for (const auto& d : docs) ranks.push_back(expert_rank(rank_leaves_hsim(d.x, model), d.leaf));
  return auch(ranks, model.leaves());
}

struct GreedyConfig {
  std::vector<std::vector<double>> alpha_grid;  // per level; empty means default
  double psi = 0.0;                             // <= 0 means 0.1 * mean V2 documents per leaf
  std::size_t max_outer_iters = 10;
  double qp_tolerance = 1e-9;
  bool literal_penalty_sign = false;  // maximize c.theta + psi |theta - h|^2 as printed
  bool refit_on_training = true;      // final centroids from V0 + V1 + V2
};

/// Default grid {-0.5, -0.25, 0, 0.25, 0.5, 1}; single-cluster levels get {0}
/// since their entropy features are identically zero.
inline std::vector<std::vector<double>> default_alpha_grid(const TopicTree& tree) {
  std::vector<std::vector<double>> grid;
  for (std::size_t lvl = 0; lvl < tree.height(); ++lvl) {
    if (tree.level_count(lvl) == 1)
      grid.push_back({0.0});
    else
      grid.push_back({-0.5, -0.25, 0.0, 0.25, 0.5, 1.0});
  }
  return grid;
}

/// Parses "v1,v2,...;v1,..." (one group per level) or a single group applied
/// to every level with more than one cluster.
inline std::vector<std::vector<double>> parse_alpha_grid(const std::string& spec, const TopicTree& tree) {
  std::vector<std::vector<double>> groups;
  std::stringstream ss(spec);
  std::string group;
  while (std::getline(ss, group, ';')) {
    std::vector<double> vals;
    std::stringstream gs(group);
    std::string tok;
    while (std::getline(gs, tok, ',')) {
      if (tok.find_first_not_of(" \t") == std::string::npos) continue;
      vals.push_back(std::stod(tok));
    }
    if (vals.empty()) throw Error("empty alpha grid group in '" + spec + "'");
    groups.push_back(std::move(vals));
  }
  if (groups.size() == tree.height()) return groups;
  if (groups.size() != 1) throw Error("alpha grid needs 1 or " + std::to_string(tree.height()) + " groups");
  std::vector<std::vector<double>> out;
  for (std::size_t lvl = 0; lvl < tree.height(); ++lvl)
    out.push_back(tree.level_count(lvl) == 1 ? std::vector<double>{0.0} : groups.front());
  return out;
}

/// alpha = 0 and uniform branch weights.
inline std::pair<Vector, std::vector<Vector>> init_parameters(std::size_t height, std::size_t leaves) {
  if (height < 1) throw Error("tree height must be at least 1");
  const auto h = static_cast<Eigen::Index>(height);
  return {Vector::Zero(h), std::vector<Vector>(leaves, Vector::Constant(h, 1.0 / static_cast<double>(height)))};
}

/// Euclidean projection onto the probability simplex (sort-based).
inline Vector project_simplex(const Vector& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  return (v.array() - tau).max(0.0).matrix();
}

struct QpResult {
  Vector theta;
  double objective = 0.0;
  double kkt_residual = 0.0;
};

/// Objective c.theta - psi |theta - h|^2 (or + with the literal sign).
inline double theta_objective(const Vector& c, const Vector& theta, double psi, bool literal_sign = false) {
  const auto h = theta.size();
  const Vector center = Vector::Constant(h, 1.0 / static_cast<double>(h));
  const double pen = psi * (theta - center).squaredNorm();
  return c.dot(theta) + (literal_sign ? pen : -pen);
}

/// KKT residual of min -c.theta + psi |theta - h|^2 over the simplex.
inline double theta_kkt_residual(const Vector& c, const Vector& theta, double psi) {
  const auto h = theta.size();
  const Vector center = Vector::Constant(h, 1.0 / static_cast<double>(h));
  const Vector g = -c + 2.0 * psi * (theta - center);
  double support_mean = 0.0;
  int support = 0;
  for (Eigen::Index i = 0; i < h; ++i)
    if (theta[i] > 0.0) {
      support_mean += g[i];
      ++support;
    }
  if (support == 0) return std::numeric_limits<double>::infinity();
  support_mean /= support;
  double r = std::abs(theta.sum() - 1.0);
  for (Eigen::Index i = 0; i < h; ++i) {
    r = std::max(r, std::max(0.0, -theta[i]));
    if (theta[i] > 0.0)
      r = std::max(r, std::abs(g[i] - support_mean));
    else
      r = std::max(r, std::max(0.0, support_mean - g[i]));
  }
  return r;
}

/// Solves max c.theta - psi |theta - h|^2 on the probability simplex. The
/// maximizer is the projection of h + c / (2 psi) onto the simplex.
inline QpResult solve_theta_qp(const Vector& c, double psi, double tolerance = 1e-9, bool literal_sign = false) {
  if (!(psi > 0.0)) throw Error("psi must be positive");
  const auto h = c.size();
  const Vector center = Vector::Constant(h, 1.0 / static_cast<double>(h));
  QpResult r;
  if (literal_sign) {
    // Convex maximization: the optimum sits at a vertex.
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < h; ++i) {
      Vector e = Vector::Zero(h);
      e[i] = 1.0;
      const double v = theta_objective(c, e, psi, true);
      if (v > best) {
        best = v;
        r.theta = e;
      }
    }
    r.objective = best;
    return r;
  }
  r.theta = project_simplex(center + c / (2.0 * psi));
  r.theta /= r.theta.sum();
  r.objective = theta_objective(c, r.theta, psi);
  r.kkt_residual = theta_kkt_residual(c, r.theta, psi);
  if (r.kkt_residual > tolerance) throw QpNotConverged(r.kkt_residual);
  return r;
}

/// Linear coefficients of the branch-weight objective: summed level
/// similarities of the leaf's documents.
inline Vector theta_coefficients(const HsimModel& model, const std::vector<LabeledVector>& docs, std::size_t leaf) {
  Vector c = Vector::Zero(static_cast<Eigen::Index>(model.height()));
  for (const auto& d : docs)
    if (d.leaf == leaf) c += model.level_similarities(model.node_similarities(d.x), leaf);
  return c;
}

inline Vector fit_theta_qp(const HsimModel& model, const std::vector<LabeledVector>& v2, std::size_t leaf, double psi,
                           double tolerance = 1e-9, bool literal_sign = false) {
  const bool any = std::any_of(v2.begin(), v2.end(), [&](const LabeledVector& d) { return d.leaf == leaf; });
  if (!any) return init_parameters(model.height(), 1).second.front();
  return solve_theta_qp(theta_coefficients(model, v2, leaf), psi, tolerance, literal_sign).theta;
}

struct AlphaSearchResult {
  Vector alpha;
  double auch = 0.0;
  std::size_t evaluated = 0;
};

/// Exhaustive search over the alpha grid; centroids from V0, AUCH on V1. Ties
/// go to the lexicographically smallest alpha.
inline AlphaSearchResult fit_alpha_grid(const Dictionary& dict, const TopicTree& tree,
                                        const std::vector<LabeledVector>& v0, const std::vector<LabeledVector>& v1,
                                        const std::vector<Vector>& theta, std::vector<std::vector<double>> grid) {
  const std::size_t h = tree.height();
  if (grid.size() != h) throw Error("alpha grid must have one group per level");
  for (auto& g : grid) {
    if (g.empty()) throw Error("alpha grid group is empty");
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
  }
  AlphaSearchResult best;
  best.auch = -1.0;
  std::vector<std::size_t> pos(h, 0);
  Vector alpha(static_cast<Eigen::Index>(h));
  const std::vector<LabeledVector> no_docs;
  while (true) {
    for (std::size_t l = 0; l < h; ++l) alpha[static_cast<Eigen::Index>(l)] = grid[l][pos[l]];
    HsimModel model = [&] {
      log::ScopedMute mute;
      return make_model(dict, tree, v0, alpha, theta);
    }();
    const double a = auch_hsim(model, v1);
    ++best.evaluated;
    if (a > best.auch) {
      best.auch = a;
      best.alpha = alpha;
    }
    // Odometer with the last level varying fastest gives lexicographic order.
    std::size_t l = h;
    while (l > 0) {
      --l;
      if (++pos[l] < grid[l].size()) break;
      pos[l] = 0;
      if (l == 0) return best;
    }
    if (h == 0) return best;
  }
}

struct GreedyResult {
  HsimModel model;
  std::vector<double> validation_auch;  // one entry per accepted iterate, starting at the initial parameters
  std::size_t iterations = 0;
  double psi = 0.0;
};

inline double default_psi(const std::vector<LabeledVector>& v2, std::size_t leaves) {
  return 0.1 * static_cast<double>(v2.size()) / static_cast<double>(std::max<std::size_t>(leaves, 1));
}

/// Alternates the alpha grid search (V1) and per-branch QPs (V2) with
/// centroids from V0. An iterate is kept only if AUCH on V1 + V2 does not
/// drop; the loop stops when it no longer improves.
inline GreedyResult fit_greedy(const Corpus& corpus, const Partition& partition, GreedyConfig config = {}) {
  const auto& tree = corpus.tree();
  const auto v0 = labeled_vectors(corpus, partition.v0);
  const auto v1 = labeled_vectors(corpus, partition.v1);
  const auto v2 = labeled_vectors(corpus, partition.v2);
  if (v0.empty() || v1.empty() || v2.empty()) throw InsufficientData("greedy training needs nonempty V0, V1 and V2");
  std::vector<LabeledVector> v12 = v1;
  v12.insert(v12.end(), v2.begin(), v2.end());

  if (config.alpha_grid.empty()) config.alpha_grid = default_alpha_grid(tree);
  GreedyResult result;
  result.psi = config.psi > 0.0 ? config.psi : default_psi(v2, tree.leaf_count());

  auto [alpha, theta] = init_parameters(tree.height(), tree.leaf_count());
  HsimModel current = make_model(corpus.dictionary(), tree, v0, alpha, theta);
  double best = auch_hsim(current, v12);
  result.validation_auch.push_back(best);

  for (std::size_t it = 0; it < config.max_outer_iters; ++it) {
    ++result.iterations;
    const auto search = fit_alpha_grid(corpus.dictionary(), tree, v0, v1, current.theta, config.alpha_grid);
    HsimModel candidate = make_model(corpus.dictionary(), tree, v0, search.alpha, current.theta);
    for (std::size_t k = 0; k < tree.leaf_count(); ++k)
      candidate.theta[k] =
          fit_theta_qp(candidate, v2, k, result.psi, config.qp_tolerance, config.literal_penalty_sign);
    const double score = auch_hsim(candidate, v12);
    if (score < best) break;
    const bool improved = score > best;
    current = std::move(candidate);
    best = score;
    result.validation_auch.push_back(score);
    if (!improved) break;
  }

  if (config.refit_on_training) {
    std::vector<LabeledVector> all = v0;
    all.insert(all.end(), v12.begin(), v12.end());
    current = make_model(corpus.dictionary(), tree, all, current.weights.alpha, current.theta);
  }
  result.model = std::move(current);
  return result;
}

}  // namespace hsim
