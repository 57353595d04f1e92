#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/special_functions/digamma.hpp>

#include "hsim/corpus.hpp"
#include "hsim/error.hpp"
#include "hsim/simcore.hpp"

namespace hsim {

struct VBHyperparams {
  double a = 1.0;
  double b = 1.0;
  double nu = 0.0;
  Matrix W_prior;
  Vector m0;

  /// a = b = 1, nu = h + 1, unit-diagonal W with off-diagonal -1/(2h), m0 = 1/h.
  static VBHyperparams defaults(std::size_t height) {
    const auto h = static_cast<Eigen::Index>(height);
    VBHyperparams p;
    p.nu = static_cast<double>(height) + 1.0;
    p.W_prior = Matrix::Constant(h, h, -1.0 / (2.0 * static_cast<double>(height)));
    p.W_prior.diagonal().setOnes();
    p.m0 = Vector::Constant(h, 1.0 / static_cast<double>(height));
    return p;
  }

  void check(std::size_t height) const {
    const auto h = static_cast<Eigen::Index>(height);
    if (!(a > 0.0) || !(b > 0.0)) throw Error("hyperparameters a and b must be positive");
    if (!(nu > static_cast<double>(height) - 1.0)) throw Error("nu must exceed h - 1");
    if (W_prior.rows() != h || W_prior.cols() != h || m0.size() != h) throw Error("hyperparameter shapes do not match h");
    if (!W_prior.isApprox(W_prior.transpose(), 1e-12)) throw Error("W_prior must be symmetric");
    if (Eigen::LLT<Matrix>(W_prior).info() != Eigen::Success) throw SingularPrecision("W_prior is not positive definite");
  }
};

enum class WishartVariant { Standard, Literal };

inline std::string to_string(WishartVariant v) { return v == WishartVariant::Standard ? "standard" : "literal"; }

inline WishartVariant parse_wishart_variant(const std::string& s) {
  if (s == "standard") return WishartVariant::Standard;
  if (s == "literal") return WishartVariant::Literal;
  throw Error("unknown Wishart update variant '" + s + "'");
}

/// Posterior factors of one leaf: q(m_k | V_k) q(V_k) and q(theta_k).
struct VBLeaf {
  Vector m0k;
  Matrix Wk;
  Vector mean;  // E theta_k
  Matrix cov;   // covariance of q(theta_k)
};

struct VBState {
  Vector alpha0;
  std::vector<VBLeaf> leaves;
  double nu_prime = 0.0;
  double b_prime = 0.0;
  Matrix xi;        // N x K
  Matrix xi_tilde;  // T x K
  Matrix p;         // T x K
  WishartVariant variant = WishartVariant::Standard;
};

/// Training inputs: unit-normalized documents plus the centroids and entropy
/// features of the labeled set at unit word weights.
struct VBData {
  TopicTree tree;
  CentroidSet centroids;
  Matrix iota;
  std::vector<SparseVector> x;
  std::vector<std::size_t> z;
  std::vector<SparseVector> x_tilde;

  std::size_t height() const { return tree.height(); }
  std::size_t leaves() const { return tree.leaf_count(); }
  std::size_t dim() const { return static_cast<std::size_t>(iota.rows()); }
};

inline VBData prepare_vb_data(const std::vector<LabeledVector>& labeled, const std::vector<SparseVector>& unlabeled,
                              const TopicTree& tree, std::size_t dim) {
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(dim));
  VBData d;
  d.tree = tree;
  d.centroids = cluster_means(labeled, tree, ones);
  d.iota = entropy_features(d.centroids, tree, dim);
  for (const auto& l : labeled) {
    d.x.push_back(normalize(l.x, ones).x);
    d.z.push_back(l.leaf);
  }
  for (const auto& u : unlabeled) d.x_tilde.push_back(normalize(u, ones).x);
  return d;
}

// ---------------------------------------------------------------------------
// Softmax and its tangent bound

/// ln sum exp(s), max-shifted.
inline double log_sum_exp(const Vector& s) {
  if (s.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = s.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((s.array() - m).exp().sum());
}

inline Vector softmax_prob(const Vector& s) {
  if (s.size() == 0) return s;
  const Vector e = (s.array() - s.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// sum_n ln softmax(s_n)_k over the labeled entries of Z (N x K, one-hot rows).
inline double log_likelihood(const Matrix& Z, const Matrix& S) {
  if (Z.rows() != S.rows() || Z.cols() != S.cols()) throw Error("Z and similarity shapes differ");
  double l = 0.0;
  for (Eigen::Index n = 0; n < Z.rows(); ++n) {
    const Vector s = S.row(n).transpose();
    const double lse = log_sum_exp(s);
    for (Eigen::Index k = 0; k < Z.cols(); ++k)
      if (Z(n, k) != 0.0) l += Z(n, k) * (s[k] - lse);
  }
  return l;
}

/// Tangent-plane upper bound on 1/g(x) taken at xi.
inline double softmax_denominator_bound(const Vector& x, const Vector& xi) {
  if (x.size() != xi.size()) throw Error("x and xi lengths differ");
  const Vector pi = softmax_prob(xi);
  return std::exp(-log_sum_exp(xi) + pi.dot(xi - x));
}

// ---------------------------------------------------------------------------
// Expectations under q

/// E Lambda at the current alpha mean, clamped like the point model.
inline Vector expected_lambda(const VBData& d, const Vector& alpha0) { return lambda_weights(alpha0, d.iota); }

/// E s_k for every leaf: x^T E[Lambda] M_k E[theta_k].
inline Vector expected_scores(const VBData& d, const VBState& st, const SparseVector& x, const Vector& lambda) {
  const std::size_t h = d.height();
  std::vector<double> sims(d.tree.node_count());
  for (std::size_t id = 0; id < sims.size(); ++id) sims[id] = weighted_dot(x, lambda, d.centroids.mu[id]);
  Vector s(static_cast<Eigen::Index>(d.leaves()));
  for (std::size_t k = 0; k < d.leaves(); ++k) {
    double v = 0.0;
    for (std::size_t lvl = 0; lvl < h; ++lvl)
      v += st.leaves[k].mean[static_cast<Eigen::Index>(lvl)] * sims[d.tree.parent(k, h - 1 - lvl)];
    s[static_cast<Eigen::Index>(k)] = v;
  }
  return s;
}

inline Matrix expected_score_matrix(const VBData& d, const VBState& st, const std::vector<SparseVector>& xs,
                                    const Vector& lambda) {
  Matrix s(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(d.leaves()));
  for (std::size_t n = 0; n < xs.size(); ++n) s.row(static_cast<Eigen::Index>(n)) = expected_scores(d, st, xs[n], lambda);
  return s;
}

/// E theta_k and E[theta_k theta_k^T] = (nu' W_k)^-1 + m' m'^T.
inline std::pair<Vector, Matrix> theta_moments(const VBState& st, std::size_t k) {
  const auto& leaf = st.leaves.at(k);
  Eigen::LLT<Matrix> llt(st.nu_prime * leaf.Wk);
  if (llt.info() != Eigen::Success) throw SingularPrecision("W_k of leaf #" + std::to_string(k) + " is not positive definite");
  const Matrix cov = llt.solve(Matrix::Identity(leaf.Wk.rows(), leaf.Wk.cols()));
  return {leaf.mean, cov + leaf.mean * leaf.mean.transpose()};
}

/// z_nk - softmax(xi_n)_k for the labeled documents.
inline Matrix labeled_residuals(const VBData& d, const VBState& st) {
  Matrix r(st.xi.rows(), st.xi.cols());
  for (Eigen::Index n = 0; n < st.xi.rows(); ++n) {
    r.row(n) = -softmax_prob(st.xi.row(n).transpose()).transpose();
    r(n, static_cast<Eigen::Index>(d.z[static_cast<std::size_t>(n)])) += 1.0;
  }
  return r;
}

/// p_tk - softmax(xi~_t)_k sum_k' p_tk' for the unlabeled documents.
inline Matrix unlabeled_residuals(const VBState& st) {
  Matrix r(st.xi_tilde.rows(), st.xi_tilde.cols());
  for (Eigen::Index t = 0; t < st.xi_tilde.rows(); ++t)
    r.row(t) = st.p.row(t) - st.p.row(t).sum() * softmax_prob(st.xi_tilde.row(t).transpose()).transpose();
  return r;
}

/// Dense r_k = sum_n x_n zhat_nk + sum_t x~_t zzhat_tk for every leaf.
inline std::vector<Vector> residual_sums(const VBData& d, const VBState& st) {
  const Matrix zh = labeled_residuals(d, st);
  const Matrix zz = unlabeled_residuals(st);
  std::vector<Vector> r(d.leaves(), Vector::Zero(static_cast<Eigen::Index>(d.dim())));
  auto add = [&](const SparseVector& x, const Matrix& w, Eigen::Index row) {
    for (std::size_t k = 0; k < r.size(); ++k) {
      const double c = w(row, static_cast<Eigen::Index>(k));
      if (c == 0.0) continue;
      for (const auto& e : x.entries) r[k][static_cast<Eigen::Index>(e.index)] += c * e.value;
    }
  };
  for (std::size_t n = 0; n < d.x.size(); ++n) add(d.x[n], zh, static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < d.x_tilde.size(); ++t) add(d.x_tilde[t], zz, static_cast<Eigen::Index>(t));
  return r;
}

// ---------------------------------------------------------------------------
// Factor updates

inline VBState init_state(const VBData& d, const VBHyperparams& hp) {
  hp.check(d.height());
  VBState st;
  st.alpha0 = Vector::Zero(static_cast<Eigen::Index>(d.height()));
  st.nu_prime = hp.nu + 1.0;
  st.b_prime = hp.b + 1.0;
  const Matrix cov = (st.nu_prime * hp.W_prior).inverse();
  st.leaves.assign(d.leaves(), VBLeaf{hp.m0, hp.W_prior, hp.m0, cov});
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(d.dim()));
  st.xi = expected_score_matrix(d, st, d.x, ones);
  st.xi_tilde = expected_score_matrix(d, st, d.x_tilde, ones);
  st.p = Matrix::Constant(static_cast<Eigen::Index>(d.x_tilde.size()), static_cast<Eigen::Index>(d.leaves()),
                          1.0 / static_cast<double>(d.leaves()));
  return st;
}

/// Symmetrizes and floors eigenvalues at `floor`; sets *repaired when needed.
inline Matrix repair_spd(const Matrix& m, double floor = 1e-8, bool* repaired = nullptr) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const bool bad = es.eigenvalues().minCoeff() < floor;
  if (repaired) *repaired = bad;
  if (!bad) return sym;
  const Vector ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Updates q(m_k, V_k) for every leaf and q(alpha). Returns the number of
/// W_k updates that needed an SPD repair.
inline std::size_t update_hyper_factors(VBState& st, const VBData& d, const VBHyperparams& hp) {
  const Matrix W_inv = hp.W_prior.inverse();
  std::size_t repaired = 0;
  for (std::size_t k = 0; k < st.leaves.size(); ++k) {
    auto [mean, second] = theta_moments(st, k);
    auto& leaf = st.leaves[k];
    leaf.m0k = (mean + hp.b * hp.m0) / st.b_prime;
    const Matrix outer = st.b_prime * leaf.m0k * leaf.m0k.transpose();
    const Matrix inv = W_inv + second + hp.b * hp.m0 * hp.m0.transpose() +
                       (st.variant == WishartVariant::Standard ? Matrix(-outer) : outer);
    bool fixed = false;
    leaf.Wk = repair_spd(repair_spd(inv, 1e-8, &fixed).inverse());
    repaired += fixed ? 1 : 0;
  }
  if (repaired > 0) log::warn("SPD repair applied to " + std::to_string(repaired) + " W_k update(s)");

  const auto r = residual_sums(d, st);
  Vector u = Vector::Zero(st.alpha0.size());
  for (std::size_t k = 0; k < st.leaves.size(); ++k) {
    const Vector mt = d.centroids.branch_matrix(d.tree, k) * st.leaves[k].mean;
    u += d.iota.transpose() * r[k].cwiseProduct(mt);
  }
  st.alpha0 = u / hp.a;
  return repaired;
}

/// Updates q(theta_k) for every leaf.
inline void update_theta_factor(VBState& st, const VBData& d) {
  const Vector lambda = expected_lambda(d, st.alpha0);
  const auto r = residual_sums(d, st);
  for (std::size_t k = 0; k < st.leaves.size(); ++k) {
    auto& leaf = st.leaves[k];
    Eigen::LLT<Matrix> llt(st.nu_prime * leaf.Wk);
    if (llt.info() != Eigen::Success) throw SingularPrecision("W_k of leaf #" + std::to_string(k) + " is not positive definite");
    leaf.cov = llt.solve(Matrix::Identity(leaf.Wk.rows(), leaf.Wk.cols()));
    const Vector g = d.centroids.branch_matrix(d.tree, k).transpose() * lambda.cwiseProduct(r[k]);
    leaf.mean = leaf.m0k + leaf.cov * g;
  }
}

/// p_tk = exp(zeta_tk) / (exp(zeta_tk) + g(xi~_t)).
inline void update_labels(VBState& st, const VBData& d) {
  const Vector lambda = expected_lambda(d, st.alpha0);
  for (std::size_t t = 0; t < d.x_tilde.size(); ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const Vector es = expected_scores(d, st, d.x_tilde[t], lambda);
    const Vector xi = st.xi_tilde.row(row).transpose();
    const double lse = log_sum_exp(xi);
    const double shift = softmax_prob(xi).dot(xi - es);
    for (Eigen::Index k = 0; k < es.size(); ++k) {
      const double zeta = es[k] + shift;
      st.p(row, k) = 1.0 / (1.0 + std::exp(lse - zeta));
    }
  }
}

inline void update_xi(VBState& st, const VBData& d) {
  const Vector lambda = expected_lambda(d, st.alpha0);
  st.xi = expected_score_matrix(d, st, d.x, lambda);
  st.xi_tilde = expected_score_matrix(d, st, d.x_tilde, lambda);
}

// ---------------------------------------------------------------------------
// Bound surrogate

namespace detail {
inline double log_det_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw SingularPrecision("matrix is not positive definite");
  return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}
inline double log_multigamma(double x, std::size_t h) {
  double v = static_cast<double>(h * (h - 1)) / 4.0 * std::log(std::numbers::pi);
  for (std::size_t i = 1; i <= h; ++i) v += std::lgamma(x + (1.0 - static_cast<double>(i)) / 2.0);
  return v;
}
/// ln B(W, nu), the Wishart normalizer.
inline double log_wishart_norm(const Matrix& W, double nu) {
  const auto h = static_cast<std::size_t>(W.rows());
  return -0.5 * nu * log_det_spd(W) - 0.5 * nu * static_cast<double>(h) * std::log(2.0) - log_multigamma(nu / 2.0, h);
}
inline double bernoulli_entropy(double p) {
  double e = 0.0;
  if (p > 0.0) e -= p * std::log(p);
  if (p < 1.0) e -= (1.0 - p) * std::log1p(-p);
  return e;
}
}  // namespace detail

/// Per-leaf part of the bound: expected log priors of theta_k, m_k, V_k plus
/// the entropies of their factors.
inline double leaf_surrogate(const VBLeaf& leaf, double nu_prime, double b_prime, const VBHyperparams& hp) {
  const auto hh = leaf.Wk.rows();
  const double h = static_cast<double>(hh);
  const double ln2pi = std::log(2.0 * std::numbers::pi);
  double e_logdet = h * std::log(2.0) + detail::log_det_spd(leaf.Wk);
  for (Eigen::Index i = 1; i <= hh; ++i) e_logdet += boost::math::digamma((nu_prime + 1.0 - static_cast<double>(i)) / 2.0);
  const Matrix EV = nu_prime * leaf.Wk;
  const Matrix second = leaf.cov + leaf.mean * leaf.mean.transpose();

  const double quad_theta = (EV * second).trace() - 2.0 * leaf.mean.dot(EV * leaf.m0k) + leaf.m0k.dot(EV * leaf.m0k) + h / b_prime;
  const double log_p_theta = 0.5 * e_logdet - 0.5 * h * ln2pi - 0.5 * quad_theta;
  const Vector dm = leaf.m0k - hp.m0;
  const double log_p_m = 0.5 * h * std::log(hp.b) - 0.5 * h * ln2pi + 0.5 * e_logdet - 0.5 * hp.b * (dm.dot(EV * dm) + h / b_prime);
  const double log_p_V = detail::log_wishart_norm(hp.W_prior, hp.nu) + 0.5 * (hp.nu - h - 1.0) * e_logdet -
                         0.5 * (hp.W_prior.inverse() * EV).trace();
  const double ent_theta = 0.5 * detail::log_det_spd(leaf.cov) + 0.5 * h * (1.0 + ln2pi);
  const double ent_m = -0.5 * h * std::log(b_prime) + 0.5 * h * ln2pi - 0.5 * e_logdet + 0.5 * h;
  const double ent_V = -detail::log_wishart_norm(leaf.Wk, nu_prime) - 0.5 * (nu_prime - h - 1.0) * e_logdet + 0.5 * nu_prime * h;
  return log_p_theta + log_p_m + log_p_V + ent_theta + ent_m + ent_V;
}

/// Lower bound with every softmax denominator replaced by its tangent bound at
/// the stored xi points.
inline double surrogate(const VBState& st, const VBData& d, const VBHyperparams& hp) {
  log::ScopedMute mute;
  const Vector lambda = expected_lambda(d, st.alpha0);
  double J = 0.0;
  for (std::size_t n = 0; n < d.x.size(); ++n) {
    const Vector es = expected_scores(d, st, d.x[n], lambda);
    const Vector xi = st.xi.row(static_cast<Eigen::Index>(n)).transpose();
    J += es[static_cast<Eigen::Index>(d.z[n])] - log_sum_exp(xi) - softmax_prob(xi).dot(es - xi);
  }
  for (std::size_t t = 0; t < d.x_tilde.size(); ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const Vector es = expected_scores(d, st, d.x_tilde[t], lambda);
    const Vector xi = st.xi_tilde.row(row).transpose();
    const Vector p = st.p.row(row).transpose();
    J += p.dot(es) - p.sum() * (log_sum_exp(xi) + softmax_prob(xi).dot(es - xi));
    for (Eigen::Index k = 0; k < p.size(); ++k) J += detail::bernoulli_entropy(p[k]);
  }
  J -= 0.5 * hp.a * st.alpha0.squaredNorm();
  for (const auto& leaf : st.leaves) J += leaf_surrogate(leaf, st.nu_prime, st.b_prime, hp);
  return J;
}

// ---------------------------------------------------------------------------
// EM loop

struct VBOptions {
  std::size_t max_iters = 200;
  double tol = 1e-5;
  WishartVariant variant = WishartVariant::Standard;
};

struct VBFit {
  VBState state;
  std::vector<double> trace;                    // surrogate after every iteration, xi refitted
  std::vector<std::vector<double>> sweeps;      // surrogate at fixed xi: start, after each factor update
  std::vector<double> changes;                  // max parameter change per iteration
  std::size_t iterations = 0;
  std::size_t spd_repairs = 0;
  bool converged = false;
};

class VBNotConverged : public Error {
 public:
  explicit VBNotConverged(VBFit fit)
      : Error("variational EM did not converge in " + std::to_string(fit.iterations) + " iterations"),
        fit_(std::move(fit)) {}
  const VBFit& fit() const { return fit_; }

 private:
  VBFit fit_;
};

inline double max_parameter_change(const VBState& a, const VBState& b) {
  double c = (a.alpha0 - b.alpha0).cwiseAbs().maxCoeff();
  for (std::size_t k = 0; k < a.leaves.size(); ++k)
    c = std::max(c, (a.leaves[k].mean - b.leaves[k].mean).cwiseAbs().maxCoeff());
  if (a.p.size() > 0) c = std::max(c, (a.p - b.p).cwiseAbs().maxCoeff());
  return c;
}

/// Runs the EM loop from the initial state. Throws VBNotConverged (carrying
/// the last state and trace) when max_iters is exhausted.
inline VBFit fit_em(const VBData& d, const VBHyperparams& hp, const VBOptions& opt = {}) {
  VBFit fit;
  fit.state = init_state(d, hp);
  fit.state.variant = opt.variant;
  auto& st = fit.state;
  log::ScopedMute mute;
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    const VBState before = st;
    std::vector<double> sweep{surrogate(st, d, hp)};
    fit.spd_repairs += update_hyper_factors(st, d, hp);
    sweep.push_back(surrogate(st, d, hp));
    update_theta_factor(st, d);
    sweep.push_back(surrogate(st, d, hp));
    update_labels(st, d);
    sweep.push_back(surrogate(st, d, hp));
    update_xi(st, d);
    fit.trace.push_back(surrogate(st, d, hp));
    fit.sweeps.push_back(std::move(sweep));
    fit.changes.push_back(max_parameter_change(before, st));
    fit.iterations = it + 1;
    if (fit.changes.back() < opt.tol) {
      fit.converged = true;
      break;
    }
  }
  if (fit.spd_repairs > 0)
    log::warn_unmuted("SPD repair applied to " + std::to_string(fit.spd_repairs) + " W_k update(s) during EM");
  if (!fit.converged) throw VBNotConverged(std::move(fit));
  return fit;
}

// ---------------------------------------------------------------------------
// Prediction

/// Class probabilities of the t-th training queue document.
inline Vector predict_evidence(const VBState& st, std::size_t t) { return st.p.row(static_cast<Eigen::Index>(t)).transpose(); }

/// Class probabilities of an unseen document; the variational points are set
/// to the expected scores, so zeta equals E s.
inline Vector predict_evidence(const VBState& st, const VBData& d, const SparseVector& x) {
  const auto xs = normalize(x, Vector::Ones(static_cast<Eigen::Index>(d.dim()))).x;
  const Vector es = expected_scores(d, st, xs, expected_lambda(d, st.alpha0));
  const double lse = log_sum_exp(es);
  return (1.0 / (1.0 + (lse - es.array()).exp())).matrix();
}

/// Softmax of the hierarchical similarity at the posterior means.
inline Vector predict_map(const VBState& st, const VBData& d, const SparseVector& x) {
  const auto xs = normalize(x, Vector::Ones(static_cast<Eigen::Index>(d.dim()))).x;
  return softmax_prob(expected_scores(d, st, xs, expected_lambda(d, st.alpha0)));
}

inline RankedList rank_leaves_vb(const VBState& st, const VBData& d, const SparseVector& x) {
  const Vector p = predict_evidence(st, d, x);
  return rank_by_scores(std::vector<double>(p.data(), p.data() + p.size()));
}

/// Point model with alpha = alpha0, theta_k = E theta_k and the training
/// centroids; its hSim ranking matches the variational ranking.
inline HsimModel to_hsim_model(const VBData& d, Dictionary dict, const VBState& st) {
  std::vector<Vector> theta;
  for (const auto& l : st.leaves) theta.push_back(l.mean);
  HsimModel m{std::move(dict), d.tree, WeightModel{st.alpha0, d.iota, expected_lambda(d, st.alpha0)}, d.centroids,
              std::move(theta)};
  m.check();
  return m;
}

}  // namespace hsim
