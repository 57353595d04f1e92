#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace hsim;
using fixture::vec;

namespace {
// Two leaves under the root with identical documents, hence identical centroids.
VBData symmetric_data() {
  const auto tree = load_hierarchy(json::parse(R"({"name":"r","children":[{"name":"a"},{"name":"b"}]})"));
  std::vector<LabeledVector> labeled = {{SparseVector{{0, 1}, {1, 2}}, 0}, {SparseVector{{0, 1}, {1, 2}}, 1}};
  return prepare_vb_data(labeled, {SparseVector{{0, 2}, {1, 1}}}, tree, 2);
}

// Labeled only, with variational points putting all mass on the true leaf.
VBState exact_margin_state(const VBData& d, const VBHyperparams& hp) {
  VBState st = init_state(d, hp);
  for (Eigen::Index n = 0; n < st.xi.rows(); ++n) {
    st.xi.row(n).setZero();
    st.xi(n, static_cast<Eigen::Index>(d.z[static_cast<std::size_t>(n)])) = 1e3;
  }
  return st;
}

VBData labeled_only() {
  auto t = oracle::tiny_instance();
  t.data.x_tilde.clear();
  return t.data;
}

VBState advanced(const oracle::Tiny& t, WishartVariant v, int sweeps = 2) {
  VBState st = init_state(t.data, t.hyper);
  st.variant = v;
  for (int i = 0; i < sweeps; ++i) {
    update_hyper_factors(st, t.data, t.hyper);
    update_theta_factor(st, t.data);
    update_labels(st, t.data);
    update_xi(st, t.data);
  }
  return st;
}
}  // namespace

TEST(Softmax, Examples) {
  EXPECT_TRUE(softmax_prob(vec({0.3, 0.3, 0.3})).isApprox(Vector::Constant(3, 1.0 / 3)));
  EXPECT_TRUE(softmax_prob(vec({std::log(2.0), 0})).isApprox(vec({2.0 / 3, 1.0 / 3}), 1e-15));
  EXPECT_TRUE(softmax_prob(vec({1, 2, 5}).array() + 700.0).isApprox(softmax_prob(vec({1, 2, 5}))));
}

TEST(LogLikelihood, Examples) {
  Matrix Z(1, 2), S(1, 2);
  Z << 1, 0;
  S << 800, 0;
  EXPECT_EQ(log_likelihood(Z, S), 0.0);
  Matrix Z3 = Matrix::Zero(3, 4), S3 = Matrix::Constant(3, 4, 0.4);
  for (int n = 0; n < 3; ++n) Z3(n, n) = 1;
  EXPECT_NEAR(log_likelihood(Z3, S3), -3 * std::log(4.0), 1e-12);
  S << std::log(2.0), 0;
  EXPECT_NEAR(log_likelihood(Z, S), std::log(2.0 / 3), 1e-15);
}

TEST(DenominatorBound, TangentPointIsExact) {
  const Vector x = vec({0.3, -1.2, 2.0});
  EXPECT_NEAR(softmax_denominator_bound(x, x), std::exp(-oracle::lse(x)), 1e-15);
}

TEST(DenominatorBound, UpperBoundsOnRandomPairs) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::Index K = 1 + trial % 10;
    Vector x(K), xi(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      x[k] = n(rng);
      xi[k] = n(rng);
    }
    const double inv_g = std::exp(-oracle::lse(x));
    EXPECT_GE(softmax_denominator_bound(x, xi), inv_g * (1 - 1e-12));
  }
}

TEST(DenominatorBound, SingleClassIsExact) {
  for (double xi : {-3.0, 0.0, 4.0}) EXPECT_NEAR(softmax_denominator_bound(vec({1.5}), vec({xi})), std::exp(-1.5), 1e-15);
}

TEST(InitState, Examples) {
  const auto t = oracle::tiny_instance();
  const auto st = init_state(t.data, t.hyper);
  EXPECT_EQ(st.nu_prime - t.hyper.nu, 1.0);
  EXPECT_EQ(st.b_prime - t.hyper.b, 1.0);
  EXPECT_EQ(st.alpha0, Vector::Zero(2));
  for (const auto& l : st.leaves) {
    EXPECT_EQ(l.m0k, vec({0.5, 0.5}));
    EXPECT_EQ(l.mean, vec({0.5, 0.5}));
    EXPECT_EQ(l.Wk, t.hyper.W_prior);
  }
  EXPECT_TRUE(st.p.rowwise().sum().isApprox(Vector::Ones(2)));
  const oracle::Dense D(t.data);
  EXPECT_TRUE(st.xi.isApprox(D.scores(D.X, Vector::Zero(2), {vec({0.5, 0.5}), vec({0.5, 0.5})})));
}

TEST(Hyperparams, Validation) {
  auto hp = VBHyperparams::defaults(3);
  EXPECT_NO_THROW(hp.check(3));
  EXPECT_EQ(hp.W_prior(0, 1), -1.0 / 6);
  hp.nu = 2.0;
  EXPECT_THROW(hp.check(3), Error);
  hp = VBHyperparams::defaults(3);
  hp.W_prior(0, 1) = hp.W_prior(1, 0) = 2.0;
  EXPECT_THROW(hp.check(3), SingularPrecision);
}

TEST(ThetaMoments, Examples) {
  VBState st;
  st.nu_prime = 2.0;
  st.leaves = {VBLeaf{vec({0, 0}), Matrix::Identity(2, 2), vec({1, 0}), Matrix::Identity(2, 2)}};
  auto [mean, second] = theta_moments(st, 0);
  Matrix expected = 0.5 * Matrix::Identity(2, 2);
  expected(0, 0) += 1.0;
  EXPECT_TRUE(second.isApprox(expected));
  EXPECT_EQ(mean, vec({1, 0}));

  st.leaves[0].mean = vec({0, 0});
  EXPECT_TRUE(theta_moments(st, 0).second.isApprox(0.5 * Matrix::Identity(2, 2)));

  st.leaves[0].Wk(1, 1) = -1.0;
  EXPECT_THROW(theta_moments(st, 0), SingularPrecision);
}

TEST(ThetaMoments, SecondMomentDominatesMean) {
  const auto t = oracle::tiny_instance();
  const auto st = advanced(t, WishartVariant::Standard);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto [m, s] = theta_moments(st, k);
    EXPECT_GE(s.trace(), m.squaredNorm());
  }
}

TEST(HyperUpdate, StrongPriorPinsMean) {
  auto t = oracle::tiny_instance();
  t.hyper.b = 1e12;
  VBState st = advanced(t, WishartVariant::Standard, 1);
  update_hyper_factors(st, t.data, t.hyper);
  for (const auto& l : st.leaves) EXPECT_TRUE(l.m0k.isApprox(t.hyper.m0, 1e-9));
}

TEST(HyperUpdate, ZeroResidualsGiveZeroAlpha) {
  const auto d = labeled_only();
  const auto hp = VBHyperparams::defaults(2);
  VBState st = exact_margin_state(d, hp);
  st.alpha0 = vec({0.3, -0.2});
  update_hyper_factors(st, d, hp);
  EXPECT_LT(st.alpha0.cwiseAbs().maxCoeff(), 1e-300);
}

TEST(HyperUpdate, KeepsPrecisionsPositiveDefinite) {
  const auto t = oracle::tiny_instance();
  VBState st = advanced(t, WishartVariant::Standard, 5);
  for (const auto& l : st.leaves) EXPECT_EQ(Eigen::LLT<Matrix>(l.Wk).info(), Eigen::Success);
  EXPECT_EQ(st.nu_prime, t.hyper.nu + 1);
  EXPECT_EQ(st.b_prime, t.hyper.b + 1);
}

TEST(ThetaUpdate, ZeroResidualsKeepPriorMean) {
  const auto d = labeled_only();
  const auto hp = VBHyperparams::defaults(2);
  VBState st = exact_margin_state(d, hp);
  st.leaves[0].m0k = vec({0.7, 0.2});
  update_theta_factor(st, d);
  EXPECT_EQ(st.leaves[0].mean, vec({0.7, 0.2}));
}

TEST(ThetaUpdate, SingleDocumentHandComputation) {
  const auto tree = load_hierarchy(json::parse(R"({"name":"r","children":[{"name":"a"},{"name":"b"}]})"));
  const std::vector<LabeledVector> labeled = {{SparseVector{{0, 3}, {1, 4}}, 0}, {SparseVector{{2, 1}}, 1}};
  VBData d = prepare_vb_data(labeled, {}, tree, 3);
  d.x.resize(1);
  d.z.resize(1);
  const auto hp = VBHyperparams::defaults(2);
  VBState st = init_state(d, hp);
  st.xi.setZero();
  // W_k = I / nu' makes the posterior covariance the identity.
  for (auto& l : st.leaves) l.Wk = Matrix::Identity(2, 2) / st.nu_prime;
  update_theta_factor(st, d);
  // zhat = [1/2, -1/2]; x = [0.6, 0.8, 0]; root mean [0.3, 0.4, 0.5]; leaf a = x.
  EXPECT_TRUE(st.leaves[0].mean.isApprox(vec({0.5 + 0.5 * 0.5, 0.5 + 0.5 * 1.0}), 1e-12));
  EXPECT_TRUE(st.leaves[1].mean.isApprox(vec({0.5 - 0.5 * 0.5, 0.5}), 1e-12));
  EXPECT_TRUE(st.leaves[0].cov.isApprox(Matrix::Identity(2, 2)));
}

TEST(LabelUpdate, TangentAtLogNormalizerGivesOneHalf) {
  // One leaf: zeta equals xi~ and g(xi~) = exp(xi~), so p = 1/2 for any xi~.
  const auto tree = load_hierarchy(json::parse(R"({"name":"r","children":[{"name":"only"}]})"));
  const VBData d = prepare_vb_data({{SparseVector{{0, 1}}, 0}}, {SparseVector{{0, 1}, {1, 1}}}, tree, 2);
  VBState st = init_state(d, VBHyperparams::defaults(2));
  for (double xi : {-2.0, 0.0, 3.0}) {
    st.xi_tilde(0, 0) = xi;
    update_labels(st, d);
    EXPECT_NEAR(st.p(0, 0), 0.5, 1e-15);
  }
}

TEST(LabelUpdate, MatchesStatedExpression) {
  const auto t = oracle::tiny_instance();
  VBState st = advanced(t, WishartVariant::Standard);
  st.xi_tilde << 0.4, -0.3, 1.0, 2.5;
  update_labels(st, t.data);
  const oracle::Dense D(t.data);
  std::vector<Vector> means = {st.leaves[0].mean, st.leaves[1].mean};
  const Matrix S = D.scores(D.Xt, st.alpha0, means);
  for (Eigen::Index r = 0; r < 2; ++r) {
    const Vector xi = st.xi_tilde.row(r).transpose();
    const Vector pi = (xi.array() - oracle::lse(xi)).exp().matrix();
    for (Eigen::Index k = 0; k < 2; ++k) {
      const double zeta = S(r, k) - pi.dot(S.row(r).transpose() - xi);
      const double p = std::exp(zeta) / (std::exp(zeta) + std::exp(oracle::lse(xi)));
      EXPECT_NEAR(st.p(r, k), p, 1e-12);
      EXPECT_GT(st.p(r, k), 0.0);
      EXPECT_LT(st.p(r, k), 1.0);
    }
  }
}

TEST(LabelUpdate, SymmetricBranchesGiveEqualProbabilities) {
  const auto d = symmetric_data();
  VBState st = init_state(d, VBHyperparams::defaults(2));
  st.xi_tilde.setConstant(0.7);
  update_labels(st, d);
  EXPECT_DOUBLE_EQ(st.p(0, 0), st.p(0, 1));
}

TEST(XiUpdate, UniformMeansGiveMeanLevelSimilarity) {
  const auto t = oracle::tiny_instance();
  VBState st = init_state(t.data, t.hyper);
  st.xi.setZero();
  update_xi(st, t.data);
  const oracle::Dense D(t.data);
  for (Eigen::Index n = 0; n < D.X.rows(); ++n)
    for (std::size_t k = 0; k < 2; ++k)
      EXPECT_NEAR(st.xi(n, static_cast<Eigen::Index>(k)), (D.X.row(n) * D.M[k]).mean(), 1e-15);
}

TEST(XiUpdate, OrthogonalDocumentGivesZeroRow) {
  const auto tree = load_hierarchy(json::parse(R"({"name":"r","children":[{"name":"a"},{"name":"b"}]})"));
  const VBData d =
      prepare_vb_data({{SparseVector{{0, 1}}, 0}, {SparseVector{{1, 1}}, 1}}, {SparseVector{{2, 5}}}, tree, 3);
  VBState st = init_state(d, VBHyperparams::defaults(2));
  update_xi(st, d);
  EXPECT_EQ(st.xi_tilde.row(0), Matrix::Zero(1, 2));
  const Matrix once = st.xi;
  update_xi(st, d);
  EXPECT_EQ(st.xi, once);
}

TEST(Oracle, LibrarySurrogateMatchesIndependentEvaluation) {
  const auto t = oracle::tiny_instance();
  const oracle::Dense D(t.data);
  const auto st = advanced(t, WishartVariant::Standard);
  EXPECT_NEAR(surrogate(st, t.data, t.hyper), oracle::surrogate(D, t.hyper, st), 1e-10);
}

TEST(Oracle, StandardUpdatesAreCoordinateOptima) {
  const auto t = oracle::tiny_instance();
  const oracle::Dense D(t.data);
  const auto st = advanced(t, WishartVariant::Standard);

  VBState a = st;
  update_hyper_factors(a, t.data, t.hyper);
  EXPECT_LT(oracle::state_distance(a, oracle::argmax_hyper(D, t.hyper, st)), 1e-4);

  VBState b = st;
  update_theta_factor(b, t.data);
  EXPECT_LT(oracle::state_distance(b, oracle::argmax_theta(D, t.hyper, st)), 1e-4);

  VBState c = st;
  update_labels(c, t.data);
  EXPECT_LT(oracle::state_distance(c, oracle::argmax_labels(D, t.hyper, st)), 1e-4);

  VBState e = st;
  update_xi(e, t.data);
  EXPECT_LT(oracle::state_distance(e, oracle::argmin_xi(D, t.hyper, st)), 1e-4);
}

TEST(Oracle, LiteralHyperUpdateIsNotACoordinateOptimum) {
  const auto t = oracle::tiny_instance();
  const oracle::Dense D(t.data);
  const auto st = advanced(t, WishartVariant::Literal);
  VBState a = st;
  update_hyper_factors(a, t.data, t.hyper);
  EXPECT_GT(oracle::state_distance(a, oracle::argmax_hyper(D, t.hyper, st)), 1e-2);
}

TEST(Oracle, EachFactorUpdateDoesNotDecreaseSurrogate) {
  const auto t = oracle::tiny_instance();
  VBState st = init_state(t.data, t.hyper);
  for (int it = 0; it < 10; ++it) {
    double before = surrogate(st, t.data, t.hyper);
    update_hyper_factors(st, t.data, t.hyper);
    double after = surrogate(st, t.data, t.hyper);
    EXPECT_GE(after, before - 1e-9);
    update_theta_factor(st, t.data);
    before = after;
    after = surrogate(st, t.data, t.hyper);
    EXPECT_GE(after, before - 1e-9);
    update_labels(st, t.data);
    before = after;
    after = surrogate(st, t.data, t.hyper);
    EXPECT_GE(after, before - 1e-9);
    update_xi(st, t.data);
  }
}

TEST(FitEm, DeterministicWithTraceAndSweeps) {
  const auto t = oracle::tiny_instance();
  const auto a = fit_em(t.data, t.hyper);
  const auto b = fit_em(t.data, t.hyper);
  EXPECT_TRUE(a.converged);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.state.alpha0, b.state.alpha0);
  EXPECT_EQ(a.trace.size(), a.iterations);
  EXPECT_EQ(a.sweeps.size(), a.iterations);
  EXPECT_LT(a.changes.back(), 1e-5);
  for (const auto& sweep : a.sweeps)
    for (std::size_t i = 1; i < sweep.size(); ++i) EXPECT_GE(sweep[i], sweep[i - 1] - 1e-6);
  for (std::size_t i = 1; i < a.trace.size(); ++i) EXPECT_GE(a.trace[i], a.trace[i - 1] - 1e-6);
  EXPECT_TRUE((a.state.p.array() >= 0).all() && (a.state.p.array() <= 1).all());
}

TEST(FitEm, NotConvergedCarriesStateAndTrace) {
  const auto t = oracle::tiny_instance();
  VBOptions opt;
  opt.max_iters = 2;
  opt.tol = 0.0;
  try {
    fit_em(t.data, t.hyper, opt);
    FAIL();
  } catch (const VBNotConverged& e) {
    EXPECT_EQ(e.fit().iterations, 2u);
    EXPECT_EQ(e.fit().trace.size(), 2u);
    EXPECT_FALSE(e.fit().converged);
    EXPECT_EQ(e.fit().state.leaves.size(), 2u);
  }
}

TEST(Predict, SymmetricLeavesAreEqual) {
  const auto d = symmetric_data();
  const auto st = init_state(d, VBHyperparams::defaults(2));
  const Vector p = predict_evidence(st, d, SparseVector{{0, 1}});
  EXPECT_TRUE((p / p.sum()).isApprox(vec({0.5, 0.5})));
  EXPECT_TRUE(predict_map(st, d, SparseVector{{0, 1}}).isApprox(vec({0.5, 0.5})));
}

TEST(Predict, CentroidDocumentRankedFirst) {
  const auto t = oracle::tiny_instance();
  const auto fit = fit_em(t.data, t.hyper);
  for (std::size_t k = 0; k < 2; ++k) {
    const Vector& mu = t.data.centroids.mu[t.data.tree.leaf_id(k)];
    std::map<std::size_t, double> m;
    for (Eigen::Index i = 0; i < mu.size(); ++i) m[static_cast<std::size_t>(i)] = mu[i];
    EXPECT_EQ(rank_leaves_vb(fit.state, t.data, SparseVector::from_map(m)).order.front(), k);
  }
}

TEST(Predict, EvidenceIsMonotoneInScores) {
  const auto t = oracle::tiny_instance();
  const auto fit = fit_em(t.data, t.hyper);
  const SparseVector x{{0, 1}, {1, 2}, {2, 1}};
  const Vector p = predict_evidence(fit.state, t.data, x);
  const Vector s = expected_scores(t.data, fit.state, normalize(x, Vector::Ones(3)).x,
                                   expected_lambda(t.data, fit.state.alpha0));
  EXPECT_EQ(p[0] > p[1], s[0] > s[1]);
  EXPECT_EQ(predict_evidence(fit.state, 1), Vector(fit.state.p.row(1).transpose()));
}

TEST(Predict, MapMatchesCompositionOnThreeLeafToy) {
  const auto tree =
      load_hierarchy(json::parse(R"({"name":"r","children":[{"name":"a"},{"name":"b"},{"name":"c"}]})"));
  const std::vector<LabeledVector> labeled = {{SparseVector{{0, 2}, {1, 1}}, 0},
                                              {SparseVector{{1, 2}, {2, 1}}, 1},
                                              {SparseVector{{2, 2}, {3, 1}}, 2}};
  const VBData d = prepare_vb_data(labeled, {}, tree, 4);
  VBState st = init_state(d, VBHyperparams::defaults(2));
  st.alpha0 = vec({0, 0.4});
  st.leaves[0].mean = vec({0.2, 0.8});
  st.leaves[1].mean = vec({0.6, 0.4});
  st.leaves[2].mean = vec({0.5, 0.5});
  const SparseVector x{{0, 1}, {2, 1}, {3, 2}};
  std::vector<Vector> theta;
  for (const auto& l : st.leaves) theta.push_back(l.mean);
  const Vector lambda = lambda_weights(st.alpha0, d.iota);
  const auto xn = normalize(x, Vector::Ones(4)).x;
  Vector s(3);
  for (std::size_t k = 0; k < 3; ++k)
    s[static_cast<Eigen::Index>(k)] =
        hierarchical_similarity(xn, d.centroids.branch_matrix(tree, k), theta[k], lambda);
  const Vector expected = (s.array() - oracle::lse(s)).exp().matrix();
  const Vector p = predict_map(st, d, x);
  EXPECT_TRUE(p.isApprox(expected, 1e-12));
  Eigen::Index am = 0, as = 0;
  p.maxCoeff(&am);
  s.maxCoeff(&as);
  EXPECT_EQ(am, as);
}

TEST(Predict, MapAndEvidenceAgreeWithoutUncertainty) {
  const auto t = oracle::tiny_instance();
  auto st = fit_em(t.data, t.hyper).state;
  for (auto& l : st.leaves) {
    l.Wk *= 1e12;
    l.cov /= 1e12;
  }
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const SparseVector x{{0, u(rng)}, {1, u(rng)}, {2, u(rng)}};
    const Vector e = predict_evidence(st, t.data, x);
    const Vector m = predict_map(st, t.data, x);
    EXPECT_EQ(rank_by_scores({e[0], e[1]}).order, rank_by_scores({m[0], m[1]}).order);
  }
}

TEST(Predict, PointModelReproducesVariationalRanking) {
  const auto t = oracle::tiny_instance();
  const auto fit = fit_em(t.data, t.hyper);
  const auto m = to_hsim_model(t.data, Dictionary({"wa", "wb", "wc"}), fit.state);
  for (const auto& x : t.data.x_tilde)
    EXPECT_EQ(rank_leaves_hsim(x, m).order, rank_leaves_vb(fit.state, t.data, x).order);
}

TEST(WishartVariantNames, RoundTrip) {
  EXPECT_EQ(parse_wishart_variant(to_string(WishartVariant::Literal)), WishartVariant::Literal);
  EXPECT_EQ(parse_wishart_variant("standard"), WishartVariant::Standard);
  EXPECT_THROW(parse_wishart_variant("other"), Error);
}
