#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsim/corpus.hpp"
#include "hsim/eval.hpp"
#include "hsim/greedy.hpp"
#include "hsim/simcore.hpp"
#include "hsim/snapshot.hpp"
#include "hsim/vbayes.hpp"

namespace hsim {

enum class Method { Greedy, VB, Baseline };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Greedy: return "greedy";
    case Method::VB: return "vb";
    case Method::Baseline: return "baseline";
  }
  return "greedy";
}

inline Method parse_method(std::string_view s) {
  if (s == "greedy") return Method::Greedy;
  if (s == "vb") return Method::VB;
  if (s == "baseline") return Method::Baseline;
  throw Error("unknown training method '" + std::string(s) + "'");
}

struct TrainRequest {
  Method method = Method::Greedy;
  SplitFractions fractions;
  std::uint64_t seed = 1;
  std::optional<Partition> partition;  // used as is when set
  GreedyConfig greedy;
  std::optional<VBHyperparams> hyper;  // defaults for the tree height when unset
  VBOptions vb;
  bool transductive = false;            // vb: test documents join the unlabeled set
  bool accept_unconverged = false;      // vb: keep the last state instead of throwing
  std::vector<SparseVector> unlabeled;  // vb: extra unlabeled vectors in the corpus dictionary
};

/// Counts of `x` re-indexed from one dictionary into another; words missing
/// from `to` are dropped.
inline SparseVector remap(const SparseVector& x, const Dictionary& from, const Dictionary& to) {
  if (from.words() == to.words()) return x;
  std::map<std::size_t, double> counts;
  for (const auto& e : x.entries)
    if (auto i = to.find(from.word(e.index))) counts[*i] += e.value;
  return SparseVector::from_map(counts);
}

inline SparseVector vectorize_text(std::string_view text, const Dictionary& dict, const TokenizerConfig& tok = {}) {
  return vectorize(tokenize(text, tok), dict);
}

/// Test-split report of a model; empty when the partition has no test ids.
inline std::optional<EvalReport> evaluate_on(const HsimModel& model, const Corpus& corpus,
                                             const std::vector<std::string>& ids) {
  std::vector<std::size_t> idx;
  for (const auto& id : ids) {
    const auto n = corpus.find(id);
    if (n && corpus.labels().leaf(*n)) idx.push_back(*n);
  }
  if (idx.empty()) return std::nullopt;
  return evaluate(
      [&](const SparseVector& x) { return rank_leaves_hsim(remap(x, corpus.dictionary(), model.dictionary), model); },
      corpus, idx);
}

namespace detail {
inline json request_json(const TrainRequest& r, const Partition& p, const VBHyperparams* hp) {
  json j = {{"method", to_string(r.method)},
            {"seed", r.seed},
            {"fractions", {r.fractions.v0, r.fractions.v1, r.fractions.v2, r.fractions.test}},
            {"sizes", {p.v0.size(), p.v1.size(), p.v2.size(), p.test.size()}}};
  if (r.method == Method::Greedy) {
    j["max_outer_iters"] = r.greedy.max_outer_iters;
    j["refit_on_training"] = r.greedy.refit_on_training;
    j["literal_penalty_sign"] = r.greedy.literal_penalty_sign;
    if (!r.greedy.alpha_grid.empty()) j["alpha_grid"] = r.greedy.alpha_grid;
  }
  if (r.method == Method::VB && hp) {
    j["a"] = hp->a;
    j["b"] = hp->b;
    j["nu"] = hp->nu;
    j["m0"] = std::vector<double>(hp->m0.data(), hp->m0.data() + hp->m0.size());
    j["tol"] = r.vb.tol;
    j["max_iters"] = r.vb.max_iters;
    j["wishart_update"] = to_string(r.vb.variant);
    j["transductive"] = r.transductive;
  }
  return j;
}
}  // namespace detail

/// Splits the labeled documents, trains with the requested method and
/// evaluates on the test split.
inline Snapshot train(const Corpus& corpus, const TrainRequest& req) {
  Snapshot snap;
  snap.method = to_string(req.method);
  const Partition part = req.partition ? *req.partition : split(corpus, req.fractions, req.seed);
  snap.partition = part;
  const auto& tree = corpus.tree();
  const VBHyperparams* used_hyper = nullptr;
  VBHyperparams hyper;

  switch (req.method) {
    case Method::Greedy: {
      auto res = fit_greedy(corpus, part, req.greedy);
      snap.model = std::move(res.model);
      snap.metrics["validation_auch"] = res.validation_auch;
      snap.metrics["outer_iterations"] = res.iterations;
      snap.metrics["psi"] = res.psi;
      break;
    }
    case Method::Baseline: {
      const auto docs = labeled_vectors(corpus, part.training());
      if (docs.empty()) throw InsufficientData("no training documents");
      auto [alpha, theta] = init_parameters(tree.height(), tree.leaf_count());
      snap.model = make_model(corpus.dictionary(), tree, docs, alpha, std::move(theta));
      break;
    }
    case Method::VB: {
      const auto labeled = labeled_vectors(corpus, part.training());
      if (labeled.empty()) throw InsufficientData("no training documents");
      std::vector<SparseVector> unlabeled = req.unlabeled;
      for (std::size_t n = 0; n < corpus.size(); ++n)
        if (!corpus.labels().leaf(n) && !corpus.document(n).counts.empty())
          unlabeled.push_back(corpus.document(n).counts);
      if (req.transductive)
        for (const auto& id : part.test) unlabeled.push_back(corpus.document(corpus.index_of(id)).counts);
      const VBData data = prepare_vb_data(labeled, unlabeled, tree, corpus.dictionary().size());
      hyper = req.hyper ? *req.hyper : VBHyperparams::defaults(tree.height());
      used_hyper = &hyper;
      VBFit fit;
      try {
        fit = fit_em(data, hyper, req.vb);
      } catch (VBNotConverged& e) {
        if (!req.accept_unconverged) throw;
        fit = e.fit();
      }
      snap.model = to_hsim_model(data, corpus.dictionary(), fit.state);
      snap.metrics["vb_iterations"] = fit.iterations;
      snap.metrics["vb_converged"] = fit.converged;
      snap.metrics["spd_repairs"] = fit.spd_repairs;
      // Queue probabilities refer to training inputs only; drop them from the
      // stored state so snapshots stay small.
      fit.state.xi.resize(0, 0);
      fit.state.xi_tilde.resize(0, 0);
      fit.state.p.resize(0, 0);
      snap.vb = VBSnapshot{std::move(fit.state), hyper, std::move(fit.trace), fit.iterations, fit.converged};
      break;
    }
  }
  snap.training = detail::request_json(req, part, used_hyper);
  if (auto rep = evaluate_on(snap.model, corpus, part.test)) {
    snap.metrics["test"] = report_to_json(*rep);
    snap.metrics["test_auch"] = rep->auch;
  }
  return snap;
}

/// Leaf ranking of a count vector under a snapshot, with VB probabilities
/// when the snapshot carries a variational state.
struct Ranking {
  RankedList ranked;
  std::optional<Vector> probability;  // indexed by leaf
  bool degenerate = false;            // no dictionary word; order is by leaf index
};

inline Ranking rank_snapshot(const Snapshot& snap, const SparseVector& x) {
  Ranking r;
  const auto& m = snap.model;
  if (x.empty() || normalize(x, m.weights.lambda).degenerate) {
    r.degenerate = true;
    r.ranked = rank_by_scores(std::vector<double>(m.leaves(), 0.0));
    return r;
  }
  r.ranked = rank_leaves_hsim(x, m);
  if (snap.vb) r.probability = predict_evidence(snap.vb->state, vb_data_from_model(m), x);
  return r;
}

}  // namespace hsim
