#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hsim/corpus.hpp"
#include "hsim/error.hpp"
#include "hsim/simcore.hpp"

namespace hsim {

/// 1-based position of the expert leaf in a ranking.
inline std::size_t expert_rank(const RankedList& ranked, std::size_t expert_leaf) {
  auto it = std::find(ranked.order.begin(), ranked.order.end(), expert_leaf);
  if (it == ranked.order.end()) throw UnknownLeaf("leaf #" + std::to_string(expert_leaf));
  return static_cast<std::size_t>(it - ranked.order.begin()) + 1;
}

/// counts[k-1] = number of documents whose expert rank is <= k.
inline std::vector<std::size_t> cumulative_histogram(const std::vector<std::size_t>& ranks, std::size_t leaves) {
  std::vector<std::size_t> counts(leaves, 0);
  for (auto r : ranks) {
    if (r < 1 || r > leaves) throw OutOfRange("rank outside [1, K]");
    ++counts[r - 1];
  }
  for (std::size_t k = 1; k < leaves; ++k) counts[k] += counts[k - 1];
  return counts;
}

/// Area under the cumulative histogram, normalized by documents and leaves.
inline double auch(const std::vector<std::size_t>& ranks, std::size_t leaves) {
  if (ranks.empty() || leaves == 0) return 0.0;
  const auto counts = cumulative_histogram(ranks, leaves);
  double area = 0.0;
  for (auto c : counts) area += static_cast<double>(c);
  return area / (static_cast<double>(leaves) * static_cast<double>(ranks.size()));
}

/// DCG at cutoff k for a single relevant item at rank j (1-based). Rank 1
/// contributes exactly 1; deeper ranks contribute 1/log2(j).
inline double dcg_at(std::size_t rank, std::size_t k) {
  if (k < 1) throw OutOfRange("cutoff must be at least 1");
  if (rank > k || rank < 1) return 0.0;
  return rank == 1 ? 1.0 : 1.0 / std::log2(static_cast<double>(rank));
}

inline double p_at(std::size_t rank, std::size_t k) {
  if (k < 1) throw OutOfRange("cutoff must be at least 1");
  return (rank >= 1 && rank <= k) ? 1.0 / static_cast<double>(k) : 0.0;
}

struct EvalReport {
  std::size_t leaves = 0;
  std::vector<std::size_t> histogram;
  double auch = 0.0;
  std::map<std::size_t, double> dcg;  // cutoff -> mean over documents
  std::map<std::size_t, double> p;
  std::vector<std::pair<std::string, std::size_t>> ranks;  // doc id, expert rank

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline std::vector<std::size_t> default_cutoffs(std::size_t leaves) {
  std::vector<std::size_t> out;
  for (std::size_t k : {1, 3, 5, 10})
    if (k <= leaves) out.push_back(k);
  if (out.empty() || out.back() != leaves) out.push_back(leaves);
  return out;
}

/// Evaluates a ranker (SparseVector -> RankedList) on the given documents.
template <class Ranker>
EvalReport evaluate(Ranker&& ranker, const Corpus& corpus, const std::vector<std::size_t>& doc_indices,
                    std::vector<std::size_t> cutoffs = {}) {
  EvalReport rep;
  rep.leaves = corpus.tree().leaf_count();
  if (cutoffs.empty()) cutoffs = default_cutoffs(rep.leaves);
  std::vector<std::size_t> ranks;
  for (auto n : doc_indices) {
    const auto& leaf = corpus.labels().leaf(n);
    if (!leaf) throw Error("document '" + corpus.document(n).id + "' is unlabeled");
    const auto r = expert_rank(ranker(corpus.document(n).counts), *leaf);
    ranks.push_back(r);
    rep.ranks.emplace_back(corpus.document(n).id, r);
  }
  rep.histogram = cumulative_histogram(ranks, rep.leaves);
  rep.auch = auch(ranks, rep.leaves);
  for (auto k : cutoffs) {
    double d = 0.0, p = 0.0;
    for (auto r : ranks) {
      d += dcg_at(r, k);
      p += p_at(r, k);
    }
    const double n = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
    rep.dcg[k] = d / n;
    rep.p[k] = p / n;
  }
  return rep;
}

inline std::vector<std::size_t> ranks_of(const EvalReport& r) {
  std::vector<std::size_t> out;
  for (const auto& [id, rank] : r.ranks) out.push_back(rank);
  return out;
}

// ---------------------------------------------------------------------------
// Cluster similarity diagnostics

/// Weighted cosine similarity between the centroids of one level.
inline Matrix pairwise_cluster_similarity(const HsimModel& model, std::size_t level) {
  const auto& ids = model.tree.level_nodes(level);
  const auto K = static_cast<Eigen::Index>(ids.size());
  Matrix s(K, K);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = 0; j < K; ++j)
      s(i, j) = weighted_similarity(model.centroids.mu[ids[static_cast<std::size_t>(i)]],
                                    model.centroids.mu[ids[static_cast<std::size_t>(j)]], model.weights.lambda);
  return s;
}

/// Mean weighted similarity of document pairs drawn from clusters i and j of
/// one level; diagonal entries average over distinct pairs only.
inline Matrix document_pair_similarity(const std::vector<LabeledVector>& docs, const TopicTree& tree,
                                       std::size_t level, const Vector& lambda) {
  const std::size_t K = tree.level_count(level);
  std::vector<Vector> sum(K, Vector::Zero(lambda.size()));
  std::vector<double> self(K, 0.0);
  std::vector<double> count(K, 0.0);
  for (const auto& d : docs) {
    const auto xn = normalize(d.x, lambda);
    if (xn.degenerate) continue;
    const auto c = tree.ancestor_index(d.leaf, level);
    for (const auto& e : xn.x.entries) sum[c][static_cast<Eigen::Index>(e.index)] += e.value;
    self[c] += 1.0;  // x^T Lambda x = 1 after normalization
    count[c] += 1.0;
  }
  Matrix s = Matrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      const double cross = (sum[i].array() * lambda.array() * sum[j].array()).sum();
      double v = 0.0;
      if (i == j) {
        if (count[i] > 1.0) v = (cross - self[i]) / (count[i] * (count[i] - 1.0));
      } else if (count[i] > 0.0 && count[j] > 0.0) {
        v = cross / (count[i] * count[j]);
      }
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return s;
}

struct DiagonalSummary {
  double on_diagonal = 0.0;
  double off_diagonal = 0.0;
};

inline DiagonalSummary summarize_diagonal(const Matrix& s) {
  DiagonalSummary out;
  const auto K = s.rows();
  if (K == 0) return out;
  out.on_diagonal = s.diagonal().mean();
  if (K > 1) out.off_diagonal = (s.sum() - s.diagonal().sum()) / static_cast<double>(K * (K - 1));
  return out;
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {
inline std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}
}  // namespace detail

/// Comma-separated report: one row per histogram bin (with the plot-ready
/// envelope value), the AUCH, per-cutoff DCG and p@k, and per-document ranks.
inline void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "metric,key,value\n";
  out << "leaves,," << r.leaves << '\n';
  out << "documents,," << r.ranks.size() << '\n';
  out << "auch,," << detail::exact(r.auch) << '\n';
  const double n = r.ranks.empty() ? 1.0 : static_cast<double>(r.ranks.size());
  for (std::size_t k = 0; k < r.histogram.size(); ++k) {
    out << "histogram," << k + 1 << ',' << r.histogram[k] << '\n';
    out << "envelope," << k + 1 << ',' << detail::exact(static_cast<double>(r.histogram[k]) / n) << '\n';
  }
  for (const auto& [k, v] : r.dcg) out << "dcg," << k << ',' << detail::exact(v) << '\n';
  for (const auto& [k, v] : r.p) out << "p_at," << k << ',' << detail::exact(v) << '\n';
  for (const auto& [id, rank] : r.ranks) out << "rank," << id << ',' << rank << '\n';
}

inline EvalReport read_report_csv(std::istream& in) {
  EvalReport r;
  std::string line;
  if (!std::getline(in, line) || line != "metric,key,value") throw FormatError("missing report header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.rfind(',');
    if (a == std::string::npos || a == b) throw FormatError("bad report row '" + line + "'");
    const std::string metric = line.substr(0, a);
    const std::string key = line.substr(a + 1, b - a - 1);
    const std::string value = line.substr(b + 1);
    if (metric == "leaves") {
      r.leaves = std::stoul(value);
    } else if (metric == "auch") {
      r.auch = detail::parse_double(value);
    } else if (metric == "histogram") {
      r.histogram.push_back(std::stoul(value));
    } else if (metric == "dcg") {
      r.dcg[std::stoul(key)] = detail::parse_double(value);
    } else if (metric == "p_at") {
      r.p[std::stoul(key)] = detail::parse_double(value);
    } else if (metric == "rank") {
      r.ranks.emplace_back(key, std::stoul(value));
    }
  }
  return r;
}

inline json report_to_json(const EvalReport& r) {
  json j = {{"leaves", r.leaves}, {"documents", r.ranks.size()}, {"auch", r.auch}, {"histogram", r.histogram}};
  const double n = r.ranks.empty() ? 1.0 : static_cast<double>(r.ranks.size());
  json env = json::array();
  for (auto c : r.histogram) env.push_back(static_cast<double>(c) / n);
  j["envelope"] = env;
  for (const auto& [k, v] : r.dcg) j["dcg"][std::to_string(k)] = v;
  for (const auto& [k, v] : r.p) j["p_at"][std::to_string(k)] = v;
  return j;
}

enum class ReportFormat { Csv, Json };

inline void emit_report(const EvalReport& r, ReportFormat format, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot write report " + path);
  if (format == ReportFormat::Csv)
    write_report_csv(out, r);
  else
    out << report_to_json(r).dump(2) << '\n';
  if (!out) throw IoFailure("failed writing report " + path);
}

}  // namespace hsim
