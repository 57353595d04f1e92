#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsim/corpus.hpp"
#include "hsim/error.hpp"
#include "hsim/simcore.hpp"
#include "hsim/vbayes.hpp"

namespace hsim {

inline constexpr const char* kSnapshotFormat = "hsim-snapshot/1";

namespace detail {
inline json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) throw FormatError("matrix row count mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vector row = vector_from(data[static_cast<std::size_t>(r)]);
    if (row.size() != cols) throw FormatError("matrix column count mismatch");
    m.row(r) = row.transpose();
  }
  return m;
}
}  // namespace detail

/// Variational state plus the settings that produced it.
struct VBSnapshot {
  VBState state;
  VBHyperparams hyper;
  std::vector<double> trace;
  std::size_t iterations = 0;
  bool converged = false;
};

/// A trained model with its provenance. Immutable once registered.
struct Snapshot {
  std::string method;  // "greedy", "vb" or "baseline"
  HsimModel model;
  std::optional<Partition> partition;
  json training = json::object();
  json metrics = json::object();
  std::optional<VBSnapshot> vb;
};

inline json vb_to_json(const VBSnapshot& v) {
  json leaves = json::array();
  for (const auto& l : v.state.leaves)
    leaves.push_back({{"m0k", detail::vector_json(l.m0k)},
                      {"Wk", detail::matrix_json(l.Wk)},
                      {"mean", detail::vector_json(l.mean)},
                      {"cov", detail::matrix_json(l.cov)}});
  return {{"wishart_update", to_string(v.state.variant)},
          {"hyper",
           {{"a", v.hyper.a},
            {"b", v.hyper.b},
            {"nu", v.hyper.nu},
            {"W", detail::matrix_json(v.hyper.W_prior)},
            {"m0", detail::vector_json(v.hyper.m0)}}},
          {"alpha0", detail::vector_json(v.state.alpha0)},
          {"nu_prime", v.state.nu_prime},
          {"b_prime", v.state.b_prime},
          {"leaves", std::move(leaves)},
          {"xi", detail::matrix_json(v.state.xi)},
          {"xi_tilde", detail::matrix_json(v.state.xi_tilde)},
          {"p", detail::matrix_json(v.state.p)},
          {"trace", v.trace},
          {"iterations", v.iterations},
          {"converged", v.converged}};
}

inline VBSnapshot vb_from_json(const json& j) {
  VBSnapshot v;
  v.state.variant = parse_wishart_variant(j.at("wishart_update").get<std::string>());
  const auto& h = j.at("hyper");
  v.hyper.a = h.at("a").get<double>();
  v.hyper.b = h.at("b").get<double>();
  v.hyper.nu = h.at("nu").get<double>();
  v.hyper.W_prior = detail::matrix_from(h.at("W"));
  v.hyper.m0 = detail::vector_from(h.at("m0"));
  v.state.alpha0 = detail::vector_from(j.at("alpha0"));
  v.state.nu_prime = j.at("nu_prime").get<double>();
  v.state.b_prime = j.at("b_prime").get<double>();
  for (const auto& l : j.at("leaves"))
    v.state.leaves.push_back({detail::vector_from(l.at("m0k")), detail::matrix_from(l.at("Wk")),
                              detail::vector_from(l.at("mean")), detail::matrix_from(l.at("cov"))});
  v.state.xi = detail::matrix_from(j.at("xi"));
  v.state.xi_tilde = detail::matrix_from(j.at("xi_tilde"));
  v.state.p = detail::matrix_from(j.at("p"));
  v.trace = j.at("trace").get<std::vector<double>>();
  v.iterations = j.at("iterations").get<std::size_t>();
  v.converged = j.at("converged").get<bool>();
  return v;
}

inline json snapshot_to_json(const Snapshot& s) {
  const auto& m = s.model;
  json centroids = json::array();
  for (std::size_t id = 0; id < m.centroids.mu.size(); ++id) {
    json entries = json::array();
    const auto& mu = m.centroids.mu[id];
    for (Eigen::Index i = 0; i < mu.size(); ++i)
      if (mu[i] != 0.0) entries.push_back({i, mu[i]});
    centroids.push_back({{"node", id}, {"members", m.centroids.members.at(id)}, {"entries", std::move(entries)}});
  }
  json theta = json::array();
  for (const auto& t : m.theta) theta.push_back(detail::vector_json(t));
  json j = {{"format", kSnapshotFormat},
            {"method", s.method},
            {"dictionary", m.dictionary.words()},
            {"tree", m.tree.to_json()},
            {"alpha", detail::vector_json(m.weights.alpha)},
            {"iota", detail::matrix_json(m.weights.iota)},
            {"lambda", detail::vector_json(m.weights.lambda)},
            {"theta", std::move(theta)},
            {"centroids", std::move(centroids)},
            {"training", s.training},
            {"metrics", s.metrics}};
  if (s.partition) j["partition"] = s.partition->to_json();
  if (s.vb) j["vb"] = vb_to_json(*s.vb);
  return j;
}

inline Snapshot snapshot_from_json(const json& j) {
  if (j.value("format", "") != kSnapshotFormat) throw FormatError("not an " + std::string(kSnapshotFormat) + " document");
  Snapshot s;
  s.method = j.at("method").get<std::string>();
  s.model.dictionary = Dictionary(j.at("dictionary").get<std::vector<std::string>>());
  s.model.tree = TopicTree::from_json(j.at("tree"));
  s.model.weights.alpha = detail::vector_from(j.at("alpha"));
  s.model.weights.iota = detail::matrix_from(j.at("iota"));
  s.model.weights.lambda = detail::vector_from(j.at("lambda"));
  for (const auto& t : j.at("theta")) s.model.theta.push_back(detail::vector_from(t));
  const auto dim = static_cast<Eigen::Index>(s.model.dictionary.size());
  const auto& cs = j.at("centroids");
  s.model.centroids.mu.assign(cs.size(), Vector::Zero(dim));
  s.model.centroids.members.assign(cs.size(), 0);
  for (const auto& c : cs) {
    const auto id = c.at("node").get<std::size_t>();
    if (id >= cs.size()) throw FormatError("centroid node id out of range");
    s.model.centroids.members[id] = c.at("members").get<std::size_t>();
    for (const auto& e : c.at("entries")) {
      const auto i = e.at(0).get<Eigen::Index>();
      if (i < 0 || i >= dim) throw FormatError("centroid entry index out of range");
      s.model.centroids.mu[id][i] = e.at(1).get<double>();
    }
  }
  s.model.check();
  s.training = j.value("training", json::object());
  s.metrics = j.value("metrics", json::object());
  if (j.contains("partition")) s.partition = Partition::from_json(j.at("partition"));
  if (j.contains("vb")) s.vb = vb_from_json(j.at("vb"));
  return s;
}

/// Writes to a temporary sibling and renames it into place.
inline void save_snapshot(const Snapshot& s, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoFailure("cannot write snapshot " + tmp);
    out << snapshot_to_json(s).dump() << '\n';
    out.flush();
    if (!out) throw IoFailure("failed writing snapshot " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoFailure("cannot move snapshot into place: " + ec.message());
}

inline Snapshot load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot read snapshot " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("snapshot " + path + ": " + e.what());
  }
  return snapshot_from_json(j);
}

/// Variational inputs recovered from a model: centroids, entropy features and
/// tree, without training documents.
inline VBData vb_data_from_model(const HsimModel& m) {
  VBData d;
  d.tree = m.tree;
  d.centroids = m.centroids;
  d.iota = m.weights.iota;
  return d;
}

}  // namespace hsim
