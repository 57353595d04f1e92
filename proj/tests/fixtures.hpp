#pragma once

#include <string>
#include <vector>

#include "hsim.hpp"

namespace fixture {

using hsim::json;

/// root -> {A -> {a1, a2}, B -> {b1, b2}}
inline hsim::TopicTree tree_2x2() {
  return hsim::TopicTree::from_json(json::parse(R"({"name":"root","children":[
    {"name":"A","children":[{"name":"a1"},{"name":"a2"}]},
    {"name":"B","children":[{"name":"b1"},{"name":"b2"}]}]})"));
}

/// Model with hand-set centroids indexed by node id, unit word weights.
inline hsim::HsimModel toy_model(hsim::TopicTree tree, std::vector<hsim::Vector> mu, std::vector<hsim::Vector> theta) {
  const auto dim = mu.front().size();
  std::vector<std::string> words;
  for (Eigen::Index i = 0; i < dim; ++i) words.push_back("w" + std::string(1, static_cast<char>('a' + i)));
  hsim::HsimModel m;
  m.dictionary = hsim::Dictionary(words);
  m.tree = std::move(tree);
  m.weights.alpha = hsim::Vector::Zero(static_cast<Eigen::Index>(m.tree.height()));
  m.weights.iota = hsim::Matrix::Zero(dim, static_cast<Eigen::Index>(m.tree.height()));
  m.weights.lambda = hsim::Vector::Ones(dim);
  m.centroids.mu = std::move(mu);
  m.centroids.members.assign(m.centroids.mu.size(), 1);
  m.theta = std::move(theta);
  m.check();
  return m;
}

inline hsim::Vector vec(std::initializer_list<double> v) {
  hsim::Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

/// Small planted corpus: 2 areas x 2 leaves.
inline hsim::Corpus small_corpus(std::uint64_t seed = 3, std::size_t docs_per_leaf = 12) {
  hsim::synthetic::Config c;
  c.level2 = 2;
  c.leaves_per_level2 = 2;
  c.docs_per_leaf = docs_per_leaf;
  c.level2_keywords = 20;
  c.seed = seed;
  const auto col = hsim::synthetic::generate(c);
  hsim::log::ScopedMute mute;
  return hsim::build_corpus(col.documents, hsim::TopicTree::from_json(col.tree));
}

}  // namespace fixture
