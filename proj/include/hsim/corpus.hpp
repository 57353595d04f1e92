#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "hsim/error.hpp"
#include "hsim/sparse.hpp"

namespace hsim {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Tokenization and dictionary

struct TokenizerConfig {
  std::size_t min_len = 2;
  std::unordered_set<std::string> stopwords;
};

/// Lowercases, splits on every non-alphabetic character, drops short words
/// and stopwords.
inline std::vector<std::string> tokenize(std::string_view text,
                                         const TokenizerConfig& config = {}) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (current.size() >= config.min_len && !config.stopwords.contains(current))
      out.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalpha(c))
      current.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();
  return out;
}

class Dictionary {
 public:
  Dictionary() = default;
  explicit Dictionary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second)
        throw FormatError("duplicate dictionary word '" + words_[i] + "'");
    }
  }

  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(std::size_t i) const { return words_.at(i); }

  std::optional<std::size_t> find(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Keeps words with document frequency in [min_df, max_df_ratio * |D|], in
/// order of first occurrence.
inline Dictionary build_dictionary(const std::vector<std::vector<std::string>>& docs,
                                   std::size_t min_df = 2, double max_df_ratio = 0.5) {
  if (min_df < 1) throw Error("min_df must be at least 1");
  if (!(max_df_ratio > 0.0 && max_df_ratio <= 1.0))
    throw Error("max_df_ratio must lie in (0, 1]");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& doc : docs) {
    std::unordered_set<std::string_view> seen;
    for (const auto& w : doc) {
      if (!seen.insert(w).second) continue;
      auto [it, inserted] = df.emplace(w, 0);
      if (inserted) order.push_back(w);
      ++it->second;
    }
  }
  const double max_df = max_df_ratio * static_cast<double>(docs.size());
  std::vector<std::string> kept;
  for (const auto& w : order) {
    const auto f = df[w];
    if (f >= min_df && static_cast<double>(f) <= max_df + 1e-12) kept.push_back(w);
  }
  if (kept.empty()) throw EmptyDictionary();
  return Dictionary(std::move(kept));
}

inline SparseVector vectorize(const std::vector<std::string>& tokens, const Dictionary& dict) {
  std::map<std::size_t, double> counts;
  for (const auto& t : tokens)
    if (auto i = dict.find(t)) counts[*i] += 1.0;
  return SparseVector::from_map(counts);
}

// ---------------------------------------------------------------------------
// Topic tree

/// Expert hierarchy. Levels and per-level indices are zero-based here; level 0
/// is the root and level height()-1 holds the leaves.
class TopicTree {
 public:
  struct Node {
    std::string name;
    std::size_t level = 0;
    std::size_t index = 0;  // position on its level
    std::optional<std::size_t> parent;
    std::vector<std::size_t> children;
  };

  TopicTree() = default;

  std::size_t height() const { return by_level_.size(); }
  std::size_t level_count(std::size_t level) const { return by_level_.at(level).size(); }
  std::size_t leaf_count() const { return by_level_.empty() ? 0 : by_level_.back().size(); }
  std::size_t node_count() const { return nodes_.size(); }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Node& node(std::size_t level, std::size_t k) const { return nodes_.at(node_id(level, k)); }
  std::size_t node_id(std::size_t level, std::size_t k) const { return by_level_.at(level).at(k); }
  std::size_t root() const { return 0; }
  const std::vector<std::size_t>& level_nodes(std::size_t level) const { return by_level_.at(level); }

  std::size_t leaf_id(std::size_t leaf) const { return node_id(height() - 1, leaf); }
  const std::string& leaf_name(std::size_t leaf) const { return node(leaf_id(leaf)).name; }

  /// Ancestor of a leaf `steps` levels up; steps = 0 is the leaf itself.
  std::size_t parent(std::size_t leaf, std::size_t steps) const {
    if (leaf >= leaf_count()) throw OutOfRange("leaf index out of range");
    if (steps >= height())
      throw OutOfRange("cannot ascend " + std::to_string(steps) + " steps in a tree of height " +
                       std::to_string(height()));
    std::size_t id = leaf_id(leaf);
    for (std::size_t s = 0; s < steps; ++s) id = *nodes_[id].parent;
    return id;
  }

  /// Per-level index of the ancestor of `leaf` on `level`.
  std::size_t ancestor_index(std::size_t leaf, std::size_t level) const {
    return nodes_[parent(leaf, height() - 1 - level)].index;
  }

  /// Leaf indices under a node, left to right.
  std::vector<std::size_t> leaves_under(std::size_t id) const {
    std::vector<std::size_t> out;
    collect_leaves(id, out);
    return out;
  }

  /// Root-to-leaf names of branch `leaf`.
  std::vector<std::string> branch_names(std::size_t leaf) const {
    std::vector<std::string> names(height());
    for (std::size_t lvl = 0; lvl < height(); ++lvl)
      names[lvl] = nodes_[parent(leaf, height() - 1 - lvl)].name;
    return names;
  }

  /// Resolves a leaf by name, or by a '/'-separated path below the root when
  /// the bare name is ambiguous.
  std::size_t find_leaf(const std::string& name) const {
    std::optional<std::size_t> hit;
    for (std::size_t k = 0; k < leaf_count(); ++k) {
      const auto branch = branch_names(k);
      std::string path;
      for (std::size_t lvl = 1; lvl < branch.size(); ++lvl)
        path += (lvl > 1 ? "/" : "") + branch[lvl];
      if (path == name) return k;
      if (branch.back() == name) {
        if (hit) throw UnknownLeaf(name + "' (ambiguous; use the full path");
        hit = k;
      }
    }
    if (!hit) throw UnknownLeaf(name);
    return *hit;
  }

  static TopicTree from_json(const json& j) {
    TopicTree t;
    t.add(j, std::nullopt, 0);
    t.finalize();
    return t;
  }

  json to_json(std::size_t id = 0) const {
    const auto& n = nodes_.at(id);
    json j = {{"name", n.name}};
    if (!n.children.empty()) {
      j["children"] = json::array();
      for (auto c : n.children) j["children"].push_back(to_json(c));
    }
    return j;
  }

 private:
  void collect_leaves(std::size_t id, std::vector<std::size_t>& out) const {
    const auto& n = nodes_[id];
    if (n.children.empty()) {
      out.push_back(n.index);
      return;
    }
    for (auto c : n.children) collect_leaves(c, out);
  }

  std::size_t add(const json& j, std::optional<std::size_t> parent, std::size_t level) {
    if (!j.is_object() || !j.contains("name") || !j["name"].is_string())
      throw FormatError("tree node must be an object with a string 'name'");
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{j["name"].get<std::string>(), level, 0, parent, {}});
    if (by_level_.size() <= level) by_level_.resize(level + 1);
    nodes_[id].index = by_level_[level].size();
    by_level_[level].push_back(id);

    if (j.contains("children") && !j["children"].is_null()) {
      const auto& ch = j["children"];
      if (!ch.is_array()) throw FormatError("'children' must be a list");
      std::set<std::string> names;
      for (const auto& c : ch) {
        if (c.is_object() && c.contains("name") && c["name"].is_string() &&
            !names.insert(c["name"].get<std::string>()).second)
          throw DuplicateName(c["name"].get<std::string>());
      }
      for (const auto& c : ch) {
        const auto cid = add(c, id, level + 1);
        nodes_[id].children.push_back(cid);
      }
    }
    return id;
  }

  // Breadth-first per-level order must match left-to-right leaf order, which
  // the depth-first insertion above already guarantees for a tree.
  void finalize() {
    const std::size_t h = by_level_.size();
    for (const auto& n : nodes_)
      if (n.children.empty() && n.level + 1 != h) throw NonUniformDepth(n.name);
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<std::size_t>> by_level_;
};

inline TopicTree load_hierarchy(const json& tree_document) { return TopicTree::from_json(tree_document); }

inline TopicTree load_hierarchy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open hierarchy file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("hierarchy file: ") + e.what());
  }
  return load_hierarchy(j);
}

// ---------------------------------------------------------------------------
// Labels

/// One-hot leaf assignment per document; unlabeled rows are empty.
class LabelMatrix {
 public:
  LabelMatrix() = default;
  LabelMatrix(std::vector<std::optional<std::size_t>> rows, std::size_t leaves)
      : rows_(std::move(rows)), leaves_(leaves) {
    for (const auto& r : rows_)
      if (r && *r >= leaves_) throw OutOfRange("label column out of range");
  }

  std::size_t rows() const { return rows_.size(); }
  std::size_t cols() const { return leaves_; }
  int z(std::size_t n, std::size_t k) const { return rows_.at(n) == k ? 1 : 0; }
  const std::optional<std::size_t>& leaf(std::size_t n) const { return rows_.at(n); }
  void set(std::size_t n, std::optional<std::size_t> k) {
    if (k && *k >= leaves_) throw OutOfRange("label column out of range");
    rows_.at(n) = k;
  }

  Matrix dense() const {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    for (std::size_t n = 0; n < rows(); ++n)
      if (rows_[n]) m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(*rows_[n])) = 1.0;
    return m;
  }

 private:
  std::vector<std::optional<std::size_t>> rows_;
  std::size_t leaves_ = 0;
};

inline LabelMatrix build_label_matrix(const std::vector<std::optional<std::string>>& leaf_names,
                                      const TopicTree& tree) {
  std::vector<std::optional<std::size_t>> rows;
  rows.reserve(leaf_names.size());
  for (const auto& name : leaf_names)
    rows.push_back(name ? std::optional<std::size_t>(tree.find_leaf(*name)) : std::nullopt);
  return LabelMatrix(std::move(rows), tree.leaf_count());
}

// ---------------------------------------------------------------------------
// Documents and the corpus

struct RawDocument {
  std::string id;
  std::string text;
  std::optional<std::string> leaf;
};

struct Document {
  std::string id;
  std::vector<std::string> tokens;
  SparseVector counts;
  bool empty_after_pruning = false;
};

inline std::vector<RawDocument> read_documents_jsonl(std::istream& in) {
  std::vector<RawDocument> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      RawDocument d;
      d.id = j.at("id").get<std::string>();
      d.text = j.value("text", std::string{});
      if (j.contains("leaf") && !j["leaf"].is_null()) d.leaf = j["leaf"].get<std::string>();
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw FormatError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<RawDocument> read_documents_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open corpus file " + path);
  return read_documents_jsonl(in);
}

inline void write_documents_jsonl(std::ostream& out, const std::vector<RawDocument>& docs) {
  for (const auto& d : docs) {
    json j = {{"id", d.id}, {"text", d.text}};
    if (d.leaf) j["leaf"] = *d.leaf;
    out << j.dump() << '\n';
  }
}

struct CorpusConfig {
  TokenizerConfig tokenizer;
  std::size_t min_df = 2;
  double max_df_ratio = 0.5;
};

/// Vectorized documents with their labels. Immutable once built.
class Corpus {
 public:
  Corpus() = default;
  Corpus(Dictionary dict, TopicTree tree, std::vector<Document> docs, LabelMatrix labels)
      : dict_(std::move(dict)), tree_(std::move(tree)), docs_(std::move(docs)), labels_(std::move(labels)) {
    if (labels_.rows() != docs_.size()) throw Error("label rows do not match documents");
    for (std::size_t n = 0; n < docs_.size(); ++n) {
      if (!by_id_.emplace(docs_[n].id, n).second)
        throw FormatError("duplicate document id '" + docs_[n].id + "'");
      for (const auto& e : docs_[n].counts.entries)
        if (e.index >= dict_.size()) throw OutOfRange("count index outside the dictionary");
    }
  }

  const Dictionary& dictionary() const { return dict_; }
  const TopicTree& tree() const { return tree_; }
  const std::vector<Document>& documents() const { return docs_; }
  const Document& document(std::size_t n) const { return docs_.at(n); }
  const LabelMatrix& labels() const { return labels_; }
  std::size_t size() const { return docs_.size(); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t index_of(const std::string& id) const {
    auto n = find(id);
    if (!n) throw OutOfRange("unknown document id '" + id + "'");
    return *n;
  }

  std::vector<std::size_t> labeled_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < docs_.size(); ++n)
      if (labels_.leaf(n)) out.push_back(n);
    return out;
  }

  /// Copy of this corpus with a different label assignment.
  Corpus with_labels(LabelMatrix labels) const {
    return Corpus(dict_, tree_, docs_, std::move(labels));
  }

  json to_json() const {
    json docs = json::array();
    for (std::size_t n = 0; n < docs_.size(); ++n) {
      json counts = json::array();
      for (const auto& e : docs_[n].counts.entries) counts.push_back({e.index, e.value});
      json d = {{"id", docs_[n].id}, {"counts", counts}};
      d["leaf"] = labels_.leaf(n) ? json(tree_.leaf_name(*labels_.leaf(n))) : json(nullptr);
      d["leaf_index"] = labels_.leaf(n) ? json(*labels_.leaf(n)) : json(nullptr);
      if (!docs_[n].tokens.empty()) d["tokens"] = docs_[n].tokens;
      if (docs_[n].empty_after_pruning) d["empty"] = true;
      docs.push_back(std::move(d));
    }
    return {{"format", "hsim-corpus/1"},
            {"dictionary", dict_.words()},
            {"tree", tree_.to_json()},
            {"documents", std::move(docs)}};
  }

  static Corpus from_json(const json& j) {
    if (j.value("format", "") != "hsim-corpus/1") throw FormatError("not an hsim-corpus/1 document");
    Dictionary dict(j.at("dictionary").get<std::vector<std::string>>());
    TopicTree tree = TopicTree::from_json(j.at("tree"));
    std::vector<Document> docs;
    std::vector<std::optional<std::size_t>> rows;
    for (const auto& d : j.at("documents")) {
      Document doc;
      doc.id = d.at("id").get<std::string>();
      for (const auto& e : d.at("counts"))
        doc.counts.entries.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>()});
      doc.counts.canonicalize();
      doc.tokens = d.value("tokens", std::vector<std::string>{});
      doc.empty_after_pruning = d.value("empty", false);
      if (d.contains("leaf_index") && !d["leaf_index"].is_null())
        rows.emplace_back(d["leaf_index"].get<std::size_t>());
      else if (d.contains("leaf") && !d["leaf"].is_null())
        rows.emplace_back(tree.find_leaf(d["leaf"].get<std::string>()));
      else
        rows.emplace_back(std::nullopt);
      docs.push_back(std::move(doc));
    }
    LabelMatrix labels(std::move(rows), tree.leaf_count());
    return Corpus(std::move(dict), std::move(tree), std::move(docs), std::move(labels));
  }

 private:
  Dictionary dict_;
  TopicTree tree_;
  std::vector<Document> docs_;
  LabelMatrix labels_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

inline Corpus load_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open corpus " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("corpus " + path + ": " + e.what());
  }
  return Corpus::from_json(j);
}

inline void save_corpus_file(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot write corpus " + path);
  out << corpus.to_json().dump() << '\n';
  if (!out) throw IoFailure("failed writing corpus " + path);
}

/// Tokenizes, prunes the vocabulary, vectorizes, and attaches labels.
inline Corpus build_corpus(const std::vector<RawDocument>& raw, TopicTree tree,
                           const CorpusConfig& config = {}) {
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(raw.size());
  for (const auto& d : raw) tokens.push_back(tokenize(d.text, config.tokenizer));
  Dictionary dict = build_dictionary(tokens, config.min_df, config.max_df_ratio);

  std::vector<Document> docs;
  std::vector<std::optional<std::string>> leaf_names;
  std::size_t flagged = 0;
  for (std::size_t n = 0; n < raw.size(); ++n) {
    Document d{raw[n].id, std::move(tokens[n]), {}, false};
    d.counts = vectorize(d.tokens, dict);
    d.empty_after_pruning = d.counts.empty();
    flagged += d.empty_after_pruning ? 1 : 0;
    docs.push_back(std::move(d));
    leaf_names.push_back(raw[n].leaf);
  }
  if (flagged > 0)
    log::warn(std::to_string(flagged) + " document(s) have no dictionary words after pruning");
  LabelMatrix labels = build_label_matrix(leaf_names, tree);
  return Corpus(std::move(dict), std::move(tree), std::move(docs), std::move(labels));
}

// ---------------------------------------------------------------------------
// Training splits

struct Partition {
  std::vector<std::string> v0, v1, v2, test;

  friend bool operator==(const Partition&, const Partition&) = default;

  json to_json() const { return {{"v0", v0}, {"v1", v1}, {"v2", v2}, {"test", test}}; }
  static Partition from_json(const json& j) {
    Partition p;
    p.v0 = j.value("v0", std::vector<std::string>{});
    p.v1 = j.value("v1", std::vector<std::string>{});
    p.v2 = j.value("v2", std::vector<std::string>{});
    p.test = j.value("test", std::vector<std::string>{});
    return p;
  }

  std::vector<std::string> training() const {
    std::vector<std::string> out = v0;
    out.insert(out.end(), v1.begin(), v1.end());
    out.insert(out.end(), v2.begin(), v2.end());
    return out;
  }
};

struct SplitFractions {
  double v0 = 0.25, v1 = 0.25, v2 = 0.25, test = 0.25;
};

namespace detail {

/// Unbiased draw from [0, n) using raw engine output, so results do not
/// depend on the standard library's distribution implementation.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do r = rng();
  while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace detail

/// Stratified, seeded split of the labeled documents. Documents are dealt
/// leaf by leaf; each goes to the set with the largest accumulated credit, so
/// every set's size stays within one document of N * fraction. A fifth bucket
/// with the remaining fraction collects unused documents. A leaf too small to
/// reach V0 by proportion has one document forced there, with a warning.
inline Partition split(const Corpus& corpus, const SplitFractions& f, std::uint64_t seed) {
  const double fr[5] = {f.v0, f.v1, f.v2, f.test, 0.0};
  double total = 0.0;
  for (int s = 0; s < 4; ++s) {
    if (!(fr[s] > 0.0)) throw Error("split fractions must be positive");
    total += fr[s];
  }
  if (total > 1.0 + 1e-9) throw Error("split fractions sum to more than 1");
  const double fill[5] = {fr[0], fr[1], fr[2], fr[3], std::max(0.0, 1.0 - total)};

  const std::size_t K = corpus.tree().leaf_count();
  std::vector<std::vector<std::size_t>> by_leaf(K);
  for (std::size_t n : corpus.labeled_indices()) by_leaf[*corpus.labels().leaf(n)].push_back(n);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> sets[5];
  double credit[5] = {0, 0, 0, 0, 0};
  for (std::size_t k = 0; k < K; ++k) {
    auto& docs = by_leaf[k];
    if (docs.empty())
      throw InsufficientData("leaf '" + corpus.tree().leaf_name(k) + "' has no labeled documents");
    detail::shuffle(docs, rng);
    std::vector<int> dest(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      int best = 0;
      for (int s = 0; s < 5; ++s) {
        credit[s] += fill[s];
        if (credit[s] > credit[best] + 1e-12) best = s;
      }
      credit[best] -= 1.0;
      dest[i] = best;
    }
    const bool small = static_cast<double>(docs.size()) * fr[0] < 1.0 - 1e-9;
    if (std::find(dest.begin(), dest.end(), 0) == dest.end()) {
      std::size_t counts[5] = {0, 0, 0, 0, 0};
      for (int d : dest) ++counts[d];
      int donor = 4;
      if (counts[4] == 0) {
        donor = 1;
        for (int s = 2; s < 4; ++s)
          if (counts[s] > counts[donor]) donor = s;
      }
      const auto it = std::find(dest.begin(), dest.end(), donor);
      *it = 0;
      credit[0] -= 1.0;
      credit[donor] += 1.0;
    }
    if (small) {
      log::warn("leaf '" + corpus.tree().leaf_name(k) +
                "' is too small for the V0 fraction; forcing one document into V0");
    }
    for (std::size_t i = 0; i < docs.size(); ++i) sets[dest[i]].push_back(docs[i]);
  }

  auto ids = [&](std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    for (auto n : idx) out.push_back(corpus.document(n).id);
    return out;
  };
  return Partition{ids(sets[0]), ids(sets[1]), ids(sets[2]), ids(sets[3])};
}

}  // namespace hsim
