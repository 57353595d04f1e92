#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fixtures.hpp"

using namespace hsim;

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("Vehicle Routing, vehicle routing!"),
            (std::vector<std::string>{"vehicle", "routing", "vehicle", "routing"}));
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, MinimumLengthDropsShortWords) {
  TokenizerConfig cfg;
  cfg.min_len = 2;
  EXPECT_EQ(tokenize("a OR-models", cfg), (std::vector<std::string>{"or", "models"}));
}

TEST(Tokenize, Stopwords) {
  TokenizerConfig cfg;
  cfg.stopwords = {"the"};
  EXPECT_EQ(tokenize("The model of the tree", cfg), (std::vector<std::string>{"model", "of", "tree"}));
}

TEST(Dictionary, SharedWordAppearsOnce) {
  const auto d = build_dictionary({{"model", "graph"}, {"model"}}, 1, 1.0);
  EXPECT_EQ(d.words(), (std::vector<std::string>{"model", "graph"}));
  EXPECT_EQ(*d.find("model"), 0u);
}

TEST(Dictionary, MinDfExcludesRareWord) {
  std::vector<std::vector<std::string>> docs(10, {"common"});
  docs[0].push_back("rare");
  const auto d = build_dictionary(docs, 2, 1.0);
  EXPECT_FALSE(d.find("rare"));
  EXPECT_TRUE(d.find("common"));
}

TEST(Dictionary, MaxDfRatioExcludesUbiquitousWord) {
  std::vector<std::vector<std::string>> docs(10, {"everywhere"});
  for (int i = 0; i < 5; ++i) docs[static_cast<std::size_t>(i)].push_back("half");
  const auto d = build_dictionary(docs, 1, 0.9);
  EXPECT_FALSE(d.find("everywhere"));
  EXPECT_TRUE(d.find("half"));
}

TEST(Dictionary, EmptyAfterPruningThrows) {
  EXPECT_THROW(build_dictionary({{"a"}, {"b"}}, 2, 1.0), EmptyDictionary);
}

TEST(Dictionary, InvalidThresholds) {
  EXPECT_THROW(build_dictionary({{"a"}}, 0, 1.0), Error);
  EXPECT_THROW(build_dictionary({{"a"}}, 1, 0.0), Error);
}

TEST(Vectorize, CountsMultiplicity) {
  const Dictionary d({"a", "b", "c"});
  EXPECT_EQ(vectorize({"a", "a", "b"}, d), (SparseVector{{0, 2}, {1, 1}}));
}

TEST(Vectorize, OutOfDictionaryIgnored) { EXPECT_TRUE(vectorize({"z"}, Dictionary({"a"})).empty()); }

TEST(Vectorize, CountingOracle) {
  const Dictionary d({"a", "b"});
  const std::vector<std::string> toks{"b", "a", "b", "b"};
  const auto v = vectorize(toks, d);
  for (std::size_t i = 0; i < d.size(); ++i)
    EXPECT_DOUBLE_EQ(v.at(i), static_cast<double>(std::count(toks.begin(), toks.end(), d.word(i))));
}

TEST(Hierarchy, TwoByTwo) {
  const auto t = fixture::tree_2x2();
  EXPECT_EQ(t.height(), 3u);
  EXPECT_EQ(t.level_count(1), 2u);
  EXPECT_EQ(t.level_count(2), 4u);
  EXPECT_EQ(t.leaf_name(0), "a1");
  EXPECT_EQ(t.leaf_name(3), "b2");
}

TEST(Hierarchy, RootOnly) {
  const auto t = load_hierarchy(json{{"name", "root"}});
  EXPECT_EQ(t.height(), 1u);
  EXPECT_EQ(t.level_count(0), 1u);
  EXPECT_EQ(t.leaf_count(), 1u);
}

TEST(Hierarchy, NonUniformDepth) {
  const auto j = json::parse(R"({"name":"r","children":[
    {"name":"x","children":[{"name":"y","children":[{"name":"z"}]}]},
    {"name":"u","children":[{"name":"v"}]}]})");
  EXPECT_THROW(load_hierarchy(j), NonUniformDepth);
}

TEST(Hierarchy, DuplicateSiblingName) {
  const auto j = json::parse(R"({"name":"r","children":[{"name":"x"},{"name":"x"}]})");
  EXPECT_THROW(load_hierarchy(j), DuplicateName);
}

TEST(Hierarchy, SameNameUnderDifferentParentsAllowed) {
  const auto j = json::parse(R"({"name":"r","children":[
    {"name":"A","children":[{"name":"misc"}]},{"name":"B","children":[{"name":"misc"}]}]})");
  const auto t = load_hierarchy(j);
  EXPECT_THROW(t.find_leaf("misc"), UnknownLeaf);
  EXPECT_EQ(t.find_leaf("B/misc"), 1u);
}

TEST(Parent, ZeroStepsIsLeaf) {
  const auto t = fixture::tree_2x2();
  EXPECT_EQ(t.parent(2, 0), t.leaf_id(2));
}

TEST(Parent, FullAscentIsRoot) {
  const auto t = fixture::tree_2x2();
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(t.parent(k, t.height() - 1), t.root());
}

TEST(Parent, ThirdLeafOneStepIsSecondLevelTwoNode) {
  const auto t = fixture::tree_2x2();
  const auto& n = t.node(t.parent(2, 1));
  EXPECT_EQ(n.level, 1u);
  EXPECT_EQ(n.index, 1u);
  EXPECT_EQ(n.name, "B");
}

TEST(Parent, TooManyStepsThrows) {
  const auto t = fixture::tree_2x2();
  EXPECT_THROW(t.parent(0, 3), OutOfRange);
}

TEST(LabelMatrix, OneHotAndEmptyRows) {
  const auto t = fixture::tree_2x2();
  const auto z = build_label_matrix({std::string("a2"), std::nullopt}, t);
  EXPECT_EQ(z.dense().row(0), fixture::vec({0, 1, 0, 0}).transpose());
  EXPECT_EQ(z.dense().row(1), fixture::vec({0, 0, 0, 0}).transpose());
}

TEST(LabelMatrix, UnknownLeafNamesOffender) {
  try {
    build_label_matrix({std::string("Missing Stream")}, fixture::tree_2x2());
    FAIL();
  } catch (const UnknownLeaf& e) {
    EXPECT_EQ(e.name(), "Missing Stream");
  }
}

namespace {
Corpus corpus_with_leaf_sizes(const std::vector<int>& sizes) {
  std::vector<RawDocument> raw;
  const char* names[] = {"a1", "a2", "b1", "b2"};
  for (std::size_t k = 0; k < sizes.size(); ++k)
    for (int i = 0; i < sizes[k]; ++i)
      raw.push_back({std::string(names[k]) + "-" + std::to_string(i), "shared words here and " + std::string(names[k]),
                     std::string(names[k])});
  CorpusConfig cfg;
  cfg.min_df = 1;
  cfg.max_df_ratio = 1.0;
  return build_corpus(raw, fixture::tree_2x2(), cfg);
}
}  // namespace

TEST(Split, QuartersOfForty) {
  const auto c = corpus_with_leaf_sizes({10, 10, 10, 10});
  const auto p = split(c, {}, 5);
  EXPECT_EQ(p.v0.size(), 10u);
  EXPECT_EQ(p.v1.size(), 10u);
  EXPECT_EQ(p.v2.size(), 10u);
  EXPECT_EQ(p.test.size(), 10u);
}

TEST(Split, DeterministicForSeed) {
  const auto c = corpus_with_leaf_sizes({7, 9, 8, 11});
  EXPECT_EQ(split(c, {}, 42), split(c, {}, 42));
  EXPECT_NE(split(c, {}, 42), split(c, {}, 43));
}

TEST(Split, SingletonLeafForcedIntoV0WithWarning) {
  const auto c = corpus_with_leaf_sizes({1, 10, 10, 10});
  log::ScopedCapture cap;
  const auto p = split(c, {}, 1);
  EXPECT_NE(std::find(p.v0.begin(), p.v0.end(), "a1-0"), p.v0.end());
  ASSERT_FALSE(cap.messages().empty());
  EXPECT_NE(cap.messages().front().find("a1"), std::string::npos);
}

TEST(Split, LeafWithoutDocumentsIsInsufficient) {
  const auto c = corpus_with_leaf_sizes({0, 4, 4, 4});
  EXPECT_THROW(split(c, {}, 1), InsufficientData);
}

TEST(Split, IsAPartitionOfLabeledIds) {
  const auto c = fixture::small_corpus();
  const auto p = split(c, {0.2, 0.2, 0.2, 0.3}, 9);
  std::set<std::string> seen;
  for (const auto* s : {&p.v0, &p.v1, &p.v2, &p.test})
    for (const auto& id : *s) {
      EXPECT_TRUE(seen.insert(id).second) << id;
      EXPECT_TRUE(c.labels().leaf(c.index_of(id)));
    }
  for (std::size_t k = 0; k < c.tree().leaf_count(); ++k) {
    bool in_v0 = false;
    for (const auto& id : p.v0) in_v0 |= *c.labels().leaf(c.index_of(id)) == k;
    EXPECT_TRUE(in_v0);
  }
}

TEST(Split, InvalidFractions) {
  const auto c = corpus_with_leaf_sizes({4, 4, 4, 4});
  EXPECT_THROW(split(c, {0.5, 0.5, 0.5, 0.5}, 1), Error);
  EXPECT_THROW(split(c, {0.0, 0.5, 0.2, 0.2}, 1), Error);
}

TEST(Corpus, RetainedTokensEqualCountTotal) {
  const auto c = fixture::small_corpus();
  double counts = 0.0, retained = 0.0;
  for (const auto& d : c.documents()) {
    counts += d.counts.sum();
    for (const auto& t : d.tokens) retained += c.dictionary().find(t) ? 1.0 : 0.0;
  }
  EXPECT_DOUBLE_EQ(counts, retained);
}

TEST(Corpus, LabeledDocumentsReachRoot) {
  const auto c = fixture::small_corpus();
  const Matrix dense = c.labels().dense();
  for (auto n : c.labeled_indices()) {
    const Vector z = dense.row(static_cast<Eigen::Index>(n));
    EXPECT_EQ(z.sum(), 1.0);
    EXPECT_EQ(c.tree().parent(*c.labels().leaf(n), c.tree().height() - 1), c.tree().root());
  }
}

TEST(Corpus, EmptyDocumentsFlagged) {
  std::vector<RawDocument> raw = {{"a", "alpha beta", "a1"}, {"b", "alpha beta", "a2"}, {"c", "zzz", std::nullopt}};
  CorpusConfig cfg;
  cfg.max_df_ratio = 1.0;
  log::ScopedCapture cap;
  const auto c = build_corpus(raw, fixture::tree_2x2(), cfg);
  EXPECT_TRUE(c.document(2).empty_after_pruning);
  EXPECT_EQ(cap.messages().size(), 1u);
}

TEST(Corpus, JsonRoundTrip) {
  const auto c = fixture::small_corpus();
  const auto back = Corpus::from_json(json::parse(c.to_json().dump()));
  ASSERT_EQ(back.size(), c.size());
  EXPECT_EQ(back.dictionary().words(), c.dictionary().words());
  for (std::size_t n = 0; n < c.size(); ++n) {
    EXPECT_EQ(back.document(n).counts, c.document(n).counts);
    EXPECT_EQ(back.document(n).tokens, c.document(n).tokens);
    EXPECT_EQ(back.labels().leaf(n), c.labels().leaf(n));
  }
}

TEST(Corpus, JsonlReader) {
  std::istringstream in(R"({"id":"d1","text":"x y","leaf":"a1"}
{"id":"d2","text":"z"}

)");
  const auto docs = read_documents_jsonl(in);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(*docs[0].leaf, "a1");
  EXPECT_FALSE(docs[1].leaf);
  std::istringstream bad("{\"text\":\"no id\"}\n");
  EXPECT_THROW(read_documents_jsonl(bad), FormatError);
}

TEST(Corpus, DuplicateIdsRejected) {
  std::vector<RawDocument> raw = {{"a", "alpha beta", "a1"}, {"a", "alpha beta", "a2"}};
  CorpusConfig cfg;
  cfg.max_df_ratio = 1.0;
  EXPECT_THROW(build_corpus(raw, fixture::tree_2x2(), cfg), FormatError);
}
