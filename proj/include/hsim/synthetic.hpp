#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hsim/corpus.hpp"

namespace hsim::synthetic {

/// Parameters of a planted three-level corpus: every level-2 topic and every
/// leaf owns a keyword set, and all documents share a pool of noise words.
struct Config {
  std::size_t level2 = 4;
  std::size_t leaves_per_level2 = 4;
  std::size_t docs_per_leaf = 30;
  std::size_t leaf_keywords = 6;
  std::size_t level2_keywords = 80;
  std::size_t noise_words = 10;
  std::size_t min_length = 10;
  std::size_t max_length = 30;
  // Per-document token shares are drawn uniformly from these ranges; the rest
  // of the document is noise.
  double leaf_share_min = 0.05, leaf_share_max = 0.20;
  double level2_share_min = 0.30, level2_share_max = 0.60;
  // Share of tokens taken from one randomly chosen foreign level-2 topic.
  double confuser_share_min = 0.0, confuser_share_max = 0.20;
  // Share of tokens taken from a sibling leaf's keywords.
  double sibling_share_max = 0.10;
  // The first shared_leaf_keywords keywords of a leaf are also used by the
  // leaves at the same position under every other level-2 topic.
  std::size_t shared_leaf_keywords = 2;
  std::uint64_t seed = 7;
};

/// Distinct alphabetic pseudo-words ("qa", "qb", ...) that survive tokenization.
inline std::string word_for(std::size_t i, char prefix) {
  std::string w(1, prefix);
  do {
    w.push_back(static_cast<char>('a' + i % 26));
    i /= 26;
  } while (i > 0);
  return w;
}

struct Collection {
  json tree;
  std::vector<RawDocument> documents;
};

inline json make_tree(const Config& c) {
  json root = {{"name", "root"}, {"children", json::array()}};
  for (std::size_t a = 0; a < c.level2; ++a) {
    json area = {{"name", "area" + word_for(a, 'x')}, {"children", json::array()}};
    for (std::size_t s = 0; s < c.leaves_per_level2; ++s)
      area["children"].push_back({{"name", "stream" + word_for(a * c.leaves_per_level2 + s, 'y')}});
    root["children"].push_back(std::move(area));
  }
  return root;
}

inline Collection generate(const Config& c) {
  std::mt19937_64 rng(c.seed);
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  };
  auto pick = [&](std::size_t n) { return detail::uniform_index(rng, n); };

  auto leaf_word = [&](std::size_t leaf, std::size_t j) {
    if (j < c.shared_leaf_keywords)
      return word_for((leaf % c.leaves_per_level2) * c.shared_leaf_keywords + j, 's');
    return word_for(leaf * c.leaf_keywords + j, 'l');
  };
  auto mid_word = [&](std::size_t area, std::size_t j) { return word_for(area * c.level2_keywords + j, 'm'); };
  auto noise_word = [&](std::size_t j) { return word_for(j, 'n'); };

  Collection out;
  out.tree = make_tree(c);
  const std::size_t leaves = c.level2 * c.leaves_per_level2;
  for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
    const std::size_t area = leaf / c.leaves_per_level2;
    const auto leaf_name = out.tree["children"][area]["children"][leaf % c.leaves_per_level2]["name"].get<std::string>();
    for (std::size_t d = 0; d < c.docs_per_leaf; ++d) {
      const double leaf_share = uniform(c.leaf_share_min, c.leaf_share_max);
      const double mid_share = uniform(c.level2_share_min, c.level2_share_max);
      const double conf_share = uniform(c.confuser_share_min, c.confuser_share_max);
      const double sib_share = uniform(0.0, c.sibling_share_max);
      std::size_t confuser = area;
      if (c.level2 > 1)
        while (confuser == area) confuser = pick(c.level2);
      std::size_t sibling = leaf;
      if (c.leaves_per_level2 > 1)
        while (sibling == leaf) sibling = area * c.leaves_per_level2 + pick(c.leaves_per_level2);

      const std::size_t length = c.min_length + pick(c.max_length - c.min_length + 1);
      std::string text;
      for (std::size_t t = 0; t < length; ++t) {
        const double u = uniform(0.0, 1.0);
        std::string w;
        if (u < leaf_share)
          w = leaf_word(leaf, pick(c.leaf_keywords));
        else if (u < leaf_share + mid_share)
          w = mid_word(area, pick(c.level2_keywords));
        else if (u < leaf_share + mid_share + conf_share)
          w = mid_word(confuser, pick(c.level2_keywords));
        else if (u < leaf_share + mid_share + conf_share + sib_share)
          w = leaf_word(sibling, pick(c.leaf_keywords));
        else
          w = noise_word(pick(c.noise_words));
        text += (t ? " " : "") + w;
      }
      out.documents.push_back({leaf_name + "-" + std::to_string(d), std::move(text), leaf_name});
    }
  }
  return out;
}

}  // namespace hsim::synthetic
