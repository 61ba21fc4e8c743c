#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qscore/corpus.hpp"
#include "qscore/tokenizer.hpp"

namespace qscore {

/// Planted-keyword corpus. Every body carries one keyword "kw<k>",
/// k < keywords, among filler words, and target t is perm_t(k) / (keywords-1)
/// for a fixed seeded permutation perm_t (perm_0 is the identity). Each
/// target column therefore takes `keywords` evenly spread values.
struct SyntheticSpec {
  std::size_t rows = 2000;
  std::size_t keywords = 16;
  std::size_t filler_words = 10;
  std::uint64_t seed = 2020;
};

struct SyntheticData {
  Corpus corpus;
  std::vector<std::string> vocab_tokens;
  Vocabulary vocab;
  std::vector<std::size_t> planted;                   // keyword index per row
  std::vector<std::vector<std::size_t>> permutations;  // [target][keyword]
};

SyntheticData make_synthetic(const SyntheticSpec& spec);

/// Writes a corpus back out in the loader's column layout.
std::string corpus_to_csv(const Corpus& corpus);

}  // namespace qscore
