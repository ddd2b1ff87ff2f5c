#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

namespace vipg {

using TokenSeq = std::vector<std::string>;

// Multiset n-gram counts for n = 1..4.
struct NgramProfile {
  std::array<std::map<std::vector<std::string>, int>, 4> counts;
  static NgramProfile of(const TokenSeq& tokens);
};

// Corpus-style BLEU in [0, 100]: clipped n-gram precision, geometric mean
// over n = 1..4 with add-1 smoothing for n >= 2, brevity penalty
// exp(1 - r/c) when c < r.
double bleu(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
            int max_n = 4);

// Corpus BLEU of paraphrases against their own sources; lower means more
// diverse paraphrases.
double self_bleu(
    const std::vector<std::pair<TokenSeq, TokenSeq>>& source_paraphrase_pairs);

// unique n-grams / total n-grams over the corpus; 0 when no n-grams exist.
double distinct_n(const std::vector<TokenSeq>& corpus, int n);

}  // namespace vipg
