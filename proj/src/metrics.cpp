#include "vipg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "vipg/tensor.hpp"

namespace vipg {

namespace {

constexpr int kMaxN = 4;

struct CorpusStats {
  std::array<long long, kMaxN> matched{};  // clipped matches per order
  std::array<long long, kMaxN> total{};    // candidate n-grams per order
  long long cand_len = 0;
  long long ref_len = 0;

  void add(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
           int max_n);
  double score(int max_n) const;
};

void CorpusStats::add(const TokenSeq& candidate,
                      const std::vector<TokenSeq>& references, int max_n) {
  cand_len += static_cast<long long>(candidate.size());
  // closest reference length, shorter wins ties
  long long best_ref = 0;
  long long best_dist = -1;
  for (const auto& r : references) {
    const long long len = static_cast<long long>(r.size());
    const long long dist = std::llabs(len - static_cast<long long>(candidate.size()));
    if (best_dist < 0 || dist < best_dist ||
        (dist == best_dist && len < best_ref)) {
      best_dist = dist;
      best_ref = len;
    }
  }
  ref_len += best_ref;

  auto cand_prof = NgramProfile::of(candidate);
  std::vector<NgramProfile> ref_profs;
  ref_profs.reserve(references.size());
  for (const auto& r : references) ref_profs.push_back(NgramProfile::of(r));

  for (int n = 1; n <= max_n; ++n) {
    for (const auto& [gram, count] : cand_prof.counts[n - 1]) {
      int max_ref = 0;
      for (const auto& rp : ref_profs) {
        auto it = rp.counts[n - 1].find(gram);
        if (it != rp.counts[n - 1].end()) max_ref = std::max(max_ref, it->second);
      }
      matched[n - 1] += std::min(count, max_ref);
      total[n - 1] += count;
    }
  }
}

double CorpusStats::score(int max_n) const {
  if (cand_len == 0) return 0.0;
  double log_prec = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    const long long m = matched[n - 1], t = total[n - 1];
    if (t == 0) continue;  // no candidate n-grams of this order
    double p;
    if (n == 1) {
      if (m == 0) return 0.0;
      p = static_cast<double>(m) / t;
    } else {
      p = (m + 1.0) / (t + 1.0);  // add-1 smoothing
    }
    log_prec += std::log(p);
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double geo = std::exp(log_prec / orders);
  const double bp =
      cand_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) / cand_len)
          : 1.0;
  return 100.0 * bp * geo;
}

}  // namespace

NgramProfile NgramProfile::of(const TokenSeq& tokens) {
  NgramProfile p;
  for (int n = 1; n <= kMaxN; ++n)
    for (size_t i = 0; i + n <= tokens.size(); ++i)
      ++p.counts[n - 1][std::vector<std::string>(tokens.begin() + i,
                                                 tokens.begin() + i + n)];
  return p;
}

double bleu(const TokenSeq& candidate, const std::vector<TokenSeq>& references,
            int max_n) {
  if (max_n < 1 || max_n > kMaxN)
    throw Error(ErrorKind::Usage, "bleu: max_n must be in 1..4");
  if (candidate.empty()) return 0.0;
  if (references.empty())
    throw Error(ErrorKind::Usage, "bleu: at least one reference required");
  CorpusStats stats;
  stats.add(candidate, references, max_n);
  return stats.score(max_n);
}

double self_bleu(
    const std::vector<std::pair<TokenSeq, TokenSeq>>& source_paraphrase_pairs) {
  if (source_paraphrase_pairs.empty())
    throw Error(ErrorKind::Usage, "self_bleu: empty corpus");
  CorpusStats stats;
  for (const auto& [source, para] : source_paraphrase_pairs)
    stats.add(para, {source}, kMaxN);
  return stats.score(kMaxN);
}

double distinct_n(const std::vector<TokenSeq>& corpus, int n) {
  if (n < 1) throw Error(ErrorKind::Usage, "distinct_n: n must be >= 1");
  std::map<std::vector<std::string>, int> seen;
  long long total = 0;
  for (const auto& seq : corpus)
    for (size_t i = 0; i + n <= seq.size(); ++i) {
      ++seen[std::vector<std::string>(seq.begin() + i, seq.begin() + i + n)];
      ++total;
    }
  if (total == 0) return 0.0;
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

}  // namespace vipg
