#include "vipg/inference.hpp"

#include <algorithm>
#include <cmath>

namespace vipg {

namespace {

double normalized_score(const Hypothesis& h, float alpha) {
  const size_t len = std::max<size_t>(h.tokens.size(), 1);
  return h.log_prob / std::pow(static_cast<double>(len), alpha);
}

bool better(const Hypothesis& a, const Hypothesis& b, float alpha) {
  const double sa = normalized_score(a, alpha), sb = normalized_score(b, alpha);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size())
    return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

std::string decode_with_beam(Model& model, const TensorPtr& memory,
                             int bos_id, const TensorPtr& copy_keys,
                             const std::vector<int>& copy_vocab_ids,
                             const Vocab& vocab, const DecodeOptions& opts,
                             int source_len) {
  int max_len = opts.max_len > 0
                    ? opts.max_len
                    : static_cast<int>(1.5 * source_len) + 5;
  max_len = std::min(max_len, model.config().max_len);
  const std::vector<bool> no_mask(copy_vocab_ids.size(), false);

  StepFn step = [&](const std::vector<int>& prefix) {
    Tape t;
    std::vector<int> target = prefix;
    target.push_back(Vocab::kPad);  // shifted out, value never consumed
    auto probs = model.decode(t, memory, bos_id, target, copy_keys,
                              copy_vocab_ids, no_mask, nullptr);
    const int v = probs->cols(), n = probs->rows();
    std::vector<float> logp(v);
    for (int j = 0; j < v; ++j)
      logp[j] = std::log(std::max(probs->at(n - 1, j), 1e-9f));
    return logp;
  };

  auto hyps = beam_search(step, Vocab::kEos, opts.beam, max_len,
                          opts.len_norm_alpha);
  if (hyps.empty()) return "";
  std::vector<std::string> words;
  for (int id : hyps.front().tokens) {
    if (id == Vocab::kEos) break;
    words.push_back(vocab.token(id));
  }
  return detokenize(words);
}

}  // namespace

std::vector<Hypothesis> beam_search(const StepFn& step_fn, int eos_id,
                                    int beam, int max_len,
                                    float len_norm_alpha) {
  if (beam < 1) throw Error(ErrorKind::Usage, "beam must be >= 1");
  if (max_len < 1) throw Error(ErrorKind::Usage, "max_len must be >= 1");

  std::vector<Hypothesis> active = {Hypothesis{}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : active) {
      const auto logp = step_fn(h.tokens);
      for (int tok = 0; tok < static_cast<int>(logp.size()); ++tok) {
        Hypothesis next = h;
        next.tokens.push_back(tok);
        next.log_prob += logp[tok];
        if (tok == eos_id || step + 1 == max_len) {
          next.finished = tok == eos_id;
          finished.push_back(std::move(next));
        } else {
          candidates.push_back(std::move(next));
        }
      }
    }
    const size_t keep = std::min<size_t>(beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep,
                      candidates.end(),
                      [](const Hypothesis& a, const Hypothesis& b) {
                        if (a.log_prob != b.log_prob)
                          return a.log_prob > b.log_prob;
                        if (a.tokens.size() != b.tokens.size())
                          return a.tokens.size() < b.tokens.size();
                        return a.tokens < b.tokens;
                      });
    candidates.resize(keep);
    active = std::move(candidates);
  }

  std::sort(finished.begin(), finished.end(),
            [len_norm_alpha](const Hypothesis& a, const Hypothesis& b) {
              return better(a, b, len_norm_alpha);
            });
  return finished;
}

std::string paraphrase_input(const ModelInput& input, int source_len,
                             Model& model, const Vocab& vocab,
                             const DecodeOptions& opts, Ablation ablation) {
  if (static_cast<int>(input.target_ids.size()) > model.config().max_len)
    throw Error(ErrorKind::Data, "sentence exceeds max length " +
                                     std::to_string(model.config().max_len));
  Tape t;
  auto state = model.encode_for_paraphrase(t, input, ablation);
  return decode_with_beam(model, state.memory, Vocab::kTxtBos,
                          state.copy_keys, state.copy_vocab_ids, vocab, opts,
                          source_len);
}

std::string paraphrase(const std::string& sentence, Model& model,
                       const Vocab& vocab, const Tagger& tagger,
                       const DecodeOptions& opts, Ablation ablation) {
  const auto tokens = tokenize(sentence);
  if (tokens.empty()) return "";
  auto processed = split_object_relation(tagger.tag(tokens), sentence);
  auto input = to_model_input(processed, vocab);
  return paraphrase_input(input, static_cast<int>(tokens.size()), model, vocab,
                          opts, ablation);
}

std::string caption(const ImageFeature& feature, const ProcessedText& hint,
                    Model& model, const Vocab& vocab,
                    const DecodeOptions& opts) {
  auto input = to_model_input(hint, vocab);
  Tape t;
  auto state = model.encode_for_caption(t, input, feature);
  return decode_with_beam(model, state.memory, Vocab::kImgBos,
                          state.copy_keys, state.copy_vocab_ids, vocab, opts,
                          std::max<int>(feature.patches->rows(),
                                        static_cast<int>(hint.target.size())));
}

}  // namespace vipg
