#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vipg/model.hpp"
#include "vipg/textprep.hpp"

namespace vipg {

struct Hypothesis {
  std::vector<int> tokens;  // emitted ids, EOS included when finished
  float log_prob = 0.0f;
  bool finished = false;
};

// step_fn maps an emitted prefix to next-token log-probabilities.
using StepFn = std::function<std::vector<float>(const std::vector<int>&)>;

// Standard beam search. Final ranking by log_prob / length^alpha, ties
// broken by shorter length then lexicographic token ids.
std::vector<Hypothesis> beam_search(const StepFn& step_fn, int eos_id,
                                    int beam, int max_len,
                                    float len_norm_alpha = 0.7f);

struct DecodeOptions {
  int beam = 5;
  float len_norm_alpha = 0.7f;
  int max_len = 0;  // 0: 1.5 * source length + 5, capped by the model
};

// Paraphrase route over an already-preprocessed input.
std::string paraphrase_input(const ModelInput& input, int source_len,
                             Model& model, const Vocab& vocab,
                             const DecodeOptions& opts = {},
                             Ablation ablation = Ablation::Full);

// Image-free paraphrase route: preprocess, encode with no image segment,
// decode from <TXT_BOS> with the copy gate active and no copy masking.
std::string paraphrase(const std::string& sentence, Model& model,
                       const Vocab& vocab, const Tagger& tagger,
                       const DecodeOptions& opts = {},
                       Ablation ablation = Ablation::Full);

// Diagnostic caption route: decode from <IMG_BOS> over [I, O].
std::string caption(const ImageFeature& feature, const ProcessedText& hint,
                    Model& model, const Vocab& vocab,
                    const DecodeOptions& opts = {});

}  // namespace vipg
