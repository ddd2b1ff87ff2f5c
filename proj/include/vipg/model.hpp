#pragma once

#include <random>
#include <string>
#include <vector>

#include "vipg/dataio.hpp"
#include "vipg/tensor.hpp"

namespace vipg {

struct ModelConfig {
  int d_model = 64;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 128;
  int d_img = 16;
  int max_len = 64;
  float copy_mask_prob = 0.2f;
  float lambda_kl = 1.0f;
  float dropout = 0.0f;
  int vocab_size = 0;  // fixed once the vocab is built
  // Open alternative: also replace masked object words by <UNK> in the
  // encoder input, not just in the copy path.
  bool mask_encoder_input = false;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

enum class Ablation {
  Full,
  OriginalText,
  NoKlItoS,
  NoKlStoI,
  NoCopy,
  CopyWholeSentence,
};

Ablation ablation_from_string(const std::string& s);
std::string ablation_to_string(Ablation a);

// Row-major (l_I+l_O+l_R)^2 {0,1} mask: image rows attend image+objects,
// object rows attend objects only, relation rows attend objects+relations.
std::vector<float> build_partial_mask(int l_i, int l_o, int l_r);

// Bernoulli(p) per object word slot; all-false on the inference path.
std::vector<bool> sample_copy_mask(int l_o, float p, std::mt19937& rng);

// Number of copy keys an example exposes under the given ablation.
int copy_key_count(const ModelInput& input, Ablation ablation);

struct EncoderOutput {
  TensorPtr image;     // [l_I x d], null when no image
  TensorPtr object;    // [l_O x d]
  TensorPtr relation;  // [l_R x d]
};

struct BranchProbs {
  TensorPtr caption;     // P_I [N x V]
  TensorPtr paraphrase;  // P_S [N x V]
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, TensorPtr>>& parameters() {
    return params_;
  }
  TensorPtr param(const std::string& name) const;
  int64_t parameter_count() const;

  TensorPtr embed_image(Tape& t, const ImageFeature& f);
  // Positions run over the concatenated [O, R] sequence; the image segment
  // carries no positional encoding.
  std::pair<TensorPtr, TensorPtr> embed_text(
      Tape& t, const std::vector<int>& object_ids,
      const std::vector<int>& relation_ids);

  // Any of the three segments may be null/empty; l_O + l_R >= 1.
  EncoderOutput encode(Tape& t, const TensorPtr& e_img, const TensorPtr& e_obj,
                       const TensorPtr& e_rel, std::mt19937* dropout_rng);

  // Teacher-forced decoder distribution over the whole target. copy_keys may
  // be null (pure generation). copy_mask entries route the matching key's
  // probability mass to <UNK>.
  TensorPtr decode(Tape& t, const TensorPtr& memory, int bos_id,
                   const std::vector<int>& target_ids,
                   const TensorPtr& copy_keys,
                   const std::vector<int>& copy_vocab_ids,
                   const std::vector<bool>& copy_mask,
                   std::mt19937* dropout_rng);

  // One training example: encode once, decode twice with the shared decoder
  // (caption branch over [I, O] from <IMG_BOS>, paraphrase branch over
  // [O, R] from <TXT_BOS>), both teacher-forced on the same target.
  BranchProbs forward_train(Tape& t, const ModelInput& input,
                            const ImageFeature& feature,
                            const std::vector<bool>& copy_mask,
                            Ablation ablation, std::mt19937* dropout_rng);

  // Encoder state for the image-free paraphrase route (l_I = 0) along with
  // the copy keys/ids the decoder needs.
  struct ParaphraseState {
    TensorPtr memory;
    TensorPtr copy_keys;
    std::vector<int> copy_vocab_ids;
  };
  ParaphraseState encode_for_paraphrase(Tape& t, const ModelInput& input,
                                        Ablation ablation = Ablation::Full);
  struct CaptionState {
    TensorPtr memory;
    TensorPtr copy_keys;
    std::vector<int> copy_vocab_ids;
  };
  CaptionState encode_for_caption(Tape& t, const ModelInput& input,
                                  const ImageFeature& feature,
                                  Ablation ablation = Ablation::Full);

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  ModelConfig cfg_;
  std::vector<std::pair<std::string, TensorPtr>> params_;
  std::vector<float> pe_;  // sinusoidal table, max_len x d_model, not learned

  TensorPtr add_param(const std::string& name, std::vector<int> shape);
  void init_weights(uint64_t seed);
  TensorPtr positional_rows(int start, int len) const;
  TensorPtr encoder_stack(Tape& t, const TensorPtr& x,
                          const std::vector<float>& mask,
                          std::mt19937* dropout_rng);
  TensorPtr decoder_stack(Tape& t, const TensorPtr& x, const TensorPtr& memory,
                          std::mt19937* dropout_rng);
  TensorPtr mha_block(Tape& t, const std::string& prefix, const TensorPtr& q_in,
                      const TensorPtr& kv_in, const std::vector<float>& mask);
  struct CopySetup {
    TensorPtr keys;
    std::vector<int> vocab_ids;
  };
  CopySetup copy_setup(Tape& t, const ModelInput& input,
                       const EncoderOutput& enc, Ablation ablation);

  Model() = default;
};

}  // namespace vipg
