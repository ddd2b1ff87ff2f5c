#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vipg/tensor.hpp"
#include "vipg/textprep.hpp"

namespace vipg {

struct CaptionRecord {
  std::string id;
  std::string caption;
  std::string feature_path;  // relative to the manifest's directory
};

// l x d_img patch matrix from an external vision encoder; frozen.
struct ImageFeature {
  TensorPtr patches;
};

std::vector<CaptionRecord> load_manifest(const std::string& path);
void save_manifest(const std::string& path,
                   const std::vector<CaptionRecord>& records);

// Feature file: magic "VIPG", u32 LE rows, u32 LE cols, rows*cols LE f32.
ImageFeature load_feature(const std::string& path);
void save_feature(const std::string& path, const Tensor& patches);

struct SynthSpec {
  std::vector<std::string> nouns = {"dog",  "cat",  "man",   "woman", "bird",
                                    "ball", "park", "tree",  "car",   "table",
                                    "horse", "boat"};
  std::vector<std::string> verbs = {"sits",  "stands", "walks", "jumps",
                                    "sleeps", "waits", "rests"};
  std::vector<std::string> adjectives = {"big",  "small", "red",   "old",
                                         "young", "happy", "little"};
  std::vector<std::string> preps = {"near", "behind", "beside", "under"};
  float sigma = 0.1f;
  int d_img = 16;
  int l = 4;

  static SynthSpec from_json_file(const std::string& path);
};

// Deterministic synthetic corpus: template-grammar captions whose feature
// matrix is a fixed random projection of the caption's bag of nouns plus
// seeded Gaussian noise. Writes manifest.jsonl, per-example .vipg feature
// files, and projection.vipg into out_dir.
void synth_generate(int n, uint64_t seed, const SynthSpec& spec,
                    const std::string& out_dir);

// One preprocessed example ready for the model.
struct Example {
  std::string id;
  ProcessedText processed;
  ModelInput input;
  std::string feature_path;  // empty when images are not loaded
};

struct Batch {
  std::vector<Example> examples;
  std::vector<ImageFeature> features;  // empty when with_images == false
};

class BatchStream {
 public:
  BatchStream(std::vector<Example> examples, int batch_size, uint64_t seed,
              bool with_images, int max_len);
  // Reshuffles and restarts an epoch when exhausted.
  Batch next();
  size_t epoch_size() const { return order_.size(); }

  // Serialized shuffle state, for bit-identical training resume.
  std::string state() const;
  void restore_state(const std::string& text);

 private:
  std::vector<Example> examples_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  int batch_size_;
  bool with_images_;
  int max_len_;
  std::mt19937_64 rng_;
  void reshuffle();
};

}  // namespace vipg
