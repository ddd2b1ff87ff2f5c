#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vipg/dataio.hpp"
#include "vipg/model.hpp"

namespace vipg {

struct TrainConfig {
  float lr_scale = 1.0f;  // multiplies the inverse-sqrt schedule
  int warmup = 400;
  float beta1 = 0.9f;
  float beta2 = 0.98f;
  float adam_eps = 1e-9f;
  int batch_size = 8;
  int max_steps = 500;
  uint64_t seed = 7;
  Ablation ablation = Ablation::Full;
  float clip_norm = 1.0f;
  int val_every = 50;
  std::string selector = "val_total_loss";  // or "external_scorer"
  std::string external_scorer_cmd;  // "cmd {candidates} {sources}"
  // Open alternative: one-directional distillation, KL gradients do not
  // flow into the caption branch.
  bool kl_stop_grad_caption = false;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// Inverse-sqrt schedule with warmup, vanilla transformer form.
float learning_rate(const TrainConfig& cfg, int d_model, int step);

struct StepMetrics {
  int step = 0;
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, TensorPtr>>& params,
                const TrainConfig& cfg);
  // Applies grads, increments the step count, clears grads.
  double step(float lr);  // returns pre-clip global grad norm
  int steps_done() const { return t_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  std::vector<std::pair<std::string, TensorPtr>>* params_;
  TrainConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int t_ = 0;
};

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg, std::vector<Example> train_set,
          std::vector<Example> val_set);

  StepMetrics train_step(const Batch& batch);
  // Validation loss (ce + lambda * kl) with copy masking off; or the
  // negated external scorer output when configured and available.
  double validate();

  // Runs to max_steps, validating every val_every steps; writes best.ckpt,
  // latest.ckpt, latest.state and metrics.jsonl under out_dir. Returns the
  // best checkpoint path.
  std::string fit(const std::string& out_dir);

  BatchStream& stream() { return *stream_; }
  int step() const { return step_; }
  // Needed only for the external-scorer selector (detokenized candidates).
  void set_vocab(const Vocab* vocab) { vocab_ = vocab; }

 private:
  Model* model_;
  TrainConfig cfg_;
  const Vocab* vocab_ = nullptr;
  std::vector<Example> val_set_;
  std::unique_ptr<BatchStream> stream_;
  AdamOptimizer opt_;
  std::mt19937 mask_rng_;
  std::mt19937 dropout_rng_;
  int step_ = 0;
  double best_score_ = 0.0;
  bool has_best_ = false;

  void save_state(const std::string& path) const;
  bool load_state(const std::string& path);
  friend class TrainerTestPeer;
};

}  // namespace vipg
