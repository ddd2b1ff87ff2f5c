#include "vipg/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vipg/inference.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vipg {

void TrainConfig::validate() const {
  std::vector<std::string> errs;
  if (warmup < 1) errs.push_back("warmup must be >= 1");
  if (lr_scale <= 0.0f) errs.push_back("lr_scale must be positive");
  if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
    errs.push_back("adam betas must be in [0, 1)");
  if (adam_eps <= 0.0f) errs.push_back("adam_eps must be positive");
  if (batch_size < 1) errs.push_back("batch_size must be >= 1");
  if (max_steps < 0) errs.push_back("max_steps must be >= 0");
  if (clip_norm <= 0.0f) errs.push_back("clip_norm must be positive");
  if (val_every < 1) errs.push_back("val_every must be >= 1");
  if (selector != "val_total_loss" && selector != "external_scorer")
    errs.push_back("selector must be val_total_loss or external_scorer");
  if (!errs.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw Error(ErrorKind::Usage, msg);
  }
}

std::string TrainConfig::to_json() const {
  json j;
  j["lr_scale"] = lr_scale;
  j["warmup"] = warmup;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["batch_size"] = batch_size;
  j["max_steps"] = max_steps;
  j["seed"] = seed;
  j["ablation"] = ablation_to_string(ablation);
  j["clip_norm"] = clip_norm;
  j["val_every"] = val_every;
  j["selector"] = selector;
  j["external_scorer_cmd"] = external_scorer_cmd;
  j["kl_stop_grad_caption"] = kl_stop_grad_caption;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("malformed train config: ") +
                                     e.what());
  }
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("lr_scale", c.lr_scale);
  get("warmup", c.warmup);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("batch_size", c.batch_size);
  get("max_steps", c.max_steps);
  get("seed", c.seed);
  if (j.contains("ablation"))
    c.ablation = ablation_from_string(j["ablation"].get<std::string>());
  get("clip_norm", c.clip_norm);
  get("val_every", c.val_every);
  get("selector", c.selector);
  get("external_scorer_cmd", c.external_scorer_cmd);
  get("kl_stop_grad_caption", c.kl_stop_grad_caption);
  return c;
}

float learning_rate(const TrainConfig& cfg, int d_model, int step) {
  const double s = std::max(step, 1);
  return static_cast<float>(
      cfg.lr_scale / std::sqrt(static_cast<double>(d_model)) *
      std::min(1.0 / std::sqrt(s), s * std::pow(cfg.warmup, -1.5)));
}

AdamOptimizer::AdamOptimizer(
    std::vector<std::pair<std::string, TensorPtr>>& params,
    const TrainConfig& cfg)
    : params_(&params), cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& [name, t] : params) {
    m_.emplace_back(t->data.size(), 0.0f);
    v_.emplace_back(t->data.size(), 0.0f);
  }
}

double AdamOptimizer::step(float lr) {
  double sq = 0.0;
  for (const auto& [name, t] : *params_) {
    t->ensure_grad();
    for (float g : t->grad) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  const float clip_scale =
      norm > cfg_.clip_norm ? static_cast<float>(cfg_.clip_norm / norm) : 1.0f;
  ++t_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
  for (size_t p = 0; p < params_->size(); ++p) {
    auto& t = (*params_)[p].second;
    for (size_t i = 0; i < t->data.size(); ++i) {
      const float g = t->grad[i] * clip_scale;
      m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0f - cfg_.beta1) * g;
      v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0f - cfg_.beta2) * g * g;
      const float mhat = m_[p][i] / bc1;
      const float vhat = v_[p][i] / bc2;
      t->data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
    }
    t->zero_grad();
  }
  return norm;
}

void AdamOptimizer::save(std::ostream& out) const {
  out << t_ << "\n";
  for (size_t p = 0; p < m_.size(); ++p) {
    out.write(reinterpret_cast<const char*>(m_[p].data()),
              static_cast<std::streamsize>(sizeof(float) * m_[p].size()));
    out.write(reinterpret_cast<const char*>(v_[p].data()),
              static_cast<std::streamsize>(sizeof(float) * v_[p].size()));
  }
}

void AdamOptimizer::load(std::istream& in) {
  in >> t_;
  in.ignore(1);  // newline
  for (size_t p = 0; p < m_.size(); ++p) {
    in.read(reinterpret_cast<char*>(m_[p].data()),
            static_cast<std::streamsize>(sizeof(float) * m_[p].size()));
    in.read(reinterpret_cast<char*>(v_[p].data()),
            static_cast<std::streamsize>(sizeof(float) * v_[p].size()));
  }
  if (!in) throw Error(ErrorKind::Data, "truncated optimizer state");
}

Trainer::Trainer(Model& model, TrainConfig cfg, std::vector<Example> train_set,
                 std::vector<Example> val_set)
    : model_(&model),
      cfg_(std::move(cfg)),
      val_set_(std::move(val_set)),
      opt_(model.parameters(), cfg_),
      mask_rng_(static_cast<uint32_t>(cfg_.seed * 2654435761u + 1)),
      dropout_rng_(static_cast<uint32_t>(cfg_.seed * 2654435761u + 2)) {
  cfg_.validate();
  stream_ = std::make_unique<BatchStream>(std::move(train_set),
                                          cfg_.batch_size, cfg_.seed,
                                          /*with_images=*/true,
                                          model.config().max_len);
}

StepMetrics Trainer::train_step(const Batch& batch) {
  if (batch.examples.empty())
    throw Error(ErrorKind::Usage, "train_step: empty batch");
  if (batch.features.size() != batch.examples.size())
    throw Error(ErrorKind::Data, "train_step: training requires features");
  const float lambda = model_->config().lambda_kl;
  const float inv_b = 1.0f / static_cast<float>(batch.examples.size());
  StepMetrics m;

  for (size_t e = 0; e < batch.examples.size(); ++e) {
    const Example& ex = batch.examples[e];
    Tape t;
    const int keys = copy_key_count(ex.input, cfg_.ablation);
    auto copy_mask =
        sample_copy_mask(keys, model_->config().copy_mask_prob, mask_rng_);
    auto probs = model_->forward_train(t, ex.input, batch.features[e],
                                       copy_mask, cfg_.ablation,
                                       &dropout_rng_);
    // The cross-entropy objective only ever sees the caption branch; the
    // paraphrase branch trains through the KL term alone.
    auto ce = ce_loss(t, probs.caption, ex.input.target_ids);
    KlMode mode = KlMode::Symmetric;
    if (cfg_.ablation == Ablation::NoKlItoS) mode = KlMode::ReverseOnly;
    if (cfg_.ablation == Ablation::NoKlStoI) mode = KlMode::ForwardOnly;
    auto p_i = cfg_.kl_stop_grad_caption ? detach(t, probs.caption)
                                         : probs.caption;
    auto kl = kl_loss(t, p_i, probs.paraphrase, mode);
    auto total = add(t, ce, scale(t, kl, lambda));
    if (!std::isfinite(total->data[0]))
      throw Error(ErrorKind::Numeric,
                  "non-finite loss at step " + std::to_string(step_ + 1) +
                      " on record " + ex.id + " (ce=" +
                      std::to_string(ce->data[0]) + ", kl=" +
                      std::to_string(kl->data[0]) + ")");
    m.ce += ce->data[0] * inv_b;
    m.kl += kl->data[0] * inv_b;
    t.backward(scale(t, total, inv_b));
  }
  m.total = m.ce + lambda * m.kl;
  m.lr = learning_rate(cfg_, model_->config().d_model, opt_.steps_done() + 1);
  m.grad_norm = opt_.step(static_cast<float>(m.lr));
  m.step = ++step_;
  return m;
}

double Trainer::validate() {
  if (val_set_.empty()) return 0.0;
  if (cfg_.selector == "external_scorer" && !cfg_.external_scorer_cmd.empty() &&
      vocab_ != nullptr) {
    const auto tmp = fs::temp_directory_path();
    const auto cand_path = (tmp / "vipg_candidates.txt").string();
    const auto src_path = (tmp / "vipg_sources.txt").string();
    {
      std::ofstream cand(cand_path), src(src_path);
      for (const auto& ex : val_set_) {
        src << detokenize(ex.processed.target) << "\n";
        cand << paraphrase_input(
                    ex.input, static_cast<int>(ex.processed.target.size()),
                    *model_, *vocab_, DecodeOptions{}, cfg_.ablation)
             << "\n";
      }
    }
    std::string cmd = cfg_.external_scorer_cmd;
    auto subst = [&cmd](const std::string& key, const std::string& value) {
      const auto pos = cmd.find(key);
      if (pos != std::string::npos) cmd.replace(pos, key.size(), value);
    };
    subst("{candidates}", cand_path);
    subst("{sources}", src_path);
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe) {
      char buf[128];
      std::string out;
      while (fgets(buf, sizeof buf, pipe)) out += buf;
      const int rc = pclose(pipe);
      try {
        if (rc == 0) return -std::stod(out);  // higher external score is better
      } catch (const std::exception&) {
      }
    }
    std::cerr << "warning: external scorer failed, falling back to "
                 "val_total_loss\n";
  }
  const float lambda = model_->config().lambda_kl;
  double total = 0.0;
  for (const auto& ex : val_set_) {
    if (ex.feature_path.empty())
      throw Error(ErrorKind::Data,
                  "validation record " + ex.id + " has no feature");
    auto feature = load_feature(ex.feature_path);
    Tape t;
    const std::vector<bool> no_mask(
        copy_key_count(ex.input, cfg_.ablation), false);
    auto probs = model_->forward_train(t, ex.input, feature, no_mask,
                                       cfg_.ablation, nullptr);
    KlMode mode = KlMode::Symmetric;
    if (cfg_.ablation == Ablation::NoKlItoS) mode = KlMode::ReverseOnly;
    if (cfg_.ablation == Ablation::NoKlStoI) mode = KlMode::ForwardOnly;
    auto ce = ce_loss(t, probs.caption, ex.input.target_ids);
    auto kl = kl_loss(t, probs.caption, probs.paraphrase, mode);
    total += (ce->data[0] + lambda * kl->data[0]) / val_set_.size();
  }
  return total;
}

void Trainer::save_state(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Data, "cannot write train state " + path);
  out << "VIPGSTAT 1\n";
  out << step_ << " " << has_best_ << " " << best_score_ << "\n";
  out << mask_rng_ << "\n";
  out << dropout_rng_ << "\n";
  const std::string ss = stream_->state();
  out << ss.size() << "\n" << ss << "\n";
  opt_.save(out);
}

bool Trainer::load_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "VIPGSTAT" || version != 1)
    throw Error(ErrorKind::Data, "unrecognized train state " + path);
  in >> step_ >> has_best_ >> best_score_;
  in >> mask_rng_ >> dropout_rng_;
  size_t len = 0;
  in >> len;
  in.ignore(1);
  std::string ss(len, '\0');
  in.read(ss.data(), static_cast<std::streamsize>(len));
  stream_->restore_state(ss);
  in.ignore(1);
  opt_.load(in);
  if (!in) throw Error(ErrorKind::Data, "truncated train state " + path);
  return true;
}

std::string Trainer::fit(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string best_path = (fs::path(out_dir) / "best.ckpt").string();
  const std::string latest_path = (fs::path(out_dir) / "latest.ckpt").string();
  const std::string state_path = (fs::path(out_dir) / "latest.state").string();
  const std::string log_path = (fs::path(out_dir) / "metrics.jsonl").string();

  const bool resumed = fs::exists(state_path) && fs::exists(latest_path);
  if (resumed) {
    Model restored = Model::load_checkpoint(latest_path);
    auto& dst = model_->parameters();
    auto& src = restored.parameters();
    for (size_t i = 0; i < dst.size(); ++i) dst[i].second->data =
        src[i].second->data;
    load_state(state_path);
  } else {
    model_->save_checkpoint(latest_path);
    model_->save_checkpoint(best_path);
    save_state(state_path);
  }

  std::ofstream log(log_path, std::ios::app);
  auto checkpoint_best = [&](double score) {
    if (!has_best_ || score < best_score_) {
      best_score_ = score;
      has_best_ = true;
      model_->save_checkpoint(best_path);
    }
  };

  while (step_ < cfg_.max_steps) {
    auto metrics = train_step(stream_->next());
    json j;
    j["step"] = metrics.step;
    j["ce"] = metrics.ce;
    j["kl"] = metrics.kl;
    j["total"] = metrics.total;
    j["grad_norm"] = metrics.grad_norm;
    j["lr"] = metrics.lr;
    log << j.dump() << "\n";
    log.flush();
    if (step_ % cfg_.val_every == 0 || step_ == cfg_.max_steps) {
      const double score = validate();
      json v;
      v["step"] = step_;
      v["val_score"] = score;
      log << v.dump() << "\n";
      log.flush();
      checkpoint_best(score);
      model_->save_checkpoint(latest_path);
      save_state(state_path);
    }
  }
  model_->save_checkpoint(latest_path);
  save_state(state_path);
  if (!has_best_) {
    checkpoint_best(validate());
  }
  return best_path;
}

}  // namespace vipg
