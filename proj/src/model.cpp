#include "vipg/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vipg/textprep.hpp"

using json = nlohmann::json;

namespace vipg {

namespace {
constexpr char kCkptMagic[8] = {'V', 'I', 'P', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw Error(ErrorKind::Data, "truncated checkpoint (" + what + ")");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void ModelConfig::validate() const {
  std::vector<std::string> errs;
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    errs.push_back("d_model must be positive and divisible by heads");
  if (enc_layers < 0 || dec_layers < 0) errs.push_back("layer counts must be >= 0");
  if (d_ff < 1) errs.push_back("d_ff must be >= 1");
  if (d_img < 1) errs.push_back("d_img must be >= 1");
  if (max_len < 2) errs.push_back("max_len must be >= 2");
  if (copy_mask_prob < 0.0f || copy_mask_prob >= 1.0f)
    errs.push_back("copy_mask_prob must be in [0, 1)");
  if (lambda_kl < 0.0f) errs.push_back("lambda_kl must be >= 0");
  if (dropout < 0.0f || dropout >= 1.0f)
    errs.push_back("dropout must be in [0, 1)");
  if (vocab_size < Vocab().size())
    errs.push_back("vocab_size must cover the special token block");
  if (!errs.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw Error(ErrorKind::Usage, msg);
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["d_model"] = d_model;
  j["heads"] = heads;
  j["enc_layers"] = enc_layers;
  j["dec_layers"] = dec_layers;
  j["d_ff"] = d_ff;
  j["d_img"] = d_img;
  j["max_len"] = max_len;
  j["copy_mask_prob"] = copy_mask_prob;
  j["lambda_kl"] = lambda_kl;
  j["dropout"] = dropout;
  j["vocab_size"] = vocab_size;
  j["mask_encoder_input"] = mask_encoder_input;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("malformed model config: ") +
                                     e.what());
  }
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("d_model", c.d_model);
  get("heads", c.heads);
  get("enc_layers", c.enc_layers);
  get("dec_layers", c.dec_layers);
  get("d_ff", c.d_ff);
  get("d_img", c.d_img);
  get("max_len", c.max_len);
  get("copy_mask_prob", c.copy_mask_prob);
  get("lambda_kl", c.lambda_kl);
  get("dropout", c.dropout);
  get("vocab_size", c.vocab_size);
  get("mask_encoder_input", c.mask_encoder_input);
  return c;
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "original_text") return Ablation::OriginalText;
  if (s == "no_kl_I_to_S") return Ablation::NoKlItoS;
  if (s == "no_kl_S_to_I") return Ablation::NoKlStoI;
  if (s == "no_copy") return Ablation::NoCopy;
  if (s == "copy_whole_sentence") return Ablation::CopyWholeSentence;
  throw Error(ErrorKind::Usage, "unknown ablation mode '" + s + "'");
}

std::string ablation_to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::OriginalText: return "original_text";
    case Ablation::NoKlItoS: return "no_kl_I_to_S";
    case Ablation::NoKlStoI: return "no_kl_S_to_I";
    case Ablation::NoCopy: return "no_copy";
    case Ablation::CopyWholeSentence: return "copy_whole_sentence";
  }
  return "full";
}

std::vector<float> build_partial_mask(int l_i, int l_o, int l_r) {
  if (l_o + l_r < 1)
    throw Error(ErrorKind::Usage, "partial mask needs l_O + l_R >= 1");
  const int n = l_i + l_o + l_r;
  std::vector<float> mask(static_cast<size_t>(n) * n, 0.0f);
  auto segment = [&](int pos) { return pos < l_i ? 0 : pos < l_i + l_o ? 1 : 2; };
  for (int q = 0; q < n; ++q)
    for (int k = 0; k < n; ++k) {
      const int sq = segment(q), sk = segment(k);
      bool allowed = false;
      if (sq == 0) allowed = sk == 0 || sk == 1;       // I -> I, O
      else if (sq == 1) allowed = sk == 1;             // O -> O
      else allowed = sk == 1 || sk == 2;               // R -> O, R
      if (allowed) mask[static_cast<size_t>(q) * n + k] = 1.0f;
    }
  return mask;
}

std::vector<bool> sample_copy_mask(int l_o, float p, std::mt19937& rng) {
  if (p < 0.0f || p >= 1.0f)
    throw Error(ErrorKind::Usage, "copy mask probability must be in [0, 1)");
  std::vector<bool> mask(l_o, false);
  if (p == 0.0f) return mask;
  std::bernoulli_distribution bern(p);
  for (int i = 0; i < l_o; ++i) mask[i] = bern(rng);
  return mask;
}

int copy_key_count(const ModelInput& input, Ablation ablation) {
  switch (ablation) {
    case Ablation::NoCopy:
    case Ablation::OriginalText:
      return 0;
    case Ablation::CopyWholeSentence:
      return static_cast<int>(input.target_ids.size()) - 1;
    default:
      return static_cast<int>(input.copy_vocab_ids.size());
  }
}

Model::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int d = cfg_.d_model, v = cfg_.vocab_size;
  add_param("embed.tok", {v, d});
  add_param("tag.img", {d});
  add_param("tag.obj", {d});
  add_param("tag.rel", {d});
  add_param("img.proj", {cfg_.d_img, d});
  auto attn_block = [&](const std::string& p) {
    add_param(p + ".wq", {d, d});
    add_param(p + ".bq", {d});
    add_param(p + ".wk", {d, d});
    add_param(p + ".bk", {d});
    add_param(p + ".wv", {d, d});
    add_param(p + ".bv", {d});
    add_param(p + ".wo", {d, d});
    add_param(p + ".bo", {d});
  };
  auto ln_block = [&](const std::string& p) {
    add_param(p + ".g", {d});
    add_param(p + ".b", {d});
  };
  auto ffn_block = [&](const std::string& p) {
    add_param(p + ".w1", {d, cfg_.d_ff});
    add_param(p + ".b1", {cfg_.d_ff});
    add_param(p + ".w2", {cfg_.d_ff, d});
    add_param(p + ".b2", {d});
  };
  for (int i = 0; i < cfg_.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    attn_block(p + ".attn");
    ln_block(p + ".ln1");
    ffn_block(p + ".ffn");
    ln_block(p + ".ln2");
  }
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    attn_block(p + ".self");
    ln_block(p + ".ln1");
    attn_block(p + ".cross");
    ln_block(p + ".ln2");
    ffn_block(p + ".ffn");
    ln_block(p + ".ln3");
  }
  add_param("out.w", {d, v});
  add_param("out.b", {v});
  add_param("gate.w", {d, 1});
  add_param("gate.b", {1});
  init_weights(init_seed);

  pe_.resize(static_cast<size_t>(cfg_.max_len) * d);
  for (int pos = 0; pos < cfg_.max_len; ++pos)
    for (int i = 0; i < d; ++i) {
      const double angle =
          pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
      pe_[static_cast<size_t>(pos) * d + i] =
          static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
}

TensorPtr Model::add_param(const std::string& name, std::vector<int> shape) {
  auto t = make_tensor(std::move(shape), true);
  params_.emplace_back(name, t);
  return t;
}

void Model::init_weights(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 0.02f);
  for (auto& [name, t] : params_) {
    const bool is_gain = name.ends_with(".g");
    const bool is_bias = name.ends_with(".b") || name.ends_with(".bq") ||
                         name.ends_with(".bk") || name.ends_with(".bv") ||
                         name.ends_with(".bo") || name.ends_with(".b1") ||
                         name.ends_with(".b2");
    if (is_gain) {
      std::fill(t->data.begin(), t->data.end(), 1.0f);
    } else if (is_bias) {
      std::fill(t->data.begin(), t->data.end(), 0.0f);
    } else if (name == "img.proj") {
      // near-identity bridge between feature and model widths
      for (auto& v : t->data) v = gauss(rng);
      const int n = std::min(t->shape[0], t->shape[1]);
      for (int i = 0; i < n; ++i) t->at(i, i) += 1.0f;
    } else {
      for (auto& v : t->data) v = gauss(rng);
    }
  }
}

TensorPtr Model::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw Error(ErrorKind::Usage, "unknown parameter " + name);
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t->numel();
  return n;
}

TensorPtr Model::positional_rows(int start, int len) const {
  if (start + len > cfg_.max_len)
    throw Error(ErrorKind::Data,
                "sequence length " + std::to_string(start + len) +
                    " exceeds max_len " + std::to_string(cfg_.max_len));
  auto t = make_tensor({len, cfg_.d_model});
  std::memcpy(t->data.data(), pe_.data() + static_cast<size_t>(start) * cfg_.d_model,
              sizeof(float) * t->data.size());
  return t;
}

TensorPtr Model::embed_image(Tape& t, const ImageFeature& f) {
  check_finite(*f.patches, "image feature");
  if (f.patches->cols() != cfg_.d_img)
    throw Error(ErrorKind::Data,
                "feature width " + std::to_string(f.patches->cols()) +
                    " does not match configured d_img " +
                    std::to_string(cfg_.d_img));
  auto proj = matmul(t, f.patches, param("img.proj"));
  return add_rowvec(t, proj, param("tag.img"));
}

std::pair<TensorPtr, TensorPtr> Model::embed_text(
    Tape& t, const std::vector<int>& object_ids,
    const std::vector<int>& relation_ids) {
  const int l_o = static_cast<int>(object_ids.size());
  const int l_r = static_cast<int>(relation_ids.size());
  TensorPtr e_obj;
  if (l_o > 0) {
    auto emb = rows_gather(t, param("embed.tok"), object_ids);
    emb = add_rowvec(t, emb, param("tag.obj"));
    e_obj = add(t, emb, positional_rows(0, l_o));
  }
  TensorPtr e_rel;
  if (l_r > 0) {
    auto emb = rows_gather(t, param("embed.tok"), relation_ids);
    emb = add_rowvec(t, emb, param("tag.rel"));
    e_rel = add(t, emb, positional_rows(l_o, l_r));
  }
  return {e_obj, e_rel};
}

TensorPtr Model::mha_block(Tape& t, const std::string& prefix,
                           const TensorPtr& q_in, const TensorPtr& kv_in,
                           const std::vector<float>& mask) {
  auto q = add_rowvec(t, matmul(t, q_in, param(prefix + ".wq")),
                      param(prefix + ".bq"));
  auto k = add_rowvec(t, matmul(t, kv_in, param(prefix + ".wk")),
                      param(prefix + ".bk"));
  auto v = add_rowvec(t, matmul(t, kv_in, param(prefix + ".wv")),
                      param(prefix + ".bv"));
  auto a = attention(t, q, k, v, mask, cfg_.heads);
  return add_rowvec(t, matmul(t, a, param(prefix + ".wo")),
                    param(prefix + ".bo"));
}

TensorPtr Model::encoder_stack(Tape& t, const TensorPtr& x_in,
                               const std::vector<float>& mask,
                               std::mt19937* dropout_rng) {
  TensorPtr x = x_in;
  for (int i = 0; i < cfg_.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    auto a = mha_block(t, p + ".attn", x, x, mask);
    if (cfg_.dropout > 0.0f && dropout_rng)
      a = dropout(t, a, cfg_.dropout, *dropout_rng);
    x = layer_norm(t, add(t, x, a), param(p + ".ln1.g"), param(p + ".ln1.b"));
    auto h = add_rowvec(t, matmul(t, x, param(p + ".ffn.w1")),
                        param(p + ".ffn.b1"));
    h = relu(t, h);
    h = add_rowvec(t, matmul(t, h, param(p + ".ffn.w2")),
                   param(p + ".ffn.b2"));
    if (cfg_.dropout > 0.0f && dropout_rng)
      h = dropout(t, h, cfg_.dropout, *dropout_rng);
    x = layer_norm(t, add(t, x, h), param(p + ".ln2.g"), param(p + ".ln2.b"));
  }
  return x;
}

EncoderOutput Model::encode(Tape& t, const TensorPtr& e_img,
                            const TensorPtr& e_obj, const TensorPtr& e_rel,
                            std::mt19937* dropout_rng) {
  const int l_i = e_img ? e_img->rows() : 0;
  const int l_o = e_obj ? e_obj->rows() : 0;
  const int l_r = e_rel ? e_rel->rows() : 0;
  std::vector<TensorPtr> parts;
  if (e_img) parts.push_back(e_img);
  if (e_obj) parts.push_back(e_obj);
  if (e_rel) parts.push_back(e_rel);
  if (parts.empty()) throw Error(ErrorKind::Usage, "encode: empty input");
  auto x = parts.size() == 1 ? parts[0] : concat_rows(t, parts);
  auto mask = build_partial_mask(l_i, l_o, l_r);
  auto y = encoder_stack(t, x, mask, dropout_rng);
  EncoderOutput out;
  if (l_i) out.image = slice_rows(t, y, 0, l_i);
  if (l_o) out.object = slice_rows(t, y, l_i, l_o);
  if (l_r) out.relation = slice_rows(t, y, l_i + l_o, l_r);
  return out;
}

TensorPtr Model::decoder_stack(Tape& t, const TensorPtr& x_in,
                               const TensorPtr& memory,
                               std::mt19937* dropout_rng) {
  const int n = x_in->rows(), m = memory->rows();
  std::vector<float> causal(static_cast<size_t>(n) * n, 0.0f);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) causal[static_cast<size_t>(i) * n + j] = 1.0f;
  const std::vector<float> full(static_cast<size_t>(n) * m, 1.0f);
  TensorPtr x = x_in;
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    auto a = mha_block(t, p + ".self", x, x, causal);
    if (cfg_.dropout > 0.0f && dropout_rng)
      a = dropout(t, a, cfg_.dropout, *dropout_rng);
    x = layer_norm(t, add(t, x, a), param(p + ".ln1.g"), param(p + ".ln1.b"));
    auto c = mha_block(t, p + ".cross", x, memory, full);
    if (cfg_.dropout > 0.0f && dropout_rng)
      c = dropout(t, c, cfg_.dropout, *dropout_rng);
    x = layer_norm(t, add(t, x, c), param(p + ".ln2.g"), param(p + ".ln2.b"));
    auto h = add_rowvec(t, matmul(t, x, param(p + ".ffn.w1")),
                        param(p + ".ffn.b1"));
    h = relu(t, h);
    h = add_rowvec(t, matmul(t, h, param(p + ".ffn.w2")),
                   param(p + ".ffn.b2"));
    if (cfg_.dropout > 0.0f && dropout_rng)
      h = dropout(t, h, cfg_.dropout, *dropout_rng);
    x = layer_norm(t, add(t, x, h), param(p + ".ln3.g"), param(p + ".ln3.b"));
  }
  return x;
}

TensorPtr Model::decode(Tape& t, const TensorPtr& memory, int bos_id,
                        const std::vector<int>& target_ids,
                        const TensorPtr& copy_keys,
                        const std::vector<int>& copy_vocab_ids,
                        const std::vector<bool>& copy_mask,
                        std::mt19937* dropout_rng) {
  if (target_ids.empty())
    throw Error(ErrorKind::Usage, "decode: empty target");
  const int n = static_cast<int>(target_ids.size());
  std::vector<int> shifted(n);
  shifted[0] = bos_id;
  for (int i = 1; i < n; ++i) shifted[i] = target_ids[i - 1];

  auto emb = rows_gather(t, param("embed.tok"), shifted);
  auto x = add(t, emb, positional_rows(0, n));
  if (cfg_.dropout > 0.0f && dropout_rng)
    x = dropout(t, x, cfg_.dropout, *dropout_rng);
  auto d = decoder_stack(t, x, memory, dropout_rng);

  auto logits = add_rowvec(t, matmul(t, d, param("out.w")), param("out.b"));
  auto gen = softmax_rows(t, logits);
  if (!copy_keys || copy_keys->rows() == 0) return gen;  // gate forced off

  if (static_cast<int>(copy_vocab_ids.size()) != copy_keys->rows() ||
      copy_mask.size() != copy_vocab_ids.size())
    throw Error(ErrorKind::Usage, "decode: copy key/id/mask size mismatch");
  std::vector<int> routed = copy_vocab_ids;
  for (size_t i = 0; i < copy_mask.size(); ++i)
    if (copy_mask[i]) routed[i] = Vocab::kUnk;

  auto scores = matmul_nt(t, d, copy_keys);
  auto copy = softmax_rows(t, scores);
  auto gate = sigmoid(
      t, add_rowvec(t, matmul(t, d, param("gate.w")), param("gate.b")));
  return mix_copy(t, gen, copy, gate, routed, cfg_.vocab_size);
}

Model::CopySetup Model::copy_setup(Tape& t, const ModelInput& input,
                                   const EncoderOutput& enc,
                                   Ablation ablation) {
  CopySetup out;
  if (ablation == Ablation::NoCopy || ablation == Ablation::OriginalText)
    return out;
  if (ablation == Ablation::CopyWholeSentence) {
    if (!enc.relation || enc.relation->rows() < 2) return out;
    // all sentence positions: the relation tokens after the marker,
    // copying to the underlying target word at each position
    std::vector<int> positions(enc.relation->rows() - 1);
    for (size_t i = 0; i < positions.size(); ++i)
      positions[i] = static_cast<int>(i) + 1;
    out.keys = rows_gather(t, enc.relation, positions);
    out.vocab_ids.assign(input.target_ids.begin(),
                         input.target_ids.end() - 1);  // drop EOS
    return out;
  }
  if (!enc.object || input.copy_positions.empty()) return out;
  out.keys = rows_gather(t, enc.object, input.copy_positions);
  out.vocab_ids = input.copy_vocab_ids;
  return out;
}

BranchProbs Model::forward_train(Tape& t, const ModelInput& input,
                                 const ImageFeature& feature,
                                 const std::vector<bool>& copy_mask,
                                 Ablation ablation,
                                 std::mt19937* dropout_rng) {
  ModelInput in = input;
  if (ablation == Ablation::OriginalText) {
    in.object_ids.clear();
    in.copy_positions.clear();
    in.copy_vocab_ids.clear();
    in.relation_ids.assign(1, Vocab::kRelation);
    in.relation_ids.insert(in.relation_ids.end(), input.target_ids.begin(),
                           input.target_ids.end() - 1);
  } else if (cfg_.mask_encoder_input) {
    for (size_t i = 0; i < copy_mask.size() && i < in.copy_positions.size();
         ++i)
      if (copy_mask[i]) in.object_ids[in.copy_positions[i]] = Vocab::kUnk;
  }

  auto e_img = embed_image(t, feature);
  auto [e_obj, e_rel] = embed_text(t, in.object_ids, in.relation_ids);
  auto enc = encode(t, e_img, e_obj, e_rel, dropout_rng);

  auto cs = copy_setup(t, in, enc, ablation);
  std::vector<bool> mask = copy_mask;
  mask.resize(cs.vocab_ids.size(), false);

  std::vector<TensorPtr> cap_parts;
  if (enc.image) cap_parts.push_back(enc.image);
  if (enc.object) cap_parts.push_back(enc.object);
  auto cap_mem =
      cap_parts.size() == 1 ? cap_parts[0] : concat_rows(t, cap_parts);
  std::vector<TensorPtr> par_parts;
  if (enc.object) par_parts.push_back(enc.object);
  if (enc.relation) par_parts.push_back(enc.relation);
  auto par_mem =
      par_parts.size() == 1 ? par_parts[0] : concat_rows(t, par_parts);

  BranchProbs out;
  out.caption = decode(t, cap_mem, Vocab::kImgBos, in.target_ids, cs.keys,
                       cs.vocab_ids, mask, dropout_rng);
  out.paraphrase = decode(t, par_mem, Vocab::kTxtBos, in.target_ids, cs.keys,
                          cs.vocab_ids, mask, dropout_rng);
  return out;
}

Model::ParaphraseState Model::encode_for_paraphrase(Tape& t,
                                                    const ModelInput& input,
                                                    Ablation ablation) {
  ModelInput in = input;
  if (ablation == Ablation::OriginalText) {
    in.object_ids.clear();
    in.copy_positions.clear();
    in.copy_vocab_ids.clear();
    in.relation_ids.assign(1, Vocab::kRelation);
    in.relation_ids.insert(in.relation_ids.end(), input.target_ids.begin(),
                           input.target_ids.end() - 1);
  }
  auto [e_obj, e_rel] = embed_text(t, in.object_ids, in.relation_ids);
  auto enc = encode(t, nullptr, e_obj, e_rel, nullptr);
  auto cs = copy_setup(t, in, enc, ablation);
  std::vector<TensorPtr> parts;
  if (enc.object) parts.push_back(enc.object);
  if (enc.relation) parts.push_back(enc.relation);
  ParaphraseState out;
  out.memory = parts.size() == 1 ? parts[0] : concat_rows(t, parts);
  out.copy_keys = cs.keys;
  out.copy_vocab_ids = cs.vocab_ids;
  return out;
}

Model::CaptionState Model::encode_for_caption(Tape& t, const ModelInput& input,
                                              const ImageFeature& feature,
                                              Ablation ablation) {
  auto e_img = embed_image(t, feature);
  auto [e_obj, e_rel] = embed_text(t, input.object_ids, input.relation_ids);
  auto enc = encode(t, e_img, e_obj, e_rel, nullptr);
  auto cs = copy_setup(t, input, enc, ablation);
  std::vector<TensorPtr> parts;
  if (enc.image) parts.push_back(enc.image);
  if (enc.object) parts.push_back(enc.object);
  CaptionState out;
  out.memory = parts.size() == 1 ? parts[0] : concat_rows(t, parts);
  out.copy_keys = cs.keys;
  out.copy_vocab_ids = cs.vocab_ids;
  return out;
}

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Data, "cannot write checkpoint " + path);
  out.write(kCkptMagic, 8);
  write_u32(out, kCkptVersion);
  const std::string cfg = cfg_.to_json();
  write_u32(out, static_cast<uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u32(out, static_cast<uint32_t>(params_.size()));
  for (const auto& [name, t] : params_) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(t->shape.size()));
    for (int dsz : t->shape) write_u32(out, static_cast<uint32_t>(dsz));
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(sizeof(float) * t->data.size()));
  }
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Data, "cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw Error(ErrorKind::Data, "bad magic in checkpoint " + path);
  const uint32_t version = read_u32(in, "version");
  if (version != kCkptVersion)
    throw Error(ErrorKind::Data,
                "unsupported checkpoint version " + std::to_string(version));
  const uint32_t cfg_len = read_u32(in, "config length");
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), cfg_len))
    throw Error(ErrorKind::Data, "truncated checkpoint config");
  Model m(ModelConfig::from_json(cfg_text), 0);
  const uint32_t count = read_u32(in, "tensor count");
  if (count != m.params_.size())
    throw Error(ErrorKind::Data,
                "checkpoint tensor count " + std::to_string(count) +
                    " does not match config-derived " +
                    std::to_string(m.params_.size()));
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw Error(ErrorKind::Data, "truncated checkpoint name");
    if (name != m.params_[i].first)
      throw Error(ErrorKind::Data, "unexpected tensor '" + name +
                                       "', wanted '" + m.params_[i].first +
                                       "'");
    const uint32_t rank = read_u32(in, "rank");
    std::vector<int> shape(rank);
    for (auto& dsz : shape)
      dsz = static_cast<int>(read_u32(in, "dimension"));
    auto& t = m.params_[i].second;
    if (shape != t->shape)
      throw Error(ErrorKind::Data, "shape mismatch for tensor '" + name + "'");
    if (!in.read(reinterpret_cast<char*>(t->data.data()),
                 static_cast<std::streamsize>(sizeof(float) * t->data.size())))
      throw Error(ErrorKind::Data, "truncated payload for tensor '" + name +
                                       "'");
    check_finite(*t, "checkpoint tensor " + name);
  }
  return m;
}

}  // namespace vipg
