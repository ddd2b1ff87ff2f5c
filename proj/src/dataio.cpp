#include "vipg/dataio.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vipg {

namespace {

constexpr char kFeatureMagic[4] = {'V', 'I', 'P', 'G'};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw Error(ErrorKind::Data, "truncated feature file " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

std::vector<CaptionRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open manifest " + path);
  std::vector<CaptionRecord> out;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Data, "malformed manifest line " +
                                       std::to_string(lineno) + ": " +
                                       e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("caption") ||
        !j.contains("feature"))
      throw Error(ErrorKind::Data,
                  "manifest line " + std::to_string(lineno) +
                      " missing required keys id/caption/feature");
    CaptionRecord rec{j["id"].get<std::string>(),
                      j["caption"].get<std::string>(),
                      j["feature"].get<std::string>()};
    if (!seen.insert(rec.id).second)
      throw Error(ErrorKind::Data, "duplicate id '" + rec.id +
                                       "' on manifest line " +
                                       std::to_string(lineno));
    out.push_back(std::move(rec));
  }
  return out;
}

void save_manifest(const std::string& path,
                   const std::vector<CaptionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Data, "cannot write manifest " + path);
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["caption"] = r.caption;
    j["feature"] = r.feature_path;
    out << j.dump() << "\n";
  }
}

ImageFeature load_feature(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Data, "cannot open feature file " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw Error(ErrorKind::Data, "bad magic in feature file " + path);
  const uint32_t rows = read_u32(in, path);
  const uint32_t cols = read_u32(in, path);
  if (rows < 1 || cols < 1)
    throw Error(ErrorKind::Data, "degenerate feature shape in " + path);
  auto t = make_tensor({static_cast<int>(rows), static_cast<int>(cols)});
  if (!in.read(reinterpret_cast<char*>(t->data.data()),
               static_cast<std::streamsize>(sizeof(float) * t->data.size())))
    throw Error(ErrorKind::Data, "truncated payload in feature file " + path);
  if (!t->all_finite())
    throw Error(ErrorKind::Data, "non-finite value in feature file " + path);
  return ImageFeature{t};
}

void save_feature(const std::string& path, const Tensor& patches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Data, "cannot write feature file " + path);
  out.write(kFeatureMagic, 4);
  write_u32(out, static_cast<uint32_t>(patches.rows()));
  write_u32(out, static_cast<uint32_t>(patches.cols()));
  out.write(reinterpret_cast<const char*>(patches.data.data()),
            static_cast<std::streamsize>(sizeof(float) * patches.data.size()));
}

SynthSpec SynthSpec::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open synth spec " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("malformed synth spec: ") +
                                     e.what());
  }
  SynthSpec s;
  if (j.contains("nouns")) s.nouns = j["nouns"].get<std::vector<std::string>>();
  if (j.contains("verbs")) s.verbs = j["verbs"].get<std::vector<std::string>>();
  if (j.contains("adjectives"))
    s.adjectives = j["adjectives"].get<std::vector<std::string>>();
  if (j.contains("preps")) s.preps = j["preps"].get<std::vector<std::string>>();
  if (j.contains("sigma")) s.sigma = j["sigma"].get<float>();
  if (j.contains("d_img")) s.d_img = j["d_img"].get<int>();
  if (j.contains("l")) s.l = j["l"].get<int>();
  return s;
}

void synth_generate(int n, uint64_t seed, const SynthSpec& spec,
                    const std::string& out_dir) {
  if (n < 1) throw Error(ErrorKind::Usage, "synth_generate: n must be >= 1");
  fs::create_directories(out_dir);

  const int feat_dim = spec.l * spec.d_img;
  const int n_nouns = static_cast<int>(spec.nouns.size());

  // The projection is drawn once from its own seeded stream so the mapping
  // from noun bags to features does not depend on n.
  std::mt19937_64 proj_rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  Tensor projection;
  projection.shape = {n_nouns, feat_dim};
  projection.data.resize(static_cast<size_t>(n_nouns) * feat_dim);
  for (auto& v : projection.data) v = gauss(proj_rng);
  save_feature((fs::path(out_dir) / "projection.vipg").string(), projection);

  std::mt19937_64 rng(seed);
  static const std::vector<std::string> kDets = {"a", "the"};
  auto pick = [&](const std::vector<std::string>& pool) -> const std::string& {
    std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
    return pool[d(rng)];
  };

  std::vector<CaptionRecord> records;
  for (int i = 0; i < n; ++i) {
    // determiner adjective noun verb prep determiner noun .
    const std::string& noun1 = pick(spec.nouns);
    const std::string caption = pick(kDets) + " " + pick(spec.adjectives) +
                                " " + noun1 + " " + pick(spec.verbs) + " " +
                                pick(spec.preps) + " " + pick(kDets) + " " +
                                pick(spec.nouns) + " .";

    std::vector<int> bag(n_nouns, 0);
    for (const auto& tok : tokenize(caption)) {
      auto it = std::find(spec.nouns.begin(), spec.nouns.end(), tok);
      if (it != spec.nouns.end()) ++bag[it - spec.nouns.begin()];
    }

    Tensor feat;
    feat.shape = {spec.l, spec.d_img};
    feat.data.assign(static_cast<size_t>(feat_dim), 0.0f);
    for (int b = 0; b < n_nouns; ++b) {
      if (bag[b] == 0) continue;
      for (int j = 0; j < feat_dim; ++j)
        feat.data[j] += bag[b] * projection.data[static_cast<size_t>(b) *
                                                     feat_dim + j];
    }
    if (spec.sigma > 0.0f)
      for (auto& v : feat.data) v += spec.sigma * gauss(rng);

    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "synth-%06d", i);
    const std::string fname = std::string(idbuf) + ".vipg";
    save_feature((fs::path(out_dir) / fname).string(), feat);
    records.push_back({idbuf, caption, fname});
  }
  save_manifest((fs::path(out_dir) / "manifest.jsonl").string(), records);
}

BatchStream::BatchStream(std::vector<Example> examples, int batch_size,
                         uint64_t seed, bool with_images, int max_len)
    : examples_(std::move(examples)),
      batch_size_(batch_size),
      with_images_(with_images),
      max_len_(max_len),
      rng_(seed) {
  if (batch_size_ < 1)
    throw Error(ErrorKind::Usage, "batch size must be >= 1");
  for (const auto& ex : examples_)
    if (static_cast<int>(ex.input.target_ids.size()) > max_len_)
      throw Error(ErrorKind::Data, "sentence exceeds max length " +
                                       std::to_string(max_len_) +
                                       " in record " + ex.id);
  order_.resize(examples_.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  reshuffle();
}

void BatchStream::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::string BatchStream::state() const {
  std::ostringstream out;
  out << rng_ << "\n" << cursor_;
  for (size_t i : order_) out << " " << i;
  return out.str();
}

void BatchStream::restore_state(const std::string& text) {
  std::istringstream in(text);
  in >> rng_ >> cursor_;
  for (auto& i : order_) in >> i;
  if (!in) throw Error(ErrorKind::Data, "malformed batch stream state");
}

Batch BatchStream::next() {
  if (examples_.empty())
    throw Error(ErrorKind::Data, "batch stream over empty dataset");
  if (cursor_ >= order_.size()) reshuffle();
  Batch b;
  while (cursor_ < order_.size() &&
         static_cast<int>(b.examples.size()) < batch_size_) {
    const Example& ex = examples_[order_[cursor_++]];
    b.examples.push_back(ex);
    if (with_images_) {
      if (ex.feature_path.empty())
        throw Error(ErrorKind::Data, "record " + ex.id + " has no feature");
      b.features.push_back(load_feature(ex.feature_path));
    }
  }
  return b;
}

}  // namespace vipg
