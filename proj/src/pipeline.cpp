#include "vipg/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vipg {

std::vector<ProcessedRecord> preprocess(
    const std::vector<CaptionRecord>& records, const std::string& manifest_dir,
    const Tagger& tagger, const PreprocessOptions& opts) {
  if (opts.captions != "one" && opts.captions != "all")
    throw Error(ErrorKind::Usage, "--captions must be 'one' or 'all'");

  std::vector<size_t> keep;
  if (opts.captions == "one") {
    // group captions by feature file (one feature per image)
    std::map<std::string, std::vector<size_t>> by_image;
    std::vector<std::string> image_order;
    for (size_t i = 0; i < records.size(); ++i) {
      auto [it, fresh] = by_image.try_emplace(records[i].feature_path);
      if (fresh) image_order.push_back(records[i].feature_path);
      it->second.push_back(i);
    }
    std::mt19937_64 rng(opts.seed);
    for (const auto& img : image_order) {
      const auto& group = by_image[img];
      std::uniform_int_distribution<size_t> d(0, group.size() - 1);
      keep.push_back(group[d(rng)]);
    }
    std::sort(keep.begin(), keep.end());
  } else {
    keep.resize(records.size());
    for (size_t i = 0; i < keep.size(); ++i) keep[i] = i;
  }

  std::vector<std::vector<std::string>> sidecar_tags;
  if (!opts.tags_path.empty()) {
    std::ifstream in(opts.tags_path);
    if (!in)
      throw Error(ErrorKind::Data, "cannot open tags file " + opts.tags_path);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::vector<std::string> tags;
      std::string tag;
      while (ss >> tag) tags.push_back(tag);
      sidecar_tags.push_back(std::move(tags));
    }
    if (sidecar_tags.size() != records.size())
      throw Error(ErrorKind::Data,
                  "tags file has " + std::to_string(sidecar_tags.size()) +
                      " lines for " + std::to_string(records.size()) +
                      " manifest records");
  }

  std::vector<ProcessedRecord> out;
  out.reserve(keep.size());
  for (size_t i : keep) {
    const auto& rec = records[i];
    std::vector<TaggedToken> tagged;
    if (opts.pretagged) {
      tagged = parse_pretagged(rec.caption);
    } else {
      auto tokens = tokenize(rec.caption);
      if (!sidecar_tags.empty()) {
        if (sidecar_tags[i].size() != tokens.size())
          throw Error(ErrorKind::Data,
                      "tag count mismatch for record " + rec.id + ": " +
                          std::to_string(sidecar_tags[i].size()) + " tags, " +
                          std::to_string(tokens.size()) + " tokens");
        for (size_t k = 0; k < tokens.size(); ++k)
          tagged.push_back({tokens[k], sidecar_tags[i][k]});
      } else {
        tagged = tagger.tag(tokens);
      }
    }
    ProcessedRecord pr;
    pr.id = rec.id;
    try {
      pr.text = split_object_relation(tagged, rec.caption);
    } catch (const Error& e) {
      throw Error(e.kind(),
                  std::string(e.what()) + " (record " + rec.id + ")");
    }
    pr.feature_path =
        rec.feature_path.empty()
            ? std::string()
            : (fs::path(manifest_dir) / rec.feature_path).string();
    out.push_back(std::move(pr));
  }
  return out;
}

void save_processed(const std::string& path,
                    const std::vector<ProcessedRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(ErrorKind::Data, "cannot write processed dataset " + path);
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    json objs = json::array();
    for (const auto& [ph, w] : r.text.objects) objs.push_back({ph, w});
    j["objects"] = objs;
    j["relation"] = r.text.relation;
    j["target"] = r.text.target;
    j["raw"] = r.text.raw;
    j["feature"] = r.feature_path;
    out << j.dump() << "\n";
  }
}

std::vector<ProcessedRecord> load_processed(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::Data, "cannot open processed dataset " + path);
  std::vector<ProcessedRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Data, "malformed processed record on line " +
                                       std::to_string(lineno) + ": " +
                                       e.what());
    }
    ProcessedRecord r;
    r.id = j.at("id").get<std::string>();
    for (const auto& pair : j.at("objects"))
      r.text.objects.emplace_back(pair.at(0).get<std::string>(),
                                  pair.at(1).get<std::string>());
    r.text.relation = j.at("relation").get<std::vector<std::string>>();
    r.text.target = j.at("target").get<std::vector<std::string>>();
    r.text.raw = j.value("raw", "");
    r.feature_path = j.value("feature", "");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Example> to_examples(const std::vector<ProcessedRecord>& records,
                                 const Vocab& vocab) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example ex;
    ex.id = r.id;
    ex.processed = r.text;
    ex.input = to_model_input(r.text, vocab);
    ex.feature_path = r.feature_path;
    out.push_back(std::move(ex));
  }
  return out;
}

std::string transformation_dump(const ProcessedText& p) {
  std::ostringstream out;
  out << "Original Text: " << detokenize(p.target) << "\n";
  out << "Object Sequence:";
  for (const auto& [ph, w] : p.objects) out << " " << ph << " " << w;
  out << "\n";
  out << "Relation Sequence: " << detokenize(p.relation) << "\n";
  out << "Transformed Input Text: <POS_DICT>";
  for (const auto& [ph, w] : p.objects) out << " " << ph << " " << w;
  out << " <RELATION> " << detokenize(p.relation) << "\n";
  return out.str();
}

}  // namespace vipg
