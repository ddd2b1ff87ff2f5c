#pragma once

#include <string>
#include <vector>

#include "vipg/dataio.hpp"
#include "vipg/textprep.hpp"

namespace vipg {

struct PreprocessOptions {
  std::string captions = "all";  // "one" keeps one seeded-random caption
                                 // per image (feature file)
  uint64_t seed = 0;
  bool pretagged = false;     // captions carry surface_TAG tokens
  std::string tags_path;      // sidecar file, one tag line per sentence
};

struct ProcessedRecord {
  std::string id;
  ProcessedText text;
  std::string feature_path;
};

std::vector<ProcessedRecord> preprocess(
    const std::vector<CaptionRecord>& records, const std::string& manifest_dir,
    const Tagger& tagger, const PreprocessOptions& opts);

void save_processed(const std::string& path,
                    const std::vector<ProcessedRecord>& records);
std::vector<ProcessedRecord> load_processed(const std::string& path);

std::vector<Example> to_examples(const std::vector<ProcessedRecord>& records,
                                 const Vocab& vocab);

// Four-line rendering of one decomposition, matching the documented
// object/relation layout.
std::string transformation_dump(const ProcessedText& p);

}  // namespace vipg
