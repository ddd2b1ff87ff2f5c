#pragma once

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace vipg {

struct TaggedToken {
  std::string surface;
  std::string tag;
};

// The object/relation decomposition of a sentence: nouns become
// (placeholder, word) pairs, the relation sequence carries everything else
// with placeholders standing in for the nouns.
struct ProcessedText {
  std::vector<std::pair<std::string, std::string>> objects;
  std::vector<std::string> relation;
  std::vector<std::string> target;
  std::string raw;
};

std::vector<std::string> tokenize(const std::string& text);

class Tagger {
 public:
  virtual ~Tagger() = default;
  virtual std::vector<TaggedToken> tag(
      const std::vector<std::string>& tokens) const = 0;
};

// word -> most frequent tag lexicon with suffix heuristics and a non-noun
// fallback. Ships a small built-in lexicon; entries can be added from TSV.
class LexiconTagger : public Tagger {
 public:
  LexiconTagger();  // built-in defaults
  void load_tsv(const std::string& path);
  void add(const std::string& word, const std::string& tag);
  std::vector<TaggedToken> tag(
      const std::vector<std::string>& tokens) const override;

 private:
  std::unordered_map<std::string, std::string> lexicon_;
};

// Reads tokens of the form surface_TAG; the tokenizer is bypassed.
std::vector<TaggedToken> parse_pretagged(const std::string& line);

bool is_noun_tag(const std::string& tag);

// Max placeholder index per tag; exceeding it is an error.
constexpr int kPlaceholderCapacity = 10;

ProcessedText split_object_relation(const std::vector<TaggedToken>& tagged,
                                    const std::string& raw = "");

// Special token ids occupy fixed low slots, then the reserved placeholder
// block, then corpus tokens.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kEos = 2;
  static constexpr int kImgBos = 3;
  static constexpr int kTxtBos = 4;
  static constexpr int kPosDict = 5;
  static constexpr int kRelation = 6;

  Vocab();
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& token) const;
  void add(const std::string& token);

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct ModelInput {
  std::vector<int> object_ids;    // [POS_DICT, ph0, w0, ph1, w1, ...]
  std::vector<int> relation_ids;  // [RELATION, tokens...]
  std::vector<int> target_ids;    // tokens + EOS
  // Word-slot positions within object_ids and the vocab id each copies to.
  std::vector<int> copy_positions;
  std::vector<int> copy_vocab_ids;
};

ModelInput to_model_input(const ProcessedText& p, const Vocab& v);

Vocab build_vocab(const std::vector<ProcessedText>& corpus, int min_freq = 1);

std::string detokenize(const std::vector<std::string>& tokens);

}  // namespace vipg
