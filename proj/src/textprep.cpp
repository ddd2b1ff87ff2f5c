#include "vipg/textprep.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "vipg/tensor.hpp"

namespace vipg {

namespace {

const char* kSpecials[] = {"<PAD>",     "<UNK>",      "<EOS>",     "<IMG_BOS>",
                           "<TXT_BOS>", "<POS_DICT>", "<RELATION>"};
const char* kNounTags[] = {"NN", "NNS", "NNP", "NNPS"};

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
      out.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool is_noun_tag(const std::string& tag) {
  for (const char* t : kNounTags)
    if (tag == t) return true;
  return false;
}

LexiconTagger::LexiconTagger() {
  // Small built-in lexicon covering common caption vocabulary. A user
  // lexicon loaded on top overrides these entries.
  static const std::pair<const char*, const char*> kDefaults[] = {
      // determiners / function words
      {"a", "DT"}, {"an", "DT"}, {"the", "DT"}, {"this", "DT"}, {"that", "DT"},
      {"several", "JJ"}, {"some", "DT"}, {"in", "IN"}, {"on", "IN"},
      {"at", "IN"}, {"near", "IN"}, {"by", "IN"}, {"under", "IN"},
      {"over", "IN"}, {"with", "IN"}, {"behind", "IN"}, {"beside", "IN"},
      {"of", "IN"}, {"and", "CC"}, {"are", "VBP"}, {"is", "VBZ"},
      {"was", "VBD"}, {"were", "VBD"},
      // adjectives
      {"hard", "JJ"}, {"giant", "JJ"}, {"big", "JJ"}, {"small", "JJ"},
      {"red", "JJ"}, {"blue", "JJ"}, {"green", "JJ"}, {"yellow", "JJ"},
      {"white", "JJ"}, {"black", "JJ"}, {"old", "JJ"}, {"young", "JJ"},
      {"happy", "JJ"}, {"tall", "JJ"}, {"little", "JJ"}, {"large", "JJ"},
      // verbs
      {"operating", "VBG"}, {"runs", "VBZ"}, {"sees", "VBZ"},
      {"watches", "VBZ"}, {"chases", "VBZ"}, {"holds", "VBZ"},
      {"carries", "VBZ"}, {"follows", "VBZ"}, {"passes", "VBZ"},
      {"finds", "VBZ"}, {"sits", "VBZ"}, {"stands", "VBZ"}, {"walks", "VBZ"},
      {"jumps", "VBZ"}, {"sleeps", "VBZ"}, {"plays", "VBZ"}, {"eats", "VBZ"},
      {"waits", "VBZ"}, {"rests", "VBZ"}, {"moves", "VBZ"},
      // nouns
      {"man", "NN"}, {"men", "NNS"}, {"woman", "NN"}, {"women", "NNS"},
      {"hat", "NN"}, {"hats", "NNS"}, {"pulley", "NN"}, {"system", "NN"},
      {"dog", "NN"}, {"cat", "NN"}, {"bird", "NN"}, {"horse", "NN"},
      {"ball", "NN"}, {"park", "NN"}, {"tree", "NN"}, {"car", "NN"},
      {"table", "NN"}, {"chair", "NN"}, {"house", "NN"}, {"street", "NN"},
      {"river", "NN"}, {"garden", "NN"}, {"child", "NN"}, {"children", "NNS"},
      {"boy", "NN"}, {"girl", "NN"}, {"bench", "NN"}, {"fence", "NN"},
      {"door", "NN"}, {"window", "NN"}, {"boat", "NN"}, {"train", "NN"},
      {"kite", "NN"}, {"bike", "NN"}, {"field", "NN"}, {"beach", "NN"},
  };
  for (const auto& [w, t] : kDefaults) lexicon_.emplace(w, t);
}

void LexiconTagger::add(const std::string& word, const std::string& tag) {
  lexicon_[word] = tag;
}

void LexiconTagger::load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open lexicon file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw Error(ErrorKind::Data, "malformed lexicon line " +
                                       std::to_string(lineno) + " in " + path);
    lexicon_[line.substr(0, tab)] = line.substr(tab + 1);
  }
}

std::vector<TaggedToken> LexiconTagger::tag(
    const std::vector<std::string>& tokens) const {
  std::vector<TaggedToken> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    auto it = lexicon_.find(tok);
    if (it != lexicon_.end()) {
      out.push_back({tok, it->second});
      continue;
    }
    std::string tag = "XX";  // non-noun fallback
    // Suffix heuristics for unknown words.
    auto stem_known_noun = [&](const std::string& stem) {
      auto s = lexicon_.find(stem);
      return s != lexicon_.end() && s->second == "NN";
    };
    if (tok.size() > 2 && tok.ends_with("es") &&
        stem_known_noun(tok.substr(0, tok.size() - 2))) {
      tag = "NNS";
    } else if (tok.size() > 1 && tok.ends_with("s") &&
               stem_known_noun(tok.substr(0, tok.size() - 1))) {
      tag = "NNS";
    } else if (tok.ends_with("tion") || tok.ends_with("ness") ||
               tok.ends_with("ment")) {
      tag = "NN";
    }
    out.push_back({tok, tag});
  }
  return out;
}

std::vector<TaggedToken> parse_pretagged(const std::string& line) {
  std::vector<TaggedToken> out;
  std::istringstream ss(line);
  std::string item;
  while (ss >> item) {
    const auto us = item.rfind('_');
    if (us == std::string::npos || us == 0 || us + 1 >= item.size())
      throw Error(ErrorKind::Data,
                  "malformed pre-tagged token '" + item + "'");
    std::string surface = item.substr(0, us);
    std::transform(surface.begin(), surface.end(), surface.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    out.push_back({surface, item.substr(us + 1)});
  }
  return out;
}

ProcessedText split_object_relation(const std::vector<TaggedToken>& tagged,
                                    const std::string& raw) {
  ProcessedText out;
  out.raw = raw;
  std::map<std::string, int> counters;
  for (const auto& tt : tagged) {
    out.target.push_back(tt.surface);
    if (is_noun_tag(tt.tag)) {
      const int idx = counters[tt.tag]++;
      if (idx >= kPlaceholderCapacity)
        throw Error(ErrorKind::Data,
                    "placeholder capacity exceeded for tag " + tt.tag +
                        " in sentence '" + raw + "'");
      const std::string ph = tt.tag + "@" + std::to_string(idx);
      out.objects.emplace_back(ph, tt.surface);
      out.relation.push_back(ph);
    } else {
      out.relation.push_back(tt.surface);
    }
  }
  return out;
}

Vocab::Vocab() {
  for (const char* s : kSpecials) add(s);
  for (const char* tag : kNounTags)
    for (int i = 0; i < kPlaceholderCapacity; ++i)
      add(std::string(tag) + "@" + std::to_string(i));
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw Error(ErrorKind::Data, "vocab id out of range: " + std::to_string(id));
  return id_to_token_[id];
}

bool Vocab::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

void Vocab::add(const std::string& token) {
  if (token_to_id_.emplace(token, size()).second)
    id_to_token_.push_back(token);
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Data, "cannot write vocab file " + path);
  for (const auto& tok : id_to_token_) out << tok << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open vocab file " + path);
  Vocab v;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    if (lineno < v.size()) {
      if (line != v.token(lineno))
        throw Error(ErrorKind::Data,
                    "vocab file " + path + " does not start with the fixed " +
                        "special/placeholder block (line " +
                        std::to_string(lineno + 1) + ")");
    } else {
      v.add(line);
    }
    ++lineno;
  }
  return v;
}

ModelInput to_model_input(const ProcessedText& p, const Vocab& v) {
  ModelInput out;
  out.object_ids.push_back(Vocab::kPosDict);
  for (const auto& [ph, word] : p.objects) {
    out.object_ids.push_back(v.id(ph));
    out.copy_positions.push_back(static_cast<int>(out.object_ids.size()));
    out.object_ids.push_back(v.id(word));
    out.copy_vocab_ids.push_back(v.id(word));
  }
  out.relation_ids.push_back(Vocab::kRelation);
  for (const auto& tok : p.relation) out.relation_ids.push_back(v.id(tok));
  for (const auto& tok : p.target) out.target_ids.push_back(v.id(tok));
  out.target_ids.push_back(Vocab::kEos);
  return out;
}

Vocab build_vocab(const std::vector<ProcessedText>& corpus, int min_freq) {
  if (min_freq < 1)
    throw Error(ErrorKind::Usage, "build_vocab: min_freq must be >= 1");
  std::map<std::string, int> freq;
  for (const auto& p : corpus)
    for (const auto& tok : p.target) ++freq[tok];
  std::vector<std::pair<std::string, int>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, n] : items)
    if (n >= min_freq) v.add(tok);
  return v;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += " ";
    out += tokens[i];
  }
  return out;
}

}  // namespace vipg
