#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "vipg/dataio.hpp"
#include "vipg/inference.hpp"
#include "vipg/metrics.hpp"
#include "vipg/model.hpp"
#include "vipg/pipeline.hpp"
#include "vipg/textprep.hpp"
#include "vipg/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vipg;

namespace {

std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> read_lines_path(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open " + path);
  return read_lines(in);
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                   const std::string& captions, uint64_t seed, int min_freq,
                   const std::string& lexicon_path, bool pretagged,
                   const std::string& tags_path) {
  auto records = load_manifest(manifest_path);
  LexiconTagger tagger;
  if (!lexicon_path.empty()) tagger.load_tsv(lexicon_path);
  PreprocessOptions opts;
  opts.captions = captions;
  opts.seed = seed;
  opts.pretagged = pretagged;
  opts.tags_path = tags_path;
  auto processed = preprocess(
      records, fs::path(manifest_path).parent_path().string(), tagger, opts);

  fs::create_directories(out_dir);
  save_processed((fs::path(out_dir) / "processed.jsonl").string(), processed);

  std::vector<ProcessedText> texts;
  texts.reserve(processed.size());
  for (const auto& r : processed) texts.push_back(r.text);
  auto vocab = build_vocab(texts, min_freq);
  vocab.save((fs::path(out_dir) / "vocab.txt").string());

  std::ofstream dump((fs::path(out_dir) / "sample_dump.txt").string());
  for (size_t i = 0; i < processed.size() && i < 10; ++i)
    dump << transformation_dump(processed[i].text) << "\n";

  std::cout << "preprocessed " << processed.size() << " records, vocab size "
            << vocab.size() << "\n";
  return 0;
}

int cmd_synth_data(const std::string& out_dir, int n, uint64_t seed,
                   const std::string& spec_path) {
  SynthSpec spec;
  if (!spec_path.empty()) spec = SynthSpec::from_json_file(spec_path);
  synth_generate(n, seed, spec, out_dir);
  std::cout << "wrote " << n << " caption/feature pairs to " << out_dir
            << "\n";
  return 0;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string processed;
  std::string val_processed;
  std::string vocab_path;
  std::string out_dir;
};

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("malformed config: ") + e.what());
  }
  RunConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"].dump());
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"].dump());
  const auto& d = j.at("data");
  c.processed = d.at("processed").get<std::string>();
  if (d.contains("val_processed"))
    c.val_processed = d["val_processed"].get<std::string>();
  c.vocab_path = d.at("vocab").get<std::string>();
  c.out_dir = d.at("out_dir").get<std::string>();
  return c;
}

void write_resolved_config(const RunConfig& c, const std::string& path) {
  json j;
  j["model"] = json::parse(c.model.to_json());
  j["train"] = json::parse(c.train.to_json());
  j["data"]["processed"] = c.processed;
  if (!c.val_processed.empty()) j["data"]["val_processed"] = c.val_processed;
  j["data"]["vocab"] = c.vocab_path;
  j["data"]["out_dir"] = c.out_dir;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

int cmd_train(RunConfig cfg) {
  auto vocab = Vocab::load(cfg.vocab_path);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
  if (cfg.model.vocab_size != vocab.size())
    throw Error(ErrorKind::Usage,
                "config vocab_size " + std::to_string(cfg.model.vocab_size) +
                    " does not match vocab file size " +
                    std::to_string(vocab.size()));
  cfg.model.validate();
  cfg.train.validate();

  auto train_records = load_processed(cfg.processed);
  auto train_examples = to_examples(train_records, vocab);
  std::vector<Example> val_examples;
  if (!cfg.val_processed.empty())
    val_examples = to_examples(load_processed(cfg.val_processed), vocab);
  else
    val_examples = train_examples;
  for (const auto& ex : train_examples)
    if (!ex.feature_path.empty() && !fs::exists(ex.feature_path))
      throw Error(ErrorKind::Data,
                  "missing feature file for record " + ex.id + ": " +
                      ex.feature_path);

  fs::create_directories(cfg.out_dir);
  write_resolved_config(cfg, (fs::path(cfg.out_dir) / "config.json").string());

  Model model(cfg.model, cfg.train.seed);
  Trainer trainer(model, cfg.train, std::move(train_examples),
                  std::move(val_examples));
  trainer.set_vocab(&vocab);
  const auto best = trainer.fit(cfg.out_dir);

  std::cout << "training complete, best checkpoint: " << best << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& vocab_path,
              const std::string& input_path, int beam, float alpha,
              int max_len, const std::string& route,
              const std::string& feature_path, const std::string& lexicon_path,
              const std::string& ablation_name) {
  auto vocab = Vocab::load(vocab_path);
  Model model = Model::load_checkpoint(ckpt_path);
  if (model.config().vocab_size != vocab.size())
    throw Error(ErrorKind::Usage,
                "vocab file size " + std::to_string(vocab.size()) +
                    " does not match checkpoint vocab_size " +
                    std::to_string(model.config().vocab_size));
  LexiconTagger tagger;
  if (!lexicon_path.empty()) tagger.load_tsv(lexicon_path);
  DecodeOptions opts;
  opts.beam = beam;
  opts.len_norm_alpha = alpha;
  opts.max_len = max_len;
  const Ablation ablation = ablation_from_string(ablation_name);

  std::vector<std::string> lines;
  if (input_path.empty() || input_path == "-")
    lines = read_lines(std::cin);
  else
    lines = read_lines_path(input_path);

  if (route == "paraphrase") {
    for (const auto& line : lines)
      std::cout << paraphrase(line, model, vocab, tagger, opts, ablation)
                << "\n";
  } else if (route == "caption") {
    if (feature_path.empty())
      throw Error(ErrorKind::Usage, "--route caption requires --feature");
    auto feature = load_feature(feature_path);
    for (const auto& line : lines) {
      auto hint = split_object_relation(tagger.tag(tokenize(line)), line);
      std::cout << caption(feature, hint, model, vocab, opts) << "\n";
    }
  } else {
    throw Error(ErrorKind::Usage, "--route must be paraphrase or caption");
  }
  return 0;
}

int cmd_eval(const std::string& sources_path, const std::string& candidates_path,
             const std::string& out_path,
             const std::vector<std::string>& externals) {
  const auto sources = read_lines_path(sources_path);
  const auto candidates = read_lines_path(candidates_path);
  if (sources.size() != candidates.size())
    throw Error(ErrorKind::Data,
                "line count mismatch: " + std::to_string(sources.size()) +
                    " sources vs " + std::to_string(candidates.size()) +
                    " candidates");

  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  std::vector<TokenSeq> cand_tokens;
  for (size_t i = 0; i < sources.size(); ++i) {
    pairs.emplace_back(tokenize(sources[i]), tokenize(candidates[i]));
    cand_tokens.push_back(pairs.back().second);
  }

  json report;
  report["self_bleu"] = self_bleu(pairs);
  report["distinct_1"] = distinct_n(cand_tokens, 1);
  report["distinct_2"] = distinct_n(cand_tokens, 2);
  for (const auto& spec : externals) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::Usage, "--external expects name=path");
    const std::string name = spec.substr(0, eq);
    std::ifstream in(spec.substr(eq + 1));
    if (!in)
      throw Error(ErrorKind::Data,
                  "cannot open external score file " + spec.substr(eq + 1));
    double value;
    if (!(in >> value))
      throw Error(ErrorKind::Data, "external score file for '" + name +
                                       "' does not start with a number");
    report["external"][name] = value;
  }

  if (out_path.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    out << report.dump(2) << "\n";
  }
  return 0;
}

int cmd_inspect_mask(int l_i, int l_o, int l_r) {
  auto mask = build_partial_mask(l_i, l_o, l_r);
  const int n = l_i + l_o + l_r;
  auto ruler = [&](std::ostream& out) {
    out << "   ";
    for (int k = 0; k < n; ++k)
      out << (k < l_i ? 'I' : k < l_i + l_o ? 'O' : 'R') << ' ';
    out << "\n";
  };
  ruler(std::cout);
  int ones = 0;
  for (int q = 0; q < n; ++q) {
    std::cout << (q < l_i ? 'I' : q < l_i + l_o ? 'O' : 'R') << "  ";
    for (int k = 0; k < n; ++k) {
      const int v = mask[static_cast<size_t>(q) * n + k] != 0.0f ? 1 : 0;
      ones += v;
      std::cout << v << ' ';
    }
    std::cout << "\n";
  }
  std::cout << ones << " allowed pairs of " << n * n << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef _OPENMP
  if (const char* threads = std::getenv("VIPG_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) omp_set_num_threads(n);
  }
#endif

  CLI::App app{"visual-information-guided zero-shot paraphrase generation"};
  app.require_subcommand(1);

  // preprocess
  std::string manifest, out_dir, captions = "all", lexicon, tags;
  uint64_t pp_seed = 0;
  int min_freq = 1;
  bool pretagged = false;
  auto* pp = app.add_subcommand("preprocess",
                                "tokenize, tag, and split a caption manifest");
  pp->add_option("--manifest", manifest)->required();
  pp->add_option("--out", out_dir)->required();
  pp->add_option("--captions", captions)->check(CLI::IsMember({"one", "all"}));
  pp->add_option("--seed", pp_seed);
  pp->add_option("--min-freq", min_freq);
  pp->add_option("--lexicon", lexicon);
  pp->add_flag("--pretagged", pretagged);
  pp->add_option("--tags", tags);

  // synth-data
  std::string synth_out, synth_spec;
  int synth_n = 32;
  uint64_t synth_seed = 7;
  auto* sd = app.add_subcommand("synth-data",
                                "generate a deterministic synthetic corpus");
  sd->add_option("--out", synth_out)->required();
  sd->add_option("--n", synth_n);
  sd->add_option("--seed", synth_seed);
  sd->add_option("--spec", synth_spec);

  // train
  std::string config_path, ablation_flag;
  double lambda_flag = -1.0;
  int64_t seed_flag = -1, steps_flag = -1, batch_flag = -1;
  auto* tr = app.add_subcommand("train", "train from a run config");
  tr->add_option("--config", config_path)->required();
  tr->add_option("--seed", seed_flag);
  tr->add_option("--lambda-kl", lambda_flag);
  tr->add_option("--ablation", ablation_flag);
  tr->add_option("--max-steps", steps_flag);
  tr->add_option("--batch-size", batch_flag);

  // infer
  std::string ckpt, vocab_path, input_path, route = "paraphrase", feature_path,
              infer_lexicon, infer_ablation = "full";
  int beam = 5, infer_max_len = 0;
  float alpha = 0.7f;
  auto* inf = app.add_subcommand("infer", "paraphrase (or caption) line by line");
  inf->add_option("--checkpoint", ckpt)->required();
  inf->add_option("--vocab", vocab_path)->required();
  inf->add_option("--input", input_path);
  inf->add_option("--beam", beam);
  inf->add_option("--alpha", alpha);
  inf->add_option("--max-len", infer_max_len);
  inf->add_option("--route", route)
      ->check(CLI::IsMember({"paraphrase", "caption"}));
  inf->add_option("--feature", feature_path);
  inf->add_option("--lexicon", infer_lexicon);
  inf->add_option("--ablation", infer_ablation);

  // eval
  std::string sources, candidates, report_out;
  std::vector<std::string> externals;
  auto* ev = app.add_subcommand("eval", "diversity metrics report");
  ev->add_option("--sources", sources)->required();
  ev->add_option("--candidates", candidates)->required();
  ev->add_option("--out", report_out);
  ev->add_option("--external", externals);

  // inspect-mask
  int l_i = 0, l_o = 0, l_r = 0;
  auto* im = app.add_subcommand("inspect-mask",
                                "print the partial attention mask grid");
  im->add_option("l_I", l_i)->required();
  im->add_option("l_O", l_o)->required();
  im->add_option("l_R", l_r)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (pp->parsed())
      return cmd_preprocess(manifest, out_dir, captions, pp_seed, min_freq,
                            lexicon, pretagged, tags);
    if (sd->parsed())
      return cmd_synth_data(synth_out, synth_n, synth_seed, synth_spec);
    if (tr->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (seed_flag >= 0) cfg.train.seed = static_cast<uint64_t>(seed_flag);
      if (lambda_flag >= 0.0)
        cfg.model.lambda_kl = static_cast<float>(lambda_flag);
      if (!ablation_flag.empty())
        cfg.train.ablation = ablation_from_string(ablation_flag);
      if (steps_flag >= 0) cfg.train.max_steps = static_cast<int>(steps_flag);
      if (batch_flag >= 0) cfg.train.batch_size = static_cast<int>(batch_flag);
      return cmd_train(std::move(cfg));
    }
    if (inf->parsed())
      return cmd_infer(ckpt, vocab_path, input_path, beam, alpha,
                       infer_max_len, route, feature_path, infer_lexicon,
                       infer_ablation);
    if (ev->parsed()) return cmd_eval(sources, candidates, report_out, externals);
    if (im->parsed()) return cmd_inspect_mask(l_i, l_o, l_r);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
