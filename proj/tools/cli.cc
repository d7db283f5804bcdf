#include "cli.h"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "experiment.h"
#include "nmt/bpe.h"
#include "nmt/corpus.h"
#include "nmt/decode.h"
#include "nmt/error.h"
#include "nmt/metrics.h"
#include "nmt/text.h"
#include "nmt/train.h"

namespace nmt::cli {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> read_input(const std::string& path) {
  if (!path.empty() && path != "-") return read_lines(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_output(const std::vector<std::string>& lines, const std::string& path, std::ostream& out) {
  if (!path.empty() && path != "-") {
    write_lines(lines, path);
    return;
  }
  for (const auto& l : lines) out << l << '\n';
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
}

// ---- prepare ---------------------------------------------------------------

struct PreparedLanguage {
  LanguageCorpus raw;
  LanguageCorpus segmented;
};

const PreparedLanguage& find_language(const std::vector<PreparedLanguage>& langs, const std::string& code) {
  for (const auto& l : langs)
    if (l.raw.code == code) return l;
  throw ConfigError("unknown language '" + code + "'");
}

void prepare(const ExperimentConfig& config, std::ostream& err) {
  const PreparedLayout layout = prepared_layout(config);
  make_dirs(layout.dir);
  auto split_of = [&](const std::string& id) { return assign_split(id, config.dev_fraction, config.test_fraction); };

  std::vector<PreparedLanguage> langs;
  std::vector<LanguageBlock> blocks;
  for (const LanguageFiles& files : config.languages) {
    PreparedLanguage lang{{files.code, {}}, {files.code, {}}};
    std::vector<Translation> tokenized;
    std::vector<std::string> train_lines;
    for (const TranslationFile& f : files.translations) {
      lang.raw.translations.push_back({f.id, load_verse_corpus(f.path, f.id)});
      Translation t = lang.raw.translations.back();
      for (Verse& v : t.verses) {
        v.text = tokenize_line(v.text);
        if (split_of(v.verse_id) == Split::kTrain) train_lines.push_back(v.text);
      }
      tokenized.push_back(std::move(t));
    }
    const MergeTable table = learn_merges(train_lines, config.bpe_merges, files.code);
    save_merges(table, layout.codes(files.code));
    const Segmenter segmenter(table);
    LanguageBlock block{files.code, {}};
    for (Translation& t : tokenized) {
      for (Verse& v : t.verses) {
        v.text = join(segmenter.segment(v.text));
        if (split_of(v.verse_id) == Split::kTrain) block.segmented_lines.push_back(v.text);
      }
      lang.segmented.translations.push_back(std::move(t));
    }
    err << files.code << ": " << table.merges.size() << " merges from " << train_lines.size() << " training lines\n";
    blocks.push_back(std::move(block));
    langs.push_back(std::move(lang));
  }
  const Vocabulary vocab = build_vocabulary(blocks);
  vocab.save(layout.vocab());

  TrainingSetConfig ts;
  ts.pivot = config.pivot;
  ts.hubs = config.hubs;
  ts.identity_language = config.identity_language;
  ts.paraphrase = config.paraphrase;
  for (const auto& l : langs) ts.languages.push_back(l.segmented);
  ts.include = [&](const std::string& id) { return split_of(id) == Split::kTrain; };
  std::vector<std::string> src, tgt;
  for (const ParallelPair& p : build_training_set(ts)) {
    src.push_back(flag_token(p.tgt_lang) + " " + p.src_text);
    tgt.push_back(p.tgt_text);
  }
  write_lines(src, layout.train_src());
  write_lines(tgt, layout.train_tgt());

  // Held-out files for the validation direction: first source translation
  // against the first target translation (the second one when both sides are
  // the same language). dev.src is ready for the model, dev.ref is tokenized
  // and the test files hold raw text.
  const PreparedLanguage& vs = find_language(langs, config.valid_source);
  const PreparedLanguage& vt = find_language(langs, config.valid_target);
  const std::size_t ti = config.valid_source == config.valid_target ? 1 : 0;
  if (vt.raw.translations.size() <= ti)
    throw ConfigError("validation within '" + vt.raw.code + "' needs two translations");
  std::map<std::string, std::string> segmented_source;
  for (const Verse& v : vs.segmented.translations[0].verses) segmented_source.emplace(v.verse_id, v.text);
  std::vector<std::string> dev_src, dev_ref, test_src, test_ref;
  for (const ParallelPair& p : align_by_verse(vs.raw.translations[0].verses, vt.raw.translations[ti].verses)) {
    if (p.src_text.empty() || p.tgt_text.empty()) continue;
    const Split split = split_of(p.verse_id);
    if (split == Split::kDev) {
      dev_src.push_back(flag_token(config.valid_target) + " " + segmented_source.at(p.verse_id));
      dev_ref.push_back(tokenize_line(p.tgt_text));
    } else if (split == Split::kTest) {
      test_src.push_back(p.src_text);
      test_ref.push_back(p.tgt_text);
    }
  }
  if (dev_src.empty()) throw DomainError("the dev split is empty; raise split.dev or add verses");
  write_lines(dev_src, layout.dev_src());
  write_lines(dev_ref, layout.dev_ref());
  write_lines(test_src, layout.test_src());
  write_lines(test_ref, layout.test_ref());

  const PreparedLanguage& pivot = langs.front();
  if (pivot.raw.translations.size() > 1) {
    auto held_out = [&](const std::vector<Verse>& verses) {
      std::vector<Verse> out;
      for (const Verse& v : verses)
        if (split_of(v.verse_id) == Split::kTest) out.push_back(v);
      return out;
    };
    std::vector<std::vector<Verse>> refs;
    for (std::size_t i = 1; i < pivot.raw.translations.size(); ++i)
      refs.push_back(held_out(pivot.raw.translations[i].verses));
    save_multi_ref(build_verse_multiref(held_out(pivot.raw.translations[0].verses), refs), layout.paraphrase_test());
  }
  err << "vocabulary " << vocab.size() << ", training pairs " << src.size() << ", dev " << dev_src.size()
      << ", test " << test_src.size() << " -> " << layout.dir.string() << "\n";
}

// ---- train -----------------------------------------------------------------

TrainingPair encode_pair(const Vocabulary& vocab, const std::string& src, const std::string& tgt) {
  TrainingPair p{vocab.encode_line(src), vocab.encode_line(tgt)};
  p.target.push_back(kEosId);
  return p;
}

std::string decode_line(const Vocabulary& vocab, const TokenIds& ids) { return unsegment(vocab.decode(ids)); }

void train(const ExperimentConfig& config, bool verbose, std::ostream& err) {
  const PreparedLayout layout = prepared_layout(config);
  const Vocabulary vocab = Vocabulary::load(layout.vocab());
  const auto src = read_lines(layout.train_src());
  const auto tgt = read_lines(layout.train_tgt());
  if (src.size() != tgt.size())
    throw DomainError(layout.train_src().string() + " and " + layout.train_tgt().string() + " differ in length");
  if (src.empty()) throw DomainError("no training pairs in " + layout.train_src().string());
  std::vector<TrainingPair> data;
  for (std::size_t i = 0; i < src.size(); ++i) data.push_back(encode_pair(vocab, src[i], tgt[i]));

  std::vector<TokenIds> dev_src;
  for (const auto& line : read_lines(layout.dev_src())) dev_src.push_back(vocab.encode_line(line));
  std::vector<std::vector<std::string>> dev_refs;
  for (const auto& line : read_lines(layout.dev_ref())) dev_refs.push_back({eval_normalize(line)});
  if (dev_src.size() != dev_refs.size()) throw DomainError("dev source and reference files differ in length");

  ModelConfig model = config.model;
  model.vocab_size = vocab.size();
  TrainConfig tc = config.training;
  tc.verbose = verbose;
  const std::size_t beam = config.valid_beam;
  Validator validator = [&](const ParameterSet<float>& params) {
    std::vector<TokenIds> outputs;
    if (beam == 1) {
      outputs = greedy_decode(params, model, dev_src);
    } else {
      for (const auto& s : dev_src) outputs.push_back(beam_search(params, model, s, beam).tokens);
    }
    std::vector<std::string> hyps;
    for (const auto& ids : outputs) hyps.push_back(eval_normalize(decode_line(vocab, ids)));
    return bleu(hyps, dev_refs);
  };
  const TrainResult result = train_loop(model, tc, data, validator);
  err << "steps " << result.steps << (result.early_stopped ? " (early stop)" : "") << ", best dev BLEU "
      << result.best_score << " -> " << (tc.output_dir / "best.ckpt").string() << "\n";
}

// ---- translate and score ---------------------------------------------------

struct SourceEncoder {
  const Vocabulary& vocab;
  std::optional<Segmenter> segmenter;
  TokenId flag;

  TokenIds operator()(const std::string& line) const {
    const std::string tokenized = tokenize_line(line);
    TokenIds ids{flag};
    const auto pieces = segmenter ? segmenter->segment(tokenized) : split_whitespace(tokenized);
    for (TokenId id : vocab.encode(pieces)) ids.push_back(id);
    return ids;
  }
};

std::optional<Segmenter> load_segmenter(const std::string& codes) {
  if (codes.empty()) return std::nullopt;
  return Segmenter(load_merges(codes));
}

TokenId target_flag(const Vocabulary& vocab, const std::string& lang) {
  const auto& langs = vocab.languages();
  if (std::find(langs.begin(), langs.end(), lang) == langs.end())
    throw DomainError("the vocabulary has no language '" + lang + "'");
  return vocab.flag_id(lang);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilingual NMT paraphrasing toolkit", args.empty() ? "nmtpara" : args[0]};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // prepare / train
  std::string config_path;
  bool verbose = false;
  auto* prep = app.add_subcommand("prepare", "Tokenize, learn BPE, build the vocabulary and write training files");
  prep->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  auto* tr = app.add_subcommand("train", "Train (or resume) the model of an experiment");
  tr->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
  tr->add_flag("--verbose", verbose, "Log every validation to stderr");

  // learn-bpe / apply-bpe / build-vocab
  std::vector<std::string> inputs;
  std::string input, output, codes, lang;
  std::size_t merges = 8000;
  auto* lb = app.add_subcommand("learn-bpe", "Learn BPE merges from raw text");
  lb->add_option("--input", inputs, "Text files, one sentence per line")->required()->check(CLI::ExistingFile);
  lb->add_option("--merges", merges, "Number of merge operations")->check(CLI::NonNegativeNumber);
  lb->add_option("--lang", lang, "Language code stored in the header");
  lb->add_option("--output", output, "Codes file")->required();
  auto* ab = app.add_subcommand("apply-bpe", "Tokenize and segment text with learned merges");
  ab->add_option("--codes", codes, "Codes file")->required()->check(CLI::ExistingFile);
  ab->add_option("--input", input, "Input text (default stdin)")->check(CLI::ExistingFile);
  ab->add_option("--output", output, "Output (default stdout)");
  std::vector<std::string> blocks;
  auto* bv = app.add_subcommand("build-vocab", "Build the joint vocabulary from segmented text");
  bv->add_option("--block", blocks, "LANG=FILE, repeated in vocabulary order (pivot first)")->required();
  bv->add_option("--output", output, "Vocabulary file")->required();

  // translate / score
  std::string model_path, vocab_path, src_codes, tgt_codes, to, src_path, tgt_path;
  std::size_t beam = 12, max_len = 0;
  bool tokenized = false;
  auto* tl = app.add_subcommand("translate", "Translate or paraphrase raw sentences");
  tl->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  tl->add_option("--vocab", vocab_path, "Vocabulary")->required()->check(CLI::ExistingFile);
  tl->add_option("--codes", src_codes, "Source-language codes (omit for word-level vocabularies)")
      ->check(CLI::ExistingFile);
  tl->add_option("--to", to, "Target language code")->required();
  tl->add_option("--input", input, "Input text (default stdin)")->check(CLI::ExistingFile);
  tl->add_option("--output", output, "Output (default stdout)");
  tl->add_option("--beam", beam, "Beam size; 1 is greedy")->check(CLI::PositiveNumber);
  tl->add_option("--max-len", max_len, "Output length limit (default 3 * source + 10)");
  tl->add_flag("--tokenized", tokenized, "Keep the output tokenized");
  auto* sc = app.add_subcommand("score", "Teacher-forced negative log-likelihood of target sentences");
  sc->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  sc->add_option("--vocab", vocab_path, "Vocabulary")->required()->check(CLI::ExistingFile);
  sc->add_option("--src-codes", src_codes, "Source-language codes")->check(CLI::ExistingFile);
  sc->add_option("--tgt-codes", tgt_codes, "Target-language codes")->check(CLI::ExistingFile);
  sc->add_option("--to", to, "Target language code")->required();
  sc->add_option("--src", src_path, "Source sentences")->required()->check(CLI::ExistingFile);
  sc->add_option("--tgt", tgt_path, "Target sentences")->required()->check(CLI::ExistingFile);
  sc->add_option("--output", output, "Score file (default stdout)");

  // evaluate
  std::string hyp_path, multi_path, scores_path, report_path, format = "tsv";
  std::vector<std::string> ref_paths;
  auto* ev = app.add_subcommand("evaluate", "BLEU, PINC, copy rate and perplexity of system output");
  ev->add_option("--hyp", hyp_path, "System output")->required()->check(CLI::ExistingFile);
  auto* ev_src = ev->add_option("--src", src_path, "Source sentences")->check(CLI::ExistingFile);
  auto* ev_refs = ev->add_option("--refs", ref_paths, "Reference files, parallel to the source")
                      ->check(CLI::ExistingFile);
  auto* ev_multi = ev->add_option("--multi-ref", multi_path, "Multi-reference test set (source and references)")
                       ->check(CLI::ExistingFile);
  ev_multi->excludes(ev_src)->excludes(ev_refs);
  ev->add_option("--scores", scores_path, "Score file from `score`")->check(CLI::ExistingFile);
  ev->add_option("--report", report_path, "Report file (default stdout)");
  ev->add_option("--format", format, "tsv or json")->check(CLI::IsMember({"tsv", "json"}));

  // testset
  std::string pairs_path, verses_path;
  std::vector<std::string> reference_verses;
  bool expand = false, dedup = false, multi = false;
  auto* ts = app.add_subcommand("testset", "Build paraphrase test sets");
  auto* ts_pairs = ts->add_option("--pairs", pairs_path, "Sentence pairs, `a<TAB>b` per line")
                       ->check(CLI::ExistingFile);
  auto* ts_verses = ts->add_option("--verses", verses_path, "Verse file whose text becomes the source")
                        ->check(CLI::ExistingFile);
  ts->add_option("--reference-verses", reference_verses, "Verse files providing the references")
      ->check(CLI::ExistingFile)
      ->needs(ts_verses);
  ts_pairs->excludes(ts_verses);
  ts->add_flag("--expand-contractions", expand, "Expand English contractions first");
  ts->add_flag("--dedup-punct", dedup, "Drop pairs that only differ in case or punctuation");
  ts->add_flag("--multi-ref", multi, "Group synonym sets into multi-reference entries");
  ts->add_option("--output", output, "Test set file")->required();

  std::vector<std::string> argv_rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(argv_rest.begin(), argv_rest.end());
  try {
    app.parse(argv_rest);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    if (args.size() > 1 && !args[1].empty() && args[1][0] != '-' && app.get_subcommands().empty()) {
      err << "unknown subcommand '" << args[1] << "'\n";
    } else {
      app.exit(e, out, err);
    }
    if (app.get_subcommands().empty()) err << app.help();
    return kExitUsage;
  }

  try {
    if (prep->parsed()) {
      prepare(load_experiment(config_path), err);
    } else if (tr->parsed()) {
      train(load_experiment(config_path), verbose, err);
    } else if (lb->parsed()) {
      std::vector<std::string> lines;
      for (const auto& path : inputs)
        for (const auto& l : read_lines(path)) lines.push_back(tokenize_line(l));
      const MergeTable table = learn_merges(lines, merges, lang);
      save_merges(table, output);
      err << table.merges.size() << " merges -> " << output << "\n";
    } else if (ab->parsed()) {
      const Segmenter segmenter(load_merges(codes));
      std::vector<std::string> lines;
      for (const auto& l : read_input(input)) lines.push_back(join(segmenter.segment(tokenize_line(l))));
      write_output(lines, output, out);
    } else if (bv->parsed()) {
      std::vector<LanguageBlock> lb_blocks;
      for (const auto& spec : blocks) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--block", "expected LANG=FILE: " + spec);
        LanguageBlock block{spec.substr(0, eq), read_lines(spec.substr(eq + 1))};
        if (!is_valid_language_code(block.language))
          throw ConfigError("invalid language code '" + block.language + "'");
        lb_blocks.push_back(std::move(block));
      }
      const Vocabulary vocab = build_vocabulary(lb_blocks);
      vocab.save(output);
      err << vocab.size() << " entries -> " << output << "\n";
    } else if (tl->parsed()) {
      const LoadedModel model = load_model(model_path);
      const Vocabulary vocab = Vocabulary::load(vocab_path);
      if (model.config.vocab_size != vocab.size())
        throw DomainError("model vocabulary size " + std::to_string(model.config.vocab_size) + " does not match " +
                          vocab_path);
      const SourceEncoder encode{vocab, load_segmenter(src_codes), target_flag(vocab, to)};
      const auto lines = read_input(input);
      std::vector<TokenIds> sources;
      for (const auto& l : lines) sources.push_back(encode(l));
      std::vector<TokenIds> outputs;
      if (beam == 1 && max_len == 0) {
        outputs = greedy_decode(model.params, model.config, sources);
      } else if (beam == 1) {
        for (const auto& s : sources) outputs.push_back(greedy_decode(model.params, model.config, s, max_len));
      } else {
        for (const auto& s : sources)
          outputs.push_back(beam_search(model.params, model.config, s, beam, max_len).tokens);
      }
      std::vector<std::string> result;
      for (const auto& ids : outputs) {
        const std::string text = decode_line(vocab, ids);
        result.push_back(tokenized ? text : detokenize(split_whitespace(text)));
      }
      write_output(result, output, out);
    } else if (sc->parsed()) {
      const LoadedModel model = load_model(model_path);
      const Vocabulary vocab = Vocabulary::load(vocab_path);
      if (model.config.vocab_size != vocab.size())
        throw DomainError("model vocabulary size does not match " + vocab_path);
      const SourceEncoder encode{vocab, load_segmenter(src_codes), target_flag(vocab, to)};
      const auto tgt_segmenter = load_segmenter(tgt_codes);
      const auto srcs = read_lines(src_path);
      const auto tgts = read_lines(tgt_path);
      if (srcs.size() != tgts.size()) throw DomainError("--src and --tgt differ in length");
      std::vector<TokenIds> s_ids, t_ids;
      for (std::size_t i = 0; i < srcs.size(); ++i) {
        s_ids.push_back(encode(srcs[i]));
        const std::string t = tokenize_line(tgts[i]);
        t_ids.push_back(vocab.encode(tgt_segmenter ? tgt_segmenter->segment(t) : split_whitespace(t)));
        t_ids.back().push_back(kEosId);
      }
      std::vector<ScoreLine> lines;
      for (const TargetScore& s : score_targets(model.params, model.config, s_ids, t_ids))
        lines.push_back({lines.size(), s.nll, s.tokens});
      if (output.empty() || output == "-") {
        for (const auto& l : lines) out << l.index << '\t' << l.nll << '\t' << l.tokens << '\n';
      } else {
        save_scores(lines, output);
      }
      if (!lines.empty()) err << "perplexity " << corpus_perplexity(lines) << "\n";
    } else if (ev->parsed()) {
      const auto hyps = read_lines(hyp_path);
      std::vector<std::string> sources;
      std::vector<std::vector<std::string>> refs;
      if (!multi_path.empty()) {
        for (const MultiRefEntry& e : load_multi_ref(multi_path).entries) {
          sources.push_back(e.source);
          refs.push_back(e.references);
        }
      } else {
        if (src_path.empty() || ref_paths.empty())
          throw CLI::ValidationError("evaluate", "give --src and --refs, or --multi-ref");
        sources = read_lines(src_path);
        refs.resize(sources.size());
        for (const auto& path : ref_paths) {
          const auto r = read_lines(path);
          if (r.size() != sources.size()) throw DomainError(path + ": line count differs from the source");
          for (std::size_t i = 0; i < r.size(); ++i) refs[i].push_back(r[i]);
        }
      }
      if (hyps.size() != sources.size())
        throw DomainError(hyp_path + ": " + std::to_string(hyps.size()) + " lines for " +
                          std::to_string(sources.size()) + " sources");
      std::vector<ScoreLine> scores;
      if (!scores_path.empty()) scores = load_scores(scores_path);
      const EvalReport report = make_report(sources, hyps, refs, scores_path.empty() ? nullptr : &scores);
      const std::string text = format == "json" ? report.to_json() : report.to_tsv();
      if (report_path.empty() || report_path == "-") {
        out << text;
      } else {
        std::ofstream f(report_path);
        if (!(f << text)) throw IoError(report_path, "cannot write report");
      }
    } else if (ts->parsed()) {
      if (!verses_path.empty()) {
        if (reference_verses.empty()) throw CLI::ValidationError("testset", "--verses needs --reference-verses");
        std::vector<std::vector<Verse>> refs;
        for (const auto& path : reference_verses) refs.push_back(load_verse_corpus(path, path));
        save_multi_ref(build_verse_multiref(load_verse_corpus(verses_path, verses_path), refs), output);
      } else {
        if (pairs_path.empty()) throw CLI::ValidationError("testset", "give --pairs or --verses");
        const auto [single, multiple] = build_paraphrase_testsets(load_pair_file(pairs_path), {expand, dedup});
        if (multi) {
          save_multi_ref(multiple, output);
        } else {
          save_single_ref(single, output);
        }
        err << (multi ? multiple.entries.size() : single.entries.size()) << " entries -> " << output << "\n";
      }
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitOk;
}

}  // namespace nmt::cli
