#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "docaug/checkpoint.hpp"
#include "docaug/config.hpp"
#include "docaug/corpus.hpp"
#include "docaug/hash.hpp"
#include "docaug/metrics.hpp"
#include "docaug/pipeline.hpp"
#include "docaug/synth.hpp"

using namespace docaug;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed, threads, unit, mode, direction, m, beam, beta, ngram;
  bool drop_gold = false;
  bool verify = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Run configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a setting: section.key=value");
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--threads", c.threads, "Worker threads");
  cmd->add_option("--unit", c.unit, "sentence|document");
  cmd->add_option("--mode", c.mode, "posterior|prior");
  cmd->add_option("--direction", c.direction, "target|source|both");
  cmd->add_option("--m", c.m, "Generated samples per instance");
  cmd->add_option("--beam", c.beam, "Beam size");
  cmd->add_option("--beta", c.beta, "Observed-ratio prior a,b");
  cmd->add_option("--ngram", c.ngram, "Span length range lo,hi");
  cmd->add_flag("--drop-gold", c.drop_gold, "Train MT on generated pairs only");
  cmd->add_flag("--verify", c.verify, "Re-hash inputs and refuse to run on provenance mismatch");
}

struct Context {
  RunConfig config;
  Settings settings;
  std::string config_hash;
  bool verify = false;
};

Context resolve(const Common& c) {
  Context ctx;
  if (!c.config_path.empty()) ctx.config.load(c.config_path);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects section.key=value, got '" + o + "'");
    ctx.config.set(o.substr(0, eq), o.substr(eq + 1));
  }
  auto flag = [&](const std::string& value, const char* key) {
    if (!value.empty()) ctx.config.set(key, value);
  };
  flag(c.seed, "run.seed");
  flag(c.threads, "run.threads");
  flag(c.unit, "data.unit");
  flag(c.mode, "augment.mode");
  flag(c.direction, "augment.direction");
  flag(c.m, "augment.m");
  flag(c.beam, "augment.beam");
  flag(c.beta, "augment.beta");
  flag(c.ngram, "augment.ngram");
  if (c.drop_gold) ctx.config.set("augment.drop_gold", "true");
  ctx.settings = ctx.config.resolve();
  ctx.config_hash = ctx.config.sha256();
  ctx.verify = c.verify;
  return ctx;
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

// Sidecar provenance for artifacts whose own format has no header.
void write_manifest(const std::string& artifact, const Context& ctx, const ordered_json& inputs) {
  ordered_json j;
  j["artifact"] = std::filesystem::path(artifact).filename().string();
  j["sha256"] = sha256_file(artifact);
  j["seed"] = ctx.settings.seed;
  j["config_sha256"] = ctx.config_hash;
  j["inputs"] = inputs;
  write_file(artifact + ".meta.json", j.dump(2) + "\n");
}

void check_hash(const std::string& what, const std::string& recorded, const std::string& actual) {
  if (!recorded.empty() && recorded != actual)
    throw ValidationError(what + " hash mismatch: recorded " + recorded + ", found " + actual);
}

ModelConfig model_config(const Context& ctx, const Vocabulary& vocab) {
  ModelConfig m = ctx.settings.model;
  m.src_vocab = m.tgt_vocab = static_cast<int>(vocab.size());
  return m;
}

void progress(const char* what, const EpochStats& s) {
  std::cerr << what << " epoch " << s.epoch << " train " << s.train_loss << " dev " << s.dev_nll << " lr "
            << s.learning_rate << std::endl;
}

std::vector<ParallelInstance> instances_of(const std::string& path, const Vocabulary& vocab, const Context& ctx) {
  InstanceSet set = make_instances(load_corpus(path), ctx.settings.unit, vocab, vocab, ctx.settings.max_length);
  for (const auto& s : set.skipped)
    log("warning: skipped " + s.instance_id + " (" + std::to_string(s.source_length) + "/" +
        std::to_string(s.target_length) + " tokens exceeds max length)");
  if (!set.skipped.empty()) log(std::to_string(set.skipped.size()) + " instance(s) skipped in " + path);
  return set.instances;
}

LoadedCheckpoint load_model(const std::string& path, const std::string& vocab_path, const Context& ctx) {
  LoadedCheckpoint ck = load_checkpoint(path);
  check_hash("vocabulary of " + path, ck.meta.src_vocab_sha256, sha256_file(vocab_path));
  if (ctx.verify) check_hash("config of " + path, ck.meta.config_sha256, ctx.config_hash);
  return ck;
}

// ---- commands ----

int cmd_make_synth(const Context& ctx, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  SynthCorpus corpus = make_synth(ctx.settings.synth);
  const std::filesystem::path dir(out_dir);
  save_corpus((dir / "train.jsonl").string(), corpus.train);
  save_corpus((dir / "dev.jsonl").string(), corpus.dev);
  save_corpus((dir / "test.jsonl").string(), corpus.test);
  save_multiref((dir / "test.multiref.jsonl").string(), corpus.test_multiref);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "test.multiref.jsonl"})
    write_manifest((dir / f).string(), ctx, ordered_json::object());
  log("wrote " + std::to_string(corpus.train.size()) + " train, " + std::to_string(corpus.dev.size()) + " dev, " +
      std::to_string(corpus.test.size()) + " test documents to " + out_dir);
  return 0;
}

int cmd_build_vocab(const Context& ctx, const std::string& corpus_path, const std::string& out, const std::string& side) {
  VocabSide s = side == "src" ? VocabSide::src : side == "tgt" ? VocabSide::tgt : VocabSide::joint;
  if (side != "src" && side != "tgt" && side != "joint") throw ValidationError("unknown side '" + side + "'");
  Vocabulary vocab = build_vocab(load_corpus(corpus_path), s, ctx.settings.min_freq);
  vocab.save(out);
  write_manifest(out, ctx, {{"corpus", corpus_path}, {"corpus_sha256", sha256_file(corpus_path)}});
  log("vocabulary of " + std::to_string(vocab.size()) + " entries written to " + out);
  return 0;
}

int cmd_train_da(const Context& ctx, const std::string& corpus_path, const std::string& dev_path,
                 const std::string& vocab_path, const std::string& out, bool reverse) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  auto train = instances_of(corpus_path, vocab, ctx);
  auto dev = dev_path.empty() ? std::vector<ParallelInstance>{} : instances_of(dev_path, vocab, ctx);
  LatentSide side = LatentSide::target;
  if (reverse) {
    for (auto& i : train) i = swap_roles(i);
    for (auto& i : dev) i = swap_roles(i);
    side = LatentSide::source;
  }
  const AugmentConfig& a = ctx.settings.augment;
  const int replicas = a.mode == AugmentMode::prior ? 1 : ctx.settings.replicas;
  auto records = build_da_training_set(train, a, replicas, side);
  auto dev_records = build_da_training_set(dev, a, 1, side);
  log("DA training on " + std::to_string(records.size()) + " records (" + to_string(a.mode) + ")");
  TrainResult result =
      train_da(records, dev_records, model_config(ctx, vocab), ctx.settings.train,
               [](const EpochStats& s) { progress("train-da", s); });
  CheckpointMeta meta;
  meta.seed = ctx.settings.seed;
  meta.src_vocab_sha256 = meta.tgt_vocab_sha256 = sha256_file(vocab_path);
  meta.config_sha256 = ctx.config_hash;
  meta.extra["mode"] = to_string(a.mode);
  meta.extra["direction"] = reverse ? "source" : "target";
  meta.extra["replicas"] = replicas;
  meta.extra["corpus_sha256"] = sha256_file(corpus_path);
  meta.extra["best_epoch"] = result.best_epoch;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& s : result.curve) curve.push_back({s.epoch, s.train_loss, s.dev_nll});
  meta.extra["curve"] = curve;
  save_checkpoint(out, result.params, meta);
  log("DA checkpoint written to " + out + " (best epoch " + std::to_string(result.best_epoch) + ")");
  return 0;
}

int cmd_augment(const Context& ctx, const std::string& corpus_path, const std::string& vocab_path,
                const std::string& da_path, const std::string& reverse_path, const std::string& out) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  auto instances = instances_of(corpus_path, vocab, ctx);
  AugmentConfig a = ctx.settings.augment;
  AugmentOptions opts;
  opts.threads = ctx.settings.threads;
  opts.resample_latent = ctx.settings.resample_latent;

  auto load_da = [&](const std::string& path, const char* expected_direction) {
    if (path.empty()) throw ValidationError(std::string("direction needs a ") + expected_direction + "-side DA model");
    LoadedCheckpoint ck = load_model(path, vocab_path, ctx);
    if (ck.params.role != Role::da) throw ValidationError(path + " is not a DA checkpoint");
    const std::string dir = ck.meta.extra.value("direction", "target");
    if (dir != expected_direction)
      throw ValidationError(path + " was trained for direction '" + dir + "', expected '" + expected_direction + "'");
    const std::string mode = ck.meta.extra.value("mode", "posterior");
    if (mode != to_string(a.mode))
      throw ValidationError(path + " was trained in " + mode + " mode but augmentation runs in " + to_string(a.mode));
    if (ctx.verify) check_hash("training corpus of " + path, ck.meta.extra.value("corpus_sha256", ""),
                               sha256_file(corpus_path));
    return ck;
  };

  AugmentedCorpus corpus;
  std::string da_hash;
  if (a.direction == Direction::target) {
    auto da = load_da(da_path, "target");
    corpus = target_augment(instances, da.params, a, opts);
    da_hash = sha256_file(da_path);
  } else if (a.direction == Direction::source) {
    const std::string& path = reverse_path.empty() ? da_path : reverse_path;
    auto rev = load_da(path, "source");
    corpus = source_augment(instances, rev.params, a, opts);
    da_hash = sha256_file(path);
  } else {
    auto da = load_da(da_path, "target");
    auto rev = load_da(reverse_path, "source");
    corpus = both_augment(instances, da.params, rev.params, a, opts);
    da_hash = sha256_file(da_path) + "," + sha256_file(reverse_path);
  }
  corpus.meta.da_checkpoint_sha256 = da_hash;
  corpus.meta.config_sha256 = ctx.config_hash;
  validate_augmented(corpus, instances);
  std::size_t unfinished = 0;
  for (const auto& p : corpus.pairs) unfinished += p.unfinished ? 1 : 0;
  if (unfinished) log("warning: " + std::to_string(unfinished) + " generation(s) hit the length limit");
  save_augmented(out, corpus, vocab);
  log("wrote " + std::to_string(corpus.pairs.size()) + " pairs to " + out);
  return 0;
}

int cmd_train_mt(const Context& ctx, const std::string& aug_path, const std::string& dev_path,
                 const std::string& vocab_path, const std::string& out) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  AugmentedCorpus corpus = load_augmented(aug_path, vocab);
  if (ctx.verify) check_hash("config of " + aug_path, corpus.meta.config_sha256, ctx.config_hash);
  auto dev = dev_path.empty() ? std::vector<ParallelInstance>{} : instances_of(dev_path, vocab, ctx);
  TrainResult result = train_mt(corpus, dev, model_config(ctx, vocab), ctx.settings.train, ctx.settings.drop_gold,
                                [](const EpochStats& s) { progress("train-mt", s); });
  CheckpointMeta meta;
  meta.seed = ctx.settings.seed;
  meta.src_vocab_sha256 = meta.tgt_vocab_sha256 = sha256_file(vocab_path);
  meta.config_sha256 = ctx.config_hash;
  meta.extra["augmented_sha256"] = sha256_file(aug_path);
  meta.extra["drop_gold"] = ctx.settings.drop_gold;
  meta.extra["best_epoch"] = result.best_epoch;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& s : result.curve) curve.push_back({s.epoch, s.train_loss, s.dev_nll});
  meta.extra["curve"] = curve;
  save_checkpoint(out, result.params, meta);
  log("MT checkpoint written to " + out + " (best epoch " + std::to_string(result.best_epoch) + ")");
  return 0;
}

// Hypothesis files share the corpus layout but may contain empty sentences.
std::vector<std::vector<Sentence>> load_hyp_docs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<std::vector<Sentence>> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      std::vector<Sentence> doc;
      for (const auto& s : j.at("tgt")) doc.push_back(tokenize(s.get<std::string>()));
      docs.push_back(std::move(doc));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return docs;
}

// Splits a generated document into exactly n sentences: extra separators are
// merged into the last sentence and missing sentences are left empty.
std::vector<Sentence> align_sentences(const Sentence& tokens, std::size_t n) {
  std::vector<Sentence> out(1);
  for (const auto& t : tokens) {
    if (t == Vocabulary::special_surface(Vocabulary::kSep) && out.size() < n) {
      out.emplace_back();
    } else if (t != Vocabulary::special_surface(Vocabulary::kSep)) {
      out.back().push_back(t);
    }
  }
  out.resize(n);
  return out;
}

int cmd_evaluate(const Context& ctx, const std::string& ref_path, const std::string& hyp_path,
                 const std::string& model_path, const std::string& vocab_path, const std::string& write_hyp,
                 const std::string& aug_path, const std::string& out) {
  MetricReport report;
  ordered_json inputs;
  if (!ref_path.empty()) {
    auto refs = load_corpus(ref_path);
    inputs["ref_sha256"] = sha256_file(ref_path);
    std::vector<std::vector<Sentence>> hyp_docs;
    if (!model_path.empty()) {
      if (vocab_path.empty()) throw ValidationError("--model needs --vocab");
      Vocabulary vocab = Vocabulary::load(vocab_path);
      LoadedCheckpoint ck = load_model(model_path, vocab_path, ctx);
      inputs["model_sha256"] = sha256_file(model_path);
      std::vector<ParallelInstance> instances;
      for (const auto& inst :
           make_instances(refs, ctx.settings.unit, vocab, vocab, std::numeric_limits<std::size_t>::max()).instances)
        instances.push_back(inst);
      auto hyps = translate(ck.params, instances, ctx.settings.augment.beam_size, ctx.settings.threads);
      std::size_t k = 0;
      for (const auto& doc : refs) {
        std::vector<Sentence> hd;
        if (ctx.settings.unit == Unit::sentence) {
          for (std::size_t s = 0; s < doc.tgt_sentences.size(); ++s) hd.push_back(vocab.decode(hyps[k++].tokens));
        } else {
          hd = align_sentences(vocab.decode(hyps[k++].tokens), doc.tgt_sentences.size());
        }
        hyp_docs.push_back(std::move(hd));
      }
      if (!write_hyp.empty()) {
        std::string text;
        for (std::size_t d = 0; d < refs.size(); ++d) {
          ordered_json j;
          j["doc_id"] = refs[d].doc_id;
          j["src"] = ordered_json::array();
          for (const auto& s : refs[d].src_sentences) j["src"].push_back(detokenize(s));
          j["tgt"] = ordered_json::array();
          for (const auto& s : hyp_docs[d]) j["tgt"].push_back(detokenize(s));
          text += j.dump() + "\n";
        }
        write_file(write_hyp, text);
      }
    } else if (!hyp_path.empty()) {
      hyp_docs = load_hyp_docs(hyp_path);
      inputs["hyp_sha256"] = sha256_file(hyp_path);
    } else {
      throw ValidationError("evaluate needs --hyp or --model together with --ref");
    }
    if (hyp_docs.size() != refs.size())
      throw AlignmentError("<corpus>", "hypothesis file has " + std::to_string(hyp_docs.size()) + " documents, reference has " +
                                           std::to_string(refs.size()));
    std::vector<Sentence> hs, rs;
    std::vector<std::vector<Sentence>> ref_docs;
    for (std::size_t d = 0; d < refs.size(); ++d) {
      if (hyp_docs[d].size() != refs[d].tgt_sentences.size())
        throw AlignmentError(refs[d].doc_id, "hypothesis sentence count differs from reference");
      for (std::size_t s = 0; s < hyp_docs[d].size(); ++s) {
        hs.push_back(hyp_docs[d][s]);
        rs.push_back(refs[d].tgt_sentences[s]);
        report.tokens += static_cast<std::int64_t>(refs[d].tgt_sentences[s].size());
      }
      ref_docs.push_back(refs[d].tgt_sentences);
    }
    report.s_bleu = s_bleu(hs, rs);
    report.d_bleu = d_bleu(hyp_docs, ref_docs);
    report.sentences = static_cast<std::int64_t>(hs.size());
    report.documents = static_cast<std::int64_t>(refs.size());
  }
  if (!aug_path.empty()) {
    if (vocab_path.empty()) throw ValidationError("--augmented needs --vocab");
    Vocabulary vocab = Vocabulary::load(vocab_path);
    AugmentedCorpus aug = load_augmented(aug_path, vocab);
    inputs["augmented_sha256"] = sha256_file(aug_path);
    // Generated translations grouped by instance, scored against that instance's gold pair.
    std::vector<TokenSeq> gen, gold_refs;
    double dev_sum = 0.0, div_sum = 0.0;
    std::size_t div_count = 0;
    std::size_t i = 0;
    while (i < aug.pairs.size()) {
      const auto& gold = aug.pairs[i];
      std::vector<TokenSeq> group;
      std::size_t j = i + 1;
      for (; j < aug.pairs.size() && aug.pairs[j].origin == Origin::generated; ++j) {
        const auto& p = aug.pairs[j];
        const bool source_side = p.translation == gold.translation && p.source != gold.source;
        const TokenSeq& hyp = source_side ? p.source : p.translation;
        const TokenSeq& ref = source_side ? gold.source : gold.translation;
        dev_sum += deviation(std::span<const TokenId>(hyp), ref);
        gen.push_back(hyp);
        gold_refs.push_back(ref);
        group.push_back(hyp);
      }
      if (group.size() >= 2) {
        div_sum += diversity(group);
        ++div_count;
      }
      i = j;
    }
    if (!gen.empty()) {
      report.deviation_mean = dev_sum / static_cast<double>(gen.size());
      report.deviation_corpus = 100.0 - s_bleu(gen, gold_refs);
    }
    if (div_count) report.diversity = div_sum / static_cast<double>(div_count);
  }
  ordered_json j = ordered_json::parse(report.to_json().dump());
  j["seed"] = ctx.settings.seed;
  j["config_sha256"] = ctx.config_hash;
  j["inputs"] = inputs;
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return 0;
}

int cmd_ppl_eval(const Context& ctx, const std::string& da_path, const std::string& multiref_path,
                 const std::string& vocab_path, const std::string& out) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  LoadedCheckpoint ck = load_model(da_path, vocab_path, ctx);
  if (ck.params.role != Role::da) throw ValidationError(da_path + " is not a DA checkpoint");
  auto items = multiref_items(load_multiref(multiref_path), ctx.settings.unit, vocab, vocab);
  PplOptions opts;
  opts.samples = ctx.settings.ppl_samples;
  opts.mode = parse_mode(ck.meta.extra.value("mode", "posterior"));
  opts.latent = ctx.settings.augment;
  opts.threads = ctx.settings.threads;
  PplResult r = mc_posterior_ppl(ck.params, items, opts);
  ordered_json j;
  j["ppl"] = r.ppl;
  j["mode"] = to_string(opts.mode);
  j["samples"] = opts.mode == AugmentMode::prior ? 1 : opts.samples;
  j["tokens"] = r.tokens;
  j["evaluations"] = r.evaluations;
  j["seed"] = ctx.settings.seed;
  j["config_sha256"] = ctx.config_hash;
  j["inputs"] = {{"da_sha256", sha256_file(da_path)}, {"multiref_sha256", sha256_file(multiref_path)}};
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target-side data augmentation for document-level translation"};
  app.require_subcommand(1);
  Common common;
  std::string out, corpus, dev, vocab, da, reverse, augmented, ref, hyp, model, write_hyp, multiref, side = "joint";
  bool reverse_flag = false;

  auto* synth = app.add_subcommand("make-synth", "Write a synthetic synonym corpus");
  add_common(synth, common);
  synth->add_option("--out", out, "Output directory")->required();

  auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from a corpus");
  add_common(bv, common);
  bv->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
  bv->add_option("--out", out)->required();
  bv->add_option("--side", side, "joint|src|tgt");

  auto* tda = app.add_subcommand("train-da", "Train a data-augmentation model");
  add_common(tda, common);
  tda->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
  tda->add_option("--dev", dev)->check(CLI::ExistingFile);
  tda->add_option("--vocab", vocab)->required()->check(CLI::ExistingFile);
  tda->add_option("--out", out)->required();
  tda->add_flag("--reverse", reverse_flag, "Swap roles: rewrite sources conditioned on targets");

  auto* aug = app.add_subcommand("augment", "Generate an augmented corpus");
  add_common(aug, common);
  aug->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
  aug->add_option("--vocab", vocab)->required()->check(CLI::ExistingFile);
  aug->add_option("--da", da, "Target-side DA checkpoint")->check(CLI::ExistingFile);
  aug->add_option("--da-reverse", reverse, "Source-side DA checkpoint")->check(CLI::ExistingFile);
  aug->add_option("--out", out)->required();

  auto* tmt = app.add_subcommand("train-mt", "Train a translation model on an augmented corpus");
  add_common(tmt, common);
  tmt->add_option("--augmented", augmented)->required()->check(CLI::ExistingFile);
  tmt->add_option("--dev", dev)->check(CLI::ExistingFile);
  tmt->add_option("--vocab", vocab)->required()->check(CLI::ExistingFile);
  tmt->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("evaluate", "Score translations or augmented data");
  add_common(ev, common);
  ev->add_option("--ref", ref, "Reference corpus")->check(CLI::ExistingFile);
  ev->add_option("--hyp", hyp, "Hypothesis file in corpus layout")->check(CLI::ExistingFile);
  ev->add_option("--model", model, "MT checkpoint to decode --ref sources with")->check(CLI::ExistingFile);
  ev->add_option("--vocab", vocab)->check(CLI::ExistingFile);
  ev->add_option("--write-hyp", write_hyp, "Write decoded hypotheses here");
  ev->add_option("--augmented", augmented, "Augmented corpus for deviation and diversity")->check(CLI::ExistingFile);
  ev->add_option("--out", out, "Report path (default stdout)");

  auto* ppl = app.add_subcommand("ppl-eval", "Monte-Carlo perplexity on multi-reference data");
  add_common(ppl, common);
  ppl->add_option("--da", da)->required()->check(CLI::ExistingFile);
  ppl->add_option("--multiref", multiref)->required()->check(CLI::ExistingFile);
  ppl->add_option("--vocab", vocab)->required()->check(CLI::ExistingFile);
  ppl->add_option("--out", out, "Report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    Context ctx = resolve(common);
    if (synth->parsed()) return cmd_make_synth(ctx, out);
    if (bv->parsed()) return cmd_build_vocab(ctx, corpus, out, side);
    if (tda->parsed()) return cmd_train_da(ctx, corpus, dev, vocab, out, reverse_flag);
    if (aug->parsed()) return cmd_augment(ctx, corpus, vocab, da, reverse, out);
    if (tmt->parsed()) return cmd_train_mt(ctx, augmented, dev, vocab, out);
    if (ev->parsed()) return cmd_evaluate(ctx, ref, hyp, model, vocab, write_hyp, augmented, out);
    if (ppl->parsed()) return cmd_ppl_eval(ctx, da, multiref, vocab, out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const RuntimeFault& e) {
    std::cerr << "fault: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
