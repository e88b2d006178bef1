#include "docaug/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "docaug/hash.hpp"
#include "docaug/parallel.hpp"

namespace docaug {

std::string to_string(Origin origin) { return origin == Origin::gold ? "gold" : "da"; }

nlohmann::json AugmentMeta::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["M"] = num_samples;
  j["mode"] = to_string(mode);
  j["direction"] = to_string(direction);
  j["da_checkpoint_sha256"] = da_checkpoint_sha256;
  j["config_sha256"] = config_sha256;
  return j;
}

AugmentMeta AugmentMeta::from_json(const nlohmann::json& j) {
  AugmentMeta m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.num_samples = j.at("M").get<int>();
  m.mode = parse_mode(j.at("mode").get<std::string>());
  m.direction = parse_direction(j.at("direction").get<std::string>());
  m.da_checkpoint_sha256 = j.value("da_checkpoint_sha256", "");
  m.config_sha256 = j.value("config_sha256", "");
  return m;
}

Rng latent_rng(std::uint64_t seed, LatentSide side, std::size_t instance, int replica, bool fresh) {
  return make_rng(seed, fresh ? Stream::latent_fresh : Stream::latent,
                  {static_cast<std::uint64_t>(side), static_cast<std::uint64_t>(instance),
                   static_cast<std::uint64_t>(replica)});
}

std::vector<DaTrainingRecord> build_da_training_set(const std::vector<ParallelInstance>& instances,
                                                    const AugmentConfig& config, int replicas, LatentSide side) {
  config.validate();
  if (replicas < 1) throw ValidationError("replicas must be >= 1");
  std::vector<DaTrainingRecord> records;
  records.reserve(instances.size() * static_cast<std::size_t>(replicas));
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    for (int j = 1; j <= replicas; ++j) {
      DaTrainingRecord rec;
      if (config.mode == AugmentMode::prior) {
        rec.input = prior_input(inst.source, inst.src_group_tags);
      } else {
        Rng rng = latent_rng(config.seed, side, i, j);
        const double alpha = sample_observed_ratio(config, rng);
        LatentValue z = sample_latent(inst.target, alpha, config, rng);
        rec.input = render_extended_input(inst.source, inst.src_group_tags, z, inst.target, inst.tgt_group_tags);
      }
      rec.target = inst.target;
      rec.target_tags = inst.tgt_group_tags;
      rec.parent_instance_id = inst.instance_id;
      rec.replica = j;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

std::vector<Example> da_examples(const std::vector<DaTrainingRecord>& records) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.input.tokens, r.input.group_tags, r.target, r.target_tags});
  return out;
}

TrainResult train_da(const std::vector<DaTrainingRecord>& records, const std::vector<DaTrainingRecord>& dev,
                     const ModelConfig& model, const TrainConfig& train_config, const EpochCallback& on_epoch) {
  if (records.empty()) throw ValidationError("no DA training records");
  ModelParams params = make_model(model, Role::da, train_config.seed);
  TrainResult result = train(std::move(params), da_examples(records), da_examples(dev), train_config, on_epoch);
  result.params.role = Role::da;
  return result;
}

namespace {

void check_vocab(const ModelParams& params, const std::vector<ParallelInstance>& instances) {
  if (params.role != Role::da) throw ValidationError("augmentation needs a model with role da");
  const int limit = std::min(params.config.src_vocab, params.config.tgt_vocab);
  for (const auto& inst : instances) {
    for (TokenId t : inst.source)
      if (t < 0 || t >= params.config.src_vocab)
        throw ValidationError("instance '" + inst.instance_id + "' has token ids outside the DA vocabulary");
    for (TokenId t : inst.target)
      if (t < 0 || t >= limit)
        throw ValidationError("instance '" + inst.instance_id + "' has token ids outside the DA vocabulary");
  }
}

struct Generated {
  TokenSeq tokens;
  std::optional<LatentValue> latent;
  double score = 0.0;
  bool unfinished = false;
};

// M generations for one instance whose target side is rewritten.
std::vector<Generated> generate(const ParallelInstance& inst, std::size_t index, const ModelParams& da,
                                const AugmentConfig& config, const AugmentOptions& options, LatentSide side) {
  const auto m = static_cast<std::size_t>(config.num_samples);
  auto run = [&](const ExtendedInput& input) {
    std::vector<Hypothesis> hyps = beam_search(da, input, config.beam_size, options.max_len);
    Generated g;
    const Hypothesis& top = hyps.front();
    g.tokens = top.tokens;
    if (top.finished && !g.tokens.empty()) g.tokens.pop_back();
    g.score = top.score;
    g.unfinished = !top.finished;
    return g;
  };
  std::vector<Generated> out;
  out.reserve(m);
  if (config.mode == AugmentMode::prior) {
    // Identical input and a deterministic decoder: decode once.
    Generated g = run(prior_input(inst.source, inst.src_group_tags));
    g.latent = LatentValue{};
    out.assign(m, g);
    return out;
  }
  for (int j = 1; j <= config.num_samples; ++j) {
    Rng rng = latent_rng(config.seed, side, index, j, options.resample_latent);
    const double alpha = sample_observed_ratio(config, rng);
    LatentValue z = sample_latent(inst.target, alpha, config, rng);
    Generated g = run(render_extended_input(inst.source, inst.src_group_tags, z, inst.target, inst.tgt_group_tags));
    g.latent = std::move(z);
    out.push_back(std::move(g));
  }
  return out;
}

AugmentedPair gold_pair(const ParallelInstance& inst) {
  AugmentedPair p;
  p.instance_id = inst.instance_id;
  p.source = inst.source;
  p.translation = inst.target;
  p.origin = Origin::gold;
  return p;
}

AugmentedPair generated_pair(const ParallelInstance& inst, const Generated& g, bool source_side) {
  AugmentedPair p;
  p.instance_id = inst.instance_id;
  p.source = source_side ? g.tokens : inst.source;
  p.translation = source_side ? inst.target : g.tokens;
  p.origin = Origin::generated;
  p.alpha = g.latent ? g.latent->observed_ratio_requested : 0.0;
  p.spans = g.latent ? g.latent->spans : std::vector<Span>{};
  p.beam_score = g.score;
  p.unfinished = g.unfinished;
  return p;
}

AugmentedCorpus run_augment(const std::vector<ParallelInstance>& instances, const ModelParams* da,
                            const ModelParams* reverse_da, const AugmentConfig& config, const AugmentOptions& options,
                            Direction direction) {
  config.validate();
  if (da) check_vocab(*da, instances);
  std::vector<ParallelInstance> swapped;
  if (reverse_da) {
    swapped.reserve(instances.size());
    for (const auto& inst : instances) swapped.push_back(swap_roles(inst));
    check_vocab(*reverse_da, swapped);
  }
  std::vector<std::vector<AugmentedPair>> blocks(instances.size());
  parallel_for(instances.size(), options.threads, [&](std::size_t i) {
    auto& block = blocks[i];
    block.push_back(gold_pair(instances[i]));
    if (da)
      for (const auto& g : generate(instances[i], i, *da, config, options, LatentSide::target))
        block.push_back(generated_pair(instances[i], g, false));
    if (reverse_da)
      for (const auto& g : generate(swapped[i], i, *reverse_da, config, options, LatentSide::source))
        block.push_back(generated_pair(instances[i], g, true));
  });
  AugmentedCorpus corpus;
  corpus.meta.seed = config.seed;
  corpus.meta.num_samples = config.num_samples;
  corpus.meta.mode = config.mode;
  corpus.meta.direction = direction;
  for (auto& block : blocks)
    for (auto& p : block) corpus.pairs.push_back(std::move(p));
  return corpus;
}

}  // namespace

AugmentedCorpus target_augment(const std::vector<ParallelInstance>& instances, const ModelParams& da,
                               const AugmentConfig& config, const AugmentOptions& options) {
  return run_augment(instances, &da, nullptr, config, options, Direction::target);
}

AugmentedCorpus source_augment(const std::vector<ParallelInstance>& instances, const ModelParams& reverse_da,
                               const AugmentConfig& config, const AugmentOptions& options) {
  return run_augment(instances, nullptr, &reverse_da, config, options, Direction::source);
}

AugmentedCorpus both_augment(const std::vector<ParallelInstance>& instances, const ModelParams& da,
                             const ModelParams& reverse_da, const AugmentConfig& config,
                             const AugmentOptions& options) {
  return run_augment(instances, &da, &reverse_da, config, options, Direction::both);
}

namespace {

std::size_t block_size(const AugmentMeta& meta) {
  const auto m = static_cast<std::size_t>(meta.num_samples);
  return meta.direction == Direction::both ? 2 * m + 1 : m + 1;
}

}  // namespace

void validate_augmented(const AugmentedCorpus& corpus, const std::vector<ParallelInstance>& instances) {
  const std::size_t per = block_size(corpus.meta);
  if (corpus.pairs.size() != per * instances.size())
    throw ValidationError("augmented corpus has " + std::to_string(corpus.pairs.size()) + " pairs, expected " +
                          std::to_string(per * instances.size()));
  const auto m = static_cast<std::size_t>(corpus.meta.num_samples);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    for (std::size_t k = 0; k < per; ++k) {
      const auto& p = corpus.pairs[i * per + k];
      const std::string where = "pair " + std::to_string(i * per + k) + " (" + p.instance_id + ")";
      if (p.instance_id != inst.instance_id) throw ValidationError(where + ": instance id mismatch");
      if (k == 0) {
        if (p.origin != Origin::gold || p.source != inst.source || p.translation != inst.target || p.alpha || p.spans)
          throw ValidationError(where + ": gold pair does not match the corpus");
        continue;
      }
      const bool source_side =
          corpus.meta.direction == Direction::source || (corpus.meta.direction == Direction::both && k > m);
      if (p.origin != Origin::generated || !p.alpha || !p.spans)
        throw ValidationError(where + ": generated pair lacks provenance");
      if (*p.alpha < 0.0 || *p.alpha > 1.0) throw ValidationError(where + ": alpha outside [0, 1]");
      const TokenSeq& observed = source_side ? inst.source : inst.target;
      LatentValue z;
      z.spans = *p.spans;
      for (const auto& s : z.spans) z.tokens_covered += s.length;
      const std::string problem = check_latent(z, observed, std::max(1, static_cast<int>(observed.size())));
      if (!problem.empty()) throw ValidationError(where + ": " + problem);
      if ((source_side ? p.translation : p.source) != (source_side ? inst.target : inst.source))
        throw ValidationError(where + ": gold side was modified");
    }
  }
}

AugmentedCorpus truncate_samples(const AugmentedCorpus& corpus, int m) {
  if (m < 0 || m > corpus.meta.num_samples) throw ValidationError("cannot truncate to " + std::to_string(m) + " samples");
  const std::size_t per = block_size(corpus.meta);
  const auto old_m = static_cast<std::size_t>(corpus.meta.num_samples);
  AugmentedCorpus out;
  out.meta = corpus.meta;
  out.meta.num_samples = m;
  for (std::size_t b = 0; b < corpus.pairs.size() / per; ++b) {
    out.pairs.push_back(corpus.pairs[b * per]);
    for (std::size_t k = 1; k < per; ++k) {
      const std::size_t within = (k - 1) % old_m;
      if (within < static_cast<std::size_t>(m)) out.pairs.push_back(corpus.pairs[b * per + k]);
    }
  }
  return out;
}

namespace {

GroupTags clamped_tags(const TokenSeq& seq, std::int32_t max_tag) {
  GroupTags tags = tags_from_separators(seq);
  for (auto& t : tags) t = std::min(t, max_tag);
  return tags;
}

}  // namespace

std::vector<Example> mt_examples(const AugmentedCorpus& corpus, bool drop_gold) {
  std::vector<Example> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) {
    if (drop_gold && p.origin == Origin::gold) continue;
    if (p.source.empty()) continue;
    Example e;
    e.src = p.source;
    e.src_tags = tags_from_separators(p.source);
    e.tgt = p.translation;
    e.tgt_tags = clamped_tags(p.translation, e.src_tags.back());
    out.push_back(std::move(e));
  }
  return out;
}

Example instance_example(const ParallelInstance& inst) {
  return {inst.source, inst.src_group_tags, inst.target, inst.tgt_group_tags};
}

std::vector<Example> instance_examples(const std::vector<ParallelInstance>& instances) {
  std::vector<Example> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(instance_example(inst));
  return out;
}

TrainResult train_mt(const AugmentedCorpus& corpus, const std::vector<ParallelInstance>& dev, const ModelConfig& model,
                     const TrainConfig& train_config, bool drop_gold, const EpochCallback& on_epoch) {
  std::vector<Example> data = mt_examples(corpus, drop_gold);
  if (data.empty()) throw ValidationError("no MT training pairs");
  ModelParams params = make_model(model, Role::mt, train_config.seed);
  TrainResult result = train(std::move(params), data, instance_examples(dev), train_config, on_epoch);
  result.params.role = Role::mt;
  return result;
}

std::vector<Hypothesis> translate(const ModelParams& params, const std::vector<ParallelInstance>& instances,
                                  int beam_size, int threads) {
  std::vector<Hypothesis> out(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    auto hyps = beam_search(params, prior_input(instances[i].source, instances[i].src_group_tags), beam_size);
    out[i] = hyps.front();
    if (out[i].finished && !out[i].tokens.empty()) out[i].tokens.pop_back();
  });
  return out;
}

// ---- JSONL ----

namespace {

nlohmann::ordered_json surfaces(const TokenSeq& ids, const Vocabulary& vocab) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (TokenId id : ids) arr.push_back(vocab.token(id));
  return arr;
}

TokenSeq ids_from(const nlohmann::json& arr, const Vocabulary& vocab) {
  TokenSeq ids;
  for (const auto& t : arr) ids.push_back(vocab.id(t.get<std::string>()));
  return ids;
}

}  // namespace

std::string serialize_augmented(const AugmentedCorpus& corpus, const Vocabulary& vocab) {
  std::ostringstream out;
  nlohmann::ordered_json header;
  header["_meta"] = nlohmann::ordered_json::parse(corpus.meta.to_json().dump());
  out << header.dump() << '\n';
  for (const auto& p : corpus.pairs) {
    nlohmann::ordered_json j;
    j["instance_id"] = p.instance_id;
    j["src"] = surfaces(p.source, vocab);
    j["tgt"] = surfaces(p.translation, vocab);
    j["origin"] = to_string(p.origin);
    if (p.alpha) j["alpha"] = *p.alpha;
    if (p.spans) {
      nlohmann::ordered_json spans = nlohmann::ordered_json::array();
      for (const auto& s : *p.spans) spans.push_back({s.start, s.length});
      j["spans"] = spans;
    }
    if (p.beam_score) j["beam_score"] = *p.beam_score;
    if (p.unfinished) j["unfinished"] = true;
    out << j.dump() << '\n';
  }
  return out.str();
}

void save_augmented(const std::string& path, const AugmentedCorpus& corpus, const Vocabulary& vocab) {
  write_file(path, serialize_augmented(corpus, vocab));
}

AugmentedCorpus parse_augmented(std::istream& in, const Vocabulary& vocab) {
  AugmentedCorpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (!have_meta) {
        if (!j.contains("_meta")) throw ParseError(line_no, "first line must be the _meta header");
        corpus.meta = AugmentMeta::from_json(j.at("_meta"));
        have_meta = true;
        continue;
      }
      AugmentedPair p;
      p.instance_id = j.at("instance_id").get<std::string>();
      p.source = ids_from(j.at("src"), vocab);
      p.translation = ids_from(j.at("tgt"), vocab);
      const auto origin = j.at("origin").get<std::string>();
      if (origin == "gold") {
        p.origin = Origin::gold;
      } else if (origin == "da") {
        p.origin = Origin::generated;
      } else {
        throw ParseError(line_no, "unknown origin '" + origin + "'");
      }
      if (j.contains("alpha")) p.alpha = j.at("alpha").get<double>();
      if (j.contains("spans")) {
        std::vector<Span> spans;
        for (const auto& s : j.at("spans")) spans.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
        p.spans = std::move(spans);
      }
      if (j.contains("beam_score")) p.beam_score = j.at("beam_score").get<double>();
      p.unfinished = j.value("unfinished", false);
      corpus.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (!have_meta) throw ParseError(line_no, "missing _meta header");
  return corpus;
}

AugmentedCorpus load_augmented(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return parse_augmented(in, vocab);
}

}  // namespace docaug
