#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "docaug/corpus.hpp"
#include "docaug/decode.hpp"
#include "docaug/latent.hpp"
#include "docaug/model.hpp"
#include "docaug/train.hpp"

namespace docaug {

// One (x, z, y) term of the DA training objective.
struct DaTrainingRecord {
  ExtendedInput input;
  TokenSeq target;
  GroupTags target_tags;
  std::string parent_instance_id;
  int replica = 1;  // 1-based
};

enum class Origin { gold, generated };

struct AugmentedPair {
  std::string instance_id;
  TokenSeq source;
  TokenSeq translation;
  Origin origin = Origin::gold;
  std::optional<double> alpha;
  std::optional<std::vector<Span>> spans;
  std::optional<double> beam_score;
  bool unfinished = false;
};

struct AugmentMeta {
  std::uint64_t seed = 0;
  int num_samples = 0;  // M
  AugmentMode mode = AugmentMode::posterior;
  Direction direction = Direction::target;
  std::string da_checkpoint_sha256;
  std::string config_sha256;

  nlohmann::json to_json() const;
  static AugmentMeta from_json(const nlohmann::json& j);
};

struct AugmentedCorpus {
  AugmentMeta meta;
  std::vector<AugmentedPair> pairs;
};

// Index 0 for target-side latents, 1 for source-side ones; keeps the two
// directions on separate random streams.
enum class LatentSide : std::uint64_t { target = 0, source = 1 };

// Generator for latent draw j (1-based) of instance i. Augmentation reuses
// the draw of DA training replica j unless `fresh` is set.
Rng latent_rng(std::uint64_t seed, LatentSide side, std::size_t instance, int replica, bool fresh = false);

// Draws alpha and z for every (instance, replica). Prior mode yields records
// whose input is the bare source.
std::vector<DaTrainingRecord> build_da_training_set(const std::vector<ParallelInstance>& instances,
                                                    const AugmentConfig& config, int replicas,
                                                    LatentSide side = LatentSide::target);

std::vector<Example> da_examples(const std::vector<DaTrainingRecord>& records);

TrainResult train_da(const std::vector<DaTrainingRecord>& records, const std::vector<DaTrainingRecord>& dev,
                     const ModelConfig& model, const TrainConfig& train, const EpochCallback& on_epoch = {});

struct AugmentOptions {
  bool resample_latent = false;
  int threads = 1;
  int max_len = 0;  // 0 = decoder default
};

// Gold pair then M generated pairs per instance.
AugmentedCorpus target_augment(const std::vector<ParallelInstance>& instances, const ModelParams& da,
                               const AugmentConfig& config, const AugmentOptions& options = {});

// Same procedure with the roles swapped: the reverse model rewrites the source.
AugmentedCorpus source_augment(const std::vector<ParallelInstance>& instances, const ModelParams& reverse_da,
                               const AugmentConfig& config, const AugmentOptions& options = {});

// Gold, then M target-side and M source-side generations per instance.
AugmentedCorpus both_augment(const std::vector<ParallelInstance>& instances, const ModelParams& da,
                             const ModelParams& reverse_da, const AugmentConfig& config,
                             const AugmentOptions& options = {});

// Checks cardinality, provenance and the gold invariants against the instances.
void validate_augmented(const AugmentedCorpus& corpus, const std::vector<ParallelInstance>& instances);

// Keeps the gold pair and the first m generated pairs of each direction.
AugmentedCorpus truncate_samples(const AugmentedCorpus& corpus, int m);

// Training examples from an augmented corpus; tags are recovered from separators.
std::vector<Example> mt_examples(const AugmentedCorpus& corpus, bool drop_gold = false);
Example instance_example(const ParallelInstance& instance);
std::vector<Example> instance_examples(const std::vector<ParallelInstance>& instances);

// Dev selection uses gold instances only.
TrainResult train_mt(const AugmentedCorpus& corpus, const std::vector<ParallelInstance>& dev, const ModelConfig& model,
                     const TrainConfig& train, bool drop_gold = false, const EpochCallback& on_epoch = {});

// Top beam hypothesis per instance, eos removed.
std::vector<Hypothesis> translate(const ModelParams& params, const std::vector<ParallelInstance>& instances,
                                  int beam_size, int threads = 1);

std::string serialize_augmented(const AugmentedCorpus& corpus, const Vocabulary& vocab);
void save_augmented(const std::string& path, const AugmentedCorpus& corpus, const Vocabulary& vocab);
AugmentedCorpus parse_augmented(std::istream& in, const Vocabulary& vocab);
AugmentedCorpus load_augmented(const std::string& path, const Vocabulary& vocab);

std::string to_string(Origin origin);

}  // namespace docaug
