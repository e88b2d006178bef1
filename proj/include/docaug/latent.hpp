#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "docaug/common.hpp"
#include "docaug/rng.hpp"

namespace docaug {

enum class AugmentMode { posterior, prior };
enum class Direction { target, source, both };

std::string to_string(AugmentMode mode);
std::string to_string(Direction direction);
AugmentMode parse_mode(const std::string& text);
Direction parse_direction(const std::string& text);

struct AugmentConfig {
  double beta_a = 2.0;
  double beta_b = 3.0;
  int ngram_min = 1;
  int ngram_max = 3;
  int num_samples = 4;  // M
  int beam_size = 5;
  std::uint64_t seed = 1;
  AugmentMode mode = AugmentMode::posterior;
  Direction direction = Direction::target;

  void validate() const;  // throws ValidationError
};

struct Span {
  int start = 0;
  int length = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

struct LatentValue {
  std::vector<Span> spans;  // sorted by start, pairwise disjoint
  double observed_ratio_requested = 0.0;
  int tokens_covered = 0;
  friend bool operator==(const LatentValue&, const LatentValue&) = default;
};

struct ExtendedInput {
  TokenSeq tokens;
  GroupTags group_tags;
  std::size_t source_length = 0;  // size of the source part inside tokens
  std::optional<LatentValue> latent_origin;
};

// One draw from Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b).
double sample_observed_ratio(const AugmentConfig& config, Rng& rng);

// Number of target positions a latent may cover (separators excluded).
int eligible_length(std::span<const TokenId> target);

LatentValue sample_latent(std::span<const TokenId> target, double alpha, const AugmentConfig& config, Rng& rng);

// Checks the span invariants against a target; returns an empty string when valid.
std::string check_latent(const LatentValue& latent, std::span<const TokenId> target, int ngram_max);

ExtendedInput render_extended_input(std::span<const TokenId> source, std::span<const std::int32_t> src_group_tags,
                                    const LatentValue& latent, std::span<const TokenId> target,
                                    std::span<const std::int32_t> tgt_group_tags);

// Source tokens only; the latent is absent.
ExtendedInput prior_input(std::span<const TokenId> source, std::span<const std::int32_t> src_group_tags);

// The latent tokens of an extended input, one sequence per rendered span, in rendering order.
std::vector<TokenSeq> rendered_span_tokens(const ExtendedInput& input);

double latent_coverage(const LatentValue& latent, int target_len);

}  // namespace docaug
