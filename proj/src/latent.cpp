#include "docaug/latent.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "docaug/corpus.hpp"

namespace docaug {

std::string to_string(AugmentMode mode) { return mode == AugmentMode::posterior ? "posterior" : "prior"; }

std::string to_string(Direction direction) {
  switch (direction) {
    case Direction::target: return "target";
    case Direction::source: return "source";
    case Direction::both: return "both";
  }
  return "target";
}

AugmentMode parse_mode(const std::string& text) {
  if (text == "posterior") return AugmentMode::posterior;
  if (text == "prior") return AugmentMode::prior;
  throw ValidationError("unknown mode '" + text + "' (expected posterior|prior)");
}

Direction parse_direction(const std::string& text) {
  if (text == "target") return Direction::target;
  if (text == "source") return Direction::source;
  if (text == "both") return Direction::both;
  throw ValidationError("unknown direction '" + text + "' (expected target|source|both)");
}

void AugmentConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (!(beta_a > 0) || !(beta_b > 0)) fail("beta parameters must be positive");
  if (ngram_min < 1 || ngram_min > ngram_max) fail("require 1 <= ngram_min <= ngram_max");
  if (num_samples < 0) fail("num_samples (M) must be >= 0");
  if (beam_size < 1) fail("beam_size must be >= 1");
  if (!problems.empty()) throw ValidationError("invalid augment config: " + problems);
}

double sample_observed_ratio(const AugmentConfig& config, Rng& rng) {
  std::gamma_distribution<double> ga(config.beta_a, 1.0);
  std::gamma_distribution<double> gb(config.beta_b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0) return 0.5;
  return x / (x + y);
}

int eligible_length(std::span<const TokenId> target) {
  return static_cast<int>(std::count_if(target.begin(), target.end(),
                                        [](TokenId id) { return id != Vocabulary::kSep; }));
}

LatentValue sample_latent(std::span<const TokenId> target, double alpha, const AugmentConfig& config, Rng& rng) {
  if (alpha < 0.0 || alpha > 1.0) throw ValidationError("observed ratio must lie in [0, 1]");
  if (target.empty()) throw ValidationError("cannot sample a latent over an empty target");
  LatentValue latent;
  latent.observed_ratio_requested = alpha;
  const int n = static_cast<int>(target.size());
  const int eligible = eligible_length(target);
  int remaining = std::min(static_cast<int>(std::lround(alpha * eligible)), eligible);

  // free[p]: position p is eligible and not yet covered.
  std::vector<char> free(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) free[p] = target[p] != Vocabulary::kSep;
  // run[p]: number of consecutive free positions starting at p.
  std::vector<int> run(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> starts;
  while (remaining > 0) {
    int len = static_cast<int>(uniform_int(rng, config.ngram_min, config.ngram_max));
    len = std::min(len, remaining);
    for (int p = n - 1; p >= 0; --p) run[p] = free[p] ? run[p + 1] + 1 : 0;
    for (;; --len) {
      starts.clear();
      for (int p = 0; p < n; ++p)
        if (run[p] >= len) starts.push_back(p);
      if (!starts.empty() || len == 1) break;
    }
    // remaining <= number of free positions, so a unigram always fits.
    const int start = starts[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(starts.size()) - 1))];
    for (int p = start; p < start + len; ++p) free[p] = 0;
    latent.spans.push_back({start, len});
    latent.tokens_covered += len;
    remaining -= len;
  }
  std::sort(latent.spans.begin(), latent.spans.end(), [](const Span& a, const Span& b) { return a.start < b.start; });
  return latent;
}

std::string check_latent(const LatentValue& latent, std::span<const TokenId> target, int ngram_max) {
  int covered = 0;
  int prev_end = 0;
  for (const auto& span : latent.spans) {
    if (span.length < 1) return "span with non-positive length";
    if (span.length > ngram_max) return "span longer than ngram_max";
    if (span.start < prev_end) return "spans overlap or are unsorted";
    if (span.start < 0 || span.start + span.length > static_cast<int>(target.size())) return "span out of bounds";
    for (int p = span.start; p < span.start + span.length; ++p)
      if (target[p] == Vocabulary::kSep) return "span crosses a sentence boundary";
    prev_end = span.start + span.length;
    covered += span.length;
  }
  if (covered != latent.tokens_covered) return "tokens_covered does not match span lengths";
  return {};
}

ExtendedInput prior_input(std::span<const TokenId> source, std::span<const std::int32_t> src_group_tags) {
  ExtendedInput input;
  input.tokens.assign(source.begin(), source.end());
  input.group_tags.assign(src_group_tags.begin(), src_group_tags.end());
  input.source_length = source.size();
  return input;
}

ExtendedInput render_extended_input(std::span<const TokenId> source, std::span<const std::int32_t> src_group_tags,
                                    const LatentValue& latent, std::span<const TokenId> target,
                                    std::span<const std::int32_t> tgt_group_tags) {
  if (source.size() != src_group_tags.size() || target.size() != tgt_group_tags.size())
    throw ValidationError("token/tag length mismatch");
  if (source.empty()) throw ValidationError("empty source");
  ExtendedInput input;
  input.source_length = source.size();
  input.latent_origin = latent;
  const std::int32_t last_group = src_group_tags.back();

  // Spans grouped by the target sentence they come from, ascending position.
  std::vector<std::vector<const Span*>> by_group(static_cast<std::size_t>(last_group) + 1);
  for (const auto& span : latent.spans) {
    std::int32_t g = std::clamp<std::int32_t>(tgt_group_tags[span.start], 1, last_group);
    by_group[g].push_back(&span);
  }
  auto emit_latent = [&](std::int32_t g) {
    for (const Span* span : by_group[g]) {
      input.tokens.push_back(Vocabulary::kSep);
      input.group_tags.push_back(g);
      for (int p = span->start; p < span->start + span->length; ++p) {
        input.tokens.push_back(target[p]);
        input.group_tags.push_back(g);
      }
    }
  };
  std::size_t i = 0;
  while (i < source.size()) {
    const std::int32_t g = src_group_tags[i];
    std::size_t j = i;
    while (j < source.size() && src_group_tags[j] == g && source[j] != Vocabulary::kSep) {
      input.tokens.push_back(source[j]);
      input.group_tags.push_back(g);
      ++j;
    }
    emit_latent(g);
    // boundary separator closing this group, if any
    while (j < source.size() && src_group_tags[j] == g) {
      input.tokens.push_back(source[j]);
      input.group_tags.push_back(g);
      ++j;
    }
    i = j;
  }
  return input;
}

std::vector<TokenSeq> rendered_span_tokens(const ExtendedInput& input) {
  std::vector<TokenSeq> spans;
  const auto& toks = input.tokens;
  const auto& tags = input.group_tags;
  for (std::size_t p = 0; p < toks.size(); ++p) {
    if (toks[p] != Vocabulary::kSep) continue;
    // A marker sep is followed by span tokens of the same group; a boundary sep closes its group.
    if (p + 1 >= toks.size() || tags[p + 1] != tags[p] || toks[p + 1] == Vocabulary::kSep) continue;
    TokenSeq span;
    std::size_t q = p + 1;
    while (q < toks.size() && toks[q] != Vocabulary::kSep && tags[q] == tags[p]) span.push_back(toks[q++]);
    spans.push_back(std::move(span));
  }
  return spans;
}

double latent_coverage(const LatentValue& latent, int target_len) {
  if (target_len < 1) throw ValidationError("target_len must be >= 1");
  return static_cast<double>(latent.tokens_covered) / target_len;
}

}  // namespace docaug
