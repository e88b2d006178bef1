#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "docaug/corpus.hpp"
#include "docaug/latent.hpp"
#include "docaug/model.hpp"

namespace docaug {

constexpr int kBleuOrder = 4;

// Sufficient statistics of corpus BLEU-4.
struct BleuStats {
  std::array<std::int64_t, kBleuOrder> matches{};
  std::array<std::int64_t, kBleuOrder> totals{};
  std::int64_t hyp_length = 0;
  std::int64_t ref_length = 0;

  BleuStats& operator+=(const BleuStats& other);
};

template <class T>
BleuStats bleu_stats(std::span<const T> hyp, std::span<const T> ref);

// BLEU x 100 from accumulated statistics. With smoothing, an order n >= 2
// with zero matches uses (0 + 1) / (total + 1) as its precision.
double bleu_from_stats(const BleuStats& stats, bool smooth = true);

// Corpus BLEU-4 over aligned sentence pairs.
double s_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs, bool smooth = true);
double s_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs, bool smooth = true);

// Corpus BLEU-4 where each document is one token sequence.
double d_bleu(const std::vector<std::vector<Sentence>>& hyp_docs, const std::vector<std::vector<Sentence>>& ref_docs,
              bool smooth = true);

double sentence_bleu(const Sentence& hyp, const Sentence& ref, bool smooth = true);
double sentence_bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref, bool smooth = true);

// 100 - smoothed sentence BLEU.
double deviation(const Sentence& hyp, const Sentence& ref);
double deviation(std::span<const TokenId> hyp, std::span<const TokenId> ref);

// Mean deviation over unordered pairs. Deviation is not symmetric, so each
// pair contributes the mean of both directions.
double diversity(const std::vector<TokenSeq>& translations);
double diversity(const std::vector<Sentence>& translations);
// Same average with a caller-provided pairwise score.
double diversity(std::size_t count, const std::function<double(std::size_t, std::size_t)>& pair_score);

// One source with several references, for perplexity evaluation.
struct MultiRefItem {
  std::string id;
  TokenSeq source;
  GroupTags src_tags;
  std::vector<TokenSeq> refs;
  std::vector<GroupTags> ref_tags;
};

struct PplOptions {
  int samples = 100;
  AugmentMode mode = AugmentMode::posterior;
  AugmentConfig latent;  // beta and n-gram settings, seed
  int threads = 1;
};

struct PplResult {
  double ppl = 0.0;
  double log_prob = 0.0;  // sum over test references of log P-hat
  std::int64_t tokens = 0;
  std::int64_t evaluations = 0;  // (observed, test) reference pairs
};

// Cross-validated Monte-Carlo perplexity: each reference in turn is observed,
// latents are sampled from it, and every other reference is scored under the
// sample mean of P(y | x, z). Prior mode scores P(y | x) directly.
PplResult mc_posterior_ppl(const ModelParams& da, const std::vector<MultiRefItem>& items, const PplOptions& options);

struct MetricReport {
  std::optional<double> s_bleu;
  std::optional<double> d_bleu;
  std::optional<double> deviation_mean;      // per generated pair, against gold
  std::optional<double> deviation_corpus;    // 100 - corpus BLEU of generated set against gold
  std::optional<double> diversity;
  std::optional<double> ppl;
  std::int64_t sentences = 0;
  std::int64_t documents = 0;
  std::int64_t tokens = 0;

  nlohmann::json to_json() const;
};

}  // namespace docaug
