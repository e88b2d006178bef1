#pragma once

#include <memory>
#include <vector>

#include "docaug/latent.hpp"
#include "docaug/model.hpp"

namespace docaug {

struct Hypothesis {
  TokenSeq tokens;  // generated ids, ending with eos when finished
  double score = 0.0;             // sum of token log-probs
  double normalized_score = 0.0;  // score / tokens.size()
  bool finished = false;
  int finish_step = 0;
};

// Log-distributions of the next token for a set of prefixes. Every prefix
// starts with bos; row r of the result belongs to prefixes[r].
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual Mat<float> next(const std::vector<TokenSeq>& prefixes) const = 0;
};

class ModelScorer : public StepScorer {
 public:
  ModelScorer(const ModelParams& params, const ExtendedInput& input);
  Mat<float> next(const std::vector<TokenSeq>& prefixes) const override;

 private:
  const ModelParams& params_;
  EncodedInput encoded_;
  std::int32_t max_tag_ = 1;
};

// Decoder-side tags of a prefix: position t is tagged with the sentence of
// the token it predicts, capped at the number of source sentences.
GroupTags prefix_tags(const TokenSeq& prefix, std::int32_t max_tag);

int default_max_len(const ExtendedInput& input);

// Hypotheses ranked by normalized_score (descending), at most beam_size of them.
// When nothing finishes within max_len the surviving beams are returned unfinished.
std::vector<Hypothesis> beam_search(const StepScorer& scorer, int beam_size, int max_len);
std::vector<Hypothesis> beam_search(const ModelParams& params, const ExtendedInput& input, int beam_size,
                                    int max_len = 0);

// Stepwise argmax decoding.
Hypothesis greedy_decode(const StepScorer& scorer, int max_len);

}  // namespace docaug
