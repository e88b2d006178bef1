#include "docaug/decode.hpp"

#include <algorithm>
#include <tuple>

#include "docaug/corpus.hpp"

namespace docaug {

ModelScorer::ModelScorer(const ModelParams& params, const ExtendedInput& input)
    : params_(params), encoded_(encode(params, input.tokens, input.group_tags)) {
  for (auto t : input.group_tags) max_tag_ = std::max(max_tag_, t);
}

GroupTags prefix_tags(const TokenSeq& prefix, std::int32_t max_tag) {
  GroupTags tags(prefix.size());
  std::int32_t tag = 1;
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    if (t > 0 && prefix[t] == Vocabulary::kSep) ++tag;
    tags[t] = std::min(tag, max_tag);
  }
  return tags;
}

Mat<float> ModelScorer::next(const std::vector<TokenSeq>& prefixes) const {
  std::vector<GroupTags> tags;
  tags.reserve(prefixes.size());
  for (const auto& p : prefixes) tags.push_back(prefix_tags(p, max_tag_));
  return next_token_log_probs(params_, encoded_, prefixes, tags);
}

int default_max_len(const ExtendedInput& input) { return 2 * static_cast<int>(input.source_length) + 8; }

namespace {

struct Candidate {
  double score;
  int beam;
  TokenId token;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.beam != b.beam) return a.beam < b.beam;
  return a.token < b.token;
}

std::vector<Candidate> top_candidates(const Mat<float>& lp, const std::vector<double>& scores, std::size_t keep) {
  std::vector<Candidate> all;
  all.reserve(static_cast<std::size_t>(lp.size()));
  for (int b = 0; b < lp.rows(); ++b)
    for (int v = 0; v < lp.cols(); ++v) {
      if (v == Vocabulary::kPad || v == Vocabulary::kBos) continue;
      all.push_back({scores[b] + static_cast<double>(lp(b, v)), b, v});
    }
  keep = std::min(keep, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), better);
  all.resize(keep);
  return all;
}

void finalize(Hypothesis& h) { h.normalized_score = h.score / static_cast<double>(std::max<std::size_t>(1, h.tokens.size())); }

}  // namespace

std::vector<Hypothesis> beam_search(const StepScorer& scorer, int beam_size, int max_len) {
  if (beam_size < 1) throw ValidationError("beam_size must be >= 1");
  if (max_len < 1) throw ValidationError("max_len must be >= 1");
  const auto k = static_cast<std::size_t>(beam_size);
  std::vector<TokenSeq> prefixes{{Vocabulary::kBos}};
  std::vector<double> scores{0.0};
  std::vector<Hypothesis> finished;

  for (int step = 1; step <= max_len && !prefixes.empty(); ++step) {
    Mat<float> lp = scorer.next(prefixes);
    std::vector<TokenSeq> next_prefixes;
    std::vector<double> next_scores;
    for (const Candidate& c : top_candidates(lp, scores, 2 * k)) {
      const std::size_t rank = next_prefixes.size();
      if (c.token == Vocabulary::kEos) {
        // Only candidates that would have made the beam may finish.
        if (rank >= k) continue;
        Hypothesis h;
        h.tokens.assign(prefixes[c.beam].begin() + 1, prefixes[c.beam].end());
        h.tokens.push_back(Vocabulary::kEos);
        h.score = c.score;
        h.finished = true;
        h.finish_step = step;
        finalize(h);
        finished.push_back(std::move(h));
        continue;
      }
      if (rank >= k) continue;
      TokenSeq p = prefixes[c.beam];
      p.push_back(c.token);
      next_prefixes.push_back(std::move(p));
      next_scores.push_back(c.score);
    }
    prefixes = std::move(next_prefixes);
    scores = std::move(next_scores);
    if (finished.size() >= k) break;
  }

  if (finished.empty()) {
    for (std::size_t b = 0; b < prefixes.size(); ++b) {
      Hypothesis h;
      h.tokens.assign(prefixes[b].begin() + 1, prefixes[b].end());
      h.score = scores[b];
      h.finished = false;
      h.finish_step = max_len;
      finalize(h);
      finished.push_back(std::move(h));
    }
  }
  std::stable_sort(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    if (a.tokens != b.tokens) return a.tokens < b.tokens;
    return a.finish_step < b.finish_step;
  });
  if (finished.size() > k) finished.resize(k);
  return finished;
}

std::vector<Hypothesis> beam_search(const ModelParams& params, const ExtendedInput& input, int beam_size,
                                    int max_len) {
  ModelScorer scorer(params, input);
  return beam_search(scorer, beam_size, max_len > 0 ? max_len : default_max_len(input));
}

Hypothesis greedy_decode(const StepScorer& scorer, int max_len) {
  Hypothesis h;
  TokenSeq prefix{Vocabulary::kBos};
  for (int step = 1; step <= max_len; ++step) {
    Mat<float> lp = scorer.next({prefix});
    TokenId best = -1;
    for (int v = 0; v < lp.cols(); ++v) {
      if (v == Vocabulary::kPad || v == Vocabulary::kBos) continue;
      if (best < 0 || lp(0, v) > lp(0, best)) best = v;
    }
    h.score += static_cast<double>(lp(0, best));
    h.tokens.push_back(best);
    prefix.push_back(best);
    if (best == Vocabulary::kEos) {
      h.finished = true;
      h.finish_step = step;
      break;
    }
  }
  if (!h.finished) h.finish_step = max_len;
  finalize(h);
  return h;
}

}  // namespace docaug
