#include "docaug/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "docaug/parallel.hpp"

namespace docaug {

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < kBleuOrder; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

template <class T>
BleuStats bleu_stats(std::span<const T> hyp, std::span<const T> ref) {
  BleuStats s;
  s.hyp_length = static_cast<std::int64_t>(hyp.size());
  s.ref_length = static_cast<std::int64_t>(ref.size());
  for (int n = 1; n <= kBleuOrder; ++n) {
    const auto un = static_cast<std::size_t>(n);
    std::map<std::vector<T>, std::int64_t> ref_counts;
    for (std::size_t i = 0; i + un <= ref.size(); ++i) ++ref_counts[std::vector<T>(ref.begin() + i, ref.begin() + i + un)];
    std::map<std::vector<T>, std::int64_t> hyp_counts;
    for (std::size_t i = 0; i + un <= hyp.size(); ++i) ++hyp_counts[std::vector<T>(hyp.begin() + i, hyp.begin() + i + un)];
    std::int64_t match = 0, total = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) match += std::min(count, it->second);
    }
    s.matches[n - 1] = match;
    s.totals[n - 1] = total;
  }
  return s;
}

template BleuStats bleu_stats<std::string>(std::span<const std::string>, std::span<const std::string>);
template BleuStats bleu_stats<TokenId>(std::span<const TokenId>, std::span<const TokenId>);

double bleu_from_stats(const BleuStats& s, bool smooth) {
  if (s.hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kBleuOrder; ++n) {
    double m = static_cast<double>(s.matches[n]);
    double t = static_cast<double>(s.totals[n]);
    if (s.matches[n] == 0) {
      if (!smooth || n == 0) return 0.0;
      m += 1.0;
      t += 1.0;
    }
    log_sum += std::log(m / t);
  }
  const double c = static_cast<double>(s.hyp_length);
  const double r = static_cast<double>(s.ref_length);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_sum / kBleuOrder);
}

namespace {

template <class Seq>
double corpus_bleu(const std::vector<Seq>& hyps, const std::vector<Seq>& refs, bool smooth) {
  if (hyps.size() != refs.size())
    throw AlignmentError("<corpus>", "hypothesis count " + std::to_string(hyps.size()) +
                                         " differs from reference count " + std::to_string(refs.size()));
  using T = typename Seq::value_type;
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i)
    total += bleu_stats<T>(std::span<const T>(hyps[i]), std::span<const T>(refs[i]));
  return bleu_from_stats(total, smooth);
}

}  // namespace

double s_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs, bool smooth) {
  return corpus_bleu(hyps, refs, smooth);
}

double s_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs, bool smooth) {
  return corpus_bleu(hyps, refs, smooth);
}

double d_bleu(const std::vector<std::vector<Sentence>>& hyp_docs, const std::vector<std::vector<Sentence>>& ref_docs,
              bool smooth) {
  auto flatten = [](const std::vector<std::vector<Sentence>>& docs) {
    std::vector<Sentence> out;
    out.reserve(docs.size());
    for (const auto& d : docs) {
      Sentence joined;
      for (const auto& s : d) joined.insert(joined.end(), s.begin(), s.end());
      out.push_back(std::move(joined));
    }
    return out;
  };
  return corpus_bleu(flatten(hyp_docs), flatten(ref_docs), smooth);
}

double sentence_bleu(const Sentence& hyp, const Sentence& ref, bool smooth) {
  return bleu_from_stats(bleu_stats<std::string>(hyp, ref), smooth);
}

double sentence_bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref, bool smooth) {
  return bleu_from_stats(bleu_stats<TokenId>(hyp, ref), smooth);
}

double deviation(const Sentence& hyp, const Sentence& ref) { return 100.0 - sentence_bleu(hyp, ref, true); }

double deviation(std::span<const TokenId> hyp, std::span<const TokenId> ref) {
  return 100.0 - sentence_bleu(hyp, ref, true);
}

double diversity(std::size_t count, const std::function<double(std::size_t, std::size_t)>& pair_score) {
  if (count < 2) throw ValidationError("diversity needs at least 2 translations, got " + std::to_string(count));
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = i + 1; j < count; ++j) sum += pair_score(i, j);
  return sum / (static_cast<double>(count) * static_cast<double>(count - 1) / 2.0);
}

double diversity(const std::vector<TokenSeq>& t) {
  return diversity(t.size(), [&](std::size_t i, std::size_t j) {
    return 0.5 * (deviation(std::span<const TokenId>(t[i]), t[j]) + deviation(std::span<const TokenId>(t[j]), t[i]));
  });
}

double diversity(const std::vector<Sentence>& t) {
  return diversity(t.size(), [&](std::size_t i, std::size_t j) {
    return 0.5 * (deviation(t[i], t[j]) + deviation(t[j], t[i]));
  });
}

PplResult mc_posterior_ppl(const ModelParams& da, const std::vector<MultiRefItem>& items, const PplOptions& opt) {
  if (opt.samples < 1) throw ValidationError("samples must be >= 1");
  for (const auto& item : items)
    if (item.refs.size() < 2) throw ValidationError("item '" + item.id + "' needs at least 2 references");
  const bool prior = opt.mode == AugmentMode::prior;

  struct Cell {
    double log_prob = 0.0;
    std::int64_t tokens = 0;
    std::int64_t evaluations = 0;
  };
  std::vector<Cell> cells(items.size());
  parallel_for(items.size(), opt.threads, [&](std::size_t i) {
    const auto& item = items[i];
    const std::size_t r = item.refs.size();
    for (std::size_t obs = 0; obs < r; ++obs) {
      for (std::size_t y = 0; y < r; ++y) {
        if (y == obs) continue;
        const int s_count = prior ? 1 : opt.samples;
        std::vector<Example> batch;
        batch.reserve(static_cast<std::size_t>(s_count));
        for (int s = 0; s < s_count; ++s) {
          ExtendedInput in;
          if (prior) {
            in = prior_input(item.source, item.src_tags);
          } else {
            Rng rng = make_rng(opt.latent.seed, Stream::ppl, {i, obs, y, static_cast<std::uint64_t>(s)});
            const double alpha = sample_observed_ratio(opt.latent, rng);
            LatentValue z = sample_latent(item.refs[obs], alpha, opt.latent, rng);
            in = render_extended_input(item.source, item.src_tags, z, item.refs[obs], item.ref_tags[obs]);
          }
          batch.push_back({std::move(in.tokens), std::move(in.group_tags), item.refs[y], item.ref_tags[y]});
        }
        Batch b = make_batch(std::span<const Example>(batch));
        std::vector<double> lp = sequence_log_probs<float>(da.config, da.weights, b);
        const double mx = *std::max_element(lp.begin(), lp.end());
        double acc = 0.0;
        for (double v : lp) acc += std::exp(v - mx);
        cells[i].log_prob += mx + std::log(acc / static_cast<double>(lp.size()));
        cells[i].tokens += static_cast<std::int64_t>(item.refs[y].size()) + 1;
        cells[i].evaluations += 1;
      }
    }
  });
  PplResult out;
  for (const auto& c : cells) {
    out.log_prob += c.log_prob;
    out.tokens += c.tokens;
    out.evaluations += c.evaluations;
  }
  out.ppl = out.tokens > 0 ? std::exp(-out.log_prob / static_cast<double>(out.tokens)) : 0.0;
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("s_bleu", s_bleu);
  put("d_bleu", d_bleu);
  put("deviation_mean", deviation_mean);
  put("deviation_corpus", deviation_corpus);
  put("diversity", diversity);
  put("ppl", ppl);
  j["counts"] = {{"sentences", sentences}, {"documents", documents}, {"tokens", tokens}};
  return j;
}

}  // namespace docaug
