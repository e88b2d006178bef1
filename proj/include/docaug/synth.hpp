#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "docaug/corpus.hpp"
#include "docaug/metrics.hpp"

namespace docaug {

// Synthetic synonym corpus. Every source word has several valid target
// synonyms with a word-specific base distribution; each document prefers one
// synonym per word and every reference follows that preference with
// probability `consistency`, otherwise it redraws from the base distribution.
// With probability `context_weight` a token instead takes the synonym assigned
// to its (word, previous source word) pair.
struct SynthConfig {
  int train_docs = 500;
  int dev_docs = 50;
  int test_docs = 100;
  int sentences = 4;
  int vocab = 50;
  int min_sentence_len = 5;
  int max_sentence_len = 10;
  int min_synonyms = 2;
  int max_synonyms = 3;
  double zipf = 1.0;
  double consistency = 0.9;
  // Probability that a token's synonym is fixed by the (word, previous word)
  // pair instead of the document preference.
  double context_weight = 0.0;
  int test_refs = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct MultiRefDocument {
  std::string doc_id;
  std::vector<Sentence> src_sentences;
  std::vector<std::vector<Sentence>> refs;  // refs[r][k]: sentence k of reference r
};

struct SynthCorpus {
  std::vector<ParallelDocument> train, dev, test;  // test uses reference 0
  std::vector<MultiRefDocument> test_multiref;
};

SynthCorpus make_synth(const SynthConfig& config);

std::string serialize_multiref(const MultiRefDocument& doc);
void save_multiref(const std::string& path, const std::vector<MultiRefDocument>& docs);
std::vector<MultiRefDocument> load_multiref(const std::string& path);

// Perplexity items in sentence unit (one per sentence) or document unit.
std::vector<MultiRefItem> multiref_items(const std::vector<MultiRefDocument>& docs, Unit unit,
                                         const Vocabulary& src_vocab, const Vocabulary& tgt_vocab);

}  // namespace docaug
