#include "docaug/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "docaug/hash.hpp"
#include "docaug/rng.hpp"

namespace docaug {

void SynthConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (train_docs < 1) fail("train_docs must be >= 1");
  if (dev_docs < 0 || test_docs < 0) fail("dev_docs and test_docs must be >= 0");
  if (sentences < 1) fail("sentences must be >= 1");
  if (vocab < 1) fail("vocab must be >= 1");
  if (min_sentence_len < 1 || max_sentence_len < min_sentence_len) fail("bad sentence length range");
  if (min_synonyms < 1 || max_synonyms < min_synonyms || max_synonyms > 26) fail("bad synonym range");
  if (!(zipf >= 0)) fail("zipf must be >= 0");
  if (!(consistency >= 0 && consistency <= 1)) fail("consistency must lie in [0, 1]");
  if (!(context_weight >= 0 && context_weight <= 1)) fail("context_weight must lie in [0, 1]");
  if (test_refs < 1) fail("test_refs must be >= 1");
  if (!problems.empty()) throw ValidationError("invalid synth config: " + problems);
}

namespace {

std::size_t draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = uniform01(rng) * cdf.back();
  std::size_t k = 0;
  while (k + 1 < cdf.size() && u >= cdf[k]) ++k;
  return k;
}

std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> c(w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) c[i] = (s += w[i]);
  return c;
}

std::string word_name(char side, int w) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%02d", side, w);
  return buf;
}

struct Lexicon {
  std::vector<std::vector<double>> synonym_cdf;  // per source word
  std::vector<double> word_cdf;
  std::vector<std::vector<std::size_t>> context;  // [word][previous word + 1]
};

Lexicon make_lexicon(const SynthConfig& c, Rng& rng) {
  Lexicon lex;
  std::vector<double> zipf(static_cast<std::size_t>(c.vocab));
  for (int w = 0; w < c.vocab; ++w) zipf[w] = 1.0 / std::pow(w + 1.0, c.zipf);
  lex.word_cdf = cumulative(zipf);
  std::gamma_distribution<double> gamma(1.0, 1.0);
  for (int w = 0; w < c.vocab; ++w) {
    const auto k = uniform_int(rng, c.min_synonyms, c.max_synonyms);
    std::vector<double> weights(static_cast<std::size_t>(k));
    for (auto& x : weights) x = gamma(rng) + 1e-3;
    lex.synonym_cdf.push_back(cumulative(weights));
  }
  for (int w = 0; w < c.vocab; ++w) {
    std::vector<std::size_t> row(static_cast<std::size_t>(c.vocab) + 1);
    for (auto& x : row) x = draw(lex.synonym_cdf[w], rng);
    lex.context.push_back(std::move(row));
  }
  return lex;
}

std::string target_word(int w, std::size_t synonym) { return word_name('t', w) + static_cast<char>('a' + synonym); }

MultiRefDocument make_document(const SynthConfig& c, const Lexicon& lex, const std::string& id, int refs, Rng& rng) {
  MultiRefDocument doc;
  doc.doc_id = id;
  std::vector<std::vector<int>> words;
  for (int k = 0; k < c.sentences; ++k) {
    const auto len = uniform_int(rng, c.min_sentence_len, c.max_sentence_len);
    std::vector<int> s;
    Sentence src;
    for (int t = 0; t < len; ++t) {
      s.push_back(static_cast<int>(draw(lex.word_cdf, rng)));
      src.push_back(word_name('s', s.back()));
    }
    words.push_back(std::move(s));
    doc.src_sentences.push_back(std::move(src));
  }
  std::vector<std::size_t> preferred(static_cast<std::size_t>(c.vocab));
  for (int w = 0; w < c.vocab; ++w) preferred[w] = draw(lex.synonym_cdf[w], rng);
  for (int r = 0; r < refs; ++r) {
    std::vector<Sentence> ref;
    for (const auto& s : words) {
      Sentence out;
      for (std::size_t t = 0; t < s.size(); ++t) {
        const int w = s[t];
        std::size_t syn;
        if (c.context_weight > 0 && uniform01(rng) < c.context_weight) {
          syn = lex.context[w][t == 0 ? 0 : static_cast<std::size_t>(s[t - 1]) + 1];
        } else {
          syn = uniform01(rng) < c.consistency ? preferred[w] : draw(lex.synonym_cdf[w], rng);
        }
        out.push_back(target_word(w, syn));
      }
      ref.push_back(std::move(out));
    }
    doc.refs.push_back(std::move(ref));
  }
  return doc;
}

ParallelDocument first_reference(const MultiRefDocument& d) { return {d.doc_id, d.src_sentences, d.refs.front()}; }

}  // namespace

SynthCorpus make_synth(const SynthConfig& c) {
  c.validate();
  Rng lex_rng = make_rng(c.seed, Stream::synth, {0});
  const Lexicon lex = make_lexicon(c, lex_rng);
  SynthCorpus out;
  auto split = [&](std::uint64_t key, const char* prefix, int count, int refs) {
    std::vector<MultiRefDocument> docs;
    for (int d = 0; d < count; ++d) {
      Rng rng = make_rng(c.seed, Stream::synth, {key, static_cast<std::uint64_t>(d)});
      docs.push_back(make_document(c, lex, prefix + std::to_string(d), refs, rng));
    }
    return docs;
  };
  for (const auto& d : split(1, "train-", c.train_docs, 1)) out.train.push_back(first_reference(d));
  for (const auto& d : split(2, "dev-", c.dev_docs, 1)) out.dev.push_back(first_reference(d));
  out.test_multiref = split(3, "test-", c.test_docs, c.test_refs);
  for (const auto& d : out.test_multiref) out.test.push_back(first_reference(d));
  return out;
}

std::string serialize_multiref(const MultiRefDocument& doc) {
  nlohmann::ordered_json j;
  j["doc_id"] = doc.doc_id;
  j["src"] = nlohmann::ordered_json::array();
  for (const auto& s : doc.src_sentences) j["src"].push_back(detokenize(s));
  j["refs"] = nlohmann::ordered_json::array();
  for (const auto& ref : doc.refs) {
    nlohmann::ordered_json r = nlohmann::ordered_json::array();
    for (const auto& s : ref) r.push_back(detokenize(s));
    j["refs"].push_back(r);
  }
  return j.dump();
}

void save_multiref(const std::string& path, const std::vector<MultiRefDocument>& docs) {
  std::string text;
  for (const auto& d : docs) text += serialize_multiref(d) + "\n";
  write_file(path, text);
}

std::vector<MultiRefDocument> load_multiref(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<MultiRefDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MultiRefDocument d;
    try {
      auto j = nlohmann::json::parse(line);
      d.doc_id = j.at("doc_id").get<std::string>();
      for (const auto& s : j.at("src")) d.src_sentences.push_back(tokenize(s.get<std::string>()));
      for (const auto& r : j.at("refs")) {
        std::vector<Sentence> ref;
        for (const auto& s : r) ref.push_back(tokenize(s.get<std::string>()));
        d.refs.push_back(std::move(ref));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (d.refs.empty()) throw ParseError(line_no, "document has no references");
    for (const auto& ref : d.refs)
      if (ref.size() != d.src_sentences.size())
        throw AlignmentError(d.doc_id, "reference sentence count differs from source");
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<MultiRefItem> multiref_items(const std::vector<MultiRefDocument>& docs, Unit unit,
                                         const Vocabulary& src_vocab, const Vocabulary& tgt_vocab) {
  std::vector<MultiRefItem> items;
  for (const auto& d : docs) {
    if (unit == Unit::sentence) {
      for (std::size_t k = 0; k < d.src_sentences.size(); ++k) {
        MultiRefItem item;
        item.id = d.doc_id + ":" + std::to_string(k);
        item.source = src_vocab.encode(d.src_sentences[k]);
        item.src_tags.assign(item.source.size(), 1);
        for (const auto& ref : d.refs) {
          item.refs.push_back(tgt_vocab.encode(ref[k]));
          item.ref_tags.emplace_back(item.refs.back().size(), 1);
        }
        items.push_back(std::move(item));
      }
    } else {
      MultiRefItem item;
      item.id = d.doc_id;
      std::vector<TokenSeq> src;
      for (const auto& s : d.src_sentences) src.push_back(src_vocab.encode(s));
      join_sentences(src, item.source, item.src_tags);
      for (const auto& ref : d.refs) {
        std::vector<TokenSeq> sents;
        for (const auto& s : ref) sents.push_back(tgt_vocab.encode(s));
        TokenSeq ids;
        GroupTags tags;
        join_sentences(sents, ids, tags);
        item.refs.push_back(std::move(ids));
        item.ref_tags.push_back(std::move(tags));
      }
      items.push_back(std::move(item));
    }
  }
  return items;
}

}  // namespace docaug
