#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "docaug/corpus.hpp"
#include "docaug/model.hpp"
#include "docaug/rng.hpp"

namespace docaug::test {

inline ModelConfig tiny_config(int vocab, int layers = 2, int d = 16, int heads = 2) {
  ModelConfig c;
  c.layers = layers;
  c.heads = heads;
  c.model_dim = d;
  c.ffn_dim = 2 * d;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.combined_top_layers = 1;
  c.dropout = 0.0;
  c.label_smoothing = 0.0;
  return c;
}

inline TokenSeq random_tokens(Rng& rng, int len, int vocab) {
  TokenSeq s;
  for (int i = 0; i < len; ++i) s.push_back(static_cast<TokenId>(uniform_int(rng, Vocabulary::kNumSpecials, vocab - 1)));
  return s;
}

// Sentences joined with sep; tags per sentence.
inline Example random_document(Rng& rng, int sentences, int min_len, int max_len, int vocab) {
  std::vector<TokenSeq> src, tgt;
  for (int k = 0; k < sentences; ++k) {
    src.push_back(random_tokens(rng, static_cast<int>(uniform_int(rng, min_len, max_len)), vocab));
    tgt.push_back(random_tokens(rng, static_cast<int>(uniform_int(rng, min_len, max_len)), vocab));
  }
  Example e;
  join_sentences(src, e.src, e.src_tags);
  join_sentences(tgt, e.tgt, e.tgt_tags);
  return e;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("docaug-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace docaug::test
