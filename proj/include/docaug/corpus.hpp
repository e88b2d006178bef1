#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "docaug/common.hpp"

namespace docaug {

using Sentence = std::vector<std::string>;

struct ParallelDocument {
  std::string doc_id;
  std::vector<Sentence> src_sentences;
  std::vector<Sentence> tgt_sentences;
};

// One training/evaluation unit. In document unit the sentences of each side
// are joined with the sep token; a sep carries the tag of the sentence it ends.
struct ParallelInstance {
  std::string instance_id;
  std::string doc_id;
  TokenSeq source;
  TokenSeq target;
  GroupTags src_group_tags;
  GroupTags tgt_group_tags;
  Unit unit = Unit::sentence;
};

enum class VocabSide { src, tgt, joint };

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kSep = 4;
  static constexpr TokenId kNumSpecials = 5;

  Vocabulary();

  // Appends a non-special token. Duplicates and special surface forms are rejected.
  TokenId add(const std::string& token, std::size_t frequency);

  TokenId id(std::string_view token) const;  // unk for unknown tokens
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }
  std::size_t frequency(TokenId id) const { return freqs_.at(static_cast<std::size_t>(id)); }

  TokenSeq encode(const Sentence& sentence) const;
  Sentence decode(std::span<const TokenId> ids) const;

  // "token<TAB>frequency" per line for every non-special token, in id order.
  std::string serialize() const;
  void save(const std::string& path) const;
  static Vocabulary parse(std::istream& in);
  static Vocabulary load(const std::string& path);

  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }
  static const char* special_surface(TokenId id);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> freqs_;
  std::unordered_map<std::string, TokenId> index_;
};

struct SkipRecord {
  std::string doc_id;
  std::string instance_id;
  std::size_t source_length = 0;
  std::size_t target_length = 0;
};

struct InstanceSet {
  std::vector<ParallelInstance> instances;
  std::vector<SkipRecord> skipped;
};

std::vector<ParallelDocument> parse_corpus(std::istream& in);
std::vector<ParallelDocument> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<ParallelDocument>& docs);
std::string serialize_document(const ParallelDocument& doc);

Sentence tokenize(std::string_view text);
std::string detokenize(const Sentence& sentence);

Vocabulary build_vocab(const std::vector<ParallelDocument>& docs, VocabSide side,
                       std::size_t min_freq = 1);

constexpr std::size_t kDefaultMaxInstanceLength = 512;

InstanceSet make_instances(const std::vector<ParallelDocument>& docs, Unit unit,
                           const Vocabulary& vocab_src, const Vocabulary& vocab_tgt,
                           std::size_t max_length = kDefaultMaxInstanceLength);

// Joins per-sentence id sequences with sep and produces the matching tags.
void join_sentences(const std::vector<TokenSeq>& sentences, TokenSeq& ids, GroupTags& tags);

// Tags for a sequence whose sentences are separated by sep tokens.
GroupTags tags_from_separators(std::span<const TokenId> ids);

// Inverse of join_sentences: per-tag slices with the closing sep removed.
std::vector<TokenSeq> split_sentences(std::span<const TokenId> ids, std::span<const std::int32_t> tags);
std::vector<TokenSeq> split_on_separators(std::span<const TokenId> ids);

// Swaps the roles of source and target in every document.
std::vector<ParallelDocument> swap_roles(const std::vector<ParallelDocument>& docs);
ParallelInstance swap_roles(const ParallelInstance& instance);

}  // namespace docaug
