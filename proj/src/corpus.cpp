#include "docaug/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace docaug {

using nlohmann::json;

std::string to_string(Unit unit) { return unit == Unit::sentence ? "sentence" : "document"; }

Unit parse_unit(const std::string& text) {
  if (text == "sentence") return Unit::sentence;
  if (text == "document") return Unit::document;
  throw ValidationError("unknown unit '" + text + "' (expected sentence|document)");
}

namespace {

constexpr const char* kSpecialSurface[] = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};

Sentence read_sentence(const json& value, std::size_t line, const char* field) {
  if (!value.is_string()) throw ParseError(line, std::string("'") + field + "' entries must be strings");
  Sentence sentence = tokenize(value.get<std::string>());
  if (sentence.empty()) throw ParseError(line, std::string("empty sentence in '") + field + "'");
  return sentence;
}

std::vector<Sentence> read_side(const json& record, std::size_t line, const char* field) {
  auto it = record.find(field);
  if (it == record.end()) throw ParseError(line, std::string("missing field '") + field + "'");
  if (!it->is_array()) throw ParseError(line, std::string("'") + field + "' must be an array");
  std::vector<Sentence> out;
  out.reserve(it->size());
  for (const auto& value : *it) out.push_back(read_sentence(value, line, field));
  return out;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (TokenId id = 0; id < kNumSpecials; ++id) {
    tokens_.emplace_back(kSpecialSurface[id]);
    freqs_.push_back(0);
    index_.emplace(tokens_.back(), id);
  }
}

const char* Vocabulary::special_surface(TokenId id) { return kSpecialSurface[id]; }

TokenId Vocabulary::add(const std::string& token, std::size_t frequency) {
  if (token.empty() || token.find_first_of(" \t\n\r") != std::string::npos)
    throw ValidationError("vocabulary token '" + token + "' is empty or contains whitespace");
  if (!index_.emplace(token, static_cast<TokenId>(tokens_.size())).second)
    throw ValidationError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(token);
  freqs_.push_back(frequency);
  return static_cast<TokenId>(tokens_.size() - 1);
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ValidationError("token id " + std::to_string(id) + " out of vocabulary range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

TokenSeq Vocabulary::encode(const Sentence& sentence) const {
  TokenSeq ids;
  ids.reserve(sentence.size());
  for (const auto& tok : sentence) ids.push_back(id(tok));
  return ids;
}

Sentence Vocabulary::decode(std::span<const TokenId> ids) const {
  Sentence out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token(id));
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += std::to_string(freqs_[i]);
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write vocabulary file '" + path + "'");
  out << serialize();
}

Vocabulary Vocabulary::parse(std::istream& in) {
  Vocabulary vocab;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "expected 'token<TAB>frequency'");
    std::string token = line.substr(0, tab);
    std::size_t freq = 0;
    try {
      std::size_t used = 0;
      freq = std::stoull(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(lineno, "invalid frequency");
    }
    try {
      vocab.add(token, freq);
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open vocabulary file '" + path + "'");
  return parse(in);
}

Sentence tokenize(std::string_view text) {
  Sentence out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string detokenize(const Sentence& sentence) {
  std::string out;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i) out += ' ';
    out += sentence[i];
  }
  return out;
}

std::vector<ParallelDocument> parse_corpus(std::istream& in) {
  std::vector<ParallelDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) throw ParseError(lineno, "expected a JSON object");
    auto id = record.find("doc_id");
    if (id == record.end() || !id->is_string()) throw ParseError(lineno, "missing string field 'doc_id'");
    ParallelDocument doc;
    doc.doc_id = id->get<std::string>();
    doc.src_sentences = read_side(record, lineno, "src");
    doc.tgt_sentences = read_side(record, lineno, "tgt");
    if (doc.src_sentences.size() != doc.tgt_sentences.size())
      throw AlignmentError(doc.doc_id, std::to_string(doc.src_sentences.size()) + " source vs " +
                                           std::to_string(doc.tgt_sentences.size()) +
                                           " target sentences (line " + std::to_string(lineno) + ")");
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<ParallelDocument> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus file '" + path + "'");
  return parse_corpus(in);
}

std::string serialize_document(const ParallelDocument& doc) {
  json record;
  record["doc_id"] = doc.doc_id;
  auto side = [](const std::vector<Sentence>& sentences) {
    json arr = json::array();
    for (const auto& s : sentences) arr.push_back(detokenize(s));
    return arr;
  };
  record["src"] = side(doc.src_sentences);
  record["tgt"] = side(doc.tgt_sentences);
  return record.dump();
}

void save_corpus(const std::string& path, const std::vector<ParallelDocument>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write corpus file '" + path + "'");
  for (const auto& doc : docs) out << serialize_document(doc) << '\n';
}

Vocabulary build_vocab(const std::vector<ParallelDocument>& docs, VocabSide side, std::size_t min_freq) {
  if (min_freq < 1) throw ValidationError("min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  auto count = [&](const std::vector<Sentence>& sentences) {
    for (const auto& s : sentences)
      for (const auto& tok : s) ++counts[tok];
  };
  for (const auto& doc : docs) {
    if (side != VocabSide::tgt) count(doc.src_sentences);
    if (side != VocabSide::src) count(doc.tgt_sentences);
  }
  Vocabulary probe;
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [tok, n] : counts)
    if (n >= min_freq && !probe.contains(tok)) entries.emplace_back(tok, n);
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (auto& [tok, n] : entries) vocab.add(tok, n);
  return vocab;
}

void join_sentences(const std::vector<TokenSeq>& sentences, TokenSeq& ids, GroupTags& tags) {
  ids.clear();
  tags.clear();
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const auto tag = static_cast<std::int32_t>(k + 1);
    for (TokenId id : sentences[k]) {
      ids.push_back(id);
      tags.push_back(tag);
    }
    if (k + 1 < sentences.size()) {
      ids.push_back(Vocabulary::kSep);
      tags.push_back(tag);
    }
  }
}

GroupTags tags_from_separators(std::span<const TokenId> ids) {
  GroupTags tags;
  tags.reserve(ids.size());
  std::int32_t tag = 1;
  for (TokenId id : ids) {
    tags.push_back(tag);
    if (id == Vocabulary::kSep) ++tag;
  }
  return tags;
}

std::vector<TokenSeq> split_sentences(std::span<const TokenId> ids, std::span<const std::int32_t> tags) {
  if (ids.size() != tags.size()) throw ValidationError("token/tag length mismatch");
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto k = static_cast<std::size_t>(tags[i]);
    if (k < 1) throw ValidationError("group tags start at 1");
    if (out.size() < k) out.resize(k);
    if (ids[i] != Vocabulary::kSep) out[k - 1].push_back(ids[i]);
  }
  return out;
}

std::vector<TokenSeq> split_on_separators(std::span<const TokenId> ids) {
  std::vector<TokenSeq> out(1);
  for (TokenId id : ids) {
    if (id == Vocabulary::kSep)
      out.emplace_back();
    else
      out.back().push_back(id);
  }
  return out;
}

InstanceSet make_instances(const std::vector<ParallelDocument>& docs, Unit unit, const Vocabulary& vocab_src,
                           const Vocabulary& vocab_tgt, std::size_t max_length) {
  InstanceSet set;
  for (const auto& doc : docs) {
    if (doc.src_sentences.size() != doc.tgt_sentences.size())
      throw AlignmentError(doc.doc_id, "sentence counts differ");
    if (unit == Unit::sentence) {
      for (std::size_t k = 0; k < doc.src_sentences.size(); ++k) {
        ParallelInstance inst;
        inst.instance_id = doc.doc_id + ":" + std::to_string(k);
        inst.doc_id = doc.doc_id;
        inst.unit = unit;
        inst.source = vocab_src.encode(doc.src_sentences[k]);
        inst.target = vocab_tgt.encode(doc.tgt_sentences[k]);
        if (inst.source.size() > max_length || inst.target.size() > max_length) {
          set.skipped.push_back({doc.doc_id, inst.instance_id, inst.source.size(), inst.target.size()});
          continue;
        }
        inst.src_group_tags.assign(inst.source.size(), 1);
        inst.tgt_group_tags.assign(inst.target.size(), 1);
        set.instances.push_back(std::move(inst));
      }
    } else {
      std::vector<TokenSeq> src, tgt;
      for (const auto& s : doc.src_sentences) src.push_back(vocab_src.encode(s));
      for (const auto& s : doc.tgt_sentences) tgt.push_back(vocab_tgt.encode(s));
      ParallelInstance inst;
      inst.instance_id = doc.doc_id;
      inst.doc_id = doc.doc_id;
      inst.unit = unit;
      join_sentences(src, inst.source, inst.src_group_tags);
      join_sentences(tgt, inst.target, inst.tgt_group_tags);
      if (inst.source.size() > max_length || inst.target.size() > max_length) {
        set.skipped.push_back({doc.doc_id, inst.instance_id, inst.source.size(), inst.target.size()});
        continue;
      }
      set.instances.push_back(std::move(inst));
    }
  }
  return set;
}

std::vector<ParallelDocument> swap_roles(const std::vector<ParallelDocument>& docs) {
  std::vector<ParallelDocument> out = docs;
  for (auto& doc : out) std::swap(doc.src_sentences, doc.tgt_sentences);
  return out;
}

ParallelInstance swap_roles(const ParallelInstance& instance) {
  ParallelInstance out = instance;
  std::swap(out.source, out.target);
  std::swap(out.src_group_tags, out.tgt_group_tags);
  return out;
}

}  // namespace docaug
