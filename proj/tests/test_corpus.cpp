#include <doctest.h>

#include <sstream>

#include "docaug/corpus.hpp"
#include "helpers.hpp"

using namespace docaug;

namespace {

std::vector<ParallelDocument> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_corpus(in);
}

ParallelDocument doc(const std::string& id, std::vector<std::string> src, std::vector<std::string> tgt) {
  ParallelDocument d;
  d.doc_id = id;
  for (auto& s : src) d.src_sentences.push_back(tokenize(s));
  for (auto& s : tgt) d.tgt_sentences.push_back(tokenize(s));
  return d;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("one line is one document") {
    auto docs = parse(R"({"doc_id":"d1","src":["a b"],"tgt":["c d"]})"
                      "\n");
    REQUIRE(docs.size() == 1);
    CHECK(docs[0].doc_id == "d1");
    CHECK(docs[0].src_sentences == std::vector<Sentence>{{"a", "b"}});
    CHECK(docs[0].tgt_sentences == std::vector<Sentence>{{"c", "d"}});
  }

  TEST_CASE("misaligned sentence counts name the document") {
    try {
      parse(R"({"doc_id":"bad","src":["a","b"],"tgt":["c","d","e"]})");
      FAIL("expected an alignment error");
    } catch (const AlignmentError& e) {
      CHECK(e.doc_id() == "bad");
    }
  }

  TEST_CASE("empty input gives no documents") {
    CHECK(parse("").empty());
    CHECK(parse("\n\n").empty());
  }

  TEST_CASE("malformed lines report their line number") {
    const std::string good = R"({"doc_id":"d1","src":["a"],"tgt":["b"]})";
    try {
      parse(good + "\n{not json\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse(R"({"doc_id":"d1","src":["a"]})"), ParseError);
    CHECK_THROWS_AS(parse(R"({"doc_id":"d1","src":["  "],"tgt":["b"]})"), ValidationError);
  }

  TEST_CASE("documents keep file order") {
    std::string text;
    for (int i = 0; i < 20; ++i)
      text += R"({"doc_id":"d)" + std::to_string(i) + R"(","src":["x"],"tgt":["y"]})" + "\n";
    auto docs = parse(text);
    REQUIRE(docs.size() == 20);
    for (int i = 0; i < 20; ++i) CHECK(docs[i].doc_id == "d" + std::to_string(i));
    std::string again;
    for (const auto& d : docs) again += serialize_document(d) + "\n";
    CHECK(parse(again).size() == 20);
  }

  TEST_CASE("vocabulary frequency threshold") {
    std::vector<ParallelDocument> docs{doc("d", {"a a a b"}, {"z"})};
    Vocabulary v = build_vocab(docs, VocabSide::src, 2);
    CHECK(v.contains("a"));
    CHECK_FALSE(v.contains("b"));
    CHECK(v.encode({"b"}) == TokenSeq{Vocabulary::kUnk});
    Vocabulary all = build_vocab(docs, VocabSide::src, 1);
    CHECK(all.contains("a"));
    CHECK(all.contains("b"));
    Vocabulary joint = build_vocab(docs, VocabSide::joint, 1);
    CHECK(joint.contains("z"));
    CHECK(joint.size() == Vocabulary::kNumSpecials + 3);
  }

  TEST_CASE("vocabulary ids: specials first, then frequency and lexicographic order") {
    Vocabulary v = build_vocab({doc("d", {"b c c a a"}, {"x"})}, VocabSide::src, 1);
    CHECK(v.token(Vocabulary::kPad) == "<pad>");
    CHECK(v.token(Vocabulary::kBos) == "<bos>");
    CHECK(v.token(Vocabulary::kEos) == "<eos>");
    CHECK(v.token(Vocabulary::kUnk) == "<unk>");
    CHECK(v.token(Vocabulary::kSep) == "<sep>");
    CHECK(v.token(5) == "a");
    CHECK(v.token(6) == "c");
    CHECK(v.token(7) == "b");
    CHECK(v.serialize() == "a\t2\nc\t2\nb\t1\n");
  }

  TEST_CASE("vocabulary files are deterministic and round-trip") {
    std::vector<ParallelDocument> docs{doc("d1", {"q w e r", "w e"}, {"t y"}), doc("d2", {"e e q"}, {"y u"})};
    const std::string a = build_vocab(docs, VocabSide::joint).serialize();
    const std::string b = build_vocab(docs, VocabSide::joint).serialize();
    CHECK(a == b);
    std::istringstream in(a);
    Vocabulary loaded = Vocabulary::parse(in);
    CHECK(loaded.serialize() == a);
    for (TokenId id = 0; id < static_cast<TokenId>(loaded.size()); ++id) CHECK(loaded.id(loaded.token(id)) == id);
    std::istringstream bad("a\t1\na\t2\n");
    CHECK_THROWS_AS(Vocabulary::parse(bad), ValidationError);
  }

  TEST_CASE("encode then decode reproduces tokens with unknowns as unk") {
    Vocabulary v = build_vocab({doc("d", {"the cat sat"}, {"x"})}, VocabSide::src);
    Sentence s{"the", "dog", "sat"};
    CHECK(v.decode(v.encode(s)) == Sentence{"the", "<unk>", "sat"});
    test::TempDir tmp("vocab");
    v.save(tmp.file("v.txt"));
    CHECK(Vocabulary::load(tmp.file("v.txt")).serialize() == v.serialize());
  }

  TEST_CASE("sentence unit gives one instance per sentence pair, tags all 1") {
    auto d = doc("d", {"a b", "c d e"}, {"x y z", "w"});
    Vocabulary v = build_vocab({d}, VocabSide::joint);
    InstanceSet set = make_instances({d}, Unit::sentence, v, v);
    REQUIRE(set.instances.size() == 2);
    for (const auto& inst : set.instances) {
      CHECK(inst.unit == Unit::sentence);
      for (auto t : inst.src_group_tags) CHECK(t == 1);
      for (auto t : inst.tgt_group_tags) CHECK(t == 1);
    }
    CHECK(set.instances[1].instance_id == "d:1");
    CHECK(set.instances[1].source.size() == 3);
  }

  TEST_CASE("document unit tags tokens by sentence") {
    auto d = doc("d", {"a b", "c d e"}, {"x y z", "w"});
    Vocabulary v = build_vocab({d}, VocabSide::joint);
    InstanceSet set = make_instances({d}, Unit::document, v, v);
    REQUIRE(set.instances.size() == 1);
    const auto& inst = set.instances[0];
    CHECK(inst.tgt_group_tags == GroupTags{1, 1, 1, 1, 2});
    CHECK(inst.src_group_tags == GroupTags{1, 1, 1, 2, 2, 2});
    CHECK(inst.target[3] == Vocabulary::kSep);
  }

  TEST_CASE("over-long documents are skipped and recorded") {
    auto d = doc("long", {"a b c d", "e f g h"}, {"x", "y"});
    Vocabulary v = build_vocab({d}, VocabSide::joint);
    InstanceSet set = make_instances({d}, Unit::document, v, v, 5);
    CHECK(set.instances.empty());
    REQUIRE(set.skipped.size() == 1);
    CHECK(set.skipped[0].doc_id == "long");
    CHECK(set.skipped[0].source_length == 9);
  }

  TEST_CASE("group-tag partition reconstructs the document") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = static_cast<int>(uniform_int(rng, 1, 6));
      std::vector<TokenSeq> sentences;
      for (int k = 0; k < n; ++k)
        sentences.push_back(test::random_tokens(rng, static_cast<int>(uniform_int(rng, 1, 7)), 30));
      TokenSeq ids;
      GroupTags tags;
      join_sentences(sentences, ids, tags);
      REQUIRE(ids.size() == tags.size());
      CHECK(tags.front() == 1);
      for (std::size_t i = 1; i < tags.size(); ++i) CHECK(tags[i] - tags[i - 1] >= 0);
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] != Vocabulary::kSep) CHECK(tags[i] >= 1);
      CHECK(split_sentences(ids, tags) == sentences);
      CHECK(split_on_separators(ids) == sentences);
      CHECK(tags_from_separators(ids) == tags);
    }
  }

  TEST_CASE("swapping roles exchanges the sides") {
    auto d = doc("d", {"a b"}, {"x"});
    auto s = swap_roles(std::vector<ParallelDocument>{d});
    CHECK(s[0].src_sentences == d.tgt_sentences);
    CHECK(s[0].tgt_sentences == d.src_sentences);
    Vocabulary v = build_vocab({d}, VocabSide::joint);
    auto inst = make_instances({d}, Unit::document, v, v).instances[0];
    auto r = swap_roles(inst);
    CHECK(r.source == inst.target);
    CHECK(r.tgt_group_tags == inst.src_group_tags);
  }

  TEST_CASE("unit names parse") {
    CHECK(parse_unit("sentence") == Unit::sentence);
    CHECK(parse_unit("document") == Unit::document);
    CHECK_THROWS_AS(parse_unit("paragraph"), ValidationError);
  }
}
