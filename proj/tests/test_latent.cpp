#include <doctest.h>

#include <cmath>

#include "docaug/corpus.hpp"
#include "docaug/latent.hpp"
#include "helpers.hpp"

using namespace docaug;

namespace {

double beta_mean(double a, double b, int n, std::uint64_t seed) {
  AugmentConfig c;
  c.beta_a = a;
  c.beta_b = b;
  Rng rng(seed);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_observed_ratio(c, rng);
    REQUIRE(x >= 0.0);
    REQUIRE(x <= 1.0);
    sum += x;
  }
  return sum / n;
}

}  // namespace

TEST_SUITE("latent") {
  TEST_CASE("Beta draws match analytic means") {
    CHECK(std::abs(beta_mean(1, 1, 100000, 3) - 0.5) < 0.01);
    CHECK(std::abs(beta_mean(2, 3, 100000, 4) - 0.4) < 0.01);
  }

  TEST_CASE("Beta sampling is deterministic under a fixed seed") {
    AugmentConfig c;
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_observed_ratio(c, a) == sample_observed_ratio(c, b));
  }

  TEST_CASE("alpha 0.1 over 20 tokens covers two tokens") {
    AugmentConfig c;
    Rng rng(5);
    TokenSeq target(20, 7);
    bool saw_bigram = false, saw_unigrams = false;
    for (int i = 0; i < 500; ++i) {
      LatentValue z = sample_latent(target, 0.1, c, rng);
      REQUIRE(z.tokens_covered == 2);
      if (z.spans.size() == 1) {
        CHECK(z.spans[0].length == 2);
        saw_bigram = true;
      } else {
        REQUIRE(z.spans.size() == 2);
        CHECK(z.spans[0].length == 1);
        CHECK(z.spans[1].length == 1);
        saw_unigrams = true;
      }
    }
    CHECK(saw_bigram);
    CHECK(saw_unigrams);
  }

  TEST_CASE("zero and full budgets") {
    AugmentConfig c;
    Rng rng(6);
    TokenSeq target(12, 9);
    CHECK(sample_latent(target, 0.0, c, rng).spans.empty());
    for (int i = 0; i < 100; ++i) {
      LatentValue z = sample_latent(target, 1.0, c, rng);
      CHECK(z.tokens_covered == 12);
      CHECK(check_latent(z, target, c.ngram_max).empty());
      int next = 0;
      for (const auto& s : z.spans) {
        CHECK(s.start == next);
        next = s.start + s.length;
      }
      CHECK(next == 12);
    }
    CHECK_THROWS_AS(sample_latent(target, 1.5, c, rng), ValidationError);
    CHECK_THROWS_AS(sample_latent(TokenSeq{}, 0.5, c, rng), ValidationError);
  }

  TEST_CASE("rendering appends spans after the source") {
    // source "A B C" = ids 10 11 12; target contains "societies" = id 20 at position 1.
    TokenSeq source{10, 11, 12};
    GroupTags stags{1, 1, 1};
    TokenSeq target{30, 20, 31};
    GroupTags ttags{1, 1, 1};
    LatentValue z;
    z.spans = {{1, 1}};
    z.tokens_covered = 1;
    ExtendedInput in = render_extended_input(source, stags, z, target, ttags);
    CHECK(in.tokens == TokenSeq{10, 11, 12, Vocabulary::kSep, 20});
    CHECK(in.group_tags == GroupTags{1, 1, 1, 1, 1});
    CHECK(in.source_length == 3);

    ExtendedInput empty = render_extended_input(source, stags, LatentValue{}, target, ttags);
    CHECK(empty.tokens == source);
    CHECK(prior_input(source, stags).tokens == source);
    CHECK_FALSE(prior_input(source, stags).latent_origin.has_value());
  }

  TEST_CASE("spans render in ascending target position") {
    TokenSeq source{10, 11};
    GroupTags stags{1, 1};
    TokenSeq target;
    for (int i = 0; i < 15; ++i) target.push_back(40 + i);
    GroupTags ttags(target.size(), 1);
    LatentValue z;
    z.spans = {{3, 1}, {12, 2}};
    z.tokens_covered = 3;
    ExtendedInput in = render_extended_input(source, stags, z, target, ttags);
    CHECK(in.tokens == TokenSeq{10, 11, Vocabulary::kSep, 43, Vocabulary::kSep, 52, 53});
    CHECK(rendered_span_tokens(in) == std::vector<TokenSeq>{{43}, {52, 53}});
  }

  TEST_CASE("document unit renders spans inside their sentence group") {
    TokenSeq source{10, 11, Vocabulary::kSep, 12};
    GroupTags stags{1, 1, 1, 2};
    TokenSeq target{20, 21, Vocabulary::kSep, 22, 23};
    GroupTags ttags{1, 1, 1, 2, 2};
    LatentValue z;
    z.spans = {{0, 1}, {3, 2}};
    z.tokens_covered = 3;
    ExtendedInput in = render_extended_input(source, stags, z, target, ttags);
    CHECK(in.tokens == TokenSeq{10, 11, Vocabulary::kSep, 20, Vocabulary::kSep, 12, Vocabulary::kSep, 22, 23});
    CHECK(in.group_tags == GroupTags{1, 1, 1, 1, 1, 2, 2, 2, 2});
    CHECK(rendered_span_tokens(in) == std::vector<TokenSeq>{{20}, {22, 23}});
  }

  TEST_CASE("coverage diagnostic") {
    LatentValue z;
    CHECK(latent_coverage(z, 20) == 0.0);
    z.spans = {{0, 2}};
    z.tokens_covered = 2;
    CHECK(latent_coverage(z, 20) == doctest::Approx(0.1));
    z.spans = {{0, 3}, {3, 3}, {6, 3}, {9, 3}};
    z.tokens_covered = 12;
    CHECK(latent_coverage(z, 12) == 1.0);
  }

  TEST_CASE("property: spans are valid and rendered tokens match the target") {
    Rng rng(21);
    for (int trial = 0; trial < 2000; ++trial) {
      AugmentConfig c;
      c.ngram_min = static_cast<int>(uniform_int(rng, 1, 3));
      c.ngram_max = c.ngram_min + static_cast<int>(uniform_int(rng, 0, 3));
      const int sentences = static_cast<int>(uniform_int(rng, 1, 4));
      Example doc = test::random_document(rng, sentences, 1, 9, 40);
      const double alpha = uniform01(rng);
      LatentValue z = sample_latent(doc.tgt, alpha, c, rng);
      REQUIRE(check_latent(z, doc.tgt, c.ngram_max).empty());
      const int eligible = eligible_length(doc.tgt);
      CHECK(z.tokens_covered == std::min<int>(static_cast<int>(std::lround(alpha * eligible)), eligible));
      for (std::size_t k = 1; k < z.spans.size(); ++k)
        CHECK(z.spans[k - 1].start + z.spans[k - 1].length <= z.spans[k].start);
      ExtendedInput in = render_extended_input(doc.src, doc.src_tags, z, doc.tgt, doc.tgt_tags);
      auto rendered = rendered_span_tokens(in);
      REQUIRE(rendered.size() == z.spans.size());
      for (std::size_t k = 0; k < z.spans.size(); ++k) {
        TokenSeq expect(doc.tgt.begin() + z.spans[k].start, doc.tgt.begin() + z.spans[k].start + z.spans[k].length);
        CHECK(rendered[k] == expect);
      }
      for (std::size_t i = 1; i < in.group_tags.size(); ++i) CHECK(in.group_tags[i] >= in.group_tags[i - 1]);
    }
  }

  TEST_CASE("property: mean coverage follows the rounded budget") {
    AugmentConfig c;
    Rng rng(8);
    for (int len : {7, 13, 25}) {
      for (double alpha : {0.15, 0.4, 0.77}) {
        TokenSeq target(static_cast<std::size_t>(len), 6);
        double sum = 0.0;
        for (int i = 0; i < 10000; ++i) sum += latent_coverage(sample_latent(target, alpha, c, rng), len);
        CHECK(std::abs(sum / 10000 - std::lround(alpha * len) / static_cast<double>(len)) <= 0.02);
      }
    }
  }

  TEST_CASE("same seed, target, alpha and config give the same latent") {
    AugmentConfig c;
    TokenSeq target(30, 8);
    Rng a(77), b(77);
    for (int i = 0; i < 50; ++i) CHECK(sample_latent(target, 0.5, c, a) == sample_latent(target, 0.5, c, b));
  }

  TEST_CASE("config validation") {
    AugmentConfig c;
    CHECK_NOTHROW(c.validate());
    c.ngram_min = 3;
    c.ngram_max = 2;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = AugmentConfig{};
    c.num_samples = 0;
    CHECK_NOTHROW(c.validate());
    c.num_samples = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = AugmentConfig{};
    c.beta_a = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK(parse_mode("prior") == AugmentMode::prior);
    CHECK(parse_direction("both") == Direction::both);
    CHECK_THROWS_AS(parse_direction("sideways"), ValidationError);
  }
}
