#include <doctest.h>

#include "docaug/config.hpp"

using namespace docaug;

TEST_SUITE("config") {
  TEST_CASE("defaults resolve") {
    Settings s = RunConfig().resolve();
    CHECK(s.seed == 1);
    CHECK(s.augment.beta_a == 2.0);
    CHECK(s.augment.beta_b == 3.0);
    CHECK(s.augment.ngram_min == 1);
    CHECK(s.augment.ngram_max == 3);
    CHECK(s.model.attention_mode == AttentionMode::grouped);
    CHECK(s.replicas == 4);
  }

  TEST_CASE("sections, comments and quotes") {
    RunConfig c;
    c.parse("# top\n[model]\nlayers = 3  # trailing\nattention_mode = \"plain\"\n\n[augment]\nbeta = 1, 1\n");
    Settings s = c.resolve();
    CHECK(s.model.layers == 3);
    CHECK(s.model.attention_mode == AttentionMode::plain);
    CHECK(s.augment.beta_a == 1.0);
    CHECK(s.augment.beta_b == 1.0);
  }

  TEST_CASE("the run seed feeds every consumer") {
    RunConfig c;
    c.set("run.seed", "42");
    c.set("run.threads", "3");
    Settings s = c.resolve();
    CHECK(s.augment.seed == 42);
    CHECK(s.train.seed == 42);
    CHECK(s.synth.seed == 42);
    CHECK(s.train.threads == 3);
  }

  TEST_CASE("all problems are reported together") {
    RunConfig c;
    c.parse("[model]\nlayers = two\nbogus = 1\n[augment]\nmode = sometimes\n", "cfg");
    c.set("train.learning_rate", "fast");
    try {
      c.resolve();
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("model.layers") != std::string::npos);
      CHECK(msg.find("model.bogus") != std::string::npos);
      CHECK(msg.find("augment.mode") != std::string::npos);
      CHECK(msg.find("train.learning_rate") != std::string::npos);
      CHECK(msg.find("cfg:3") != std::string::npos);
    }
  }

  TEST_CASE("ranges are checked") {
    RunConfig c;
    c.set("synth.consistency", "1.5");
    CHECK_THROWS_AS(c.resolve(), ValidationError);
    RunConfig d;
    d.set("synth.context_weight", "-0.1");
    CHECK_THROWS_AS(d.resolve(), ValidationError);
    RunConfig e;
    e.set("augment.ngram", "3,1");
    CHECK_THROWS_AS(e.resolve(), ValidationError);
  }

  TEST_CASE("hash ignores the thread count but not result-changing keys") {
    RunConfig a, b, d;
    b.set("run.threads", "8");
    d.set("augment.m", "9");
    CHECK(a.sha256() == b.sha256());
    CHECK(a.sha256() != d.sha256());
    CHECK(a.sha256().size() == 64);
    CHECK(a.canonical().find("run.threads") == std::string::npos);
  }

  TEST_CASE("later assignments win") {
    RunConfig c;
    c.parse("[augment]\nm = 2\nm = 5\n");
    CHECK(c.resolve().augment.num_samples == 5);
    c.set("augment.m", "1");
    CHECK(c.resolve().augment.num_samples == 1);
  }
}
