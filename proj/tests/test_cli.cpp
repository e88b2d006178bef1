#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DOCAUG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

const char* kTinyConfig = R"(
[run]
seed = 5
[synth]
train_docs = 5
dev_docs = 2
test_docs = 2
sentences = 1
vocab = 8
min_sentence_len = 3
max_sentence_len = 5
[model]
layers = 2
heads = 2
model_dim = 16
ffn_dim = 32
[train]
max_epochs = 2
batch_size = 4
[augment]
beam = 2
replicas = 2
[ppl]
samples = 3
)";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("walkthrough from synthetic corpus to evaluation") {
    docaug::test::TempDir dir("cli");
    const std::string cfg = dir.file("run.toml");
    std::ofstream(cfg) << kTinyConfig;
    const std::string c = " --config " + cfg;
    const std::string data = dir.file("data");
    REQUIRE(run("make-synth" + c + " --out " + data) == 0);
    const std::string train = data + "/train.jsonl", dev = data + "/dev.jsonl", test = data + "/test.jsonl";
    CHECK(count_lines(train) == 5);
    REQUIRE(run("build-vocab" + c + " --corpus " + train + " --out " + dir.file("vocab.tsv")) == 0);
    const std::string v = " --vocab " + dir.file("vocab.tsv");
    REQUIRE(run("train-da" + c + v + " --corpus " + train + " --dev " + dev + " --out " + dir.file("da.ckpt")) == 0);
    REQUIRE(run("augment" + c + v + " --m 3 --corpus " + train + " --da " + dir.file("da.ckpt") + " --out " +
                dir.file("aug.jsonl")) == 0);
    CHECK(count_lines(dir.file("aug.jsonl")) == 21);
    std::ifstream aug(dir.file("aug.jsonl"));
    std::string header;
    std::getline(aug, header);
    auto meta = nlohmann::json::parse(header);
    CHECK(meta["_meta"]["M"] == 3);
    CHECK(meta["_meta"]["mode"] == "posterior");

    REQUIRE(run("train-mt" + c + v + " --augmented " + dir.file("aug.jsonl") + " --dev " + dev + " --out " +
                dir.file("mt.ckpt")) == 0);
    REQUIRE(run("evaluate" + c + v + " --ref " + test + " --model " + dir.file("mt.ckpt") + " --write-hyp " +
                dir.file("hyp.jsonl") + " --augmented " + dir.file("aug.jsonl") + " --out " +
                dir.file("report.json")) == 0);
    auto report = nlohmann::json::parse(slurp(dir.file("report.json")));
    CHECK(report.contains("s_bleu"));
    CHECK(report.contains("diversity"));
    CHECK(report.contains("deviation_mean"));
    REQUIRE(run("evaluate --ref " + test + " --hyp " + test + " --out " + dir.file("self.json")) == 0);
    CHECK(nlohmann::json::parse(slurp(dir.file("self.json")))["s_bleu"] == 100.0);
    REQUIRE(run("ppl-eval" + c + v + " --da " + dir.file("da.ckpt") + " --multiref " + data +
                "/test.multiref.jsonl --out " + dir.file("ppl.json")) == 0);
    CHECK(nlohmann::json::parse(slurp(dir.file("ppl.json")))["ppl"].get<double>() > 1.0);

    // The same command with the same seed reproduces the artifact byte for byte.
    REQUIRE(run("augment" + c + v + " --m 3 --corpus " + train + " --da " + dir.file("da.ckpt") + " --out " +
                dir.file("aug2.jsonl") + " --threads 2") == 0);
    CHECK(slurp(dir.file("aug.jsonl")) == slurp(dir.file("aug2.jsonl")));

    SUBCASE("provenance checks") {
      CHECK(run("augment" + c + v + " --m 3 --mode prior --corpus " + train + " --da " + dir.file("da.ckpt") +
                " --out " + dir.file("bad.jsonl")) == 1);
      CHECK(run("train-mt" + c + v + " --verify --set augment.m=4 --augmented " + dir.file("aug.jsonl") +
                " --out " + dir.file("bad.ckpt")) == 1);
    }
  }

  TEST_CASE("exit codes") {
    docaug::test::TempDir dir("cli-codes");
    CHECK(run("") == 1);
    CHECK(run("no-such-command") == 1);
    CHECK(run("augment --corpus /nonexistent --vocab /nonexistent --out x") == 1);
    const std::string cfg = dir.file("bad.toml");
    std::ofstream(cfg) << "[model]\nlayers = many\n";
    CHECK(run("make-synth --config " + cfg + " --out " + dir.file("d")) == 1);
    std::ofstream(dir.file("corrupt.ckpt")) << "garbage";
    std::ofstream(dir.file("v.tsv")) << "a\t1\n";
    std::ofstream(dir.file("c.jsonl")) << "";
    CHECK(run("augment --corpus " + dir.file("c.jsonl") + " --vocab " + dir.file("v.tsv") + " --da " +
              dir.file("corrupt.ckpt") + " --out " + dir.file("o.jsonl")) == 1);
  }
}
