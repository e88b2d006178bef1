#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "docaug/latent.hpp"
#include "docaug/model.hpp"
#include "docaug/synth.hpp"
#include "docaug/train.hpp"

namespace docaug {

struct Settings {
  std::uint64_t seed = 1;
  int threads = 1;
  Unit unit = Unit::sentence;
  std::size_t max_length = kDefaultMaxInstanceLength;
  std::size_t min_freq = 1;
  ModelConfig model;  // vocabulary sizes are filled in from the vocabulary file
  TrainConfig train;
  AugmentConfig augment;
  int replicas = 4;  // DA training records per instance
  bool resample_latent = false;
  bool drop_gold = false;
  int ppl_samples = 100;
  SynthConfig synth;
};

// Flat "section.key" settings read from a TOML-like file:
//
//   # comment
//   [model]
//   layers = 2
//   attention_mode = "grouped"
//
// Later assignments (including command-line overrides) replace earlier ones.
class RunConfig {
 public:
  RunConfig();  // every known key at its default

  void parse(const std::string& text, const std::string& origin = "<config>");
  void load(const std::string& path);
  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& values() const { return values_; }

  // Validates every key; all problems are reported together in one ValidationError.
  Settings resolve() const;

  // "key = value" lines in key order, excluding settings that cannot change results.
  std::string canonical() const;
  std::string sha256() const;

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> errors_;
};

}  // namespace docaug
