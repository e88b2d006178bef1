#include "docaug/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "docaug/hash.hpp"

namespace docaug {

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::map<std::string, std::string> default_values() {
  const Settings d;
  std::map<std::string, std::string> v;
  v["run.seed"] = std::to_string(d.seed);
  v["run.threads"] = std::to_string(d.threads);
  v["data.unit"] = to_string(d.unit);
  v["data.max_length"] = std::to_string(d.max_length);
  v["data.min_freq"] = std::to_string(d.min_freq);
  v["model.layers"] = std::to_string(d.model.layers);
  v["model.heads"] = std::to_string(d.model.heads);
  v["model.model_dim"] = std::to_string(d.model.model_dim);
  v["model.ffn_dim"] = std::to_string(d.model.ffn_dim);
  v["model.max_len"] = std::to_string(d.model.max_len);
  v["model.dropout"] = fmt(d.model.dropout);
  v["model.label_smoothing"] = fmt(d.model.label_smoothing);
  v["model.attention_mode"] = to_string(d.model.attention_mode);
  v["model.combined_top_layers"] = std::to_string(d.model.combined_top_layers);
  v["train.max_epochs"] = std::to_string(d.train.max_epochs);
  v["train.batch_size"] = std::to_string(d.train.batch_size);
  v["train.micro_batches"] = std::to_string(d.train.micro_batches);
  v["train.learning_rate"] = fmt(d.train.learning_rate);
  v["train.warmup_steps"] = std::to_string(d.train.warmup_steps);
  v["train.patience"] = std::to_string(d.train.patience);
  v["train.clip_norm"] = fmt(d.train.clip_norm);
  v["augment.beta"] = fmt(d.augment.beta_a) + "," + fmt(d.augment.beta_b);
  v["augment.ngram"] = std::to_string(d.augment.ngram_min) + "," + std::to_string(d.augment.ngram_max);
  v["augment.m"] = std::to_string(d.augment.num_samples);
  v["augment.beam"] = std::to_string(d.augment.beam_size);
  v["augment.mode"] = to_string(d.augment.mode);
  v["augment.direction"] = to_string(d.augment.direction);
  v["augment.replicas"] = std::to_string(d.replicas);
  v["augment.resample_latent"] = d.resample_latent ? "true" : "false";
  v["augment.drop_gold"] = d.drop_gold ? "true" : "false";
  v["ppl.samples"] = std::to_string(d.ppl_samples);
  v["synth.train_docs"] = std::to_string(d.synth.train_docs);
  v["synth.dev_docs"] = std::to_string(d.synth.dev_docs);
  v["synth.test_docs"] = std::to_string(d.synth.test_docs);
  v["synth.sentences"] = std::to_string(d.synth.sentences);
  v["synth.vocab"] = std::to_string(d.synth.vocab);
  v["synth.min_sentence_len"] = std::to_string(d.synth.min_sentence_len);
  v["synth.max_sentence_len"] = std::to_string(d.synth.max_sentence_len);
  v["synth.min_synonyms"] = std::to_string(d.synth.min_synonyms);
  v["synth.max_synonyms"] = std::to_string(d.synth.max_synonyms);
  v["synth.zipf"] = fmt(d.synth.zipf);
  v["synth.consistency"] = fmt(d.synth.consistency);
  v["synth.context_weight"] = fmt(d.synth.context_weight);
  v["synth.test_refs"] = std::to_string(d.synth.test_refs);
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Collects conversion problems so resolve() can report all of them at once.
class Reader {
 public:
  explicit Reader(const std::map<std::string, std::string>& v) : v_(v) {}

  template <class T>
  T integer(const std::string& key, T lo) {
    const std::string& s = v_.at(key);
    T out{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) {
      fail(key, "expected an integer, got '" + s + "'");
      return lo;
    }
    if (out < lo) {
      fail(key, "must be >= " + std::to_string(lo));
      return lo;
    }
    return out;
  }

  double real(const std::string& key) {
    const std::string& s = v_.at(key);
    try {
      std::size_t used = 0;
      double out = std::stod(s, &used);
      if (used == s.size()) return out;
    } catch (const std::exception&) {
    }
    fail(key, "expected a number, got '" + s + "'");
    return 0.0;
  }

  bool boolean(const std::string& key) {
    const std::string& s = v_.at(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    fail(key, "expected true or false, got '" + s + "'");
    return false;
  }

  template <class F>
  auto parsed(const std::string& key, F&& f) -> decltype(f(std::string())) {
    try {
      return f(v_.at(key));
    } catch (const Error& e) {
      fail(key, e.what());
      return {};
    }
  }

  std::pair<std::string, std::string> pair(const std::string& key) {
    const std::string& s = v_.at(key);
    const auto comma = s.find(',');
    if (comma == std::string::npos) {
      fail(key, "expected two comma-separated values, got '" + s + "'");
      return {"0", "0"};
    }
    return {trim(s.substr(0, comma)), trim(s.substr(comma + 1))};
  }

  void fail(const std::string& key, const std::string& msg) { errors.push_back(key + ": " + msg); }

  std::vector<std::string> errors;

 private:
  const std::map<std::string, std::string>& v_;
};

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, value] : default_values()) k.push_back(key);
    return k;
  }();
  return keys;
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    std::string body = line;
    bool quoted = false;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '"') quoted = !quoted;
      if (body[i] == '#' && !quoted) {
        body.resize(i);
        break;
      }
    }
    body = trim(body);
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') {
        errors_.push_back(where + ": unterminated section header");
        continue;
      }
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      errors_.push_back(where + ": expected key = value");
      continue;
    }
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const std::string full = section.empty() ? key : section + "." + key;
    if (!values_.count(full)) {
      errors_.push_back(where + ": unknown key '" + full + "'");
      continue;
    }
    values_[full] = value;
  }
}

void RunConfig::load(const std::string& path) { parse(read_file(path), path); }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) {
    errors_.push_back("unknown key '" + key + "'");
    return;
  }
  values_[key] = value;
}

Settings RunConfig::resolve() const {
  Reader r(values_);
  r.errors = errors_;
  Settings s;
  s.seed = r.integer<std::uint64_t>("run.seed", 0);
  s.threads = r.integer<int>("run.threads", 1);
  s.unit = r.parsed("data.unit", [](const std::string& v) { return parse_unit(v); });
  s.max_length = r.integer<std::size_t>("data.max_length", 1);
  s.min_freq = r.integer<std::size_t>("data.min_freq", 1);

  auto& m = s.model;
  m.layers = r.integer<int>("model.layers", 1);
  m.heads = r.integer<int>("model.heads", 1);
  m.model_dim = r.integer<int>("model.model_dim", 1);
  m.ffn_dim = r.integer<int>("model.ffn_dim", 1);
  m.max_len = r.integer<int>("model.max_len", 1);
  m.dropout = r.real("model.dropout");
  m.label_smoothing = r.real("model.label_smoothing");
  m.attention_mode = r.parsed("model.attention_mode", [](const std::string& v) { return parse_attention_mode(v); });
  m.combined_top_layers = r.integer<int>("model.combined_top_layers", 0);
  if (m.model_dim % m.heads != 0) r.fail("model.model_dim", "must be divisible by model.heads");
  if (m.combined_top_layers > m.layers) r.fail("model.combined_top_layers", "must be <= model.layers");
  if (m.dropout < 0 || m.dropout >= 1) r.fail("model.dropout", "must lie in [0, 1)");
  if (m.label_smoothing < 0 || m.label_smoothing >= 1) r.fail("model.label_smoothing", "must lie in [0, 1)");

  auto& t = s.train;
  t.max_epochs = r.integer<int>("train.max_epochs", 1);
  t.batch_size = r.integer<int>("train.batch_size", 1);
  t.micro_batches = r.integer<int>("train.micro_batches", 1);
  t.learning_rate = r.real("train.learning_rate");
  t.warmup_steps = r.integer<int>("train.warmup_steps", 1);
  t.patience = r.integer<int>("train.patience", 0);
  t.clip_norm = r.real("train.clip_norm");
  if (!(t.learning_rate > 0)) r.fail("train.learning_rate", "must be positive");
  if (t.clip_norm < 0) r.fail("train.clip_norm", "must be >= 0");

  auto& a = s.augment;
  {
    auto [lo, hi] = r.pair("augment.beta");
    try {
      a.beta_a = std::stod(lo);
      a.beta_b = std::stod(hi);
    } catch (const std::exception&) {
      r.fail("augment.beta", "expected two numbers");
    }
    if (!(a.beta_a > 0) || !(a.beta_b > 0)) r.fail("augment.beta", "both parameters must be positive");
  }
  {
    auto [lo, hi] = r.pair("augment.ngram");
    try {
      a.ngram_min = std::stoi(lo);
      a.ngram_max = std::stoi(hi);
    } catch (const std::exception&) {
      r.fail("augment.ngram", "expected two integers");
    }
    if (a.ngram_min < 1 || a.ngram_max < a.ngram_min) r.fail("augment.ngram", "need 1 <= lo <= hi");
  }
  a.num_samples = r.integer<int>("augment.m", 0);
  a.beam_size = r.integer<int>("augment.beam", 1);
  a.mode = r.parsed("augment.mode", [](const std::string& v) { return parse_mode(v); });
  a.direction = r.parsed("augment.direction", [](const std::string& v) { return parse_direction(v); });
  a.seed = s.seed;
  s.replicas = r.integer<int>("augment.replicas", 1);
  s.resample_latent = r.boolean("augment.resample_latent");
  s.drop_gold = r.boolean("augment.drop_gold");
  s.ppl_samples = r.integer<int>("ppl.samples", 1);
  t.seed = s.seed;
  t.threads = s.threads;

  auto& y = s.synth;
  y.train_docs = r.integer<int>("synth.train_docs", 1);
  y.dev_docs = r.integer<int>("synth.dev_docs", 0);
  y.test_docs = r.integer<int>("synth.test_docs", 0);
  y.sentences = r.integer<int>("synth.sentences", 1);
  y.vocab = r.integer<int>("synth.vocab", 1);
  y.min_sentence_len = r.integer<int>("synth.min_sentence_len", 1);
  y.max_sentence_len = r.integer<int>("synth.max_sentence_len", 1);
  y.min_synonyms = r.integer<int>("synth.min_synonyms", 1);
  y.max_synonyms = r.integer<int>("synth.max_synonyms", 1);
  y.zipf = r.real("synth.zipf");
  y.consistency = r.real("synth.consistency");
  y.context_weight = r.real("synth.context_weight");
  y.test_refs = r.integer<int>("synth.test_refs", 1);
  y.seed = s.seed;
  if (y.max_sentence_len < y.min_sentence_len) r.fail("synth.max_sentence_len", "must be >= synth.min_sentence_len");
  if (y.max_synonyms < y.min_synonyms || y.max_synonyms > 26)
    r.fail("synth.max_synonyms", "must lie in [synth.min_synonyms, 26]");
  if (y.consistency < 0 || y.consistency > 1) r.fail("synth.consistency", "must lie in [0, 1]");
  if (y.context_weight < 0 || y.context_weight > 1) r.fail("synth.context_weight", "must lie in [0, 1]");

  if (!r.errors.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(r.errors.size()) + " problem" +
                      (r.errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return s;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    if (key == "run.threads") continue;
    out += key + " = " + value + "\n";
  }
  return out;
}

std::string RunConfig::sha256() const { return sha256_hex(canonical()); }

}  // namespace docaug
