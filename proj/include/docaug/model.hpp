#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "docaug/common.hpp"
#include "docaug/rng.hpp"
#include "docaug/tensor.hpp"

namespace docaug {

enum class AttentionMode { plain, grouped };
enum class AttentionKind { global, group, combined };
enum class Role { da, mt };

std::string to_string(AttentionMode mode);
std::string to_string(Role role);
AttentionMode parse_attention_mode(const std::string& text);
Role parse_role(const std::string& text);

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ffn_dim = 128;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int max_len = 1024;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  AttentionMode attention_mode = AttentionMode::grouped;
  int combined_top_layers = 1;

  int head_dim() const { return model_dim / heads; }
  // Attention used by layer `layer` (0 = bottom).
  AttentionKind layer_kind(int layer) const;
  bool layer_has_gate(int layer) const { return layer >= layers - combined_top_layers; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// y = x * w + b, with w of shape (in x out) and b of shape (1 x out).
template <class S>
struct Linear {
  Mat<S> w;
  Mat<S> b;
};

template <class S>
struct MultiHead {
  Linear<S> q, k, v, o;
};

// Gate-sum parameters: g = sigmoid([H_L, H_G] W + b), W is (2d x d).
template <class S>
struct Gate {
  Linear<S> proj;
};

template <class S>
struct LayerNormParams {
  Mat<S> gain, bias;  // (1 x d)
};

template <class S>
struct FeedForward {
  Linear<S> in, out;
};

template <class S>
struct EncoderLayer {
  MultiHead<S> self;
  std::optional<Gate<S>> self_gate;
  LayerNormParams<S> ln1;
  FeedForward<S> ffn;
  LayerNormParams<S> ln2;
};

template <class S>
struct DecoderLayer {
  MultiHead<S> self;
  std::optional<Gate<S>> self_gate;
  LayerNormParams<S> ln1;
  MultiHead<S> cross;
  std::optional<Gate<S>> cross_gate;
  LayerNormParams<S> ln2;
  FeedForward<S> ffn;
  LayerNormParams<S> ln3;
};

template <class S>
struct Weights {
  Mat<S> src_embed;  // (src_vocab x d)
  Mat<S> tgt_embed;  // (tgt_vocab x d)
  std::vector<EncoderLayer<S>> encoder;
  std::vector<DecoderLayer<S>> decoder;
  Linear<S> output;  // (d x tgt_vocab)

  // Visits every tensor in canonical order with a stable dotted name.
  template <class F>
  void visit(F&& f);
  template <class F>
  void visit(F&& f) const;

  std::size_t parameter_count() const;
};

// Allocates correctly shaped tensors filled with zeros.
template <class S>
Weights<S> zero_weights(const ModelConfig& config);

// Scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)); gains 1, biases 0.
Weights<float> init_weights(const ModelConfig& config, std::uint64_t seed);

template <class T, class S>
Weights<T> cast_weights(const Weights<S>& w);

struct ModelParams {
  ModelConfig config;
  Role role = Role::mt;
  Weights<float> weights;
};

ModelParams make_model(const ModelConfig& config, Role role, std::uint64_t seed);

// One (input, output) sequence pair as the model consumes it.
struct Example {
  TokenSeq src;
  GroupTags src_tags;
  TokenSeq tgt;  // without bos/eos
  GroupTags tgt_tags;
};

// Padded batch. Decoder inputs are [bos, y_1..y_n], labels [y_1..y_n, eos];
// position t carries the group tag of the token it predicts.
struct Batch {
  int size = 0;
  int src_len = 0;
  int tgt_len = 0;
  std::vector<TokenId> src_ids;     // size * src_len
  std::vector<std::int32_t> src_tags;
  std::vector<int> src_lengths;
  std::vector<TokenId> dec_inputs;  // size * tgt_len
  std::vector<std::int32_t> dec_tags;
  std::vector<TokenId> labels;      // -1 on padding
  std::vector<int> tgt_lengths;     // including eos

  int target_tokens() const;
  bool key_valid(int b, int j) const { return j < src_lengths[b]; }
};

Batch make_batch(std::span<const Example* const> examples);
Batch make_batch(std::span<const Example> examples);

struct LossResult {
  double loss = 0.0;      // mean (smoothed) loss per target token
  double nll_sum = 0.0;   // sum of -log p(label), no smoothing
  int tokens = 0;
};

template <class S>
struct LossAndGrads {
  LossResult result;
  Weights<S> grads;
};

// Randomness and smoothing used during training; dropout is off without an rng.
struct ForwardOptions {
  Rng* dropout_rng = nullptr;
  double label_smoothing = 0.0;
};

template <class S>
Mat<S> forward_log_probs(const ModelConfig& config, const Weights<S>& w, const Batch& batch);

template <class S>
LossAndGrads<S> loss_and_grads(const ModelConfig& config, const Weights<S>& w, const Batch& batch,
                               const ForwardOptions& options);

template <class S>
LossResult loss_only(const ModelConfig& config, const Weights<S>& w, const Batch& batch,
                     const ForwardOptions& options);

// Sum of log p(label) per sequence (teacher forcing, no dropout, no smoothing).
template <class S>
std::vector<double> sequence_log_probs(const ModelConfig& config, const Weights<S>& w, const Batch& batch);

// Encoder states of one input; used by incremental-free decoding.
struct EncodedInput {
  Mat<float> memory;  // (len x d)
  GroupTags tags;
  int length = 0;
};

EncodedInput encode(const ModelParams& params, std::span<const TokenId> ids, std::span<const std::int32_t> tags);

// Encoder hidden states after a given number of layers (0..layers). For tests.
Mat<float> encoder_states(const ModelParams& params, std::span<const TokenId> ids,
                          std::span<const std::int32_t> tags, int layers);

// Log-distribution of the next token after each prefix. Prefixes start with bos;
// prefix_tags gives the decoder tag of every prefix position.
Mat<float> next_token_log_probs(const ModelParams& params, const EncodedInput& input,
                                const std::vector<TokenSeq>& prefixes,
                                const std::vector<GroupTags>& prefix_tags);

// ---- attention building blocks on single sequences ----

// Additive mask: 0 where key j is valid, kMaskValue elsewhere; every query row equal.
template <class S>
Mat<S> key_padding_mask(int queries, const std::vector<bool>& key_valid);

// 0 where tags match, kMaskValue otherwise.
template <class S>
Mat<S> group_mask(std::span<const std::int32_t> query_tags, std::span<const std::int32_t> key_tags);

// softmax(Q K^T / sqrt(d_k) + mask) V per head on column slices, heads concatenated.
// Q, K, V are already projected; probs (if given) receives one matrix per head.
template <class S>
Mat<S> attend(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const Mat<S>& mask, int heads,
              std::vector<Mat<S>>* probs = nullptr);

template <class S>
Mat<S> global_attention(const MultiHead<S>& p, const Mat<S>& xq, const Mat<S>& xkv,
                        const std::vector<bool>& key_valid, int heads);

template <class S>
Mat<S> group_attention(const MultiHead<S>& p, const Mat<S>& xq, const Mat<S>& xkv,
                       std::span<const std::int32_t> query_tags, std::span<const std::int32_t> key_tags, int heads);


// H = H_L * g + H_G * (1 - g), g = sigmoid([H_L, H_G] W + b). Optional outputs expose H_L, H_G and g.
template <class S>
Mat<S> combined_attention(const MultiHead<S>& p, const Gate<S>& gate, const Mat<S>& xq, const Mat<S>& xkv,
                          std::span<const std::int32_t> query_tags, std::span<const std::int32_t> key_tags,
                          int heads, Mat<S>* h_local = nullptr, Mat<S>* h_global = nullptr,
                          Mat<S>* g = nullptr);

// ---- Weights::visit ----

namespace detail {
template <class W, class F>
void visit_linear(W& lin, const std::string& name, F& f) {
  f(name + ".w", lin.w);
  f(name + ".b", lin.b);
}
template <class W, class F>
void visit_mha(W& mha, const std::string& name, F& f) {
  visit_linear(mha.q, name + ".q", f);
  visit_linear(mha.k, name + ".k", f);
  visit_linear(mha.v, name + ".v", f);
  visit_linear(mha.o, name + ".o", f);
}
template <class W, class F>
void visit_ln(W& ln, const std::string& name, F& f) {
  f(name + ".gain", ln.gain);
  f(name + ".bias", ln.bias);
}
template <class Self, class F>
void visit_weights(Self& w, F& f) {
  f(std::string("src_embed"), w.src_embed);
  f(std::string("tgt_embed"), w.tgt_embed);
  for (std::size_t l = 0; l < w.encoder.size(); ++l) {
    auto& layer = w.encoder[l];
    const std::string p = "encoder." + std::to_string(l);
    visit_mha(layer.self, p + ".self", f);
    if (layer.self_gate) visit_linear(layer.self_gate->proj, p + ".self_gate", f);
    visit_ln(layer.ln1, p + ".ln1", f);
    visit_linear(layer.ffn.in, p + ".ffn.in", f);
    visit_linear(layer.ffn.out, p + ".ffn.out", f);
    visit_ln(layer.ln2, p + ".ln2", f);
  }
  for (std::size_t l = 0; l < w.decoder.size(); ++l) {
    auto& layer = w.decoder[l];
    const std::string p = "decoder." + std::to_string(l);
    visit_mha(layer.self, p + ".self", f);
    if (layer.self_gate) visit_linear(layer.self_gate->proj, p + ".self_gate", f);
    visit_ln(layer.ln1, p + ".ln1", f);
    visit_mha(layer.cross, p + ".cross", f);
    if (layer.cross_gate) visit_linear(layer.cross_gate->proj, p + ".cross_gate", f);
    visit_ln(layer.ln2, p + ".ln2", f);
    visit_linear(layer.ffn.in, p + ".ffn.in", f);
    visit_linear(layer.ffn.out, p + ".ffn.out", f);
    visit_ln(layer.ln3, p + ".ln3", f);
  }
  visit_linear(w.output, "output", f);
}
}  // namespace detail

template <class S>
template <class F>
void Weights<S>::visit(F&& f) {
  detail::visit_weights(*this, f);
}

template <class S>
template <class F>
void Weights<S>::visit(F&& f) const {
  detail::visit_weights(*this, f);
}

template <class S>
std::size_t Weights<S>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Mat<S>& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <class T, class S>
Weights<T> cast_weights(const Weights<S>& w) {
  Weights<T> out;
  out.src_embed = w.src_embed.template cast<T>();
  out.tgt_embed = w.tgt_embed.template cast<T>();
  auto lin = [](const Linear<S>& l) { return Linear<T>{l.w.template cast<T>(), l.b.template cast<T>()}; };
  auto mha = [&](const MultiHead<S>& m) { return MultiHead<T>{lin(m.q), lin(m.k), lin(m.v), lin(m.o)}; };
  auto ln = [](const LayerNormParams<S>& l) {
    return LayerNormParams<T>{l.gain.template cast<T>(), l.bias.template cast<T>()};
  };
  auto gate = [&](const std::optional<Gate<S>>& g) -> std::optional<Gate<T>> {
    if (!g) return std::nullopt;
    return Gate<T>{lin(g->proj)};
  };
  for (const auto& e : w.encoder)
    out.encoder.push_back({mha(e.self), gate(e.self_gate), ln(e.ln1), {lin(e.ffn.in), lin(e.ffn.out)}, ln(e.ln2)});
  for (const auto& d : w.decoder)
    out.decoder.push_back({mha(d.self), gate(d.self_gate), ln(d.ln1), mha(d.cross), gate(d.cross_gate), ln(d.ln2),
                           {lin(d.ffn.in), lin(d.ffn.out)}, ln(d.ln3)});
  out.output = lin(w.output);
  return out;
}

}  // namespace docaug
