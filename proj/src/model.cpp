#include "docaug/model.hpp"

#include <algorithm>
#include <cmath>

namespace docaug {

using nlohmann::json;

std::string to_string(AttentionMode mode) { return mode == AttentionMode::plain ? "plain" : "grouped"; }
std::string to_string(Role role) { return role == Role::da ? "da" : "mt"; }

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "plain") return AttentionMode::plain;
  if (text == "grouped") return AttentionMode::grouped;
  throw ValidationError("unknown attention mode '" + text + "' (expected plain|grouped)");
}

Role parse_role(const std::string& text) {
  if (text == "da") return Role::da;
  if (text == "mt") return Role::mt;
  throw ValidationError("unknown role '" + text + "' (expected da|mt)");
}

AttentionKind ModelConfig::layer_kind(int layer) const {
  if (attention_mode == AttentionMode::plain) return AttentionKind::global;
  return layer_has_gate(layer) ? AttentionKind::combined : AttentionKind::group;
}

void ModelConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (layers < 1) fail("layers must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (model_dim < 1 || (heads > 0 && model_dim % heads != 0)) fail("model_dim must be a positive multiple of heads");
  if (ffn_dim < 1) fail("ffn_dim must be >= 1");
  if (src_vocab <= 5 || tgt_vocab <= 5) fail("vocabularies must contain tokens beyond the specials");
  if (combined_top_layers < 0 || combined_top_layers > layers) fail("require 0 <= combined_top_layers <= layers");
  if (dropout < 0 || dropout >= 1) fail("dropout must lie in [0, 1)");
  if (label_smoothing < 0 || label_smoothing >= 1) fail("label_smoothing must lie in [0, 1)");
  if (max_len < 1) fail("max_len must be >= 1");
  if (!problems.empty()) throw ValidationError("invalid model config: " + problems);
}

json ModelConfig::to_json() const {
  return json{{"layers", layers},
              {"heads", heads},
              {"model_dim", model_dim},
              {"ffn_dim", ffn_dim},
              {"src_vocab", src_vocab},
              {"tgt_vocab", tgt_vocab},
              {"max_len", max_len},
              {"dropout", dropout},
              {"label_smoothing", label_smoothing},
              {"attention_mode", to_string(attention_mode)},
              {"combined_top_layers", combined_top_layers}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.src_vocab = j.at("src_vocab").get<int>();
  c.tgt_vocab = j.at("tgt_vocab").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.label_smoothing = j.at("label_smoothing").get<double>();
  c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
  c.combined_top_layers = j.at("combined_top_layers").get<int>();
  return c;
}

template <class S>
Weights<S> zero_weights(const ModelConfig& c) {
  const int d = c.model_dim;
  auto zeros = [](int r, int cols) { return Mat<S>::Zero(r, cols); };
  auto lin = [&](int in, int out) { return Linear<S>{zeros(in, out), zeros(1, out)}; };
  auto mha = [&] { return MultiHead<S>{lin(d, d), lin(d, d), lin(d, d), lin(d, d)}; };
  auto ln = [&] { return LayerNormParams<S>{zeros(1, d), zeros(1, d)}; };
  auto gate = [&](int l) -> std::optional<Gate<S>> {
    if (!c.layer_has_gate(l)) return std::nullopt;
    return Gate<S>{lin(2 * d, d)};
  };
  Weights<S> w;
  w.src_embed = zeros(c.src_vocab, d);
  w.tgt_embed = zeros(c.tgt_vocab, d);
  for (int l = 0; l < c.layers; ++l) {
    w.encoder.push_back({mha(), gate(l), ln(), {lin(d, c.ffn_dim), lin(c.ffn_dim, d)}, ln()});
    w.decoder.push_back({mha(), gate(l), ln(), mha(), gate(l), ln(), {lin(d, c.ffn_dim), lin(c.ffn_dim, d)}, ln()});
  }
  w.output = lin(d, c.tgt_vocab);
  return w;
}

Weights<float> init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Weights<float> w = zero_weights<float>(config);
  std::uint64_t index = 0;
  w.visit([&](const std::string& name, Mat<float>& t) {
    Rng rng = make_rng(seed, Stream::init, {index++});
    const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    const bool is_ln = name.find(".ln") != std::string::npos;
    if (is_ln) {
      if (name.compare(name.size() - 5, 5, ".gain") == 0) t.setOnes();
      return;
    }
    if (is_bias) return;
    // Embeddings are (vocab x d); their fan-in is the model dimension.
    const bool embed = name == "src_embed" || name == "tgt_embed";
    const double fan_in = embed ? static_cast<double>(t.cols()) : static_cast<double>(t.rows());
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  });
  return w;
}

ModelParams make_model(const ModelConfig& config, Role role, std::uint64_t seed) {
  return ModelParams{config, role, init_weights(config, seed)};
}

int Batch::target_tokens() const {
  int n = 0;
  for (int len : tgt_lengths) n += len;
  return n;
}

Batch make_batch(std::span<const Example* const> examples) {
  Batch b;
  b.size = static_cast<int>(examples.size());
  for (const Example* ex : examples) {
    if (ex->src.empty()) throw ValidationError("empty source sequence in batch");
    if (ex->src.size() != ex->src_tags.size() || ex->tgt.size() != ex->tgt_tags.size())
      throw ValidationError("token/tag length mismatch in batch");
    b.src_len = std::max(b.src_len, static_cast<int>(ex->src.size()));
    b.tgt_len = std::max(b.tgt_len, static_cast<int>(ex->tgt.size()) + 1);
  }
  b.src_ids.assign(static_cast<std::size_t>(b.size * b.src_len), 0);
  b.src_tags.assign(b.src_ids.size(), 0);
  b.dec_inputs.assign(static_cast<std::size_t>(b.size * b.tgt_len), 0);
  b.dec_tags.assign(b.dec_inputs.size(), 0);
  b.labels.assign(b.dec_inputs.size(), -1);
  for (int i = 0; i < b.size; ++i) {
    const Example& ex = *examples[i];
    const int ns = static_cast<int>(ex.src.size());
    const int nt = static_cast<int>(ex.tgt.size());
    for (int t = 0; t < ns; ++t) {
      b.src_ids[i * b.src_len + t] = ex.src[t];
      b.src_tags[i * b.src_len + t] = ex.src_tags[t];
    }
    b.src_lengths.push_back(ns);
    const std::int32_t last_tag = nt > 0 ? ex.tgt_tags.back() : 1;
    for (int t = 0; t <= nt; ++t) {
      const int r = i * b.tgt_len + t;
      b.dec_inputs[r] = t == 0 ? 1 /*bos*/ : ex.tgt[t - 1];
      b.dec_tags[r] = t < nt ? ex.tgt_tags[t] : last_tag;
      b.labels[r] = t < nt ? ex.tgt[t] : 2 /*eos*/;
    }
    b.tgt_lengths.push_back(nt + 1);
  }
  return b;
}

Batch make_batch(std::span<const Example> examples) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(examples.size());
  for (const auto& ex : examples) ptrs.push_back(&ex);
  return make_batch(std::span<const Example* const>(ptrs));
}

namespace {

template <class S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

constexpr double kLayerNormEps = 1e-5;

template <class S>
Mat<S> linear(const Linear<S>& p, const Mat<S>& x) {
  Mat<S> y(x.rows(), p.w.cols());
  y.noalias() = x * p.w;
  y.rowwise() += p.b.row(0);
  return y;
}

// Accumulates parameter gradients and returns dL/dx.
template <class S>
Mat<S> linear_backward(const Linear<S>& p, const Mat<S>& x, const Mat<S>& dy, Linear<S>& g) {
  g.w.noalias() += x.transpose() * dy;
  g.b += dy.colwise().sum();
  Mat<S> dx(dy.rows(), p.w.rows());
  dx.noalias() = dy * p.w.transpose();
  return dx;
}

template <class S>
void softmax_rows(Mat<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

// Attention geometry: query block b of Tq rows attends key/value block kv_index[b] of Tk rows.
template <class S>
struct Site {
  int blocks = 0;
  int tq = 0;
  int tk = 0;
  std::vector<int> kv_index;
  std::vector<Mat<S>> mask_global;
  std::vector<Mat<S>> mask_group;
};

template <class S>
void attention_core(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const Site<S>& site,
                    const std::vector<Mat<S>>& masks, int heads, std::vector<Mat<S>>* probs, Mat<S>& ctx) {
  const int d = static_cast<int>(q.cols());
  const int dk = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));
  ctx.setZero(q.rows(), d);
  if (probs) probs->resize(static_cast<std::size_t>(site.blocks * heads));
  Mat<S> sc;
  for (int b = 0; b < site.blocks; ++b) {
    const int mb = site.kv_index[b];
    for (int h = 0; h < heads; ++h) {
      auto qb = q.block(b * site.tq, h * dk, site.tq, dk);
      auto kb = k.block(mb * site.tk, h * dk, site.tk, dk);
      auto vb = v.block(mb * site.tk, h * dk, site.tk, dk);
      sc.noalias() = qb * kb.transpose();
      sc *= scale;
      sc += masks[b];
      softmax_rows(sc);
      ctx.block(b * site.tq, h * dk, site.tq, dk).noalias() = sc * vb;
      if (probs) (*probs)[b * heads + h] = sc;
    }
  }
}

template <class S>
void attention_core_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const Site<S>& site,
                             const std::vector<Mat<S>>& probs, const Mat<S>& dctx, int heads, Mat<S>& dq,
                             Mat<S>& dk_out, Mat<S>& dv) {
  const int d = static_cast<int>(q.cols());
  const int dk = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));
  Mat<S> dp, ds;
  ColVec<S> rowdot;
  for (int b = 0; b < site.blocks; ++b) {
    const int mb = site.kv_index[b];
    for (int h = 0; h < heads; ++h) {
      const Mat<S>& p = probs[b * heads + h];
      auto qb = q.block(b * site.tq, h * dk, site.tq, dk);
      auto kb = k.block(mb * site.tk, h * dk, site.tk, dk);
      auto vb = v.block(mb * site.tk, h * dk, site.tk, dk);
      auto dc = dctx.block(b * site.tq, h * dk, site.tq, dk);
      dv.block(mb * site.tk, h * dk, site.tk, dk).noalias() += p.transpose() * dc;
      dp.noalias() = dc * vb.transpose();
      rowdot = p.cwiseProduct(dp).rowwise().sum();
      ds = p.cwiseProduct(dp.colwise() - rowdot);
      ds *= scale;
      dq.block(b * site.tq, h * dk, site.tq, dk).noalias() += ds * kb;
      dk_out.block(mb * site.tk, h * dk, site.tk, dk).noalias() += ds.transpose() * qb;
    }
  }
}

template <class S>
struct AttnCache {
  AttentionKind kind = AttentionKind::global;
  Mat<S> xq, xkv, q, k, v;
  std::vector<Mat<S>> p_local, p_global;
  Mat<S> ctx_local, ctx_global, h_local, h_global, gate_in, g;
};

template <class S>
Mat<S> attention_forward(const MultiHead<S>& p, const Gate<S>* gate, AttentionKind kind, const Mat<S>& xq,
                         const Mat<S>& xkv, const Site<S>& site, int heads, AttnCache<S>* cache) {
  AttnCache<S> local;
  AttnCache<S>& c = cache ? *cache : local;
  const bool keep = cache != nullptr;
  c.kind = kind;
  c.q = linear(p.q, xq);
  c.k = linear(p.k, xkv);
  c.v = linear(p.v, xkv);
  if (keep) {
    c.xq = xq;
    c.xkv = xkv;
  }
  if (kind == AttentionKind::global) {
    attention_core(c.q, c.k, c.v, site, site.mask_global, heads, keep ? &c.p_global : nullptr, c.ctx_global);
    return linear(p.o, c.ctx_global);
  }
  attention_core(c.q, c.k, c.v, site, site.mask_group, heads, keep ? &c.p_local : nullptr, c.ctx_local);
  if (kind == AttentionKind::group) return linear(p.o, c.ctx_local);
  attention_core(c.q, c.k, c.v, site, site.mask_global, heads, keep ? &c.p_global : nullptr, c.ctx_global);
  c.h_local = linear(p.o, c.ctx_local);
  c.h_global = linear(p.o, c.ctx_global);
  const auto d = c.h_local.cols();
  c.gate_in.resize(c.h_local.rows(), 2 * d);
  c.gate_in.leftCols(d) = c.h_local;
  c.gate_in.rightCols(d) = c.h_global;
  c.g = linear(gate->proj, c.gate_in);
  c.g = (S(1) / (S(1) + (-c.g.array()).exp())).matrix();
  Mat<S> out = c.h_global;
  out.array() += c.g.array() * (c.h_local.array() - c.h_global.array());
  return out;
}

template <class S>
void attention_backward(const MultiHead<S>& p, const Gate<S>* gate, const AttnCache<S>& c, const Site<S>& site,
                        int heads, const Mat<S>& dout, MultiHead<S>& gp, Gate<S>* ggate, Mat<S>& dxq, Mat<S>& dxkv) {
  Mat<S> dq = Mat<S>::Zero(c.q.rows(), c.q.cols());
  Mat<S> dk = Mat<S>::Zero(c.k.rows(), c.k.cols());
  Mat<S> dv = Mat<S>::Zero(c.v.rows(), c.v.cols());
  if (c.kind == AttentionKind::global) {
    Mat<S> dctx = linear_backward(p.o, c.ctx_global, dout, gp.o);
    attention_core_backward(c.q, c.k, c.v, site, c.p_global, dctx, heads, dq, dk, dv);
  } else if (c.kind == AttentionKind::group) {
    Mat<S> dctx = linear_backward(p.o, c.ctx_local, dout, gp.o);
    attention_core_backward(c.q, c.k, c.v, site, c.p_local, dctx, heads, dq, dk, dv);
  } else {
    const auto d = c.h_local.cols();
    Mat<S> dh_local = (dout.array() * c.g.array()).matrix();
    Mat<S> dh_global = (dout.array() * (S(1) - c.g.array())).matrix();
    Mat<S> dz = (dout.array() * (c.h_local.array() - c.h_global.array()) * c.g.array() * (S(1) - c.g.array())).matrix();
    Mat<S> dgate_in = linear_backward(gate->proj, c.gate_in, dz, ggate->proj);
    dh_local += dgate_in.leftCols(d);
    dh_global += dgate_in.rightCols(d);
    Mat<S> dctx_l = linear_backward(p.o, c.ctx_local, dh_local, gp.o);
    Mat<S> dctx_g = linear_backward(p.o, c.ctx_global, dh_global, gp.o);
    attention_core_backward(c.q, c.k, c.v, site, c.p_local, dctx_l, heads, dq, dk, dv);
    attention_core_backward(c.q, c.k, c.v, site, c.p_global, dctx_g, heads, dq, dk, dv);
  }
  dxq = linear_backward(p.q, c.xq, dq, gp.q);
  dxkv = linear_backward(p.k, c.xkv, dk, gp.k);
  dxkv += linear_backward(p.v, c.xkv, dv, gp.v);
}

template <class S>
struct LnCache {
  Mat<S> xhat;
  ColVec<S> inv_std;
};

template <class S>
Mat<S> layer_norm(const LayerNormParams<S>& p, const Mat<S>& x, LnCache<S>* cache) {
  const auto d = static_cast<S>(x.cols());
  ColVec<S> mean = x.rowwise().sum() / d;
  Mat<S> xc = x.colwise() - mean;
  ColVec<S> var = xc.array().square().rowwise().sum() / d;
  ColVec<S> inv = (var.array() + static_cast<S>(kLayerNormEps)).rsqrt();
  Mat<S> xhat = (xc.array().colwise() * inv.array()).matrix();
  Mat<S> y = (xhat.array().rowwise() * p.gain.row(0).array()).matrix();
  y.rowwise() += p.bias.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

template <class S>
Mat<S> layer_norm_backward(const LayerNormParams<S>& p, const LnCache<S>& c, const Mat<S>& dy,
                           LayerNormParams<S>& g) {
  g.gain += dy.cwiseProduct(c.xhat).colwise().sum();
  g.bias += dy.colwise().sum();
  const auto d = static_cast<S>(dy.cols());
  Mat<S> dxhat = (dy.array().rowwise() * p.gain.row(0).array()).matrix();
  ColVec<S> m1 = dxhat.rowwise().sum() / d;
  ColVec<S> m2 = dxhat.cwiseProduct(c.xhat).rowwise().sum() / d;
  Mat<S> dx = dxhat.colwise() - m1;
  dx -= (c.xhat.array().colwise() * m2.array()).matrix();
  dx = (dx.array().colwise() * c.inv_std.array()).matrix();
  return dx;
}

template <class S>
struct FfnCache {
  Mat<S> x, pre, h;
};

template <class S>
Mat<S> feed_forward(const FeedForward<S>& p, const Mat<S>& x, FfnCache<S>* cache) {
  Mat<S> pre = linear(p.in, x);
  Mat<S> h = pre.cwiseMax(S(0));
  Mat<S> y = linear(p.out, h);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->h = std::move(h);
  }
  return y;
}

template <class S>
Mat<S> feed_forward_backward(const FeedForward<S>& p, const FfnCache<S>& c, const Mat<S>& dy, FeedForward<S>& g) {
  Mat<S> dh = linear_backward(p.out, c.h, dy, g.out);
  dh = (c.pre.array() > S(0)).select(dh, S(0));
  return linear_backward(p.in, c.x, dh, g.in);
}

template <class S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<S> m(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < rate ? S(0) : keep;
  return m;
}

template <class S>
struct EncCache {
  AttnCache<S> attn;
  Mat<S> drop1, drop2;
  LnCache<S> ln1, ln2;
  FfnCache<S> ffn;
};

template <class S>
struct DecCache {
  AttnCache<S> self, cross;
  Mat<S> drop1, drop2, drop3;
  LnCache<S> ln1, ln2, ln3;
  FfnCache<S> ffn;
};

struct SeqView {
  int blocks = 0;
  int len = 0;
  const TokenId* ids = nullptr;
  const std::int32_t* tags = nullptr;
  const int* lengths = nullptr;
};

template <class S>
class Network {
 public:
  Network(const ModelConfig& config, const Weights<S>& w, Rng* dropout_rng)
      : c_(config), w_(w), rng_(dropout_rng) {}

  bool uses_global() const {
    for (int l = 0; l < c_.layers; ++l)
      if (c_.layer_kind(l) != AttentionKind::group) return true;
    return false;
  }
  bool uses_group() const { return c_.attention_mode == AttentionMode::grouped; }

  Site<S> self_site(const SeqView& s, bool causal) const {
    Site<S> site;
    site.blocks = s.blocks;
    site.tq = site.tk = s.len;
    for (int b = 0; b < s.blocks; ++b) site.kv_index.push_back(b);
    const S neg = static_cast<S>(kMaskValue);
    for (int b = 0; b < s.blocks; ++b) {
      const int len = s.lengths[b];
      const std::int32_t* tags = s.tags + static_cast<std::ptrdiff_t>(b) * s.len;
      Mat<S> base = Mat<S>::Zero(s.len, s.len);
      for (int i = 0; i < s.len; ++i)
        for (int j = 0; j < s.len; ++j)
          if (j >= len || (causal && j > i)) base(i, j) = neg;
      if (uses_group()) {
        Mat<S> grp = base;
        for (int i = 0; i < s.len; ++i)
          for (int j = 0; j < s.len; ++j)
            if (tags[i] != tags[j]) grp(i, j) = neg;
        site.mask_group.push_back(std::move(grp));
      }
      if (uses_global()) site.mask_global.push_back(std::move(base));
    }
    return site;
  }

  Site<S> cross_site(const SeqView& q, const SeqView& mem, const std::vector<int>& kv_index) const {
    Site<S> site;
    site.blocks = q.blocks;
    site.tq = q.len;
    site.tk = mem.len;
    site.kv_index = kv_index;
    const S neg = static_cast<S>(kMaskValue);
    for (int b = 0; b < q.blocks; ++b) {
      const int mb = kv_index[b];
      const int mlen = mem.lengths[mb];
      const std::int32_t* qt = q.tags + static_cast<std::ptrdiff_t>(b) * q.len;
      const std::int32_t* kt = mem.tags + static_cast<std::ptrdiff_t>(mb) * mem.len;
      Mat<S> base = Mat<S>::Zero(q.len, mem.len);
      for (int i = 0; i < q.len; ++i)
        for (int j = mlen; j < mem.len; ++j) base(i, j) = neg;
      if (uses_group()) {
        Mat<S> grp = base;
        for (int i = 0; i < q.len; ++i)
          for (int j = 0; j < mem.len; ++j)
            if (qt[i] != kt[j]) grp(i, j) = neg;
        site.mask_group.push_back(std::move(grp));
      }
      if (uses_global()) site.mask_global.push_back(std::move(base));
    }
    return site;
  }

  Mat<S> embed(const Mat<S>& table, const SeqView& s, Mat<S>* drop) const {
    const int d = c_.model_dim;
    Mat<S> x(static_cast<Eigen::Index>(s.blocks) * s.len, d);
    const S scale = std::sqrt(static_cast<S>(d));
    for (int t = 0; t < s.len; ++t) {
      for (int i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
        const S sv = static_cast<S>(std::sin(t * freq));
        const S cv = static_cast<S>(std::cos(t * freq));
        for (int b = 0; b < s.blocks; ++b) {
          const auto r = static_cast<Eigen::Index>(b) * s.len + t;
          x(r, i) = sv;
          if (i + 1 < d) x(r, i + 1) = cv;
        }
      }
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const TokenId id = s.ids[r];
      if (id < 0 || id >= table.rows()) throw ValidationError("token id " + std::to_string(id) + " outside model vocabulary");
      x.row(r) += table.row(id) * scale;
    }
    apply_dropout(x, drop);
    return x;
  }

  void embed_backward(const SeqView& s, const Mat<S>& dx, const Mat<S>* drop, Mat<S>& gtable) const {
    const S scale = std::sqrt(static_cast<S>(c_.model_dim));
    for (Eigen::Index r = 0; r < dx.rows(); ++r) {
      if (drop && drop->size())
        gtable.row(s.ids[r]) += dx.row(r).cwiseProduct(drop->row(r)) * scale;
      else
        gtable.row(s.ids[r]) += dx.row(r) * scale;
    }
  }

  void apply_dropout(Mat<S>& x, Mat<S>* mask) const {
    if (!rng_ || c_.dropout <= 0) return;
    Mat<S> m = dropout_mask<S>(x.rows(), x.cols(), c_.dropout, *rng_);
    x.array() *= m.array();
    if (mask) *mask = std::move(m);
  }

  static Mat<S> backprop_dropout(const Mat<S>& d, const Mat<S>& mask) {
    if (mask.size() == 0) return d;
    return d.cwiseProduct(mask);
  }

  Mat<S> encoder_layer(int l, const Mat<S>& x, const Site<S>& site, EncCache<S>* cache) const {
    const auto& p = w_.encoder[l];
    const Gate<S>* gate = p.self_gate ? &*p.self_gate : nullptr;
    Mat<S> a = attention_forward(p.self, gate, c_.layer_kind(l), x, x, site, c_.heads, cache ? &cache->attn : nullptr);
    apply_dropout(a, cache ? &cache->drop1 : nullptr);
    a += x;
    Mat<S> x1 = layer_norm(p.ln1, a, cache ? &cache->ln1 : nullptr);
    Mat<S> f = feed_forward(p.ffn, x1, cache ? &cache->ffn : nullptr);
    apply_dropout(f, cache ? &cache->drop2 : nullptr);
    f += x1;
    return layer_norm(p.ln2, f, cache ? &cache->ln2 : nullptr);
  }

  Mat<S> encoder_layer_backward(int l, const EncCache<S>& cache, const Site<S>& site, const Mat<S>& dout,
                                EncoderLayer<S>& g) const {
    const auto& p = w_.encoder[l];
    Mat<S> dr2 = layer_norm_backward(p.ln2, cache.ln2, dout, g.ln2);
    Mat<S> dx1 = dr2 + feed_forward_backward(p.ffn, cache.ffn, backprop_dropout(dr2, cache.drop2), g.ffn);
    Mat<S> dr1 = layer_norm_backward(p.ln1, cache.ln1, dx1, g.ln1);
    Mat<S> dxq, dxkv;
    const Gate<S>* gate = p.self_gate ? &*p.self_gate : nullptr;
    Gate<S>* ggate = g.self_gate ? &*g.self_gate : nullptr;
    attention_backward(p.self, gate, cache.attn, site, c_.heads, backprop_dropout(dr1, cache.drop1), g.self, ggate,
                       dxq, dxkv);
    dr1 += dxq;
    dr1 += dxkv;
    return dr1;
  }

  Mat<S> decoder_layer(int l, const Mat<S>& y, const Mat<S>& mem, const Site<S>& self_site,
                       const Site<S>& cross_site, DecCache<S>* cache) const {
    const auto& p = w_.decoder[l];
    const AttentionKind kind = c_.layer_kind(l);
    const Gate<S>* sg = p.self_gate ? &*p.self_gate : nullptr;
    const Gate<S>* cg = p.cross_gate ? &*p.cross_gate : nullptr;
    Mat<S> a = attention_forward(p.self, sg, kind, y, y, self_site, c_.heads, cache ? &cache->self : nullptr);
    apply_dropout(a, cache ? &cache->drop1 : nullptr);
    a += y;
    Mat<S> y1 = layer_norm(p.ln1, a, cache ? &cache->ln1 : nullptr);
    Mat<S> x = attention_forward(p.cross, cg, kind, y1, mem, cross_site, c_.heads, cache ? &cache->cross : nullptr);
    apply_dropout(x, cache ? &cache->drop2 : nullptr);
    x += y1;
    Mat<S> y2 = layer_norm(p.ln2, x, cache ? &cache->ln2 : nullptr);
    Mat<S> f = feed_forward(p.ffn, y2, cache ? &cache->ffn : nullptr);
    apply_dropout(f, cache ? &cache->drop3 : nullptr);
    f += y2;
    return layer_norm(p.ln3, f, cache ? &cache->ln3 : nullptr);
  }

  Mat<S> decoder_layer_backward(int l, const DecCache<S>& cache, const Site<S>& self_site,
                                const Site<S>& cross_site, const Mat<S>& dout, DecoderLayer<S>& g,
                                Mat<S>& dmem) const {
    const auto& p = w_.decoder[l];
    const Gate<S>* sg = p.self_gate ? &*p.self_gate : nullptr;
    const Gate<S>* cg = p.cross_gate ? &*p.cross_gate : nullptr;
    Gate<S>* gsg = g.self_gate ? &*g.self_gate : nullptr;
    Gate<S>* gcg = g.cross_gate ? &*g.cross_gate : nullptr;
    Mat<S> dr3 = layer_norm_backward(p.ln3, cache.ln3, dout, g.ln3);
    Mat<S> dy2 = dr3 + feed_forward_backward(p.ffn, cache.ffn, backprop_dropout(dr3, cache.drop3), g.ffn);
    Mat<S> dr2 = layer_norm_backward(p.ln2, cache.ln2, dy2, g.ln2);
    Mat<S> dq, dkv;
    attention_backward(p.cross, cg, cache.cross, cross_site, c_.heads, backprop_dropout(dr2, cache.drop2), g.cross,
                       gcg, dq, dkv);
    dmem += dkv;
    Mat<S> dy1 = dr2 + dq;
    Mat<S> dr1 = layer_norm_backward(p.ln1, cache.ln1, dy1, g.ln1);
    Mat<S> dxq, dxkv;
    attention_backward(p.self, sg, cache.self, self_site, c_.heads, backprop_dropout(dr1, cache.drop1), g.self, gsg,
                       dxq, dxkv);
    dr1 += dxq;
    dr1 += dxkv;
    return dr1;
  }

  static void check_finite(const Mat<S>& m, int layer, const char* where) {
    if (!m.allFinite()) throw NumericFault(layer, where);
  }

  // Runs the encoder; caches are filled when non-null.
  Mat<S> run_encoder(const SeqView& src, const Site<S>& site, std::vector<EncCache<S>>* caches, Mat<S>* embed_drop,
                     int upto = -1) const {
    Mat<S> x = embed(w_.src_embed, src, embed_drop);
    const int n = upto < 0 ? c_.layers : upto;
    if (caches) caches->resize(static_cast<std::size_t>(n));
    for (int l = 0; l < n; ++l) {
      x = encoder_layer(l, x, site, caches ? &(*caches)[l] : nullptr);
      check_finite(x, l, "encoder");
    }
    return x;
  }

  Mat<S> run_decoder(const SeqView& dec, const Mat<S>& mem, const Site<S>& self_site, const Site<S>& cross_site,
                     std::vector<DecCache<S>>* caches, Mat<S>* embed_drop) const {
    Mat<S> y = embed(w_.tgt_embed, dec, embed_drop);
    if (caches) caches->resize(static_cast<std::size_t>(c_.layers));
    for (int l = 0; l < c_.layers; ++l) {
      y = decoder_layer(l, y, mem, self_site, cross_site, caches ? &(*caches)[l] : nullptr);
      check_finite(y, l, "decoder");
    }
    return y;
  }

  Mat<S> log_probs(const Mat<S>& y) const {
    Mat<S> logits = linear(w_.output, y);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      auto row = logits.row(r);
      const S mx = row.maxCoeff();
      const S lse = mx + std::log((row.array() - mx).exp().sum());
      row.array() -= lse;
    }
    return logits;
  }

  const ModelConfig& c_;
  const Weights<S>& w_;
  Rng* rng_;
};

SeqView src_view(const Batch& b) {
  return {b.size, b.src_len, b.src_ids.data(), b.src_tags.data(), b.src_lengths.data()};
}
SeqView dec_view(const Batch& b) {
  return {b.size, b.tgt_len, b.dec_inputs.data(), b.dec_tags.data(), b.tgt_lengths.data()};
}

std::vector<int> identity_index(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

template <class S>
LossResult compute_loss(const Mat<S>& logp, const Batch& batch, double smoothing, Mat<S>* dlogits) {
  LossResult r;
  const auto V = logp.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    const TokenId y = batch.labels[i];
    if (y < 0) continue;
    const auto row = logp.row(static_cast<Eigen::Index>(i));
    const double nll = -static_cast<double>(row(y));
    const double uniform = -static_cast<double>(row.sum()) / static_cast<double>(V);
    total += (1.0 - smoothing) * nll + smoothing * uniform;
    r.nll_sum += nll;
    ++r.tokens;
  }
  r.loss = r.tokens ? total / r.tokens : 0.0;
  if (dlogits) {
    dlogits->setZero(logp.rows(), V);
    if (r.tokens == 0) return r;
    const S inv = static_cast<S>(1.0 / r.tokens);
    const S eps_v = static_cast<S>(smoothing / static_cast<double>(V));
    const S on = static_cast<S>(1.0 - smoothing);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      const TokenId y = batch.labels[i];
      if (y < 0) continue;
      const auto ri = static_cast<Eigen::Index>(i);
      auto drow = dlogits->row(ri);
      drow = logp.row(ri).array().exp().matrix();
      drow.array() -= eps_v;
      drow(y) -= on;
      drow *= inv;
    }
  }
  return r;
}

}  // namespace

template <class S>
Mat<S> forward_log_probs(const ModelConfig& config, const Weights<S>& w, const Batch& batch) {
  Network<S> net(config, w, nullptr);
  const SeqView src = src_view(batch);
  const SeqView dec = dec_view(batch);
  Site<S> enc_site = net.self_site(src, false);
  Mat<S> mem = net.run_encoder(src, enc_site, nullptr, nullptr);
  Site<S> self_site = net.self_site(dec, true);
  Site<S> cross = net.cross_site(dec, src, identity_index(batch.size));
  return net.log_probs(net.run_decoder(dec, mem, self_site, cross, nullptr, nullptr));
}

template <class S>
LossResult loss_only(const ModelConfig& config, const Weights<S>& w, const Batch& batch, const ForwardOptions& options) {
  Network<S> net(config, w, options.dropout_rng);
  const SeqView src = src_view(batch);
  const SeqView dec = dec_view(batch);
  Site<S> enc_site = net.self_site(src, false);
  Mat<S> mem = net.run_encoder(src, enc_site, nullptr, nullptr);
  Site<S> self_site = net.self_site(dec, true);
  Site<S> cross = net.cross_site(dec, src, identity_index(batch.size));
  Mat<S> logp = net.log_probs(net.run_decoder(dec, mem, self_site, cross, nullptr, nullptr));
  return compute_loss<S>(logp, batch, options.label_smoothing, nullptr);
}

template <class S>
LossAndGrads<S> loss_and_grads(const ModelConfig& config, const Weights<S>& w, const Batch& batch,
                               const ForwardOptions& options) {
  Network<S> net(config, w, options.dropout_rng);
  const SeqView src = src_view(batch);
  const SeqView dec = dec_view(batch);
  std::vector<EncCache<S>> enc_caches;
  std::vector<DecCache<S>> dec_caches;
  Mat<S> src_drop, dec_drop;

  Site<S> enc_site = net.self_site(src, false);
  Mat<S> mem = net.run_encoder(src, enc_site, &enc_caches, &src_drop);
  Site<S> self_site = net.self_site(dec, true);
  Site<S> cross = net.cross_site(dec, src, identity_index(batch.size));
  Mat<S> top = net.run_decoder(dec, mem, self_site, cross, &dec_caches, &dec_drop);
  Mat<S> logp = net.log_probs(top);

  LossAndGrads<S> out;
  out.grads = zero_weights<S>(config);
  Mat<S> dlogits;
  out.result = compute_loss<S>(logp, batch, options.label_smoothing, &dlogits);
  if (!std::isfinite(out.result.loss)) throw NumericFault(config.layers - 1, "output");

  Weights<S>& g = out.grads;
  Mat<S> dy = linear_backward(w.output, top, dlogits, g.output);
  Mat<S> dmem = Mat<S>::Zero(mem.rows(), mem.cols());
  for (int l = config.layers - 1; l >= 0; --l)
    dy = net.decoder_layer_backward(l, dec_caches[l], self_site, cross, dy, g.decoder[l], dmem);
  net.embed_backward(dec, dy, &dec_drop, g.tgt_embed);
  Mat<S> dx = std::move(dmem);
  for (int l = config.layers - 1; l >= 0; --l)
    dx = net.encoder_layer_backward(l, enc_caches[l], enc_site, dx, g.encoder[l]);
  net.embed_backward(src, dx, &src_drop, g.src_embed);
  return out;
}

template <class S>
std::vector<double> sequence_log_probs(const ModelConfig& config, const Weights<S>& w, const Batch& batch) {
  Mat<S> logp = forward_log_probs(config, w, batch);
  std::vector<double> out(static_cast<std::size_t>(batch.size), 0.0);
  for (int b = 0; b < batch.size; ++b)
    for (int t = 0; t < batch.tgt_len; ++t) {
      const auto r = static_cast<std::size_t>(b * batch.tgt_len + t);
      const TokenId y = batch.labels[r];
      if (y >= 0) out[b] += static_cast<double>(logp(static_cast<Eigen::Index>(r), y));
    }
  return out;
}

EncodedInput encode(const ModelParams& params, std::span<const TokenId> ids, std::span<const std::int32_t> tags) {
  if (ids.empty() || ids.size() != tags.size()) throw ValidationError("encode: bad input");
  Network<float> net(params.config, params.weights, nullptr);
  const int len = static_cast<int>(ids.size());
  SeqView src{1, len, ids.data(), tags.data(), &len};
  Site<float> site = net.self_site(src, false);
  EncodedInput out;
  out.memory = net.run_encoder(src, site, nullptr, nullptr);
  out.tags.assign(tags.begin(), tags.end());
  out.length = len;
  return out;
}

Mat<float> encoder_states(const ModelParams& params, std::span<const TokenId> ids, std::span<const std::int32_t> tags,
                          int layers) {
  Network<float> net(params.config, params.weights, nullptr);
  const int len = static_cast<int>(ids.size());
  SeqView src{1, len, ids.data(), tags.data(), &len};
  Site<float> site = net.self_site(src, false);
  return net.run_encoder(src, site, nullptr, nullptr, layers);
}

Mat<float> next_token_log_probs(const ModelParams& params, const EncodedInput& input,
                                const std::vector<TokenSeq>& prefixes, const std::vector<GroupTags>& prefix_tags) {
  const int n = static_cast<int>(prefixes.size());
  int len = 0;
  for (const auto& p : prefixes) len = std::max(len, static_cast<int>(p.size()));
  std::vector<TokenId> ids(static_cast<std::size_t>(n * len), 0);
  std::vector<std::int32_t> tags(ids.size(), 0);
  std::vector<int> lengths;
  for (int b = 0; b < n; ++b) {
    for (std::size_t t = 0; t < prefixes[b].size(); ++t) {
      ids[b * len + t] = prefixes[b][t];
      tags[b * len + t] = prefix_tags[b][t];
    }
    lengths.push_back(static_cast<int>(prefixes[b].size()));
  }
  Network<float> net(params.config, params.weights, nullptr);
  SeqView dec{n, len, ids.data(), tags.data(), lengths.data()};
  SeqView mem{1, input.length, nullptr, input.tags.data(), &input.length};
  Site<float> self_site = net.self_site(dec, true);
  Site<float> cross = net.cross_site(dec, mem, std::vector<int>(static_cast<std::size_t>(n), 0));
  Mat<float> top = net.run_decoder(dec, input.memory, self_site, cross, nullptr, nullptr);
  Mat<float> last(n, top.cols());
  for (int b = 0; b < n; ++b) last.row(b) = top.row(static_cast<Eigen::Index>(b) * len + lengths[b] - 1);
  return net.log_probs(last);
}

// ---- single-sequence attention API ----

template <class S>
Mat<S> key_padding_mask(int queries, const std::vector<bool>& key_valid) {
  Mat<S> m = Mat<S>::Zero(queries, static_cast<Eigen::Index>(key_valid.size()));
  for (std::size_t j = 0; j < key_valid.size(); ++j)
    if (!key_valid[j]) m.col(static_cast<Eigen::Index>(j)).setConstant(static_cast<S>(kMaskValue));
  return m;
}

template <class S>
Mat<S> group_mask(std::span<const std::int32_t> query_tags, std::span<const std::int32_t> key_tags) {
  Mat<S> m(static_cast<Eigen::Index>(query_tags.size()), static_cast<Eigen::Index>(key_tags.size()));
  for (std::size_t i = 0; i < query_tags.size(); ++i)
    for (std::size_t j = 0; j < key_tags.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          query_tags[i] == key_tags[j] ? S(0) : static_cast<S>(kMaskValue);
  return m;
}

namespace {
template <class S>
Site<S> single_site(const Mat<S>& xq, const Mat<S>& xkv) {
  Site<S> site;
  site.blocks = 1;
  site.tq = static_cast<int>(xq.rows());
  site.tk = static_cast<int>(xkv.rows());
  site.kv_index = {0};
  return site;
}
}  // namespace

template <class S>
Mat<S> attend(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const Mat<S>& mask, int heads,
              std::vector<Mat<S>>* probs) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.cols() % heads != 0)
    throw ValidationError("attend: inconsistent shapes");
  Site<S> site = single_site(q, k);
  Mat<S> ctx;
  attention_core(q, k, v, site, std::vector<Mat<S>>{mask}, heads, probs, ctx);
  return ctx;
}

template <class S>
Mat<S> global_attention(const MultiHead<S>& p, const Mat<S>& xq, const Mat<S>& xkv,
                        const std::vector<bool>& key_valid, int heads) {
  Site<S> site = single_site(xq, xkv);
  site.mask_global.push_back(key_padding_mask<S>(static_cast<int>(xq.rows()), key_valid));
  return attention_forward<S>(p, nullptr, AttentionKind::global, xq, xkv, site, heads, nullptr);
}

template <class S>
Mat<S> group_attention(const MultiHead<S>& p, const Mat<S>& xq, const Mat<S>& xkv,
                       std::span<const std::int32_t> query_tags, std::span<const std::int32_t> key_tags, int heads) {
  Site<S> site = single_site(xq, xkv);
  site.mask_group.push_back(group_mask<S>(query_tags, key_tags));
  return attention_forward<S>(p, nullptr, AttentionKind::group, xq, xkv, site, heads, nullptr);
}

template <class S>
Mat<S> combined_attention(const MultiHead<S>& p, const Gate<S>& gate, const Mat<S>& xq, const Mat<S>& xkv,
                          std::span<const std::int32_t> query_tags, std::span<const std::int32_t> key_tags, int heads,
                          Mat<S>* h_local, Mat<S>* h_global, Mat<S>* g) {
  Site<S> site = single_site(xq, xkv);
  site.mask_group.push_back(group_mask<S>(query_tags, key_tags));
  site.mask_global.push_back(Mat<S>::Zero(xq.rows(), xkv.rows()));
  AttnCache<S> cache;
  Mat<S> out = attention_forward<S>(p, &gate, AttentionKind::combined, xq, xkv, site, heads, &cache);
  if (h_local) *h_local = cache.h_local;
  if (h_global) *h_global = cache.h_global;
  if (g) *g = cache.g;
  return out;
}

#define DOCAUG_INSTANTIATE(S)                                                                                       \
  template Weights<S> zero_weights<S>(const ModelConfig&);                                                          \
  template Mat<S> forward_log_probs<S>(const ModelConfig&, const Weights<S>&, const Batch&);                        \
  template LossAndGrads<S> loss_and_grads<S>(const ModelConfig&, const Weights<S>&, const Batch&,                   \
                                             const ForwardOptions&);                                                \
  template LossResult loss_only<S>(const ModelConfig&, const Weights<S>&, const Batch&, const ForwardOptions&);     \
  template std::vector<double> sequence_log_probs<S>(const ModelConfig&, const Weights<S>&, const Batch&);          \
  template Mat<S> key_padding_mask<S>(int, const std::vector<bool>&);                                               \
  template Mat<S> group_mask<S>(std::span<const std::int32_t>, std::span<const std::int32_t>);                      \
  template Mat<S> attend<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, const Mat<S>&, int, std::vector<Mat<S>>*); \
  template Mat<S> global_attention<S>(const MultiHead<S>&, const Mat<S>&, const Mat<S>&, const std::vector<bool>&,  \
                                      int);                                                                         \
  template Mat<S> group_attention<S>(const MultiHead<S>&, const Mat<S>&, const Mat<S>&,                             \
                                     std::span<const std::int32_t>, std::span<const std::int32_t>, int);            \
  template Mat<S> combined_attention<S>(const MultiHead<S>&, const Gate<S>&, const Mat<S>&, const Mat<S>&,          \
                                        std::span<const std::int32_t>, std::span<const std::int32_t>, int, Mat<S>*, \
                                        Mat<S>*, Mat<S>*);

DOCAUG_INSTANTIATE(float)
DOCAUG_INSTANTIATE(double)

#undef DOCAUG_INSTANTIATE

}  // namespace docaug
