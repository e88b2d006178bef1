#include <doctest.h>

#include <cmath>

#include "docaug/checkpoint.hpp"
#include "docaug/model.hpp"
#include "helpers.hpp"

using namespace docaug;

namespace {

template <class S>
Mat<S> random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat<S> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = static_cast<S>(scale * (2.0 * uniform01(rng) - 1.0));
  return m;
}

MultiHead<double> random_mha(Rng& rng, int d) {
  auto lin = [&] { return Linear<double>{random_mat<double>(rng, d, d, 0.5), random_mat<double>(rng, 1, d, 0.1)}; };
  return {lin(), lin(), lin(), lin()};
}

std::vector<Example> random_examples(Rng& rng, int n, int vocab, int sentences) {
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) out.push_back(test::random_document(rng, sentences, 1, 5, vocab));
  return out;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("a single key returns its value row") {
    Rng rng(1);
    Mat<double> q = random_mat<double>(rng, 3, 4), k = random_mat<double>(rng, 1, 4), v = random_mat<double>(rng, 1, 4);
    Mat<double> out = attend<double>(q, k, v, Mat<double>::Zero(3, 1), 2);
    for (int i = 0; i < 3; ++i) CHECK((out.row(i) - v.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("zero queries weight unmasked keys uniformly") {
    Rng rng(2);
    Mat<double> q = Mat<double>::Zero(2, 4), k = random_mat<double>(rng, 5, 4), v = random_mat<double>(rng, 5, 4);
    std::vector<Mat<double>> probs;
    Mat<double> mask = key_padding_mask<double>(2, {true, true, false, true, false});
    attend<double>(q, k, v, mask, 2, &probs);
    for (const auto& p : probs)
      for (int i = 0; i < 2; ++i) {
        CHECK(p(i, 0) == doctest::Approx(1.0 / 3));
        CHECK(p(i, 1) == doctest::Approx(1.0 / 3));
        CHECK(p(i, 3) == doctest::Approx(1.0 / 3));
        CHECK(p(i, 2) < 1e-8);
        CHECK(p(i, 4) < 1e-8);
      }
  }

  TEST_CASE("2x2 attention matches scalar arithmetic") {
    Mat<double> q(2, 2), k(2, 2), v(2, 2);
    q << 1.0, 0.5, -0.3, 2.0;
    k << 0.2, -1.0, 1.5, 0.4;
    v << 3.0, -1.0, 0.5, 2.0;
    Mat<double> out = attend<double>(q, k, v, Mat<double>::Zero(2, 2), 1);
    for (int i = 0; i < 2; ++i) {
      const double s0 = (q(i, 0) * k(0, 0) + q(i, 1) * k(0, 1)) / std::sqrt(2.0);
      const double s1 = (q(i, 0) * k(1, 0) + q(i, 1) * k(1, 1)) / std::sqrt(2.0);
      const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
      const double w1 = 1.0 - w0;
      for (int j = 0; j < 2; ++j) CHECK(std::abs(out(i, j) - (w0 * v(0, j) + w1 * v(1, j))) < 1e-6);
    }
  }

  TEST_CASE("group mask rule") {
    GroupTags gq{1, 1, 2}, gk{1, 2, 2};
    Mat<double> m = group_mask<double>(gq, gk);
    Mat<double> expect(3, 3);
    expect << 0, -1e9, -1e9, 0, -1e9, -1e9, -1e9, 0, 0;
    CHECK(m == expect);
  }

  TEST_CASE("group attention with one group equals global attention") {
    Rng rng(3);
    auto p = random_mha(rng, 8);
    Mat<double> xq = random_mat<double>(rng, 4, 8), xkv = random_mat<double>(rng, 6, 8);
    GroupTags tq(4, 1), tk(6, 1);
    Mat<double> g = group_attention<double>(p, xq, xkv, tq, tk, 2);
    Mat<double> h = global_attention<double>(p, xq, xkv, std::vector<bool>(6, true), 2);
    CHECK((g - h).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("cross-group attention mass is negligible") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = static_cast<int>(uniform_int(rng, 2, 12));
      GroupTags tags;
      for (int i = 0, t = 1; i < n; ++i) {
        if (i > 0 && uniform01(rng) < 0.3) ++t;
        tags.push_back(t);
      }
      Mat<double> q = random_mat<double>(rng, n, 8, 3.0), k = random_mat<double>(rng, n, 8, 3.0),
                  v = random_mat<double>(rng, n, 8);
      std::vector<Mat<double>> probs;
      attend<double>(q, k, v, group_mask<double>(tags, tags), 2, &probs);
      for (const auto& p : probs)
        for (int i = 0; i < n; ++i) {
          double cross = 0.0, row = 0.0;
          for (int j = 0; j < n; ++j) {
            row += p(i, j);
            if (tags[i] != tags[j]) cross += p(i, j);
          }
          CHECK(cross < 1e-8);
          CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
  }

  TEST_CASE("gate saturation selects one branch") {
    Rng rng(5);
    const int d = 8;
    auto p = random_mha(rng, d);
    Gate<double> gate{{random_mat<double>(rng, 2 * d, d, 0.1), Mat<double>::Zero(1, d)}};
    Mat<double> xq = random_mat<double>(rng, 5, d), xkv = random_mat<double>(rng, 5, d);
    GroupTags tags{1, 1, 2, 2, 2};
    Mat<double> hl, hg, g;
    gate.proj.b.setConstant(1e4);
    Mat<double> h = combined_attention<double>(p, gate, xq, xkv, tags, tags, 2, &hl, &hg, &g);
    CHECK((h - hl).cwiseAbs().maxCoeff() < 1e-9);
    gate.proj.b.setConstant(-1e4);
    h = combined_attention<double>(p, gate, xq, xkv, tags, tags, 2, &hl, &hg, &g);
    CHECK((h - hg).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((hl - group_attention<double>(p, xq, xkv, tags, tags, 2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((hg - global_attention<double>(p, xq, xkv, std::vector<bool>(5, true), 2)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("combined attention is an elementwise convex combination") {
    Rng rng(6);
    const int d = 8;
    for (int trial = 0; trial < 20; ++trial) {
      auto p = random_mha(rng, d);
      Gate<double> gate{{random_mat<double>(rng, 2 * d, d), random_mat<double>(rng, 1, d)}};
      Mat<double> xq = random_mat<double>(rng, 6, d), xkv = random_mat<double>(rng, 7, d);
      GroupTags tq{1, 1, 2, 2, 3, 3}, tk{1, 2, 2, 2, 3, 3, 3};
      Mat<double> hl, hg, g;
      Mat<double> h = combined_attention<double>(p, gate, xq, xkv, tq, tk, 2, &hl, &hg, &g);
      for (int i = 0; i < h.rows(); ++i)
        for (int j = 0; j < h.cols(); ++j) {
          CHECK(h(i, j) >= std::min(hl(i, j), hg(i, j)) - 1e-12);
          CHECK(h(i, j) <= std::max(hl(i, j), hg(i, j)) + 1e-12);
        }
    }
  }

  TEST_CASE("output distributions are normalized") {
    Rng rng(7);
    ModelConfig c = test::tiny_config(23);
    Weights<float> w = init_weights(c, 1);
    auto ex = random_examples(rng, 5, 23, 3);
    Mat<float> lp = forward_log_probs<float>(c, w, make_batch(std::span<const Example>(ex)));
    for (int r = 0; r < lp.rows(); ++r) CHECK(std::abs(lp.row(r).array().exp().sum() - 1.0f) < 1e-5);
  }

  TEST_CASE("grouped mode with one group equals plain mode") {
    Rng rng(8);
    ModelConfig c = test::tiny_config(19);
    Weights<float> w = init_weights(c, 2);
    auto ex = random_examples(rng, 4, 19, 1);
    Batch b = make_batch(std::span<const Example>(ex));
    Mat<float> grouped = forward_log_probs<float>(c, w, b);
    c.attention_mode = AttentionMode::plain;
    Mat<float> plain = forward_log_probs<float>(c, w, b);
    double worst = 0.0;
    for (int r = 0; r < grouped.rows(); ++r)
      if (b.labels[r] >= 0) worst = std::max(worst, static_cast<double>((grouped.row(r) - plain.row(r)).cwiseAbs().maxCoeff()));
    CHECK(worst < 1e-6);
  }

  TEST_CASE("group-only layers do not see other sentences") {
    Rng rng(9);
    ModelConfig c = test::tiny_config(30, 3);
    c.combined_top_layers = 1;
    ModelParams params = make_model(c, Role::mt, 3);
    Example doc = test::random_document(rng, 2, 3, 5, 30);
    std::size_t first_end = 0;
    while (doc.src_tags[first_end] == 1) ++first_end;
    Mat<float> before = encoder_states(params, doc.src, doc.src_tags, 2);
    TokenSeq changed = doc.src;
    for (std::size_t i = first_end; i < changed.size(); ++i) changed[i] = 5 + (changed[i] + 3) % 25;
    Mat<float> after = encoder_states(params, changed, doc.src_tags, 2);
    CHECK((before.topRows(first_end) - after.topRows(first_end)).cwiseAbs().maxCoeff() < 1e-6);
    // The combined top layer mixes in global context.
    Mat<float> top_before = encoder_states(params, doc.src, doc.src_tags, 3);
    Mat<float> top_after = encoder_states(params, changed, doc.src_tags, 3);
    CHECK((top_before.topRows(first_end) - top_after.topRows(first_end)).cwiseAbs().maxCoeff() > 1e-6);
  }

  TEST_CASE("uniform logits give ln V loss") {
    ModelConfig c = test::tiny_config(7);
    Weights<float> w = init_weights(c, 4);
    w.output.w.setZero();
    w.output.b.setZero();
    Rng rng(10);
    auto ex = random_examples(rng, 3, 7, 1);
    LossResult r = loss_only<float>(c, w, make_batch(std::span<const Example>(ex)), {});
    CHECK(std::abs(r.loss - std::log(7.0)) < 0.05);
    CHECK(std::abs(r.nll_sum / r.tokens - std::log(7.0)) < 1e-5);
  }

  TEST_CASE("analytic gradients agree with finite differences") {
    ModelConfig c = test::tiny_config(11, 2, 8, 2);
    c.label_smoothing = 0.1;
    Rng rng(12);
    auto ex = random_examples(rng, 3, 11, 2);
    Batch b = make_batch(std::span<const Example>(ex));
    Weights<double> w = cast_weights<double>(init_weights(c, 5));
    // Non-zero layer-norm and gate parameters so every path carries gradient.
    w.visit([&](const std::string& name, Mat<double>& t) {
      if (name.find(".b") != std::string::npos || name.find("bias") != std::string::npos)
        for (int i = 0; i < t.size(); ++i) t.data()[i] = 0.1 * (2.0 * uniform01(rng) - 1.0);
    });
    LossAndGrads<double> lg = loss_and_grads<double>(c, w, b, {nullptr, 0.1});
    std::vector<const Mat<double>*> grads;
    lg.grads.visit([&](const std::string&, const Mat<double>& g) { grads.push_back(&g); });
    std::size_t index = 0;
    int gate_tensors = 0;
    w.visit([&](const std::string& name, Mat<double>& t) {
      const Mat<double>& g = *grads[index++];
      if (name.find("gate") != std::string::npos) ++gate_tensors;
      double worst = 0.0, scale = 1e-6;
      for (int probe = 0; probe < std::min<int>(6, static_cast<int>(t.size())); ++probe) {
        const int at = static_cast<int>(uniform_int(rng, 0, t.size() - 1));
        const double orig = t.data()[at];
        t.data()[at] = orig + 1e-5;
        const double up = loss_only<double>(c, w, b, {nullptr, 0.1}).loss;
        t.data()[at] = orig - 1e-5;
        const double down = loss_only<double>(c, w, b, {nullptr, 0.1}).loss;
        t.data()[at] = orig;
        const double fd = (up - down) / 2e-5;
        worst = std::max(worst, std::abs(fd - g.data()[at]));
        scale = std::max(scale, std::abs(fd));
      }
      INFO(name);
      CHECK(worst / scale < 1e-5);
    });
    CHECK(gate_tensors == 6);  // top encoder self, decoder self and decoder cross gates; w and b each
  }

  TEST_CASE("a small step along the gradient lowers the loss") {
    ModelConfig c = test::tiny_config(13);
    Weights<float> w = init_weights(c, 6);
    Rng rng(13);
    auto ex = random_examples(rng, 4, 13, 1);
    Batch b = make_batch(std::span<const Example>(ex));
    auto lg = loss_and_grads<float>(c, w, b, {});
    std::vector<const Mat<float>*> grads;
    lg.grads.visit([&](const std::string&, const Mat<float>& g) { grads.push_back(&g); });
    std::size_t i = 0;
    w.visit([&](const std::string&, Mat<float>& t) { t -= 0.05f * *grads[i++]; });
    CHECK(loss_only<float>(c, w, b, {}).loss < lg.result.loss);
  }

  TEST_CASE("loss does not depend on example order within a batch") {
    ModelConfig c = test::tiny_config(17);
    Weights<float> w = init_weights(c, 7);
    Rng rng(14);
    auto ex = random_examples(rng, 6, 17, 2);
    const double a = loss_only<float>(c, w, make_batch(std::span<const Example>(ex)), {}).loss;
    std::reverse(ex.begin(), ex.end());
    const double b = loss_only<float>(c, w, make_batch(std::span<const Example>(ex)), {}).loss;
    CHECK(std::abs(a - b) < 1e-6);
  }

  TEST_CASE("padding does not change per-sequence scores") {
    ModelConfig c = test::tiny_config(17);
    Weights<float> w = init_weights(c, 8);
    Rng rng(15);
    auto ex = random_examples(rng, 4, 17, 2);
    auto both = sequence_log_probs<float>(c, w, make_batch(std::span<const Example>(ex)));
    for (std::size_t i = 0; i < ex.size(); ++i) {
      auto alone = sequence_log_probs<float>(c, w, make_batch(std::span<const Example>(&ex[i], 1)));
      CHECK(std::abs(alone[0] - both[i]) < 1e-4);
    }
  }

  TEST_CASE("non-finite activations raise a fault with the layer") {
    ModelConfig c = test::tiny_config(9);
    Weights<float> w = init_weights(c, 9);
    w.encoder[1].ffn.out.b(0, 0) = std::numeric_limits<float>::quiet_NaN();
    Rng rng(16);
    auto ex = random_examples(rng, 2, 9, 1);
    try {
      forward_log_probs<float>(c, w, make_batch(std::span<const Example>(ex)));
      FAIL("expected a numeric fault");
    } catch (const NumericFault& e) {
      CHECK(e.layer() == 1);
    }
  }

  TEST_CASE("initialization is seeded") {
    ModelConfig c = test::tiny_config(9);
    auto a = init_weights(c, 1), b = init_weights(c, 1), d = init_weights(c, 2);
    CHECK(a.src_embed == b.src_embed);
    CHECK(a.decoder[1].cross.q.w == b.decoder[1].cross.q.w);
    CHECK(a.src_embed != d.src_embed);
  }

  TEST_CASE("checkpoints round-trip bit-exactly") {
    ModelConfig c = test::tiny_config(12);
    c.label_smoothing = 0.1;
    ModelParams p = make_model(c, Role::da, 3);
    CheckpointMeta meta;
    meta.seed = 3;
    meta.src_vocab_sha256 = "abc";
    meta.extra["mode"] = "posterior";
    const std::string bytes = serialize_checkpoint(p, meta);
    LoadedCheckpoint back = parse_checkpoint(bytes);
    CHECK(back.params.role == Role::da);
    CHECK(back.meta.seed == 3);
    CHECK(back.meta.src_vocab_sha256 == "abc");
    CHECK(back.meta.extra["mode"] == "posterior");
    CHECK(back.params.config.label_smoothing == c.label_smoothing);
    CHECK(serialize_checkpoint(back.params, back.meta) == bytes);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 4)), ValidationError);
    CHECK_THROWS_AS(parse_checkpoint("not a checkpoint"), ValidationError);
  }

  TEST_CASE("config validation and json") {
    ModelConfig c = test::tiny_config(12);
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = test::tiny_config(12);
    c.combined_top_layers = 3;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = test::tiny_config(12);
    CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
  }
}
