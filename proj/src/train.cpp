#include "docaug/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "docaug/parallel.hpp"

namespace docaug {

void TrainConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (micro_batches < 1) fail("micro_batches must be >= 1");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (patience < 0) fail("patience must be >= 0");
  if (clip_norm < 0) fail("clip_norm must be >= 0");
  if (!problems.empty()) throw ValidationError("invalid train config: " + problems);
}

bool EarlyStopping::update(double loss) {
  if (loss < best_) {
    best_ = loss;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

double learning_rate_at(const TrainConfig& c, std::int64_t step) {
  const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
  const double w = static_cast<double>(c.warmup_steps);
  return c.learning_rate * std::min(s / w, std::sqrt(w / s));
}

double mean_nll(const ModelParams& params, const std::vector<Example>& data, int batch_size) {
  if (data.empty()) return 0.0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data[a].src.size() < data[b].src.size(); });
  double nll = 0.0;
  std::int64_t tokens = 0;
  std::vector<const Example*> chunk;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    chunk.clear();
    for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(batch_size)); ++j)
      chunk.push_back(&data[order[j]]);
    Batch b = make_batch(std::span<const Example* const>(chunk));
    LossResult r = loss_only<float>(params.config, params.weights, b, {});
    nll += r.nll_sum;
    tokens += r.tokens;
  }
  return nll / static_cast<double>(tokens);
}

double adam_step(Weights<float>& w, const Weights<float>& grads, AdamState& state, const TrainConfig& c) {
  if (state.m.src_embed.size() == 0) {
    state.m = grads;
    state.v = grads;
    state.m.visit([](const std::string&, Mat<float>& t) { t.setZero(); });
    state.v.visit([](const std::string&, Mat<float>& t) { t.setZero(); });
  }
  ++state.step;
  const double lr = learning_rate_at(c, state.step);
  double scale = 1.0;
  if (c.clip_norm > 0) {
    double sq = 0.0;
    grads.visit([&](const std::string&, const Mat<float>& g) { sq += static_cast<double>(g.squaredNorm()); });
    const double norm = std::sqrt(sq);
    if (norm > c.clip_norm) scale = c.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(c.adam_beta1);
  const float b2 = static_cast<float>(c.adam_beta2);
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(c.adam_eps);
  const float gscale = static_cast<float>(scale);

  std::vector<const Mat<float>*> g;
  grads.visit([&](const std::string&, const Mat<float>& t) { g.push_back(&t); });
  std::vector<Mat<float>*> m, v;
  state.m.visit([&](const std::string&, Mat<float>& t) { m.push_back(&t); });
  state.v.visit([&](const std::string&, Mat<float>& t) { v.push_back(&t); });
  std::size_t i = 0;
  w.visit([&](const std::string&, Mat<float>& p) {
    auto ga = g[i]->array() * gscale;
    m[i]->array() = b1 * m[i]->array() + (1.0f - b1) * ga;
    v[i]->array() = b2 * v[i]->array() + (1.0f - b2) * ga.square();
    p.array() -= step_size * m[i]->array() / ((v[i]->array() * inv_bc2).sqrt() + eps);
    ++i;
  });
  return lr;
}

namespace {

void add_scaled(Weights<float>& acc, const Weights<float>& g, float scale) {
  std::vector<const Mat<float>*> src;
  g.visit([&](const std::string&, const Mat<float>& t) { src.push_back(&t); });
  std::size_t i = 0;
  acc.visit([&](const std::string&, Mat<float>& t) { t += scale * *src[i++]; });
}

}  // namespace

double train_step(ModelParams& params, const Batch& batch, AdamState& state, const TrainConfig& config, Rng* dropout) {
  ForwardOptions opts{dropout, params.config.label_smoothing};
  auto lg = loss_and_grads<float>(params.config, params.weights, batch, opts);
  if (!std::isfinite(lg.result.loss)) throw TrainingDiverged("non-finite loss at step " + std::to_string(state.step + 1));
  adam_step(params.weights, lg.grads, state, config);
  return lg.result.loss;
}

LossAndGrads<float> batch_gradients(const ModelParams& params, std::span<const Example* const> batch,
                                    const TrainConfig& config, std::uint64_t epoch, std::uint64_t batch_index) {
  // Split the step into fixed micro-batches; gradients are combined in a
  // fixed order so the result does not depend on the worker count.
  const std::size_t n = batch.size();
  const auto parts = std::min<std::size_t>(static_cast<std::size_t>(config.micro_batches), n);
  std::vector<std::vector<const Example*>> chunks(parts);
  for (std::size_t j = 0; j < n; ++j) chunks[j * parts / n].push_back(batch[j]);
  std::vector<LossAndGrads<float>> partial(parts);
  parallel_for(parts, config.threads, [&](std::size_t p) {
    Rng drop = make_rng(config.seed, Stream::dropout, {epoch, batch_index, static_cast<std::uint64_t>(p)});
    Batch b = make_batch(std::span<const Example* const>(chunks[p]));
    partial[p] = loss_and_grads<float>(params.config, params.weights, b, {&drop, params.config.label_smoothing});
  });
  LossAndGrads<float> out = std::move(partial[0]);
  if (parts == 1) return out;
  int tokens = 0;
  double loss = 0.0, nll = 0.0;
  for (std::size_t p = 0; p < parts; ++p) {
    const auto& r = p == 0 ? out.result : partial[p].result;
    tokens += r.tokens;
    loss += r.loss * r.tokens;
    nll += r.nll_sum;
  }
  const int first = out.result.tokens;
  out.grads.visit([&](const std::string&, Mat<float>& t) { t *= static_cast<float>(first) / static_cast<float>(tokens); });
  for (std::size_t p = 1; p < parts; ++p)
    add_scaled(out.grads, partial[p].grads, static_cast<float>(partial[p].result.tokens) / static_cast<float>(tokens));
  out.result.tokens = tokens;
  out.result.loss = loss / tokens;
  out.result.nll_sum = nll;
  return out;
}

TrainResult train(ModelParams params, const std::vector<Example>& train_set, const std::vector<Example>& dev_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  params.config.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  TrainResult result;
  result.params = params;
  EarlyStopping stopping(config.patience);
  AdamState state;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng = make_rng(config.seed, Stream::shuffle, {static_cast<std::uint64_t>(epoch)});
    shuffle_range(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t token_sum = 0;
    double lr = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t i = 0; i < order.size(); i += bs, ++batch_index) {
      const std::size_t end = std::min(order.size(), i + bs);
      std::vector<const Example*> batch;
      for (std::size_t j = i; j < end; ++j) batch.push_back(&train_set[order[j]]);
      LossAndGrads<float> lg = batch_gradients(params, batch, config, static_cast<std::uint64_t>(epoch), batch_index);
      const int tokens = lg.result.tokens;
      const double loss = lg.result.loss * tokens;
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << epoch << ", step " << state.step + 1
            << ", learning rate " << learning_rate_at(config, state.step + 1);
        throw TrainingDiverged(msg.str());
      }
      Weights<float>& grads = lg.grads;
      lr = adam_step(params.weights, grads, state, config);
      loss_sum += loss;
      token_sum += tokens;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(token_sum);
    stats.steps = state.step;
    stats.learning_rate = lr;
    stats.dev_nll = dev_set.empty() ? stats.train_loss : mean_nll(params, dev_set);
    if (!std::isfinite(stats.dev_nll)) throw TrainingDiverged("non-finite dev loss at epoch " + std::to_string(epoch));
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (stopping.update(stats.dev_nll)) {
      result.best_epoch = epoch;
      result.params = params;
    } else if (stopping.stop()) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace docaug
