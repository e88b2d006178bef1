#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "docaug/model.hpp"

namespace docaug {

struct TrainConfig {
  int max_epochs = 30;
  int batch_size = 32;        // sequences per optimizer step
  int micro_batches = 1;      // gradient accumulation chunks per step
  double learning_rate = 1e-3;  // peak
  int warmup_steps = 200;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 0.0;     // 0 disables clipping
  int patience = 3;           // non-improving epochs tolerated before stopping
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;  // mean smoothed loss per token
  double dev_nll = 0.0;     // mean NLL per token on dev
  std::int64_t steps = 0;
  double learning_rate = 0.0;
};

struct TrainResult {
  ModelParams params;  // best-dev parameters
  std::vector<EpochStats> curve;
  int best_epoch = 0;
  bool stopped_early = false;
};

class TrainingDiverged : public RuntimeFault {
 public:
  using RuntimeFault::RuntimeFault;
};

// Tracks the best dev loss; stop() turns true once more than `patience`
// consecutive epochs failed to improve on it.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  // Returns true when `loss` is a new best.
  bool update(double loss);
  bool stop() const { return bad_epochs_ > patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  int bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

double learning_rate_at(const TrainConfig& config, std::int64_t step);

// Mean NLL per target token (no smoothing, no dropout).
double mean_nll(const ModelParams& params, const std::vector<Example>& data, int batch_size = 64);

struct AdamState {
  Weights<float> m, v;
  std::int64_t step = 0;
};

// Adam update with the scheduled learning rate; returns the rate used.
double adam_step(Weights<float>& w, const Weights<float>& grads, AdamState& state, const TrainConfig& config);

// One optimizer step on a batch; returns the batch loss before the update.
double train_step(ModelParams& params, const Batch& batch, AdamState& state, const TrainConfig& config, Rng* dropout);

// Loss and gradients of one optimizer batch, accumulated over config.micro_batches
// chunks with token-count weights. Dropout draws depend on (seed, epoch, batch, chunk).
LossAndGrads<float> batch_gradients(const ModelParams& params, std::span<const Example* const> batch,
                                    const TrainConfig& config, std::uint64_t epoch, std::uint64_t batch_index);

using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult train(ModelParams params, const std::vector<Example>& train_set, const std::vector<Example>& dev_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace docaug
