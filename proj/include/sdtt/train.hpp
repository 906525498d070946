#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "sdtt/common.hpp"
#include "sdtt/corpus.hpp"
#include "sdtt/diffusion.hpp"
#include "sdtt/model.hpp"

namespace sdtt {

/// Parameters plus everything needed to resume optimisation.
struct TrainState {
  ModelConfig config;
  VectorX<float> params;
  VectorX<float> ema;
  double ema_decay = 0.9999;
  VectorX<float> adam_m;
  VectorX<float> adam_v;
  std::int64_t step = 0;
  std::int64_t round = 0;
};

/// ema = params, zero moments, step = round = 0.
TrainState init_model(const ModelConfig& config, std::uint64_t seed, double ema_decay = 0.9999);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update without weight decay; increments state.step.
/// Throws NumericalError on a non-finite gradient.
void sgd_step(TrainState& state, const VectorX<float>& grads, double lr, const AdamConfig& adam = {});

/// ema <- decay * ema + (1 - decay) * params.
void ema_update(TrainState& state);

/// Linear warmup to base_lr over warmup_steps updates, constant afterwards.
struct LrSchedule {
  double base_lr = 6e-5;
  std::int64_t warmup_steps = 500;

  /// Learning rate for the update that brings the step count to `step`.
  double at(std::int64_t step) const;
};

struct TrainOptions {
  std::int64_t steps = 0;
  int batch = 32;
  LrSchedule lr;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0;
  double lr = 0;
  double wall_ms = 0;
};
using MetricsSink = std::function<void(const StepMetrics&)>;

/// {"step":..,"loss":..,"lr":..,"wall_ms":..}
std::string metrics_json(const StepMetrics& m);

/// `batch` rows drawn uniformly with replacement.
Tokens sample_rows(const PackedDataset& dataset, int batch, Rng& rng);

/// One time per row, uniform on [kMinTime, 1].
std::vector<double> sample_times(int batch, Rng& rng);

/// NELBO of a batch and, optionally, its parameter gradient.
template <typename Scalar>
double diffusion_loss_and_grad(const ModelConfig& config, const VectorX<Scalar>& params,
                               const Tokens& x, const NoisyState& z_t, const NoiseSchedule& schedule,
                               VectorX<Scalar>* grads);

/// Shifts rows right by one and puts `bos` first; the causal model reads
/// these and predicts the original rows.
Tokens ar_inputs(const Tokens& x, std::int32_t bos);

/// Mean next-token negative log-likelihood (nats) and, optionally, its gradient.
template <typename Scalar>
double ar_loss_and_grad(const ModelConfig& config, const VectorX<Scalar>& params, const Tokens& x,
                        VectorX<Scalar>* grads);

/// Diffusion pretraining on the NELBO. Per step: draw rows, draw t ~ U[eps, 1]
/// per row, corrupt, backprop, Adam, EMA.
TrainState pretrain(TrainState state, const PackedDataset& dataset, const NoiseSchedule& schedule,
                    const TrainOptions& options, const MetricsSink& sink = {});

/// Next-token training for the causal twin and the judge.
TrainState pretrain_ar(TrainState state, const PackedDataset& dataset, const TrainOptions& options,
                       const MetricsSink& sink = {});

/// Monte Carlo NELBO per token over `rows`, `draws` corruptions per row.
double evaluate_nelbo_per_token(const ModelConfig& config, const VectorX<float>& params,
                                const PackedDataset& rows, const NoiseSchedule& schedule, int draws,
                                std::uint64_t seed);

}  // namespace sdtt
