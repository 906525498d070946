#include "sdtt/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace sdtt {

TrainState init_model(const ModelConfig& config, std::uint64_t seed, double ema_decay) {
  TrainState s;
  s.config = config;
  s.params = init_parameters(config, seed);
  s.ema = s.params;
  s.ema_decay = ema_decay;
  s.adam_m = VectorX<float>::Zero(s.params.size());
  s.adam_v = VectorX<float>::Zero(s.params.size());
  return s;
}

void sgd_step(TrainState& s, const VectorX<float>& grads, double lr, const AdamConfig& adam) {
  if (grads.size() != s.params.size()) throw ContractError("gradient shape mismatch");
  if (!grads.allFinite()) {
    throw NumericalError("non-finite gradient at step " + std::to_string(s.step) +
                         " (max |g| = " + std::to_string(grads.cwiseAbs().maxCoeff()) + ")");
  }
  ++s.step;
  const auto b1 = static_cast<float>(adam.beta1);
  const auto b2 = static_cast<float>(adam.beta2);
  s.adam_m = b1 * s.adam_m + (1.0f - b1) * grads;
  s.adam_v = b2 * s.adam_v + (1.0f - b2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(s.step));
  const auto step_size = static_cast<float>(lr / c1);
  const auto eps = static_cast<float>(adam.eps);
  const auto inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  s.params.array() -= step_size * s.adam_m.array() / (s.adam_v.array().sqrt() * inv_sqrt_c2 + eps);
}

void ema_update(TrainState& s) {
  const auto d = static_cast<float>(s.ema_decay);
  s.ema = d * s.ema + (1.0f - d) * s.params;
}

double LrSchedule::at(std::int64_t step) const {
  if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

std::string metrics_json(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["lr"] = m.lr;
  j["wall_ms"] = m.wall_ms;
  return j.dump();
}

Tokens sample_rows(const PackedDataset& dataset, int batch, Rng& rng) {
  if (dataset.num_rows() == 0) throw InputError("empty dataset");
  Tokens x(batch, dataset.L);
  for (int b = 0; b < batch; ++b) {
    auto r = static_cast<Eigen::Index>(uniform01(rng) * dataset.num_rows());
    x.row(b) = dataset.rows.row(std::min<Eigen::Index>(r, dataset.num_rows() - 1));
  }
  return x;
}

std::vector<double> sample_times(int batch, Rng& rng) {
  std::vector<double> t(static_cast<std::size_t>(batch));
  for (auto& v : t) v = kMinTime + (1.0 - kMinTime) * uniform01(rng);
  return t;
}

template <typename Scalar>
double diffusion_loss_and_grad(const ModelConfig& config, const VectorX<Scalar>& params,
                               const Tokens& x, const NoisyState& z_t, const NoiseSchedule& schedule,
                               VectorX<Scalar>* grads) {
  Activations<Scalar> acts;
  const auto raw = transformer_forward(config, params, z_t.z, grads ? &acts : nullptr);
  const auto grid = apply_output_constraints(raw, z_t.z, config.mask_index());
  RowMatrix<Scalar> dscores;
  const double loss = nelbo(grid, x, z_t, schedule, config.mask_index(), grads ? &dscores : nullptr);
  if (grads) {
    grads->setZero(params.size());
    transformer_backward(config, params, acts, dscores, *grads);
  }
  return loss;
}

Tokens ar_inputs(const Tokens& x, std::int32_t bos) {
  Tokens in(x.rows(), x.cols());
  in.col(0).setConstant(bos);
  in.rightCols(x.cols() - 1) = x.leftCols(x.cols() - 1);
  return in;
}

template <typename Scalar>
double ar_loss_and_grad(const ModelConfig& config, const VectorX<Scalar>& params, const Tokens& x,
                        VectorX<Scalar>* grads) {
  const int mask = config.mask_index();
  Activations<Scalar> acts;
  const auto raw = transformer_forward(config, params, ar_inputs(x, mask), grads ? &acts : nullptr);
  const auto logp = real_token_log_softmax(raw, mask);
  const Eigen::Index L = x.cols();
  const auto n = static_cast<double>(x.size());
  double loss = 0.0;
  RowMatrix<Scalar> dscores;
  if (grads) dscores = logp.array().exp() / Scalar(n);
  for (Eigen::Index r = 0; r < logp.rows(); ++r) {
    const auto target = x(r / L, r % L);
    loss -= static_cast<double>(logp(r, target));
    if (grads) {
      dscores(r, mask) = Scalar(0);
      dscores(r, target) -= Scalar(1.0 / n);
    }
  }
  if (grads) {
    grads->setZero(params.size());
    transformer_backward(config, params, acts, dscores, *grads);
  }
  return loss / n;
}

namespace {

template <typename LossFn>
TrainState train_loop(TrainState state, const PackedDataset& dataset, const TrainOptions& options,
                      const MetricsSink& sink, LossFn&& loss_fn) {
  if (dataset.num_rows() == 0) throw InputError("empty training set");
  VectorX<float> grads;
  for (std::int64_t i = 0; i < options.steps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(state.step)));
    const double loss = loss_fn(rng, state.params, grads);
    if (!std::isfinite(loss)) {
      throw NumericalError("non-finite loss at step " + std::to_string(state.step));
    }
    const double lr = options.lr.at(state.step + 1);
    sgd_step(state, grads, lr, options.adam);
    ema_update(state);
    if (sink) {
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      sink({state.step, loss, lr, ms});
    }
  }
  return state;
}

}  // namespace

TrainState pretrain(TrainState state, const PackedDataset& dataset, const NoiseSchedule& schedule,
                    const TrainOptions& options, const MetricsSink& sink) {
  const ModelConfig cfg = state.config;
  return train_loop(std::move(state), dataset, options, sink,
                    [&](Rng& rng, const VectorX<float>& params, VectorX<float>& grads) {
                      const Tokens x = sample_rows(dataset, options.batch, rng);
                      const auto t = sample_times(options.batch, rng);
                      const auto z = forward_corrupt(x, t, schedule, cfg.mask_index(), rng);
                      return diffusion_loss_and_grad(cfg, params, x, z, schedule, &grads);
                    });
}

TrainState pretrain_ar(TrainState state, const PackedDataset& dataset, const TrainOptions& options,
                       const MetricsSink& sink) {
  if (!state.config.causal) throw ContractError("pretrain_ar needs a causal model");
  const ModelConfig cfg = state.config;
  return train_loop(std::move(state), dataset, options, sink,
                    [&](Rng& rng, const VectorX<float>& params, VectorX<float>& grads) {
                      const Tokens x = sample_rows(dataset, options.batch, rng);
                      return ar_loss_and_grad(cfg, params, x, &grads);
                    });
}

double evaluate_nelbo_per_token(const ModelConfig& config, const VectorX<float>& params,
                                const PackedDataset& rows, const NoiseSchedule& schedule, int draws,
                                std::uint64_t seed) {
  if (rows.num_rows() == 0) throw InputError("no rows to evaluate");
  Rng rng(seed);
  double total = 0.0;
  constexpr Eigen::Index kChunk = 64;
  for (int d = 0; d < draws; ++d) {
    for (Eigen::Index start = 0; start < rows.num_rows(); start += kChunk) {
      const Eigen::Index n = std::min(kChunk, rows.num_rows() - start);
      const Tokens x = rows.rows.middleRows(start, n);
      const auto t = sample_times(static_cast<int>(n), rng);
      const auto z = forward_corrupt(x, t, schedule, config.mask_index(), rng);
      total += diffusion_loss_and_grad<float>(config, params, x, z, schedule, nullptr) *
               static_cast<double>(n);
    }
  }
  return total / (static_cast<double>(draws) * rows.num_rows() * rows.L);
}

template double diffusion_loss_and_grad<float>(const ModelConfig&, const VectorX<float>&,
                                               const Tokens&, const NoisyState&,
                                               const NoiseSchedule&, VectorX<float>*);
template double diffusion_loss_and_grad<double>(const ModelConfig&, const VectorX<double>&,
                                                const Tokens&, const NoisyState&,
                                                const NoiseSchedule&, VectorX<double>*);
template double ar_loss_and_grad<float>(const ModelConfig&, const VectorX<float>&, const Tokens&,
                                        VectorX<float>*);
template double ar_loss_and_grad<double>(const ModelConfig&, const VectorX<double>&, const Tokens&,
                                         VectorX<double>*);

}  // namespace sdtt
