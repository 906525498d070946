#pragma once

// Pre-LayerNorm transformer with rotary position encoding, shared by the
// bidirectional denoiser and its causal twin. Parameters live in one flat
// vector; ParamLayout maps named tensors onto it. Activations are row-major
// (tokens x features) so each linear layer is a single GEMM over the batch.

#include <atomic>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "sdtt/common.hpp"

namespace sdtt {

struct ModelConfig {
  int n_layers = 4;
  int embed_dim = 128;
  int n_heads = 4;
  int context = 64;  // L
  int vocab = 0;     // K, including MASK as the last id
  bool causal = false;
  bool rotary = true;

  int head_dim() const { return embed_dim / n_heads; }
  int mask_index() const { return vocab - 1; }
  /// Throws InputError on inconsistent shapes.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Named shapes. "tiny" is the desk default; "micro" is a smaller variant for
/// single-core runs; "small" through "8b" follow the reference model family
/// (used for benchmark configuration only).
ModelConfig model_preset(std::string_view name, int vocab, bool causal);

struct LayerOffsets {
  Eigen::Index ln1_g, ln1_b, wqkv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);

  Eigen::Index tok_emb = 0;
  std::vector<LayerOffsets> layers;
  Eigen::Index lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  Eigen::Index total = 0;
};

std::int64_t parameter_count(const ModelConfig& config);

/// Deterministic initialisation: N(0, 0.02) weights, residual projections
/// scaled by 1/sqrt(2 n_layers), unit LayerNorm gains, zero biases.
VectorX<float> init_parameters(const ModelConfig& config, std::uint64_t seed);

template <typename Scalar>
struct LayerActivations {
  RowMatrix<Scalar> x_in, ln1_xhat, h1, qkv, probs, attn, x_mid, ln2_xhat, h2, u, g;
  VectorX<Scalar> ln1_rstd, ln2_rstd;
};

template <typename Scalar>
struct Activations {
  Tokens tokens;
  std::vector<LayerActivations<Scalar>> layers;
  RowMatrix<Scalar> x_final, lnf_xhat, hf;
  VectorX<Scalar> lnf_rstd;
};

/// Raw scores, one row per (sequence, position). Fills `acts` for backward.
template <typename Scalar>
RowMatrix<Scalar> transformer_forward(const ModelConfig& config, const VectorX<Scalar>& params,
                                      const Tokens& tokens, Activations<Scalar>* acts = nullptr);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(scores).
template <typename Scalar>
void transformer_backward(const ModelConfig& config, const VectorX<Scalar>& params,
                          const Activations<Scalar>& acts, const RowMatrix<Scalar>& dscores,
                          VectorX<Scalar>& grads);

/// Anything that maps a batch of (partially masked) rows to raw scores.
/// Calls through forward() are counted.
template <typename Scalar>
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  RowMatrix<Scalar> forward(const Tokens& z) const {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return scores(z);
  }
  std::int64_t forward_calls() const { return calls_.load(std::memory_order_relaxed); }
  void reset_forward_calls() { calls_.store(0); }

  virtual int vocab_size() const = 0;
  int mask_index() const { return vocab_size() - 1; }

 protected:
  virtual RowMatrix<Scalar> scores(const Tokens& z) const = 0;

 private:
  mutable std::atomic<std::int64_t> calls_{0};
};

/// Frozen transformer snapshot. The noise level is not an input.
template <typename Scalar>
class TransformerDenoiser final : public Denoiser<Scalar> {
 public:
  TransformerDenoiser(const ModelConfig& config, VectorX<Scalar> params);

  int vocab_size() const override { return config_.vocab; }
  const ModelConfig& config() const { return config_; }
  const VectorX<Scalar>& params() const { return params_; }

 protected:
  RowMatrix<Scalar> scores(const Tokens& z) const override;

 private:
  ModelConfig config_;
  VectorX<Scalar> params_;
};

/// Per-layer keys and values for a decoded prefix of every row in a batch.
template <typename Scalar>
struct AutoregressiveCache {
  AutoregressiveCache(const ModelConfig& config, int batch);

  int batch = 0;
  int capacity = 0;
  int prefix_len = 0;
  std::vector<RowMatrix<Scalar>> keys, values;  // (batch * capacity) x D per layer
  std::int64_t steps = 0;
  std::int64_t tokens_processed = 0;
};

/// Feeds one token per row at position cache.prefix_len and returns next-token
/// log-probabilities (batch x K, MASK column at log 0). Matches the last
/// position of a full causal forward pass.
template <typename Scalar>
RowMatrix<Scalar> ar_forward_step(const ModelConfig& config, const VectorX<Scalar>& params,
                                  std::span<const std::int32_t> tokens,
                                  AutoregressiveCache<Scalar>& cache);

/// Log-softmax over the real tokens of each row; MASK column set to log 0.
template <typename Scalar>
RowMatrix<Scalar> real_token_log_softmax(const RowMatrix<Scalar>& scores, int mask_index);

}  // namespace sdtt
