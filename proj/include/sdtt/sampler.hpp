#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdtt/common.hpp"
#include "sdtt/corpus.hpp"
#include "sdtt/diffusion.hpp"
#include "sdtt/model.hpp"

namespace sdtt {

enum class Precision { F32, F64 };

struct SamplerConfig {
  int num_steps = 16;
  std::uint64_t seed = 0;
  /// Replace every categorical draw with its argmax (fully deterministic).
  bool greedy = false;
  double temperature = 1.0;
  Precision precision = Precision::F32;
  /// Row b of a batch draws from stream (seed, row_offset + b).
  std::uint64_t row_offset = 0;
};

/// Prompt tokens occupy the first positions; everything after is generated.
struct PromptSpec {
  std::vector<std::int32_t> prompt;
  int length = 0;
};

/// One row per prompt: prompt tokens, then MASK.
Tokens make_canvas(const std::vector<PromptSpec>& prompts, int mask_index);

/// Called after every reverse step with the updated batch.
using StepObserver = std::function<void(int step, const Tokens& z)>;

/// Ancestral sampling from `canvas` (MASK marks positions to generate).
/// Step i runs from t = 1 - i/n to s = 1 - (i+1)/n; the last step uses s = 0 so
/// no MASK survives. Exactly num_steps denoiser calls per batch. Row b draws
/// from its own stream derived from (seed, row_offset + b).
template <typename Scalar>
Tokens ancestral_sample(const Denoiser<Scalar>& denoiser, const SamplerConfig& config,
                        const Tokens& canvas, const NoiseSchedule& schedule,
                        const StepObserver& observer = {});

/// Single forward pass; every MASK becomes the argmax real token (ties go to
/// the lowest id). Throws InputError for a row without MASK.
template <typename Scalar>
Tokens greedy_infill(const Denoiser<Scalar>& denoiser, const Tokens& rows_with_masks);

struct NucleusEntry {
  int token;
  double prob;
};

/// Smallest probability-sorted prefix with cumulative mass >= p, renormalised.
/// Ties in probability keep the lower token id first.
std::vector<NucleusEntry> top_p_filter(std::span<const double> probs, double p);

/// Causal decoding with the incremental cache. Each row starts with BOS
/// (the MASK id) followed by its prompt; rows are extended to `max_len`.
/// p in (0, 1]; p = 1 is plain ancestral sampling.
Tokens nucleus_sample_ar(const ModelConfig& config, const VectorX<float>& params, double p,
                         int max_len, const std::vector<std::vector<std::int32_t>>& prompts,
                         std::uint64_t seed);

/// Greedy causal continuation of each prompt by `n_tokens` tokens.
Tokens greedy_ar_complete(const ModelConfig& config, const VectorX<float>& params,
                          const std::vector<std::vector<std::int32_t>>& prompts, int n_tokens);

/// {"seed":..,"num_steps":..,"prompt":[..],"tokens":[..],"text":".."}
std::string sample_record_json(std::uint64_t seed, int num_steps,
                               const std::vector<std::int32_t>& prompt,
                               const std::vector<std::int32_t>& tokens, const Vocab& vocab);

}  // namespace sdtt
