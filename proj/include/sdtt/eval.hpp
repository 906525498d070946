#pragma once

// Sample quality, diversity and cloze metrics.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sdtt/common.hpp"
#include "sdtt/corpus.hpp"
#include "sdtt/diffusion.hpp"
#include "sdtt/model.hpp"
#include "sdtt/sampler.hpp"
#include "sdtt/train.hpp"

namespace sdtt {

/// Frozen causal model used only to score samples. Scoring runs in double
/// precision so results do not depend on how samples are batched.
struct JudgeModel {
  ModelConfig config;
  VectorX<double> params;
  std::string hash;
};

/// Throws InputError unless the state is causal.
JudgeModel make_judge(const TrainState& ar_state);

/// Sum of judge negative log-likelihoods (nats) over positions >= prompt_len
/// of every row, and the number of tokens scored.
struct NllSum {
  double nll = 0;
  std::int64_t tokens = 0;
};
NllSum judge_nll(const JudgeModel& judge, const Tokens& samples, int prompt_len = 0);

/// exp(mean per-token NLL) under the judge, prompt tokens excluded.
/// Throws InputError on empty input, MASK tokens or prompt_len >= length.
double generative_perplexity(const JudgeModel& judge, const Tokens& samples, int prompt_len = 0);

/// Sentence BLEU with n-grams up to max_n (only orders the hypothesis has),
/// uniform weights, clipped counts, brevity penalty against the closest
/// reference length, and add-one smoothing for orders >= 2 with no match.
/// Zero unigram matches give 0.
double bleu(const std::vector<std::int32_t>& hypothesis,
            const std::vector<std::vector<std::int32_t>>& references, int max_n = 4);

/// Mean over i of BLEU(x_i, others). Throws InputError for fewer than 2.
double self_bleu(const std::vector<std::vector<std::int32_t>>& completions, int max_n = 4);

/// Prompt = first `prompt_len` tokens of `n_prompts` rows chosen under `seed`.
std::vector<std::vector<std::int32_t>> conditional_prompts(const PackedDataset& rows,
                                                           int n_prompts, int prompt_len,
                                                           std::uint64_t seed);

/// `n_continuations` diffusion samples per prompt; element [p][c] holds the
/// generated tokens only (prompt stripped). Rows are sampled in batches of
/// `batch`; each row's stream depends only on (seed, global row index).
template <typename Scalar>
std::vector<std::vector<std::vector<std::int32_t>>> conditional_completions(
    const Denoiser<Scalar>& denoiser, const std::vector<std::vector<std::int32_t>>& prompts,
    int n_continuations, int length, const SamplerConfig& sampler, const NoiseSchedule& schedule,
    int batch = 64);

/// Unconditional diffusion samples in batches; row r uses stream (seed, r).
template <typename Scalar>
Tokens unconditional_samples(const Denoiser<Scalar>& denoiser, int n, int length,
                             const SamplerConfig& sampler, const NoiseSchedule& schedule,
                             int batch = 64);

/// Mean self-BLEU over prompts.
double mean_self_bleu(const std::vector<std::vector<std::vector<std::int32_t>>>& groups,
                      int max_n = 4);

struct SuffixEvalOptions {
  int draws = 64;  // stratified time draws per item for the bound
  std::uint64_t seed = 0;
  int batch_rows = 256;
};

struct SuffixEvalResult {
  double accuracy = 0;
  double nelbo_per_token = 0;  // mean over items of the per-suffix-token NELBO
  double perplexity_bound = 0;
  int items = 0;
};

/// Accuracy of single-pass greedy infill of the whole suffix, and
/// exp(NELBO per suffix token) with only suffix positions ever masked.
template <typename Scalar>
SuffixEvalResult suffix_eval(const Denoiser<Scalar>& denoiser, const ClozeSet& cloze,
                             const NoiseSchedule& schedule, const SuffixEvalOptions& options = {});

/// Accuracy of greedy causal decoding of each suffix from its context.
double ar_suffix_accuracy(const ModelConfig& config, const VectorX<float>& params,
                          const ClozeSet& cloze, int batch = 64);

struct EvalReport {
  std::string metric;
  double value = 0;
  std::int64_t n_samples = 0;
  int num_steps = 0;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::string judge_hash;
  int round = 0;
  std::map<std::string, std::string> settings;
};

/// One JSON object (single line).
std::string eval_report_json(const EvalReport& report);
EvalReport parse_eval_report(const std::string& line);

/// Columns: round,num_steps,metric,value.
void write_eval_summary_csv(const std::filesystem::path& path,
                            const std::vector<EvalReport>& reports);

}  // namespace sdtt
