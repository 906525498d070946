#pragma once

// Decoding latency: few-step diffusion sampling against causal decoding with
// and without the incremental cache.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdtt/common.hpp"
#include "sdtt/diffusion.hpp"
#include "sdtt/model.hpp"
#include "sdtt/sampler.hpp"

namespace sdtt {

struct BenchConfig {
  int batch = 8;
  int warmup_runs = 1;
  int timed_runs = 10;
  int gen_length = 64;
  int prompt_len = 0;
  std::vector<int> steps{16, 32, 64, 128, 256};
  Precision precision = Precision::F32;
  std::uint64_t seed = 0;

  /// Throws InputError on invalid values.
  void validate() const;
};

struct BenchRow {
  std::string kind;  // "diffusion", "ar_cached" or "ar_uncached"
  int num_steps = 0;
  int batch = 0;
  int gen_length = 0;
  std::string precision;
  int runs = 0;
  double mean_ms = 0;
  double std_ms = 0;  // sample standard deviation over timed runs
  double prefill_ms = 0;
  std::int64_t forward_passes = 0;  // per batch
  double tokens_per_sec = 0;
  double speedup_vs_ar = 0;  // cached AR mean / this row's mean
};

/// One row per step count. forward_passes is the exact number of denoiser
/// calls for one batch.
std::vector<BenchRow> bench_diffusion(const ModelConfig& config, const VectorX<float>& params,
                                      const BenchConfig& bench, const NoiseSchedule& schedule);

/// Causal decoding of gen_length tokens per row. With `cached`, one
/// incremental step per token; otherwise a full forward pass over the growing
/// prefix per token.
BenchRow bench_ar(const ModelConfig& config, const VectorX<float>& params, const BenchConfig& bench,
                  bool cached = true);

/// Fills speedup_vs_ar of every row from the first "ar_cached" row.
void fill_speedups(std::vector<BenchRow>& rows);

/// Fixed column order, see BenchRow.
std::string bench_csv(const std::vector<BenchRow>& rows);
std::vector<BenchRow> parse_bench_csv(const std::string& text);

struct QualityPoint {
  std::string kind;  // "diffusion" or "ar"
  int num_steps = 0;
  double perplexity = 0;
};

/// Perplexity-versus-latency scatter as SVG: one point per diffusion step
/// count plus one per AR row. Every bench row needs a quality point with the
/// same kind and step count. Throws InputError otherwise or on empty input.
std::string latency_quality_svg(const std::vector<BenchRow>& bench,
                                const std::vector<QualityPoint>& quality);
void plot_latency_quality(const std::filesystem::path& path, const std::vector<BenchRow>& bench,
                          const std::vector<QualityPoint>& quality);

}  // namespace sdtt
