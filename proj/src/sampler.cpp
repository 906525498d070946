#include "sdtt/sampler.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

namespace sdtt {
namespace {

// Index drawn from a categorical row, or its argmax when greedy.
template <typename Row>
int draw_categorical(const Row& probs, bool greedy, Rng& rng) {
  const Eigen::Index K = probs.size();
  if (greedy) {
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < K; ++v) {
      if (probs(v) > probs(best)) best = v;
    }
    return static_cast<int>(best);
  }
  const double u = uniform01(rng);
  double cum = 0.0;
  Eigen::Index last_nonzero = 0;
  for (Eigen::Index v = 0; v < K; ++v) {
    const double p = static_cast<double>(probs(v));
    if (p <= 0.0) continue;
    cum += p;
    last_nonzero = v;
    if (u < cum) return static_cast<int>(v);
  }
  return static_cast<int>(last_nonzero);  // rounding slack
}

}  // namespace

Tokens make_canvas(const std::vector<PromptSpec>& prompts, int mask_index) {
  if (prompts.empty()) throw InputError("no prompts");
  const int L = prompts.front().length;
  Tokens canvas = Tokens::Constant(static_cast<Eigen::Index>(prompts.size()), L, mask_index);
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    const auto& p = prompts[b];
    if (p.length != L) throw InputError("prompts in one batch must share a length");
    if (static_cast<int>(p.prompt.size()) >= L) throw InputError("prompt must be shorter than L");
    for (std::size_t i = 0; i < p.prompt.size(); ++i) {
      if (p.prompt[i] == mask_index) throw InputError("prompt contains MASK");
      canvas(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) = p.prompt[i];
    }
  }
  return canvas;
}

template <typename Scalar>
Tokens ancestral_sample(const Denoiser<Scalar>& denoiser, const SamplerConfig& config,
                        const Tokens& canvas, const NoiseSchedule& schedule,
                        const StepObserver& observer) {
  if (config.num_steps < 1) throw InputError("num_steps must be at least 1");
  if (!(config.temperature > 0.0)) throw InputError("temperature must be positive");
  const int mask = denoiser.mask_index();
  const Eigen::Index B = canvas.rows();
  const Eigen::Index L = canvas.cols();
  const int n = config.num_steps;

  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(B));
  for (Eigen::Index b = 0; b < B; ++b) {
    rngs.emplace_back(derive_seed(config.seed, config.row_offset + static_cast<std::uint64_t>(b)));
  }

  NoisyState state{canvas, std::vector<double>(static_cast<std::size_t>(B))};
  std::vector<double> s(static_cast<std::size_t>(B));
  for (int i = 0; i < n; ++i) {
    const double t = std::max(1.0 - static_cast<double>(i) / n, kMinTime);
    const double s_i = (i == n - 1) ? 0.0 : 1.0 - static_cast<double>(i + 1) / n;
    std::fill(state.t.begin(), state.t.end(), t);
    std::fill(s.begin(), s.end(), s_i);

    RowMatrix<Scalar> raw = denoiser.forward(state.z);
    if (config.temperature != 1.0) raw /= Scalar(config.temperature);
    const auto grid = apply_output_constraints(raw, state.z, mask);
    const auto probs = reverse_step_distribution(state, grid, s, schedule, mask);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index pos = 0; pos < L; ++pos) {
        if (state.z(b, pos) != mask) continue;
        state.z(b, pos) = draw_categorical(probs.row(b * L + pos), config.greedy,
                                           rngs[static_cast<std::size_t>(b)]);
      }
    }
    if (observer) observer(i, state.z);
  }
  return state.z;
}

template <typename Scalar>
Tokens greedy_infill(const Denoiser<Scalar>& denoiser, const Tokens& rows) {
  const int mask = denoiser.mask_index();
  for (Eigen::Index b = 0; b < rows.rows(); ++b) {
    if (!(rows.row(b).array() == mask).any()) throw InputError("greedy_infill: row has no MASK");
  }
  const RowMatrix<Scalar> raw = denoiser.forward(rows);
  const Eigen::Index L = rows.cols();
  Tokens out = rows;
  for (Eigen::Index b = 0; b < rows.rows(); ++b) {
    for (Eigen::Index pos = 0; pos < L; ++pos) {
      if (rows(b, pos) != mask) continue;
      const auto r = raw.row(b * L + pos);
      int best = -1;
      for (Eigen::Index v = 0; v < r.size(); ++v) {
        if (v == mask) continue;
        if (best < 0 || r(v) > r(best)) best = static_cast<int>(v);
      }
      out(b, pos) = best;
    }
  }
  return out;
}

std::vector<NucleusEntry> top_p_filter(std::span<const double> probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw InputError("nucleus p must lie in (0, 1]");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
  std::vector<NucleusEntry> kept;
  double cum = 0.0;
  for (int v : order) {
    const double pv = probs[static_cast<std::size_t>(v)];
    if (pv <= 0.0) break;
    kept.push_back({v, pv});
    cum += pv;
    if (cum >= p - 1e-12) break;
  }
  for (auto& e : kept) e.prob /= cum;
  return kept;
}

namespace {

// Feeds BOS and the prompts through the cache; returns the last log-probs.
RowMatrix<float> prefill(const ModelConfig& cfg, const VectorX<float>& params,
                         const std::vector<std::vector<std::int32_t>>& prompts,
                         AutoregressiveCache<float>& cache, Tokens& out) {
  const auto B = static_cast<Eigen::Index>(prompts.size());
  const std::size_t P = prompts.front().size();
  std::vector<std::int32_t> feed(static_cast<std::size_t>(B), cfg.mask_index());
  RowMatrix<float> logp = ar_forward_step(cfg, params, std::span<const std::int32_t>(feed), cache);
  for (std::size_t i = 0; i < P; ++i) {
    for (Eigen::Index b = 0; b < B; ++b) {
      feed[static_cast<std::size_t>(b)] = prompts[static_cast<std::size_t>(b)][i];
      out(b, static_cast<Eigen::Index>(i)) = feed[static_cast<std::size_t>(b)];
    }
    logp = ar_forward_step(cfg, params, std::span<const std::int32_t>(feed), cache);
  }
  return logp;
}

template <typename Pick>
Tokens ar_decode(const ModelConfig& cfg, const VectorX<float>& params,
                 const std::vector<std::vector<std::int32_t>>& prompts, int total_len, Pick&& pick) {
  if (prompts.empty()) throw InputError("no prompts");
  const std::size_t P = prompts.front().size();
  for (const auto& p : prompts) {
    if (p.size() != P) throw InputError("prompts in one batch must share a length");
  }
  if (static_cast<int>(P) >= total_len) throw InputError("prompt must be shorter than the output");
  if (total_len > cfg.context) throw InputError("output longer than the model context");
  const auto B = static_cast<Eigen::Index>(prompts.size());
  AutoregressiveCache<float> cache(cfg, static_cast<int>(B));
  Tokens out(B, total_len);
  RowMatrix<float> logp = prefill(cfg, params, prompts, cache, out);
  std::vector<std::int32_t> feed(static_cast<std::size_t>(B));
  for (int pos = static_cast<int>(P); pos < total_len; ++pos) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const int tok = pick(b, logp.row(b));
      out(b, pos) = tok;
      feed[static_cast<std::size_t>(b)] = tok;
    }
    if (pos + 1 < total_len) {
      logp = ar_forward_step(cfg, params, std::span<const std::int32_t>(feed), cache);
    }
  }
  return out;
}

}  // namespace

Tokens nucleus_sample_ar(const ModelConfig& config, const VectorX<float>& params, double p,
                         int max_len, const std::vector<std::vector<std::int32_t>>& prompts,
                         std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) throw InputError("nucleus p must lie in (0, 1]");
  std::vector<Rng> rngs;
  for (std::size_t b = 0; b < prompts.size(); ++b) rngs.emplace_back(derive_seed(seed, b));
  std::vector<double> probs(static_cast<std::size_t>(config.vocab));
  return ar_decode(config, params, prompts, max_len, [&](Eigen::Index b, const auto& logp) {
    for (Eigen::Index v = 0; v < logp.size(); ++v) {
      probs[static_cast<std::size_t>(v)] = std::exp(static_cast<double>(logp(v)));
    }
    const auto kept = top_p_filter(probs, p);
    const double u = uniform01(rngs[static_cast<std::size_t>(b)]);
    double cum = 0.0;
    for (const auto& e : kept) {
      cum += e.prob;
      if (u < cum) return e.token;
    }
    return kept.back().token;
  });
}

Tokens greedy_ar_complete(const ModelConfig& config, const VectorX<float>& params,
                          const std::vector<std::vector<std::int32_t>>& prompts, int n_tokens) {
  if (prompts.empty()) throw InputError("no prompts");
  const int total = static_cast<int>(prompts.front().size()) + n_tokens;
  const int mask = config.mask_index();
  return ar_decode(config, params, prompts, total, [mask](Eigen::Index, const auto& logp) {
    int best = -1;
    for (Eigen::Index v = 0; v < logp.size(); ++v) {
      if (v == mask) continue;
      if (best < 0 || logp(v) > logp(best)) best = static_cast<int>(v);
    }
    return best;
  });
}

std::string sample_record_json(std::uint64_t seed, int num_steps,
                               const std::vector<std::int32_t>& prompt,
                               const std::vector<std::int32_t>& tokens, const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["num_steps"] = num_steps;
  j["prompt"] = prompt;
  j["tokens"] = tokens;
  j["text"] = vocab.detokenize(tokens);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

template Tokens ancestral_sample<float>(const Denoiser<float>&, const SamplerConfig&, const Tokens&,
                                        const NoiseSchedule&, const StepObserver&);
template Tokens ancestral_sample<double>(const Denoiser<double>&, const SamplerConfig&,
                                         const Tokens&, const NoiseSchedule&, const StepObserver&);
template Tokens greedy_infill<float>(const Denoiser<float>&, const Tokens&);
template Tokens greedy_infill<double>(const Denoiser<double>&, const Tokens&);

}  // namespace sdtt
