#include "sdtt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "sdtt/checkpoint.hpp"

namespace sdtt {
namespace {

using Ngram = std::vector<std::int32_t>;

std::map<Ngram, int> ngram_counts(const std::vector<std::int32_t>& seq, int n) {
  std::map<Ngram, int> counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i) {
    ++counts[Ngram(seq.begin() + static_cast<std::ptrdiff_t>(i),
                   seq.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

std::vector<std::int32_t> row_vector(const Tokens& t, Eigen::Index r, Eigen::Index from = 0) {
  std::vector<std::int32_t> v;
  for (Eigen::Index i = from; i < t.cols(); ++i) v.push_back(t(r, i));
  return v;
}

}  // namespace

JudgeModel make_judge(const TrainState& ar_state) {
  if (!ar_state.config.causal) throw InputError("the judge must be a causal model");
  return {ar_state.config, ar_state.params.cast<double>(), params_hash(ar_state.params)};
}

NllSum judge_nll(const JudgeModel& judge, const Tokens& samples, int prompt_len) {
  if (samples.rows() == 0 || samples.cols() == 0) throw InputError("no samples to score");
  if (prompt_len < 0 || prompt_len >= samples.cols()) {
    throw InputError("prompt length must leave at least one scored token");
  }
  const int mask = judge.config.mask_index();
  if ((samples.array() == mask).any()) throw InputError("samples contain MASK");
  if ((samples.array() < 0).any() || (samples.array() > mask).any()) {
    throw InputError("sample token outside the judge vocabulary");
  }
  constexpr Eigen::Index kChunk = 32;
  const Eigen::Index L = samples.cols();
  NllSum out;
  for (Eigen::Index start = 0; start < samples.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, samples.rows() - start);
    const Tokens x = samples.middleRows(start, n);
    const auto raw = transformer_forward<double>(judge.config, judge.params, ar_inputs(x, mask));
    const auto logp = real_token_log_softmax(raw, mask);
    for (Eigen::Index b = 0; b < n; ++b) {
      for (Eigen::Index i = prompt_len; i < L; ++i) out.nll -= logp(b * L + i, x(b, i));
    }
  }
  out.tokens = static_cast<std::int64_t>(samples.rows()) * (L - prompt_len);
  return out;
}

double generative_perplexity(const JudgeModel& judge, const Tokens& samples, int prompt_len) {
  const auto s = judge_nll(judge, samples, prompt_len);
  return std::exp(s.nll / static_cast<double>(s.tokens));
}

double bleu(const std::vector<std::int32_t>& hyp,
            const std::vector<std::vector<std::int32_t>>& refs, int max_n) {
  if (hyp.empty()) throw InputError("empty hypothesis");
  if (refs.empty()) throw InputError("BLEU needs at least one reference");
  if (max_n < 1) throw InputError("max_n must be positive");
  const int orders = std::min<int>(max_n, static_cast<int>(hyp.size()));
  double log_sum = 0.0;
  for (int n = 1; n <= orders; ++n) {
    const auto h = ngram_counts(hyp, n);
    std::map<Ngram, int> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    int matched = 0;
    int total = 0;
    for (const auto& [g, c] : h) {
      total += c;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    if (matched == 0) {
      if (n == 1) return 0.0;
      log_sum += std::log(1.0 / (total + 1.0));
    } else {
      log_sum += std::log(static_cast<double>(matched) / total);
    }
  }
  const auto c = static_cast<double>(hyp.size());
  double r = static_cast<double>(refs.front().size());
  for (const auto& ref : refs) {
    const auto len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) {
      r = len;
    }
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / orders);
}

double self_bleu(const std::vector<std::vector<std::int32_t>>& completions, int max_n) {
  if (completions.size() < 2) throw InputError("self-BLEU needs at least 2 completions");
  double sum = 0.0;
  for (std::size_t i = 0; i < completions.size(); ++i) {
    std::vector<std::vector<std::int32_t>> others;
    for (std::size_t j = 0; j < completions.size(); ++j) {
      if (j != i) others.push_back(completions[j]);
    }
    sum += bleu(completions[i], others, max_n);
  }
  return sum / static_cast<double>(completions.size());
}

double mean_self_bleu(const std::vector<std::vector<std::vector<std::int32_t>>>& groups,
                      int max_n) {
  if (groups.empty()) throw InputError("no completion groups");
  double sum = 0.0;
  for (const auto& g : groups) sum += self_bleu(g, max_n);
  return sum / static_cast<double>(groups.size());
}

std::vector<std::vector<std::int32_t>> conditional_prompts(const PackedDataset& rows,
                                                           int n_prompts, int prompt_len,
                                                           std::uint64_t seed) {
  if (n_prompts < 1 || n_prompts > rows.num_rows()) {
    throw InputError("n_prompts must lie in [1, number of rows]");
  }
  if (prompt_len < 1 || prompt_len >= rows.L) throw InputError("prompt_len must lie in [1, L)");
  std::vector<int> order(static_cast<std::size_t>(rows.num_rows()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
    std::swap(order[i], order[std::min(j, i)]);
  }
  std::vector<std::vector<std::int32_t>> prompts;
  for (int p = 0; p < n_prompts; ++p) {
    const Tokens row = rows.rows.row(order[static_cast<std::size_t>(p)]);
    auto v = row_vector(row, 0);
    v.resize(static_cast<std::size_t>(prompt_len));
    prompts.push_back(std::move(v));
  }
  return prompts;
}

template <typename Scalar>
std::vector<std::vector<std::vector<std::int32_t>>> conditional_completions(
    const Denoiser<Scalar>& denoiser, const std::vector<std::vector<std::int32_t>>& prompts,
    int n_continuations, int length, const SamplerConfig& sampler, const NoiseSchedule& schedule,
    int batch) {
  if (prompts.empty()) throw InputError("no prompts");
  if (n_continuations < 1) throw InputError("n_continuations must be positive");
  if (batch < 1) throw InputError("batch must be positive");
  std::vector<PromptSpec> specs;
  for (const auto& p : prompts) {
    for (int c = 0; c < n_continuations; ++c) specs.push_back({p, length});
  }
  std::vector<std::vector<std::vector<std::int32_t>>> out(prompts.size());
  for (std::size_t start = 0; start < specs.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(specs.size(), start + static_cast<std::size_t>(batch));
    const std::vector<PromptSpec> chunk(specs.begin() + static_cast<std::ptrdiff_t>(start),
                                        specs.begin() + static_cast<std::ptrdiff_t>(end));
    SamplerConfig cfg = sampler;
    cfg.row_offset = sampler.row_offset + start;
    const Tokens z =
        ancestral_sample(denoiser, cfg, make_canvas(chunk, denoiser.mask_index()), schedule);
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t p = k / static_cast<std::size_t>(n_continuations);
      out[p].push_back(row_vector(z, static_cast<Eigen::Index>(k - start),
                                  static_cast<Eigen::Index>(prompts[p].size())));
    }
  }
  return out;
}

template <typename Scalar>
Tokens unconditional_samples(const Denoiser<Scalar>& denoiser, int n, int length,
                             const SamplerConfig& sampler, const NoiseSchedule& schedule,
                             int batch) {
  if (n < 1 || length < 1 || batch < 1) throw InputError("sample count, length and batch must be positive");
  Tokens out(n, length);
  for (int start = 0; start < n; start += batch) {
    const int rows = std::min(batch, n - start);
    SamplerConfig cfg = sampler;
    cfg.row_offset = sampler.row_offset + static_cast<std::uint64_t>(start);
    const Tokens canvas = Tokens::Constant(rows, length, denoiser.mask_index());
    out.middleRows(start, rows) = ancestral_sample(denoiser, cfg, canvas, schedule);
  }
  return out;
}

template <typename Scalar>
SuffixEvalResult suffix_eval(const Denoiser<Scalar>& denoiser, const ClozeSet& cloze,
                             const NoiseSchedule& schedule, const SuffixEvalOptions& options) {
  if (cloze.items.empty()) throw InputError("empty cloze set");
  if (options.draws < 1) throw InputError("draws must be positive");
  const int mask = denoiser.mask_index();
  const auto& first = cloze.items.front();
  const auto C = static_cast<Eigen::Index>(first.context.size());
  const auto S = static_cast<Eigen::Index>(first.suffix.size());
  const Eigen::Index L = C + S;
  for (const auto& item : cloze.items) {
    if (static_cast<Eigen::Index>(item.context.size()) != C ||
        static_cast<Eigen::Index>(item.suffix.size()) != S || S == 0) {
      throw InputError("cloze items must share context and suffix lengths");
    }
  }
  const auto n_items = static_cast<Eigen::Index>(cloze.items.size());
  const Eigen::Index items_per_batch = std::max<Eigen::Index>(1, options.batch_rows / options.draws);

  SuffixEvalResult result;
  result.items = static_cast<int>(n_items);
  int correct = 0;
  double nelbo_sum = 0.0;
  for (Eigen::Index start = 0; start < n_items; start += items_per_batch) {
    const Eigen::Index n = std::min(items_per_batch, n_items - start);
    Tokens clean(n, L);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& item = cloze.items[static_cast<std::size_t>(start + k)];
      for (Eigen::Index i = 0; i < C; ++i) clean(k, i) = item.context[static_cast<std::size_t>(i)];
      for (Eigen::Index i = 0; i < S; ++i) clean(k, C + i) = item.suffix[static_cast<std::size_t>(i)];
    }

    Tokens infill_in = clean;
    infill_in.rightCols(S).setConstant(mask);
    const Tokens infilled = greedy_infill(denoiser, infill_in);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (infilled.row(k).rightCols(S) == clean.row(k).rightCols(S)) ++correct;
    }

    NoisyState z{Tokens(n * options.draws, L), std::vector<double>(static_cast<std::size_t>(n * options.draws))};
    Tokens x(n * options.draws, L);
    for (Eigen::Index k = 0; k < n; ++k) {
      Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(start + k)));
      for (int d = 0; d < options.draws; ++d) {
        const Eigen::Index r = k * options.draws + d;
        const double t = std::max((d + uniform01(rng)) / options.draws, kMinTime);
        const double a = schedule(t).alpha;
        z.t[static_cast<std::size_t>(r)] = t;
        x.row(r) = clean.row(k);
        z.z.row(r) = clean.row(k);
        for (Eigen::Index i = C; i < L; ++i) {
          if (uniform01(rng) >= a) z.z(r, i) = mask;
        }
      }
    }
    const auto grid = apply_output_constraints(denoiser.forward(z.z), z.z, mask);
    // nelbo() averages over rows; scale back to a sum over draws.
    nelbo_sum += nelbo(grid, x, z, schedule, mask) * static_cast<double>(z.z.rows()) / options.draws;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n_items);
  result.nelbo_per_token = nelbo_sum / (static_cast<double>(n_items) * static_cast<double>(S));
  result.perplexity_bound = std::exp(result.nelbo_per_token);
  return result;
}

double ar_suffix_accuracy(const ModelConfig& config, const VectorX<float>& params,
                          const ClozeSet& cloze, int batch) {
  if (cloze.items.empty()) throw InputError("empty cloze set");
  const int S = static_cast<int>(cloze.items.front().suffix.size());
  int correct = 0;
  for (std::size_t start = 0; start < cloze.items.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(cloze.items.size(), start + static_cast<std::size_t>(batch));
    std::vector<std::vector<std::int32_t>> contexts;
    for (std::size_t k = start; k < end; ++k) contexts.push_back(cloze.items[k].context);
    const Tokens out = greedy_ar_complete(config, params, contexts, S);
    for (std::size_t k = start; k < end; ++k) {
      const auto& item = cloze.items[k];
      bool ok = true;
      for (int i = 0; i < S && ok; ++i) {
        ok = out(static_cast<Eigen::Index>(k - start),
                 static_cast<Eigen::Index>(item.context.size()) + i) ==
             item.suffix[static_cast<std::size_t>(i)];
      }
      if (ok) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(cloze.items.size());
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["n_samples"] = r.n_samples;
  j["num_steps"] = r.num_steps;
  j["seed"] = r.seed;
  j["precision"] = r.precision;
  j["judge_hash"] = r.judge_hash;
  j["round"] = r.round;
  j["settings"] = r.settings;
  return j.dump();
}

EvalReport parse_eval_report(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    EvalReport r;
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    r.n_samples = j.at("n_samples").get<std::int64_t>();
    r.num_steps = j.at("num_steps").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.precision = j.at("precision").get<std::string>();
    r.judge_hash = j.at("judge_hash").get<std::string>();
    r.round = j.at("round").get<int>();
    if (j.contains("settings")) r.settings = j["settings"].get<std::map<std::string, std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed eval report: ") + e.what());
  }
}

void write_eval_summary_csv(const std::filesystem::path& path,
                            const std::vector<EvalReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "round,num_steps,metric,value\n";
  char buf[64];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.10g", r.value);
    out << r.round << ',' << r.num_steps << ',' << r.metric << ',' << buf << '\n';
  }
}

#define SDTT_INSTANTIATE(S)                                                                        \
  template std::vector<std::vector<std::vector<std::int32_t>>> conditional_completions<S>(         \
      const Denoiser<S>&, const std::vector<std::vector<std::int32_t>>&, int, int,                 \
      const SamplerConfig&, const NoiseSchedule&, int);                                            \
  template Tokens unconditional_samples<S>(const Denoiser<S>&, int, int, const SamplerConfig&,     \
                                           const NoiseSchedule&, int);                             \
  template SuffixEvalResult suffix_eval<S>(const Denoiser<S>&, const ClozeSet&,                    \
                                           const NoiseSchedule&, const SuffixEvalOptions&);
SDTT_INSTANTIATE(float)
SDTT_INSTANTIATE(double)
#undef SDTT_INSTANTIATE

}  // namespace sdtt
