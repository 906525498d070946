#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "sdtt/eval.hpp"
#include "table_denoiser.hpp"

using namespace sdtt;
using sdtt::testing::LambdaDenoiser;
using sdtt::testing::TableDenoiser;

namespace {

// Causal judge with all-zero parameters: every real token equally likely.
JudgeModel uniform_judge(int K, int L) {
  ModelConfig c;
  c.n_layers = 1;
  c.embed_dim = 8;
  c.n_heads = 2;
  c.context = L;
  c.vocab = K;
  c.causal = true;
  TrainState s = init_model(c, 1);
  s.params.setZero();
  return make_judge(s);
}

// Brute-force BLEU written from the definition with explicit n-gram lists.
double reference_bleu(const std::vector<int>& hyp, const std::vector<std::vector<int>>& refs) {
  const int orders = std::min<int>(4, static_cast<int>(hyp.size()));
  double log_sum = 0;
  for (int n = 1; n <= orders; ++n) {
    std::vector<std::vector<int>> grams;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) grams.emplace_back(hyp.begin() + i, hyp.begin() + i + n);
    auto count_in = [n](const std::vector<int>& seq, const std::vector<int>& g) {
      int c = 0;
      for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        if (std::equal(g.begin(), g.end(), seq.begin() + i)) ++c;
      }
      return c;
    };
    std::vector<std::vector<int>> distinct;
    for (const auto& g : grams) {
      if (std::find(distinct.begin(), distinct.end(), g) == distinct.end()) distinct.push_back(g);
    }
    int matched = 0;
    for (const auto& g : distinct) {
      int best = 0;
      for (const auto& r : refs) best = std::max(best, count_in(r, g));
      matched += std::min(count_in(hyp, g), best);
    }
    const double total = static_cast<double>(grams.size());
    if (matched == 0 && n == 1) return 0.0;
    log_sum += std::log(matched == 0 ? 1.0 / (total + 1.0) : matched / total);
  }
  double r = 1e9;
  const double c = static_cast<double>(hyp.size());
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / orders);
}

}  // namespace

TEST(GenerativePerplexity, UniformJudgeGivesVocabularySize) {
  const auto judge = uniform_judge(6, 8);
  Rng rng(1);
  Tokens samples(5, 8);
  for (Eigen::Index k = 0; k < samples.size(); ++k) samples.data()[k] = static_cast<int>(rng() % 5);
  EXPECT_NEAR(generative_perplexity(judge, samples), 5.0, 1e-9);
  EXPECT_NEAR(generative_perplexity(judge, samples, 3), 5.0, 1e-9);
}

TEST(GenerativePerplexity, SingleTokenWithQuarterProbability) {
  const auto judge = uniform_judge(5, 2);
  Tokens one(1, 2);
  one << 2, 3;
  EXPECT_NEAR(generative_perplexity(judge, one, 1), 4.0, 1e-12);
  const auto nll = judge_nll(judge, one, 1);
  EXPECT_EQ(nll.tokens, 1);
  EXPECT_NEAR(nll.nll, std::log(4.0), 1e-12);
}

TEST(GenerativePerplexity, InvariantToRowOrderAndChunking) {
  ModelConfig c;
  c.n_layers = 1;
  c.embed_dim = 16;
  c.n_heads = 2;
  c.context = 6;
  c.vocab = 7;
  c.causal = true;
  const auto judge = make_judge(init_model(c, 3));
  Rng rng(5);
  Tokens samples(70, 6);
  for (Eigen::Index k = 0; k < samples.size(); ++k) samples.data()[k] = static_cast<int>(rng() % 6);
  Tokens reversed = samples.colwise().reverse();
  const double a = generative_perplexity(judge, samples);
  const double b = generative_perplexity(judge, reversed);
  EXPECT_NEAR(a, b, 1e-9 * a);
  double nll = 0;
  for (Eigen::Index r = 0; r < 70; ++r) nll += judge_nll(judge, samples.row(r)).nll;
  EXPECT_NEAR(std::exp(nll / 420.0), a, 1e-9 * a);
}

TEST(GenerativePerplexity, RejectsBadInput) {
  const auto judge = uniform_judge(5, 4);
  EXPECT_THROW(generative_perplexity(judge, Tokens(0, 4)), InputError);
  Tokens masked = Tokens::Zero(1, 4);
  masked(0, 2) = 4;
  EXPECT_THROW(generative_perplexity(judge, masked), InputError);
  EXPECT_THROW(generative_perplexity(judge, Tokens::Zero(1, 4), 4), InputError);
  ModelConfig c = judge.config;
  c.causal = false;
  EXPECT_THROW(make_judge(init_model(c, 1)), InputError);
}

TEST(Bleu, MatchesBruteForceOracle) {
  const std::vector<std::vector<int>> groups{{0, 1, 0, 1}, {0, 1, 0, 1}, {2, 3, 2, 3}};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    std::vector<std::vector<int>> refs;
    std::vector<std::vector<std::int32_t>> refs32;
    for (std::size_t j = 0; j < groups.size(); ++j) {
      if (j == i) continue;
      refs.push_back(groups[j]);
      refs32.emplace_back(groups[j].begin(), groups[j].end());
    }
    const std::vector<std::int32_t> hyp(groups[i].begin(), groups[i].end());
    EXPECT_NEAR(bleu(hyp, refs32), reference_bleu(groups[i], refs), 1e-12);
  }
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    auto random_seq = [&] {
      std::vector<int> s(1 + rng() % 9);
      for (auto& v : s) v = static_cast<int>(rng() % 3);
      return s;
    };
    const auto hyp = random_seq();
    std::vector<std::vector<int>> refs{random_seq(), random_seq()};
    std::vector<std::vector<std::int32_t>> refs32(refs.begin(), refs.end());
    ASSERT_NEAR(bleu(std::vector<std::int32_t>(hyp.begin(), hyp.end()), refs32),
                reference_bleu(hyp, refs), 1e-12);
  }
}

TEST(Bleu, BoundaryValues) {
  const std::vector<std::int32_t> a{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(bleu(a, {a}), 1.0);
  EXPECT_DOUBLE_EQ(bleu(a, {{6, 7, 8, 9, 10}}), 0.0);
  EXPECT_THROW(bleu({}, {a}), InputError);
  EXPECT_THROW(bleu(a, {}), InputError);
}

TEST(SelfBleu, IdenticalAndDisjointCompletions) {
  const std::vector<std::int32_t> x{3, 1, 4, 1, 5, 9, 2, 6};
  EXPECT_DOUBLE_EQ(self_bleu({x, x, x, x, x}), 1.0);
  EXPECT_DOUBLE_EQ(self_bleu({{0, 1, 2}, {3, 4, 5}, {6, 7, 8}}), 0.0);
  EXPECT_THROW(self_bleu({x}), InputError);
}

TEST(SelfBleu, InvariantToCompletionOrder) {
  std::vector<std::vector<std::int32_t>> c{{0, 1, 0, 2}, {1, 1, 0, 2}, {2, 0, 1, 0}, {0, 1, 1, 1}};
  const double a = self_bleu(c);
  std::reverse(c.begin(), c.end());
  EXPECT_NEAR(self_bleu(c), a, 1e-15);
  EXPECT_NEAR(mean_self_bleu({c, c}), a, 1e-15);
}

TEST(ConditionalPrompts, DistinctRowsAndDeterministic) {
  PackedDataset ds;
  ds.L = 4;
  ds.rows.resize(30, 4);
  for (int r = 0; r < 30; ++r) ds.rows.row(r) << r, r + 1, r + 2, r + 3;
  const auto p = conditional_prompts(ds, 10, 2, 7);
  ASSERT_EQ(p.size(), 10u);
  std::set<int> firsts;
  for (const auto& v : p) {
    EXPECT_EQ(v.size(), 2u);
    EXPECT_EQ(v[1], v[0] + 1);
    firsts.insert(v[0]);
  }
  EXPECT_EQ(firsts.size(), 10u);
  EXPECT_EQ(conditional_prompts(ds, 10, 2, 7), p);
  EXPECT_THROW(conditional_prompts(ds, 31, 2, 7), InputError);
  EXPECT_THROW(conditional_prompts(ds, 3, 4, 7), InputError);
}

TEST(Completions, KeepPromptsOutAndDoNotDependOnBatching) {
  const TableDenoiser<float> table(5, 8);
  const std::vector<std::vector<std::int32_t>> prompts{{0, 1}, {2, 3}, {1, 1}};
  SamplerConfig cfg;
  cfg.num_steps = 4;
  cfg.seed = 3;
  const auto a = conditional_completions(table, prompts, 3, 6, cfg, NoiseSchedule::linear(), 64);
  const auto b = conditional_completions(table, prompts, 3, 6, cfg, NoiseSchedule::linear(), 2);
  ASSERT_EQ(a.size(), 3u);
  for (const auto& g : a) {
    ASSERT_EQ(g.size(), 3u);
    for (const auto& c : g) EXPECT_EQ(c.size(), 4u);
  }
  EXPECT_EQ(a, b);
  const auto u1 = unconditional_samples(table, 7, 5, cfg, NoiseSchedule::linear(), 64);
  const auto u2 = unconditional_samples(table, 7, 5, cfg, NoiseSchedule::linear(), 3);
  EXPECT_EQ(u1, u2);
}

namespace {

ClozeSet random_cloze(int n, int C, int S, int K, std::uint64_t seed) {
  Rng rng(seed);
  ClozeSet set;
  for (int k = 0; k < n; ++k) {
    ClozeItem item;
    for (int i = 0; i < C; ++i) item.context.push_back(static_cast<int>(rng() % (K - 1)));
    for (int i = 0; i < S; ++i) item.suffix.push_back(static_cast<int>(rng() % (K - 1)));
    set.items.push_back(item);
  }
  return set;
}

// Exact continuous-time bound for one item: sum over mask patterns m of the
// suffix of B(|m|, S - |m| + 1) * (-sum_{i in m} log x(z_m)[i, x_i]).
double exact_item_nelbo(const TableDenoiser<double>& table, const ClozeItem& item) {
  const int C = static_cast<int>(item.context.size());
  const int S = static_cast<int>(item.suffix.size());
  const int mask = table.vocab_size() - 1;
  double total = 0;
  for (int bits = 1; bits < (1 << S); ++bits) {
    std::vector<std::int32_t> row = item.context;
    row.insert(row.end(), item.suffix.begin(), item.suffix.end());
    int k = 0;
    for (int i = 0; i < S; ++i) {
      if (bits >> i & 1) {
        row[C + i] = mask;
        ++k;
      }
    }
    const double beta = std::tgamma(k) * std::tgamma(S - k + 1) / std::tgamma(S + 1);
    for (int i = 0; i < S; ++i) {
      if (bits >> i & 1) total -= beta * std::log(table.probs(row, C + i)[item.suffix[i]]);
    }
  }
  return total;
}

// Probability that n-step ancestral sampling of the suffix (context fixed)
// produces exactly the item's suffix, by forward recursion over suffix states.
double exact_suffix_likelihood(const TableDenoiser<double>& table, const ClozeItem& item, int n) {
  const int C = static_cast<int>(item.context.size());
  const int S = static_cast<int>(item.suffix.size());
  const int K = table.vocab_size();
  const int mask = K - 1;
  std::map<std::vector<std::int32_t>, double> states;
  std::vector<std::int32_t> start = item.context;
  start.resize(C + S, mask);
  states[start] = 1.0;
  for (int step = 0; step < n; ++step) {
    const double t = std::max(1.0 - static_cast<double>(step) / n, kMinTime);
    const double s = step + 1 == n ? 0.0 : 1.0 - static_cast<double>(step + 1) / n;
    std::map<std::vector<std::int32_t>, double> next;
    for (const auto& [row, mass] : states) {
      std::vector<std::vector<std::pair<int, double>>> moves(S);
      for (int i = 0; i < S; ++i) {
        if (row[C + i] != mask) {
          moves[i].push_back({row[C + i], 1.0});
          continue;
        }
        const auto x = table.probs(row, C + i);
        if (s > 0) moves[i].push_back({mask, s / t});
        // Only paths that can still end at the target suffix matter.
        moves[i].push_back({item.suffix[i], (t - s) / t * x[item.suffix[i]]});
      }
      std::vector<std::size_t> idx(S, 0);
      while (true) {
        auto out = row;
        double p = mass;
        for (int i = 0; i < S; ++i) {
          out[C + i] = moves[i][idx[i]].first;
          p *= moves[i][idx[i]].second;
        }
        next[out] += p;
        int i = 0;
        while (i < S && ++idx[i] == moves[i].size()) idx[i++] = 0;
        if (i == S) break;
      }
    }
    states = std::move(next);
  }
  auto full = item.context;
  full.insert(full.end(), item.suffix.begin(), item.suffix.end());
  return states[full];
}

}  // namespace

TEST(SuffixEval, BoundMatchesClosedFormAndExceedsExactPerplexity) {
  const TableDenoiser<double> table(3, 12);
  const auto cloze = random_cloze(6, 2, 2, 3, 1);
  SuffixEvalOptions opts;
  opts.draws = 20000;
  opts.seed = 3;
  const auto res = suffix_eval(table, cloze, NoiseSchedule::linear(), opts);
  double exact_nelbo = 0;
  double exact_nll = 0;
  for (const auto& item : cloze.items) {
    exact_nelbo += exact_item_nelbo(table, item);
    exact_nll -= std::log(exact_suffix_likelihood(table, item, 256));
  }
  exact_nelbo /= 12.0;
  exact_nll /= 12.0;
  EXPECT_NEAR(res.nelbo_per_token, exact_nelbo, 0.02 * exact_nelbo);
  EXPECT_GE(exact_nelbo, exact_nll);
  EXPECT_GE(res.perplexity_bound, std::exp(exact_nll));
  EXPECT_NEAR(res.perplexity_bound, std::exp(res.nelbo_per_token), 1e-12);
}

TEST(SuffixEval, AccuracyOfKnownDenoisers) {
  const auto cloze = random_cloze(200, 3, 2, 4, 9);
  // Uniform scores: infill always picks token 0.
  LambdaDenoiser<float> uniform(4, [](const Tokens&, Eigen::Index, int) {
    return std::vector<double>(4, 0.0);
  });
  int zeros = 0;
  for (const auto& item : cloze.items) zeros += item.suffix == std::vector<std::int32_t>{0, 0};
  const auto res = suffix_eval(uniform, cloze, NoiseSchedule::linear());
  EXPECT_DOUBLE_EQ(res.accuracy, zeros / 200.0);
  EXPECT_NEAR(res.perplexity_bound, 3.0, 0.15);
  EXPECT_EQ(res.items, 200);

  // An oracle that reads the answer from the context always succeeds.
  ClozeSet copy = cloze;
  for (auto& item : copy.items) item.context = {item.suffix[0], item.suffix[1], 0};
  LambdaDenoiser<float> reader(4, [](const Tokens& z, Eigen::Index b, int pos) {
    std::vector<double> s(4, -30.0);
    if (pos >= 3) s[z(b, pos - 3)] = 30.0;
    return s;
  });
  const auto perfect = suffix_eval(reader, copy, NoiseSchedule::linear());
  EXPECT_DOUBLE_EQ(perfect.accuracy, 1.0);
  EXPECT_NEAR(perfect.perplexity_bound, 1.0, 1e-6);
}

TEST(SuffixEval, ArAccuracyOnSingleItem) {
  ModelConfig c;
  c.n_layers = 1;
  c.embed_dim = 8;
  c.n_heads = 2;
  c.context = 5;
  c.vocab = 4;
  c.causal = true;
  VectorX<float> zero = VectorX<float>::Zero(parameter_count(c));
  ClozeSet cloze;
  cloze.items.push_back({{1, 2, 1}, {0, 0}});
  cloze.items.push_back({{1, 2, 1}, {0, 1}});
  EXPECT_DOUBLE_EQ(ar_suffix_accuracy(c, zero, cloze), 0.5);
  EXPECT_THROW(suffix_eval(TableDenoiser<float>(4, 1), ClozeSet{}, NoiseSchedule::linear()),
               InputError);
}

TEST(EvalReport, JsonRoundTripAndSummaryCsv) {
  EvalReport r;
  r.metric = "gen_ppl";
  r.value = 12.5;
  r.n_samples = 256;
  r.num_steps = 8;
  r.seed = 4;
  r.judge_hash = "abc";
  r.round = 3;
  r.settings["kind"] = "diffusion";
  const auto back = parse_eval_report(eval_report_json(r));
  EXPECT_EQ(back.metric, r.metric);
  EXPECT_EQ(back.value, r.value);
  EXPECT_EQ(back.n_samples, 256);
  EXPECT_EQ(back.judge_hash, "abc");
  EXPECT_EQ(back.settings.at("kind"), "diffusion");
  EXPECT_THROW(parse_eval_report("{\"metric\":1}"), DataError);

  const auto dir = sdtt::testing::scratch_dir("summary");
  write_eval_summary_csv(dir / "s.csv", {r});
  EXPECT_EQ(read_text_file(dir / "s.csv"), "round,num_steps,metric,value\n3,8,gen_ppl,12.5\n");
}
