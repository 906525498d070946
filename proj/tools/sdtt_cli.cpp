// sdtt: train, distil, sample, evaluate and benchmark masked diffusion
// language models.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdtt/bench.hpp"
#include "sdtt/checkpoint.hpp"
#include "sdtt/corpus.hpp"
#include "sdtt/distill.hpp"
#include "sdtt/eval.hpp"
#include "sdtt/run_config.hpp"
#include "sdtt/sampler.hpp"

namespace fs = std::filesystem;
using namespace sdtt;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumerical = 4 };

struct Common {
  std::string out;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_out, bool needs_seed = true) {
  c.out = default_out;
  sub->add_option("--out", c.out, "Output directory (relative paths go under $SDTT_OUT)")
      ->capture_default_str();
  auto* seed = sub->add_option("--seed", c.seed, "Global seed");
  if (needs_seed) seed->required();
}

TokenizerMode parse_tokenizer(const std::string& s) {
  if (s == "char") return TokenizerMode::Char;
  if (s == "byte") return TokenizerMode::Byte;
  throw InputError("unknown tokenizer '" + s + "'");
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw InputError("unknown precision '" + s + "'");
}

NoiseSchedule parse_schedule(const std::string& s) {
  if (s == "linear") return NoiseSchedule::linear();
  throw InputError("unknown noise schedule '" + s + "'");
}

/// Runs in an exclusively locked output directory and records a manifest.
class Run {
 public:
  Run(CLI::App* sub, const Common& c)
      : dir_(resolve_output_dir(c.out)), lock_(dir_) {
    manifest_.command = sub->get_name();
    manifest_.seed = c.seed;
    manifest_.config = "[" + sub->get_name() + "]\n" + sub->config_to_str(true, false);
    manifest_.config_hash = config_hash(manifest_.config);
  }

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& name) {
    manifest_.artifacts.push_back(name);
    return dir_ / name;
  }
  void finish() {
    write_file(dir_ / "config.ini", manifest_.config);
    write_manifest(dir_, manifest_);
  }

 private:
  fs::path dir_;
  DirectoryLock lock_;
  RunManifest manifest_;
};

/// Explicit path, else dataset.bin next to the checkpoint or one level up.
fs::path find_dataset(const std::string& explicit_path, const fs::path& ckpt) {
  if (!explicit_path.empty()) return explicit_path;
  for (const auto& dir : {ckpt.parent_path(), ckpt.parent_path().parent_path()}) {
    const auto p = dir / "dataset.bin";
    if (fs::exists(p)) return p;
  }
  throw InputError("no dataset.bin found near " + ckpt.string() + "; pass --dataset");
}

void check_vocab(const TrainState& state, const Vocab& vocab) {
  if (state.config.vocab != vocab.size()) {
    throw DataError("checkpoint vocabulary (" + std::to_string(state.config.vocab) +
                    ") does not match the dataset (" + std::to_string(vocab.size()) + ")");
  }
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> v;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw InputError("not an integer list: '" + s + "'");
    }
  }
  if (v.empty()) throw InputError("empty integer list");
  return v;
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& p) : out_(p, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot write " + p.string());
  }
  void line(const std::string& s) { out_ << s << '\n'; }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------- corpus

struct CorpusArgs {
  Common common;
  std::string text;
  std::size_t toy_chars = 0;
};

int cmd_corpus(CLI::App* sub, const CorpusArgs& a) {
  if (a.text.empty() == (a.toy_chars == 0)) throw InputError("give exactly one of --text or --toy");
  Run run(sub, a.common);
  const std::string text = a.text.empty() ? generate_toy_corpus(a.toy_chars, a.common.seed)
                                          : read_text_file(a.text);
  write_file(run.path("corpus.txt"), text);
  run.finish();
  std::cout << (run.dir() / "corpus.txt").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string corpus;
  std::string tokenizer = "char";
  std::string preset = "tiny";
  std::string schedule = "linear";
  int layers = 0;
  bool ar = false;
  bool all_rows = false;
  std::int64_t steps = 20000;
  int batch = 32;
  double lr = 6e-5;
  std::int64_t warmup = 500;
  double ema_decay = 0.9999;
  bool log_timing = false;
  int log_every = 100;
};

MetricsSink progress_sink(JsonlWriter& metrics, bool timing, int every, std::int64_t total,
                          const std::string& label) {
  return [&metrics, timing, every, total, label](const StepMetrics& m) {
    StepMetrics row = m;
    if (!timing) row.wall_ms = 0;
    auto j = nlohmann::json::parse(metrics_json(row));
    if (!timing) j.erase("wall_ms");
    metrics.line(j.dump());
    if (every > 0 && (m.step % every == 0)) {
      std::fprintf(stderr, "[%s] step %lld/%lld loss %.4f lr %.2e\n", label.c_str(),
                   static_cast<long long>(m.step), static_cast<long long>(total), m.loss, m.lr);
    }
  };
}

int cmd_train(CLI::App* sub, const TrainArgs& a) {
  const auto schedule = parse_schedule(a.schedule);
  const std::string text = read_text_file(a.corpus);
  const Vocab vocab = build_vocab(text, parse_tokenizer(a.tokenizer));
  ModelConfig cfg = model_preset(a.preset, vocab.size(), a.ar);
  if (a.layers > 0) cfg.n_layers = a.layers;
  cfg.validate();
  const PackedDataset packed = pack_sequences(text, vocab, cfg.context);
  const PackedDataset train_rows = a.all_rows ? packed : split_heldout(packed).train;

  Run run(sub, a.common);
  write_dataset(run.path("dataset.bin"), vocab, packed);
  TrainOptions opt;
  opt.steps = a.steps;
  opt.batch = a.batch;
  opt.lr = {a.lr, a.warmup};
  opt.seed = a.common.seed;
  TrainState state = init_model(cfg, a.common.seed, a.ema_decay);
  {
    JsonlWriter metrics(run.path("metrics.jsonl"));
    const auto sink = progress_sink(metrics, a.log_timing, a.log_every, a.steps, "train");
    state = a.ar ? pretrain_ar(std::move(state), train_rows, opt, sink)
                 : pretrain(std::move(state), train_rows, schedule, opt, sink);
  }
  save_checkpoint(run.path("checkpoint.bin"), state);
  run.finish();
  std::cout << (run.dir() / "checkpoint.bin").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- distill

struct DistillArgs {
  Common common;
  std::string teacher;
  std::string dataset;
  std::string schedule = "linear";
  std::string divergence = "kld";
  RoundPlan plan;
  std::int64_t warmup = 500;
  double lr = 6e-5;
  bool log_timing = false;
  int log_every = 100;
};

int cmd_distill(CLI::App* sub, DistillArgs& a) {
  const auto schedule = parse_schedule(a.schedule);
  a.plan.divergence = parse_divergence(a.divergence);
  a.plan.lr = {a.lr, a.warmup};
  a.plan.validate();
  const TrainState teacher = load_checkpoint(a.teacher);
  const auto data = read_dataset(find_dataset(a.dataset, a.teacher));
  check_vocab(teacher, data.vocab);
  const PackedDataset train_rows = split_heldout(data.dataset).train;

  Run run(sub, a.common);
  write_dataset(run.path("dataset.bin"), data.vocab, data.dataset);
  JsonlWriter rounds(run.path("rounds.jsonl"));
  JsonlWriter metrics(run.path("metrics.jsonl"));
  const auto sink = progress_sink(metrics, a.log_timing, a.log_every,
                                  a.plan.steps_per_round, "distill");
  iterated_sdtt(teacher, train_rows, a.plan, schedule, a.common.seed,
                [&](const TrainState& student, RoundRecord& rec) {
                  const std::string name = "round_" + std::to_string(rec.round);
                  fs::create_directories(run.dir() / name);
                  const auto ckpt = run.path(name + "/checkpoint.bin");
                  save_checkpoint(ckpt, student);
                  rec.checkpoint = ckpt.string();
                  rounds.line(round_manifest_json(rec));
                  std::fprintf(stderr, "[distill] round %d done: %d nominal steps, loss %.5f\n",
                               rec.round, rec.nominal_steps, rec.final_loss);
                },
                sink);
  run.finish();
  return kOk;
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  Common common;
  std::string ckpt;
  std::string dataset;
  std::string schedule = "linear";
  int steps = 16;
  int n = 8;
  int length = 0;
  int batch = 32;
  std::string prompt;
  bool greedy = false;
  double temperature = 1.0;
  double top_p = 1.0;
  std::string precision = "f32";
  bool use_ema = false;
};

int cmd_sample(CLI::App* sub, const SampleArgs& a) {
  const auto schedule = parse_schedule(a.schedule);
  const auto precision = parse_precision(a.precision);
  if (a.n < 1 || a.batch < 1) throw InputError("--n and --batch must be positive");
  const TrainState state = load_checkpoint(a.ckpt);
  const auto data = read_dataset(find_dataset(a.dataset, a.ckpt));
  check_vocab(state, data.vocab);
  const auto& cfg = state.config;
  const int length = a.length > 0 ? a.length : cfg.context;
  if (length > cfg.context) throw InputError("--length exceeds the model context");
  const auto prompt = data.vocab.tokenize(a.prompt);
  const VectorX<float>& params = a.use_ema ? state.ema : state.params;

  Run run(sub, a.common);
  JsonlWriter out(run.path("samples.jsonl"));
  auto emit = [&](const Tokens& rows, int num_steps) {
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      std::vector<std::int32_t> toks(rows.row(r).data(), rows.row(r).data() + rows.cols());
      out.line(sample_record_json(a.common.seed, num_steps, prompt, toks, data.vocab));
    }
  };
  if (cfg.causal) {
    std::vector<std::vector<std::int32_t>> prompts;
    for (int b = 0; b < a.n; ++b) prompts.push_back(prompt);
    emit(nucleus_sample_ar(cfg, params, a.top_p, length, prompts, a.common.seed),
         length - static_cast<int>(prompt.size()));
  } else {
    SamplerConfig sc;
    sc.num_steps = a.steps;
    sc.seed = a.common.seed;
    sc.greedy = a.greedy;
    sc.temperature = a.temperature;
    sc.precision = precision;
    for (int start = 0; start < a.n; start += a.batch) {
      const int rows = std::min(a.batch, a.n - start);
      sc.row_offset = static_cast<std::uint64_t>(start);
      const std::vector<PromptSpec> specs(static_cast<std::size_t>(rows), {prompt, length});
      const Tokens canvas = make_canvas(specs, cfg.mask_index());
      if (precision == Precision::F64) {
        emit(ancestral_sample(TransformerDenoiser<double>(cfg, params.cast<double>()), sc, canvas,
                              schedule),
             a.steps);
      } else {
        emit(ancestral_sample(TransformerDenoiser<float>(cfg, params), sc, canvas, schedule),
             a.steps);
      }
    }
  }
  run.finish();
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string ckpt;
  std::string dataset;
  std::string judge;
  std::string schedule = "linear";
  std::vector<std::string> metrics{"gen-ppl"};
  std::string steps = "8,16,32";
  int n_samples = 64;
  int n_prompts = 200;
  int continuations = 5;
  double prompt_frac = 0.25;
  int cloze_items = 1000;
  int suffix_len = 2;
  int nelbo_draws = 4;
  int round = -1;
  bool use_ema = false;
};

int cmd_eval(CLI::App* sub, const EvalArgs& a) {
  const auto schedule = parse_schedule(a.schedule);
  const auto step_list = parse_int_list(a.steps);
  for (const auto& m : a.metrics) {
    if (m != "gen-ppl" && m != "self-bleu" && m != "cond-ppl" && m != "suffix" && m != "nelbo") {
      throw InputError("unknown metric '" + m + "'");
    }
    if (m == "self-bleu" && a.continuations < 2) {
      throw InputError("self-BLEU needs at least 2 continuations per prompt");
    }
    if ((m == "gen-ppl" || m == "cond-ppl") && a.judge.empty()) {
      throw InputError("metric " + m + " needs --judge");
    }
  }
  const TrainState state = load_checkpoint(a.ckpt);
  const auto data = read_dataset(find_dataset(a.dataset, a.ckpt));
  check_vocab(state, data.vocab);
  const auto& cfg = state.config;
  const VectorX<float>& params = a.use_ema ? state.ema : state.params;
  const auto heldout = split_heldout(data.dataset).heldout;
  std::optional<JudgeModel> judge;
  if (!a.judge.empty()) {
    const TrainState js = load_checkpoint(a.judge);
    check_vocab(js, data.vocab);
    judge = make_judge(js);
  }
  const TransformerDenoiser<float> denoiser(cfg, params);
  const int prompt_len = std::max(1, static_cast<int>(std::lround(a.prompt_frac * cfg.context)));
  const int round = a.round >= 0 ? a.round : static_cast<int>(state.round);

  Run run(sub, a.common);
  std::vector<EvalReport> reports;
  auto report = [&](const std::string& metric, double value, std::int64_t n, int steps,
                    std::map<std::string, std::string> settings = {}) {
    EvalReport r;
    r.metric = metric;
    r.value = value;
    r.n_samples = n;
    r.num_steps = steps;
    r.seed = a.common.seed;
    r.judge_hash = judge ? judge->hash : "";
    r.round = round;
    r.settings = std::move(settings);
    reports.push_back(r);
    std::fprintf(stderr, "[eval] %s steps=%d value=%.6g\n", metric.c_str(), steps, value);
  };
  const std::map<std::string, std::string> bleu_settings{
      {"max_n", "4"}, {"weights", "uniform"}, {"brevity_penalty", "closest_ref"},
      {"smoothing", "add_one_zero_counts_n_ge_2"}};

  for (const auto& m : a.metrics) {
    if (m == "nelbo") {
      if (cfg.causal) throw InputError("nelbo needs a diffusion checkpoint");
      report("nelbo_per_token",
             evaluate_nelbo_per_token(cfg, params, heldout, schedule, a.nelbo_draws, a.common.seed),
             heldout.num_rows(), 0);
      continue;
    }
    if (m == "suffix") {
      const auto cloze = build_cloze_set(heldout, a.suffix_len,
                                         std::min(a.cloze_items, heldout.num_rows()), a.common.seed);
      if (cfg.causal) {
        report("suffix_accuracy", ar_suffix_accuracy(cfg, params, cloze),
               static_cast<std::int64_t>(cloze.items.size()), 0);
      } else {
        SuffixEvalOptions opt;
        opt.seed = a.common.seed;
        const auto r = suffix_eval(denoiser, cloze, schedule, opt);
        report("suffix_accuracy", r.accuracy, r.items, 1);
        report("suffix_ppl_bound", r.perplexity_bound, r.items, 1, {{"draws", "64"}});
      }
      continue;
    }
    for (int steps : step_list) {
      SamplerConfig sc;
      sc.num_steps = steps;
      sc.seed = a.common.seed;
      if (m == "gen-ppl") {
        Tokens samples;
        if (cfg.causal) {
          const std::vector<std::vector<std::int32_t>> empty(static_cast<std::size_t>(a.n_samples));
          samples = nucleus_sample_ar(cfg, params, 1.0, cfg.context, empty, a.common.seed);
        } else {
          samples = unconditional_samples(denoiser, a.n_samples, cfg.context, sc, schedule);
        }
        report("gen_ppl", generative_perplexity(*judge, samples), a.n_samples,
               cfg.causal ? cfg.context : steps, {{"kind", cfg.causal ? "ar" : "diffusion"}});
        if (cfg.causal) break;
        continue;
      }
      const auto prompts = conditional_prompts(heldout, std::min(a.n_prompts, heldout.num_rows()),
                                               prompt_len, a.common.seed);
      std::vector<std::vector<std::vector<std::int32_t>>> groups;
      if (cfg.causal) {
        groups.resize(prompts.size());
        std::vector<std::vector<std::int32_t>> rows;
        for (const auto& p : prompts) {
          for (int c = 0; c < a.continuations; ++c) rows.push_back(p);
        }
        const Tokens out = nucleus_sample_ar(cfg, params, 1.0, cfg.context, rows, a.common.seed);
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const auto r = static_cast<Eigen::Index>(k);
          groups[k / static_cast<std::size_t>(a.continuations)].emplace_back(
              out.row(r).data() + prompt_len, out.row(r).data() + out.cols());
        }
      } else {
        groups = conditional_completions(denoiser, prompts, a.continuations, cfg.context, sc,
                                         schedule);
      }
      const int n_rows = static_cast<int>(prompts.size()) * a.continuations;
      const int report_steps = cfg.causal ? cfg.context - prompt_len : steps;
      if (m == "self-bleu") {
        report("self_bleu", mean_self_bleu(groups), n_rows, report_steps, bleu_settings);
      } else {
        Tokens full(n_rows, cfg.context);
        for (std::size_t p = 0; p < groups.size(); ++p) {
          for (std::size_t c = 0; c < groups[p].size(); ++c) {
            const auto r = static_cast<Eigen::Index>(p * groups[p].size() + c);
            for (int i = 0; i < prompt_len; ++i) full(r, i) = prompts[p][static_cast<std::size_t>(i)];
            for (std::size_t i = 0; i < groups[p][c].size(); ++i) {
              full(r, prompt_len + static_cast<Eigen::Index>(i)) = groups[p][c][i];
            }
          }
        }
        report("cond_gen_ppl", generative_perplexity(*judge, full, prompt_len), n_rows,
               report_steps);
      }
      if (cfg.causal) break;
    }
  }
  {
    JsonlWriter out(run.path("eval.jsonl"));
    for (const auto& r : reports) out.line(eval_report_json(r));
  }
  write_eval_summary_csv(run.path("summary.csv"), reports);
  run.finish();
  return kOk;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  Common common;
  std::string ckpt;
  std::string ar_ckpt;
  std::string schedule = "linear";
  std::string steps = "16,32,64,128,256";
  std::string precision = "f32";
  std::string report = "bench.csv";
  std::string quality;
  std::string plot;
  BenchConfig cfg;
  bool uncached = false;
};

int cmd_bench(CLI::App* sub, BenchArgs& a) {
  const auto schedule = parse_schedule(a.schedule);
  a.cfg.steps = parse_int_list(a.steps);
  a.cfg.precision = parse_precision(a.precision);
  a.cfg.seed = a.common.seed;
  a.cfg.validate();
  const TrainState diff = load_checkpoint(a.ckpt);
  if (diff.config.causal) throw InputError("--ckpt must be a diffusion checkpoint");
  // Without a separate causal checkpoint the same weights run causally:
  // identical shapes, identical arithmetic cost.
  TrainState ar = a.ar_ckpt.empty() ? diff : load_checkpoint(a.ar_ckpt);
  ar.config.causal = true;

  Run run(sub, a.common);
  auto rows = bench_diffusion(diff.config, diff.params, a.cfg, schedule);
  rows.push_back(bench_ar(ar.config, ar.params, a.cfg, true));
  if (a.uncached) rows.push_back(bench_ar(ar.config, ar.params, a.cfg, false));
  fill_speedups(rows);
  write_file(run.path(a.report), bench_csv(rows));
  std::cout << bench_csv(rows);
  if (!a.plot.empty()) {
    if (a.quality.empty()) throw InputError("--plot needs --quality (eval JSONL)");
    std::ifstream in(a.quality);
    if (!in) throw DataError("cannot read " + a.quality);
    std::vector<QualityPoint> q;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto r = parse_eval_report(line);
      if (r.metric != "gen_ppl") continue;
      q.push_back({r.settings.count("kind") ? r.settings.at("kind") : "diffusion", r.num_steps,
                   r.value});
    }
    plot_latency_quality(run.path(a.plot), rows, q);
  }
  run.finish();
  return kOk;
}

// ---------------------------------------------------------------- inspect

int cmd_inspect(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::string head(16, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  if (head.rfind("SDTTCKPT1", 0) == 0) {
    const auto s = load_checkpoint(path);
    const auto& c = s.config;
    std::cout << "checkpoint " << path << '\n'
              << "  layers " << c.n_layers << ", dim " << c.embed_dim << ", heads " << c.n_heads
              << ", context " << c.context << ", vocab " << c.vocab << '\n'
              << "  causal " << (c.causal ? "yes" : "no") << ", rotary "
              << (c.rotary ? "yes" : "no") << '\n'
              << "  parameters " << parameter_count(c) << '\n'
              << "  step " << s.step << ", round " << s.round << ", ema decay " << s.ema_decay
              << '\n'
              << "  params hash " << params_hash(s.params) << '\n'
              << "  ema hash    " << params_hash(s.ema) << '\n';
    return kOk;
  }
  if (head.rfind("SDTTDS1", 0) == 0) {
    const auto d = read_dataset(path);
    std::cout << "dataset " << path << '\n'
              << "  tokenizer " << (d.vocab.mode() == TokenizerMode::Char ? "char" : "byte")
              << ", vocab " << d.vocab.size() << " (MASK id " << d.vocab.mask_index() << ")\n"
              << "  rows " << d.dataset.num_rows() << " x " << d.dataset.L << '\n';
    return kOk;
  }
  in.clear();
  in.seekg(0);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    std::cout << nlohmann::json::parse(ss.str()).dump(2) << '\n';
    return kOk;
  } catch (const nlohmann::json::exception&) {
  }
  // JSON lines
  std::istringstream lines(ss.str());
  std::string line;
  try {
    while (std::getline(lines, line)) {
      if (!line.empty()) std::cout << nlohmann::json::parse(line).dump(2) << '\n';
    }
  } catch (const nlohmann::json::exception&) {
    throw DataError(path + " is not a checkpoint, dataset or JSON file");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked diffusion language models with self-distillation through time"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kCodeVersion);
  app.set_config("--config", "",
                 "INI/TOML file with a [subcommand] section; command-line flags take precedence");
  app.fallthrough();

  CorpusArgs corpus;
  auto* c_corpus = app.add_subcommand("corpus", "Write a training corpus (copy or toy grammar)");
  add_common(c_corpus, corpus.common, "runs/corpus");
  c_corpus->add_option("--text", corpus.text, "Existing text file")->check(CLI::ExistingFile);
  c_corpus->add_option("--toy", corpus.toy_chars, "Generate at least this many toy characters");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Pretrain a diffusion model or its causal twin");
  add_common(c_train, train.common, "runs/train");
  c_train->add_option("--corpus", train.corpus, "Training text")->required()->check(CLI::ExistingFile);
  c_train->add_option("--tokenizer", train.tokenizer, "char or byte")->capture_default_str();
  c_train->add_option("--preset", train.preset, "Model shape")->capture_default_str();
  c_train->add_option("--layers", train.layers, "Override the preset depth");
  c_train->add_option("--schedule", train.schedule, "Noise schedule")->capture_default_str();
  c_train->add_flag("--ar", train.ar, "Train the causal (next-token) twin");
  c_train->add_flag("--all-rows", train.all_rows, "Train on held-out rows too (judge models)");
  c_train->add_option("--steps", train.steps, "Optimizer steps")->capture_default_str();
  c_train->add_option("--batch", train.batch, "Rows per step")->capture_default_str();
  c_train->add_option("--lr", train.lr, "Peak learning rate")->capture_default_str();
  c_train->add_option("--warmup", train.warmup, "Linear warmup steps")->capture_default_str();
  c_train->add_option("--ema-decay", train.ema_decay, "EMA decay")->capture_default_str();
  c_train->add_flag("--log-timing", train.log_timing, "Record wall_ms in metrics.jsonl");
  c_train->add_option("--log-every", train.log_every, "Progress interval (0 = quiet)");

  DistillArgs distill;
  auto* c_distill = app.add_subcommand("distill", "Iterated self-distillation through time");
  add_common(c_distill, distill.common, "runs/distill");
  c_distill->add_option("--teacher", distill.teacher, "Teacher checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  c_distill->add_option("--dataset", distill.dataset, "dataset.bin (default: next to teacher)");
  c_distill->add_option("--schedule", distill.schedule, "Noise schedule")->capture_default_str();
  c_distill->add_option("--rounds", distill.plan.n_rounds, "Number of rounds")->capture_default_str();
  c_distill->add_option("--teacher-steps", distill.plan.teacher_steps,
                        "Teacher steps per student step")
      ->capture_default_str();
  c_distill->add_option("--base-steps", distill.plan.base_steps, "Decoding steps of the teacher")
      ->capture_default_str();
  c_distill->add_option("--iters", distill.plan.steps_per_round, "Iterations per round")
      ->capture_default_str();
  c_distill->add_option("--divergence", distill.divergence, "kld, tvd, mse or chi2")
      ->capture_default_str();
  c_distill->add_option("--batch", distill.plan.batch, "Rows per iteration")->capture_default_str();
  c_distill->add_option("--lr", distill.lr, "Peak learning rate")->capture_default_str();
  c_distill->add_option("--warmup", distill.warmup, "Linear warmup per round")->capture_default_str();
  c_distill->add_option("--ema-decay", distill.plan.ema_decay, "EMA decay")->capture_default_str();
  c_distill->add_flag("--use-ema-teacher", distill.plan.use_ema_as_teacher,
                      "Teacher uses EMA weights");
  c_distill->add_flag("--reset-optimizer", distill.plan.reset_optimizer,
                      "Reset Adam moments and EMA every round");
  c_distill->add_flag("--log-timing", distill.log_timing, "Record wall_ms in metrics.jsonl");
  c_distill->add_option("--log-every", distill.log_every, "Progress interval (0 = quiet)");

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Draw samples to samples.jsonl");
  add_common(c_sample, sample.common, "runs/sample");
  c_sample->add_option("--ckpt", sample.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_sample->add_option("--dataset", sample.dataset, "dataset.bin (default: next to checkpoint)");
  c_sample->add_option("--schedule", sample.schedule, "Noise schedule")->capture_default_str();
  c_sample->add_option("--steps", sample.steps, "Reverse steps")->capture_default_str();
  c_sample->add_option("--n", sample.n, "Number of samples")->capture_default_str();
  c_sample->add_option("--length", sample.length, "Sequence length (default: context)");
  c_sample->add_option("--batch", sample.batch, "Rows per batch")->capture_default_str();
  c_sample->add_option("--prompt", sample.prompt, "Prompt text");
  c_sample->add_flag("--greedy", sample.greedy, "Argmax instead of sampling");
  c_sample->add_option("--temperature", sample.temperature, "Score temperature")
      ->capture_default_str();
  c_sample->add_option("--top-p", sample.top_p, "Nucleus mass (causal models)")
      ->capture_default_str();
  c_sample->add_option("--precision", sample.precision, "f32 or f64")->capture_default_str();
  c_sample->add_flag("--ema", sample.use_ema, "Use EMA weights");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Quality, diversity and cloze metrics");
  add_common(c_eval, eval.common, "runs/eval");
  c_eval->add_option("--ckpt", eval.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--dataset", eval.dataset, "dataset.bin (default: next to checkpoint)");
  c_eval->add_option("--judge", eval.judge, "Causal judge checkpoint")->check(CLI::ExistingFile);
  c_eval->add_option("--schedule", eval.schedule, "Noise schedule")->capture_default_str();
  c_eval->add_option("--metric", eval.metrics, "gen-ppl, cond-ppl, self-bleu, suffix, nelbo")
      ->delimiter(',')
      ->capture_default_str();
  c_eval->add_option("--steps", eval.steps, "Comma-separated decoding steps")->capture_default_str();
  c_eval->add_option("--n-samples", eval.n_samples, "Unconditional samples")->capture_default_str();
  c_eval->add_option("--n-prompts", eval.n_prompts, "Conditional prompts")->capture_default_str();
  c_eval->add_option("--continuations", eval.continuations, "Continuations per prompt")
      ->capture_default_str();
  c_eval->add_option("--prompt-frac", eval.prompt_frac, "Prompt share of the context")
      ->capture_default_str();
  c_eval->add_option("--cloze-items", eval.cloze_items, "Cloze items")->capture_default_str();
  c_eval->add_option("--suffix-len", eval.suffix_len, "Cloze suffix length")->capture_default_str();
  c_eval->add_option("--nelbo-draws", eval.nelbo_draws, "Corruptions per held-out row")
      ->capture_default_str();
  c_eval->add_option("--round", eval.round, "Round label (default: from checkpoint)");
  c_eval->add_flag("--ema", eval.use_ema, "Use EMA weights");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Decoding latency of diffusion versus cached AR");
  add_common(c_bench, bench.common, "runs/bench");
  c_bench->add_option("--ckpt", bench.ckpt, "Diffusion checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  c_bench->add_option("--ar-ckpt", bench.ar_ckpt, "Causal checkpoint (default: same weights)")
      ->check(CLI::ExistingFile);
  c_bench->add_option("--schedule", bench.schedule, "Noise schedule")->capture_default_str();
  c_bench->add_option("--batch", bench.cfg.batch, "Batch size")->capture_default_str();
  c_bench->add_option("--steps", bench.steps, "Comma-separated diffusion steps")
      ->capture_default_str();
  c_bench->add_option("--gen-length", bench.cfg.gen_length, "Generated tokens per row")
      ->capture_default_str();
  c_bench->add_option("--prompt-len", bench.cfg.prompt_len, "Prefilled tokens per row")
      ->capture_default_str();
  c_bench->add_option("--runs", bench.cfg.timed_runs, "Timed runs")->capture_default_str();
  c_bench->add_option("--warmup", bench.cfg.warmup_runs, "Warmup runs")->capture_default_str();
  c_bench->add_option("--precision", bench.precision, "f32 or f64")->capture_default_str();
  c_bench->add_option("--report", bench.report, "CSV file name in the output directory")
      ->capture_default_str();
  c_bench->add_option("--quality", bench.quality, "eval.jsonl with gen_ppl rows for the plot");
  c_bench->add_option("--plot", bench.plot, "SVG file name in the output directory");
  c_bench->add_flag("--uncached", bench.uncached, "Also time AR decoding without the cache");

  std::string inspect_path;
  auto* c_inspect = app.add_subcommand("inspect", "Describe a checkpoint, dataset or manifest");
  c_inspect->add_option("path", inspect_path, "File to describe")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*c_corpus) return cmd_corpus(c_corpus, corpus);
    if (*c_train) return cmd_train(c_train, train);
    if (*c_distill) return cmd_distill(c_distill, distill);
    if (*c_sample) return cmd_sample(c_sample, sample);
    if (*c_eval) return cmd_eval(c_eval, eval);
    if (*c_bench) return cmd_bench(c_bench, bench);
    if (*c_inspect) return cmd_inspect(inspect_path);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
