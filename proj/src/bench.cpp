#include "sdtt/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sdtt {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Stats {
  double mean = 0;
  double stdev = 0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stdev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

const char* precision_name(Precision p) { return p == Precision::F64 ? "f64" : "f32"; }

std::vector<std::int32_t> bench_prompt(const ModelConfig& cfg, int n) {
  std::vector<std::int32_t> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i % (cfg.vocab - 1);
  return p;
}

template <typename Row>
int draw(const Row& logp, int mask, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  int last = 0;
  for (Eigen::Index v = 0; v < logp.size(); ++v) {
    if (v == mask) continue;
    cum += std::exp(static_cast<double>(logp(v)));
    last = static_cast<int>(v);
    if (u < cum) return last;
  }
  return last;
}

template <typename Scalar>
std::vector<BenchRow> run_diffusion(const ModelConfig& cfg, const VectorX<Scalar>& params,
                                    const BenchConfig& bench, const NoiseSchedule& schedule) {
  TransformerDenoiser<Scalar> model(cfg, params);
  std::vector<PromptSpec> specs(static_cast<std::size_t>(bench.batch),
                                {bench_prompt(cfg, bench.prompt_len), bench.prompt_len + bench.gen_length});
  const Tokens canvas = make_canvas(specs, cfg.mask_index());
  std::vector<BenchRow> rows;
  for (int steps : bench.steps) {
    SamplerConfig sc;
    sc.num_steps = steps;
    sc.seed = bench.seed;
    sc.precision = bench.precision;
    for (int w = 0; w < bench.warmup_runs; ++w) ancestral_sample(model, sc, canvas, schedule);
    std::vector<double> times;
    std::int64_t calls = 0;
    for (int r = 0; r < bench.timed_runs; ++r) {
      model.reset_forward_calls();
      const auto t0 = Clock::now();
      ancestral_sample(model, sc, canvas, schedule);
      times.push_back(elapsed_ms(t0));
      calls = model.forward_calls();
    }
    const auto st = stats(times);
    BenchRow row;
    row.kind = "diffusion";
    row.num_steps = steps;
    row.batch = bench.batch;
    row.gen_length = bench.gen_length;
    row.precision = precision_name(bench.precision);
    row.runs = bench.timed_runs;
    row.mean_ms = st.mean;
    row.std_ms = st.stdev;
    row.forward_passes = calls;
    row.tokens_per_sec = bench.batch * bench.gen_length / (st.mean / 1000.0);
    rows.push_back(row);
  }
  return rows;
}

struct ArRun {
  double prefill_ms = 0;
  double total_ms = 0;
  std::int64_t forwards = 0;
};

template <typename Scalar>
ArRun ar_cached_once(const ModelConfig& cfg, const VectorX<Scalar>& params, const BenchConfig& bench,
                     Rng& rng) {
  const int mask = cfg.mask_index();
  const auto prompt = bench_prompt(cfg, bench.prompt_len);
  const auto B = static_cast<std::size_t>(bench.batch);
  ArRun run;
  const auto t0 = Clock::now();
  AutoregressiveCache<Scalar> cache(cfg, bench.batch);
  std::vector<std::int32_t> feed(B, mask);
  RowMatrix<Scalar> logp = ar_forward_step(cfg, params, std::span<const std::int32_t>(feed), cache);
  for (auto tok : prompt) {
    std::fill(feed.begin(), feed.end(), tok);
    logp = ar_forward_step(cfg, params, std::span<const std::int32_t>(feed), cache);
  }
  run.prefill_ms = elapsed_ms(t0);
  for (int i = 0; i < bench.gen_length; ++i) {
    for (std::size_t b = 0; b < B; ++b) {
      feed[b] = draw(logp.row(static_cast<Eigen::Index>(b)), mask, rng);
    }
    if (i + 1 < bench.gen_length) {
      logp = ar_forward_step(cfg, params, std::span<const std::int32_t>(feed), cache);
    }
  }
  run.total_ms = elapsed_ms(t0);
  run.forwards = cache.steps;
  return run;
}

template <typename Scalar>
ArRun ar_uncached_once(const ModelConfig& cfg, const VectorX<Scalar>& params,
                       const BenchConfig& bench, Rng& rng) {
  const int mask = cfg.mask_index();
  const auto prompt = bench_prompt(cfg, bench.prompt_len);
  const int P = bench.prompt_len;
  ArRun run;
  const auto t0 = Clock::now();
  Tokens seq(bench.batch, 1 + P + bench.gen_length);
  seq.col(0).setConstant(mask);
  for (int i = 0; i < P; ++i) seq.col(1 + i).setConstant(prompt[static_cast<std::size_t>(i)]);
  for (int i = 0; i < bench.gen_length; ++i) {
    const int len = 1 + P + i;
    const Tokens in = seq.leftCols(len);
    const auto raw = transformer_forward(cfg, params, in);
    ++run.forwards;
    if (i == 0) run.prefill_ms = elapsed_ms(t0);
    RowMatrix<Scalar> last(bench.batch, raw.cols());
    for (int b = 0; b < bench.batch; ++b) last.row(b) = raw.row(static_cast<Eigen::Index>(b) * len + len - 1);
    const auto logp = real_token_log_softmax(last, mask);
    for (int b = 0; b < bench.batch; ++b) seq(b, len) = draw(logp.row(b), mask, rng);
  }
  run.total_ms = elapsed_ms(t0);
  return run;
}

template <typename Scalar>
BenchRow run_ar(const ModelConfig& cfg, const VectorX<Scalar>& params, const BenchConfig& bench,
                bool cached) {
  if (!cfg.causal) throw InputError("AR benchmark needs a causal model");
  if (bench.prompt_len + bench.gen_length > cfg.context) {
    throw InputError("prompt plus generation exceeds the model context");
  }
  Rng rng(bench.seed);
  auto once = [&] {
    return cached ? ar_cached_once(cfg, params, bench, rng) : ar_uncached_once(cfg, params, bench, rng);
  };
  for (int w = 0; w < bench.warmup_runs; ++w) once();
  std::vector<double> times;
  std::vector<double> prefill;
  std::int64_t forwards = 0;
  for (int r = 0; r < bench.timed_runs; ++r) {
    const auto run = once();
    times.push_back(run.total_ms);
    prefill.push_back(run.prefill_ms);
    forwards = run.forwards;
  }
  const auto st = stats(times);
  BenchRow row;
  row.kind = cached ? "ar_cached" : "ar_uncached";
  row.num_steps = static_cast<int>(forwards);
  row.batch = bench.batch;
  row.gen_length = bench.gen_length;
  row.precision = precision_name(bench.precision);
  row.runs = bench.timed_runs;
  row.mean_ms = st.mean;
  row.std_ms = st.stdev;
  row.prefill_ms = stats(prefill).mean;
  row.forward_passes = forwards;
  row.tokens_per_sec = bench.batch * bench.gen_length / (st.mean / 1000.0);
  return row;
}

std::string fmt(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

void BenchConfig::validate() const {
  if (batch < 1) throw InputError("batch must be positive");
  if (warmup_runs < 0) throw InputError("warmup_runs must be non-negative");
  if (timed_runs < 3) throw InputError("timed_runs must be at least 3");
  if (gen_length < 1) throw InputError("gen_length must be positive");
  if (prompt_len < 0) throw InputError("prompt_len must be non-negative");
  for (int s : steps) {
    if (s < 1) throw InputError("step counts must be positive");
  }
}

std::vector<BenchRow> bench_diffusion(const ModelConfig& config, const VectorX<float>& params,
                                      const BenchConfig& bench, const NoiseSchedule& schedule) {
  bench.validate();
  if (config.causal) throw InputError("diffusion benchmark needs a bidirectional model");
  if (bench.prompt_len + bench.gen_length > config.context) {
    throw InputError("prompt plus generation exceeds the model context");
  }
  if (bench.precision == Precision::F64) {
    return run_diffusion<double>(config, params.cast<double>(), bench, schedule);
  }
  return run_diffusion<float>(config, params, bench, schedule);
}

BenchRow bench_ar(const ModelConfig& config, const VectorX<float>& params, const BenchConfig& bench,
                  bool cached) {
  bench.validate();
  if (bench.precision == Precision::F64) {
    return run_ar<double>(config, params.cast<double>(), bench, cached);
  }
  return run_ar<float>(config, params, bench, cached);
}

void fill_speedups(std::vector<BenchRow>& rows) {
  const BenchRow* ar = nullptr;
  for (const auto& r : rows) {
    if (r.kind == "ar_cached") {
      ar = &r;
      break;
    }
  }
  if (!ar) return;
  const double ar_ms = ar->mean_ms;
  for (auto& r : rows) r.speedup_vs_ar = ar_ms / r.mean_ms;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "kind,num_steps,batch,gen_length,precision,runs,mean_ms,std_ms,prefill_ms,"
         "forward_passes,tokens_per_sec,speedup_vs_ar\n";
  for (const auto& r : rows) {
    out << r.kind << ',' << r.num_steps << ',' << r.batch << ',' << r.gen_length << ','
        << r.precision << ',' << r.runs << ',' << fmt(r.mean_ms) << ',' << fmt(r.std_ms) << ','
        << fmt(r.prefill_ms) << ',' << r.forward_passes << ',' << fmt(r.tokens_per_sec) << ','
        << fmt(r.speedup_vs_ar) << '\n';
  }
  return out.str();
}

std::vector<BenchRow> parse_bench_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("kind,num_steps", 0) != 0) {
    throw DataError("not a benchmark CSV");
  }
  std::vector<BenchRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw DataError("benchmark CSV row has " + std::to_string(f.size()) + " fields");
    try {
      BenchRow r;
      r.kind = f[0];
      r.num_steps = std::stoi(f[1]);
      r.batch = std::stoi(f[2]);
      r.gen_length = std::stoi(f[3]);
      r.precision = f[4];
      r.runs = std::stoi(f[5]);
      r.mean_ms = std::stod(f[6]);
      r.std_ms = std::stod(f[7]);
      r.prefill_ms = std::stod(f[8]);
      r.forward_passes = std::stoll(f[9]);
      r.tokens_per_sec = std::stod(f[10]);
      r.speedup_vs_ar = std::stod(f[11]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("malformed benchmark CSV row: " + line);
    }
  }
  return rows;
}

std::string latency_quality_svg(const std::vector<BenchRow>& bench,
                                const std::vector<QualityPoint>& quality) {
  if (bench.empty() || quality.empty()) throw InputError("nothing to plot");
  struct Point {
    double x, y;
    std::string label;
    bool ar;
  };
  std::vector<Point> pts;
  for (const auto& r : bench) {
    if (r.kind == "ar_uncached") continue;
    const bool ar = r.kind == "ar_cached";
    const QualityPoint* q = nullptr;
    for (const auto& c : quality) {
      if (ar ? c.kind == "ar" : (c.kind == "diffusion" && c.num_steps == r.num_steps)) {
        q = &c;
        break;
      }
    }
    if (!q) {
      throw InputError("no quality value for " + r.kind + " at " + std::to_string(r.num_steps) +
                       " steps");
    }
    pts.push_back({r.mean_ms, q->perplexity, ar ? "AR" : std::to_string(r.num_steps), ar});
  }
  if (pts.empty()) throw InputError("nothing to plot");

  double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
  for (const auto& p : pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double xpad = x1 > x0 ? 0.08 * (x1 - x0) : std::max(1.0, 0.1 * x0);
  const double ypad = y1 > y0 ? 0.08 * (y1 - y0) : std::max(1.0, 0.1 * y0);
  x0 = std::max(0.0, x0 - xpad);
  x1 += xpad;
  y0 = std::max(0.0, y0 - ypad);
  y1 += ypad;

  constexpr double W = 640, H = 420, ml = 70, mr = 20, mt = 30, mb = 55;
  auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto sy = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    s << "<text x=\"" << fmt(sx(xv), "%.2f") << "\" y=\"" << H - mb + 16
      << "\" text-anchor=\"middle\">" << fmt(xv, "%.3g") << "</text>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(sy(yv) + 4, "%.2f")
      << "\" text-anchor=\"end\">" << fmt(yv, "%.3g") << "</text>\n";
  }
  s << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\">latency per batch (ms)</text>\n";
  s << "<text x=\"16\" y=\"" << (mt + H - mb) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (mt + H - mb) / 2 << ")\">generative perplexity</text>\n";
  for (const auto& p : pts) {
    const auto cx = fmt(sx(p.x), "%.2f");
    const auto cy = fmt(sy(p.y), "%.2f");
    s << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"4\" fill=\""
      << (p.ar ? "#c0392b" : "#2c6fbb") << "\"/>\n";
    s << "<text x=\"" << fmt(sx(p.x) + 6, "%.2f") << "\" y=\"" << fmt(sy(p.y) - 6, "%.2f") << "\">"
      << p.label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void plot_latency_quality(const std::filesystem::path& path, const std::vector<BenchRow>& bench,
                          const std::vector<QualityPoint>& quality) {
  const auto svg = latency_quality_svg(bench, quality);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << svg;
}

}  // namespace sdtt
