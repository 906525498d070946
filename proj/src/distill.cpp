#include "sdtt/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

namespace sdtt {
namespace {

template <typename Row>
int draw(const Row& probs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  Eigen::Index last = 0;
  for (Eigen::Index v = 0; v < probs.size(); ++v) {
    const double p = static_cast<double>(probs(v));
    if (p <= 0.0) continue;
    cum += p;
    last = v;
    if (u < cum) return static_cast<int>(v);
  }
  return static_cast<int>(last);
}

template <typename Scalar>
std::span<const Scalar> row_span(const RowMatrix<Scalar>& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace

template <typename Scalar>
std::size_t DistillTargets<Scalar>::count() const {
  return static_cast<std::size_t>(std::count(covered.begin(), covered.end(), std::uint8_t{1}));
}

template <typename Scalar>
DistillTargets<Scalar> compute_sdtt_targets(const Denoiser<Scalar>& teacher, const NoisyState& x_t,
                                            int n_steps, double delta,
                                            const NoiseSchedule& schedule, Rng& rng) {
  if (n_steps < 2) throw InputError("teacher needs at least 2 steps per target");
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("delta must lie in (0, 1)");
  const int mask = teacher.mask_index();
  const Eigen::Index B = x_t.batch();
  const Eigen::Index L = x_t.length();
  const auto K = static_cast<Eigen::Index>(teacher.vocab_size());

  DistillTargets<Scalar> out;
  out.L = static_cast<int>(L);
  out.values = RowMatrix<Scalar>::Zero(B * L, K);
  out.covered.assign(static_cast<std::size_t>(B * L), 0);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index i = 0; i < L; ++i) {
      if (x_t.z(b, i) == mask) out.covered[static_cast<std::size_t>(b * L + i)] = 1;
    }
  }
  if (out.count() == 0) return out;

  NoisyState z = x_t;
  std::vector<double> s(static_cast<std::size_t>(B));
  for (int step = 0; step < n_steps; ++step) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      z.t[bi] = std::max(x_t.t[bi] - step * delta, kMinTime);
      s[bi] = std::max(z.t[bi] - delta, 0.0);
    }
    const auto grid = apply_output_constraints(teacher.forward(z.z), z.z, mask);
    const auto probs = reverse_step_distribution(z, grid, s, schedule, mask);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index i = 0; i < L; ++i) {
        if (z.z(b, i) != mask) continue;
        const Eigen::Index r = b * L + i;
        // Overwritten every step while masked: ends as the row of the step
        // that unmasked it, or of the last step.
        out.values.row(r) = grid.values.row(r);
        z.z(b, i) = draw(probs.row(r), rng);
      }
    }
  }
  return out;
}

template <typename Scalar>
double distill_loss(Divergence d, const LogProbGrid<Scalar>& student,
                    const DistillTargets<Scalar>& targets, int mask_index,
                    RowMatrix<Scalar>* dscores) {
  if (!student.constraint_applied) throw ContractError("distill_loss needs a constrained grid");
  if (student.values.rows() != targets.values.rows() ||
      student.values.cols() != targets.values.cols()) {
    throw ContractError("student and target grids differ in shape");
  }
  if (dscores) dscores->setZero(student.values.rows(), student.values.cols());
  const std::size_t n = targets.count();
  if (n == 0) return 0.0;
  const auto K = static_cast<std::size_t>(student.values.cols());
  const Scalar scale = Scalar(1.0 / static_cast<double>(n));
  double total = 0.0;
  for (Eigen::Index r = 0; r < student.values.rows(); ++r) {
    if (!targets.covered[static_cast<std::size_t>(r)]) continue;
    const auto p = row_span(student.values, r);
    const auto q = row_span(targets.values, r);
    total += divergence(d, p, q, mask_index);
    if (dscores) {
      divergence_grad(d, p, q, mask_index, scale, std::span<Scalar>(dscores->row(r).data(), K));
    }
  }
  return total / static_cast<double>(n);
}

void RoundPlan::validate() const {
  if (n_rounds < 1) throw InputError("n_rounds must be at least 1");
  if (teacher_steps < 2) throw InputError("teacher_steps must be at least 2");
  if (steps_per_round < 0) throw InputError("steps_per_round must be non-negative");
  if (batch < 1) throw InputError("batch must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw InputError("ema_decay must lie in [0, 1)");
  std::int64_t steps = base_steps;
  for (int j = 0; j < n_rounds; ++j) {
    if (steps % teacher_steps != 0 || steps / teacher_steps < 1) {
      throw InputError("base_steps must be divisible by teacher_steps^n_rounds");
    }
    steps /= teacher_steps;
  }
}

int RoundPlan::teacher_total_steps(int round) const {
  int steps = base_steps;
  for (int j = 1; j < round; ++j) steps /= teacher_steps;
  return steps;
}

int RoundPlan::nominal_steps(int round) const {
  return teacher_total_steps(round) / teacher_steps;
}

double RoundPlan::delta(int round) const { return 1.0 / teacher_total_steps(round); }

TrainState init_student(const TrainState& teacher, const RoundPlan& plan, int round) {
  TrainState s = teacher;
  if (plan.use_ema_as_teacher) s.params = teacher.ema;
  s.ema_decay = plan.ema_decay;
  s.round = round;
  if (plan.reset_optimizer) {
    s.adam_m.setZero();
    s.adam_v.setZero();
    s.ema = s.params;
    s.step = 0;
  }
  return s;
}

std::string round_manifest_json(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["nominal_steps"] = r.nominal_steps;
  j["teacher_steps"] = r.teacher_steps;
  j["delta"] = r.delta;
  j["divergence"] = std::string(divergence_name(r.divergence));
  j["loss_reduction"] = "mean_over_masked_positions";
  j["H"] = r.H;
  j["seed"] = r.seed;
  j["checkpoint"] = r.checkpoint;
  j["final_loss"] = r.final_loss;
  return j.dump();
}

TrainState sdtt_round(const Denoiser<float>& teacher, TrainState student,
                      const PackedDataset& dataset, const RoundPlan& plan, int round,
                      const NoiseSchedule& schedule, std::uint64_t seed, const MetricsSink& sink,
                      double* final_loss) {
  plan.validate();
  if (round < 1 || round > plan.n_rounds) throw InputError("round outside the plan");
  if (teacher.vocab_size() != student.config.vocab) {
    throw InputError("teacher and student vocabularies differ");
  }
  if (student.config.causal) throw InputError("distillation needs a bidirectional denoiser");
  if (plan.steps_per_round > 0 && dataset.num_rows() == 0) throw InputError("empty training set");
  const ModelConfig cfg = student.config;
  const int mask = cfg.mask_index();
  const double delta = plan.delta(round);
  const std::uint64_t round_seed = derive_seed(seed, static_cast<std::uint64_t>(round));

  VectorX<float> grads;
  double loss = 0.0;
  for (std::int64_t it = 0; it < plan.steps_per_round; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(round_seed, static_cast<std::uint64_t>(it)));
    const Tokens x = sample_rows(dataset, plan.batch, rng);
    const auto t_start = sample_times(plan.batch, rng);
    const NoisyState x_t = forward_corrupt(x, t_start, schedule, mask, rng);

    Activations<float> acts;
    const auto raw = transformer_forward(cfg, student.params, x_t.z, &acts);
    const auto grid = apply_output_constraints(raw, x_t.z, mask);
    const auto targets =
        compute_sdtt_targets(teacher, x_t, plan.teacher_steps, delta, schedule, rng);
    RowMatrix<float> dscores;
    loss = distill_loss(plan.divergence, grid, targets, mask, &dscores);
    if (!std::isfinite(loss)) {
      throw NumericalError("non-finite distillation loss in round " + std::to_string(round) +
                           " at iteration " + std::to_string(it) + " (divergence " +
                           std::string(divergence_name(plan.divergence)) + ")");
    }
    grads.setZero(student.params.size());
    transformer_backward(cfg, student.params, acts, dscores, grads);
    const double lr = plan.lr.at(it + 1);
    sgd_step(student, grads, lr, plan.adam);
    ema_update(student);
    if (sink) {
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      sink({student.step, loss, lr, ms});
    }
  }
  if (final_loss) *final_loss = loss;
  student.round = round;
  return student;
}

TrainState sdtt_round(const TrainState& teacher, TrainState student, const PackedDataset& dataset,
                      const RoundPlan& plan, int round, const NoiseSchedule& schedule,
                      std::uint64_t seed, const MetricsSink& sink, double* final_loss) {
  if (!(teacher.config == student.config)) throw InputError("teacher and student shapes differ");
  const TransformerDenoiser<float> model(teacher.config,
                                         plan.use_ema_as_teacher ? teacher.ema : teacher.params);
  return sdtt_round(model, std::move(student), dataset, plan, round, schedule, seed, sink,
                    final_loss);
}

std::vector<TrainState> iterated_sdtt(const TrainState& initial, const PackedDataset& dataset,
                                      const RoundPlan& plan, const NoiseSchedule& schedule,
                                      std::uint64_t seed, const RoundCallback& on_round,
                                      const MetricsSink& sink) {
  plan.validate();
  std::vector<TrainState> students;
  students.reserve(static_cast<std::size_t>(plan.n_rounds));
  const TrainState* teacher = &initial;
  for (int j = 1; j <= plan.n_rounds; ++j) {
    double loss = 0.0;
    TrainState student = sdtt_round(*teacher, init_student(*teacher, plan, j), dataset, plan, j,
                                    schedule, seed, sink, &loss);
    RoundRecord record{j,    plan.nominal_steps(j), plan.teacher_steps, plan.delta(j),
                       plan.divergence, plan.steps_per_round, seed, loss, ""};
    students.push_back(std::move(student));
    if (on_round) on_round(students.back(), record);
    teacher = &students.back();
  }
  return students;
}

template struct DistillTargets<float>;
template struct DistillTargets<double>;

#define SDTT_INSTANTIATE(S)                                                                      \
  template DistillTargets<S> compute_sdtt_targets<S>(const Denoiser<S>&, const NoisyState&, int, \
                                                     double, const NoiseSchedule&, Rng&);        \
  template double distill_loss<S>(Divergence, const LogProbGrid<S>&, const DistillTargets<S>&,   \
                                  int, RowMatrix<S>*);
SDTT_INSTANTIATE(float)
SDTT_INSTANTIATE(double)
#undef SDTT_INSTANTIATE

}  // namespace sdtt
