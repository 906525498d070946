#pragma once

// Self-distillation through time: a student learns to reproduce in one
// reverse step what its teacher produces over several smaller steps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sdtt/common.hpp"
#include "sdtt/corpus.hpp"
#include "sdtt/diffusion.hpp"
#include "sdtt/divergence.hpp"
#include "sdtt/model.hpp"
#include "sdtt/train.hpp"

namespace sdtt {

/// Teacher log-probabilities, one grid row per (sequence, position). Only rows
/// flagged in `covered` (the positions masked in the input) hold a target.
template <typename Scalar>
struct DistillTargets {
  RowMatrix<Scalar> values;
  std::vector<std::uint8_t> covered;
  int L = 0;

  std::size_t count() const;
};

/// Runs `n_steps` teacher reverse steps from each row of `x_t`, starting at
/// that row's time with stride `delta` (times clamped at kMinTime, the last
/// target time at 0). A position's target is the teacher row from the step
/// that unmasked it; positions never unmasked take the last step's row.
/// Throws InputError for n_steps < 2 or delta outside (0, 1).
template <typename Scalar>
DistillTargets<Scalar> compute_sdtt_targets(const Denoiser<Scalar>& teacher, const NoisyState& x_t,
                                            int n_steps, double delta,
                                            const NoiseSchedule& schedule, Rng& rng);

/// Mean divergence between the student grid and the targets over covered
/// positions (0 when none). With `dscores`, also the gradient with respect to
/// the raw student scores.
template <typename Scalar>
double distill_loss(Divergence d, const LogProbGrid<Scalar>& student,
                    const DistillTargets<Scalar>& targets, int mask_index,
                    RowMatrix<Scalar>* dscores = nullptr);

struct RoundPlan {
  int n_rounds = 7;
  std::int64_t steps_per_round = 2000;  // H
  int teacher_steps = 2;                // m/k, teacher steps per student step
  int base_steps = 1024;                // decoding steps of the original model
  Divergence divergence = Divergence::KldReverse;
  bool reset_optimizer = false;
  bool use_ema_as_teacher = false;
  double ema_decay = 0.9999;
  int batch = 32;
  LrSchedule lr;
  AdamConfig adam;

  /// Throws InputError when the step counts do not divide evenly.
  void validate() const;
  /// Decoding steps the teacher of `round` (1-based) is trained for.
  int teacher_total_steps(int round) const;
  /// Decoding steps the student of `round` targets.
  int nominal_steps(int round) const;
  /// Teacher stride for `round`: 1 / teacher_total_steps(round).
  double delta(int round) const;
};

/// Student at the start of a round: a copy of the teacher (its EMA weights
/// when the plan says so), with moments and EMA reset if requested.
TrainState init_student(const TrainState& teacher, const RoundPlan& plan, int round);

struct RoundRecord {
  int round = 0;
  int nominal_steps = 0;
  int teacher_steps = 0;
  double delta = 0;
  Divergence divergence = Divergence::KldReverse;
  std::int64_t H = 0;
  std::uint64_t seed = 0;
  double final_loss = 0;
  std::string checkpoint;
};

/// One JSON object (single line).
std::string round_manifest_json(const RoundRecord& record);

/// Trains `student` against the frozen `teacher` for plan.steps_per_round
/// iterations. Throws NumericalError on a non-finite loss.
TrainState sdtt_round(const Denoiser<float>& teacher, TrainState student,
                      const PackedDataset& dataset, const RoundPlan& plan, int round,
                      const NoiseSchedule& schedule, std::uint64_t seed,
                      const MetricsSink& sink = {}, double* final_loss = nullptr);

/// As above with a transformer teacher (its EMA weights when the plan says so).
TrainState sdtt_round(const TrainState& teacher, TrainState student, const PackedDataset& dataset,
                      const RoundPlan& plan, int round, const NoiseSchedule& schedule,
                      std::uint64_t seed, const MetricsSink& sink = {},
                      double* final_loss = nullptr);

/// Called after every round with the new student and its record.
using RoundCallback = std::function<void(const TrainState&, RoundRecord&)>;

/// n_rounds successive rounds; round j distils the round j-1 student.
std::vector<TrainState> iterated_sdtt(const TrainState& initial, const PackedDataset& dataset,
                                      const RoundPlan& plan, const NoiseSchedule& schedule,
                                      std::uint64_t seed, const RoundCallback& on_round = {},
                                      const MetricsSink& sink = {});

}  // namespace sdtt
