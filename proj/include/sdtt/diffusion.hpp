#pragma once

// Closed-form absorbing-diffusion mathematics: noise schedule, forward
// corruption, the reverse posterior, output constraints and the
// continuous-time NELBO.

#include <span>
#include <vector>

#include "sdtt/common.hpp"

namespace sdtt {

enum class ScheduleKind { Linear };

struct AlphaValue {
  double alpha;
  double dalpha;  // d alpha / dt, strictly negative
};

/// Maps t in [0,1] to the probability alpha_t that a token is still clean.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleKind kind = ScheduleKind::Linear) : kind_(kind) {}
  static NoiseSchedule linear() { return NoiseSchedule(ScheduleKind::Linear); }

  ScheduleKind kind() const { return kind_; }
  /// Throws InputError for t outside [0, 1].
  AlphaValue operator()(double t) const;

 private:
  ScheduleKind kind_;
};

inline AlphaValue alpha(const NoiseSchedule& schedule, double t) { return schedule(t); }

/// A batch of partially masked rows, each with its own time.
struct NoisyState {
  Tokens z;
  std::vector<double> t;

  Eigen::Index batch() const { return z.rows(); }
  Eigen::Index length() const { return z.cols(); }
};

/// Per-position log-probabilities, one grid row per (sequence, position):
/// row b * L + i holds position i of sequence b.
template <typename Scalar>
struct LogProbGrid {
  RowMatrix<Scalar> values;
  int L = 0;
  bool constraint_applied = false;
};

/// Each position keeps its token with probability alpha_t, else becomes
/// `mask_index`. One time per row. Throws InputError if x already contains MASK.
NoisyState forward_corrupt(const Tokens& x, std::span<const double> t, const NoiseSchedule& schedule,
                           int mask_index, Rng& rng);

/// Zero-masking and carry-over: the MASK column becomes log 0, masked positions
/// are log-softmax normalised over real tokens, and unmasked positions become a
/// point mass on the observed token.
template <typename Scalar>
LogProbGrid<Scalar> apply_output_constraints(const RowMatrix<Scalar>& raw, const Tokens& z,
                                             int mask_index);

/// Categorical parameters of p(z_s | z_t) with x replaced by the denoiser
/// prediction; one row per position. `s` holds one target time per sequence,
/// each strictly below that sequence's t.
template <typename Scalar>
RowMatrix<Scalar> reverse_step_distribution(const NoisyState& z_t, const LogProbGrid<Scalar>& xpred,
                                            std::span<const double> s, const NoiseSchedule& schedule,
                                            int mask_index);

/// Weight alpha'_t / (1 - alpha_t) of the continuous-time NELBO, with t
/// clamped to the minimal sampling time.
double nelbo_weight(const NoiseSchedule& schedule, double t);

/// Monte Carlo NELBO: mean over rows of w(t) * sum over masked positions of
/// log xpred[i, x_i]. If `dscores` is given it receives the gradient with
/// respect to the raw scores that produced `xpred`.
template <typename Scalar>
double nelbo(const LogProbGrid<Scalar>& xpred, const Tokens& x, const NoisyState& z_t,
             const NoiseSchedule& schedule, int mask_index, RowMatrix<Scalar>* dscores = nullptr);

}  // namespace sdtt
