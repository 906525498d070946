#pragma once

// Row-wise divergences between a student and a target distribution, both
// given as log-probabilities over K ids. The MASK column is ignored; every
// other column is a real token.

#include <limits>
#include <span>
#include <string_view>

namespace sdtt {

enum class Divergence { KldReverse, Tvd, MseLog, Chi2 };

/// Canonical names: "kld_reverse", "tvd", "mse_log", "chi2".
std::string_view divergence_name(Divergence d);

/// Accepts the canonical names plus the short forms "kld", "kl" and "mse".
/// Throws InputError otherwise.
Divergence parse_divergence(std::string_view name);

/// Returned when the value is unbounded (the target has no mass where the
/// comparison needs some).
inline constexpr double kInfiniteDivergence = std::numeric_limits<double>::infinity();

/// sum_v p(v) (log p(v) - log q(v)). Infinite when q(v) = 0 < p(v).
template <typename Scalar>
double kld_reverse(std::span<const Scalar> student, std::span<const Scalar> target, int mask_index);

/// 0.5 * sum_v |p(v) - q(v)|.
template <typename Scalar>
double tvd(std::span<const Scalar> student, std::span<const Scalar> target, int mask_index);

/// Mean over real tokens of (log p(v) - log q(v))^2. Log-probabilities below
/// log(numeric_limits<Scalar>::min()) are clamped there, so a zero entry gives
/// a large finite value instead of an overflow.
template <typename Scalar>
double mse_log(std::span<const Scalar> student, std::span<const Scalar> target, int mask_index);

/// sum_v (p(v) - q(v))^2 / q(v). Infinite when q(v) = 0 != p(v); a term with
/// p(v) = q(v) = 0 contributes nothing.
template <typename Scalar>
double chi2(std::span<const Scalar> student, std::span<const Scalar> target, int mask_index);

template <typename Scalar>
double divergence(Divergence d, std::span<const Scalar> student, std::span<const Scalar> target,
                  int mask_index);

/// Adds scale * d(divergence)/d(scores) to `dscores`, where the student row is
/// the log-softmax of `scores` over the real tokens. The MASK entry is left
/// untouched.
template <typename Scalar>
void divergence_grad(Divergence d, std::span<const Scalar> student, std::span<const Scalar> target,
                     int mask_index, Scalar scale, std::span<Scalar> dscores);

}  // namespace sdtt
