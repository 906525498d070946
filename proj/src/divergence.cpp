#include "sdtt/divergence.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "sdtt/common.hpp"

namespace sdtt {
namespace {

template <typename Scalar>
void check_rows(std::span<const Scalar> a, std::span<const Scalar> b, int mask_index) {
  if (a.size() != b.size()) throw ContractError("divergence rows differ in length");
  if (mask_index < 0 || static_cast<std::size_t>(mask_index) >= a.size()) {
    throw ContractError("mask index outside the row");
  }
}

template <typename Scalar>
double prob(Scalar logp) {
  return is_log_zero(logp) ? 0.0 : std::exp(static_cast<double>(logp));
}

template <typename Scalar>
double clamped_log(Scalar logp) {
  const double floor = std::log(static_cast<double>(std::numeric_limits<Scalar>::min()));
  return std::max(static_cast<double>(logp), floor);
}

}  // namespace

std::string_view divergence_name(Divergence d) {
  switch (d) {
    case Divergence::KldReverse: return "kld_reverse";
    case Divergence::Tvd: return "tvd";
    case Divergence::MseLog: return "mse_log";
    case Divergence::Chi2: return "chi2";
  }
  return "unknown";
}

Divergence parse_divergence(std::string_view name) {
  if (name == "kld_reverse" || name == "kld" || name == "kl") return Divergence::KldReverse;
  if (name == "tvd") return Divergence::Tvd;
  if (name == "mse_log" || name == "mse") return Divergence::MseLog;
  if (name == "chi2") return Divergence::Chi2;
  throw InputError("unknown divergence '" + std::string(name) + "'");
}

template <typename Scalar>
double kld_reverse(std::span<const Scalar> p, std::span<const Scalar> q, int mask) {
  check_rows(p, q, mask);
  double sum = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (static_cast<int>(v) == mask || is_log_zero(p[v])) continue;
    if (is_log_zero(q[v])) return kInfiniteDivergence;
    sum += prob(p[v]) * (static_cast<double>(p[v]) - static_cast<double>(q[v]));
  }
  return sum;
}

template <typename Scalar>
double tvd(std::span<const Scalar> p, std::span<const Scalar> q, int mask) {
  check_rows(p, q, mask);
  double sum = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (static_cast<int>(v) == mask) continue;
    sum += std::abs(prob(p[v]) - prob(q[v]));
  }
  return 0.5 * sum;
}

template <typename Scalar>
double mse_log(std::span<const Scalar> p, std::span<const Scalar> q, int mask) {
  check_rows(p, q, mask);
  double sum = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (static_cast<int>(v) == mask) continue;
    const double d = clamped_log(p[v]) - clamped_log(q[v]);
    sum += d * d;
  }
  return sum / static_cast<double>(p.size() - 1);
}

template <typename Scalar>
double chi2(std::span<const Scalar> p, std::span<const Scalar> q, int mask) {
  check_rows(p, q, mask);
  double sum = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (static_cast<int>(v) == mask) continue;
    const double pv = prob(p[v]);
    const double qv = prob(q[v]);
    if (qv == 0.0) {
      if (pv != 0.0) return kInfiniteDivergence;
      continue;
    }
    sum += (pv - qv) * (pv - qv) / qv;
  }
  return sum;
}

template <typename Scalar>
double divergence(Divergence d, std::span<const Scalar> p, std::span<const Scalar> q, int mask) {
  switch (d) {
    case Divergence::KldReverse: return kld_reverse(p, q, mask);
    case Divergence::Tvd: return tvd(p, q, mask);
    case Divergence::MseLog: return mse_log(p, q, mask);
    case Divergence::Chi2: return chi2(p, q, mask);
  }
  throw ContractError("unknown divergence");
}

template <typename Scalar>
void divergence_grad(Divergence d, std::span<const Scalar> p_log, std::span<const Scalar> q_log,
                     int mask, Scalar scale, std::span<Scalar> dscores) {
  check_rows(p_log, q_log, mask);
  if (dscores.size() != p_log.size()) throw ContractError("gradient row has the wrong length");
  const std::size_t K = p_log.size();
  std::vector<double> p(K, 0.0);
  std::vector<double> g(K, 0.0);  // d(divergence)/d(p) or d/d(log p), see below
  for (std::size_t v = 0; v < K; ++v) {
    if (static_cast<int>(v) != mask) p[v] = prob(p_log[v]);
  }
  const auto real = [mask](std::size_t v) { return static_cast<int>(v) != mask; };

  if (d == Divergence::MseLog) {
    // Gradient through log p directly: d log p_i / d s_j = [i == j] - p_j.
    const double n = static_cast<double>(K - 1);
    double total = 0.0;
    for (std::size_t v = 0; v < K; ++v) {
      if (!real(v)) continue;
      g[v] = 2.0 / n * (clamped_log(p_log[v]) - clamped_log(q_log[v]));
      total += g[v];
    }
    for (std::size_t v = 0; v < K; ++v) {
      if (real(v)) dscores[v] += scale * static_cast<Scalar>(g[v] - p[v] * total);
    }
    return;
  }

  for (std::size_t v = 0; v < K; ++v) {
    if (!real(v)) continue;
    const double qv = prob(q_log[v]);
    switch (d) {
      case Divergence::KldReverse:
        g[v] = p[v] > 0.0 ? static_cast<double>(p_log[v]) - static_cast<double>(q_log[v]) : 0.0;
        break;
      case Divergence::Tvd:
        g[v] = p[v] > qv ? 0.5 : (p[v] < qv ? -0.5 : 0.0);
        break;
      case Divergence::Chi2:
        g[v] = qv > 0.0 ? 2.0 * (p[v] - qv) / qv : 0.0;
        break;
      case Divergence::MseLog:
        break;
    }
  }
  // Softmax chain rule: ds_j = p_j (g_j - sum_i p_i g_i).
  double mean = 0.0;
  for (std::size_t v = 0; v < K; ++v) mean += p[v] * g[v];
  for (std::size_t v = 0; v < K; ++v) {
    if (real(v)) dscores[v] += scale * static_cast<Scalar>(p[v] * (g[v] - mean));
  }
}

#define SDTT_INSTANTIATE(S)                                                                    \
  template double kld_reverse<S>(std::span<const S>, std::span<const S>, int);                 \
  template double tvd<S>(std::span<const S>, std::span<const S>, int);                         \
  template double mse_log<S>(std::span<const S>, std::span<const S>, int);                     \
  template double chi2<S>(std::span<const S>, std::span<const S>, int);                        \
  template double divergence<S>(Divergence, std::span<const S>, std::span<const S>, int);      \
  template void divergence_grad<S>(Divergence, std::span<const S>, std::span<const S>, int, S, \
                                   std::span<S>);
SDTT_INSTANTIATE(float)
SDTT_INSTANTIATE(double)
#undef SDTT_INSTANTIATE

}  // namespace sdtt
