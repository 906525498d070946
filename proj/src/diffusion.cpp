#include "sdtt/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sdtt {

AlphaValue NoiseSchedule::operator()(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw InputError("time " + std::to_string(t) + " outside [0, 1]");
  switch (kind_) {
    case ScheduleKind::Linear:
      return {1.0 - t, -1.0};
  }
  throw ContractError("unknown schedule kind");
}

NoisyState forward_corrupt(const Tokens& x, std::span<const double> t, const NoiseSchedule& schedule,
                           int mask_index, Rng& rng) {
  if (static_cast<Eigen::Index>(t.size()) != x.rows()) {
    throw InputError("forward_corrupt: one time per row required");
  }
  if ((x.array() == mask_index).any()) throw InputError("forward_corrupt: input already masked");
  NoisyState out{x, std::vector<double>(t.begin(), t.end())};
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    const double keep = schedule(t[static_cast<std::size_t>(b)]).alpha;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      if (uniform01(rng) >= keep) out.z(b, i) = mask_index;
    }
  }
  return out;
}

template <typename Scalar>
LogProbGrid<Scalar> apply_output_constraints(const RowMatrix<Scalar>& raw, const Tokens& z,
                                             int mask_index) {
  const Eigen::Index K = raw.cols();
  const Eigen::Index L = z.cols();
  if (raw.rows() != z.size()) throw ContractError("score grid does not match token batch");
  LogProbGrid<Scalar> grid;
  grid.L = static_cast<int>(L);
  grid.values.resize(raw.rows(), K);
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    const std::int32_t tok = z(r / L, r % L);
    auto out = grid.values.row(r);
    if (tok != mask_index) {
      out.setConstant(kLogZero<Scalar>);
      out(tok) = Scalar(0);
      continue;
    }
    auto in = raw.row(r);
    Scalar mx = std::numeric_limits<Scalar>::lowest();
    for (Eigen::Index v = 0; v < K; ++v) {
      if (v != mask_index) mx = std::max(mx, in(v));
    }
    Scalar sum = 0;
    for (Eigen::Index v = 0; v < K; ++v) {
      if (v != mask_index) sum += std::exp(in(v) - mx);
    }
    const Scalar lse = mx + std::log(sum);
    out = in.array() - lse;
    out(mask_index) = kLogZero<Scalar>;
  }
  grid.constraint_applied = true;
  return grid;
}

template <typename Scalar>
RowMatrix<Scalar> reverse_step_distribution(const NoisyState& z_t, const LogProbGrid<Scalar>& xpred,
                                            std::span<const double> s, const NoiseSchedule& schedule,
                                            int mask_index) {
  if (!xpred.constraint_applied) {
    throw ContractError("reverse_step_distribution requires a constrained prediction grid");
  }
  const Eigen::Index L = z_t.length();
  const Eigen::Index K = xpred.values.cols();
  RowMatrix<Scalar> probs = RowMatrix<Scalar>::Zero(xpred.values.rows(), K);
  for (Eigen::Index b = 0; b < z_t.batch(); ++b) {
    const double t = z_t.t[static_cast<std::size_t>(b)];
    const double sb = s[static_cast<std::size_t>(b)];
    if (!(sb < t)) throw InputError("reverse step requires s < t");
    const double a_t = schedule(t).alpha;
    const double a_s = schedule(std::max(sb, 0.0)).alpha;
    const double stay = (1.0 - a_s) / (1.0 - a_t);
    const double decode = (a_s - a_t) / (1.0 - a_t);
    for (Eigen::Index i = 0; i < L; ++i) {
      const Eigen::Index r = b * L + i;
      const std::int32_t tok = z_t.z(b, i);
      if (tok != mask_index) {
        probs(r, tok) = Scalar(1);
        continue;
      }
      probs.row(r) = Scalar(decode) * xpred.values.row(r).array().exp();
      probs(r, mask_index) = Scalar(stay);
    }
  }
  return probs;
}

double nelbo_weight(const NoiseSchedule& schedule, double t) {
  const auto [a, da] = schedule(std::max(t, kMinTime));
  return da / (1.0 - a);
}

template <typename Scalar>
double nelbo(const LogProbGrid<Scalar>& xpred, const Tokens& x, const NoisyState& z_t,
             const NoiseSchedule& schedule, int mask_index, RowMatrix<Scalar>* dscores) {
  if (!xpred.constraint_applied) throw ContractError("nelbo requires a constrained prediction grid");
  const Eigen::Index B = x.rows();
  const Eigen::Index L = x.cols();
  if (dscores) dscores->setZero(xpred.values.rows(), xpred.values.cols());
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const double w = nelbo_weight(schedule, z_t.t[static_cast<std::size_t>(b)]);
    double row_sum = 0.0;
    for (Eigen::Index i = 0; i < L; ++i) {
      if (z_t.z(b, i) != mask_index) continue;
      const Eigen::Index r = b * L + i;
      row_sum += static_cast<double>(xpred.values(r, x(b, i)));
      if (dscores) {
        // d/ds_j of w * log softmax(s)[x] is w * (1[j == x] - p_j)
        auto g = dscores->row(r);
        g = Scalar(-w / static_cast<double>(B)) * xpred.values.row(r).array().exp();
        g(mask_index) = Scalar(0);
        g(x(b, i)) += Scalar(w / static_cast<double>(B));
      }
    }
    total += w * row_sum;
  }
  return total / static_cast<double>(B);
}

#define SDTT_INSTANTIATE(S)                                                                       \
  template LogProbGrid<S> apply_output_constraints<S>(const RowMatrix<S>&, const Tokens&, int);    \
  template RowMatrix<S> reverse_step_distribution<S>(const NoisyState&, const LogProbGrid<S>&,     \
                                                     std::span<const double>,                      \
                                                     const NoiseSchedule&, int);                   \
  template double nelbo<S>(const LogProbGrid<S>&, const Tokens&, const NoisyState&,                \
                           const NoiseSchedule&, int, RowMatrix<S>*);
SDTT_INSTANTIATE(float)
SDTT_INSTANTIATE(double)
#undef SDTT_INSTANTIATE

}  // namespace sdtt
