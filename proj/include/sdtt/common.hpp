#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace sdtt {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Token ids, one row per sequence.
using Tokens = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Stand-in for log(0) in stored log-probability grids. Finite so that
/// arithmetic on it never produces NaN; std::exp maps it to exactly 0.
template <typename Scalar>
constexpr Scalar kLogZero = std::numeric_limits<Scalar>::lowest() / Scalar(2);

template <typename Scalar>
constexpr bool is_log_zero(Scalar v) {
  return v <= kLogZero<Scalar> / Scalar(2);
}

/// Minimal sampling time; all time draws and sampling grids are clamped to it.
inline constexpr double kMinTime = 1e-5;

// Error taxonomy. The CLI maps these onto exit codes.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Derives an independent stream seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Uniform draw on [0, 1).
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// 64-bit FNV-1a, used for checksums and content ids.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace sdtt
