/**
 * @file common.hpp
 * @brief Shared types, error hierarchy, feature-vector layout and seeded RNG
 *        streams used across the moreact library.
 */
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace moreact {

// ---------------------------------------------------------------------------
// Matrix aliases.  All dense data in this library is row-major so that a
// T x D motion matrix has one frame per contiguous row (this also makes the
// binary file format a straight memcpy of the storage).
// ---------------------------------------------------------------------------
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matf = Mat<float>;
using Matd = Mat<double>;
using Vecf = Vec<float>;
using Vecd = Vec<double>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Motion feature layout.
//
// Every frame of a motion is a 263-d row vector:
//   [0]         root yaw about +y (radians, continuous/unwrapped over time)
//   [1..3]      root position (x, y, z) in world metres
//   [4..66]     local positions of the 21 non-root joints, expressed in the
//               root frame (world position minus root, rotated by -yaw)
//   [67..192]   6-d rotation features of the 21 non-root joints (first two
//               columns of the local rotation matrix)
//   [193..258]  local linear velocities of all 22 joints (m/s, forward
//               differences scaled by fps, rotated by -yaw; the last frame
//               repeats its predecessor)
//   [259..262]  foot contact indicators for {l_ankle, r_ankle, l_foot, r_foot}
// ---------------------------------------------------------------------------
inline constexpr int kJoints = 22;
inline constexpr int kFeatureDim = 263;

inline constexpr int kYawDim = 0;
inline constexpr int kRootPosOffset = 1;
inline constexpr int kTrajectoryDims = 4;  // yaw + root position
inline constexpr int kLocalPosOffset = 4;
inline constexpr int kRot6dOffset = 67;
inline constexpr int kVelocityOffset = 193;
inline constexpr int kContactOffset = 259;
inline constexpr int kContactDims = 4;

static_assert(kLocalPosOffset + (kJoints - 1) * 3 == kRot6dOffset);
static_assert(kRot6dOffset + (kJoints - 1) * 6 == kVelocityOffset);
static_assert(kVelocityOffset + kJoints * 3 == kContactOffset);
static_assert(kContactOffset + kContactDims == kFeatureDim);

/// Start of the local-position block of joint j (1-based, j in [1, 21]).
inline constexpr int local_pos_dim(int j) { return kLocalPosOffset + 3 * (j - 1); }
/// Start of the 6-d rotation block of joint j (1-based, j in [1, 21]).
inline constexpr int rot6d_dim(int j) { return kRot6dOffset + 6 * (j - 1); }
/// Start of the velocity block of joint j (j in [0, 21]).
inline constexpr int velocity_dim(int j) { return kVelocityOffset + 3 * j; }

// ---------------------------------------------------------------------------
// Errors.  Everything the library throws derives from moreact::Error so the
// CLI can map failures to exit codes in one place.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A pose contains non-finite values or degenerate rotation features.
struct InvalidPoseError : Error {
  using Error::Error;
};

/// A motion matrix has the wrong shape, non-finite entries or a bad fps.
struct InvalidMotionError : Error {
  using Error::Error;
};

/// A motion is too short for an operation that needs finite differences.
struct MotionTooShortError : Error {
  using Error::Error;
};

/// Sampling produced non-finite values.
struct SamplingDivergedError : Error {
  using Error::Error;
};

/// A training run failed to reach its required quality bar.
struct TrainingFailedError : Error {
  using Error::Error;
};

/// File or serialization problem (missing file, bad magic, short read, ...).
struct IoError : Error {
  using Error::Error;
};

/// Bad user-supplied configuration (unknown option, out-of-range value, ...).
struct ConfigError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Small numeric helpers.
// ---------------------------------------------------------------------------

/// Wraps an angle to (-pi, pi].
inline double wrap_to_pi(double a) {
  constexpr double two_pi = 2.0 * M_PI;
  a = std::fmod(a + M_PI, two_pi);
  if (a < 0) a += two_pi;
  a -= M_PI;
  // fmod lands exactly on -pi for inputs of the form -pi - 2*k*pi; fold that
  // boundary onto +pi so the range is half-open as documented.
  if (a == -M_PI) a = M_PI;
  return a;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// ---------------------------------------------------------------------------
// Named random streams.
//
// Reproducibility across the pipeline relies on every consumer of randomness
// pulling from its own stream derived from (seed, name, index) instead of
// sharing one global generator.  The normal() transform is hand-rolled
// (Box-Muller) so the produced values do not depend on the standard library's
// unspecified std::normal_distribution algorithm.
// ---------------------------------------------------------------------------
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0)
      : rng_(mix(seed, name, index)) {}

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).  n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling to stay unbiased for every n.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
      v = rng_();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();  // avoid log(0)
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename Scalar>
  Mat<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Mat<Scalar> m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        m(i, j) = static_cast<Scalar>(normal());
    return m;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::string_view name,
                           std::uint64_t index) {
    // FNV-1a over the name, then splitmix64 steps to decorrelate streams that
    // share a seed.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : name) {
      h ^= c;
      h *= 1099511628211ull;
    }
    std::uint64_t x = seed ^ h ^ (index * 0x9e3779b97f4a7c15ull);
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stable 64-bit FNV-1a hash of a string (used for text token ids).
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace moreact
