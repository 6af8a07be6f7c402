/**
 * @file diffusion.hpp
 * @brief Noise schedules, the forward process, epsilon/x0 parameterizations,
 *        classifier-free guidance, trajectory inpainting and DDIM sampling.
 *
 * The schedule is always kept in double precision; the sampling and noising
 * operators are templated on the matrix scalar so float training tensors and
 * double test tensors share one implementation.
 */
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "moreact/common.hpp"

namespace moreact {

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { kCosine, kLinear };

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::kCosine;
  if (s == "linear") return ScheduleKind::kLinear;
  throw ConfigError("unknown schedule kind: " + s);
}

inline std::string schedule_kind_to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kCosine ? "cosine" : "linear";
}

/// Per-timestep noise coefficients of the discrete diffusion process.
struct DiffusionSchedule {
  Vecd beta;       ///< beta_t, one per step
  Vecd alpha_bar;  ///< cumulative products of (1 - beta)

  int steps() const { return static_cast<int>(beta.size()); }

  void check_timestep(int t) const {
    if (t < 0 || t >= steps())
      throw ConfigError("timestep " + std::to_string(t) + " outside [0, " +
                        std::to_string(steps()) + ")");
  }
};

/**
 * Builds a schedule.  The cosine shape follows the standard squared-cosine
 * construction: with f(u) = cos^2((u + s)/(1 + s) * pi/2) and s = 0.008,
 * beta_t = 1 - f((t+1)/N) / f(t/N) clipped to at most 0.999, and alpha_bar is
 * the running product of (1 - beta) — which telescopes to f((t+1)/N)/f(0)
 * wherever the clip is inactive.  The linear shape interpolates beta from
 * 1e-4 to 2e-2 with exact endpoints.
 */
inline DiffusionSchedule make_schedule(ScheduleKind kind, int steps = 1000) {
  if (steps < 2) throw ConfigError("schedule needs at least 2 steps");
  DiffusionSchedule sched;
  sched.beta.resize(steps);
  sched.alpha_bar.resize(steps);
  if (kind == ScheduleKind::kLinear) {
    const double lo = 1e-4, hi = 2e-2;
    for (int t = 0; t < steps; ++t)
      sched.beta[t] = lo + (hi - lo) * t / (steps - 1);
    sched.beta[steps - 1] = hi;  // exact endpoint regardless of rounding
  } else {
    constexpr double s = 0.008;
    auto f = [](double u) {
      const double c = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
      return c * c;
    };
    for (int t = 0; t < steps; ++t) {
      const double ratio = f(static_cast<double>(t + 1) / steps) /
                           f(static_cast<double>(t) / steps);
      sched.beta[t] = std::min(1.0 - ratio, 0.999);
    }
  }
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    prod *= 1.0 - sched.beta[t];
    sched.alpha_bar[t] = prod;
  }
  return sched;
}

// ---------------------------------------------------------------------------
// Forward process and parameterization changes
// ---------------------------------------------------------------------------

/// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise.
template <typename Scalar>
Mat<Scalar> q_sample(const Mat<Scalar>& x0, int t, const Mat<Scalar>& noise,
                     const DiffusionSchedule& sched) {
  sched.check_timestep(t);
  if (x0.rows() != noise.rows() || x0.cols() != noise.cols())
    throw ConfigError("q_sample: x0 and noise shapes differ");
  const Scalar a = static_cast<Scalar>(std::sqrt(sched.alpha_bar[t]));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - sched.alpha_bar[t]));
  return a * x0 + b * noise;
}

/// Inverts q_sample for the noise: eps = (x_t - sqrt(ab)*x0) / sqrt(1-ab).
template <typename Scalar>
Mat<Scalar> eps_from_x0(const Mat<Scalar>& x_t, int t, const Mat<Scalar>& x0_hat,
                        const DiffusionSchedule& sched) {
  sched.check_timestep(t);
  const double ab = sched.alpha_bar[t];
  const Scalar a = static_cast<Scalar>(std::sqrt(ab));
  const Scalar binv = static_cast<Scalar>(1.0 / std::sqrt(1.0 - ab));
  return (x_t - a * x0_hat) * binv;
}

/// Inverts q_sample for the signal: x0 = (x_t - sqrt(1-ab)*eps) / sqrt(ab).
template <typename Scalar>
Mat<Scalar> x0_from_eps(const Mat<Scalar>& x_t, int t, const Mat<Scalar>& eps_hat,
                        const DiffusionSchedule& sched) {
  sched.check_timestep(t);
  const double ab = sched.alpha_bar[t];
  const Scalar ainv = static_cast<Scalar>(1.0 / std::sqrt(ab));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - ab));
  return (x_t - b * eps_hat) * ainv;
}

/// Classifier-free guidance: uncond + s * (cond - uncond).
template <typename Scalar>
Mat<Scalar> guide(const Mat<Scalar>& cond_out, const Mat<Scalar>& uncond_out,
                  double s) {
  if (cond_out.rows() != uncond_out.rows() || cond_out.cols() != uncond_out.cols())
    throw ConfigError("guide: shapes differ");
  if (s == 1.0) return cond_out;  // avoid round-off on the common no-op case
  return uncond_out + static_cast<Scalar>(s) * (cond_out - uncond_out);
}

/// fused = (1 - M) .* x0_hat + M .* g, with the per-dimension mask broadcast
/// over frames.  Masked dims come out equal to g bit-exactly.
template <typename Scalar>
Mat<Scalar> inpaint_fuse(const Mat<Scalar>& x0_hat, const Mat<Scalar>& g,
                         const Vecd& mask) {
  if (x0_hat.rows() != g.rows() || x0_hat.cols() != g.cols())
    throw ConfigError("inpaint_fuse: x0_hat and g shapes differ");
  if (mask.size() != x0_hat.cols())
    throw ConfigError("inpaint_fuse: mask length must match feature dims");
  Mat<Scalar> fused = x0_hat;
  for (Eigen::Index d = 0; d < mask.size(); ++d) {
    const double m = mask[d];
    if (m != 0.0 && m != 1.0)
      throw ConfigError("inpaint_fuse: mask entries must be 0 or 1");
    if (m == 1.0) fused.col(d) = g.col(d);
  }
  return fused;
}

/// The per-dimension mask selecting the global trajectory block (dims 0..3).
inline Vecd trajectory_mask(int dims = kFeatureDim) {
  Vecd m = Vecd::Zero(dims);
  for (int d = 0; d < kTrajectoryDims && d < dims; ++d) m[d] = 1.0;
  return m;
}

// ---------------------------------------------------------------------------
// DDIM sampler
// ---------------------------------------------------------------------------

enum class Parameterization { kEps, kX0 };

inline Parameterization parameterization_from_string(const std::string& s) {
  if (s == "eps") return Parameterization::kEps;
  if (s == "x0") return Parameterization::kX0;
  throw ConfigError("unknown parameterization: " + s);
}

inline std::string parameterization_to_string(Parameterization p) {
  return p == Parameterization::kEps ? "eps" : "x0";
}

struct SamplerConfig {
  Parameterization parameterization = Parameterization::kX0;
  int ddim_steps = 50;
  double eta = 0.0;
  double guidance_scale = 3.5;
  std::optional<Vecd> inpaint_mask;  ///< per-dimension 0/1 mask
  double clamp = 6.0;                ///< |x0_hat| bound before fusion

  void validate(int schedule_steps) const {
    if (ddim_steps < 1 || ddim_steps > schedule_steps)
      throw ConfigError("ddim_steps must lie in [1, schedule steps]");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0, 1]");
    if (!(clamp > 0.0)) throw ConfigError("clamp must be positive");
  }
};

/// Evenly spaced timesteps (rounding down), descending, always ending at 0.
inline std::vector<int> ddim_timesteps(int schedule_steps, int ddim_steps) {
  std::vector<int> grid(static_cast<size_t>(ddim_steps));
  for (int i = 0; i < ddim_steps; ++i)
    grid[static_cast<size_t>(i)] =
        static_cast<int>(static_cast<long long>(ddim_steps - 1 - i) *
                         schedule_steps / ddim_steps);
  return grid;
}

/**
 * A denoiser callback: given x_t and the timestep, returns the model output
 * in the sampler's parameterization.  `conditioned == false` requests the
 * null-condition pass used for classifier-free guidance.
 */
template <typename Scalar>
using DenoiseFn =
    std::function<Mat<Scalar>(const Mat<Scalar>& x_t, int t, bool conditioned)>;

/**
 * DDIM sampling loop.  Every step converts the (guided) model output to an
 * x0 estimate, clamps it, fuses the known trajectory when a mask is present,
 * re-derives the noise estimate from the fused x0 and takes the DDIM update;
 * the final step returns the fused x0 estimate itself, so masked dims equal
 * g exactly in the output.
 *
 * `inpaint_target` must be provided (full-width, values on masked dims) when
 * the config carries an inpaint mask.
 */
template <typename Scalar>
Mat<Scalar> ddim_sample(const DenoiseFn<Scalar>& denoise_fn, int rows, int cols,
                        const SamplerConfig& config, const DiffusionSchedule& sched,
                        RandomStream& rng,
                        const Mat<Scalar>* inpaint_target = nullptr) {
  config.validate(sched.steps());
  if (config.inpaint_mask && inpaint_target == nullptr)
    throw ConfigError("inpaint mask set but no inpaint target given");

  const std::vector<int> grid = ddim_timesteps(sched.steps(), config.ddim_steps);
  Mat<Scalar> x = rng.normal_matrix<Scalar>(rows, cols);

  auto model_x0 = [&](const Mat<Scalar>& x_t, int t) {
    auto to_x0 = [&](const Mat<Scalar>& out) {
      return config.parameterization == Parameterization::kEps
                 ? x0_from_eps(x_t, t, out, sched)
                 : out;
    };
    const Mat<Scalar> cond = denoise_fn(x_t, t, true);
    if (!all_finite(cond))
      throw SamplingDivergedError("non-finite model output at timestep " +
                                  std::to_string(t));
    if (config.guidance_scale == 1.0) return to_x0(cond);
    const Mat<Scalar> uncond = denoise_fn(x_t, t, false);
    if (!all_finite(uncond))
      throw SamplingDivergedError("non-finite null-condition output at timestep " +
                                  std::to_string(t));
    return guide(to_x0(cond), to_x0(uncond), config.guidance_scale);
  };

  for (size_t i = 0; i < grid.size(); ++i) {
    const int t = grid[i];
    Mat<Scalar> x0_hat = model_x0(x, t);
    x0_hat = x0_hat.cwiseMax(static_cast<Scalar>(-config.clamp))
                 .cwiseMin(static_cast<Scalar>(config.clamp));
    if (config.inpaint_mask)
      x0_hat = inpaint_fuse(x0_hat, *inpaint_target, *config.inpaint_mask);

    if (i + 1 == grid.size()) return x0_hat;

    const Mat<Scalar> eps_hat = eps_from_x0(x, t, x0_hat, sched);
    const int t_prev = grid[i + 1];
    const double ab_t = sched.alpha_bar[t];
    const double ab_prev = sched.alpha_bar[t_prev];
    const double sigma = config.eta *
                         std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) *
                         std::sqrt(1.0 - ab_t / ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    x = static_cast<Scalar>(std::sqrt(ab_prev)) * x0_hat +
        static_cast<Scalar>(dir) * eps_hat;
    if (sigma > 0.0)
      x += static_cast<Scalar>(sigma) * rng.normal_matrix<Scalar>(rows, cols);
    if (!all_finite(x))
      throw SamplingDivergedError("sampler state diverged after timestep " +
                                  std::to_string(t));
  }
  return x;  // unreachable: grid is never empty
}

}  // namespace moreact
