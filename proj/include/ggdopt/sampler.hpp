#pragma once

// Stage 3: reverse diffusion with classifier-free conditioning plus gradient
// guidance, on a subsampled time grid.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ggdopt/ccp.hpp"
#include "ggdopt/diffusion.hpp"
#include "ggdopt/guidance.hpp"

namespace ggdopt {

enum class SamplerMode { kDeterministic, kAncestral };

std::string to_string(SamplerMode mode);
/// "deterministic" | "ancestral"; throws ConfigError otherwise.
SamplerMode parse_sampler_mode(const std::string& text);

struct SamplerConfig {
  int steps = 100;
  SamplerMode mode = SamplerMode::kDeterministic;
  GuidanceConfig guidance;
  /// Target risk level; empty samples unconditionally.
  std::optional<double> rho;
  int batch = 1;
  std::uint64_t seed = 0;
  bool record_trajectories = false;
  /// Abort when ||x_t|| exceeds this multiple of the model's data radius.
  double divergence_factor = 1e3;
};

/// Reverse-time grid t_0 = T > t_1 > ... > t_steps = 0, uniform stride.
std::vector<int> time_grid(int T, int steps);

struct Trajectory {
  std::vector<int> times;              ///< steps + 1 entries
  Matrix states;                       ///< (steps + 1) x n; row 0 is the prior draw
  std::vector<double> objective_trace; ///< f(guided mu_{0|t}) per step, then f(final state)
};

struct StepContext {
  const NoisePredictor& model;
  const NoiseSchedule& schedule;
  const SamplerConfig& config;
  /// Required unless guidance is off.
  const QuadraticObjective* objective = nullptr;
};

struct StepOutput {
  Vector x_next;
  Vector posterior_mean;  ///< Tweedie mean of the unguided conditional score at t_cur
  Vector guided_mean;     ///< Tweedie mean of the guided score (the step's x0 estimate)
};

/// One reverse update from t_cur to t_next. The guided score is
/// s = s_cfg + guidance_scale(abar_t) G_t. Deterministic mode uses the DDIM update on
/// eps = -sqrt(1 - abar_t) s; ancestral mode the DDPM step for the merged
/// interval, with noise omitted when t_next = 0. Throws DivergenceError on a
/// non-finite or runaway state.
StepOutput reverse_step(const StepContext& ctx, const Vector& xt, int t_cur, int t_next,
                        std::mt19937_64* rng = nullptr);

struct SampleBatch {
  Matrix samples;                        ///< batch x n
  std::vector<Trajectory> trajectories;  ///< filled when record_trajectories
};

/// Algorithm 2. Sample i uses seed config.seed + i for its prior draw and any
/// ancestral noise; samples run in parallel and are merged in index order.
SampleBatch sample(const NoisePredictor& model, const NoiseSchedule& schedule,
                   const SamplerConfig& config, const QuadraticObjective* objective = nullptr);

/// Euclidean projection onto the analytic feasible set of the instance's chance
/// constraint; feasible points are returned unchanged. Throws InfeasibleError
/// when that set is empty.
Vector feasibility_repair(const CCPInstance& instance, const Vector& x);

}  // namespace ggdopt
