#include "ggdopt/sampler.hpp"

#include <cmath>
#include <sstream>

#include "ggdopt/baselines.hpp"
#include "ggdopt/errors.hpp"
#include "ggdopt/parallel.hpp"

namespace ggdopt {

std::string to_string(SamplerMode mode) {
  return mode == SamplerMode::kDeterministic ? "deterministic" : "ancestral";
}

SamplerMode parse_sampler_mode(const std::string& text) {
  if (text == "deterministic") return SamplerMode::kDeterministic;
  if (text == "ancestral") return SamplerMode::kAncestral;
  throw ConfigError("unknown sampler mode '" + text + "' (expected deterministic or ancestral)");
}

std::vector<int> time_grid(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw InvalidArgument("time_grid: need 1 <= steps <= T (steps = " + std::to_string(steps) +
                          ", T = " + std::to_string(T) + ")");
  }
  std::vector<int> grid(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    grid[i] = static_cast<int>(std::llround(static_cast<double>(T) * (steps - i) / steps));
  }
  return grid;
}

StepOutput reverse_step(const StepContext& ctx, const Vector& xt, int t_cur, int t_next,
                        std::mt19937_64* rng) {
  if (!(t_next < t_cur)) throw InvalidArgument("reverse_step: t_next must be below t_cur");
  const auto& cfg = ctx.config;
  const auto& g = cfg.guidance;
  if (g.order != GuidanceOrder::kNone && ctx.objective == nullptr) {
    throw InvalidArgument("reverse_step: guidance requires an objective");
  }
  const double ab = ctx.schedule.alpha_bar(t_cur);
  const double ab_next = ctx.schedule.alpha_bar(t_next);

  const Vector s_cfg = cond_score(ctx.model, ctx.schedule, xt, t_cur, cfg.rho, g.w);
  StepOutput out;
  out.posterior_mean = posterior_mean(xt, ab, s_cfg);
  Vector s = s_cfg;
  if (g.order != GuidanceOrder::kNone) {
    s += guidance_scale(g, ab) * guidance_term(*ctx.objective, g, xt, t_cur, ab, out.posterior_mean);
  }
  out.guided_mean = posterior_mean(xt, ab, s);

  if (cfg.mode == SamplerMode::kDeterministic) {
    const Vector eps = -std::sqrt(1.0 - ab) * s;
    const Vector x0 = (xt - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    out.x_next = std::sqrt(ab_next) * x0 + std::sqrt(1.0 - ab_next) * eps;
  } else {
    const double alpha = ab / ab_next;
    const double eta = 1.0 - alpha;
    out.x_next = (xt + eta * s) / std::sqrt(alpha);
    if (t_next > 0) {
      if (rng == nullptr) throw InvalidArgument("reverse_step: ancestral mode needs an RNG");
      std::normal_distribution<double> normal;
      const double sd = std::sqrt(eta);
      for (Index i = 0; i < out.x_next.size(); ++i) out.x_next[i] += sd * normal(*rng);
    }
  }

  const double limit = cfg.divergence_factor * ctx.model.data_radius();
  const double norm = out.x_next.norm();
  if (!std::isfinite(norm) || norm > limit) {
    std::ostringstream msg;
    msg << "reverse process diverged at t = " << t_cur << " -> " << t_next
        << " (||x|| = " << norm << ", limit " << limit << ", beta = " << g.beta_for(t_cur)
        << ")";
    throw DivergenceError(msg.str());
  }
  return out;
}

SampleBatch sample(const NoisePredictor& model, const NoiseSchedule& schedule,
                   const SamplerConfig& config, const QuadraticObjective* objective) {
  if (config.batch < 1) throw InvalidArgument("sample: batch must be >= 1");
  config.guidance.validate();
  if (objective && objective->dim() != model.dim()) {
    throw InvalidArgument("sample: objective dimension does not match the model");
  }
  const std::vector<int> grid = time_grid(schedule.steps(), config.steps);
  const Index n = model.dim();
  SampleBatch out;
  out.samples.resize(config.batch, n);
  if (config.record_trajectories) out.trajectories.resize(config.batch);
  const StepContext ctx{model, schedule, config, objective};

  parallel_for(static_cast<std::size_t>(config.batch), [&](std::size_t i) {
    std::mt19937_64 rng(config.seed + i);
    std::normal_distribution<double> normal;
    Vector x(n);
    for (Index j = 0; j < n; ++j) x[j] = normal(rng);
    Trajectory* traj = config.record_trajectories ? &out.trajectories[i] : nullptr;
    if (traj) {
      traj->times = grid;
      traj->states.resize(config.steps + 1, n);
      traj->states.row(0) = x.transpose();
    }
    for (int k = 0; k < config.steps; ++k) {
      StepOutput step = reverse_step(ctx, x, grid[k], grid[k + 1], &rng);
      x = std::move(step.x_next);
      if (traj) {
        traj->states.row(k + 1) = x.transpose();
        if (objective) traj->objective_trace.push_back(objective->value(step.guided_mean));
      }
    }
    if (traj && objective) traj->objective_trace.push_back(objective->value(x));
    out.samples.row(static_cast<Index>(i)) = x.transpose();
  });
  return out;
}

Vector feasibility_repair(const CCPInstance& instance, const Vector& x) {
  return project_onto_cone(instance.constraint(), x);
}

}  // namespace ggdopt
