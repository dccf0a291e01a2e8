#pragma once

// Experiment orchestration: configuration, the generate/train/sample/evaluate
// pipeline, table-style reports and plot data.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ggdopt/ccp.hpp"
#include "ggdopt/diffusion.hpp"
#include "ggdopt/sampler.hpp"

namespace ggdopt {

struct SampleReport {
  std::string method = "GGDOpt";
  int repeats = 0;
  double fval_mean = 0.0;
  double fval_std = 0.0;  ///< population standard deviation
  double fval_median = 0.0;
  double fval_q25 = 0.0;
  double fval_q75 = 0.0;
  double empirical_feasibility = 0.0;
  double runtime_seconds = 0.0;  ///< mean wall-clock per sampling repeat
  int repaired = 0;              ///< samples moved by feasibility repair
};

/// Linear-interpolation quantile (R type 7) of already sorted values.
double sorted_quantile(const std::vector<double>& sorted, double p);
/// Median of sorted values; the mean of the two central values for even sizes.
double sorted_median(const std::vector<double>& sorted);

struct EvaluatedSamples {
  SampleReport report;
  Matrix repaired;                 ///< R x n
  std::vector<bool> was_repaired;  ///< per row
  std::vector<double> fvals;
};

/// Repairs each row, evaluates f and its order statistics, and estimates the
/// constraint satisfaction frequency on `eval_samples` fresh draws (seeded),
/// averaged over rows. Runtime is left at zero.
EvaluatedSamples compute_report(const Matrix& samples, const CCPInstance& instance,
                                Index eval_samples, std::uint64_t seed);

/// Writes `<dir>/objective_trace.csv` (step, t, median, q25, q75, mean of the
/// per-repeat objective traces), one `<dir>/trajectories/sample_XXXX.csv` per
/// trajectory and, for n = 2, `<dir>/paths_2d.csv`. No files for an empty list.
/// Returns the written paths.
std::vector<std::filesystem::path> emit_plot_data(const std::vector<Trajectory>& trajectories,
                                                  const std::filesystem::path& dir);

/// Trajectory as CSV: step, t, x_1..x_n, f_of_mu.
void write_trajectory_csv(const Trajectory& trajectory, const std::filesystem::path& path);

/// Sample batch CSV: x_1..x_n, rho, repaired. `rho` is the conditioning target
/// (empty for unconditional sampling); `repaired` flags rows that lie outside
/// the analytic feasible set.
void write_samples_csv(const Matrix& samples, std::optional<double> rho,
                       const std::vector<bool>& needs_repair, const std::filesystem::path& path);
/// Reads the x columns of a samples or dataset CSV.
Matrix read_samples_csv(const std::filesystem::path& path);

/// Report CSV with the columns Method,Repeat,FvalMean,FvalStd,FvalMedian,
/// FvalQuan25,FvalQuan75,Probability,Runtime.
void write_report_csv(const std::vector<SampleReport>& reports, const std::filesystem::path& path);
void write_report_json(const std::vector<SampleReport>& reports, const std::filesystem::path& path);
nlohmann::json report_to_json(const SampleReport& report);

struct Stages {
  bool generate = true;
  bool train = true;
  bool sample = true;
  bool evaluate = true;
};

struct ExperimentConfig {
  std::filesystem::path instance_path;
  std::filesystem::path output_dir = "ggdopt-out";
  std::optional<std::filesystem::path> dataset_path;     ///< default <output>/dataset.csv
  std::optional<std::filesystem::path> checkpoint_path;  ///< default <output>/model.ckpt
  std::optional<std::filesystem::path> samples_path;     ///< default <output>/samples.csv
  Stages stages;
  std::uint64_t seed = 0;
  std::string method = "GGDOpt";

  // Stage 1
  double z_min = 0.0;
  double z_max = 0.5;
  std::size_t grid_size = 1000;
  Index estimation_samples = 100;

  // Stage 2
  int schedule_steps = 1000;
  double eta_min = 1e-4;
  double eta_max = 0.02;
  TrainConfig train;

  // Stage 3
  SamplerConfig sampler;
  int repeats = 100;
  bool record_trajectories = true;

  // Evaluation
  Index eval_samples = 100000;

  std::filesystem::path dataset() const;
  std::filesystem::path checkpoint() const;
  std::filesystem::path samples() const;
  /// Throws ConfigError when invariants fail or inputs of enabled stages are missing.
  void validate() const;
};

/// The defaults used for the linear experiment (also the JSON defaults).
ExperimentConfig default_experiment_config();

/// Overlays the keys present in `j` on `base`; unknown keys raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                             ExperimentConfig base = default_experiment_config());
nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct PipelineResult {
  std::optional<SampleReport> report;
  std::optional<TrainResult> training;
  std::vector<std::filesystem::path> artifacts;
};

/// Runs the enabled stages in order, communicating through files in the
/// output directory. Failures are rethrown with the stage name prefixed;
/// artifacts already written are kept.
PipelineResult run_pipeline(const ExperimentConfig& config);

/// Individual stages, as used by run_pipeline and the CLI.
FeasibleDataset run_generate_stage(const ExperimentConfig& config, const CCPInstance& instance);
TrainResult run_train_stage(const ExperimentConfig& config);
/// Returns per-repeat wall-clock seconds; writes the samples CSV, its
/// `<samples>.timing.json` sidecar and plot data.
std::vector<double> run_sample_stage(const ExperimentConfig& config, const CCPInstance& instance);
/// Without an explicit runtime, the mean from the samples' timing sidecar is
/// used when present.
SampleReport run_evaluate_stage(const ExperimentConfig& config, const CCPInstance& instance,
                                std::optional<double> runtime_seconds = std::nullopt);

/// SOCP and empirical-mean baselines as report rows; writes their solutions as
/// samples CSVs (`socp_solution.csv`, `empirical_mean_solution.csv`) and
/// `baselines.csv` / `baselines.json` under the output directory.
std::vector<SampleReport> run_baselines(const ExperimentConfig& config,
                                        const CCPInstance& instance);

}  // namespace ggdopt
