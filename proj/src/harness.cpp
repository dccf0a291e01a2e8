#include "ggdopt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ggdopt/baselines.hpp"
#include "ggdopt/datagen.hpp"
#include "ggdopt/errors.hpp"
#include "ggdopt/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ggdopt {

// ---------------------------------------------------------------- statistics

double sorted_quantile(const std::vector<double>& v, double p) {
  if (v.empty()) throw InvalidArgument("sorted_quantile: empty input");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("sorted_quantile: p must lie in [0, 1]");
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double sorted_median(const std::vector<double>& v) {
  if (v.empty()) throw InvalidArgument("sorted_median: empty input");
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

EvaluatedSamples compute_report(const Matrix& samples, const CCPInstance& instance,
                                Index eval_samples, std::uint64_t seed) {
  const Index R = samples.rows();
  if (R < 1) throw InvalidArgument("compute_report: need at least one sample");
  if (samples.cols() != instance.dim()) {
    throw InvalidArgument("compute_report: samples have " + std::to_string(samples.cols()) +
                          " columns, instance dimension is " + std::to_string(instance.dim()));
  }
  if (eval_samples < 1) throw InvalidArgument("compute_report: eval_samples must be positive");

  EvaluatedSamples out;
  out.repaired.resize(R, instance.dim());
  out.was_repaired.assign(R, false);
  out.fvals.resize(R);
  const Matrix draws = instance.uncertainty().draw(eval_samples, seed);
  double satisfied = 0.0;
  for (Index i = 0; i < R; ++i) {
    const Vector x = samples.row(i).transpose();
    const bool infeasible = instance.constraint().cone_violation(x) > 0.0;
    const Vector y = infeasible ? feasibility_repair(instance, x) : x;
    out.was_repaired[i] = infeasible;
    out.repaired.row(i) = y.transpose();
    out.fvals[i] = instance.objective().value(y);
    satisfied += 1.0 - empirical_rho(instance, y, draws);
  }

  std::vector<double> sorted = out.fvals;
  std::sort(sorted.begin(), sorted.end());
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(R);
  double var = 0.0;
  for (double f : sorted) var += (f - mean) * (f - mean);
  var /= static_cast<double>(R);

  SampleReport& r = out.report;
  r.repeats = static_cast<int>(R);
  r.fval_mean = mean;
  r.fval_std = std::sqrt(var);
  r.fval_median = sorted_median(sorted);
  r.fval_q25 = sorted_quantile(sorted, 0.25);
  r.fval_q75 = sorted_quantile(sorted, 0.75);
  r.empirical_feasibility = satisfied / static_cast<double>(R);
  r.repaired = static_cast<int>(std::count(out.was_repaired.begin(), out.was_repaired.end(), true));
  return out;
}

// ---------------------------------------------------------------- files

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_trajectory_csv(const Trajectory& tr, const fs::path& path) {
  auto out = open_out(path);
  const Index n = tr.states.cols();
  out << "step,t";
  for (Index j = 0; j < n; ++j) out << ",x_" << (j + 1);
  out << ",f_of_mu\n";
  for (Index k = 0; k < tr.states.rows(); ++k) {
    out << k << ',' << tr.times[k];
    for (Index j = 0; j < n; ++j) out << ',' << tr.states(k, j);
    out << ',';
    if (static_cast<std::size_t>(k) < tr.objective_trace.size()) out << tr.objective_trace[k];
    out << '\n';
  }
  finish(out, path);
}

std::vector<fs::path> emit_plot_data(const std::vector<Trajectory>& trajectories,
                                     const fs::path& dir) {
  std::vector<fs::path> written;
  if (trajectories.empty()) return written;
  const std::size_t rows = trajectories.front().times.size();
  for (const auto& tr : trajectories) {
    if (tr.times.size() != rows || tr.objective_trace.size() != rows) {
      throw InvalidArgument("emit_plot_data: trajectories need equal length and objective traces");
    }
  }

  const fs::path summary = dir / "objective_trace.csv";
  {
    auto out = open_out(summary);
    out << "step,t,median,q25,q75,mean\n";
    std::vector<double> column(trajectories.size());
    for (std::size_t k = 0; k < rows; ++k) {
      for (std::size_t i = 0; i < trajectories.size(); ++i) {
        column[i] = trajectories[i].objective_trace[k];
      }
      std::sort(column.begin(), column.end());
      const double mean = std::accumulate(column.begin(), column.end(), 0.0) /
                          static_cast<double>(column.size());
      out << k << ',' << trajectories.front().times[k] << ',' << sorted_median(column) << ','
          << sorted_quantile(column, 0.25) << ',' << sorted_quantile(column, 0.75) << ','
          << mean << '\n';
    }
    finish(out, summary);
  }
  written.push_back(summary);

  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(4) << std::setfill('0') << i << ".csv";
    const fs::path p = dir / "trajectories" / name.str();
    write_trajectory_csv(trajectories[i], p);
    written.push_back(p);
  }

  if (trajectories.front().states.cols() == 2) {
    const fs::path paths = dir / "paths_2d.csv";
    auto out = open_out(paths);
    out << "sample,step,t,x_1,x_2\n";
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      const auto& tr = trajectories[i];
      for (Index k = 0; k < tr.states.rows(); ++k) {
        out << i << ',' << k << ',' << tr.times[k] << ',' << tr.states(k, 0) << ','
            << tr.states(k, 1) << '\n';
      }
    }
    finish(out, paths);
    written.push_back(paths);
  }
  return written;
}

void write_samples_csv(const Matrix& samples, std::optional<double> rho,
                       const std::vector<bool>& needs_repair, const fs::path& path) {
  if (needs_repair.size() != static_cast<std::size_t>(samples.rows())) {
    throw InvalidArgument("write_samples_csv: one repair flag per row required");
  }
  auto out = open_out(path);
  for (Index j = 0; j < samples.cols(); ++j) out << "x_" << (j + 1) << ',';
  out << "rho,repaired\n";
  for (Index i = 0; i < samples.rows(); ++i) {
    for (Index j = 0; j < samples.cols(); ++j) out << samples(i, j) << ',';
    if (rho) out << *rho;
    out << ',' << (needs_repair[i] ? 1 : 0) << '\n';
  }
  finish(out, path);
}

Matrix read_samples_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw IoError(path.string() + " is empty");
  std::vector<std::string> names;
  {
    std::istringstream is(header);
    for (std::string cell; std::getline(is, cell, ',');) names.push_back(cell);
  }
  Index n = 0;
  while (n < static_cast<Index>(names.size()) && names[n].rfind("x_", 0) == 0) ++n;
  if (n == 0) throw IoError(path.string() + ": header has no x_ columns");

  std::vector<double> values;
  Index rows = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream is(line);
    std::string cell;
    for (Index j = 0; j < n; ++j) {
      if (!std::getline(is, cell, ',')) {
        throw IoError(path.string() + ": row " + std::to_string(rows + 1) + " is too short");
      }
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError(path.string() + ": bad number '" + cell + "'");
      }
    }
    ++rows;
  }
  if (rows == 0) throw IoError(path.string() + " has no rows");
  Matrix m(rows, n);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < n; ++j) m(i, j) = values[static_cast<std::size_t>(i * n + j)];
  return m;
}

json report_to_json(const SampleReport& r) {
  return {{"method", r.method},
          {"repeats", r.repeats},
          {"fval_mean", r.fval_mean},
          {"fval_std", r.fval_std},
          {"fval_median", r.fval_median},
          {"fval_q25", r.fval_q25},
          {"fval_q75", r.fval_q75},
          {"empirical_feasibility", r.empirical_feasibility},
          {"runtime_seconds", r.runtime_seconds},
          {"repaired", r.repaired}};
}

void write_report_csv(const std::vector<SampleReport>& reports, const fs::path& path) {
  auto out = open_out(path);
  out << "Method,Repeat,FvalMean,FvalStd,FvalMedian,FvalQuan25,FvalQuan75,Probability,Runtime\n";
  for (const auto& r : reports) {
    out << r.method << ',' << r.repeats << ',' << r.fval_mean << ',' << r.fval_std << ','
        << r.fval_median << ',' << r.fval_q25 << ',' << r.fval_q75 << ','
        << r.empirical_feasibility << ',' << r.runtime_seconds << '\n';
  }
  finish(out, path);
}

void write_report_json(const std::vector<SampleReport>& reports, const fs::path& path) {
  auto out = open_out(path);
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  out << json{{"reports", arr}}.dump(2) << '\n';
  finish(out, path);
}

// ---------------------------------------------------------------- config

fs::path ExperimentConfig::dataset() const {
  return dataset_path.value_or(output_dir / "dataset.csv");
}
fs::path ExperimentConfig::checkpoint() const {
  return checkpoint_path.value_or(output_dir / "model.ckpt");
}
fs::path ExperimentConfig::samples() const {
  return samples_path.value_or(output_dir / "samples.csv");
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (repeats < 1) fail("repeats must be >= 1");
  if (eval_samples < 1) fail("eval_samples must be >= 1");
  if (grid_size < 1) fail("grid_size must be >= 1");
  if (z_min < 0.0 || z_max < z_min) fail("restriction grid needs 0 <= z_min <= z_max");
  if (estimation_samples < 1) fail("estimation_samples must be >= 1");
  if (train.steps < 0 || train.batch_size < 1 || !(train.learning_rate > 0.0)) {
    fail("train: steps >= 0, batch_size >= 1 and learning_rate > 0 required");
  }
  if (!(train.p_uncond >= 0.0 && train.p_uncond < 1.0)) fail("train: p_uncond must lie in [0, 1)");
  if (sampler.steps < 1 || sampler.steps > schedule_steps) {
    fail("sampler: steps must lie in [1, T]");
  }
  if (!(sampler.guidance.beta >= 0.0) || !(sampler.guidance.sigma2 > 0.0)) {
    fail("guidance: beta >= 0 and sigma2 > 0 required");
  }
  const bool needs_instance = stages.generate || stages.sample || stages.evaluate;
  if (needs_instance && instance_path.empty()) fail("an instance file is required");
  if (needs_instance && !fs::exists(instance_path)) {
    fail("instance file " + instance_path.string() + " does not exist");
  }
  if (stages.train && !stages.generate && !fs::exists(dataset())) {
    fail("train stage needs dataset " + dataset().string());
  }
  if (stages.sample && !stages.train && !fs::exists(checkpoint())) {
    fail("sample stage needs checkpoint " + checkpoint().string());
  }
  if (stages.evaluate && !stages.sample && !fs::exists(samples())) {
    fail("evaluate stage needs samples " + samples().string());
  }
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.train.p_uncond = 0.1;
  c.train.batch_size = 64;
  c.train.steps = 20000;
  c.train.learning_rate = 1e-3;
  c.train.final_lr_fraction = 0.1;
  c.train.network.width = 256;
  c.train.network.depth = 4;
  c.train.eval_every = 2500;
  c.sampler.steps = 100;
  c.sampler.mode = SamplerMode::kDeterministic;
  c.sampler.guidance.order = GuidanceOrder::kFirst;
  c.sampler.guidance.beta = 100.0;
  c.sampler.guidance.sigma2 = 0.1;
  c.sampler.guidance.variance = PosteriorVariance::kFixed;
  c.sampler.guidance.w = 0.0;
  return c;
}

namespace {

template <typename T>
void take(const json& obj, const char* key, T& dst) {
  if (auto it = obj.find(key); it != obj.end()) dst = it->get<T>();
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c) {
  try {
    check_keys(j,
               {"instance", "output_dir", "dataset", "checkpoint", "samples", "stages", "seed",
                "method", "datagen", "schedule", "train", "sampler", "repeats",
                "record_trajectories", "eval_samples"},
               "experiment config");
    if (j.contains("instance")) c.instance_path = j["instance"].get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    for (auto [key, dst] : {std::pair{"dataset", &c.dataset_path},
                            std::pair{"checkpoint", &c.checkpoint_path},
                            std::pair{"samples", &c.samples_path}}) {
      if (j.contains(key)) {
        if (j[key].is_null()) dst->reset();
        else *dst = fs::path(j[key].get<std::string>());
      }
    }
    take(j, "seed", c.seed);
    take(j, "method", c.method);
    take(j, "repeats", c.repeats);
    take(j, "record_trajectories", c.record_trajectories);
    take(j, "eval_samples", c.eval_samples);
    if (j.contains("stages")) {
      const auto& s = j["stages"];
      check_keys(s, {"generate", "train", "sample", "evaluate"}, "stages");
      take(s, "generate", c.stages.generate);
      take(s, "train", c.stages.train);
      take(s, "sample", c.stages.sample);
      take(s, "evaluate", c.stages.evaluate);
    }
    if (j.contains("datagen")) {
      const auto& d = j["datagen"];
      check_keys(d, {"z_min", "z_max", "grid_size", "estimation_samples"}, "datagen");
      take(d, "z_min", c.z_min);
      take(d, "z_max", c.z_max);
      take(d, "grid_size", c.grid_size);
      take(d, "estimation_samples", c.estimation_samples);
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      check_keys(s, {"T", "eta_min", "eta_max"}, "schedule");
      take(s, "T", c.schedule_steps);
      take(s, "eta_min", c.eta_min);
      take(s, "eta_max", c.eta_max);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t,
                 {"steps", "batch_size", "learning_rate", "final_lr_fraction", "p_uncond",
                  "width", "depth", "time_embedding", "rho_embedding", "eval_every",
                  "eval_repeats"},
                 "train");
      take(t, "steps", c.train.steps);
      take(t, "batch_size", c.train.batch_size);
      take(t, "learning_rate", c.train.learning_rate);
      take(t, "final_lr_fraction", c.train.final_lr_fraction);
      take(t, "p_uncond", c.train.p_uncond);
      take(t, "width", c.train.network.width);
      take(t, "depth", c.train.network.depth);
      take(t, "time_embedding", c.train.network.time_embedding);
      take(t, "rho_embedding", c.train.network.rho_embedding);
      take(t, "eval_every", c.train.eval_every);
      take(t, "eval_repeats", c.train.eval_repeats);
    }
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      check_keys(s,
                 {"steps", "mode", "rho", "beta", "order", "sigma2", "variance", "w",
                  "divergence_factor"},
                 "sampler");
      take(s, "steps", c.sampler.steps);
      if (s.contains("mode")) c.sampler.mode = parse_sampler_mode(s["mode"].get<std::string>());
      if (s.contains("rho")) {
        if (s["rho"].is_null()) c.sampler.rho.reset();
        else c.sampler.rho = s["rho"].get<double>();
      }
      take(s, "beta", c.sampler.guidance.beta);
      if (s.contains("order")) {
        c.sampler.guidance.order = parse_guidance_order(s["order"].get<std::string>());
      }
      take(s, "sigma2", c.sampler.guidance.sigma2);
      if (s.contains("variance")) {
        c.sampler.guidance.variance = parse_posterior_variance(s["variance"].get<std::string>());
      }
      take(s, "w", c.sampler.guidance.w);
      take(s, "divergence_factor", c.sampler.divergence_factor);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  return c;
}

json experiment_config_to_json(const ExperimentConfig& c) {
  auto opt_path = [](const std::optional<fs::path>& p) -> json {
    return p ? json(p->string()) : json(nullptr);
  };
  return {
      {"instance", c.instance_path.string()},
      {"output_dir", c.output_dir.string()},
      {"dataset", opt_path(c.dataset_path)},
      {"checkpoint", opt_path(c.checkpoint_path)},
      {"samples", opt_path(c.samples_path)},
      {"stages",
       {{"generate", c.stages.generate},
        {"train", c.stages.train},
        {"sample", c.stages.sample},
        {"evaluate", c.stages.evaluate}}},
      {"seed", c.seed},
      {"method", c.method},
      {"datagen",
       {{"z_min", c.z_min},
        {"z_max", c.z_max},
        {"grid_size", c.grid_size},
        {"estimation_samples", c.estimation_samples}}},
      {"schedule", {{"T", c.schedule_steps}, {"eta_min", c.eta_min}, {"eta_max", c.eta_max}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"final_lr_fraction", c.train.final_lr_fraction},
        {"p_uncond", c.train.p_uncond},
        {"width", c.train.network.width},
        {"depth", c.train.network.depth},
        {"time_embedding", c.train.network.time_embedding},
        {"rho_embedding", c.train.network.rho_embedding},
        {"eval_every", c.train.eval_every},
        {"eval_repeats", c.train.eval_repeats}}},
      {"sampler",
       {{"steps", c.sampler.steps},
        {"mode", to_string(c.sampler.mode)},
        {"rho", c.sampler.rho ? json(*c.sampler.rho) : json(nullptr)},
        {"beta", c.sampler.guidance.beta},
        {"order", to_string(c.sampler.guidance.order)},
        {"sigma2", c.sampler.guidance.sigma2},
        {"variance", to_string(c.sampler.guidance.variance)},
        {"w", c.sampler.guidance.w},
        {"divergence_factor", c.sampler.divergence_factor}}},
      {"repeats", c.repeats},
      {"record_trajectories", c.record_trajectories},
      {"eval_samples", c.eval_samples},
  };
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c = experiment_config_from_json(j);
  // Relative paths in a config file resolve against the file's directory.
  const fs::path base = path.parent_path();
  auto resolve = [&](fs::path& p) {
    if (!p.empty() && p.is_relative() && !base.empty()) p = base / p;
  };
  if (j.contains("instance")) resolve(c.instance_path);
  return c;
}

// ---------------------------------------------------------------- stages

namespace {

// Derived seeds keep the stages independent of each other's draw counts.
std::uint64_t stage_seed(std::uint64_t global, std::uint64_t stage) {
  return global * 0x9e3779b97f4a7c15ULL + stage * 0xbf58476d1ce4e5b9ULL;
}

constexpr std::uint64_t kGenerateStage = 1, kTrainStage = 2, kSampleStage = 3, kEvalStage = 4;

NoiseSchedule schedule_of(const ExperimentConfig& c) {
  return NoiseSchedule(c.schedule_steps, c.eta_min, c.eta_max);
}

std::optional<double> target_rho(const ExperimentConfig& c, const CCPInstance& instance) {
  return c.sampler.rho ? c.sampler.rho : std::optional<double>(instance.constraint().rho());
}

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  const std::string prefix = std::string(stage) + " stage: ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const DivergenceError& e) {
    throw DivergenceError(prefix + e.what());
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(prefix + e.what());
  } catch (const IllPosedError& e) {
    throw IllPosedError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(prefix + e.what());
  }
}

}  // namespace

FeasibleDataset run_generate_stage(const ExperimentConfig& c, const CCPInstance& instance) {
  const auto grid = RestrictionGrid::linear(c.z_min, c.z_max, c.grid_size);
  FeasibleDataset data =
      generate_dataset(instance, grid, c.estimation_samples, stage_seed(c.seed, kGenerateStage));
  if (data.size() == 0) throw InfeasibleError("every restricted problem in the grid failed");
  if (c.dataset().has_parent_path()) fs::create_directories(c.dataset().parent_path());
  write_dataset(data, c.dataset());
  return data;
}

TrainResult run_train_stage(const ExperimentConfig& c) {
  const FeasibleDataset data = read_dataset(c.dataset());
  TrainConfig tc = c.train;
  tc.seed = stage_seed(c.seed, kTrainStage);
  const NoiseSchedule schedule = schedule_of(c);
  TrainResult result = train(data, tc, schedule);
  save_checkpoint(result.network, schedule, c.checkpoint());

  json log{{"holdout_loss_initial", result.holdout_loss_initial},
           {"holdout_loss_final", result.holdout_loss_final},
           {"seconds", result.seconds},
           {"history", result.holdout_history}};
  std::ofstream out(c.output_dir / "training.json");
  if (!out) throw IoError("cannot write " + (c.output_dir / "training.json").string());
  out << log.dump(2) << '\n';
  return result;
}

std::vector<double> run_sample_stage(const ExperimentConfig& c, const CCPInstance& instance) {
  const Checkpoint ck = load_checkpoint(c.checkpoint());
  if (ck.network.dim() != instance.dim()) {
    throw ConfigError("checkpoint dimension " + std::to_string(ck.network.dim()) +
                      " does not match the instance (" + std::to_string(instance.dim()) + ")");
  }
  SamplerConfig sc = c.sampler;
  sc.rho = target_rho(c, instance);
  sc.batch = 1;
  sc.record_trajectories = c.record_trajectories;
  const std::uint64_t base = stage_seed(c.seed, kSampleStage);

  const auto R = static_cast<std::size_t>(c.repeats);
  Matrix samples(c.repeats, instance.dim());
  std::vector<double> seconds(R);
  std::vector<Trajectory> trajectories(c.record_trajectories ? R : 0);
  parallel_for(R, [&](std::size_t i) {
    SamplerConfig local = sc;
    local.seed = base + i;
    const auto t0 = std::chrono::steady_clock::now();
    SampleBatch b = sample(ck.network, ck.schedule, local, &instance.objective());
    seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    samples.row(static_cast<Index>(i)) = b.samples.row(0);
    if (c.record_trajectories) trajectories[i] = std::move(b.trajectories.front());
  });

  std::vector<bool> flags(R);
  for (std::size_t i = 0; i < R; ++i) {
    flags[i] = instance.constraint().cone_violation(samples.row(static_cast<Index>(i)).transpose()) > 0.0;
  }
  write_samples_csv(samples, sc.rho, flags, c.samples());
  {
    const fs::path timing = c.samples().string() + ".timing.json";
    std::ofstream out(timing);
    if (!out) throw IoError("cannot write " + timing.string());
    out << json{{"seconds_per_repeat", seconds}}.dump() << '\n';
  }
  if (c.record_trajectories) emit_plot_data(trajectories, c.output_dir / "plots");
  return seconds;
}

SampleReport run_evaluate_stage(const ExperimentConfig& c, const CCPInstance& instance,
                                std::optional<double> runtime_seconds) {
  const Matrix samples = read_samples_csv(c.samples());
  if (!runtime_seconds) {
    std::ifstream in(c.samples().string() + ".timing.json");
    runtime_seconds = 0.0;
    if (in) {
      try {
        const auto v = json::parse(in).at("seconds_per_repeat").get<std::vector<double>>();
        if (!v.empty()) {
          runtime_seconds = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        }
      } catch (const json::exception&) {
        // A damaged timing file only loses the runtime column.
      }
    }
  }
  EvaluatedSamples ev = compute_report(samples, instance, c.eval_samples,
                                       stage_seed(c.seed, kEvalStage));
  ev.report.method = c.method;
  ev.report.runtime_seconds = *runtime_seconds;
  write_report_csv({ev.report}, c.output_dir / "report.csv");
  write_report_json({ev.report}, c.output_dir / "report.json");
  return ev.report;
}

std::vector<SampleReport> run_baselines(const ExperimentConfig& c, const CCPInstance& instance) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  std::vector<SampleReport> rows;

  const auto t0 = std::chrono::steady_clock::now();
  const SocpSolution socp = socp_solve(instance);
  const double socp_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path socp_path = c.output_dir / "socp_solution.csv";
  write_samples_csv(socp.x_star.transpose(), instance.constraint().rho(), {false}, socp_path);
  EvaluatedSamples ev = compute_report(socp.x_star.transpose(), instance, c.eval_samples,
                                       stage_seed(c.seed, kEvalStage));
  ev.report.method = "SOC_CVX";
  ev.report.runtime_seconds = socp_seconds;
  rows.push_back(ev.report);

  const auto t1 = std::chrono::steady_clock::now();
  const Matrix draws =
      instance.uncertainty().draw(c.estimation_samples, stage_seed(c.seed, kGenerateStage));
  const BaselinePoint mean_pt = empirical_mean_baseline(instance, draws);
  const double mean_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
  const bool mean_infeasible = instance.constraint().cone_violation(mean_pt.x) > 0.0;
  write_samples_csv(mean_pt.x.transpose(), std::nullopt, {mean_infeasible},
                    c.output_dir / "empirical_mean_solution.csv");
  EvaluatedSamples ev2 = compute_report(mean_pt.x.transpose(), instance, c.eval_samples,
                                        stage_seed(c.seed, kEvalStage));
  ev2.report.method = "EmpiricalMean";
  ev2.report.runtime_seconds = mean_seconds;
  rows.push_back(ev2.report);

  write_report_csv(rows, c.output_dir / "baselines.csv");
  json j = json::object();
  j["reports"] = json::array();
  for (const auto& r : rows) j["reports"].push_back(report_to_json(r));
  j["socp"] = {{"x_star", std::vector<double>(socp.x_star.data(), socp.x_star.data() + socp.x_star.size())},
               {"f_star", socp.f_star},
               {"multiplier", socp.multiplier},
               {"active", socp.active},
               {"kkt_residual", socp.kkt_residual},
               {"kappa", instance.constraint().kappa()}};
  j["empirical_mean"] = {{"x", std::vector<double>(mean_pt.x.data(), mean_pt.x.data() + mean_pt.x.size())},
                         {"f", mean_pt.f},
                         {"raw_feasibility_probability", instance.constraint().feasibility_probability(mean_pt.x)}};
  std::ofstream out(c.output_dir / "baselines.json");
  if (!out) throw IoError("cannot write " + (c.output_dir / "baselines.json").string());
  out << j.dump(2) << '\n';
  return rows;
}

PipelineResult run_pipeline(const ExperimentConfig& c) {
  in_stage("config", [&] {
    c.validate();
    return 0;
  });
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + c.output_dir.string());
  {
    std::ofstream out(c.output_dir / "config.json");
    out << experiment_config_to_json(c).dump(2) << '\n';
  }

  PipelineResult result;
  std::optional<CCPInstance> instance;
  if (c.stages.generate || c.stages.sample || c.stages.evaluate) {
    instance = in_stage("config", [&] { return load_instance(c.instance_path); });
  }
  if (c.stages.generate) {
    in_stage("generate", [&] { return run_generate_stage(c, *instance); });
    result.artifacts.push_back(c.dataset());
  }
  if (c.stages.train) {
    result.training = in_stage("train", [&] { return run_train_stage(c); });
    result.artifacts.push_back(c.checkpoint());
  }
  std::optional<double> runtime;
  if (c.stages.sample) {
    const auto seconds = in_stage("sample", [&] { return run_sample_stage(c, *instance); });
    runtime = std::accumulate(seconds.begin(), seconds.end(), 0.0) /
              static_cast<double>(seconds.size());
    result.artifacts.push_back(c.samples());
  }
  if (c.stages.evaluate) {
    result.report = in_stage("evaluate", [&] { return run_evaluate_stage(c, *instance, runtime); });
    result.artifacts.push_back(c.output_dir / "report.csv");
    result.artifacts.push_back(c.output_dir / "report.json");
  }
  return result;
}

}  // namespace ggdopt
