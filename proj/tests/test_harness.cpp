#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ggdopt/baselines.hpp"
#include "ggdopt/errors.hpp"
#include "ggdopt/harness.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace ggdopt;
using ggdopt::testing::linear_instance;
using ggdopt::testing::random_vector;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("ggdopt-" + tag + "-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream is(line);
    for (std::string c; std::getline(is, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

const fs::path kInstanceFile = fs::path(GGDOPT_SOURCE_DIR) / "configs" / "linear_ccp.instance";

// A pipeline small enough to run in a unit test.
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c = default_experiment_config();
  c.instance_path = kInstanceFile;
  c.output_dir = out;
  c.seed = 3;
  c.grid_size = 50;
  c.train.steps = 200;
  c.train.network.width = 32;
  c.train.network.depth = 1;
  c.train.eval_every = 100;
  c.repeats = 4;
  c.eval_samples = 2000;
  return c;
}

Trajectory fake_trajectory(int steps, Index n, std::mt19937_64& rng) {
  Trajectory tr;
  tr.states.resize(steps + 1, n);
  for (int k = 0; k <= steps; ++k) {
    tr.times.push_back(1000 - 10 * k);
    tr.states.row(k) = random_vector(n, rng).transpose();
    tr.objective_trace.push_back(random_vector(1, rng)[0]);
  }
  return tr;
}

}  // namespace

TEST_CASE("median and quantiles of sorted values") {
  CHECK(sorted_median({4.0}) == 4.0);
  CHECK(sorted_median({1.0, 2.0, 10.0, 11.0}) == 6.0);
  CHECK(sorted_quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25) == 2.0);
  CHECK(sorted_quantile({0.0, 10.0}, 0.25) == 2.5);
  CHECK(sorted_quantile({0.0, 10.0}, 1.0) == 10.0);
  CHECK_THROWS_AS(sorted_quantile({}, 0.5), InvalidArgument);
  CHECK_THROWS_AS(sorted_quantile({1.0}, 1.5), InvalidArgument);
  CHECK_THROWS_AS(sorted_median({}), InvalidArgument);
}

TEST_CASE("report statistics match a sort-and-index oracle") {
  // Points on the ray x = s 1 with s in [-0.08, 0] are feasible and
  // f(s 1) = 4 s^2 + 8 s is strictly decreasing there, so the repaired values
  // are known in closed form. With R = 101 the quartiles land on indices 25,
  // 50 and 75 of the sorted values.
  const CCPInstance inst = linear_instance();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.08, 0.0);
  const Index R = 101;
  Matrix samples(R, 8);
  std::vector<double> f(R);
  for (Index i = 0; i < R; ++i) {
    const double s = u(rng);
    samples.row(i).setConstant(s);
    f[i] = 4.0 * s * s + 8.0 * s;
  }
  std::sort(f.begin(), f.end());
  double mean = 0.0;
  for (double v : f) mean += v / R;
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean) / R;

  const auto ev = compute_report(samples, inst, 1000, 1);
  CHECK(ev.report.repaired == 0);
  CHECK(ev.report.fval_q25 == doctest::Approx(f[25]).epsilon(1e-14));
  CHECK(ev.report.fval_median == doctest::Approx(f[50]).epsilon(1e-14));
  CHECK(ev.report.fval_q75 == doctest::Approx(f[75]).epsilon(1e-14));
  CHECK(ev.report.fval_mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(ev.report.fval_std == doctest::Approx(std::sqrt(var)).epsilon(1e-10));
}

TEST_CASE("singleton and constant batches") {
  const CCPInstance inst = linear_instance();
  const Matrix one = Matrix::Constant(1, 8, -0.05);
  const auto a = compute_report(one, inst, 1000, 1).report;
  CHECK(a.fval_mean == a.fval_median);
  CHECK(a.fval_std == 0.0);
  CHECK(a.repeats == 1);

  const Matrix same = Matrix::Constant(6, 8, -0.3);  // infeasible; all repaired alike
  const auto b = compute_report(same, inst, 1000, 1).report;
  CHECK(b.fval_std <= 1e-12);
  CHECK(b.fval_q25 == b.fval_q75);
  CHECK(b.repaired == 6);
}

TEST_CASE("repaired samples satisfy the constraint and reports are ordered") {
  const CCPInstance inst = linear_instance();
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix samples(30, 8);
    for (Index i = 0; i < 30; ++i) samples.row(i) = random_vector(8, rng, 0.5).transpose();
    const auto ev = compute_report(samples, inst, 2000, rep);
    const auto& r = ev.report;
    CHECK(r.fval_q25 <= r.fval_median);
    CHECK(r.fval_median <= r.fval_q75);
    CHECK(r.empirical_feasibility >= 0.0);
    CHECK(r.empirical_feasibility <= 1.0);
    for (Index i = 0; i < 30; ++i) {
      CHECK(inst.constraint().cone_violation(ev.repaired.row(i).transpose()) <= 1e-8);
    }
  }
  CHECK_THROWS_AS(compute_report(Matrix(0, 8), inst, 10, 1), InvalidArgument);
  CHECK_THROWS_AS(compute_report(Matrix::Zero(2, 3), inst, 10, 1), InvalidArgument);
}

TEST_CASE("plot data files") {
  TempDir tmp("plots");
  CHECK(emit_plot_data({}, tmp.path / "none").empty());
  CHECK_FALSE(fs::exists(tmp.path / "none"));

  std::mt19937_64 rng(3);
  const int steps = 100;
  std::vector<Trajectory> trs;
  for (int i = 0; i < 100; ++i) trs.push_back(fake_trajectory(steps, 3, rng));
  const auto files = emit_plot_data(trs, tmp.path / "eight");
  CHECK(files.size() == 101);
  CHECK_FALSE(fs::exists(tmp.path / "eight" / "paths_2d.csv"));

  const auto rows = read_csv(tmp.path / "eight" / "objective_trace.csv");
  REQUIRE(rows.size() == steps + 2);
  CHECK(rows[0] == std::vector<std::string>{"step", "t", "median", "q25", "q75", "mean"});
  for (int k = 0; k <= steps; ++k) {
    std::vector<double> column;
    for (const auto& tr : trs) column.push_back(tr.objective_trace[k]);
    std::sort(column.begin(), column.end());
    CHECK(std::stod(rows[k + 1][2]) == sorted_median(column));
    CHECK(std::stod(rows[k + 1][3]) == sorted_quantile(column, 0.25));
  }
  const auto traj = read_csv(tmp.path / "eight" / "trajectories" / "sample_0042.csv");
  CHECK(traj.size() == steps + 2);
  CHECK(traj[0].back() == "f_of_mu");

  std::vector<Trajectory> flat;
  for (int i = 0; i < 3; ++i) flat.push_back(fake_trajectory(5, 2, rng));
  emit_plot_data(flat, tmp.path / "two");
  CHECK(read_csv(tmp.path / "two" / "paths_2d.csv").size() == 1 + 3 * 6);

  flat[1].objective_trace.pop_back();
  CHECK_THROWS_AS(emit_plot_data(flat, tmp.path / "bad"), InvalidArgument);
}

TEST_CASE("samples csv round trip and malformed files") {
  TempDir tmp("csv");
  Matrix m(3, 2);
  m << 1.5, -2.0, 0.1, 1e-17, -3.0, 4.0;
  write_samples_csv(m, 0.1, {false, true, false}, tmp.path / "s.csv");
  CHECK(read_samples_csv(tmp.path / "s.csv") == m);
  CHECK(read_csv(tmp.path / "s.csv")[2].back() == "1");
  CHECK_THROWS_AS(write_samples_csv(m, std::nullopt, {true}, tmp.path / "x.csv"), InvalidArgument);

  CHECK_THROWS_AS(read_samples_csv(tmp.path / "missing.csv"), IoError);
  std::ofstream(tmp.path / "bad.csv") << "x_1,x_2\n1,abc\n";
  CHECK_THROWS_AS(read_samples_csv(tmp.path / "bad.csv"), IoError);
  std::ofstream(tmp.path / "short.csv") << "x_1,x_2\n1\n";
  CHECK_THROWS_AS(read_samples_csv(tmp.path / "short.csv"), IoError);
  std::ofstream(tmp.path / "empty.csv") << "x_1\n";
  CHECK_THROWS_AS(read_samples_csv(tmp.path / "empty.csv"), IoError);
}

TEST_CASE("report csv uses the table headers") {
  TempDir tmp("report");
  SampleReport r;
  r.repeats = 100;
  r.fval_mean = -0.65;
  write_report_csv({r}, tmp.path / "r.csv");
  const auto rows = read_csv(tmp.path / "r.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<std::string>{"Method", "Repeat", "FvalMean", "FvalStd", "FvalMedian",
                                            "FvalQuan25", "FvalQuan75", "Probability", "Runtime"});
  CHECK(rows[1][0] == "GGDOpt");
  CHECK(std::stod(rows[1][2]) == -0.65);
}

TEST_CASE("experiment config json") {
  ExperimentConfig c = default_experiment_config();
  c.seed = 99;
  c.sampler.guidance.order = GuidanceOrder::kSecond;
  c.sampler.guidance.variance = PosteriorVariance::kDiffused;
  c.sampler.rho = 0.2;
  c.train.network.width = 17;
  c.stages.train = false;
  const auto j = experiment_config_to_json(c);
  const ExperimentConfig back = experiment_config_from_json(j);
  CHECK(experiment_config_to_json(back) == j);
  CHECK(back.train.network.width == 17);
  CHECK(back.sampler.guidance.variance == PosteriorVariance::kDiffused);

  CHECK_THROWS_WITH_AS(experiment_config_from_json(nlohmann::json{{"sedd", 1}}),
                       doctest::Contains("sedd"), ConfigError);
  CHECK_THROWS_WITH_AS(
      experiment_config_from_json(nlohmann::json{{"sampler", {{"bta", 1.0}}}}),
      doctest::Contains("bta"), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json{{"seed", "seven"}}), ConfigError);
  CHECK_THROWS_AS(
      experiment_config_from_json(nlohmann::json{{"sampler", {{"order", "third"}}}}), ConfigError);
}

TEST_CASE("shipped config loads and resolves the instance path") {
  const auto c = load_experiment_config(fs::path(GGDOPT_SOURCE_DIR) / "configs" / "linear_ccp.json");
  CHECK(fs::exists(c.instance_path));
  CHECK(c.grid_size == 1000);
  CHECK(c.sampler.steps == 100);
  CHECK(c.repeats == 100);
  CHECK_NOTHROW(c.validate());
  CHECK(load_instance(c.instance_path).fingerprint() == linear_instance().fingerprint());
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("config validation") {
  ExperimentConfig c = default_experiment_config();
  c.instance_path = kInstanceFile;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.instance_path.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.sampler.guidance.beta = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.repeats = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.sampler.steps = 5000;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("pipeline runs end to end and is deterministic") {
  TempDir a("pipe-a"), b("pipe-b");
  const auto ra = run_pipeline(tiny_config(a.path));
  const auto rb = run_pipeline(tiny_config(b.path));
  REQUIRE(ra.report);
  REQUIRE(rb.report);
  CHECK(ra.training->holdout_loss_final < ra.training->holdout_loss_initial);
  CHECK(slurp(a.path / "dataset.csv") == slurp(b.path / "dataset.csv"));
  CHECK(slurp(a.path / "model.ckpt") == slurp(b.path / "model.ckpt"));
  CHECK(slurp(a.path / "samples.csv") == slurp(b.path / "samples.csv"));
  CHECK(ra.report->fval_mean == rb.report->fval_mean);
  CHECK(ra.report->empirical_feasibility == rb.report->empirical_feasibility);
  CHECK(ra.report->fval_q25 <= ra.report->fval_median);
  CHECK(ra.report->fval_median <= ra.report->fval_q75);
  for (const auto& p : ra.artifacts) CHECK(fs::exists(p));
  CHECK(fs::exists(a.path / "plots" / "objective_trace.csv"));
  CHECK(fs::exists(a.path / "config.json"));

  // Sample stage alone with R = 1, twice: byte-identical output.
  auto c = tiny_config(a.path);
  c.stages = {false, false, true, false};
  c.repeats = 1;
  c.record_trajectories = false;
  const auto inst = load_instance(c.instance_path);
  run_sample_stage(c, inst);
  const std::string first = slurp(c.samples());
  run_sample_stage(c, inst);
  CHECK(slurp(c.samples()) == first);
}

TEST_CASE("stage failures name the stage and keep earlier artifacts") {
  TempDir tmp("fail");
  auto c = tiny_config(tmp.path);
  c.sampler.divergence_factor = 1e-6;
  CHECK_THROWS_WITH_AS(run_pipeline(c), doctest::Contains("sample stage: "), DivergenceError);
  CHECK(fs::exists(c.dataset()));
  CHECK(fs::exists(c.checkpoint()));

  auto missing = tiny_config(tmp.path / "other");
  missing.stages = {false, true, false, false};
  CHECK_THROWS_WITH_AS(run_pipeline(missing), doctest::Contains("config stage: "), ConfigError);

  auto io = tiny_config(tmp.path);
  io.stages = {false, false, false, true};
  io.samples_path = tmp.path / "nope.csv";
  CHECK_THROWS_WITH_AS(run_pipeline(io), doctest::Contains("nope.csv"), ConfigError);
  std::ofstream(tmp.path / "nope.csv") << "x_1,x_2\n";
  CHECK_THROWS_WITH_AS(run_pipeline(io), doctest::Contains("evaluate stage: "), IoError);
}

TEST_CASE("evaluating the SOCP solution recovers the risk level") {
  TempDir tmp("socp");
  ExperimentConfig c = default_experiment_config();
  c.instance_path = kInstanceFile;
  c.output_dir = tmp.path;
  const auto inst = load_instance(kInstanceFile);
  const auto rows = run_baselines(c, inst);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "SOC_CVX");
  CHECK(std::abs(rows[0].fval_mean + 0.6586) <= 5e-4);

  c.samples_path = tmp.path / "socp_solution.csv";
  c.eval_samples = 100000;
  const SampleReport r = run_evaluate_stage(c, inst);
  CHECK(r.repaired == 0);
  CHECK(r.empirical_feasibility >= 1.0 - 0.1 - 0.01);
  CHECK(r.fval_mean == doctest::Approx(rows[0].fval_mean).epsilon(1e-12));
  CHECK(fs::exists(tmp.path / "report.json"));
  CHECK(fs::exists(tmp.path / "baselines.json"));
}
