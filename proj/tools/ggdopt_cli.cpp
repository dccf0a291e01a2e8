// Command-line front end: generate, train, sample, baseline, evaluate, pipeline.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage error,
// 3 numerical failure (infeasible, ill-posed, divergence), 4 I/O failure.

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ggdopt/baselines.hpp"
#include "ggdopt/errors.hpp"
#include "ggdopt/harness.hpp"

namespace fs = std::filesystem;
using namespace ggdopt;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Overrides {
  std::optional<std::string> config, instance, output, dataset, checkpoint, samples, method;
  std::optional<std::uint64_t> seed;
  // generate
  std::optional<double> z_min, z_max;
  std::optional<std::size_t> grid_size;
  std::optional<Index> estimation_samples;
  // train
  std::optional<int> train_steps, batch_size, width, depth;
  std::optional<double> lr, final_lr_fraction, p_uncond;
  // sample
  std::optional<int> sampler_steps, repeats;
  std::optional<double> rho, beta, sigma2, w;
  std::optional<std::string> order, mode, variance;
  bool no_trajectories = false;
  // evaluate
  std::optional<Index> eval_samples;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "Experiment config (JSON)");
  app->add_option("-i,--instance", o.instance, "Instance definition file");
  app->add_option("-o,--output", o.output,
                  "Output directory (default: $GGDOPT_OUTPUT_ROOT or ./ggdopt-out)");
  app->add_option("--seed", o.seed, "Global seed");
}

void add_generate(CLI::App* app, Overrides& o) {
  app->add_option("--dataset", o.dataset, "Dataset CSV path");
  app->add_option("--z-min", o.z_min, "Smallest restriction z");
  app->add_option("--z-max", o.z_max, "Largest restriction z");
  app->add_option("--grid-size", o.grid_size, "Number of restrictions N");
  app->add_option("--estimation-samples", o.estimation_samples, "Draws L for h-bar and rho");
}

// `paths` is false for pipeline, where generate and sample already add them.
void add_train(CLI::App* app, Overrides& o, bool paths = true) {
  if (paths) {
    app->add_option("--dataset", o.dataset, "Dataset CSV path");
    app->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
  }
  app->add_option("--steps", o.train_steps, "Training steps");
  app->add_option("--batch-size", o.batch_size, "Mini-batch size");
  app->add_option("--lr", o.lr, "Adam learning rate");
  app->add_option("--final-lr-fraction", o.final_lr_fraction, "Cosine decay floor (fraction of lr)");
  app->add_option("--p-uncond", o.p_uncond, "Condition dropout probability");
  app->add_option("--width", o.width, "Hidden width");
  app->add_option("--depth", o.depth, "Residual blocks");
}

void add_sample(CLI::App* app, Overrides& o) {
  app->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
  app->add_option("--samples", o.samples, "Samples CSV path");
  app->add_option("--sampler-steps", o.sampler_steps, "Reverse steps T'");
  app->add_option("--repeats", o.repeats, "Independent sampling repeats R");
  app->add_option("--rho", o.rho, "Target risk level (default: the instance's rho)");
  app->add_option("--beta", o.beta, "Inverse temperature");
  app->add_option("--order", o.order, "Guidance order: none, first, second");
  app->add_option("--sigma2", o.sigma2, "Posterior variance for second-order guidance");
  app->add_option("--variance", o.variance, "Posterior variance over t: fixed or diffused");
  app->add_option("--w", o.w, "Classifier-free guidance weight");
  app->add_option("--mode", o.mode, "deterministic or ancestral");
  app->add_flag("--no-trajectories", o.no_trajectories, "Skip trajectory and plot output");
}

void add_evaluate(CLI::App* app, Overrides& o) {
  app->add_option("--samples", o.samples, "Samples CSV path");
  app->add_option("--eval-samples", o.eval_samples, "Fresh draws for feasibility");
  app->add_option("--method", o.method, "Method label in the report");
}

ExperimentConfig build_config(const Overrides& o) {
  ExperimentConfig c = o.config ? load_experiment_config(*o.config) : default_experiment_config();
  if (!o.config || !o.output) {
    if (const char* root = std::getenv("GGDOPT_OUTPUT_ROOT"); root && *root && !o.output) {
      c.output_dir = root;
    }
  }
  if (o.instance) c.instance_path = *o.instance;
  if (o.output) c.output_dir = *o.output;
  if (o.dataset) c.dataset_path = fs::path(*o.dataset);
  if (o.checkpoint) c.checkpoint_path = fs::path(*o.checkpoint);
  if (o.samples) c.samples_path = fs::path(*o.samples);
  if (o.method) c.method = *o.method;
  if (o.seed) c.seed = *o.seed;
  if (o.z_min) c.z_min = *o.z_min;
  if (o.z_max) c.z_max = *o.z_max;
  if (o.grid_size) c.grid_size = *o.grid_size;
  if (o.estimation_samples) c.estimation_samples = *o.estimation_samples;
  if (o.train_steps) c.train.steps = *o.train_steps;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.width) c.train.network.width = *o.width;
  if (o.depth) c.train.network.depth = *o.depth;
  if (o.lr) c.train.learning_rate = *o.lr;
  if (o.final_lr_fraction) c.train.final_lr_fraction = *o.final_lr_fraction;
  if (o.p_uncond) c.train.p_uncond = *o.p_uncond;
  if (o.sampler_steps) c.sampler.steps = *o.sampler_steps;
  if (o.repeats) c.repeats = *o.repeats;
  if (o.rho) c.sampler.rho = *o.rho;
  if (o.beta) c.sampler.guidance.beta = *o.beta;
  if (o.sigma2) c.sampler.guidance.sigma2 = *o.sigma2;
  if (o.w) c.sampler.guidance.w = *o.w;
  if (o.order) c.sampler.guidance.order = parse_guidance_order(*o.order);
  if (o.variance) c.sampler.guidance.variance = parse_posterior_variance(*o.variance);
  if (o.mode) c.sampler.mode = parse_sampler_mode(*o.mode);
  if (o.no_trajectories) c.record_trajectories = false;
  if (o.eval_samples) c.eval_samples = *o.eval_samples;
  return c;
}

void print_report(const SampleReport& r) {
  std::cout << std::setprecision(6) << r.method << ": mean " << r.fval_mean << "  std "
            << r.fval_std << "  median " << r.fval_median << "  q25 " << r.fval_q25 << "  q75 "
            << r.fval_q75 << "  probability " << r.empirical_feasibility << "  runtime "
            << r.runtime_seconds << " s  (R = " << r.repeats << ", repaired " << r.repaired
            << ")\n";
}

ExperimentConfig only(ExperimentConfig c, bool g, bool t, bool s, bool e) {
  c.stages = {g, t, s, e};
  return c;
}

int run(int argc, char** argv) {
  CLI::App app{"Gradient-guided diffusion for chance constrained programs"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("generate", "Stage 1: restricted-problem dataset");
  add_common(gen, o);
  add_generate(gen, o);
  auto* tr = app.add_subcommand("train", "Stage 2: train the conditional score network");
  add_common(tr, o);
  add_train(tr, o);
  auto* sm = app.add_subcommand("sample", "Stage 3: guided reverse diffusion");
  add_common(sm, o);
  add_sample(sm, o);
  auto* bl = app.add_subcommand("baseline", "SOCP and empirical-mean reference solutions");
  add_common(bl, o);
  bl->add_option("--estimation-samples", o.estimation_samples, "Draws for the empirical mean");
  bl->add_option("--eval-samples", o.eval_samples, "Fresh draws for feasibility");
  auto* ev = app.add_subcommand("evaluate", "Repair samples and write the report");
  add_common(ev, o);
  add_evaluate(ev, o);
  auto* pl = app.add_subcommand("pipeline", "Run every enabled stage");
  add_common(pl, o);
  add_generate(pl, o);
  add_train(pl, o, false);
  add_sample(pl, o);
  pl->add_option("--eval-samples", o.eval_samples, "Fresh draws for feasibility");
  pl->add_option("--method", o.method, "Method label in the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const ExperimentConfig base = build_config(o);

  if (*gen) {
    const auto c = only(base, true, false, false, false);
    c.validate();
    const auto data = run_generate_stage(c, load_instance(c.instance_path));
    std::cout << "wrote " << data.size() << " points to " << c.dataset() << " ("
              << data.skipped.size() << " grid points skipped)\n";
  } else if (*tr) {
    const auto c = only(base, false, true, false, false);
    c.validate();
    fs::create_directories(c.output_dir);
    const auto r = run_train_stage(c);
    std::cout << "held-out loss " << r.holdout_loss_initial << " -> " << r.holdout_loss_final
              << " in " << r.seconds << " s; checkpoint " << c.checkpoint() << "\n";
  } else if (*sm) {
    const auto c = only(base, false, false, true, false);
    c.validate();
    const auto seconds = run_sample_stage(c, load_instance(c.instance_path));
    std::cout << "wrote " << seconds.size() << " samples to " << c.samples() << " (mean "
              << std::accumulate(seconds.begin(), seconds.end(), 0.0) /
                     static_cast<double>(seconds.size())
              << " s per repeat)\n";
  } else if (*bl) {
    const auto c = only(base, false, false, false, false);
    c.validate();
    if (c.instance_path.empty()) throw ConfigError("baseline needs --instance");
    for (const auto& r : run_baselines(c, load_instance(c.instance_path))) print_report(r);
  } else if (*ev) {
    const auto c = only(base, false, false, false, true);
    c.validate();
    print_report(run_evaluate_stage(c, load_instance(c.instance_path)));
  } else if (*pl) {
    const auto result = run_pipeline(base);
    if (result.training) {
      std::cout << "training: held-out loss " << result.training->holdout_loss_initial << " -> "
                << result.training->holdout_loss_final << " in " << result.training->seconds
                << " s\n";
    }
    if (result.report) print_report(*result.report);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
