#pragma once

// Stage 2: variance-preserving forward process and the conditional
// noise-prediction network trained with condition dropout.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ggdopt/ccp.hpp"
#include "ggdopt/datagen.hpp"

namespace ggdopt {

/// Discrete linear schedule. Steps are indexed 1..T; alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  NoiseSchedule(int steps = 1000, double eta_min = 1e-4, double eta_max = 0.02);

  int steps() const { return steps_; }
  double eta_min() const { return eta_min_; }
  double eta_max() const { return eta_max_; }
  /// Throws InvalidArgument unless 1 <= t <= T.
  double eta(int t) const;
  /// Throws InvalidArgument unless 0 <= t <= T.
  double alpha_bar(int t) const;

 private:
  int steps_;
  double eta_min_, eta_max_;
  std::vector<double> eta_;        // [0] unused
  std::vector<double> alpha_bar_;  // [0] = 1
};

struct Perturbation {
  Vector xt;
  Vector eps;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps with eps ~ N(0, I) from `seed`.
Perturbation forward_perturb(const NoiseSchedule& schedule, const Vector& x0, int t,
                             std::uint64_t seed);
/// Same with caller-supplied eps.
Vector forward_perturb(const NoiseSchedule& schedule, const Vector& x0, int t, const Vector& eps);

/// A model of the noise eps given (x_t, t, condition); an empty condition is
/// the null token.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Index dim() const = 0;
  virtual Vector predict_noise(const Vector& xt, int t, std::optional<double> rho) const = 0;
  /// Scale of the data the model was fit to; drives the sampler's divergence guard.
  virtual double data_radius() const = 0;
};

/// eps -> score: s = -eps / sqrt(1 - abar_t).
Vector noise_to_score(const NoiseSchedule& schedule, const Vector& eps, int t);
/// score -> eps: eps = -sqrt(1 - abar_t) s.
Vector score_to_noise(const NoiseSchedule& schedule, const Vector& score, int t);

/// Exact predictor for data N(mean, sigma0^2 I), independent of the condition.
/// sigma0 = 0 is a point mass.
class AnalyticGaussianScore final : public NoisePredictor {
 public:
  AnalyticGaussianScore(const NoiseSchedule& schedule, Vector mean, double sigma0);
  Index dim() const override { return mean_.size(); }
  Vector predict_noise(const Vector& xt, int t, std::optional<double> rho) const override;
  double data_radius() const override;
  /// -(x - sqrt(abar) mean) / (abar sigma0^2 + 1 - abar)
  Vector score(const Vector& xt, int t) const;

 private:
  NoiseSchedule schedule_;
  Vector mean_;
  double sigma0_;
};

/// Classifier-free combination (1 + w) s(x, t, rho) - w s(x, t, null).
Vector cond_score(const NoisePredictor& model, const NoiseSchedule& schedule, const Vector& xt,
                  int t, std::optional<double> rho, double w);

struct NetworkConfig {
  Index dim = 0;
  int width = 256;
  int depth = 4;
  int time_embedding = 32;
  int rho_embedding = 32;
};

/// Sinusoidal position embedding of a scalar: [sin(v f_k)..., cos(v f_k)...],
/// f_k = 10000^{-k / (dim/2)}. `dim` must be even.
Eigen::VectorXf sinusoidal_embedding(double value, int dim);

/// Residual feed-forward eps-predictor on [x, emb(t), emb(rho) | null token]:
///
///   h = W_in u + b_in;  h += W2 silu(W1 h + b1) + b2 (depth times);  out = W_out silu(h) + b_out
///
/// rho is mapped affinely from [rho_lo, rho_hi] to [0, 1] and scaled by 1000
/// before embedding. Parameters live in one flat float buffer.
class ScoreNetwork final : public NoisePredictor {
 public:
  ScoreNetwork(const NetworkConfig& config, double rho_lo, double rho_hi, double data_radius,
               std::uint64_t seed);

  Index dim() const override { return config_.dim; }
  Vector predict_noise(const Vector& xt, int t, std::optional<double> rho) const override;
  double data_radius() const override { return data_radius_; }

  /// Batched evaluation; columns of `x` are samples. Condition entries without
  /// a value use the null token.
  Eigen::MatrixXf forward(const Eigen::MatrixXf& x, const std::vector<int>& t,
                          const std::vector<std::optional<double>>& rho) const;

  const NetworkConfig& config() const { return config_; }
  double rho_lo() const { return rho_lo_; }
  double rho_hi() const { return rho_hi_; }
  const std::vector<float>& parameters() const { return params_; }
  std::vector<float>& mutable_parameters() { return params_; }
  /// Replaces all parameters; throws InvalidArgument on a size mismatch.
  void set_parameters(std::vector<float> values);

  /// Number of null-token embeddings handed to the network so far (probe for tests).
  std::size_t null_embeddings_served() const { return null_served_.load(); }

  struct Tensor {
    std::string name;
    Index rows = 0, cols = 0;
    std::size_t offset = 0;
  };
  const std::vector<Tensor>& layout() const { return layout_; }

  /// Internal: forward pass that keeps activations, and its backward pass.
  struct Cache {
    Eigen::MatrixXf u;
    std::vector<Eigen::MatrixXf> h;  // depth + 1
    std::vector<Eigen::MatrixXf> a;  // depth
    std::vector<Eigen::MatrixXf> s;  // depth
    Eigen::MatrixXf o;
    std::vector<bool> is_null;
  };
  Eigen::MatrixXf forward_cached(const Eigen::MatrixXf& x, const std::vector<int>& t,
                                 const std::vector<std::optional<double>>& rho, Cache& cache) const;
  void backward(const Cache& cache, const Eigen::MatrixXf& grad_out,
                std::vector<float>& grad) const;

  ScoreNetwork(const ScoreNetwork& other);
  ScoreNetwork& operator=(const ScoreNetwork& other);

 private:
  void build_layout();
  Eigen::Map<Eigen::MatrixXf> tensor(std::vector<float>& buf, std::size_t i) const;
  Eigen::Map<const Eigen::MatrixXf> tensor(const std::vector<float>& buf, std::size_t i) const;
  Eigen::MatrixXf embed_inputs(const Eigen::MatrixXf& x, const std::vector<int>& t,
                               const std::vector<std::optional<double>>& rho,
                               std::vector<bool>* is_null) const;

  NetworkConfig config_;
  double rho_lo_, rho_hi_, data_radius_;
  std::vector<Tensor> layout_;
  std::vector<float> params_;
  mutable std::atomic<std::size_t> null_served_{0};
};

struct TrainConfig {
  double p_uncond = 0.1;
  double learning_rate = 1e-4;
  int batch_size = 64;
  int steps = 20000;
  std::uint64_t seed = 0;
  NetworkConfig network;
  /// Evaluate the held-out loss every this many steps (0: only first and last).
  int eval_every = 0;
  /// Noise draws per held-out point in the held-out loss.
  int eval_repeats = 16;
  /// Cosine decay of the learning rate down to learning_rate * final_lr_fraction.
  double final_lr_fraction = 1.0;
};

/// Mean over the batch of ||model(x_t, t, rho~) - eps||^2 with t ~ U{1..T},
/// eps ~ N(0, I) and rho~ = null with probability p_uncond. `points` is B x n.
double training_loss(const NoisePredictor& model, const NoiseSchedule& schedule,
                     const Matrix& points, const Vector& risks, double p_uncond,
                     std::uint64_t seed);

struct TrainResult {
  ScoreNetwork network;
  double holdout_loss_initial = 0.0;
  double holdout_loss_final = 0.0;
  std::vector<std::pair<int, double>> holdout_history;  ///< (step, loss)
  double seconds = 0.0;
};

/// Algorithm-1 training with Adam. Rows are sorted canonically and then
/// shuffled with the seed, so the result does not depend on input row order;
/// the last fifth of the shuffled rows is held out. Throws DivergenceError on
/// a non-finite loss, naming the step and learning rate.
TrainResult train(const FeasibleDataset& data, const TrainConfig& config,
                  const NoiseSchedule& schedule,
                  const std::function<void(int, double)>& progress = {});

struct Checkpoint {
  ScoreNetwork network;
  NoiseSchedule schedule;
};

/// Container: 8-byte magic "GGDOPTNN", little-endian u64 header length, JSON
/// header (config, schedule, normalization, tensor shapes), then the
/// parameters as little-endian float32.
void save_checkpoint(const ScoreNetwork& net, const NoiseSchedule& schedule,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ggdopt
