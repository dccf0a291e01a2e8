#include "ggdopt/diffusion.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ggdopt/errors.hpp"

namespace ggdopt {

// ---------------------------------------------------------------- schedule

NoiseSchedule::NoiseSchedule(int steps, double eta_min, double eta_max)
    : steps_(steps), eta_min_(eta_min), eta_max_(eta_max) {
  if (steps < 1) throw InvalidArgument("NoiseSchedule: T must be >= 1");
  if (!(eta_min > 0.0) || !(eta_max < 1.0) || eta_max < eta_min) {
    throw InvalidArgument("NoiseSchedule: need 0 < eta_min <= eta_max < 1");
  }
  eta_.assign(steps + 1, 0.0);
  alpha_bar_.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    eta_[t] = steps == 1 ? eta_min
                         : eta_min + (eta_max - eta_min) * static_cast<double>(t - 1) / (steps - 1);
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - eta_[t]);
  }
}

double NoiseSchedule::eta(int t) const {
  if (t < 1 || t > steps_) {
    throw InvalidArgument("NoiseSchedule::eta: t = " + std::to_string(t) + " outside [1, " +
                          std::to_string(steps_) + "]");
  }
  return eta_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps_) {
    throw InvalidArgument("NoiseSchedule::alpha_bar: t = " + std::to_string(t) +
                          " outside [0, " + std::to_string(steps_) + "]");
  }
  return alpha_bar_[t];
}

Vector forward_perturb(const NoiseSchedule& schedule, const Vector& x0, int t, const Vector& eps) {
  if (t < 1 || t > schedule.steps()) {
    throw InvalidArgument("forward_perturb: t = " + std::to_string(t) + " out of range");
  }
  if (eps.size() != x0.size()) throw InvalidArgument("forward_perturb: eps dimension mismatch");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Perturbation forward_perturb(const NoiseSchedule& schedule, const Vector& x0, int t,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector eps(x0.size());
  for (Index i = 0; i < eps.size(); ++i) eps[i] = normal(rng);
  Vector xt = forward_perturb(schedule, x0, t, eps);
  return {std::move(xt), std::move(eps)};
}

Vector noise_to_score(const NoiseSchedule& schedule, const Vector& eps, int t) {
  return -eps / std::sqrt(1.0 - schedule.alpha_bar(t));
}

Vector score_to_noise(const NoiseSchedule& schedule, const Vector& score, int t) {
  return -std::sqrt(1.0 - schedule.alpha_bar(t)) * score;
}

AnalyticGaussianScore::AnalyticGaussianScore(const NoiseSchedule& schedule, Vector mean,
                                             double sigma0)
    : schedule_(schedule), mean_(std::move(mean)), sigma0_(sigma0) {
  if (!(sigma0 >= 0.0)) throw InvalidArgument("AnalyticGaussianScore: sigma0 must be >= 0");
}

Vector AnalyticGaussianScore::score(const Vector& xt, int t) const {
  if (xt.size() != mean_.size()) throw InvalidArgument("AnalyticGaussianScore: dimension mismatch");
  const double ab = schedule_.alpha_bar(t);
  return -(xt - std::sqrt(ab) * mean_) / (ab * sigma0_ * sigma0_ + 1.0 - ab);
}

Vector AnalyticGaussianScore::predict_noise(const Vector& xt, int t,
                                            std::optional<double> /*rho*/) const {
  return score_to_noise(schedule_, score(xt, t), t);
}

double AnalyticGaussianScore::data_radius() const {
  return mean_.norm() + 4.0 * sigma0_ * std::sqrt(static_cast<double>(mean_.size()));
}

Vector cond_score(const NoisePredictor& model, const NoiseSchedule& schedule, const Vector& xt,
                  int t, std::optional<double> rho, double w) {
  const Vector s_cond = noise_to_score(schedule, model.predict_noise(xt, t, rho), t);
  if (w == 0.0) return s_cond;
  const Vector s_null = noise_to_score(schedule, model.predict_noise(xt, t, std::nullopt), t);
  return (1.0 + w) * s_cond - w * s_null;
}

// ---------------------------------------------------------------- network

Eigen::VectorXf sinusoidal_embedding(double value, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw InvalidArgument("sinusoidal_embedding: dim must be even");
  const int half = dim / 2;
  Eigen::VectorXf e(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    e[k] = static_cast<float>(std::sin(value * freq));
    e[k + half] = static_cast<float>(std::cos(value * freq));
  }
  return e;
}

namespace {

inline float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

Eigen::MatrixXf silu(const Eigen::MatrixXf& a) {
  return a.unaryExpr([](float v) { return v * sigmoid(v); });
}

Eigen::MatrixXf silu_grad(const Eigen::MatrixXf& a) {
  return a.unaryExpr([](float v) {
    const float s = sigmoid(v);
    return s * (1.0f + v * (1.0f - s));
  });
}

enum TensorSlot : std::size_t { kWin = 0, kBin = 1, kFirstBlock = 2 };

}  // namespace

ScoreNetwork::ScoreNetwork(const NetworkConfig& config, double rho_lo, double rho_hi,
                           double data_radius, std::uint64_t seed)
    : config_(config), rho_lo_(rho_lo), rho_hi_(rho_hi), data_radius_(data_radius) {
  if (config.dim < 1 || config.width < 1 || config.depth < 0) {
    throw InvalidArgument("ScoreNetwork: dim and width must be positive, depth >= 0");
  }
  if (config.time_embedding <= 0 || config.time_embedding % 2 != 0 ||
      config.rho_embedding <= 0 || config.rho_embedding % 2 != 0) {
    throw InvalidArgument("ScoreNetwork: embedding sizes must be positive and even");
  }
  if (!(rho_hi > rho_lo)) throw InvalidArgument("ScoreNetwork: rho range must have rho_hi > rho_lo");
  build_layout();

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const Tensor& T = layout_[i];
    auto m = tensor(params_, i);
    const std::string leaf = T.name.substr(T.name.find('.') + 1);
    if (leaf[0] == 'b') {
      m.setZero();
      continue;
    }
    double bound;
    if (T.name == "null_token") {
      bound = 1.0;
    } else {
      bound = std::sqrt(6.0 / static_cast<double>(T.rows + T.cols));
      if (T.name == "W_out") bound *= 0.1;
    }
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (Index c = 0; c < m.cols(); ++c)
      for (Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<float>(uni(rng));
  }
}

ScoreNetwork::ScoreNetwork(const ScoreNetwork& other)
    : config_(other.config_),
      rho_lo_(other.rho_lo_),
      rho_hi_(other.rho_hi_),
      data_radius_(other.data_radius_),
      layout_(other.layout_),
      params_(other.params_),
      null_served_(other.null_served_.load()) {}

ScoreNetwork& ScoreNetwork::operator=(const ScoreNetwork& other) {
  if (this != &other) {
    config_ = other.config_;
    rho_lo_ = other.rho_lo_;
    rho_hi_ = other.rho_hi_;
    data_radius_ = other.data_radius_;
    layout_ = other.layout_;
    params_ = other.params_;
    null_served_.store(other.null_served_.load());
  }
  return *this;
}

void ScoreNetwork::build_layout() {
  layout_.clear();
  std::size_t offset = 0;
  auto add = [&](std::string name, Index rows, Index cols) {
    layout_.push_back({std::move(name), rows, cols, offset});
    offset += static_cast<std::size_t>(rows * cols);
  };
  const Index W = config_.width;
  const Index in = config_.dim + config_.time_embedding + config_.rho_embedding;
  add("W_in", W, in);
  add("b_in", W, 1);
  for (int k = 0; k < config_.depth; ++k) {
    const std::string p = "block" + std::to_string(k) + ".";
    add(p + "W1", W, W);
    add(p + "b1", W, 1);
    add(p + "W2", W, W);
    add(p + "b2", W, 1);
  }
  add("W_out", config_.dim, W);
  add("b_out", config_.dim, 1);
  add("null_token", config_.rho_embedding, 1);
  params_.assign(offset, 0.0f);
}

Eigen::Map<Eigen::MatrixXf> ScoreNetwork::tensor(std::vector<float>& buf, std::size_t i) const {
  const Tensor& T = layout_[i];
  return {buf.data() + T.offset, T.rows, T.cols};
}

Eigen::Map<const Eigen::MatrixXf> ScoreNetwork::tensor(const std::vector<float>& buf,
                                                       std::size_t i) const {
  const Tensor& T = layout_[i];
  return {buf.data() + T.offset, T.rows, T.cols};
}

void ScoreNetwork::set_parameters(std::vector<float> values) {
  if (values.size() != params_.size()) {
    throw InvalidArgument("ScoreNetwork::set_parameters: expected " +
                          std::to_string(params_.size()) + " values, got " +
                          std::to_string(values.size()));
  }
  params_ = std::move(values);
}

Eigen::MatrixXf ScoreNetwork::embed_inputs(const Eigen::MatrixXf& x, const std::vector<int>& t,
                                           const std::vector<std::optional<double>>& rho,
                                           std::vector<bool>* is_null) const {
  const Index B = x.cols();
  if (x.rows() != config_.dim) throw InvalidArgument("ScoreNetwork: input dimension mismatch");
  if (static_cast<Index>(t.size()) != B || static_cast<Index>(rho.size()) != B) {
    throw InvalidArgument("ScoreNetwork: batch size mismatch between x, t and rho");
  }
  const Index n = config_.dim;
  const int Et = config_.time_embedding;
  const int Er = config_.rho_embedding;
  Eigen::MatrixXf u(n + Et + Er, B);
  u.topRows(n) = x;
  const auto null_token = tensor(params_, layout_.size() - 1);
  std::size_t nulls = 0;
  if (is_null) is_null->assign(B, false);
  for (Index j = 0; j < B; ++j) {
    u.block(n, j, Et, 1) = sinusoidal_embedding(static_cast<double>(t[j]), Et);
    if (rho[j]) {
      const double normalized = (*rho[j] - rho_lo_) / (rho_hi_ - rho_lo_);
      u.block(n + Et, j, Er, 1) = sinusoidal_embedding(1000.0 * normalized, Er);
    } else {
      u.block(n + Et, j, Er, 1) = null_token;
      ++nulls;
      if (is_null) (*is_null)[j] = true;
    }
  }
  if (nulls) null_served_.fetch_add(nulls);
  return u;
}

Eigen::MatrixXf ScoreNetwork::forward_cached(const Eigen::MatrixXf& x, const std::vector<int>& t,
                                             const std::vector<std::optional<double>>& rho,
                                             Cache& c) const {
  c.u = embed_inputs(x, t, rho, &c.is_null);
  const int D = config_.depth;
  c.h.resize(D + 1);
  c.a.resize(D);
  c.s.resize(D);
  c.h[0] = (tensor(params_, kWin) * c.u).colwise() + tensor(params_, kBin).col(0);
  for (int k = 0; k < D; ++k) {
    const std::size_t base = kFirstBlock + 4 * k;
    c.a[k] = (tensor(params_, base) * c.h[k]).colwise() + tensor(params_, base + 1).col(0);
    c.s[k] = silu(c.a[k]);
    c.h[k + 1] = c.h[k] + ((tensor(params_, base + 2) * c.s[k]).colwise() +
                           tensor(params_, base + 3).col(0));
  }
  c.o = silu(c.h[D]);
  const std::size_t out = kFirstBlock + 4 * D;
  return (tensor(params_, out) * c.o).colwise() + tensor(params_, out + 1).col(0);
}

Eigen::MatrixXf ScoreNetwork::forward(const Eigen::MatrixXf& x, const std::vector<int>& t,
                                      const std::vector<std::optional<double>>& rho) const {
  Cache c;
  return forward_cached(x, t, rho, c);
}

void ScoreNetwork::backward(const Cache& c, const Eigen::MatrixXf& g_out,
                            std::vector<float>& grad) const {
  grad.assign(params_.size(), 0.0f);
  const int D = config_.depth;
  const std::size_t out = kFirstBlock + 4 * D;
  tensor(grad, out).noalias() = g_out * c.o.transpose();
  tensor(grad, out + 1) = g_out.rowwise().sum();
  Eigen::MatrixXf g_h =
      (tensor(params_, out).transpose() * g_out).cwiseProduct(silu_grad(c.h[D]));
  for (int k = D - 1; k >= 0; --k) {
    const std::size_t base = kFirstBlock + 4 * k;
    tensor(grad, base + 2).noalias() = g_h * c.s[k].transpose();
    tensor(grad, base + 3) = g_h.rowwise().sum();
    const Eigen::MatrixXf g_a =
        (tensor(params_, base + 2).transpose() * g_h).cwiseProduct(silu_grad(c.a[k]));
    tensor(grad, base).noalias() = g_a * c.h[k].transpose();
    tensor(grad, base + 1) = g_a.rowwise().sum();
    g_h.noalias() += tensor(params_, base).transpose() * g_a;
  }
  tensor(grad, kWin).noalias() = g_h * c.u.transpose();
  tensor(grad, kBin) = g_h.rowwise().sum();

  const Index n = config_.dim;
  const int Et = config_.time_embedding;
  const int Er = config_.rho_embedding;
  auto g_null = tensor(grad, layout_.size() - 1);
  const auto W_rho = tensor(params_, kWin).middleCols(n + Et, Er);
  for (std::size_t j = 0; j < c.is_null.size(); ++j) {
    if (c.is_null[j]) g_null.col(0).noalias() += W_rho.transpose() * g_h.col(j);
  }
}

Vector ScoreNetwork::predict_noise(const Vector& xt, int t, std::optional<double> rho) const {
  if (xt.size() != config_.dim) throw InvalidArgument("ScoreNetwork: input dimension mismatch");
  const Eigen::MatrixXf out = forward(xt.cast<float>(), {t}, {rho});
  return out.col(0).cast<double>();
}

// ---------------------------------------------------------------- training

double training_loss(const NoisePredictor& model, const NoiseSchedule& schedule,
                     const Matrix& points, const Vector& risks, double p_uncond,
                     std::uint64_t seed) {
  if (points.rows() < 1) throw InvalidArgument("training_loss: empty batch");
  if (risks.size() != points.rows()) throw InvalidArgument("training_loss: risks/points mismatch");
  if (!(p_uncond >= 0.0 && p_uncond < 1.0)) {
    throw InvalidArgument("training_loss: p_uncond must lie in [0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> step(1, schedule.steps());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const int t = step(rng);
    const bool drop = unit(rng) < p_uncond;
    Vector eps(points.cols());
    for (Index j = 0; j < eps.size(); ++j) eps[j] = normal(rng);
    const Vector xt = forward_perturb(schedule, points.row(i).transpose(), t, eps);
    const std::optional<double> cond = drop ? std::nullopt : std::optional<double>(risks[i]);
    total += (model.predict_noise(xt, t, cond) - eps).squaredNorm();
  }
  return total / static_cast<double>(points.rows());
}

namespace {

struct Batch {
  Eigen::MatrixXf x;
  Eigen::MatrixXf eps;
  std::vector<int> t;
  std::vector<std::optional<double>> rho;
};

Batch perturbed_batch(const Matrix& points, const Vector& risks, const std::vector<Index>& rows,
                      const NoiseSchedule& schedule, double p_uncond, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> step(1, schedule.steps());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  const Index n = points.cols();
  const auto B = static_cast<Index>(rows.size());
  Batch b;
  b.x.resize(n, B);
  b.eps.resize(n, B);
  b.t.resize(B);
  b.rho.resize(B);
  for (Index j = 0; j < B; ++j) {
    const Index r = rows[j];
    const int t = step(rng);
    const double ab = schedule.alpha_bar(t);
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    for (Index i = 0; i < n; ++i) {
      const double e = normal(rng);
      b.eps(i, j) = static_cast<float>(e);
      b.x(i, j) = static_cast<float>(sa * points(r, i) + sn * e);
    }
    b.t[j] = t;
    const bool drop = p_uncond > 0.0 && unit(rng) < p_uncond;
    b.rho[j] = drop ? std::nullopt : std::optional<double>(risks[r]);
  }
  return b;
}

double batch_mse(const Eigen::MatrixXf& pred, const Eigen::MatrixXf& eps) {
  return static_cast<double>((pred - eps).squaredNorm()) / static_cast<double>(pred.cols());
}

}  // namespace

TrainResult train(const FeasibleDataset& data, const TrainConfig& config,
                  const NoiseSchedule& schedule, const std::function<void(int, double)>& progress) {
  if (data.size() < 1) throw InvalidArgument("train: dataset is empty");
  if (!(config.p_uncond >= 0.0 && config.p_uncond < 1.0)) {
    throw InvalidArgument("train: p_uncond must lie in [0, 1)");
  }
  if (config.batch_size < 1 || config.steps < 0 || !(config.learning_rate > 0.0)) {
    throw InvalidArgument("train: batch size >= 1, steps >= 0 and learning rate > 0 required");
  }
  const auto start = std::chrono::steady_clock::now();
  const Index N = data.size();
  const Index n = data.dim();

  // Canonical row order, then a seeded permutation.
  std::vector<Index> order(N);
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index j = 0; j < n; ++j) {
      if (data.points(a, j) != data.points(b, j)) return data.points(a, j) < data.points(b, j);
    }
    return data.risks[a] < data.risks[b];
  });
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const Index n_hold = N >= 5 ? N / 5 : 0;
  const Index n_train = N - n_hold;
  Matrix points(N, n);
  Vector risks(N);
  for (Index i = 0; i < N; ++i) {
    points.row(i) = data.points.row(order[i]);
    risks[i] = data.risks[order[i]];
  }

  double rho_lo = risks.minCoeff();
  double rho_hi = risks.maxCoeff();
  if (!(rho_hi > rho_lo)) rho_hi = rho_lo + 1.0;
  double radius = 0.0;
  for (Index i = 0; i < N; ++i) radius = std::max(radius, points.row(i).norm());
  NetworkConfig net_config = config.network;
  net_config.dim = n;
  ScoreNetwork net(net_config, rho_lo, rho_hi, std::max(radius, 1e-12), config.seed ^ 0x9e3779b97f4a7c15ULL);

  // Fixed held-out evaluation set (all rows when the dataset is tiny).
  std::vector<Index> eval_rows;
  const Index eval_begin = n_hold > 0 ? n_train : 0;
  for (int r = 0; r < std::max(1, config.eval_repeats); ++r)
    for (Index i = eval_begin; i < N; ++i) eval_rows.push_back(i);
  std::mt19937_64 eval_rng(config.seed + 0x5bd1e995ULL);
  const Batch eval = perturbed_batch(points, risks, eval_rows, schedule, 0.0, eval_rng);
  auto holdout_loss = [&] { return batch_mse(net.forward(eval.x, eval.t, eval.rho), eval.eps); };

  TrainResult result{net, 0.0, 0.0, {}, 0.0};
  result.holdout_loss_initial = holdout_loss();
  result.holdout_history.emplace_back(0, result.holdout_loss_initial);

  const std::size_t P = net.parameters().size();
  std::vector<float> grad, m(P, 0.0f), v(P, 0.0f);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<Index> epoch(static_cast<std::size_t>(n_train));
  std::iota(epoch.begin(), epoch.end(), Index{0});
  std::size_t cursor = epoch.size();
  std::vector<Index> rows(config.batch_size);
  ScoreNetwork::Cache cache;

  for (int step = 1; step <= config.steps; ++step) {
    for (auto& r : rows) {
      if (cursor == epoch.size()) {
        std::shuffle(epoch.begin(), epoch.end(), rng);
        cursor = 0;
      }
      r = epoch[cursor++];
    }
    const Batch b = perturbed_batch(points, risks, rows, schedule, config.p_uncond, rng);
    const Eigen::MatrixXf pred = net.forward_cached(b.x, b.t, b.rho, cache);
    const double loss = batch_mse(pred, b.eps);
    const double progress_frac = static_cast<double>(step - 1) / std::max(1, config.steps);
    const double lr =
        config.learning_rate *
        (config.final_lr_fraction +
         (1.0 - config.final_lr_fraction) * 0.5 * (1.0 + std::cos(M_PI * progress_frac)));
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "training loss is not finite at step " << step << " (learning rate " << lr << ")";
      throw DivergenceError(msg.str());
    }
    const Eigen::MatrixXf g_out = (2.0f / static_cast<float>(b.x.cols())) * (pred - b.eps);
    net.backward(cache, g_out, grad);

    const double c1 = 1.0 - std::pow(kBeta1, step);
    const double c2 = 1.0 - std::pow(kBeta2, step);
    auto& w = net.mutable_parameters();
    for (std::size_t i = 0; i < P; ++i) {
      m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * grad[i]);
      v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i]);
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + kEps));
    }
    if (progress) progress(step, loss);
    if (config.eval_every > 0 && step % config.eval_every == 0 && step != config.steps) {
      result.holdout_history.emplace_back(step, holdout_loss());
    }
  }
  result.holdout_loss_final = config.steps > 0 ? holdout_loss() : result.holdout_loss_initial;
  if (config.steps > 0) result.holdout_history.emplace_back(config.steps, result.holdout_loss_final);
  result.network = net;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'G', 'G', 'D', 'O', 'P', 'T', 'N', 'N'};

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ScoreNetwork& net, const NoiseSchedule& schedule,
                     const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "ggdopt-score-network";
  header["version"] = 1;
  const auto& c = net.config();
  header["network"] = {{"dim", c.dim},
                       {"width", c.width},
                       {"depth", c.depth},
                       {"time_embedding", c.time_embedding},
                       {"rho_embedding", c.rho_embedding},
                       {"activation", "silu"}};
  header["normalization"] = {{"rho_lo", net.rho_lo()},
                             {"rho_hi", net.rho_hi()},
                             {"rho_scale", 1000.0},
                             {"data_radius", net.data_radius()}};
  header["schedule"] = {{"T", schedule.steps()},
                        {"eta_min", schedule.eta_min()},
                        {"eta_max", schedule.eta_max()},
                        {"kind", "linear"}};
  auto tensors = nlohmann::json::array();
  for (const auto& T : net.layout()) {
    tensors.push_back({{"name", T.name}, {"shape", {T.rows, T.cols}}, {"offset", T.offset}});
  }
  header["tensors"] = tensors;
  header["storage"] = "float32-le column-major";
  header["parameter_count"] = net.parameters().size();
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float f : net.parameters()) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path.string() + " is not a score-network checkpoint");
  }
  const std::uint64_t len = read_u64_le(in);
  if (!in || len > (1u << 26)) throw IoError("checkpoint " + path.string() + ": bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint " + path.string() + ": truncated header");
  try {
    const auto header = nlohmann::json::parse(text);
    const auto& h = header.at("network");
    NetworkConfig c;
    c.dim = h.at("dim").get<Index>();
    c.width = h.at("width").get<int>();
    c.depth = h.at("depth").get<int>();
    c.time_embedding = h.at("time_embedding").get<int>();
    c.rho_embedding = h.at("rho_embedding").get<int>();
    const auto& norm = header.at("normalization");
    ScoreNetwork net(c, norm.at("rho_lo").get<double>(), norm.at("rho_hi").get<double>(),
                     norm.at("data_radius").get<double>(), 0);
    const auto count = header.at("parameter_count").get<std::size_t>();
    if (count != net.parameters().size()) {
      throw IoError("checkpoint " + path.string() + ": parameter count " + std::to_string(count) +
                    " does not match the architecture (" +
                    std::to_string(net.parameters().size()) + ")");
    }
    std::vector<float> values(count);
    for (auto& f : values) {
      unsigned char bytes[4];
      in.read(reinterpret_cast<char*>(bytes), 4);
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
      f = std::bit_cast<float>(bits);
    }
    if (!in) throw IoError("checkpoint " + path.string() + ": truncated payload");
    net.set_parameters(std::move(values));
    const auto& s = header.at("schedule");
    NoiseSchedule schedule(s.at("T").get<int>(), s.at("eta_min").get<double>(),
                           s.at("eta_max").get<double>());
    return {std::move(net), std::move(schedule)};
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": bad header: " + e.what());
  }
}

}  // namespace ggdopt
