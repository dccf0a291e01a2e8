#include "ggdopt/ccp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <vector>

#include "ggdopt/errors.hpp"
#include "ggdopt/normal.hpp"

namespace ggdopt {

namespace {

std::string shape(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace

// ---------------------------------------------------------------------------
// QuadraticObjective

QuadraticObjective::QuadraticObjective(Matrix hessian, Vector linear, double offset)
    : hessian_(std::move(hessian)), linear_(std::move(linear)), offset_(offset) {
  const Index n = linear_.size();
  if (n == 0) throw InvalidArgument("QuadraticObjective: empty linear term");
  if (hessian_.rows() != n || hessian_.cols() != n) {
    throw InvalidArgument("QuadraticObjective: Hessian is " + shape(hessian_.rows(), hessian_.cols()) +
                          ", expected " + shape(n, n));
  }
  if ((hessian_ - hessian_.transpose()).cwiseAbs().maxCoeff() != 0.0) {
    throw InvalidArgument("QuadraticObjective: Hessian must be exactly symmetric");
  }
  if (!hessian_.allFinite() || !linear_.allFinite() || !std::isfinite(offset_)) {
    throw InvalidArgument("QuadraticObjective: non-finite coefficients");
  }
}

QuadraticObjective QuadraticObjective::isotropic(Vector linear) {
  const Index n = linear.size();
  return QuadraticObjective(Matrix::Identity(n, n), std::move(linear), 0.0);
}

void QuadraticObjective::check_dim(const Vector& x, const char* op) const {
  if (x.size() != dim()) {
    throw InvalidArgument(std::string(op) + ": x has dimension " + std::to_string(x.size()) +
                          ", objective has " + std::to_string(dim()));
  }
}

double QuadraticObjective::value(const Vector& x) const {
  check_dim(x, "QuadraticObjective::value");
  return 0.5 * x.dot(hessian_ * x) + linear_.dot(x) + offset_;
}

Vector QuadraticObjective::gradient(const Vector& x) const {
  check_dim(x, "QuadraticObjective::gradient");
  return hessian_ * x + linear_;
}

const Matrix& QuadraticObjective::hessian(const Vector& x) const {
  check_dim(x, "QuadraticObjective::hessian");
  return hessian_;
}

// ---------------------------------------------------------------------------
// LinearChanceConstraint

LinearChanceConstraint::LinearChanceConstraint(Vector cbar, double d, double rho,
                                               Matrix covariance)
    : cbar_(std::move(cbar)), d_(d), rho_(rho), covariance_(std::move(covariance)) {
  const Index n = cbar_.size();
  if (n == 0) throw InvalidArgument("LinearChanceConstraint: empty cbar");
  if (!(rho_ > 0.0 && rho_ < 0.5)) {
    throw InvalidArgument("LinearChanceConstraint: rho must lie in (0, 0.5), got " +
                          std::to_string(rho_));
  }
  if (covariance_.rows() != n || covariance_.cols() != n) {
    throw InvalidArgument("LinearChanceConstraint: covariance is " +
                          shape(covariance_.rows(), covariance_.cols()) + ", expected " +
                          shape(n, n));
  }
  if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 0.0) {
    throw InvalidArgument("LinearChanceConstraint: covariance must be symmetric");
  }
  Eigen::LLT<Matrix> llt(covariance_);
  if (llt.info() != Eigen::Success) {
    throw InvalidArgument("LinearChanceConstraint: covariance must be positive definite");
  }
  chol_ = llt.matrixL();
  identity_ = covariance_.isIdentity(0.0);
}

LinearChanceConstraint::LinearChanceConstraint(Vector cbar, double d, double rho)
    : LinearChanceConstraint(cbar, d, rho, Matrix::Identity(cbar.size(), cbar.size())) {}

double LinearChanceConstraint::value(const Vector& x, const Vector& h) const {
  if (x.size() != dim() || h.size() != dim()) {
    throw InvalidArgument("LinearChanceConstraint::value: dimension mismatch (x " +
                          std::to_string(x.size()) + ", h " + std::to_string(h.size()) +
                          ", constraint " + std::to_string(dim()) + ")");
  }
  return h.dot(x) + d_;
}

double LinearChanceConstraint::mean_value(const Vector& x) const { return value(x, cbar_); }

double LinearChanceConstraint::spread(const Vector& x) const {
  if (x.size() != dim()) throw InvalidArgument("LinearChanceConstraint::spread: dimension mismatch");
  if (identity_) return x.norm();
  return (chol_.transpose() * x).norm();
}

double LinearChanceConstraint::feasibility_probability(const Vector& x) const {
  const double mu = mean_value(x);
  const double sd = spread(x);
  if (sd == 0.0) return mu >= 0.0 ? 1.0 : 0.0;
  return normal_cdf(mu / sd);
}

double LinearChanceConstraint::kappa() const { return -normal_quantile(rho_); }

double LinearChanceConstraint::cone_violation(const Vector& x) const {
  return kappa() * spread(x) - mean_value(x);
}

// ---------------------------------------------------------------------------
// UncertaintySource

std::string to_string(UncertaintyKind kind) {
  return kind == UncertaintyKind::kAnalyticGaussian ? "analytic-gaussian" : "empirical-samples";
}

UncertaintyKind parse_uncertainty_kind(const std::string& text) {
  if (text == "analytic-gaussian") return UncertaintyKind::kAnalyticGaussian;
  if (text == "empirical-samples") return UncertaintyKind::kEmpiricalSamples;
  throw ConfigError("unknown uncertainty kind '" + text +
                    "' (expected analytic-gaussian or empirical-samples)");
}

UncertaintySource UncertaintySource::analytic(Vector mean, Matrix covariance, std::uint64_t seed) {
  const Index n = mean.size();
  if (covariance.rows() != n || covariance.cols() != n) {
    throw InvalidArgument("UncertaintySource::analytic: covariance shape mismatch");
  }
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw InvalidArgument("UncertaintySource::analytic: covariance must be positive definite");
  }
  UncertaintySource src;
  src.kind_ = UncertaintyKind::kAnalyticGaussian;
  src.dim_ = n;
  src.seed_ = seed;
  src.mean_ = std::move(mean);
  src.covariance_ = std::move(covariance);
  src.chol_ = llt.matrixL();
  return src;
}

UncertaintySource UncertaintySource::empirical(Matrix samples, std::uint64_t seed) {
  UncertaintySource src;
  src.kind_ = UncertaintyKind::kEmpiricalSamples;
  src.dim_ = samples.cols();
  src.seed_ = seed;
  src.samples_ = std::move(samples);
  return src;
}

Matrix UncertaintySource::draw(Index count, std::uint64_t seed) const {
  if (count <= 0) throw InvalidArgument("draw_uncertainty: count must be positive");
  std::mt19937_64 rng(seed);
  Matrix out(count, dim_);
  if (kind_ == UncertaintyKind::kAnalyticGaussian) {
    std::normal_distribution<double> normal;
    Vector z(dim_);
    for (Index i = 0; i < count; ++i) {
      for (Index j = 0; j < dim_; ++j) z[j] = normal(rng);
      out.row(i) = (mean_ + chol_ * z).transpose();
    }
    return out;
  }
  if (samples_.rows() == 0) {
    throw StateError("draw_uncertainty: empirical source has no stored samples");
  }
  std::uniform_int_distribution<Index> pick(0, samples_.rows() - 1);
  for (Index i = 0; i < count; ++i) out.row(i) = samples_.row(pick(rng));
  return out;
}

// ---------------------------------------------------------------------------
// CCPInstance

CCPInstance::CCPInstance(QuadraticObjective objective, LinearChanceConstraint constraint,
                         UncertaintySource uncertainty)
    : objective_(std::move(objective)),
      constraint_(std::move(constraint)),
      uncertainty_(std::move(uncertainty)) {
  const Index n = objective_.dim();
  if (constraint_.dim() != n || uncertainty_.dim() != n) {
    throw InvalidArgument("CCPInstance: dimension mismatch (objective " + std::to_string(n) +
                          ", constraint " + std::to_string(constraint_.dim()) +
                          ", uncertainty " + std::to_string(uncertainty_.dim()) + ")");
  }
}

namespace {

// FNV-1a over raw bytes.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void number(double v) { bytes(&v, sizeof v); }
  void integer(std::uint64_t v) { bytes(&v, sizeof v); }
  template <typename Derived>
  void block(const Eigen::MatrixBase<Derived>& m) {
    integer(static_cast<std::uint64_t>(m.rows()));
    integer(static_cast<std::uint64_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i) number(m(i, j));
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace

std::uint64_t CCPInstance::fingerprint() const {
  Fnv1a h;
  h.block(objective_.A());
  h.block(objective_.b());
  h.number(objective_.c0());
  h.block(constraint_.cbar());
  h.number(constraint_.d());
  h.number(constraint_.rho());
  h.block(constraint_.covariance());
  h.integer(static_cast<std::uint64_t>(uncertainty_.kind()));
  h.integer(uncertainty_.seed());
  if (uncertainty_.kind() == UncertaintyKind::kAnalyticGaussian) {
    h.block(uncertainty_.mean());
    h.block(uncertainty_.covariance());
  } else {
    h.block(uncertainty_.samples());
  }
  return h.digest();
}

std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fp;
  return os.str();
}

// ---------------------------------------------------------------------------
// Instance file

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> tokens(const std::string& s) {
  std::string cleaned = s;
  for (char& c : cleaned)
    if (c == ',' || c == ';') c = ' ';
  std::istringstream is(cleaned);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

double to_number(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("instance key '" + key + "': '" + text + "' is not a number");
  }
}

std::vector<double> numbers(const std::string& key, const std::vector<std::string>& toks,
                            std::size_t from) {
  std::vector<double> v;
  for (std::size_t i = from; i < toks.size(); ++i) v.push_back(to_number(key, toks[i]));
  return v;
}

Vector parse_vector(const std::string& key, const std::string& value, Index n) {
  const auto toks = tokens(value);
  if (toks.empty()) throw ConfigError("instance key '" + key + "' has no value");
  if (toks[0] == "ones" && toks.size() == 1) return Vector::Ones(n);
  if (toks[0] == "zeros" && toks.size() == 1) return Vector::Zero(n);
  if (toks[0] == "fill" && toks.size() == 2) return Vector::Constant(n, to_number(key, toks[1]));
  const auto v = numbers(key, toks, 0);
  if (static_cast<Index>(v.size()) != n) {
    throw ConfigError("instance key '" + key + "': expected " + std::to_string(n) +
                      " entries, got " + std::to_string(v.size()));
  }
  return Eigen::Map<const Vector>(v.data(), n);
}

Matrix parse_matrix(const std::string& key, const std::string& value, Index n) {
  const auto toks = tokens(value);
  if (toks.empty()) throw ConfigError("instance key '" + key + "' has no value");
  if (toks[0] == "identity" && toks.size() == 1) return Matrix::Identity(n, n);
  if (toks[0] == "zeros" && toks.size() == 1) return Matrix::Zero(n, n);
  if (toks[0] == "diag") {
    const auto v = numbers(key, toks, 1);
    if (static_cast<Index>(v.size()) != n) {
      throw ConfigError("instance key '" + key + "': diag expects " + std::to_string(n) +
                        " entries");
    }
    return Eigen::Map<const Vector>(v.data(), n).asDiagonal();
  }
  const auto v = numbers(key, toks, 0);
  if (static_cast<Index>(v.size()) != n * n) {
    throw ConfigError("instance key '" + key + "': expected " + std::to_string(n * n) +
                      " row-major entries, got " + std::to_string(v.size()));
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      v.data(), n, n);
}

}  // namespace

CCPInstance parse_instance(std::istream& in, const std::filesystem::path& base_dir) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("instance line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (kv.count(key)) throw ConfigError("instance key '" + key + "' given twice");
    kv[key] = trim(line.substr(eq + 1));
  }

  static const char* const kKnown[] = {"n",   "A",          "b",           "c0",      "cbar",
                                       "d",   "rho",        "covariance",  "uncertainty",
                                       "samples", "seed"};
  for (const auto& [key, _] : kv) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ConfigError("unknown instance key '" + key + "'");
    }
  }
  auto require = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("instance is missing key '") + key + "'");
    return it->second;
  };

  const double n_real = to_number("n", require("n"));
  if (n_real < 1 || n_real != std::floor(n_real)) throw ConfigError("instance key 'n' must be a positive integer");
  const Index n = static_cast<Index>(n_real);

  Matrix A = kv.count("A") ? parse_matrix("A", kv["A"], n) : Matrix::Identity(n, n);
  Vector b = parse_vector("b", require("b"), n);
  const double c0 = kv.count("c0") ? to_number("c0", kv["c0"]) : 0.0;
  Vector cbar = parse_vector("cbar", require("cbar"), n);
  const double d = to_number("d", require("d"));
  const double rho = to_number("rho", require("rho"));
  Matrix cov = kv.count("covariance") ? parse_matrix("covariance", kv["covariance"], n)
                                      : Matrix::Identity(n, n);
  const std::uint64_t seed =
      kv.count("seed") ? static_cast<std::uint64_t>(to_number("seed", kv["seed"])) : 0;
  const UncertaintyKind kind = kv.count("uncertainty") ? parse_uncertainty_kind(kv["uncertainty"])
                                                       : UncertaintyKind::kAnalyticGaussian;

  try {
    QuadraticObjective objective(std::move(A), std::move(b), c0);
    LinearChanceConstraint constraint(cbar, d, rho, cov);
    if (kind == UncertaintyKind::kAnalyticGaussian) {
      return CCPInstance(std::move(objective), std::move(constraint),
                         UncertaintySource::analytic(cbar, cov, seed));
    }
    std::filesystem::path samples = require("samples");
    if (samples.is_relative() && !base_dir.empty()) samples = base_dir / samples;
    return CCPInstance(std::move(objective), std::move(constraint),
                       UncertaintySource::empirical(read_matrix_csv(samples), seed));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid instance: ") + e.what());
  }
}

CCPInstance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open instance file " + path.string());
  return parse_instance(in, path.parent_path());
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV " + path.string());
  std::vector<double> values;
  Index cols = -1;
  Index rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto toks = tokens(line);
    if (cols < 0) cols = static_cast<Index>(toks.size());
    if (static_cast<Index>(toks.size()) != cols) {
      throw IoError(path.string() + ": row " + std::to_string(rows + 1) + " has " +
                    std::to_string(toks.size()) + " columns, expected " + std::to_string(cols));
    }
    for (const auto& t : toks) values.push_back(to_number(path.filename().string(), t));
    ++rows;
  }
  if (rows == 0) return Matrix(0, 0);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, cols);
}

}  // namespace ggdopt
