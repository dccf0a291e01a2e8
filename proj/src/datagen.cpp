#include "ggdopt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ggdopt/errors.hpp"
#include "ggdopt/normal.hpp"
#include "ggdopt/parallel.hpp"

namespace ggdopt {

RestrictionGrid::RestrictionGrid(std::vector<double> z_values) : z_(std::move(z_values)) {
  if (z_.empty()) throw InvalidArgument("RestrictionGrid: empty grid");
  for (std::size_t i = 0; i < z_.size(); ++i) {
    if (!(z_[i] >= 0.0) || !std::isfinite(z_[i])) {
      throw InvalidArgument("RestrictionGrid: z values must be finite and >= 0");
    }
    if (i > 0 && z_[i] < z_[i - 1]) throw InvalidArgument("RestrictionGrid: z values must ascend");
  }
}

RestrictionGrid RestrictionGrid::linear(double lo, double hi, std::size_t count) {
  if (count == 0) throw InvalidArgument("RestrictionGrid::linear: count must be positive");
  if (hi < lo) throw InvalidArgument("RestrictionGrid::linear: hi < lo");
  std::vector<double> z(count);
  if (count == 1) {
    z[0] = lo;
  } else {
    const double step = (hi - lo) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) z[i] = lo + step * static_cast<double>(i);
    z.back() = hi;
  }
  return RestrictionGrid(std::move(z));
}

RestrictedSolution solve_restricted(const CCPInstance& instance, const Vector& hbar, double z) {
  const auto& obj = instance.objective();
  const double d = instance.constraint().d();
  if (hbar.size() != instance.dim()) {
    throw InvalidArgument("solve_restricted: hbar has dimension " + std::to_string(hbar.size()) +
                          ", instance has " + std::to_string(instance.dim()));
  }
  Eigen::LLT<Matrix> llt(obj.A());
  if (llt.info() != Eigen::Success) {
    throw IllPosedError("solve_restricted: objective Hessian is not positive definite");
  }
  const Vector unconstrained_dir = llt.solve(obj.b());  // A^{-1} b
  RestrictedSolution sol;
  if (hbar.squaredNorm() == 0.0) {
    if (z > d) {
      throw InfeasibleError("solve_restricted: hbar = 0 and z = " + std::to_string(z) +
                            " exceeds d = " + std::to_string(d));
    }
    sol.x = -unconstrained_dir;
    return sol;
  }
  const Vector hdir = llt.solve(hbar);  // A^{-1} hbar
  const double curvature = hbar.dot(hdir);
  sol.multiplier = std::max(0.0, (z - d + hbar.dot(unconstrained_dir)) / curvature);
  sol.x = -unconstrained_dir + sol.multiplier * hdir;
  return sol;
}

double empirical_rho(const CCPInstance& instance, const Vector& x, const Matrix& draws) {
  if (draws.rows() < 1) throw InvalidArgument("empirical_rho: need at least one draw");
  if (draws.cols() != x.size() || x.size() != instance.dim()) {
    throw InvalidArgument("empirical_rho: dimension mismatch");
  }
  const Vector g = (draws * x).array() + instance.constraint().d();
  const Index satisfied = (g.array() >= 0.0).count();
  const Index L = draws.rows();
  return static_cast<double>(L - satisfied) / static_cast<double>(L);
}

FeasibleDataset generate_dataset(const CCPInstance& instance, const RestrictionGrid& grid,
                                 Index sample_count, std::uint64_t seed) {
  if (sample_count < 1) throw InvalidArgument("generate_dataset: sample count must be positive");
  const Matrix draws = instance.uncertainty().draw(sample_count, seed);
  const Vector hbar = draws.colwise().mean().transpose();

  struct Slot {
    std::optional<Vector> x;
    double rho = 0.0;
    std::string error;
  };
  std::vector<Slot> slots(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    try {
      Vector x = solve_restricted(instance, hbar, grid[i]).x;
      slots[i].rho = empirical_rho(instance, x, draws);
      slots[i].x = std::move(x);
    } catch (const NumericalError& e) {
      slots[i].error = e.what();
    }
  });

  FeasibleDataset data;
  data.fingerprint = instance.fingerprint();
  data.sample_count = sample_count;
  data.seed = seed;
  const auto kept = static_cast<Index>(
      std::count_if(slots.begin(), slots.end(), [](const Slot& s) { return s.x.has_value(); }));
  data.points.resize(kept, instance.dim());
  data.risks.resize(kept);
  Index row = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].x) {
      data.skipped.push_back({i, grid[i], slots[i].error});
      continue;
    }
    data.points.row(row) = slots[i].x->transpose();
    data.risks[row] = slots[i].rho;
    data.z.push_back(grid[i]);
    ++row;
  }
  return data;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

}  // namespace

void write_dataset(const FeasibleDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset " + path.string());
  out << std::setprecision(17);
  for (Index j = 0; j < data.dim(); ++j) out << "x_" << (j + 1) << ',';
  out << "rho\n";
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.dim(); ++j) out << data.points(i, j) << ',';
    out << data.risks[i] << '\n';
  }
  if (!out) throw IoError("failed writing dataset " + path.string());

  nlohmann::json meta;
  meta["n"] = data.dim();
  meta["N"] = data.size();
  meta["L"] = data.sample_count;
  meta["seed"] = data.seed;
  meta["fingerprint"] = fingerprint_hex(data.fingerprint);
  meta["z"] = data.z;
  auto skipped = nlohmann::json::array();
  for (const auto& s : data.skipped) {
    skipped.push_back({{"grid_index", s.grid_index}, {"z", s.z}, {"reason", s.reason}});
  }
  meta["skipped"] = skipped;
  std::ofstream side(sidecar(path));
  if (!side) throw IoError("cannot write dataset metadata " + sidecar(path).string());
  side << meta.dump(2) << '\n';
}

FeasibleDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw IoError("dataset " + path.string() + " is empty");
  const auto cols = static_cast<Index>(std::count(header.begin(), header.end(), ',') + 1);
  if (cols < 2) throw IoError("dataset " + path.string() + ": header needs x columns and rho");

  std::vector<double> values;
  Index rows = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream is(line);
    Index c = 0;
    for (std::string cell; std::getline(is, cell, ',');) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("dataset " + path.string() + ": bad number '" + cell + "'");
      }
      ++c;
    }
    if (c != cols) {
      throw IoError("dataset " + path.string() + ": row " + std::to_string(rows + 1) +
                    " has " + std::to_string(c) + " columns, expected " + std::to_string(cols));
    }
    ++rows;
  }
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      table(values.data(), rows, cols);
  FeasibleDataset data;
  data.points = table.leftCols(cols - 1);
  data.risks = table.col(cols - 1);

  std::ifstream side(sidecar(path));
  if (side) {
    nlohmann::json meta;
    try {
      side >> meta;
      data.sample_count = meta.at("L").get<Index>();
      data.seed = meta.at("seed").get<std::uint64_t>();
      data.fingerprint = std::stoull(meta.at("fingerprint").get<std::string>(), nullptr, 16);
      data.z = meta.value("z", std::vector<double>{});
      for (const auto& s : meta.value("skipped", nlohmann::json::array())) {
        data.skipped.push_back({s.at("grid_index").get<std::size_t>(), s.at("z").get<double>(),
                                s.at("reason").get<std::string>()});
      }
      if (meta.at("n").get<Index>() != data.dim() || meta.at("N").get<Index>() != data.size()) {
        throw IoError("dataset metadata disagrees with " + path.string());
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad dataset metadata " + sidecar(path).string() + ": " + e.what());
    }
  }
  return data;
}

double chebyshev_bound(double z_min, double lipschitz, double variance, double mean_bias) {
  if (!(lipschitz > 0.0)) throw InvalidArgument("chebyshev_bound: lipschitz must be positive");
  const double gap = z_min / lipschitz - mean_bias;
  if (!(gap > 0.0)) return 0.0;
  return std::max(0.0, 1.0 - variance / (gap * gap));
}

double quadform_probability_gaussian(const Matrix& Q, const Vector& r, double s) {
  if (Q.rows() != Q.cols() || Q.rows() != r.size()) {
    throw InvalidArgument("quadform_probability_gaussian: shape mismatch");
  }
  const double mu = 0.5 * Q.trace() + s;
  const double var = 0.5 * Q.squaredNorm() + r.squaredNorm();
  if (var == 0.0) return mu >= 0.0 ? 1.0 : 0.0;
  return 1.0 - normal_cdf(-mu / std::sqrt(var));
}

double quadform_probability_mc(const Matrix& Q, const Vector& r, double s, Index draws,
                               std::uint64_t seed) {
  if (draws < 1) throw InvalidArgument("quadform_probability_mc: draws must be positive");
  if (Q.rows() != Q.cols() || Q.rows() != r.size()) {
    throw InvalidArgument("quadform_probability_mc: shape mismatch");
  }
  const Index n = r.size();
  const bool diagonal = Q.isDiagonal(0.0);
  const Vector qdiag = Q.diagonal();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector u(n);
  Index hits = 0;
  for (Index k = 0; k < draws; ++k) {
    for (Index j = 0; j < n; ++j) u[j] = normal(rng);
    const double quad = diagonal ? u.dot(qdiag.cwiseProduct(u)) : u.dot(Q * u);
    if (0.5 * quad + r.dot(u) + s >= 0.0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(draws);
}

}  // namespace ggdopt
