/* Copyright 2026 The dfmerge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Gaussian-process surrogate and sequential Bayesian optimization over a box.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dfmerge/errors.hpp"

namespace dfmerge {

enum class KernelFamily { kMatern52, kRbf };

const char* to_string(KernelFamily family);
KernelFamily parse_kernel_family(const std::string& name);

/// Stationary isotropic covariance s^2 * r(|a - b| / length_scale).
struct Kernel {
  KernelFamily family = KernelFamily::kMatern52;
  double length_scale = 0.25;
  double output_scale = 1.0;

  // r in [0, 1], r(0) = 1.
  double correlation(std::span<const double> a, std::span<const double> b) const;
  double operator()(std::span<const double> a, std::span<const double> b) const {
    return output_scale * output_scale * correlation(a, b);
  }
  void validate() const;
};

struct GpOptions {
  bool fit_hyperparameters = true;
  double jitter = 1e-6;      // relative nugget: K = s^2 (R + jitter I)
  double max_jitter = 1e-2;  // jitter doubles on failed factorization up to this
  double min_length_scale = 1e-2;
  double max_length_scale = 10.0;
  double min_output_scale = 1e-8;
  double max_output_scale = 1e4;
  std::size_t restarts = 6;  // log-spaced starting length scales
};

struct Posterior {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Fitted GP: observations, hyperparameters, constant prior mean (the mean of
/// the observed values) and the Cholesky factor of s^2 (R + jitter I).
class GPState {
 public:
  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(points_.cols()); }
  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& values() const { return values_; }
  const Kernel& kernel() const { return kernel_; }
  double jitter() const { return jitter_; }
  double prior_mean() const { return prior_mean_; }
  const Eigen::MatrixXd& chol() const { return chol_; }

  /// s^2 (R + jitter I), the matrix the Cholesky factor reconstructs.
  Eigen::MatrixXd covariance_matrix() const;
  double log_marginal_likelihood() const;
  double best_value() const { return values_.maxCoeff(); }

  /// Posterior mean and standard deviation. A query within 1e-10 of an
  /// observation returns that observation exactly with zero spread, since the
  /// nugget is numerical regularization and the model is noiseless.
  Posterior posterior(std::span<const double> query) const;

 private:
  friend GPState gp_fit(const std::vector<std::vector<double>>&, std::span<const double>, const Kernel&,
                        const GpOptions&);
  friend GPState gp_build(const Eigen::MatrixXd&, const Eigen::VectorXd&, const Kernel&, double, double);

  Eigen::MatrixXd points_;
  Eigen::VectorXd values_;
  Kernel kernel_;
  double jitter_ = 0.0;
  double prior_mean_ = 0.0;
  Eigen::MatrixXd chol_;
  Eigen::VectorXd alpha_;  // K^-1 (y - mu0)
};

/// Fit with duplicate rows (closer than 1e-10) merged by averaging their values.
/// Hyperparameters maximize the log marginal likelihood: a multi-start golden
/// search over log length_scale, with the output scale solved in closed form
/// at each length scale. Throws NumericalError when the kernel matrix stays
/// indefinite after jitter escalation.
GPState gp_fit(const std::vector<std::vector<double>>& points, std::span<const double> values,
               const Kernel& kernel_init, const GpOptions& options = {});

/// Factorize with fixed hyperparameters; rows must already be distinct.
GPState gp_build(const Eigen::MatrixXd& points, const Eigen::VectorXd& values, const Kernel& kernel, double jitter,
                 double max_jitter);

enum class AcquisitionKind { kEI, kUCB };

const char* to_string(AcquisitionKind kind);
AcquisitionKind parse_acquisition(const std::string& name);

inline constexpr double kDefaultKappa = 2.576;

struct Acquisition {
  AcquisitionKind kind = AcquisitionKind::kEI;
  double best_so_far = 0.0;     // EI incumbent f*
  double kappa = kDefaultKappa;  // UCB: mu + kappa * sigma, kappa = sqrt(beta)

  static Acquisition ei(double best) { return {AcquisitionKind::kEI, best, kDefaultKappa}; }
  static Acquisition ucb(double kappa) { return {AcquisitionKind::kUCB, 0.0, kappa}; }
};

/// Closed-form expected improvement sigma * (z Phi(z) + phi(z)), z = (mu - f*)/sigma,
/// falling back to max(mu - f*, 0) when sigma < 1e-12; or UCB mu + kappa sigma.
double acquisition_value(const GPState& state, std::span<const double> query, const Acquisition& acq);

struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  static Box unit(std::size_t dims) { return {std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)}; }
  std::size_t dims() const { return lower.size(); }
};

struct ProposeOptions {
  std::size_t candidates = 4096;
  std::size_t refine_starts = 8;
  std::size_t refine_sweeps = 2;
  std::size_t golden_steps = 40;
};

/// Low-discrepancy points in `box`: a Halton sequence with a seeded
/// Cranley-Patterson rotation.
std::vector<std::vector<double>> candidate_set(const Box& box, std::size_t count, std::uint64_t seed);

/// Maximize the acquisition over `box`: score the candidate set, then refine
/// the best `refine_starts` by coordinate-wise golden-section search. A
/// refinement replaces the incumbent only on strict improvement, so a flat
/// acquisition returns the first candidate.
std::vector<double> propose_next(const GPState& state, const Acquisition& acq, const Box& box, std::uint64_t seed,
                                 const ProposeOptions& options = {});

struct CoefficientPoint {
  std::vector<double> lambdas;
  double value = 0.0;
};

enum class Phase { kInit, kBo };

struct TrajectoryRecord {
  std::size_t iteration = 0;
  std::vector<double> lambdas;
  double objective = 0.0;
  double best_so_far = 0.0;
  Phase phase = Phase::kInit;
};

struct BOConfig {
  std::size_t dims = 1;
  std::size_t init_points = 10;
  std::size_t iterations = 50;
  std::uint64_t seed = 0;
  AcquisitionKind acquisition = AcquisitionKind::kEI;
  double kappa = kDefaultKappa;
  KernelFamily kernel = KernelFamily::kMatern52;
  GpOptions gp;
  ProposeOptions propose;

  void validate() const;
};

struct BOResult {
  CoefficientPoint best;
  std::vector<TrajectoryRecord> trajectory;
};

using Objective = std::function<double(std::span<const double>)>;

/// Raised when the objective returns a non-finite value.
class NonFiniteObjectiveError : public NumericalError {
 public:
  NonFiniteObjectiveError(std::vector<double> lambdas, const std::string& what)
      : NumericalError(what), lambdas_(std::move(lambdas)) {}
  const std::vector<double>& lambdas() const { return lambdas_; }

 private:
  std::vector<double> lambdas_;
};

/// Maximize `objective` over [0, 1]^dims: init_points uniform draws, then
/// `iterations` GP-guided proposals with hyperparameters refit each step.
/// Proposal t uses a seed derived from (cfg.seed, t), so a shorter run is a
/// prefix of a longer one.
BOResult optimize(const Objective& objective, const BOConfig& cfg);

/// Running maximum of the objective over the trajectory.
std::vector<double> best_so_far(std::span<const TrajectoryRecord> trajectory);

/// One JSON object per line:
/// {"iteration":i,"lambdas":[...],"objective":v,"best_so_far":b,"phase":"init"|"bo"}
void write_trajectory_jsonl(std::ostream& out, std::span<const TrajectoryRecord> trajectory);
void write_trajectory_jsonl(const std::filesystem::path& path, std::span<const TrajectoryRecord> trajectory);
std::vector<TrajectoryRecord> read_trajectory_jsonl(const std::filesystem::path& path);

}  // namespace dfmerge
