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

#include "dfmerge/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include "dfmerge/rng.hpp"
#include "json.hpp"

namespace dfmerge {

const char* to_string(KernelFamily family) { return family == KernelFamily::kRbf ? "rbf" : "matern52"; }

KernelFamily parse_kernel_family(const std::string& name) {
  if (name == "matern52" || name == "matern") return KernelFamily::kMatern52;
  if (name == "rbf") return KernelFamily::kRbf;
  throw ConfigError("unknown kernel '" + name + "' (expected matern52 or rbf)");
}

const char* to_string(AcquisitionKind kind) { return kind == AcquisitionKind::kUCB ? "ucb" : "ei"; }

AcquisitionKind parse_acquisition(const std::string& name) {
  if (name == "ei") return AcquisitionKind::kEI;
  if (name == "ucb") return AcquisitionKind::kUCB;
  throw ConfigError("unknown acquisition '" + name + "' (expected ei or ucb)");
}

double Kernel::correlation(std::span<const double> a, std::span<const double> b) const {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    sq += diff * diff;
  }
  if (family == KernelFamily::kRbf) return std::exp(-0.5 * sq / (length_scale * length_scale));
  const double r = std::sqrt(5.0 * sq) / length_scale;
  return (1.0 + r + r * r / 3.0) * std::exp(-r);
}

void Kernel::validate() const {
  if (!(length_scale > 0.0) || !std::isfinite(length_scale)) throw ConfigError("kernel length_scale must be > 0");
  if (!(output_scale > 0.0) || !std::isfinite(output_scale)) throw ConfigError("kernel output_scale must be > 0");
}

namespace {

std::span<const double> row_span(const Eigen::MatrixXd& m, Eigen::Index i, std::vector<double>& scratch) {
  scratch.resize(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) scratch[static_cast<std::size_t>(j)] = m(i, j);
  return scratch;
}

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& x, const Kernel& kernel) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd r(n, n);
  std::vector<double> a, b;
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      r(i, j) = r(j, i) = kernel.correlation(row_span(x, i, a), row_span(x, j, b));
    }
  }
  return r;
}

// Cholesky of R + jitter I with jitter doubling on failure.
bool factor_with_jitter(const Eigen::MatrixXd& r, double& jitter, double max_jitter, Eigen::MatrixXd& lower) {
  const Eigen::Index n = r.rows();
  for (;;) {
    Eigen::MatrixXd a = r;
    a.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
      lower = llt.matrixL();
      bool ok = true;
      for (Eigen::Index i = 0; i < n; ++i) ok = ok && lower(i, i) > 0.0 && std::isfinite(lower(i, i));
      if (ok) return true;
    }
    if (jitter * 2.0 > max_jitter) return false;
    jitter *= 2.0;
  }
}

struct LengthScaleFit {
  double lml = -std::numeric_limits<double>::infinity();
  double output_scale = 1.0;
  double jitter = 0.0;
};

LengthScaleFit profile_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& centered, Kernel kernel,
                                  const GpOptions& options) {
  LengthScaleFit fit;
  const Eigen::MatrixXd r = correlation_matrix(x, kernel);
  double jitter = options.jitter;
  Eigen::MatrixXd lower;
  if (!factor_with_jitter(r, jitter, options.max_jitter, lower)) return fit;
  const Eigen::VectorXd w = lower.triangularView<Eigen::Lower>().solve(centered);
  const double n = static_cast<double>(centered.size());
  const double q = w.squaredNorm();
  const double s2 = std::clamp(q / n, options.min_output_scale * options.min_output_scale,
                               options.max_output_scale * options.max_output_scale);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < lower.rows(); ++i) logdet += std::log(lower(i, i));
  fit.lml = -0.5 * q / s2 - 0.5 * n * std::log(s2) - logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
  fit.output_scale = std::sqrt(s2);
  fit.jitter = jitter;
  return fit;
}

constexpr double kGolden = 0.6180339887498949;

// Maximizes f on [lo, hi]; returns the best evaluated abscissa and value.
template <typename F>
std::pair<double, double> golden_max(F&& f, double lo, double hi, std::size_t steps) {
  double a = lo, b = hi;
  double c = b - kGolden * (b - a);
  double d = a + kGolden * (b - a);
  double fc = f(c), fd = f(d);
  double best_x = fc >= fd ? c : d;
  double best_f = std::max(fc, fd);
  for (std::size_t i = 0; i < steps; ++i) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = f(c);
      if (fc > best_f) best_f = fc, best_x = c;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = f(d);
      if (fd > best_f) best_f = fd, best_x = d;
    }
  }
  return {best_x, best_f};
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

GPState gp_build(const Eigen::MatrixXd& points, const Eigen::VectorXd& values, const Kernel& kernel, double jitter,
                 double max_jitter) {
  kernel.validate();
  if (points.rows() == 0) throw ConfigError("gp_fit needs at least one observation");
  if (points.rows() != values.size()) throw ConfigError("gp_fit: points and values differ in length");
  GPState s;
  s.points_ = points;
  s.values_ = values;
  s.kernel_ = kernel;
  s.prior_mean_ = values.mean();
  const Eigen::MatrixXd r = correlation_matrix(points, kernel);
  double j = jitter;
  Eigen::MatrixXd lower;
  if (!factor_with_jitter(r, j, max_jitter, lower)) {
    throw NumericalError("GP kernel matrix is not positive definite even with jitter " + std::to_string(max_jitter));
  }
  s.jitter_ = j;
  s.chol_ = kernel.output_scale * lower;
  const Eigen::VectorXd centered = values.array() - s.prior_mean_;
  s.alpha_ = s.chol_.triangularView<Eigen::Lower>().transpose().solve(
      s.chol_.triangularView<Eigen::Lower>().solve(centered));
  return s;
}

GPState gp_fit(const std::vector<std::vector<double>>& points, std::span<const double> values,
               const Kernel& kernel_init, const GpOptions& options) {
  if (points.empty()) throw ConfigError("gp_fit needs at least one observation");
  if (points.size() != values.size()) throw ConfigError("gp_fit: points and values differ in length");
  const std::size_t dims = points.front().size();

  // Merge near-duplicate rows.
  std::vector<std::vector<double>> unique;
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != dims) throw ConfigError("gp_fit: inconsistent point dimensions");
    if (!std::isfinite(values[i])) throw NumericalError("gp_fit: non-finite observation");
    std::size_t match = unique.size();
    for (std::size_t u = 0; u < unique.size(); ++u) {
      double sq = 0.0;
      for (std::size_t d = 0; d < dims; ++d) sq += (unique[u][d] - points[i][d]) * (unique[u][d] - points[i][d]);
      if (std::sqrt(sq) < 1e-10) {
        match = u;
        break;
      }
    }
    if (match == unique.size()) {
      unique.push_back(points[i]);
      sums.push_back(0.0);
      counts.push_back(0);
    }
    sums[match] += values[i];
    ++counts[match];
  }
  const auto n = static_cast<Eigen::Index>(unique.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(dims));
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) x(i, static_cast<Eigen::Index>(d)) = unique[static_cast<std::size_t>(i)][d];
    y(i) = sums[static_cast<std::size_t>(i)] / static_cast<double>(counts[static_cast<std::size_t>(i)]);
  }

  Kernel kernel = kernel_init;
  double jitter = options.jitter;
  if (options.fit_hyperparameters) {
    const Eigen::VectorXd centered = y.array() - y.mean();
    const double log_lo = std::log(options.min_length_scale);
    const double log_hi = std::log(options.max_length_scale);
    const std::size_t starts = std::max<std::size_t>(options.restarts, 1);
    const double width = (log_hi - log_lo) / static_cast<double>(starts);
    LengthScaleFit best;
    double best_log_ell = std::log(std::clamp(kernel.length_scale, options.min_length_scale, options.max_length_scale));
    auto evaluate = [&](double log_ell) {
      Kernel k = kernel;
      k.length_scale = std::exp(log_ell);
      return profile_likelihood(x, centered, k, options);
    };
    best = evaluate(best_log_ell);
    for (std::size_t sidx = 0; sidx < starts; ++sidx) {
      const double lo = log_lo + width * static_cast<double>(sidx);
      const auto [arg, lml] = golden_max([&](double t) { return evaluate(t).lml; }, lo, lo + width, 20);
      if (lml > best.lml) {
        best = evaluate(arg);
        best_log_ell = arg;
      }
    }
    if (!std::isfinite(best.lml)) {
      throw NumericalError("GP kernel matrix is not positive definite for any length scale");
    }
    kernel.length_scale = std::exp(best_log_ell);
    kernel.output_scale = best.output_scale;
    jitter = best.jitter;
  }
  return gp_build(x, y, kernel, jitter, options.max_jitter);
}

Eigen::MatrixXd GPState::covariance_matrix() const {
  Eigen::MatrixXd k = correlation_matrix(points_, kernel_);
  k.diagonal().array() += jitter_;
  return kernel_.output_scale * kernel_.output_scale * k;
}

double GPState::log_marginal_likelihood() const {
  const Eigen::VectorXd centered = values_.array() - prior_mean_;
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < chol_.rows(); ++i) logdet += std::log(chol_(i, i));
  const double n = static_cast<double>(values_.size());
  return -0.5 * centered.dot(alpha_) - logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

Posterior GPState::posterior(std::span<const double> query) const {
  if (query.size() != dims()) throw ConfigError("posterior query has the wrong dimension");
  const Eigen::Index n = points_.rows();
  Eigen::VectorXd kstar(n);
  std::vector<double> row;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = row_span(points_, i, row);
    double sq = 0.0;
    for (std::size_t d = 0; d < query.size(); ++d) sq += (p[d] - query[d]) * (p[d] - query[d]);
    if (std::sqrt(sq) < 1e-10) return {values_(i), 0.0};
    kstar(i) = kernel_(p, query);
  }
  const double mean = prior_mean_ + kstar.dot(alpha_);
  const Eigen::VectorXd v = chol_.triangularView<Eigen::Lower>().solve(kstar);
  const double var = kernel_.output_scale * kernel_.output_scale - v.squaredNorm();
  return {mean, std::sqrt(std::max(var, 0.0))};
}

double acquisition_value(const GPState& state, std::span<const double> query, const Acquisition& acq) {
  const Posterior post = state.posterior(query);
  if (acq.kind == AcquisitionKind::kUCB) return post.mean + acq.kappa * post.stddev;
  const double gain = post.mean - acq.best_so_far;
  if (post.stddev < 1e-12) return std::max(gain, 0.0);
  const double z = gain / post.stddev;
  return std::max(post.stddev * (z * normal_cdf(z) + normal_pdf(z)), 0.0);
}

std::vector<std::vector<double>> candidate_set(const Box& box, std::size_t count, std::uint64_t seed) {
  static constexpr unsigned kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                                         59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131};
  const std::size_t dims = box.dims();
  if (dims > std::size(kPrimes)) throw ConfigError("candidate_set supports at most 32 dimensions");
  Rng rng(derive_seed(seed, "candidates/shift"));
  std::vector<double> shift(dims);
  for (double& s : shift) s = rng.uniform();
  std::vector<std::vector<double>> out(count, std::vector<double>(dims));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      const unsigned base = kPrimes[d];
      double inv = 1.0 / base, f = inv, h = 0.0;
      for (std::size_t k = i + 1; k > 0; k /= base) {
        h += f * static_cast<double>(k % base);
        f *= inv;
      }
      double u = h + shift[d];
      u -= std::floor(u);
      out[i][d] = box.lower[d] + u * (box.upper[d] - box.lower[d]);
    }
  }
  return out;
}

std::vector<double> propose_next(const GPState& state, const Acquisition& acq, const Box& box, std::uint64_t seed,
                                 const ProposeOptions& options) {
  if (box.dims() != state.dims()) throw ConfigError("proposal box dimension does not match the GP");
  const auto cands = candidate_set(box, std::max<std::size_t>(options.candidates, 1), seed);
  std::vector<double> scores(cands.size());
  for (std::size_t c = 0; c < cands.size(); ++c) scores[c] = acquisition_value(state, cands[c], acq);
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<double> best = cands[order[0]];
  double best_score = scores[order[0]];
  const std::size_t starts = std::min(options.refine_starts, cands.size());
  for (std::size_t r = 0; r < starts; ++r) {
    std::vector<double> x = cands[order[r]];
    double fx = scores[order[r]];
    for (std::size_t sweep = 0; sweep < options.refine_sweeps; ++sweep) {
      for (std::size_t d = 0; d < x.size(); ++d) {
        std::vector<double> probe = x;
        const auto [t, ft] = golden_max(
            [&](double v) {
              probe[d] = v;
              return acquisition_value(state, probe, acq);
            },
            box.lower[d], box.upper[d], options.golden_steps);
        if (ft > fx) {
          x[d] = t;
          fx = ft;
        }
      }
    }
    if (fx > best_score) {
      best = x;
      best_score = fx;
    }
  }
  return best;
}

void BOConfig::validate() const {
  if (dims == 0) throw ConfigError("optimizer needs at least one coefficient");
  if (init_points == 0) throw ConfigError("init_points must be >= 1");
  if (acquisition == AcquisitionKind::kUCB && !(kappa > 0.0)) throw ConfigError("UCB kappa must be > 0");
}

BOResult optimize(const Objective& objective, const BOConfig& cfg) {
  cfg.validate();
  const Box box = Box::unit(cfg.dims);
  BOResult result;
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  double running = -std::numeric_limits<double>::infinity();

  auto record = [&](std::vector<double> lambdas, Phase phase) {
    const double value = objective(lambdas);
    if (!std::isfinite(value)) {
      std::string where = "[";
      for (std::size_t i = 0; i < lambdas.size(); ++i) where += (i ? ", " : "") + std::to_string(lambdas[i]);
      throw NonFiniteObjectiveError(lambdas, "objective returned a non-finite value at lambda = " + where + "]");
    }
    if (value > running) {
      running = value;
      result.best = {lambdas, value};
    }
    result.trajectory.push_back({result.trajectory.size(), lambdas, value, running, phase});
    xs.push_back(std::move(lambdas));
    ys.push_back(value);
  };

  Rng init_rng(derive_seed(cfg.seed, "bo-init"));
  for (std::size_t i = 0; i < cfg.init_points; ++i) {
    std::vector<double> lambdas(cfg.dims);
    for (double& v : lambdas) v = init_rng.uniform();
    record(std::move(lambdas), Phase::kInit);
  }
  Kernel kernel{cfg.kernel, 0.25, 1.0};
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const GPState state = gp_fit(xs, ys, kernel, cfg.gp);
    const Acquisition acq = cfg.acquisition == AcquisitionKind::kEI ? Acquisition::ei(state.best_value())
                                                                    : Acquisition::ucb(cfg.kappa);
    record(propose_next(state, acq, box, derive_seed(cfg.seed, "bo-propose/" + std::to_string(t)), cfg.propose),
           Phase::kBo);
  }
  return result;
}

std::vector<double> best_so_far(std::span<const TrajectoryRecord> trajectory) {
  std::vector<double> out;
  double running = -std::numeric_limits<double>::infinity();
  for (const auto& r : trajectory) {
    running = std::max(running, r.objective);
    out.push_back(running);
  }
  return out;
}

void write_trajectory_jsonl(std::ostream& out, std::span<const TrajectoryRecord> trajectory) {
  for (const auto& r : trajectory) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["lambdas"] = r.lambdas;
    j["objective"] = r.objective;
    j["best_so_far"] = r.best_so_far;
    j["phase"] = r.phase == Phase::kInit ? "init" : "bo";
    out << j.dump() << '\n';
  }
}

void write_trajectory_jsonl(const std::filesystem::path& path, std::span<const TrajectoryRecord> trajectory) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_trajectory_jsonl(out, trajectory);
}

std::vector<TrajectoryRecord> read_trajectory_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<TrajectoryRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrajectoryRecord r;
      r.iteration = j.at("iteration").get<std::size_t>();
      r.lambdas = j.at("lambdas").get<std::vector<double>>();
      r.objective = j.at("objective").get<double>();
      r.best_so_far = j.at("best_so_far").get<double>();
      const auto phase = j.at("phase").get<std::string>();
      if (phase != "init" && phase != "bo") throw FormatError(path.string() + ": unknown phase '" + phase + "'");
      r.phase = phase == "init" ? Phase::kInit : Phase::kBo;
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": malformed trajectory line: " + e.what());
    }
  }
  return out;
}

}  // namespace dfmerge
