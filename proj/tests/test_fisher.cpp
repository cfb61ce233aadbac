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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <Eigen/Dense>

#include "doctest.h"
#include "dfmerge/errors.hpp"
#include "dfmerge/fisher.hpp"
#include "dfmerge/rng.hpp"
#include "support.hpp"

using namespace dfmerge;

namespace {

std::vector<double> random_inputs(std::size_t rows, std::size_t dim, Rng& rng) {
  std::vector<double> x(rows * dim);
  for (double& v : x) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("two-class logistic Fisher in closed form") {
  // For a linear 2-class model the expected squared bias gradient is p0 * p1
  // and the weight entry (c, k) is p0 * p1 * x_k^2, averaged over inputs.
  Rng rng(1);
  const ClassifierSpec spec{3, 0, 2};
  const std::vector<double> x = random_inputs(10, 3, rng);
  const InputBatch batch{x, 3};

  SUBCASE("zero output layer") {
    const FisherDiagonal f = empirical_fisher_diag(ParamVector::zeros(spec.layout()), spec, batch);
    const auto& bias = spec.layout().segment("out.bias");
    CHECK(f[bias.offset] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(f[bias.offset + 1] == doctest::Approx(0.25).epsilon(1e-15));
    for (std::size_t k = 0; k < 3; ++k) {
      double mean_sq = 0.0;
      for (std::size_t j = 0; j < 10; ++j) mean_sq += x[j * 3 + k] * x[j * 3 + k] / 10.0;
      CHECK(f[k] == doctest::Approx(0.25 * mean_sq).epsilon(1e-13));
      CHECK(f[3 + k] == doctest::Approx(0.25 * mean_sq).epsilon(1e-13));
    }
  }
  SUBCASE("random parameters") {
    const ParamVector params = testing::random_vector(spec.layout(), rng);
    const FisherDiagonal f = empirical_fisher_diag(params, spec, batch);
    double fb = 0.0;
    std::vector<double> fw(3, 0.0);
    for (std::size_t j = 0; j < 10; ++j) {
      double z[2];
      for (std::size_t c = 0; c < 2; ++c) {
        z[c] = params[6 + c];
        for (std::size_t k = 0; k < 3; ++k) z[c] += params[c * 3 + k] * x[j * 3 + k];
      }
      const double p0 = 1.0 / (1.0 + std::exp(z[1] - z[0]));
      const double v = p0 * (1.0 - p0);
      fb += v / 10.0;
      for (std::size_t k = 0; k < 3; ++k) fw[k] += v * x[j * 3 + k] * x[j * 3 + k] / 10.0;
    }
    CHECK(f[6] == doctest::Approx(fb).epsilon(1e-12));
    CHECK(f[7] == doctest::Approx(fb).epsilon(1e-12));
    for (std::size_t k = 0; k < 3; ++k) CHECK(f[k] == doctest::Approx(fw[k]).epsilon(1e-12));
  }
}

TEST_CASE("full Fisher oracle and its diagonal") {
  Rng rng(2);
  for (const ClassifierSpec& spec : {ClassifierSpec{4, 0, 3}, ClassifierSpec{3, 3, 3}, ClassifierSpec{5, 2, 2}}) {
    CAPTURE(spec.param_count());
    const ParamVector params = testing::random_vector(spec.layout(), rng);
    const std::size_t n = 4;
    const std::vector<double> x = random_inputs(n, spec.input_dim, rng);
    const InputBatch batch{x, spec.input_dim};
    const FisherFull full = empirical_fisher_full(params, spec, batch);
    const FisherDiagonal diag = empirical_fisher_diag(params, spec, batch);
    const auto d = static_cast<Eigen::Index>(spec.param_count());
    REQUIRE(full.matrix.rows() == d);

    for (Eigen::Index i = 0; i < d; ++i) CHECK(std::fabs(full.matrix(i, i) - diag[static_cast<std::size_t>(i)]) <= 1e-10);
    CHECK((full.matrix - full.matrix.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(full.matrix);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(full.matrix);
    lu.setThreshold(1e-10);
    CHECK(static_cast<std::size_t>(lu.rank()) <= n * spec.num_classes);
    for (int t = 0; t < 100; ++t) {
      const Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(d, [&] { return rng.normal(); });
      CHECK(v.dot(full.matrix * v) >= -1e-12);
    }

    // Independent construction: average of p_y g g^T with g from a single-label backward pass.
    Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(d, d);
    Classifier model(spec, params.values());
    std::vector<double> g(spec.param_count()), dlogits(spec.num_classes);
    for (std::size_t j = 0; j < n; ++j) {
      model.forward(batch.row(j));
      const std::vector<double> p(model.probabilities().begin(), model.probabilities().end());
      for (std::size_t y = 0; y < spec.num_classes; ++y) {
        for (std::size_t c = 0; c < spec.num_classes; ++c) dlogits[c] = p[c] - (c == y ? 1.0 : 0.0);
        model.gradient(dlogits, g);
        const Eigen::Map<const Eigen::VectorXd> gv(g.data(), d);
        oracle += (p[y] / static_cast<double>(n)) * gv * gv.transpose();
      }
    }
    CHECK((oracle - full.matrix).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("full Fisher refuses large models") {
  const ClassifierSpec spec{30, 20, 4};
  Rng rng(3);
  const std::vector<double> x = random_inputs(2, 30, rng);
  CHECK_THROWS_AS(empirical_fisher_full(ParamVector::zeros(spec.layout()), spec, InputBatch{x, 30}), ConfigError);
}

TEST_CASE("Fisher errors") {
  const ClassifierSpec spec{3, 0, 2};
  CHECK_THROWS_AS(empirical_fisher_diag(ParamVector::zeros(spec.layout()), spec, InputBatch{{}, 3}), ConfigError);
  const std::vector<double> x = {1, 2};
  CHECK_THROWS_AS(empirical_fisher_diag(ParamVector::zeros(spec.layout()), spec, InputBatch{x, 2}), StructuralError);
  CHECK_THROWS_AS(FisherDiagonal(testing::flat_layout(2), {1.0, -1e-3}), NumericalError);
}

TEST_CASE("Fisher is invariant to input order") {
  Rng rng(4);
  const ClassifierSpec spec{5, 4, 3};
  const ParamVector params = testing::random_vector(spec.layout(), rng);
  const std::size_t n = 30;
  std::vector<double> x = random_inputs(n, 5, rng);
  const FisherDiagonal a = empirical_fisher_diag(params, spec, InputBatch{x, 5});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<double> shuffled;
  for (std::size_t r : order) shuffled.insert(shuffled.end(), x.begin() + r * 5, x.begin() + r * 5 + 5);
  const FisherDiagonal b = empirical_fisher_diag(params, spec, InputBatch{shuffled, 5});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-12 * std::max(a[i], 1e-300));
}

TEST_CASE("Fisher at scaled coefficients") {
  Rng rng(5);
  const ClassifierSpec spec{4, 3, 3};
  const ParamVector pre = testing::random_vector(spec.layout(), rng);
  const ParamVector t1 = testing::random_vector(spec.layout(), rng), t2 = testing::random_vector(spec.layout(), rng);
  const std::vector<double> x = random_inputs(8, 4, rng);
  const InputBatch batch{x, 4};

  const ScaledVector one[] = {{1.0, &t1}};
  CHECK(fisher_at_scaled(pre, t1, 1.0, spec, batch) == empirical_fisher_diag(axpy_into_pretrained(pre, one), spec, batch));
  CHECK(fisher_at_scaled(pre, t1, 0.0, spec, batch) == empirical_fisher_diag(pre, spec, batch));
  CHECK(fisher_at_scaled(pre, t1, 0.0, spec, batch) == fisher_at_scaled(pre, t2, 0.0, spec, batch));

  std::vector<double> half(pre.size());
  for (std::size_t i = 0; i < half.size(); ++i) half[i] = pre[i] + 0.5 * t1[i];
  const FisherDiagonal manual = empirical_fisher_diag(ParamVector(spec.layout(), half), spec, batch);
  const FisherDiagonal composed = fisher_at_scaled(pre, t1, 0.5, spec, batch);
  for (std::size_t i = 0; i < manual.size(); ++i) CHECK(composed[i] == doctest::Approx(manual[i]).epsilon(1e-12));
  CHECK_THROWS_AS(fisher_at_scaled(pre, t1, std::nan(""), spec, batch), ConfigError);
}

TEST_CASE("Fisher mass concentrates on a task's informative inputs") {
  SuiteOptions so;
  so.num_tasks = 2;
  so.conflict = 0.0;
  so.separation = 3.0;
  so.sizes = {600, 300, 300};
  const auto tasks = make_suite(so, 21);
  const Dataset data = generate_task(tasks[0]);
  const ClassifierSpec spec{so.input_dim, 0, so.num_classes};
  TrainConfig cfg;
  cfg.steps = 800;
  const ParamVector theta = finetune(ParamVector::zeros(spec.layout()), spec, data, cfg).params;
  const FisherDiagonal f = empirical_fisher_diag(theta, spec, InputBatch{data.validation.features, so.input_dim});

  const auto info = informative_dimensions(tasks[0]);
  const std::set<std::size_t> informative(info.begin(), info.end());
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t k = 0; k < spec.input_dim; ++k) {
      const double v = f[c * spec.input_dim + k];
      if (informative.count(k)) {
        in_sum += v;
        ++in_n;
      } else {
        out_sum += v;
        ++out_n;
      }
    }
  }
  CHECK(in_sum / static_cast<double>(in_n) > out_sum / static_cast<double>(out_n));
}

TEST_CASE("Fisher persistence") {
  Rng rng(6);
  const FisherDiagonal f = testing::random_fisher(testing::flat_layout(17), rng);
  const auto path = std::filesystem::temp_directory_path() / "dfmerge_test_fisher.bin";
  save_fisher(f, path);
  CHECK(load_fisher(path) == f);
}
