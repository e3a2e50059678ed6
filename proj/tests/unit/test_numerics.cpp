#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <vector>

#include "error.hpp"
#include "numerics.hpp"
#include "test_support.hpp"

using namespace medssl;

namespace {

Matrix random_psd(int d, Rng& rng) {
  // Rank varies with the number of generating rows, so singular cases occur.
  const int rows = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * d)));
  const Matrix a = testing::random_matrix(rows, d, rng);
  return covariance(a);
}

double eigen_logdet(const Matrix& gamma, double scale) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(gamma), Eigen::EigenvaluesOnly);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) acc += std::log1p(scale * es.eigenvalues()(i));
  return acc;
}

}  // namespace

TEST_CASE("covariance of identical rows is zero") {
  Matrix b(3, 2);
  b << 1, 2, 1, 2, 1, 2;
  CHECK(covariance(b).isZero(0.0));
}

TEST_CASE("covariance of two opposite points") {
  Matrix b(2, 2);
  b << 1, 0, -1, 0;
  Matrix expected(2, 2);
  expected << 1, 0, 0, 0;
  CHECK(covariance(b).isApprox(expected));
}

TEST_CASE("covariance of one row is zero and of no rows throws") {
  CHECK(covariance(Matrix::Ones(1, 3)).isZero(0.0));
  CHECK_THROWS_AS(covariance(Matrix(0, 3)), InvalidInput);
}

TEST_CASE("covariance is symmetric positive semidefinite") {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + static_cast<int>(rng.below(12));
    const Matrix g = covariance(testing::random_matrix(1 + static_cast<int>(rng.below(20)), d, rng));
    CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(g), Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("logdet of zero covariance is zero") {
  CHECK(logdet_psd(Matrix::Zero(5, 5), 3.0) == 0.0);
}

TEST_CASE("logdet on a scaled identity has the diagonal closed form") {
  const Matrix g = 0.25 * Matrix::Identity(4, 4);
  const double eps = 0.5;
  CHECK(logdet_psd(g, 4 / (eps * eps)) == doctest::Approx(4 * std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("logdet matches the eigenvalue sum") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const int d = 1 + static_cast<int>(rng.below(16));
    const Matrix g = random_psd(d, rng);
    const double scale = rng.uniform(0.1, 50.0);
    CHECK(std::abs(logdet_psd(g, scale) - eigen_logdet(g, scale)) <= 1e-9);
  }
}

TEST_CASE("logdet is non-negative and non-decreasing in the scale") {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const Matrix g = random_psd(6, rng);
    double prev = 0.0;
    for (double s : {0.01, 0.1, 1.0, 4.0, 16.0, 100.0}) {
      const double v = logdet_psd(g, s);
      CHECK(v >= 0.0);
      CHECK(v >= prev - 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("logdet rejects bad arguments") {
  CHECK_THROWS_AS(logdet_psd(Matrix::Zero(2, 3), 1.0), ShapeError);
  CHECK_THROWS_AS(logdet_psd(Matrix::Zero(2, 2), 0.0), InvalidInput);
  CHECK_THROWS_AS(logdet_psd(-10.0 * Matrix::Identity(2, 2), 1.0), NumericalError);
}

TEST_CASE("shifted inverse inverts I + s Gamma") {
  Rng rng(9);
  const Matrix g = random_psd(7, rng);
  const Matrix inv = shifted_inverse(g, 4.0);
  const Matrix prod = inv * (Matrix::Identity(7, 7) + 4.0 * g);
  CHECK(prod.isApprox(Matrix::Identity(7, 7), 1e-10));
}

TEST_CASE("cosine similarity examples") {
  const std::vector<double> e1{1, 0}, e2{0, 1}, ones{1, 1}, twos{2, 2}, neg{-1, 0}, zero{0, 0};
  CHECK(cosine_similarity(e1, e2) == 0.0);
  CHECK(cosine_similarity(ones, twos) == doctest::Approx(1.0));
  CHECK(cosine_similarity(e1, neg) == -1.0);
  CHECK_THROWS_AS(cosine_similarity(e1, zero), InvalidInput);
  CHECK_THROWS_AS(cosine_similarity(e1, std::vector<double>{1, 0, 0}), ShapeError);
}

TEST_CASE("cosine similarity ignores positive scaling") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(5), b(5);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    std::vector<double> a2 = a;
    const double k = rng.uniform(0.1, 10.0);
    for (auto& v : a2) v *= k;
    CHECK(cosine_similarity(a2, b) == doctest::Approx(cosine_similarity(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("grad check of a quadratic") {
  std::vector<double> w{3.0};
  auto f = [](std::span<const double> p) { return p[0] * p[0]; };
  const std::vector<double> good{6.0}, doubled{12.0};
  CHECK(grad_check(f, w, good, 1e-5) <= 1e-8);
  CHECK(grad_check(f, w, doubled, 1e-5) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(w[0] == 3.0);
}

TEST_CASE("grad check reports non-finite evaluations") {
  std::vector<double> w{0.0};
  auto f = [](std::span<const double> p) { return std::log(p[0]); };
  const std::vector<double> g{1.0};
  CHECK_THROWS_AS(grad_check(f, w, g, 1e-5), NumericalError);
}

TEST_CASE("power law recovery") {
  const std::vector<std::pair<double, double>> exact{{1, 2}, {4, 1}, {16, 0.5}};
  const auto fit = fit_power_law(exact);
  CHECK(fit.a == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit.b == doctest::Approx(-0.5).epsilon(1e-12));

  std::vector<std::pair<double, double>> pts;
  for (double x : {1.0, 2.0, 4.0, 8.0}) pts.emplace_back(x, 3.0 * std::pow(x, 0.25));
  const auto fit2 = fit_power_law(pts);
  CHECK(std::abs(fit2.a - 3.0) <= 1e-9);
  CHECK(std::abs(fit2.b - 0.25) <= 1e-9);
}

TEST_CASE("power law rejects degenerate input") {
  const std::vector<std::pair<double, double>> same_x{{2, 1}, {2, 3}};
  CHECK_THROWS_AS(fit_power_law(same_x), InvalidInput);
  const std::vector<std::pair<double, double>> one{{2, 1}};
  CHECK_THROWS_AS(fit_power_law(one), InvalidInput);
  const std::vector<std::pair<double, double>> negative{{1, 1}, {2, -1}};
  CHECK_THROWS_AS(fit_power_law(negative), InvalidInput);
}
