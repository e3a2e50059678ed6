#include "numerics.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace medssl {

Matrix covariance(const Matrix& batch) {
  if (batch.rows() == 0) throw InvalidInput("covariance of an empty batch");
  const RowVector mean = batch.colwise().mean();
  const Matrix centered = batch.rowwise() - mean;
  Matrix gamma = (centered.transpose() * centered) / static_cast<double>(batch.rows());
  Matrix sym = 0.5 * (gamma + gamma.transpose());
  return sym;
}

namespace {

Eigen::LLT<Matrix> factor_shifted(const Matrix& gamma, double scale) {
  if (gamma.rows() != gamma.cols()) throw ShapeError("covariance must be square");
  if (!(scale > 0.0)) throw InvalidInput("log-det scale must be positive");
  const Matrix sym = 0.5 * (gamma + gamma.transpose());
  Matrix shifted = Matrix::Identity(sym.rows(), sym.cols()) + scale * sym;
  Eigen::LLT<Matrix> llt(shifted);
  if (llt.info() != Eigen::Success) {
    shifted.diagonal().array() += 1e-10;
    llt.compute(shifted);
    if (llt.info() != Eigen::Success) throw NumericalError("Cholesky of I + scale*Gamma failed");
  }
  return llt;
}

}  // namespace

double logdet_psd(const Matrix& gamma, double scale) {
  const auto llt = factor_shifted(gamma, scale);
  const auto& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  const double result = 2.0 * acc;
  if (!std::isfinite(result)) throw NumericalError("non-finite log-det");
  return result;
}

Matrix shifted_inverse(const Matrix& gamma, double scale) {
  const auto llt = factor_shifted(gamma, scale);
  return llt.solve(Matrix::Identity(gamma.rows(), gamma.cols()));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine similarity of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidInput("cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double relative_error(double numeric, double analytic) {
  return std::abs(numeric - analytic) / std::max({1.0, std::abs(numeric), std::abs(analytic)});
}

double grad_check(const ScalarFunction& f, std::vector<double>& params, std::span<const double> analytic, double h) {
  if (analytic.size() != params.size()) throw ShapeError("analytic gradient length differs from parameter count");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = f(params);
    params[i] = saved - h;
    const double down = f(params);
    params[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericalError("non-finite function value during gradient check");
    worst = std::max(worst, relative_error((up - down) / (2.0 * h), analytic[i]));
  }
  return worst;
}

PowerLaw fit_power_law(std::span<const std::pair<double, double>> points) {
  if (points.size() < 2) throw InvalidInput("power-law fit needs at least two points");
  double sx = 0.0, sy = 0.0;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0) || !std::isfinite(x) || !std::isfinite(y))
      throw InvalidInput("power-law fit needs positive finite points");
    sx += std::log(x);
    sy += std::log(y);
  }
  const double n = static_cast<double>(points.size());
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = std::log(x) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y) - my);
  }
  if (sxx <= 0.0) throw InvalidInput("power-law fit needs at least two distinct x values");
  const double slope = sxy / sxx;
  return {std::exp(my - slope * mx), slope};
}

}  // namespace medssl
