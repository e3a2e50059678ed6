#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace medssl {

/// Population covariance (divide by B) of the rows of `batch`, explicitly
/// symmetrized. B = 1 yields the zero matrix.
Matrix covariance(const Matrix& batch);

/// log det(I + scale * gamma) via Cholesky of the shifted matrix. Retries
/// once with 1e-10 diagonal jitter before throwing NumericalError.
double logdet_psd(const Matrix& gamma, double scale);

/// (I + scale * gamma)^{-1}, from the same factorization as logdet_psd.
Matrix shifted_inverse(const Matrix& gamma, double scale);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Max over coordinates of |g_num - g_ana| / max(1, |g_num|, |g_ana|) with
/// central differences of step h. `params` is restored before returning.
double grad_check(const ScalarFunction& f, std::vector<double>& params, std::span<const double> analytic,
                  double h = 1e-5);

/// Per-coordinate relative error, same convention as grad_check.
double relative_error(double numeric, double analytic);

struct PowerLaw {
  double a = 0.0;  // y = a * x^b
  double b = 0.0;
};

/// Least squares on (ln x, ln y).
PowerLaw fit_power_law(std::span<const std::pair<double, double>> points);

}  // namespace medssl
