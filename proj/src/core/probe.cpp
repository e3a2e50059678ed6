#include "probe.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace medssl {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: score and label counts differ");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw InvalidInput("auroc: non-finite score");
    if (labels[i] != 0) {
      pos += 1;
      rank_sum += ranks[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw InvalidInput("auroc needs both positive and negative labels");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

namespace {

double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

struct Standardizer {
  Vector mean, scale;
  Matrix apply(std::span<const ProbeExample> xs) const {
    Matrix m(static_cast<Eigen::Index>(xs.size()), mean.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].x.size() != mean.size()) throw ShapeError("probe features have inconsistent dimensions");
      m.row(static_cast<Eigen::Index>(i)) = ((xs[i].x - mean).array() / scale.array()).matrix().transpose();
    }
    return m;
  }
};

Standardizer fit_standardizer(std::span<const ProbeExample> xs) {
  const auto d = xs.front().x.size();
  Standardizer s{Vector::Zero(d), Vector::Zero(d)};
  for (const auto& e : xs) {
    if (e.x.size() != d) throw ShapeError("probe features have inconsistent dimensions");
    s.mean += e.x;
  }
  s.mean /= static_cast<double>(xs.size());
  for (const auto& e : xs) s.scale += (e.x - s.mean).array().square().matrix();
  s.scale = (s.scale / static_cast<double>(xs.size())).array().sqrt().matrix();
  for (Eigen::Index i = 0; i < d; ++i)
    if (s.scale[i] < 1e-12) s.scale[i] = 1.0;
  return s;
}

// Gradient descent with step 1/L, L the smoothness constant of the
// regularized logistic loss.
std::pair<Vector, double> fit_logistic(const Matrix& x, const Vector& y, const ProbeConfig& cfg, double step) {
  const auto n = static_cast<double>(x.rows());
  Vector w = Vector::Zero(x.cols());
  double b = 0.0;
  for (int it = 0; it < cfg.max_iter; ++it) {
    Vector r = (x * w).array() + b;
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = sigmoid(r[i]) - y[i];
    const Vector gw = x.transpose() * r / n + cfg.l2 * w;
    const double gb = r.sum() / n;
    if (std::sqrt(gw.squaredNorm() + gb * gb) < cfg.tol) break;
    w -= step * gw;
    b -= step * gb;
  }
  return {w, b};
}

}  // namespace

ProbeMetrics linear_probe(std::span<const ProbeExample> train, std::span<const ProbeExample> test,
                          const std::vector<std::string>& classes, const ProbeConfig& cfg) {
  if (train.empty()) throw InvalidInput("linear probe needs training examples");
  if (test.empty()) throw InvalidInput("linear probe needs test examples");
  if (classes.empty()) throw InvalidInput("linear probe needs at least one class");

  const auto scaler = fit_standardizer(train);
  const Matrix xtr = scaler.apply(train);
  const Matrix xte = scaler.apply(test);

  // Smoothness: 0.25 * lambda_max(X^T X / n) for the weights, 0.25 for the
  // bias, plus the ridge term.
  Matrix design(xtr.rows(), xtr.cols() + 1);
  design << xtr, Matrix::Ones(xtr.rows(), 1);
  const Matrix gram = design.transpose() * design / static_cast<double>(xtr.rows());
  const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double step = 1.0 / (0.25 * lmax + cfg.l2);

  ProbeMetrics out;
  double f1_sum = 0, prec_sum = 0, auc_sum = 0;
  std::vector<std::vector<int>> predicted(test.size()), truth(test.size());
  for (const auto& cls : classes) {
    Vector y(xtr.rows());
    for (std::size_t i = 0; i < train.size(); ++i) y[static_cast<Eigen::Index>(i)] = train[i].labels.count(cls) ? 1.0 : 0.0;
    if (y.sum() == 0 || y.sum() == static_cast<double>(y.size())) {
      out.excluded.push_back(cls);
      continue;
    }
    out.classes.push_back(cls);
    const auto [w, b] = fit_logistic(xtr, y, cfg, step);

    std::vector<double> scores(test.size());
    std::vector<int> labels(test.size());
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      scores[i] = sigmoid(xte.row(static_cast<Eigen::Index>(i)).dot(w) + b);
      labels[i] = test[i].labels.count(cls) ? 1 : 0;
      const int p = scores[i] >= cfg.threshold ? 1 : 0;
      predicted[i].push_back(p);
      truth[i].push_back(labels[i]);
      tp += p && labels[i];
      fp += p && !labels[i];
      fn += !p && labels[i];
    }
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double f1 = 2 * tp + fp + fn > 0 ? 2.0 * tp / (2 * tp + fp + fn) : 0.0;
    prec_sum += precision;
    f1_sum += f1;
    const int pos = std::accumulate(labels.begin(), labels.end(), 0);
    if (pos == 0 || pos == static_cast<int>(labels.size())) {
      out.auroc_excluded.push_back(cls);
    } else {
      auc_sum += auroc(scores, labels);
    }
  }
  if (out.classes.empty()) throw InvalidInput("every class is single-valued in the training set");

  const auto nc = static_cast<double>(out.classes.size());
  out.f1 = f1_sum / nc;
  out.precision = prec_sum / nc;
  const auto auc_count = out.classes.size() - out.auroc_excluded.size();
  out.auroc = auc_count > 0 ? auc_sum / static_cast<double>(auc_count) : std::nan("");
  int exact = 0;
  for (std::size_t i = 0; i < test.size(); ++i) exact += predicted[i] == truth[i];
  out.accuracy = static_cast<double>(exact) / static_cast<double>(test.size());
  return out;
}

}  // namespace medssl
