#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace medssl {

struct ProbeExample {
  Vector x;
  std::set<std::string> labels;
};

struct ProbeConfig {
  double l2 = 1e-4;
  int max_iter = 5000;
  double tol = 1e-7;  // on the gradient norm
  double threshold = 0.5;
};

struct ProbeMetrics {
  double f1 = 0.0;
  double precision = 0.0;
  double accuracy = 0.0;  // exact match over the evaluated classes
  double auroc = 0.0;
  std::vector<std::string> classes;           // in the macro averages
  std::vector<std::string> excluded;          // single-class in training
  std::vector<std::string> auroc_excluded;    // single-class in the test set
};

/// One-vs-rest logistic regression on standardized frozen features, fitted
/// by full-batch gradient descent.
ProbeMetrics linear_probe(std::span<const ProbeExample> train, std::span<const ProbeExample> test,
                          const std::vector<std::string>& classes, const ProbeConfig& cfg = {});

/// Mann-Whitney statistic with average ranks for ties. Throws InvalidInput
/// unless both label values occur.
double auroc(std::span<const double> scores, std::span<const int> labels);

}  // namespace medssl
