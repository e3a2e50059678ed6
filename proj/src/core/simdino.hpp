#pragma once

#include <vector>

#include "augment.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "rng.hpp"

namespace medssl {

enum class ViewOrigin { Global, Local };

struct ViewEmbedding {
  Vector z;
  ViewOrigin origin = ViewOrigin::Global;
  int view_index = 0;  // 0/1 for globals, 0..n_local-1 for locals
  int sample_index = 0;
};

/// Which student embeddings enter the batch covariance.
enum class CovarianceViews { Globals, All };

struct SimdinoConfig {
  double epsilon = 0.5;
  double momentum_start = 0.996;
  double momentum_end = 1.0;
  bool normalize = false;  // L2-normalize embeddings before the loss
  CovarianceViews covariance_views = CovarianceViews::Globals;

  void validate() const;
};

struct SimdinoLoss {
  double total = 0.0;
  double alignment = 0.0;
  double coding_rate = 0.0;  // -1/2 log det(I + d/eps^2 Gamma), <= 0
  double covariance_trace = 0.0;
  int pairs = 0;
};

/// Alignment over every (student view, teacher global) pair of the same
/// sample except a student global against the teacher's copy of the same
/// crop, averaged; plus the coding-rate term over the batch covariance.
/// When `grad` is set it receives d total / d z for each student view.
SimdinoLoss simdino_loss(const std::vector<ViewEmbedding>& student, const std::vector<ViewEmbedding>& teacher,
                         const SimdinoConfig& cfg, std::vector<Vector>* grad = nullptr);

/// m(t) = end - (end - start) (cos(pi t / total) + 1) / 2.
double momentum_schedule(int step, int total, double start = 0.996, double end = 1.0);

/// teacher <- m teacher + (1 - m) student, parameter-wise.
void ema_update(Model& teacher, const Model& student, double m);

/// Patchified views of one sample.
struct SampleViews {
  std::vector<TokenSequence> globals;
  std::vector<TokenSequence> locals;
};

SampleViews prepare_views(const AugmentedViews& views, const PatchConfig& patch);

/// Student forward over all views, teacher over globals, loss. With `g`
/// set, accumulates the student parameter gradient.
SimdinoLoss simdino_objective(const Model& student, const Model& teacher, const std::vector<SampleViews>& batch,
                              const SimdinoConfig& cfg, Gradients* g);

struct SimdinoStepStats {
  SimdinoLoss loss;
  double lr = 0.0;
  double momentum = 0.0;
};

/// augment -> student/teacher forward -> loss -> AdamW on the student ->
/// EMA teacher update with momentum_schedule(step, total).
SimdinoStepStats simdino_train_step(Model& student, Model& teacher, const std::vector<Sample4D>& batch,
                                    const AugmentConfig& aug, const SimdinoConfig& cfg, OptimizerState& opt,
                                    const AdamWConfig& adamw, const LrSchedule& schedule, int step, Rng& rng);

/// Embedding used for retrieval: Avg pooling for MAE encoders, cls ++ avg
/// of the unaugmented sample for self-distillation students.
Vector retrieval_embedding(const Model& m, const Sample4D& x, const PatchConfig& patch, Objective objective);

/// Pools the encoder output of an unaugmented sample.
Vector embed_sample(const Model& m, const Sample4D& x, PoolStrategy strategy);

}  // namespace medssl
