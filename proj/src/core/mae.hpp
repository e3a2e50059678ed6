#pragma once

#include <vector>

#include "model.hpp"
#include "optim.hpp"
#include "rng.hpp"

namespace medssl {

struct MaskConfig {
  double ratio = 0.75;
};

struct MaskIndices {
  std::vector<int> masked;   // sorted
  std::vector<int> visible;  // sorted complement
};

/// round(ratio * n) with halves rounded up; ConfigError when the count is
/// 0 or n.
int mask_count(int n, double ratio);
MaskIndices sample_mask(int n, const MaskConfig& cfg, Rng& rng);

/// Sum over masked rows of ||recon_i - target_i||^2 divided by the number
/// of masked rows.
double mae_loss(const Matrix& recon, const Matrix& target);
/// d mae_loss / d recon.
Matrix mae_loss_grad(const Matrix& recon, const Matrix& target);

struct MaeCache {
  MaskIndices mask;
  EncoderCache encoder;
  Matrix encoded;
  StackCache decoder_stack;
  Matrix decoder_out;  // masked rows after the decoder stack
  Matrix target;
  Matrix recon;
};

struct MaeOutput {
  Matrix recon;  // |M| x raw_dim
  double loss = 0.0;
};

/// Encoder on visible tokens, decoder on encoded tokens plus mask tokens at
/// their grid positions, loss over masked rows only.
MaeOutput mae_forward(const Model& m, const TokenSequence& t, const MaskIndices& mask, MaeCache* cache = nullptr);
/// Accumulates `scale` * d loss / d params.
void mae_backward(const Model& m, const MaeCache& cache, double scale, Gradients& g);

struct MaeStepStats {
  double loss = 0.0;
  double lr = 0.0;
  int masked = 0;  // of the first sample in the batch
  int tokens = 0;
};

/// Per-sample masks, batch-averaged loss, one AdamW update. Rejects the step
/// (parameters untouched) with NumericalError on a non-finite loss.
MaeStepStats mae_train_step(Model& m, const std::vector<TokenSequence>& batch, OptimizerState& opt,
                            const AdamWConfig& adamw, const LrSchedule& schedule, int step, const MaskConfig& mask_cfg,
                            Rng& rng);

/// Batch loss and parameter gradient for fixed masks (gradient checks).
double mae_batch_objective(const Model& m, const std::vector<TokenSequence>& batch,
                           const std::vector<MaskIndices>& masks, Gradients* g);

}  // namespace medssl
