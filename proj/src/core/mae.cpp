#include "mae.hpp"

#include <cmath>

#include "error.hpp"

namespace medssl {

int mask_count(int n, double ratio) {
  if (n < 2) throw ConfigError("masking needs at least two tokens");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0,1)");
  // The tolerance keeps decimal ratios such as 0.7 * 45 on the half-up side.
  const int k = static_cast<int>(std::floor(ratio * n + 0.5 + 1e-9));
  if (k <= 0 || k >= n)
    throw ConfigError("mask ratio " + std::to_string(ratio) + " masks " + std::to_string(k) + " of " +
                      std::to_string(n) + " tokens");
  return k;
}

MaskIndices sample_mask(int n, const MaskConfig& cfg, Rng& rng) {
  const int k = mask_count(n, cfg.ratio);
  MaskIndices out;
  out.masked = rng.sample_sorted(n, k);
  out.visible.reserve(static_cast<std::size_t>(n - k));
  std::size_t j = 0;
  for (int i = 0; i < n; ++i) {
    if (j < out.masked.size() && out.masked[j] == i) {
      ++j;
    } else {
      out.visible.push_back(i);
    }
  }
  return out;
}

double mae_loss(const Matrix& recon, const Matrix& target) {
  if (recon.rows() != target.rows() || recon.cols() != target.cols()) throw ShapeError("reconstruction/target shape mismatch");
  if (recon.rows() == 0) throw ShapeError("no masked patches");
  return (recon - target).squaredNorm() / static_cast<double>(recon.rows());
}

Matrix mae_loss_grad(const Matrix& recon, const Matrix& target) {
  if (recon.rows() != target.rows() || recon.cols() != target.cols()) throw ShapeError("reconstruction/target shape mismatch");
  return (recon - target) * (2.0 / static_cast<double>(recon.rows()));
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

MaeOutput mae_forward(const Model& m, const TokenSequence& t, const MaskIndices& mask, MaeCache* cache) {
  if (!m.decoder) throw ConfigError("model has no MAE decoder");
  const auto n = static_cast<int>(t.tokens.rows());
  if (static_cast<int>(mask.masked.size() + mask.visible.size()) != n) throw ShapeError("mask does not cover the token sequence");
  if (mask.masked.empty() || mask.visible.empty()) throw ShapeError("mask must leave visible and masked tokens");
  const auto& p = m.params;
  const DecoderLayout& d = *m.decoder;

  EncoderCache enc_cache;
  const Matrix visible_tokens = gather_rows(t.tokens, mask.visible);
  Matrix encoded = encoder_forward(m, visible_tokens, mask.visible, cache ? &enc_cache : nullptr);
  const Matrix embedded = linear_forward(p, d.embed, encoded);

  const int width = m.config.decoder_width();
  if (n > m.config.encoder.max_tokens) throw ShapeError("token count exceeds max_tokens");
  Matrix seq(n, width);
  const auto pos = p.matrix(d.pos);
  const auto mask_token = p.matrix(d.mask_token);
  for (std::size_t i = 0; i < mask.visible.size(); ++i) seq.row(mask.visible[i]) = embedded.row(static_cast<Eigen::Index>(i));
  for (int i : mask.masked) seq.row(i) = mask_token.row(0);
  seq += pos.topRows(n);

  StackCache stack_cache;
  const Matrix dec = stack_forward(p, d.stack, seq, cache ? &stack_cache : nullptr);
  Matrix dec_masked = gather_rows(dec, mask.masked);
  MaeOutput out;
  out.recon = linear_forward(p, d.head, dec_masked);
  Matrix target = gather_rows(t.tokens, mask.masked);
  out.loss = mae_loss(out.recon, target);
  if (cache) {
    cache->mask = mask;
    cache->encoder = std::move(enc_cache);
    cache->encoded = std::move(encoded);
    cache->decoder_stack = std::move(stack_cache);
    cache->decoder_out = std::move(dec_masked);
    cache->target = std::move(target);
    cache->recon = out.recon;
  }
  return out;
}

void mae_backward(const Model& m, const MaeCache& cache, double scale, Gradients& g) {
  const auto& p = m.params;
  const DecoderLayout& d = *m.decoder;
  const Matrix d_recon = mae_loss_grad(cache.recon, cache.target) * scale;
  const Matrix d_dec_masked = linear_backward(p, d.head, cache.decoder_out, d_recon, g);
  const int n = static_cast<int>(cache.mask.masked.size() + cache.mask.visible.size());
  Matrix d_dec = Matrix::Zero(n, d_dec_masked.cols());
  for (std::size_t i = 0; i < cache.mask.masked.size(); ++i)
    d_dec.row(cache.mask.masked[i]) = d_dec_masked.row(static_cast<Eigen::Index>(i));
  const Matrix d_seq = stack_backward(p, d.stack, cache.decoder_stack, d_dec, g);
  g.matrix(d.pos).topRows(n) += d_seq;
  auto d_mask_token = g.matrix(d.mask_token);
  for (int i : cache.mask.masked) d_mask_token.row(0) += d_seq.row(i);
  Matrix d_embedded(static_cast<Eigen::Index>(cache.mask.visible.size()), d_seq.cols());
  for (std::size_t i = 0; i < cache.mask.visible.size(); ++i)
    d_embedded.row(static_cast<Eigen::Index>(i)) = d_seq.row(cache.mask.visible[i]);
  const Matrix d_encoded = linear_backward(p, d.embed, cache.encoded, d_embedded, g);
  encoder_backward(m, cache.encoder, d_encoded, g);
}

double mae_batch_objective(const Model& m, const std::vector<TokenSequence>& batch,
                           const std::vector<MaskIndices>& masks, Gradients* g) {
  if (batch.empty()) throw InvalidInput("empty batch");
  if (masks.size() != batch.size()) throw ShapeError("one mask per sample required");
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    MaeCache cache;
    const auto out = mae_forward(m, batch[i], masks[i], g ? &cache : nullptr);
    loss += out.loss * scale;
    if (g) mae_backward(m, cache, scale, *g);
  }
  return loss;
}

MaeStepStats mae_train_step(Model& m, const std::vector<TokenSequence>& batch, OptimizerState& opt,
                            const AdamWConfig& adamw, const LrSchedule& schedule, int step, const MaskConfig& mask_cfg,
                            Rng& rng) {
  if (batch.empty()) throw InvalidInput("empty batch");
  std::vector<MaskIndices> masks;
  masks.reserve(batch.size());
  for (const auto& t : batch) masks.push_back(sample_mask(static_cast<int>(t.tokens.rows()), mask_cfg, rng));
  Gradients g(m.params);
  MaeStepStats stats;
  stats.loss = mae_batch_objective(m, batch, masks, &g);
  stats.lr = lr_at(schedule, step);
  stats.masked = static_cast<int>(masks.front().masked.size());
  stats.tokens = static_cast<int>(batch.front().tokens.rows());
  if (!std::isfinite(stats.loss)) throw NumericalError("non-finite MAE loss at step " + std::to_string(step));
  adamw_step(m.params, g, opt, stats.lr, adamw);
  return stats;
}

}  // namespace medssl
