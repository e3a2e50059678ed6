#include "layers.hpp"

#include <cmath>

#include "error.hpp"

namespace medssl {

LinearIds add_linear(ParamStore& p, const std::string& prefix, int in, int out) {
  return {p.add(prefix + ".weight", {in, out}), p.add(prefix + ".bias", {out})};
}

LayerNormIds add_layernorm(ParamStore& p, const std::string& prefix, int dim) {
  return {p.add(prefix + ".gamma", {dim}), p.add(prefix + ".beta", {dim})};
}

StackIds add_stack(ParamStore& p, const std::string& prefix, int depth, int dim, int heads, int hidden) {
  StackIds s;
  for (int i = 0; i < depth; ++i) {
    const std::string b = prefix + ".blocks." + std::to_string(i);
    BlockIds ids;
    ids.ln1 = add_layernorm(p, b + ".ln1", dim);
    ids.attn.qkv = add_linear(p, b + ".attn.qkv", dim, 3 * dim);
    ids.attn.proj = add_linear(p, b + ".attn.proj", dim, dim);
    ids.attn.heads = heads;
    ids.ln2 = add_layernorm(p, b + ".ln2", dim);
    ids.fc1 = add_linear(p, b + ".mlp.fc1", dim, hidden);
    ids.fc2 = add_linear(p, b + ".mlp.fc2", hidden, dim);
    s.blocks.push_back(ids);
  }
  s.norm = add_layernorm(p, prefix + ".norm", dim);
  return s;
}

Matrix linear_forward(const ParamStore& p, const LinearIds& ids, const Matrix& x) {
  const auto w = p.matrix(ids.weight);
  const auto b = p.matrix(ids.bias);
  if (x.cols() != w.rows()) throw ShapeError("linear input width mismatch");
  Matrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

Matrix linear_backward(const ParamStore& p, const LinearIds& ids, const Matrix& x, const Matrix& dy, Gradients& g) {
  const auto w = p.matrix(ids.weight);
  g.matrix(ids.weight).noalias() += x.transpose() * dy;
  g.matrix(ids.bias) += dy.colwise().sum();
  return dy * w.transpose();
}

Matrix layernorm_forward(const ParamStore& p, const LayerNormIds& ids, const Matrix& x, LayerNormCache* cache) {
  const auto gamma = p.matrix(ids.gamma);
  const auto beta = p.matrix(ids.beta);
  const Eigen::Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  Matrix xhat(n, x.cols());
  Vector rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).sum() / d;
    const RowVector c = x.row(i).array() - mu;
    const double var = c.squaredNorm() / d;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = c * rstd(i);
  }
  Matrix y = xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix layernorm_backward(const ParamStore& p, const LayerNormIds& ids, const LayerNormCache& cache, const Matrix& dy,
                          Gradients& g) {
  const auto gamma = p.matrix(ids.gamma);
  g.matrix(ids.gamma) += (dy.array() * cache.xhat.array()).matrix().colwise().sum();
  g.matrix(ids.beta) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / d;
    const double mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) / d;
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx).matrix();
  }
  return dx;
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
  const Matrix deriv = x.unaryExpr([inv_sqrt_2pi](double v) {
    return 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  });
  return dy.cwiseProduct(deriv);
}

Matrix attention_forward(const ParamStore& p, const AttentionIds& ids, const Matrix& x, AttentionCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  const Eigen::Index dh = dim / ids.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix qkv = linear_forward(p, ids.qkv, x);
  Matrix ctx(n, dim);
  std::vector<Matrix> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(ids.heads));
  for (int h = 0; h < ids.heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(dim + h * dh, dh);
    const auto v = qkv.middleCols(2 * dim + h * dh, dh);
    Matrix s = (q * k.transpose()) * scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - m).exp();
      s.row(i) /= s.row(i).sum();
    }
    ctx.middleCols(h * dh, dh).noalias() = s * v;
    if (cache) probs.push_back(std::move(s));
  }
  Matrix out = linear_forward(p, ids.proj, ctx);
  if (cache) {
    cache->x = x;
    cache->qkv = std::move(qkv);
    cache->probs = std::move(probs);
    cache->ctx = std::move(ctx);
  }
  return out;
}

Matrix attention_backward(const ParamStore& p, const AttentionIds& ids, const AttentionCache& cache, const Matrix& dy,
                          Gradients& g) {
  const Eigen::Index n = cache.x.rows();
  const Eigen::Index dim = cache.x.cols();
  const Eigen::Index dh = dim / ids.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix dctx = linear_backward(p, ids.proj, cache.ctx, dy, g);
  Matrix dqkv(n, 3 * dim);
  for (int h = 0; h < ids.heads; ++h) {
    const auto q = cache.qkv.middleCols(h * dh, dh);
    const auto k = cache.qkv.middleCols(dim + h * dh, dh);
    const auto v = cache.qkv.middleCols(2 * dim + h * dh, dh);
    const Matrix& prob = cache.probs[static_cast<std::size_t>(h)];
    const auto d_out = dctx.middleCols(h * dh, dh);
    const Matrix dprob = d_out * v.transpose();
    dqkv.middleCols(2 * dim + h * dh, dh).noalias() = prob.transpose() * d_out;
    const Vector row_dot = (dprob.array() * prob.array()).rowwise().sum();
    const Matrix ds = (prob.array() * (dprob.colwise() - row_dot).array()).matrix() * scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(dim + h * dh, dh).noalias() = ds.transpose() * q;
  }
  return linear_backward(p, ids.qkv, cache.x, dqkv, g);
}

Matrix block_forward(const ParamStore& p, const BlockIds& ids, const Matrix& x, BlockCache* cache) {
  const Matrix h1 = layernorm_forward(p, ids.ln1, x, cache ? &cache->ln1 : nullptr);
  Matrix x1 = x + attention_forward(p, ids.attn, h1, cache ? &cache->attn : nullptr);
  Matrix h2 = layernorm_forward(p, ids.ln2, x1, cache ? &cache->ln2 : nullptr);
  Matrix pre = linear_forward(p, ids.fc1, h2);
  Matrix act = gelu(pre);
  Matrix y = x1 + linear_forward(p, ids.fc2, act);
  if (cache) {
    cache->h2 = std::move(h2);
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Matrix block_backward(const ParamStore& p, const BlockIds& ids, const BlockCache& cache, const Matrix& dy, Gradients& g) {
  const Matrix dact = linear_backward(p, ids.fc2, cache.act, dy, g);
  const Matrix dpre = gelu_backward(cache.pre_act, dact);
  const Matrix dh2 = linear_backward(p, ids.fc1, cache.h2, dpre, g);
  const Matrix dx1 = dy + layernorm_backward(p, ids.ln2, cache.ln2, dh2, g);
  const Matrix dh1 = attention_backward(p, ids.attn, cache.attn, dx1, g);
  return dx1 + layernorm_backward(p, ids.ln1, cache.ln1, dh1, g);
}

Matrix stack_forward(const ParamStore& p, const StackIds& ids, const Matrix& x, StackCache* cache) {
  Matrix h = x;
  if (cache) cache->blocks.resize(ids.blocks.size());
  for (std::size_t i = 0; i < ids.blocks.size(); ++i)
    h = block_forward(p, ids.blocks[i], h, cache ? &cache->blocks[i] : nullptr);
  return layernorm_forward(p, ids.norm, h, cache ? &cache->norm : nullptr);
}

Matrix stack_backward(const ParamStore& p, const StackIds& ids, const StackCache& cache, const Matrix& dy, Gradients& g) {
  Matrix d = layernorm_backward(p, ids.norm, cache.norm, dy, g);
  for (std::size_t i = ids.blocks.size(); i-- > 0;) d = block_backward(p, ids.blocks[i], cache.blocks[i], d, g);
  return d;
}

}  // namespace medssl
