#pragma once

// Forward/backward kernels for the fixed operator set of the transformer:
// affine maps, layer normalization, GELU, multi-head softmax attention and
// pre-norm blocks. Parameters are read from a ParamStore and gradients are
// accumulated (+=) into a Gradients buffer with the same layout.

#include <string>
#include <vector>

#include "params.hpp"
#include "tensor.hpp"

namespace medssl {

struct LinearIds {
  int weight = -1;  // in x out
  int bias = -1;    // out
};

struct LayerNormIds {
  int gamma = -1;
  int beta = -1;
};

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

struct AttentionIds {
  LinearIds qkv;
  LinearIds proj;
  int heads = 1;
};

struct AttentionCache {
  Matrix x;
  Matrix qkv;
  std::vector<Matrix> probs;
  Matrix ctx;
};

struct BlockIds {
  LayerNormIds ln1;
  AttentionIds attn;
  LayerNormIds ln2;
  LinearIds fc1;
  LinearIds fc2;
};

struct BlockCache {
  LayerNormCache ln1;
  AttentionCache attn;
  LayerNormCache ln2;
  Matrix h2;
  Matrix pre_act;
  Matrix act;
};

struct StackIds {
  std::vector<BlockIds> blocks;
  LayerNormIds norm;
};

struct StackCache {
  std::vector<BlockCache> blocks;
  LayerNormCache norm;
};

inline constexpr double kLayerNormEps = 1e-6;

LinearIds add_linear(ParamStore& p, const std::string& prefix, int in, int out);
LayerNormIds add_layernorm(ParamStore& p, const std::string& prefix, int dim);
StackIds add_stack(ParamStore& p, const std::string& prefix, int depth, int dim, int heads, int hidden);

Matrix linear_forward(const ParamStore& p, const LinearIds& ids, const Matrix& x);
/// Returns dL/dx.
Matrix linear_backward(const ParamStore& p, const LinearIds& ids, const Matrix& x, const Matrix& dy, Gradients& g);

Matrix layernorm_forward(const ParamStore& p, const LayerNormIds& ids, const Matrix& x, LayerNormCache* cache);
Matrix layernorm_backward(const ParamStore& p, const LayerNormIds& ids, const LayerNormCache& cache, const Matrix& dy,
                          Gradients& g);

Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

Matrix attention_forward(const ParamStore& p, const AttentionIds& ids, const Matrix& x, AttentionCache* cache);
Matrix attention_backward(const ParamStore& p, const AttentionIds& ids, const AttentionCache& cache, const Matrix& dy,
                          Gradients& g);

Matrix block_forward(const ParamStore& p, const BlockIds& ids, const Matrix& x, BlockCache* cache);
Matrix block_backward(const ParamStore& p, const BlockIds& ids, const BlockCache& cache, const Matrix& dy, Gradients& g);

/// Blocks followed by the final layer norm.
Matrix stack_forward(const ParamStore& p, const StackIds& ids, const Matrix& x, StackCache* cache);
Matrix stack_backward(const ParamStore& p, const StackIds& ids, const StackCache& cache, const Matrix& dy, Gradients& g);

}  // namespace medssl
