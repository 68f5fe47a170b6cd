// Transformer building blocks shared by the base classifier and the mask
// hypernetwork. Linear layers use the (out, in) weight convention, y = x W^T + b,
// so FC1 rows and FC2 columns are both indexed by the intermediate dimension.
#pragma once

#include "vedit/autodiff.hpp"
#include "vedit/params.hpp"

#include <random>
#include <vector>

namespace vedit::nn {

using ParamVars = std::vector<ad::Var>;

struct BlockParams {
  std::size_t norm1_w, norm1_b;
  std::size_t qkv_w, qkv_b;
  std::size_t proj_w, proj_b;
  std::size_t norm2_w, norm2_b;
  std::size_t fc1_w, fc1_b;
  std::size_t fc2_w, fc2_b;
};

/// Registers one pre-norm transformer block under `prefix` ("blocks.3." ...).
BlockParams add_block_params(ParamStore& store, const std::string& prefix, int block, int dim, int mlp_dim,
                             std::mt19937_64& rng, double init_std = 0.02);

ad::Matrix normal_matrix(int rows, int cols, double std, std::mt19937_64& rng);

ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b);
ad::Var layer_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, double eps = 1e-6);
/// tanh approximation of GELU.
ad::Var gelu(const ad::Var& x);

/// Row 0 of each of `seqs` equal-length sequences stacked along the rows.
ad::Var first_rows(const ad::Var& x, int seqs);

/// h + MSA(LN(h)) followed by h + FFN(LN(h)). `h` may stack `seqs`
/// equal-length sequences; attention never crosses them. With `cls_only` only
/// the first row of each sequence is produced.
ad::Var transformer_block(const ParamVars& p, const BlockParams& idx, const ad::Var& h, int heads,
                          bool cls_only = false, int seqs = 1);

/// Mean over rows of -log softmax(logits)[label].
ad::Var mean_cross_entropy(const ad::Var& logits, const std::vector<int>& labels);

}  // namespace vedit::nn
