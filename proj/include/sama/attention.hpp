#pragma once

#include <string>

#include "sama/ad.hpp"
#include "sama/core.hpp"

namespace sama::attn {

/// Multi-head scaled dot-product self-attention without masking over axis 1
/// of [S][L][d] inputs. When `probs` is given it receives the attention
/// matrices as [S][H][L][L].
ad::Var attention(ad::Var q, ad::Var k, ad::Var v, std::size_t heads, Tensor* probs = nullptr);

/// Pre-norm transformer block:
///   x = x + W_o attention(norm(x) W_q, norm(x) W_k, norm(x) W_v)
///   x = x + W_2 gelu(norm(x) W_1)          (hidden width 2d)
/// Applied along whichever axis the caller folds into L (joints or frames).
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParamStore& store, const std::string& prefix, const ModelConfig& cfg);

  ad::Var forward(ad::Tape& tape, ad::Var x, Tensor* probs = nullptr) const;

 private:
  std::size_t heads_ = 1;
  Param *norm1_g_ = nullptr, *norm1_b_ = nullptr;
  Param *w_q_ = nullptr, *b_q_ = nullptr, *w_k_ = nullptr, *w_v_ = nullptr, *b_v_ = nullptr;
  Param *w_o_ = nullptr, *b_o_ = nullptr;
  Param *norm2_g_ = nullptr, *norm2_b_ = nullptr;
  Param *w_1_ = nullptr, *b_1_ = nullptr, *w_2_ = nullptr, *b_2_ = nullptr;
};

}  // namespace sama::attn
