#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "egl/core/rng.hpp"
#include "egl/numkern/tape.hpp"

namespace egl::nk {

// Glorot-uniform initialisation.
inline Mat glorot(Index rows, Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  return m;
}

struct MhaParams {
  int n_heads = 1;
  Parameter wq, wk, wv, wo, bo;

  MhaParams() = default;
  MhaParams(Index d, int heads, Rng& rng, const std::string& prefix = "mha")
      : n_heads(heads),
        wq(prefix + ".wq", glorot(d, d, rng)),
        wk(prefix + ".wk", glorot(d, d, rng)),
        wv(prefix + ".wv", glorot(d, d, rng)),
        wo(prefix + ".wo", glorot(d, d, rng)),
        bo(prefix + ".bo", Mat::Zero(1, d)) {
    if (heads <= 0 || d % heads != 0) throw Error("model dim " + std::to_string(d) + " not divisible by heads");
  }

  Index dim() const { return wq.value.rows(); }
  std::vector<Parameter*> params() { return {&wq, &wk, &wv, &wo, &bo}; }
};

// Self-attention over independent blocks of `block` tokens each (rows of
// `tokens`). Heads split the model dimension evenly; outputs are concatenated
// and projected. No positional encoding, so each block is permutation
// equivariant.
inline Var multi_head_attention(Var tokens, Index block, MhaParams& p) {
  const Index d = tokens.cols();
  if (d != p.dim()) throw Error("token dim does not match attention params");
  if (d % p.n_heads != 0) throw Error("model dim not divisible by heads");
  Tape& t = *tokens.tape();
  Var q = matmul(tokens, t.param(p.wq));
  Var k = matmul(tokens, t.param(p.wk));
  Var v = matmul(tokens, t.param(p.wv));
  const Index dh = d / p.n_heads;
  std::vector<Var> heads;
  for (int h = 0; h < p.n_heads; ++h)
    heads.push_back(block_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), slice_cols(v, h * dh, dh), block));
  Var cat = p.n_heads == 1 ? heads[0] : concat_cols(heads);
  return affine(cat, t.param(p.wo), t.param(p.bo));
}

// Single sequence form: tokens is T×d.
inline Var multi_head_attention(Var tokens, MhaParams& p) { return multi_head_attention(tokens, tokens.rows(), p); }

}  // namespace egl::nk
