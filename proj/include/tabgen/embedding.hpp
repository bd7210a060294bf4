#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tabgen/adam.hpp"
#include "tabgen/autograd.hpp"
#include "tabgen/dataio.hpp"

namespace tabgen {

/// Per-feature projections into token space. Numeric features share one
/// d-vector across samples; categorical features act as a lookup table
/// with a per-feature bias.
struct TokenizerParams {
  struct NumFeature {
    ag::Var w;  // [1,d]
    ag::Var b;  // [1,d]
  };
  struct CatFeature {
    ag::Var table;  // [C,d]
    ag::Var b;      // [1,d]
  };
  std::size_t d = 0;
  std::vector<NumFeature> numeric;      // schema order among numericals
  std::vector<CatFeature> categorical;  // schema order among categoricals
};

struct DetokenizerParams {
  struct NumFeature {
    ag::Var w;  // [d,1]
    ag::Var b;  // [1]
  };
  struct CatFeature {
    ag::Var W;  // [d,C]
    ag::Var b;  // [1,C]
  };
  std::size_t d = 0;
  std::vector<NumFeature> numeric;
  std::vector<CatFeature> categorical;
};

/// Detokenizer output, kept per feature type. Categorical entries carry
/// logits; probabilities are their row softmax (losses use the logits
/// through log-softmax instead of renormalizing probabilities).
struct DetokenizedBatch {
  std::vector<ag::Var> numeric;     // each [b,1]
  std::vector<ag::Var> cat_logits;  // each [b,C_j]
};

TokenizerParams build_tokenizer(const Schema& schema, std::size_t d,
                                std::uint64_t seed, ParamStore& store,
                                const std::string& prefix = "tokenizer");
DetokenizerParams build_detokenizer(const Schema& schema, std::size_t d,
                                    std::uint64_t seed, ParamStore& store,
                                    const std::string& prefix = "detokenizer");

/// x_batch is a [b, M'] matrix in the Eq.-2 layout for `schema`.
/// Returns the [b, M, d] embedding matrix. One-hot blocks must be exact
/// (row max == 1).
ag::Var tokenize(const Tensor& x_batch, const Schema& schema,
                 const TokenizerParams& params);

/// E_tilde is [b, M, d]; projects each token back to feature space.
DetokenizedBatch detokenize(const ag::Var& E_tilde, const Schema& schema,
                            const DetokenizerParams& params);

/// Assemble a [b, M'] matrix from a detokenized batch: numeric values
/// followed by categorical probability blocks (softmax of the logits).
Tensor assemble_output(const DetokenizedBatch& out, const Schema& schema);

}  // namespace tabgen
