#include "tabgen/embedding.hpp"

#include <cmath>
#include <stdexcept>

#include "tabgen/rng.hpp"

namespace tabgen {

TokenizerParams build_tokenizer(const Schema& schema, std::size_t d,
                                std::uint64_t seed, ParamStore& store,
                                const std::string& prefix) {
  if (d < 1) throw std::invalid_argument("tokenizer: d must be >= 1");
  TokenizerParams p;
  p.d = d;
  for (const auto& col : schema.columns) {
    std::string base = prefix + "/" + col.name;
    if (col.kind == ColumnKind::Numerical) {
      TokenizerParams::NumFeature f;
      f.w = store.add(base + "/w",
                      seeded_init({1, d}, InitScheme::KaimingUniform,
                                  mix_seed(seed, base + "/w")));
      f.b = store.add(base + "/b", Tensor({1, d}));
      p.numeric.push_back(f);
    } else {
      TokenizerParams::CatFeature f;
      f.table = store.add(base + "/W",
                          seeded_init({col.categories.size(), d},
                                      InitScheme::Normal001,
                                      mix_seed(seed, base + "/W")));
      f.b = store.add(base + "/b", Tensor({1, d}));
      p.categorical.push_back(f);
    }
  }
  return p;
}

DetokenizerParams build_detokenizer(const Schema& schema, std::size_t d,
                                    std::uint64_t seed, ParamStore& store,
                                    const std::string& prefix) {
  DetokenizerParams p;
  p.d = d;
  for (const auto& col : schema.columns) {
    std::string base = prefix + "/" + col.name;
    if (col.kind == ColumnKind::Numerical) {
      DetokenizerParams::NumFeature f;
      f.w = store.add(base + "/w",
                      seeded_init({d, 1}, InitScheme::KaimingUniform,
                                  mix_seed(seed, base + "/w")));
      f.b = store.add(base + "/b", Tensor({1}));
      p.numeric.push_back(f);
    } else {
      DetokenizerParams::CatFeature f;
      f.W = store.add(base + "/W",
                      seeded_init({d, col.categories.size()},
                                  InitScheme::KaimingUniform,
                                  mix_seed(seed, base + "/W")));
      f.b = store.add(base + "/b", Tensor({1, col.categories.size()}));
      p.categorical.push_back(f);
    }
  }
  return p;
}

ag::Var tokenize(const Tensor& x_batch, const Schema& schema,
                 const TokenizerParams& params) {
  if (x_batch.ndim() != 2 || x_batch.shape[1] != schema_width(schema))
    throw std::invalid_argument("tokenize: x layout does not match schema");
  const std::size_t b = x_batch.shape[0];
  const std::size_t w = x_batch.shape[1];
  const std::size_t d = params.d;
  std::vector<ag::Var> tokens;
  std::size_t ni = 0, ci = 0;
  for (std::size_t fi = 0; fi < schema.columns.size(); ++fi) {
    auto [off, span] = schema_feature_span(schema, fi);
    if (schema.columns[fi].kind == ColumnKind::Numerical) {
      Tensor col({b, 1});
      for (std::size_t r = 0; r < b; ++r)
        col.data[r] = x_batch.data[r * w + off];
      auto tok = ag::add(ag::matmul(ag::constant(std::move(col)),
                                    params.numeric[ni].w),
                         params.numeric[ni].b);
      tokens.push_back(ag::reshape(tok, {b, 1, d}));
      ++ni;
    } else {
      std::vector<std::size_t> idx(b);
      for (std::size_t r = 0; r < b; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < span; ++j)
          if (x_batch.data[r * w + off + j] > x_batch.data[r * w + off + best])
            best = j;
        if (x_batch.data[r * w + off + best] < real(1))
          throw std::invalid_argument("tokenize: one-hot block for column " +
                                      schema.columns[fi].name +
                                      " is not one-hot");
        idx[r] = best;
      }
      auto tok = ag::add(ag::embedding_lookup(params.categorical[ci].table, idx),
                         params.categorical[ci].b);
      tokens.push_back(ag::reshape(tok, {b, 1, d}));
      ++ci;
    }
  }
  return ag::concat(tokens, 1);
}

DetokenizedBatch detokenize(const ag::Var& E_tilde, const Schema& schema,
                            const DetokenizerParams& params) {
  const auto& sh = E_tilde->value.shape;
  if (sh.size() != 3 || sh[1] != schema.columns.size() || sh[2] != params.d)
    throw std::invalid_argument("detokenize: token shape mismatch");
  const std::size_t b = sh[0];
  const std::size_t d = params.d;
  DetokenizedBatch out;
  std::size_t ni = 0, ci = 0;
  for (std::size_t fi = 0; fi < schema.columns.size(); ++fi) {
    auto e = ag::reshape(ag::slice(E_tilde, 1, fi, 1), {b, d});
    if (schema.columns[fi].kind == ColumnKind::Numerical) {
      out.numeric.push_back(
          ag::add(ag::matmul(e, params.numeric[ni].w), params.numeric[ni].b));
      ++ni;
    } else {
      out.cat_logits.push_back(
          ag::add(ag::matmul(e, params.categorical[ci].W),
                  params.categorical[ci].b));
      ++ci;
    }
  }
  return out;
}

Tensor assemble_output(const DetokenizedBatch& out, const Schema& schema) {
  const std::size_t w = schema_width(schema);
  std::size_t b = 0;
  if (!out.numeric.empty())
    b = out.numeric[0]->value.shape[0];
  else if (!out.cat_logits.empty())
    b = out.cat_logits[0]->value.shape[0];
  Tensor X({b, w});
  std::size_t ni = 0, ci = 0;
  for (std::size_t fi = 0; fi < schema.columns.size(); ++fi) {
    auto [off, span] = schema_feature_span(schema, fi);
    if (schema.columns[fi].kind == ColumnKind::Numerical) {
      const auto& v = out.numeric[ni]->value;
      for (std::size_t r = 0; r < b; ++r) X.data[r * w + off] = v.data[r];
      ++ni;
    } else {
      auto probs = ag::softmax(out.cat_logits[ci]);
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < span; ++j)
          X.data[r * w + off + j] = probs->value.data[r * span + j];
      ++ci;
    }
  }
  return X;
}

}  // namespace tabgen
