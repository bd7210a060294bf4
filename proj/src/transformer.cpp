#include "tabgen/transformer.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tabgen/rng.hpp"
#include "tabgen/serialize.hpp"

namespace tabgen {

void TransformerConfig::validate() const {
  if (blocks < 1) throw std::invalid_argument("transformer: blocks must be >= 1");
  if (heads < 1) throw std::invalid_argument("transformer: heads must be >= 1");
  if (hidden < 1) throw std::invalid_argument("transformer: hidden must be >= 1");
  if (!(dropout >= real(0) && dropout < real(1)))
    throw std::invalid_argument("transformer: dropout outside [0,1)");
}

TransformerParams build_transformer(std::size_t d, const TransformerConfig& cfg,
                                    std::uint64_t seed, ParamStore& store,
                                    const std::string& prefix) {
  cfg.validate();
  if (d % cfg.heads != 0)
    throw std::invalid_argument("transformer: heads must divide d");
  TransformerParams p;
  p.d = d;
  p.config = cfg;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    return store.add(name, seeded_init({in, out}, InitScheme::KaimingUniform,
                                       mix_seed(seed, name)));
  };
  for (std::size_t bi = 0; bi < cfg.blocks; ++bi) {
    std::string base = prefix + "/block" + std::to_string(bi);
    BlockParams bp;
    bp.attn.wq = lin(base + "/wq", d, d);
    bp.attn.wk = lin(base + "/wk", d, d);
    bp.attn.wv = lin(base + "/wv", d, d);
    bp.attn.wo = lin(base + "/wo", d, d);
    bp.ln1_gain = store.add(base + "/ln1_gain", Tensor::full({d}, real(1)));
    bp.ln1_bias = store.add(base + "/ln1_bias", Tensor({d}));
    bp.ln2_gain = store.add(base + "/ln2_gain", Tensor::full({d}, real(1)));
    bp.ln2_bias = store.add(base + "/ln2_bias", Tensor({d}));
    bp.ffn_w1 = lin(base + "/ffn_w1", d, cfg.hidden);
    bp.ffn_b1 = store.add(base + "/ffn_b1", Tensor({1, cfg.hidden}));
    bp.ffn_w2 = lin(base + "/ffn_w2", cfg.hidden, d);
    bp.ffn_b2 = store.add(base + "/ffn_b2", Tensor({1, d}));
    p.block_params.push_back(bp);
  }
  if (cfg.final_norm) {
    p.final_gain = store.add(prefix + "/final_gain", Tensor::full({d}, real(1)));
    p.final_bias = store.add(prefix + "/final_bias", Tensor({d}));
  }
  return p;
}

namespace {

// per-token linear map on a [b,M,d] tensor
ag::Var token_linear(const ag::Var& E, const ag::Var& W) {
  const auto& sh = E->value.shape;
  auto flat = ag::reshape(E, {sh[0] * sh[1], sh[2]});
  auto out = ag::matmul(flat, W);
  return ag::reshape(out, {sh[0], sh[1], W->value.shape[1]});
}

ag::Var token_affine(const ag::Var& E, const ag::Var& W, const ag::Var& b) {
  const auto& sh = E->value.shape;
  auto flat = ag::reshape(E, {sh[0] * sh[1], sh[2]});
  auto out = ag::add(ag::matmul(flat, W), b);
  return ag::reshape(out, {sh[0], sh[1], W->value.shape[1]});
}

}  // namespace

ag::Var attention(const ag::Var& E, const AttentionParams& params,
                  std::size_t heads, AttentionScale scale_mode) {
  const auto& sh = E->value.shape;
  if (sh.size() != 3) throw std::invalid_argument("attention: expected [b,M,d]");
  const std::size_t d = sh[2];
  if (params.wq->value.shape[0] != d)
    throw std::invalid_argument("attention: token width mismatch");
  if (d % heads != 0)
    throw std::invalid_argument("attention: heads must divide d");
  const std::size_t dk = d / heads;
  const real s = scale_mode == AttentionScale::PaperDk
                     ? static_cast<real>(dk)
                     : static_cast<real>(std::sqrt(static_cast<double>(dk)));
  auto q = token_linear(E, params.wq);
  auto k = token_linear(E, params.wk);
  auto v = token_linear(E, params.wv);
  std::vector<ag::Var> head_outs;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : ag::slice(q, 2, h * dk, dk);
    auto kh = heads == 1 ? k : ag::slice(k, 2, h * dk, dk);
    auto vh = heads == 1 ? v : ag::slice(v, 2, h * dk, dk);
    auto scores = ag::scale(ag::bmm(qh, kh, /*trans_b=*/true), real(1) / s);
    auto weights = ag::softmax(scores);
    head_outs.push_back(ag::bmm(weights, vh));
  }
  auto merged = heads == 1 ? head_outs[0] : ag::concat(head_outs, 2);
  return token_linear(merged, params.wo);
}

ag::Var transformer_block(const ag::Var& E, const BlockParams& params,
                          const TransformerConfig& cfg, std::size_t block_index,
                          CaptureTrace* capture) {
  auto snap = [&](const char* label, const ag::Var& v) {
    if (capture) capture->records.push_back({block_index, label, v->value});
  };
  snap("in", E);
  auto n1 = ag::layer_norm(E, params.ln1_gain, params.ln1_bias);
  snap("n1", n1);
  auto attn = attention(n1, params.attn, cfg.heads, cfg.attention_scale);
  snap("attn", attn);
  auto res = ag::add(E, attn);
  snap("res", res);
  auto n2 = ag::layer_norm(res, params.ln2_gain, params.ln2_bias);
  snap("n2", n2);
  auto ffn = token_affine(
      ag::silu(token_affine(n2, params.ffn_w1, params.ffn_b1)), params.ffn_w2,
      params.ffn_b2);
  snap("ffn", ffn);
  auto out = ag::add(res, ffn);
  snap("out", out);
  return out;
}

ag::Var transformer_forward(const ag::Var& E, const TransformerParams& params,
                            CaptureTrace* capture) {
  auto cur = E;
  for (std::size_t bi = 0; bi < params.block_params.size(); ++bi)
    cur = transformer_block(cur, params.block_params[bi], params.config, bi,
                            capture);
  if (params.config.final_norm)
    cur = ag::layer_norm(cur, params.final_gain, params.final_bias);
  return cur;
}

void export_trace(const CaptureTrace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& rec = trace.records[i];
    std::string fname = "rec" + std::to_string(i) + "_block" +
                        std::to_string(rec.block) + "_" + rec.label + ".f32";
    write_f32(dir / fname, rec.snapshot.data);
    index.push_back({{"file", fname},
                     {"block", rec.block},
                     {"label", rec.label},
                     {"shape", rec.snapshot.shape}});
  }
  std::ofstream os(dir / "trace.json");
  os << index.dump(2) << "\n";
}

}  // namespace tabgen
