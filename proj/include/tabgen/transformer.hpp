#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tabgen/adam.hpp"
#include "tabgen/autograd.hpp"

namespace tabgen {

enum class AttentionScale { PaperDk, SqrtDk };

struct TransformerConfig {
  std::size_t blocks = 4;
  std::size_t heads = 1;
  std::size_t hidden = 128;  // feed-forward width
  real dropout = real(0);    // kept at 0; forward is deterministic
  AttentionScale attention_scale = AttentionScale::PaperDk;
  bool final_norm = false;

  void validate() const;
};

struct AttentionParams {
  ag::Var wq, wk, wv;  // [d,d]
  ag::Var wo;          // [d,d] output projection
};

struct BlockParams {
  AttentionParams attn;
  ag::Var ln1_gain, ln1_bias;  // [d]
  ag::Var ln2_gain, ln2_bias;  // [d]
  ag::Var ffn_w1, ffn_b1;      // [d,hidden], [1,hidden]
  ag::Var ffn_w2, ffn_b2;      // [hidden,d], [1,d]
};

struct TransformerParams {
  std::size_t d = 0;
  TransformerConfig config;
  std::vector<BlockParams> block_params;
  ag::Var final_gain, final_bias;  // only when config.final_norm
};

/// Labeled per-layer activation snapshots, detached from the tape, in
/// forward order: in, n1, attn, res, n2, ffn, out per block.
struct CaptureRecord {
  std::size_t block = 0;
  std::string label;
  Tensor snapshot;  // [b, M, d]
};

struct CaptureTrace {
  std::vector<CaptureRecord> records;
};

TransformerParams build_transformer(std::size_t d, const TransformerConfig& cfg,
                                    std::uint64_t seed, ParamStore& store,
                                    const std::string& prefix);

/// Softmax(QK^T / s) V with per-token projections; s is d_k (per-head
/// width) in paper mode, sqrt(d_k) otherwise.
ag::Var attention(const ag::Var& E, const AttentionParams& params,
                  std::size_t heads, AttentionScale scale_mode);

ag::Var transformer_block(const ag::Var& E, const BlockParams& params,
                          const TransformerConfig& cfg, std::size_t block_index,
                          CaptureTrace* capture = nullptr);

ag::Var transformer_forward(const ag::Var& E, const TransformerParams& params,
                            CaptureTrace* capture = nullptr);

void export_trace(const CaptureTrace& trace,
                  const std::filesystem::path& dir);

}  // namespace tabgen
