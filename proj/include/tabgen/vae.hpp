#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tabgen/adam.hpp"
#include "tabgen/dataio.hpp"
#include "tabgen/embedding.hpp"
#include "tabgen/transformer.hpp"

namespace tabgen {

/// Which components carry a Transformer stack. Only six combinations
/// are admissible; encoder-without-latent-with-decoder and latent-only
/// placements are not part of the study.
struct ModelVariant {
  bool enc = false;
  bool lat = false;
  bool dec = false;

  void validate() const;
  std::string name() const;
  static ModelVariant from_name(const std::string& name);
  bool operator==(const ModelVariant&) const = default;
};

struct ModelConfig {
  std::size_t d = 4;
  std::size_t hidden_tokens = 128;  // H
  std::size_t latent_tokens = 64;   // L
  TransformerConfig transformer;    // blocks=4, heads=1, hidden=128
  ModelVariant variant;
  bool multinomial_sampling = false;

  void validate() const;
};

struct VAEModel {
  Schema schema;
  ModelConfig config;
  std::uint64_t seed = 0;
  ParamStore store;

  TokenizerParams tokenizer;
  DetokenizerParams detokenizer;
  std::optional<TransformerParams> enc_tf, lat_tf, dec_tf;

  ag::Var enc_fc_w, enc_fc_b;    // [M*d, H*d]
  ag::Var mu_w, mu_b;            // [H*d, L*d]
  ag::Var logvar_w, logvar_b;    // [H*d, L*d]
  ag::Var dec_fc1_w, dec_fc1_b;  // [L*d, H*d]
  ag::Var dec_fc2_w, dec_fc2_b;  // [H*d, M*d]

  std::size_t n_features() const { return schema.columns.size(); }
  std::size_t input_width() const { return schema_width(schema); }
};

struct ElboTerms {
  ag::Var total;           // reconstruction + kl, minimized
  ag::Var reconstruction;  // squared error + cross-entropy, mean over batch
  ag::Var kl;              // analytic KL to the standard-normal prior
};

struct EpochRecord {
  double train_recon = 0, train_kl = 0, train_total = 0;
  double val_recon = 0, val_kl = 0, val_total = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;
  std::size_t batch_size = 0;
};

struct ForwardCaptures {
  CaptureTrace enc, lat, dec;
};

VAEModel build_model(const Schema& schema, const ModelConfig& config,
                     std::uint64_t seed);

/// Encoder pass only; returns flattened (mu, logvar), each [b, L*d].
std::pair<ag::Var, ag::Var> encode(const VAEModel& model, const Tensor& x_batch,
                                   CaptureTrace* enc_capture = nullptr);

/// Decoder pass from a latent matrix z [b, L*d] down to per-feature
/// outputs.
DetokenizedBatch decode(const VAEModel& model, const ag::Var& z,
                        CaptureTrace* lat_capture = nullptr,
                        CaptureTrace* dec_capture = nullptr);

ElboTerms elbo_loss(const VAEModel& model, const Tensor& x_batch,
                    const Tensor& eps);

struct TrainOptions {
  std::size_t epochs = 500;
  std::size_t batch_override = 0;  // 0 = paper-scale rule from N_train
  // invoked after each finished epoch (monitoring; must not mutate)
  std::function<void(std::size_t epoch, const VAEModel&)> epoch_callback;
};

/// Batch size rule: nearest power of two to N_train/30, clamped to
/// [32, 512] (and to N_train).
std::size_t batch_size_rule(std::size_t n_train);

TrainReport train(VAEModel& model, const PreprocessedDataset& ds,
                  TrainOptions opts, std::uint64_t seed);

/// Draw n synthetic rows from the prior. Categorical blocks are hard
/// one-hot (argmax of the detokenizer simplex, or a multinomial draw
/// when configured).
Tensor sample(const VAEModel& model, std::size_t n, std::uint64_t seed);

/// Full encoder -> reparameterize -> decoder pass; deterministic mode
/// forces eps = 0.
Tensor reconstruct(const VAEModel& model, const Tensor& x_batch,
                   std::uint64_t seed, bool deterministic = false,
                   ForwardCaptures* captures = nullptr);

void save_model(const VAEModel& model, const std::filesystem::path& dir);
VAEModel load_model(const std::filesystem::path& dir);

}  // namespace tabgen
