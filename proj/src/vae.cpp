#include "tabgen/vae.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "tabgen/rng.hpp"
#include "tabgen/serialize.hpp"

namespace tabgen {

using nlohmann::json;

// ---- variant --------------------------------------------------------------

void ModelVariant::validate() const {
  // admissible: FFF, TFF, TTF, TTT, FTT, FFT
  if ((enc && !lat && dec) || (!enc && lat && !dec))
    throw std::invalid_argument("invalid model variant: " + name());
}

std::string ModelVariant::name() const {
  if (!enc && !lat && !dec) return "VAE";
  std::string s;
  if (enc) s += "E";
  if (lat) s += "L";
  if (dec) s += "D";
  return s + "-VAE";
}

ModelVariant ModelVariant::from_name(const std::string& name) {
  static const std::pair<const char*, ModelVariant> table[] = {
      {"VAE", {false, false, false}},    {"E-VAE", {true, false, false}},
      {"EL-VAE", {true, true, false}},   {"ELD-VAE", {true, true, true}},
      {"LD-VAE", {false, true, true}},   {"D-VAE", {false, false, true}},
  };
  for (const auto& [n, v] : table)
    if (name == n) return v;
  throw std::invalid_argument("unknown model variant: " + name);
}

void ModelConfig::validate() const {
  variant.validate();
  transformer.validate();
  if (d < 1 || hidden_tokens < 1 || latent_tokens < 1)
    throw std::invalid_argument("model config: dimensions must be >= 1");
}

// ---- build ----------------------------------------------------------------

VAEModel build_model(const Schema& schema, const ModelConfig& config,
                     std::uint64_t seed) {
  config.validate();
  VAEModel m;
  m.schema = schema;
  m.config = config;
  m.seed = seed;
  m.store.init_seed = seed;
  const std::size_t d = config.d;
  const std::size_t M = schema.columns.size();
  const std::size_t H = config.hidden_tokens;
  const std::size_t L = config.latent_tokens;

  m.tokenizer = build_tokenizer(schema, d, seed, m.store, "tokenizer");
  m.detokenizer = build_detokenizer(schema, d, seed, m.store, "detokenizer");

  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    return m.store.add(name, seeded_init({in, out}, InitScheme::KaimingUniform,
                                         mix_seed(seed, name)));
  };
  auto bias = [&](const std::string& name, std::size_t n) {
    return m.store.add(name, Tensor({1, n}));
  };
  m.enc_fc_w = lin("encoder/fc_w", M * d, H * d);
  m.enc_fc_b = bias("encoder/fc_b", H * d);
  m.mu_w = lin("encoder/mu_w", H * d, L * d);
  m.mu_b = bias("encoder/mu_b", L * d);
  m.logvar_w = lin("encoder/logvar_w", H * d, L * d);
  m.logvar_b = bias("encoder/logvar_b", L * d);
  m.dec_fc1_w = lin("decoder/fc1_w", L * d, H * d);
  m.dec_fc1_b = bias("decoder/fc1_b", H * d);
  m.dec_fc2_w = lin("decoder/fc2_w", H * d, M * d);
  m.dec_fc2_b = bias("decoder/fc2_b", M * d);

  // Transformer stacks exist iff the variant places them; seeds are
  // mixed from the stack's own name so shared placements initialize
  // identically across variants.
  if (config.variant.enc)
    m.enc_tf = build_transformer(d, config.transformer, seed, m.store,
                                 "transformer_enc");
  if (config.variant.lat)
    m.lat_tf = build_transformer(d, config.transformer, seed, m.store,
                                 "transformer_lat");
  if (config.variant.dec)
    m.dec_tf = build_transformer(d, config.transformer, seed, m.store,
                                 "transformer_dec");
  return m;
}

// ---- forward --------------------------------------------------------------

std::pair<ag::Var, ag::Var> encode(const VAEModel& model, const Tensor& x_batch,
                                   CaptureTrace* enc_capture) {
  const std::size_t b = x_batch.shape[0];
  const std::size_t d = model.config.d;
  const std::size_t M = model.n_features();
  auto E = tokenize(x_batch, model.schema, model.tokenizer);
  if (model.enc_tf) E = transformer_forward(E, *model.enc_tf, enc_capture);
  auto flat = ag::reshape(E, {b, M * d});
  auto h = ag::silu(ag::add(ag::matmul(flat, model.enc_fc_w), model.enc_fc_b));
  auto mu = ag::add(ag::matmul(h, model.mu_w), model.mu_b);
  auto logvar = ag::add(ag::matmul(h, model.logvar_w), model.logvar_b);
  return {mu, logvar};
}

DetokenizedBatch decode(const VAEModel& model, const ag::Var& z,
                        CaptureTrace* lat_capture, CaptureTrace* dec_capture) {
  const std::size_t b = z->value.shape[0];
  const std::size_t d = model.config.d;
  const std::size_t M = model.n_features();
  const std::size_t L = model.config.latent_tokens;
  auto zt = ag::reshape(z, {b, L, d});
  if (model.lat_tf) zt = transformer_forward(zt, *model.lat_tf, lat_capture);
  auto zflat = ag::reshape(zt, {b, L * d});
  auto h = ag::silu(
      ag::add(ag::matmul(zflat, model.dec_fc1_w), model.dec_fc1_b));
  auto eflat = ag::add(ag::matmul(h, model.dec_fc2_w), model.dec_fc2_b);
  auto E = ag::reshape(eflat, {b, M, d});
  if (model.dec_tf) E = transformer_forward(E, *model.dec_tf, dec_capture);
  return detokenize(E, model.schema, model.detokenizer);
}

// ---- loss -----------------------------------------------------------------

ElboTerms elbo_loss(const VAEModel& model, const Tensor& x_batch,
                    const Tensor& eps) {
  const std::size_t b = x_batch.shape[0];
  auto [mu, logvar] = encode(model, x_batch);
  if (eps.shape != mu->value.shape)
    throw std::invalid_argument("elbo_loss: eps shape mismatch");
  auto z = ag::reparameterize(mu, logvar, ag::constant(eps));
  auto out = decode(model, z);

  const real inv_b = real(1) / static_cast<real>(b);
  const std::size_t w = model.input_width();

  // reconstruction: squared error over numeric features, cross-entropy
  // over categorical ones; sum over features, mean over batch
  std::vector<ag::Var> terms;
  std::size_t ni = 0, ci = 0;
  for (std::size_t fi = 0; fi < model.schema.columns.size(); ++fi) {
    auto [off, span] = schema_feature_span(model.schema, fi);
    if (model.schema.columns[fi].kind == ColumnKind::Numerical) {
      Tensor target({b, 1});
      for (std::size_t r = 0; r < b; ++r)
        target.data[r] = x_batch.data[r * w + off];
      auto diff = ag::sub(out.numeric[ni], ag::constant(std::move(target)));
      terms.push_back(ag::sum(ag::square(diff)));
      ++ni;
    } else {
      Tensor onehot({b, span});
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < span; ++j)
          onehot.data[r * span + j] = x_batch.data[r * w + off + j];
      auto logp = ag::log_softmax(out.cat_logits[ci]);
      terms.push_back(
          ag::scale(ag::sum(ag::mul(ag::constant(std::move(onehot)), logp)),
                    real(-1)));
      ++ci;
    }
  }
  ag::Var recon = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) recon = ag::add(recon, terms[i]);
  recon = ag::scale(recon, inv_b);

  // KL(N(mu, sigma^2) || N(0, I)) = -1/2 sum(1 + logvar - mu^2 - e^logvar)
  auto kl_inner = ag::sub(ag::add_scalar(logvar, real(1)),
                          ag::add(ag::square(mu), ag::vexp(logvar)));
  auto kl = ag::scale(ag::sum(kl_inner), real(-0.5) * inv_b);

  ElboTerms t{ag::add(recon, kl), recon, kl};
  if (!std::isfinite(static_cast<double>(t.reconstruction->value.data[0])))
    throw std::runtime_error("elbo_loss: non-finite reconstruction term");
  if (!std::isfinite(static_cast<double>(t.kl->value.data[0])))
    throw std::runtime_error("elbo_loss: non-finite KL term");
  return t;
}

// ---- training -------------------------------------------------------------

std::size_t batch_size_rule(std::size_t n_train) {
  double target = static_cast<double>(n_train) / 30.0;
  double p = std::round(std::log2(std::max(target, 1.0)));
  std::size_t bs = static_cast<std::size_t>(std::pow(2.0, p));
  bs = std::clamp<std::size_t>(bs, 32, 512);
  return std::min(bs, n_train);
}

namespace {

Tensor draw_eps(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor eps({rows, cols});
  for (auto& v : eps.data) v = static_cast<real>(rng.normal());
  return eps;
}

}  // namespace

TrainReport train(VAEModel& model, const PreprocessedDataset& ds,
                  TrainOptions opts, std::uint64_t seed) {
  if (schema_width(ds.schema) != model.input_width())
    throw std::invalid_argument("train: dataset layout does not match model");
  auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  const std::size_t n_train = ds.splits.train.size();
  const std::size_t ld =
      model.config.latent_tokens * model.config.d;
  const std::size_t bs =
      opts.batch_override ? opts.batch_override : batch_size_rule(n_train);
  report.batch_size = bs;
  if (opts.epochs == 0) return report;

  AdamState adam;
  Rng rng(mix_seed(seed, "train"));
  std::vector<std::size_t> order = ds.splits.train;

  Tensor val_x = ds.rows_matrix(ds.splits.val);

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    EpochRecord rec;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < n_train; start += bs) {
      std::size_t len = std::min(bs, n_train - start);
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + start + len);
      Tensor xb = ds.rows_matrix(idx);
      Tensor eps = draw_eps(len, ld, rng);
      ElboTerms terms;
      try {
        terms = elbo_loss(model, xb, eps);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(n_batches) + ": " + e.what());
      }
      model.store.zero_grad();
      ag::backward(terms.total);
      adam_step(model.store, adam);
      rec.train_recon += terms.reconstruction->value.data[0];
      rec.train_kl += terms.kl->value.data[0];
      rec.train_total += terms.total->value.data[0];
      ++n_batches;
    }
    rec.train_recon /= n_batches;
    rec.train_kl /= n_batches;
    rec.train_total /= n_batches;
    if (!val_x.shape.empty() && val_x.shape[0] > 0) {
      Tensor eps = draw_eps(val_x.shape[0], ld, rng);
      ElboTerms terms = elbo_loss(model, val_x, eps);
      rec.val_recon = terms.reconstruction->value.data[0];
      rec.val_kl = terms.kl->value.data[0];
      rec.val_total = terms.total->value.data[0];
    }
    report.epochs.push_back(rec);
    if (opts.epoch_callback) opts.epoch_callback(epoch, model);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

// ---- generation -----------------------------------------------------------

namespace {

/// Harden categorical probability blocks to exact one-hot rows.
void harden(Tensor& X, const Schema& schema, bool multinomial, Rng& rng) {
  const std::size_t w = schema_width(schema);
  for (std::size_t fi = 0; fi < schema.columns.size(); ++fi) {
    if (schema.columns[fi].kind != ColumnKind::Categorical) continue;
    auto [off, span] = schema_feature_span(schema, fi);
    for (std::size_t r = 0; r < X.shape[0]; ++r) {
      real* block = &X.data[r * w + off];
      std::size_t pick = 0;
      if (multinomial) {
        double u = rng.uniform(0.0, 1.0);
        double acc = 0;
        for (std::size_t j = 0; j < span; ++j) {
          acc += block[j];
          if (u <= acc) {
            pick = j;
            break;
          }
          if (j == span - 1) pick = j;
        }
      } else {
        for (std::size_t j = 1; j < span; ++j)
          if (block[j] > block[pick]) pick = j;
      }
      std::fill(block, block + span, real(0));
      block[pick] = real(1);
    }
  }
}

}  // namespace

Tensor sample(const VAEModel& model, std::size_t n, std::uint64_t seed) {
  const std::size_t ld = model.config.latent_tokens * model.config.d;
  if (n == 0) return Tensor({0, model.input_width()});
  Rng rng(mix_seed(seed, "sample"));
  Tensor z = draw_eps(n, ld, rng);
  auto out = decode(model, ag::constant(std::move(z)));
  Tensor X = assemble_output(out, model.schema);
  harden(X, model.schema, model.config.multinomial_sampling, rng);
  return X;
}

Tensor reconstruct(const VAEModel& model, const Tensor& x_batch,
                   std::uint64_t seed, bool deterministic,
                   ForwardCaptures* captures) {
  if (x_batch.ndim() != 2 || x_batch.shape[1] != model.input_width())
    throw std::invalid_argument("reconstruct: layout mismatch");
  const std::size_t b = x_batch.shape[0];
  const std::size_t ld = model.config.latent_tokens * model.config.d;
  Rng rng(mix_seed(seed, "reconstruct"));
  auto [mu, logvar] = encode(model, x_batch,
                             captures ? &captures->enc : nullptr);
  Tensor eps = deterministic ? Tensor({b, ld}) : draw_eps(b, ld, rng);
  auto z = ag::reparameterize(mu, logvar, ag::constant(std::move(eps)));
  auto out = decode(model, z, captures ? &captures->lat : nullptr,
                    captures ? &captures->dec : nullptr);
  Tensor X = assemble_output(out, model.schema);
  harden(X, model.schema, model.config.multinomial_sampling, rng);
  return X;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out)
    if (c == '/') c = '.';
  return out;
}

json config_to_json(const ModelConfig& c) {
  return json{{"d", c.d},
              {"hidden_tokens", c.hidden_tokens},
              {"latent_tokens", c.latent_tokens},
              {"variant", c.variant.name()},
              {"multinomial_sampling", c.multinomial_sampling},
              {"transformer",
               {{"blocks", c.transformer.blocks},
                {"heads", c.transformer.heads},
                {"hidden", c.transformer.hidden},
                {"dropout", c.transformer.dropout},
                {"attention_scale",
                 c.transformer.attention_scale == AttentionScale::PaperDk
                     ? "paper_dk"
                     : "sqrt_dk"},
                {"final_norm", c.transformer.final_norm}}}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.hidden_tokens = j.at("hidden_tokens").get<std::size_t>();
  c.latent_tokens = j.at("latent_tokens").get<std::size_t>();
  c.variant = ModelVariant::from_name(j.at("variant").get<std::string>());
  c.multinomial_sampling = j.value("multinomial_sampling", false);
  const json& jt = j.at("transformer");
  c.transformer.blocks = jt.at("blocks").get<std::size_t>();
  c.transformer.heads = jt.at("heads").get<std::size_t>();
  c.transformer.hidden = jt.at("hidden").get<std::size_t>();
  c.transformer.dropout = jt.at("dropout").get<real>();
  c.transformer.attention_scale = jt.value("attention_scale", "paper_dk") ==
                                          std::string("sqrt_dk")
                                      ? AttentionScale::SqrtDk
                                      : AttentionScale::PaperDk;
  c.transformer.final_norm = jt.value("final_norm", false);
  return c;
}

std::uint64_t schema_hash(const Schema& s) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const std::string& str) {
    for (unsigned char c : str) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  for (const auto& c : s.columns) {
    feed(c.name);
    feed(c.kind == ColumnKind::Numerical ? "num" : "cat");
    for (const auto& cat : c.categories) feed(cat);
  }
  feed(s.target);
  return h;
}

}  // namespace

void save_model(const VAEModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json names = json::array();
  for (const auto& [name, p] : model.store.params) {
    std::string fname = sanitize(name) + ".f32";
    write_f32(dir / fname, p->value.data);
    names.push_back({{"name", name}, {"file", fname}, {"shape", p->value.shape}});
  }
  json manifest{{"params", names}, {"seed", model.seed}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";

  json schema_cols = json::array();
  for (const auto& c : model.schema.columns) {
    json jc{{"name", c.name},
            {"kind", c.kind == ColumnKind::Numerical ? "numerical" : "categorical"}};
    if (c.kind == ColumnKind::Categorical) jc["categories"] = c.categories;
    schema_cols.push_back(jc);
  }
  json mj{{"config", config_to_json(model.config)},
          {"schema",
           {{"columns", schema_cols},
            {"target", model.schema.target},
            {"task", model.schema.task == Task::Binary ? "binary" : "multiclass"}}},
          {"schema_hash", schema_hash(model.schema)},
          {"seed", model.seed}};
  std::ofstream(dir / "model.json") << mj.dump(2) << "\n";
}

VAEModel load_model(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is) throw std::runtime_error("cannot open model.json in " + dir.string());
  json mj;
  is >> mj;
  Schema schema;
  for (const auto& jc : mj.at("schema").at("columns")) {
    Column c;
    c.name = jc.at("name").get<std::string>();
    c.kind = jc.at("kind") == "numerical" ? ColumnKind::Numerical
                                          : ColumnKind::Categorical;
    if (jc.contains("categories"))
      c.categories = jc["categories"].get<std::vector<std::string>>();
    schema.columns.push_back(std::move(c));
  }
  schema.target = mj["schema"].value("target", "");
  schema.task = mj["schema"].value("task", "binary") == "multiclass"
                    ? Task::Multiclass
                    : Task::Binary;
  ModelConfig config = config_from_json(mj.at("config"));
  std::uint64_t seed = mj.at("seed").get<std::uint64_t>();
  VAEModel model = build_model(schema, config, seed);

  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw std::runtime_error("cannot open checkpoint manifest");
  json manifest;
  ms >> manifest;
  for (const auto& jp : manifest.at("params")) {
    std::string name = jp.at("name").get<std::string>();
    auto p = model.store.get(name);
    auto data = read_f32(dir / jp.at("file").get<std::string>());
    if (data.size() != p->value.size())
      throw std::runtime_error("checkpoint size mismatch for " + name);
    p->value.data = std::move(data);
  }
  return model;
}

}  // namespace tabgen
