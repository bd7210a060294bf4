#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tabgen/rng.hpp"
#include "tabgen/vae.hpp"

using namespace tabgen;

namespace {

Schema small_schema() {
  Schema s;
  s.columns = {{"n0", ColumnKind::Numerical, {}},
               {"n1", ColumnKind::Numerical, {}},
               {"c0", ColumnKind::Categorical, {"a", "b", "c"}}};
  s.target = "c0";
  s.task = Task::Multiclass;
  return s;
}

ModelConfig small_config(const std::string& variant = "VAE") {
  ModelConfig c;
  c.d = 2;
  c.hidden_tokens = 4;
  c.latent_tokens = 2;
  c.transformer.blocks = 2;
  c.transformer.hidden = 4;
  c.variant = ModelVariant::from_name(variant);
  return c;
}

PreprocessedDataset small_dataset(std::size_t n, std::uint64_t seed) {
  RawTable t;
  t.schema = small_schema();
  Rng rng(seed);
  const char* cats[] = {"a", "b", "c"};
  for (std::size_t i = 0; i < n; ++i) {
    double x = rng.normal();
    t.rows.push_back({Cell::number(x), Cell::number(0.5 * x + rng.normal()),
                      Cell::category(cats[rng.index(3)])});
  }
  return preprocess(t, seed + 1);
}

void fill(const ag::Var& v, real x) {
  std::fill(v->value.data.begin(), v->value.data.end(), x);
}

Tensor batch_rows(const PreprocessedDataset& ds, std::size_t n) {
  std::vector<std::size_t> idx(ds.splits.train.begin(),
                               ds.splits.train.begin() + n);
  return ds.rows_matrix(idx);
}

}  // namespace

TEST_CASE("variant names cover the six studied placements") {
  CHECK(ModelVariant{false, false, false}.name() == "VAE");
  CHECK(ModelVariant{true, false, false}.name() == "E-VAE");
  CHECK(ModelVariant{true, true, false}.name() == "EL-VAE");
  CHECK(ModelVariant{true, true, true}.name() == "ELD-VAE");
  CHECK(ModelVariant{false, true, true}.name() == "LD-VAE");
  CHECK(ModelVariant{false, false, true}.name() == "D-VAE");
  for (const char* n : {"VAE", "E-VAE", "EL-VAE", "ELD-VAE", "LD-VAE", "D-VAE"})
    CHECK(ModelVariant::from_name(n).name() == n);
}

TEST_CASE("excluded placements are rejected") {
  CHECK_THROWS(ModelVariant{true, false, true}.validate());
  CHECK_THROWS(ModelVariant{false, true, false}.validate());
  CHECK_THROWS(ModelVariant::from_name("ED-VAE"));
}

TEST_CASE("shared components initialize identically across variants") {
  Schema s = small_schema();
  auto base = build_model(s, small_config("VAE"), 99);
  auto eld = build_model(s, small_config("ELD-VAE"), 99);
  auto evae = build_model(s, small_config("E-VAE"), 99);
  // non-transformer parameters agree everywhere
  for (const auto& [name, p] : base.store.params) {
    CHECK(eld.store.get(name)->value.data == p->value.data);
  }
  // encoder stacks agree between any two variants that have one
  CHECK(evae.enc_tf.has_value());
  CHECK(eld.enc_tf.has_value());
  CHECK(evae.store.get("transformer_enc/block0/wq")->value.data ==
        eld.store.get("transformer_enc/block0/wq")->value.data);
}

TEST_CASE("variants only build the stacks they place") {
  Schema s = small_schema();
  auto m = build_model(s, small_config("LD-VAE"), 1);
  CHECK(!m.enc_tf.has_value());
  CHECK(m.lat_tf.has_value());
  CHECK(m.dec_tf.has_value());
}

TEST_CASE("zeroed encoder heads give exactly zero KL") {
  Schema s = small_schema();
  auto m = build_model(s, small_config(), 5);
  fill(m.mu_w, 0);
  fill(m.mu_b, 0);
  fill(m.logvar_w, 0);
  fill(m.logvar_b, 0);
  auto ds = small_dataset(60, 7);
  Tensor xb = batch_rows(ds, 8);
  Tensor eps({8, m.config.latent_tokens * m.config.d});
  auto terms = elbo_loss(m, xb, eps);
  CHECK(std::abs(static_cast<double>(terms.kl->value.data[0])) <= 1e-7);
}

TEST_CASE("uniform logits give ln C cross-entropy") {
  Schema s;
  s.columns = {{"c0", ColumnKind::Categorical, {"a", "b", "c", "d"}}};
  auto m = build_model(s, small_config(), 6);
  // zero the last decoder map and the detokenizer so every class logit is 0
  fill(m.dec_fc2_w, 0);
  fill(m.dec_fc2_b, 0);
  fill(m.detokenizer.categorical[0].W, 0);
  fill(m.detokenizer.categorical[0].b, 0);
  Tensor xb({4, 4});
  for (int r = 0; r < 4; ++r) xb.at2(r, r) = 1;
  Tensor eps({4, m.config.latent_tokens * m.config.d});
  auto terms = elbo_loss(m, xb, eps);
  CHECK(static_cast<double>(terms.reconstruction->value.data[0]) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-5));
}

TEST_CASE("batch size rule follows the paper scale") {
  CHECK(batch_size_rule(960) == 32);    // 960/30 = 32 exactly
  CHECK(batch_size_rule(300) == 32);    // clamped up from 8
  CHECK(batch_size_rule(100000) == 512);  // clamped down
  CHECK(batch_size_rule(3840) == 128);
  CHECK(batch_size_rule(20) == 20);     // never above N_train
}

TEST_CASE("zero epochs is a no-op") {
  Schema s = small_schema();
  auto m = build_model(s, small_config(), 8);
  auto before = m.store.get("encoder/fc_w")->value.data;
  auto ds = small_dataset(80, 9);
  auto report = train(m, ds, {.epochs = 0}, 10);
  CHECK(report.epochs.empty());
  CHECK(m.store.get("encoder/fc_w")->value.data == before);
}

TEST_CASE("training reduces the objective and is seed deterministic") {
  Schema s = small_schema();
  auto ds = small_dataset(80, 11);
  auto m1 = build_model(s, small_config("E-VAE"), 12);
  auto m2 = build_model(s, small_config("E-VAE"), 12);
  TrainOptions opts{.epochs = 5, .batch_override = 16};
  auto r1 = train(m1, ds, opts, 13);
  auto r2 = train(m2, ds, opts, 13);
  CHECK(r1.batch_size == 16);
  CHECK(r1.epochs.size() == 5);
  CHECK(r1.epochs.back().train_total < r1.epochs.front().train_total);
  for (const auto& [name, p] : m1.store.params)
    CHECK(m2.store.get(name)->value.data == p->value.data);
  CHECK(r1.epochs.back().val_total == doctest::Approx(r2.epochs.back().val_total));
}

TEST_CASE("sampling returns hardened one-hot rows") {
  Schema s = small_schema();
  auto m = build_model(s, small_config("D-VAE"), 14);
  Tensor X = sample(m, 16, 15);
  REQUIRE(X.shape == std::vector<std::size_t>{16, 5});
  for (int r = 0; r < 16; ++r) {
    double sum = 0;
    for (int j = 2; j < 5; ++j) {
      CHECK((X.at2(r, j) == 0.0 || X.at2(r, j) == 1.0));
      sum += X.at2(r, j);
    }
    CHECK(sum == doctest::Approx(1.0));
  }
  // empty draws keep the layout
  Tensor empty = sample(m, 0, 1);
  CHECK(empty.shape == std::vector<std::size_t>{0, 5});
  // same seed, same table
  CHECK(sample(m, 16, 15).data == X.data);
  CHECK(sample(m, 16, 16).data != X.data);
}

TEST_CASE("deterministic reconstruction ignores the seed") {
  Schema s = small_schema();
  auto m = build_model(s, small_config("EL-VAE"), 17);
  auto ds = small_dataset(60, 18);
  Tensor xb = batch_rows(ds, 6);
  auto a = reconstruct(m, xb, 1, /*deterministic=*/true);
  auto b = reconstruct(m, xb, 2, /*deterministic=*/true);
  CHECK(a.data == b.data);
  CHECK(a.shape == xb.shape);
}

TEST_CASE("reconstruction captures cover the placed stacks") {
  Schema s = small_schema();
  auto m = build_model(s, small_config("ELD-VAE"), 19);
  auto ds = small_dataset(60, 20);
  Tensor xb = batch_rows(ds, 4);
  ForwardCaptures caps;
  reconstruct(m, xb, 3, true, &caps);
  CHECK(caps.enc.records.size() == 7 * m.config.transformer.blocks);
  CHECK(caps.lat.records.size() == 7 * m.config.transformer.blocks);
  CHECK(caps.dec.records.size() == 7 * m.config.transformer.blocks);
}

TEST_CASE("every parameter receives a gradient from the elbo") {
  Schema s = small_schema();
  auto m = build_model(s, small_config("ELD-VAE"), 21);
  auto ds = small_dataset(60, 22);
  Tensor xb = batch_rows(ds, 4);
  Rng rng(23);
  Tensor eps({4, m.config.latent_tokens * m.config.d});
  for (auto& v : eps.data) v = static_cast<real>(rng.normal());
  auto terms = elbo_loss(m, xb, eps);
  m.store.zero_grad();
  ag::backward(terms.total);
  for (const auto& [name, p] : m.store.params) {
    INFO(name);
    CHECK(p->grad_set);
  }
}

TEST_CASE("checkpoint save and load round trip") {
  Schema s = small_schema();
  auto m = build_model(s, small_config("LD-VAE"), 24);
  auto ds = small_dataset(80, 25);
  train(m, ds, {.epochs = 2, .batch_override = 16}, 26);
  auto dir = std::filesystem::temp_directory_path() / "tabgen_ckpt";
  std::filesystem::remove_all(dir);
  save_model(m, dir);
  auto back = load_model(dir);
  CHECK(back.config.variant == m.config.variant);
  CHECK(back.schema.columns.size() == m.schema.columns.size());
  for (const auto& [name, p] : m.store.params)
    CHECK(back.store.get(name)->value.data == p->value.data);
  CHECK(sample(back, 8, 27).data == sample(m, 8, 27).data);
}

TEST_CASE("a plain VAE equals a transformer variant with identity stacks") {
  // zeroing wo and the second ffn map turns every block into the
  // identity, so the ELD variant must reproduce the plain VAE forward
  Schema s = small_schema();
  auto plain = build_model(s, small_config("VAE"), 28);
  auto eld = build_model(s, small_config("ELD-VAE"), 28);
  for (auto* tf : {&*eld.enc_tf, &*eld.lat_tf, &*eld.dec_tf})
    for (auto& bp : tf->block_params) {
      fill(bp.attn.wo, 0);
      fill(bp.ffn_w2, 0);
      fill(bp.ffn_b2, 0);
    }
  auto ds = small_dataset(60, 29);
  Tensor xb = batch_rows(ds, 5);
  auto a = reconstruct(plain, xb, 4, true);
  auto b = reconstruct(eld, xb, 4, true);
  CHECK(a.data == b.data);
}
