#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "tabgen/adam.hpp"
#include "tabgen/autograd.hpp"
#include "tabgen/rng.hpp"

using namespace tabgen;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                     double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<real>(scale * rng.normal());
  return t;
}

}  // namespace

TEST_CASE("softmax of a constant row is uniform") {
  auto x = ag::constant(Tensor({1, 3}, {0, 0, 0}));
  auto y = ag::softmax(x);
  for (int j = 0; j < 3; ++j)
    CHECK(y->value.data[j] == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one") {
  auto x = ag::constant(random_tensor({8, 5}, 11, 3.0));
  auto y = ag::softmax(x);
  for (int r = 0; r < 8; ++r) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += y->value.data[r * 5 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("silu derivative at zero is one half") {
  // finite-difference oracle at x=0, h=1e-4
  auto silu_scalar = [](double x) { return x / (1.0 + std::exp(-x)); };
  double h = 1e-4;
  double oracle = (silu_scalar(h) - silu_scalar(-h)) / (2 * h);
  auto x = ag::param(Tensor::scalar(0));
  auto y = ag::sum(ag::silu(x));
  ag::backward(y);
  CHECK(static_cast<double>(x->grad[0]) == doctest::Approx(oracle).epsilon(1e-4));
  CHECK(static_cast<double>(x->grad[0]) == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("layer norm of a constant row collapses to bias") {
  auto x = ag::constant(Tensor({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1}));
  auto gain = ag::constant(Tensor::full({4}, 1));
  auto bias = ag::constant(Tensor({4}));
  auto y = ag::layer_norm(x, gain, bias);
  for (auto v : y->value.data) CHECK(std::abs(static_cast<double>(v)) <= 1e-2);
}

TEST_CASE("layer norm normalizes mean and variance") {
  auto x = ag::constant(random_tensor({16, 12}, 3, 2.0));
  auto gain = ag::constant(Tensor::full({12}, 1));
  auto bias = ag::constant(Tensor({12}));
  auto y = ag::layer_norm(x, gain, bias);
  for (int r = 0; r < 16; ++r) {
    double mean = 0, var = 0;
    for (int j = 0; j < 12; ++j) mean += y->value.data[r * 12 + j];
    mean /= 12;
    for (int j = 0; j < 12; ++j) {
      double c = y->value.data[r * 12 + j] - mean;
      var += c * c;
    }
    var /= 12;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("reparameterized sample is affine in mu and sigma") {
  Tensor eps_t = random_tensor({4, 3}, 7);
  auto mu = ag::param(random_tensor({4, 3}, 8));
  auto logvar = ag::param(random_tensor({4, 3}, 9, 0.3));
  auto eps = ag::constant(eps_t);
  auto z = ag::reparameterize(mu, logvar, eps);
  // z = mu + sigma*eps elementwise
  for (std::size_t i = 0; i < z->value.size(); ++i) {
    double sigma = std::exp(0.5 * static_cast<double>(logvar->value.data[i]));
    double expect = mu->value.data[i] + sigma * eps_t.data[i];
    CHECK(static_cast<double>(z->value.data[i]) ==
          doctest::Approx(expect).epsilon(1e-5));
  }
  // gradient w.r.t. mu is the identity
  ag::backward(ag::sum(z));
  for (std::size_t i = 0; i < mu->grad.size(); ++i)
    CHECK(static_cast<double>(mu->grad[i]) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("core op gradients match finite differences") {
  auto a = ag::param(random_tensor({4, 5}, 21));
  auto b = ag::param(random_tensor({5, 3}, 22));
  auto c = ag::param(random_tensor({4, 3}, 23));
  auto gain = ag::param(Tensor::full({3}, 1));
  auto bias = ag::param(random_tensor({3}, 24, 0.1));
  auto loss = [&]() {
    auto h = ag::matmul(a, b);
    h = ag::add(h, c);
    h = ag::layer_norm(h, gain, bias);
    h = ag::silu(h);
    h = ag::softmax(h);
    h = ag::mul(h, c);
    return ag::mean(ag::square(h));
  };
  double err = testutil::gradcheck_max_rel_err(loss, {a, b, c, gain, bias}, 20, 77);
  CHECK(err <= testutil::kGradTol);
}

TEST_CASE("exp log square concat slice gradients") {
  auto a = ag::param(random_tensor({3, 4}, 31, 0.5));
  auto b = ag::param(random_tensor({3, 4}, 32, 0.5));
  auto loss = [&]() {
    auto ea = ag::vexp(a);
    auto lb = ag::vlog(ag::add_scalar(ag::square(b), real(1)));
    auto cat = ag::concat({ea, lb}, 1);
    auto sl = ag::slice(cat, 1, 2, 4);
    return ag::mean(ag::square(sl));
  };
  double err = testutil::gradcheck_max_rel_err(loss, {a, b}, 20, 78);
  CHECK(err <= testutil::kGradTol);
}

TEST_CASE("bmm and embedding lookup gradients") {
  auto q = ag::param(random_tensor({2, 3, 4}, 41));
  auto k = ag::param(random_tensor({2, 3, 4}, 42));
  auto table = ag::param(random_tensor({5, 4}, 43));
  auto loss = [&]() {
    auto scores = ag::softmax(ag::bmm(q, k, true));
    auto emb = ag::embedding_lookup(table, {0, 3, 3, 1});
    return ag::add(ag::mean(ag::square(scores)), ag::mean(ag::square(emb)));
  };
  double err = testutil::gradcheck_max_rel_err(loss, {q, k, table}, 20, 79);
  CHECK(err <= testutil::kGradTol);
}

TEST_CASE("reparameterization gradient flows through mu and sigma") {
  auto mu = ag::param(random_tensor({4, 3}, 51));
  auto logvar = ag::param(random_tensor({4, 3}, 52, 0.3));
  Tensor eps = random_tensor({4, 3}, 53);
  auto loss = [&]() {
    auto z = ag::reparameterize(mu, logvar, ag::constant(eps));
    return ag::mean(ag::square(z));
  };
  double err = testutil::gradcheck_max_rel_err(loss, {mu, logvar}, 20, 80);
  CHECK(err <= testutil::kGradTol);
}

TEST_CASE("adam leaves a zero-gradient parameter unchanged") {
  ParamStore store;
  auto w = store.add("w", Tensor::scalar(1));
  AdamConfig cfg;
  cfg.weight_decay = 0;
  AdamState state(cfg);
  auto loss = ag::scale(w, real(0));
  ag::backward(ag::sum(loss));
  adam_step(store, state);
  CHECK(static_cast<double>(w->value.data[0]) == doctest::Approx(1.0));
}

TEST_CASE("adam update magnitude approaches the learning rate") {
  // constant gradient: m_hat/sqrt(v_hat) -> 1, so |step| -> lr
  ParamStore store;
  auto w = store.add("w", Tensor::scalar(0));
  AdamConfig cfg;
  cfg.weight_decay = 0;
  AdamState state(cfg);
  CHECK(cfg.learning_rate == doctest::Approx(1e-3));
  double prev = 0;
  for (int t = 0; t < 1000; ++t) {
    prev = w->value.data[0];
    w->ensure_grad();
    w->grad[0] = real(2.5);
    w->grad_set = true;
    adam_step(store, state);
  }
  double update = std::abs(static_cast<double>(w->value.data[0]) - prev);
  CHECK(update == doctest::Approx(1e-3).epsilon(1e-3));
}

TEST_CASE("adam errors on a missing gradient") {
  ParamStore store;
  store.add("w", Tensor::scalar(1));
  AdamState state;
  CHECK_THROWS(adam_step(store, state));
}

TEST_CASE("seeded init is deterministic") {
  auto a = seeded_init({16, 8}, InitScheme::KaimingUniform, 42);
  auto b = seeded_init({16, 8}, InitScheme::KaimingUniform, 42);
  CHECK(a.data == b.data);
}

TEST_CASE("kaiming uniform bound is respected") {
  auto t = seeded_init({10, 10000}, InitScheme::KaimingUniform, 5);
  double bound = std::sqrt(6.0 / 10.0);
  for (real v : t.data) CHECK(std::abs(static_cast<double>(v)) <= bound);
}

TEST_CASE("different seeds give different tensors") {
  auto a = seeded_init({100, 100}, InitScheme::Normal001, 1);
  auto b = seeded_init({100, 100}, InitScheme::Normal001, 2);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i] != b.data[i]) ++differ;
  CHECK(differ >= a.size() * 99 / 100);
}

TEST_CASE("shape mismatch raises") {
  auto a = ag::constant(Tensor({2, 3}));
  auto b = ag::constant(Tensor({2, 2}));
  CHECK_THROWS(ag::add(a, b));
  CHECK_THROWS(ag::matmul(a, b));
}
