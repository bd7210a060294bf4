#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "tabgen/metrics.hpp"
#include "tabgen/rng.hpp"

using namespace tabgen;

namespace {

Schema mixed_schema() {
  Schema s;
  s.columns = {{"x", ColumnKind::Numerical, {}},
               {"y", ColumnKind::Numerical, {}},
               {"c", ColumnKind::Categorical, {"a", "b"}}};
  s.target = "c";
  return s;
}

// rows: x, y, category index (exact one-hot)
Tensor make_table(const std::vector<std::array<double, 3>>& rows) {
  Tensor X({rows.size(), 4});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    X.at2(r, 0) = static_cast<real>(rows[r][0]);
    X.at2(r, 1) = static_cast<real>(rows[r][1]);
    X.at2(r, 2 + static_cast<std::size_t>(rows[r][2])) = 1;
  }
  return X;
}

Tensor random_cloud(std::size_t n, std::size_t m, std::uint64_t seed,
                    double shift = 0.0) {
  Tensor X({n, m});
  Rng rng(seed);
  for (auto& v : X.data) v = static_cast<real>(shift + rng.normal());
  return X;
}

double pearson_oracle(const std::vector<double>& x,
                      const std::vector<double>& y) {
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("ks score on a half-shifted sample is one half") {
  // F_real jumps to 1/2 at 2 while F_syn is still 0
  CHECK(ks_statistic_score({1, 2, 3, 4}, {3, 4, 5, 6}) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ks_statistic_score({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(ks_statistic_score({0, 1}, {10, 11}) == doctest::Approx(0.0));
  CHECK_THROWS(ks_statistic_score({}, {1.0}));
}

TEST_CASE("tvd score on half-overlapping categories is one half") {
  CHECK(tvd_score({0, 0}, {0, 1}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tvd_score({0, 1, 1}, {0, 1, 1}) == doctest::Approx(1.0));
  CHECK(tvd_score({0, 0}, {1, 1}) == doctest::Approx(0.0));
  CHECK_THROWS(tvd_score({}, {0}));
}

TEST_CASE("marginals score averages the per-feature scores") {
  Schema s = mixed_schema();
  auto real_t = make_table({{1, 1, 0}, {2, 2, 0}, {3, 3, 1}, {4, 4, 1}});
  auto syn_t = make_table({{3, 1, 0}, {4, 2, 0}, {5, 3, 0}, {6, 4, 0}});
  std::map<std::string, double> per;
  double score = marginals_score(real_t, syn_t, s, &per);
  CHECK(per.at("x") == doctest::Approx(0.5));
  CHECK(per.at("y") == doctest::Approx(1.0));
  CHECK(per.at("c") == doctest::Approx(0.5));
  CHECK(score == doctest::Approx((0.5 + 1.0 + 0.5) / 3));
}

TEST_CASE("pairwise numeric score is one minus half the correlation gap") {
  Schema s;
  s.columns = {{"x", ColumnKind::Numerical, {}},
               {"y", ColumnKind::Numerical, {}}};
  // rho_real = 1, rho_syn = -1 -> score 0
  Tensor real_t({3, 2}, {1, 1, 2, 2, 3, 3});
  Tensor syn_t({3, 2}, {1, 3, 2, 2, 3, 1});
  CHECK(pairwise_correlations_score(real_t, syn_t, s) ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(pairwise_correlations_score(real_t, real_t, s) == doctest::Approx(1.0));

  // random clouds against the hand-computed Pearson difference
  auto a = random_cloud(50, 2, 7);
  auto b = random_cloud(50, 2, 8);
  auto col = [](const Tensor& X, std::size_t j) {
    std::vector<double> v(X.shape[0]);
    for (std::size_t r = 0; r < X.shape[0]; ++r) v[r] = X.at2(r, j);
    return v;
  };
  double rr = pearson_oracle(col(a, 0), col(a, 1));
  double rs = pearson_oracle(col(b, 0), col(b, 1));
  CHECK(pairwise_correlations_score(a, b, s) ==
        doctest::Approx(1.0 - std::abs(rr - rs) / 2.0).epsilon(1e-9));
}

TEST_CASE("constant columns follow the agreement policy") {
  Schema s;
  s.columns = {{"x", ColumnKind::Numerical, {}},
               {"y", ColumnKind::Numerical, {}}};
  Tensor const_both({3, 2}, {1, 5, 2, 5, 3, 5});  // y constant
  CHECK(pairwise_correlations_score(const_both, const_both, s) ==
        doctest::Approx(1.0));
  Tensor varying({3, 2}, {1, 1, 2, 2, 3, 3});
  CHECK(pairwise_correlations_score(const_both, varying, s) ==
        doctest::Approx(0.5));
}

TEST_CASE("categorical pair uses contingency similarity") {
  Schema s;
  s.columns = {{"c1", ColumnKind::Categorical, {"a", "b"}},
               {"c2", ColumnKind::Categorical, {"u", "v"}}};
  // joints: real {(a,u), (b,v)}, syn {(a,v), (b,u)} -> disjoint -> 0
  Tensor real_t({2, 4}, {1, 0, 1, 0, 0, 1, 0, 1});
  Tensor syn_t({2, 4}, {1, 0, 0, 1, 0, 1, 1, 0});
  CHECK(pairwise_correlations_score(real_t, syn_t, s) == doctest::Approx(0.0));
  CHECK(pairwise_correlations_score(real_t, real_t, s) == doctest::Approx(1.0));
}

TEST_CASE("quantile grid is evenly spaced and exclusive") {
  auto g = default_quantile_grid(30);
  REQUIRE(g.size() == 30);
  CHECK(g.front() == doctest::Approx(1.0 / 31).epsilon(1e-12));
  CHECK(g.back() == doctest::Approx(30.0 / 31).epsilon(1e-12));
  CHECK(g[14] == doctest::Approx(15.0 / 31).epsilon(1e-12));
}

TEST_CASE("alpha precision is zero for fully displaced synthetic data") {
  // every synthetic point lies outside every real quantile ball, so the
  // deviation is the grid mean 1/2 and the score collapses to 0
  auto real_t = random_cloud(100, 3, 11);
  auto syn_t = random_cloud(100, 3, 12, /*shift=*/100.0);
  double score = alpha_precision(real_t, syn_t, default_quantile_grid(30));
  CHECK(score == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("alpha precision is high when synthetic equals real") {
  auto real_t = random_cloud(200, 3, 13);
  double score = alpha_precision(real_t, real_t, default_quantile_grid(30));
  CHECK(score >= 0.9);
  CHECK(score <= 1.0);
}

TEST_CASE("alpha precision input validation") {
  auto ok = random_cloud(20, 2, 1);
  CHECK_THROWS(alpha_precision(ok, ok, {}));
  CHECK_THROWS(alpha_precision(random_cloud(5, 2, 2), ok,
                               default_quantile_grid(10)));
  Tensor degenerate({20, 2});
  CHECK_THROWS(alpha_precision(degenerate, ok, default_quantile_grid(10)));
}

TEST_CASE("beta recall matches a brute force reference") {
  auto real_t = random_cloud(60, 3, 21);
  auto syn_t = random_cloud(80, 3, 22);
  const std::size_t k = 5;
  auto grid = default_quantile_grid(30);
  double got = beta_recall(real_t, syn_t, k, grid);

  // naive reference: k-NN radii among real points, then per-beta support
  const std::size_t nr = 60, ns = 80;
  auto dist = [&](const Tensor& A, std::size_t i, const Tensor& B,
                  std::size_t j) {
    double acc = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      double d = double(A.at2(i, c)) - B.at2(j, c);
      acc += d * d;
    }
    return std::sqrt(acc);
  };
  std::vector<double> nnd(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < nr; ++j)
      if (j != i) d.push_back(dist(real_t, i, real_t, j));
    std::sort(d.begin(), d.end());
    nnd[i] = d[k - 1];
  }
  std::vector<double> center(3, 0);
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t c = 0; c < 3; ++c) center[c] += syn_t.at2(s, c);
  for (auto& v : center) v /= ns;
  std::vector<double> cd(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    double acc = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      double d = syn_t.at2(s, c) - center[c];
      acc += d * d;
    }
    cd[s] = std::sqrt(acc);
  }
  std::vector<double> cd_sorted = cd;
  std::sort(cd_sorted.begin(), cd_sorted.end());
  auto quantile = [&](double q) {
    double pos = q * (ns - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, ns - 1);
    return cd_sorted[lo] + (pos - lo) * (cd_sorted[hi] - cd_sorted[lo]);
  };
  double dev = 0;
  for (double beta : grid) {
    double r_beta = quantile(beta);
    double covered = 0;
    for (std::size_t i = 0; i < nr; ++i) {
      bool hit = false;
      for (std::size_t s = 0; s < ns && !hit; ++s)
        if (cd[s] <= r_beta && dist(real_t, i, syn_t, s) <= nnd[i]) hit = true;
      covered += hit;
    }
    dev += std::abs(covered / nr - beta);
  }
  dev /= grid.size();
  double expect = std::clamp(1.0 - 2.0 * dev, 0.0, 1.0);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("beta recall input validation") {
  auto real_t = random_cloud(20, 2, 31);
  auto syn_t = random_cloud(20, 2, 32);
  CHECK_THROWS(beta_recall(real_t, syn_t, 20, default_quantile_grid(10)));
  CHECK_THROWS(beta_recall(real_t, random_cloud(5, 2, 33), 5,
                           default_quantile_grid(10)));
  CHECK_THROWS(beta_recall(real_t, syn_t, 5, {}));
}

TEST_CASE("split features labels strips the target block") {
  Schema s = mixed_schema();
  auto X = make_table({{1, 2, 0}, {3, 4, 1}});
  auto [feats, labels] = split_features_labels(X, s);
  CHECK(feats.shape == std::vector<std::size_t>{2, 2});
  CHECK(feats.at2(0, 0) == doctest::Approx(1.0));
  CHECK(feats.at2(1, 1) == doctest::Approx(4.0));
  CHECK(labels == std::vector<int>{0, 1});
  Schema no_target = s;
  no_target.target = "";
  CHECK_THROWS(split_features_labels(X, no_target));
}

TEST_CASE("ml fidelity is one when synthetic equals real") {
  Schema s = mixed_schema();
  Rng rng(41);
  std::vector<std::array<double, 3>> train_rows, test_rows;
  for (int i = 0; i < 120; ++i) {
    double x = rng.normal();
    std::array<double, 3> row{x, rng.normal(), x > 0 ? 1.0 : 0.0};
    (i < 90 ? train_rows : test_rows).push_back(row);
  }
  auto train_t = make_table(train_rows);
  auto test_t = make_table(test_rows);
  ClassifierConfig clf{.rounds = 30};
  auto [utility, fidelity] = ml_efficiency(train_t, train_t, test_t, s, clf, 0);
  CHECK(fidelity == doctest::Approx(1.0));
  CHECK(utility >= 0.9);
}

TEST_CASE("ml efficiency input validation") {
  Schema s = mixed_schema();
  auto X = make_table({{1, 2, 0}, {3, 4, 1}, {0, 1, 0}, {2, 2, 1}});
  auto single = make_table({{1, 2, 0}, {3, 4, 0}});
  Tensor empty({0, 4});
  CHECK_THROWS(ml_efficiency(X, X, empty, s, {.rounds = 2}, 0));
  CHECK_THROWS(ml_efficiency(single, X, X, s, {.rounds = 2}, 0));
}

TEST_CASE("evaluate all fills the report and survives json") {
  Schema s = mixed_schema();
  Rng rng(51);
  std::vector<std::array<double, 3>> real_rows, syn_rows, test_rows;
  for (int i = 0; i < 80; ++i) {
    double x = rng.normal();
    real_rows.push_back({x, 0.5 * x + rng.normal(), x > 0 ? 1.0 : 0.0});
    double xs = rng.normal();
    syn_rows.push_back({xs, 0.4 * xs + rng.normal(), xs > 0.1 ? 1.0 : 0.0});
    double xt = rng.normal();
    test_rows.push_back({xt, rng.normal(), xt > 0 ? 1.0 : 0.0});
  }
  MetricOptions opts;
  opts.classifier.rounds = 20;
  auto report = evaluate_all(make_table(real_rows), make_table(syn_rows),
                             make_table(test_rows), s, opts, 0);
  for (double v : {report.marginals, report.pairwise_correlations,
                   report.alpha_precision, report.beta_recall, report.utility,
                   report.ml_fidelity}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(report.marginals > 0.5);
  CHECK(report.per_feature.size() == 3);
  CHECK(report.per_pair.size() == 3);
  auto back = MetricsReport::from_json(report.to_json());
  CHECK(back.marginals == doctest::Approx(report.marginals));
  CHECK(back.beta_recall == doctest::Approx(report.beta_recall));
  CHECK(back.per_pair.size() == 3);
}
