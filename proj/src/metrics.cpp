#include "tabgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace tabgen {

using nlohmann::json;

// ---- report serialization -------------------------------------------------

std::string MetricsReport::to_json() const {
  json j{{"marginals", marginals},
         {"pairwise_correlations", pairwise_correlations},
         {"alpha_precision", alpha_precision},
         {"beta_recall", beta_recall},
         {"utility", utility},
         {"ml_fidelity", ml_fidelity},
         {"per_feature", per_feature},
         {"per_pair", per_pair}};
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  json j = json::parse(text);
  MetricsReport r;
  r.marginals = j.at("marginals").get<double>();
  r.pairwise_correlations = j.at("pairwise_correlations").get<double>();
  r.alpha_precision = j.at("alpha_precision").get<double>();
  r.beta_recall = j.at("beta_recall").get<double>();
  r.utility = j.at("utility").get<double>();
  r.ml_fidelity = j.at("ml_fidelity").get<double>();
  if (j.contains("per_feature"))
    r.per_feature = j["per_feature"].get<std::map<std::string, double>>();
  if (j.contains("per_pair"))
    r.per_pair = j["per_pair"].get<std::map<std::string, double>>();
  return r;
}

// ---- column extraction ----------------------------------------------------

namespace {

std::vector<double> numeric_column(const Tensor& X, std::size_t off) {
  std::vector<double> out(X.shape[0]);
  for (std::size_t r = 0; r < X.shape[0]; ++r)
    out[r] = X.data[r * X.shape[1] + off];
  return out;
}

std::vector<std::size_t> categorical_column(const Tensor& X, std::size_t off,
                                            std::size_t span) {
  std::vector<std::size_t> out(X.shape[0]);
  for (std::size_t r = 0; r < X.shape[0]; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < span; ++j)
      if (X.data[r * X.shape[1] + off + j] > X.data[r * X.shape[1] + off + best])
        best = j;
    out[r] = best;
  }
  return out;
}

}  // namespace

// ---- one-way marginals ----------------------------------------------------

double ks_statistic_score(const std::vector<double>& real_col,
                          const std::vector<double>& syn_col) {
  if (real_col.empty() || syn_col.empty())
    throw std::invalid_argument("ks_statistic_score: empty column");
  std::vector<double> a = real_col, b = syn_col;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  double sup = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    double x = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    sup = std::max(sup, std::abs(i / na - j / nb));
  }
  return 1.0 - sup;
}

double tvd_score(const std::vector<std::size_t>& real_col,
                 const std::vector<std::size_t>& syn_col) {
  if (real_col.empty() || syn_col.empty())
    throw std::invalid_argument("tvd_score: empty column");
  std::size_t cmax = 0;
  for (std::size_t c : real_col) cmax = std::max(cmax, c);
  for (std::size_t c : syn_col) cmax = std::max(cmax, c);
  std::vector<double> p(cmax + 1, 0), q(cmax + 1, 0);
  for (std::size_t c : real_col) p[c] += 1.0 / real_col.size();
  for (std::size_t c : syn_col) q[c] += 1.0 / syn_col.size();
  double tvd = 0;
  for (std::size_t c = 0; c <= cmax; ++c) tvd += std::abs(p[c] - q[c]);
  return 1.0 - tvd / 2.0;
}

double marginals_score(const Tensor& real, const Tensor& syn,
                       const Schema& schema,
                       std::map<std::string, double>* breakdown) {
  if (schema.columns.empty())
    throw std::invalid_argument("marginals_score: no features");
  double total = 0;
  for (std::size_t fi = 0; fi < schema.columns.size(); ++fi) {
    auto [off, span] = schema_feature_span(schema, fi);
    double s;
    if (schema.columns[fi].kind == ColumnKind::Numerical)
      s = ks_statistic_score(numeric_column(real, off),
                             numeric_column(syn, off));
    else
      s = tvd_score(categorical_column(real, off, span),
                    categorical_column(syn, off, span));
    if (breakdown) (*breakdown)[schema.columns[fi].name] = s;
    total += s;
  }
  return total / static_cast<double>(schema.columns.size());
}

// ---- pairwise correlations ------------------------------------------------

namespace {

// Pearson; returns false for a constant column.
bool pearson(const std::vector<double>& x, const std::vector<double>& y,
             double* out) {
  const std::size_t n = x.size();
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return false;
  *out = sxy / std::sqrt(sxx * syy);
  return true;
}

std::vector<std::size_t> discretize(const std::vector<double>& x, double lo,
                                    double hi, std::size_t bins) {
  std::vector<std::size_t> out(x.size());
  double w = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double t = (x[i] - lo) / w;
    long b = static_cast<long>(std::floor(t));
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    out[i] = static_cast<std::size_t>(b);
  }
  return out;
}

// 1 - L1/2 between joint category frequencies.
double contingency_similarity(const std::vector<std::size_t>& a1,
                              const std::vector<std::size_t>& a2,
                              const std::vector<std::size_t>& b1,
                              const std::vector<std::size_t>& b2) {
  std::map<std::pair<std::size_t, std::size_t>, double> p, q;
  for (std::size_t i = 0; i < a1.size(); ++i)
    p[{a1[i], a2[i]}] += 1.0 / a1.size();
  for (std::size_t i = 0; i < b1.size(); ++i)
    q[{b1[i], b2[i]}] += 1.0 / b1.size();
  std::set<std::pair<std::size_t, std::size_t>> keys;
  for (const auto& [k, _] : p) keys.insert(k);
  for (const auto& [k, _] : q) keys.insert(k);
  double l1 = 0;
  for (const auto& k : keys) {
    double pv = p.count(k) ? p[k] : 0.0;
    double qv = q.count(k) ? q[k] : 0.0;
    l1 += std::abs(pv - qv);
  }
  return 1.0 - l1 / 2.0;
}

}  // namespace

double pairwise_correlations_score(const Tensor& real, const Tensor& syn,
                                   const Schema& schema, std::size_t bins,
                                   std::map<std::string, double>* breakdown) {
  const std::size_t m = schema.columns.size();
  if (m < 2)
    throw std::invalid_argument("pairwise_correlations_score: need >= 2 features");
  double total = 0;
  std::size_t n_pairs = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      auto [ioff, ispan] = schema_feature_span(schema, i);
      auto [joff, jspan] = schema_feature_span(schema, j);
      bool inum = schema.columns[i].kind == ColumnKind::Numerical;
      bool jnum = schema.columns[j].kind == ColumnKind::Numerical;
      double score;
      if (inum && jnum) {
        auto rx = numeric_column(real, ioff), ry = numeric_column(real, joff);
        auto sx = numeric_column(syn, ioff), sy = numeric_column(syn, joff);
        double rr, rs;
        bool ok_r = pearson(rx, ry, &rr);
        bool ok_s = pearson(sx, sy, &rs);
        if (ok_r && ok_s)
          score = 1.0 - std::abs(rr - rs) / 2.0;
        else if (!ok_r && !ok_s)
          score = 1.0;  // both undefined the same way
        else
          score = 0.5;  // maximal uncertainty
      } else {
        auto cat_of = [&](const Tensor& X, std::size_t fi, std::size_t off,
                          std::size_t span, bool is_num,
                          double lo, double hi) {
          if (is_num)
            return discretize(numeric_column(X, off), lo, hi, bins);
          return categorical_column(X, off, span);
        };
        double ilo = 0, ihi = 0, jlo = 0, jhi = 0;
        if (inum) {
          auto rx = numeric_column(real, ioff);
          ilo = *std::min_element(rx.begin(), rx.end());
          ihi = *std::max_element(rx.begin(), rx.end());
        }
        if (jnum) {
          auto ry = numeric_column(real, joff);
          jlo = *std::min_element(ry.begin(), ry.end());
          jhi = *std::max_element(ry.begin(), ry.end());
        }
        auto r1 = cat_of(real, i, ioff, ispan, inum, ilo, ihi);
        auto r2 = cat_of(real, j, joff, jspan, jnum, jlo, jhi);
        auto s1 = cat_of(syn, i, ioff, ispan, inum, ilo, ihi);
        auto s2 = cat_of(syn, j, joff, jspan, jnum, jlo, jhi);
        score = contingency_similarity(r1, r2, s1, s2);
      }
      if (breakdown)
        (*breakdown)[schema.columns[i].name + "|" + schema.columns[j].name] =
            score;
      total += score;
      ++n_pairs;
    }
  }
  return total / static_cast<double>(n_pairs);
}

// ---- high-density metrics -------------------------------------------------

std::vector<double> default_quantile_grid(std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
  return g;
}

namespace {

std::vector<double> center_of(const Tensor& X) {
  const std::size_t n = X.shape[0], m = X.shape[1];
  std::vector<double> c(m, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) c[j] += X.data[r * m + j];
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

double dist_to(const Tensor& X, std::size_t row, const std::vector<double>& c) {
  const std::size_t m = X.shape[1];
  double acc = 0;
  for (std::size_t j = 0; j < m; ++j) {
    double d = X.data[row * m + j] - c[j];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double row_dist(const Tensor& A, std::size_t ra, const Tensor& B,
                std::size_t rb) {
  const std::size_t m = A.shape[1];
  double acc = 0;
  for (std::size_t j = 0; j < m; ++j) {
    double d = static_cast<double>(A.data[ra * m + j]) - B.data[rb * m + j];
    acc += d * d;
  }
  return std::sqrt(acc);
}

// quantile with linear interpolation over sorted values
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  double pos = q * static_cast<double>(n - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, n - 1);
  double t = pos - static_cast<double>(lo);
  return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

}  // namespace

double alpha_precision(const Tensor& real, const Tensor& syn,
                       const std::vector<double>& quantile_grid) {
  if (quantile_grid.empty())
    throw std::invalid_argument("alpha_precision: empty quantile grid");
  if (real.shape[0] < 10 || syn.shape[0] < 10)
    throw std::invalid_argument("alpha_precision: need >= 10 rows");
  if (real.shape[1] != syn.shape[1])
    throw std::invalid_argument("alpha_precision: layout mismatch");
  auto center = center_of(real);
  std::vector<double> real_d(real.shape[0]);
  for (std::size_t r = 0; r < real.shape[0]; ++r)
    real_d[r] = dist_to(real, r, center);
  std::vector<double> sorted = real_d;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.back() <= 0)
    throw std::invalid_argument("alpha_precision: degenerate real data");
  std::vector<double> syn_d(syn.shape[0]);
  for (std::size_t r = 0; r < syn.shape[0]; ++r)
    syn_d[r] = dist_to(syn, r, center);

  double dev = 0;
  for (double alpha : quantile_grid) {
    double r_alpha = quantile_sorted(sorted, alpha);
    double inside = 0;
    for (double d : syn_d)
      if (d <= r_alpha) inside += 1;
    double p = inside / static_cast<double>(syn.shape[0]);
    dev += std::abs(p - alpha);
  }
  dev /= static_cast<double>(quantile_grid.size());
  return std::clamp(1.0 - 2.0 * dev, 0.0, 1.0);
}

double beta_recall(const Tensor& real, const Tensor& syn, std::size_t k,
                   const std::vector<double>& quantile_grid) {
  if (quantile_grid.empty())
    throw std::invalid_argument("beta_recall: empty quantile grid");
  const std::size_t nr = real.shape[0], ns = syn.shape[0];
  if (k >= nr) throw std::invalid_argument("beta_recall: k >= N_real");
  if (ns <= k) throw std::invalid_argument("beta_recall: N_syn <= k");
  if (real.shape[1] != syn.shape[1])
    throw std::invalid_argument("beta_recall: layout mismatch");

  // k-th nearest-neighbor distance among real points
  std::vector<double> nnd(nr);
  std::vector<double> dists(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < nr; ++j)
      if (j != i) dists[m++] = row_dist(real, i, real, j);
    std::nth_element(dists.begin(), dists.begin() + (k - 1),
                     dists.begin() + m);
    nnd[i] = dists[k - 1];
  }

  // synthetic points ordered by distance to the synthetic center, so the
  // beta-support is a prefix and a running min covers every beta at once
  auto syn_center = center_of(syn);
  std::vector<std::size_t> syn_order(ns);
  std::iota(syn_order.begin(), syn_order.end(), 0);
  std::vector<double> syn_center_d(ns);
  for (std::size_t s = 0; s < ns; ++s)
    syn_center_d[s] = dist_to(syn, s, syn_center);
  std::stable_sort(syn_order.begin(), syn_order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return syn_center_d[a] < syn_center_d[b];
                   });
  std::vector<double> sorted_center_d(ns);
  for (std::size_t s = 0; s < ns; ++s)
    sorted_center_d[s] = syn_center_d[syn_order[s]];

  const std::size_t ng = quantile_grid.size();
  std::vector<std::size_t> support_size(ng);
  for (std::size_t g = 0; g < ng; ++g) {
    double r_beta = quantile_sorted(sorted_center_d, quantile_grid[g]);
    support_size[g] = static_cast<std::size_t>(
        std::upper_bound(sorted_center_d.begin(), sorted_center_d.end(),
                         r_beta) -
        sorted_center_d.begin());
  }

  std::vector<double> covered(ng, 0);
  std::vector<double> prefix_min(ns);
  for (std::size_t i = 0; i < nr; ++i) {
    double running = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < ns; ++s) {
      running = std::min(running, row_dist(real, i, syn, syn_order[s]));
      prefix_min[s] = running;
    }
    for (std::size_t g = 0; g < ng; ++g)
      if (support_size[g] > 0 &&
          prefix_min[support_size[g] - 1] <= nnd[i])
        covered[g] += 1;
  }

  double dev = 0;
  for (std::size_t g = 0; g < ng; ++g) {
    double rate = covered[g] / static_cast<double>(nr);
    dev += std::abs(rate - quantile_grid[g]);
  }
  dev /= static_cast<double>(ng);
  return std::clamp(1.0 - 2.0 * dev, 0.0, 1.0);
}

// ---- ML efficiency --------------------------------------------------------

std::pair<Tensor, std::vector<int>> split_features_labels(const Tensor& X,
                                                          const Schema& schema) {
  if (schema.target.empty())
    throw std::invalid_argument("split_features_labels: schema has no target");
  std::size_t ti = schema.column_index(schema.target);
  if (schema.columns[ti].kind != ColumnKind::Categorical)
    throw std::invalid_argument("split_features_labels: target must be categorical");
  auto [toff, tspan] = schema_feature_span(schema, ti);
  const std::size_t n = X.shape[0], w = X.shape[1];
  Tensor feats({n, w - tspan});
  std::vector<int> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t o = 0;
    for (std::size_t j = 0; j < w; ++j) {
      if (j >= toff && j < toff + tspan) continue;
      feats.data[r * (w - tspan) + o++] = X.data[r * w + j];
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < tspan; ++j)
      if (X.data[r * w + toff + j] > X.data[r * w + toff + best]) best = j;
    labels[r] = static_cast<int>(best);
  }
  return {std::move(feats), std::move(labels)};
}

std::pair<double, double> ml_efficiency(const Tensor& real_train,
                                        const Tensor& syn_train,
                                        const Tensor& real_test,
                                        const Schema& schema,
                                        ClassifierConfig clf,
                                        std::uint64_t seed) {
  if (real_test.shape[0] == 0)
    throw std::invalid_argument("ml_efficiency: empty test set");
  auto [rf, rl] = split_features_labels(real_train, schema);
  auto [sf, sl] = split_features_labels(syn_train, schema);
  auto [tf, tl] = split_features_labels(real_test, schema);
  auto single_class = [](const std::vector<int>& y) {
    return std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; });
  };
  if (single_class(rl) || single_class(sl))
    throw std::invalid_argument("ml_efficiency: single-class training labels");
  GbtModel m_real = gbt_train(rf, rl, clf, seed);
  GbtModel m_syn = gbt_train(sf, sl, clf, seed);
  auto pred_real = m_real.predict_all(tf);
  auto pred_syn = m_syn.predict_all(tf);
  double correct = 0, agree = 0;
  for (std::size_t i = 0; i < tl.size(); ++i) {
    if (pred_syn[i] == tl[i]) correct += 1;
    if (pred_syn[i] == pred_real[i]) agree += 1;
  }
  double n = static_cast<double>(tl.size());
  return {correct / n, agree / n};
}

MetricsReport evaluate_all(const Tensor& real_train, const Tensor& syn,
                           const Tensor& real_test, const Schema& schema,
                           MetricOptions opts, std::uint64_t seed) {
  MetricsReport r;
  r.marginals = marginals_score(real_train, syn, schema, &r.per_feature);
  if (schema.columns.size() >= 2)
    r.pairwise_correlations = pairwise_correlations_score(
        real_train, syn, schema, opts.bins, &r.per_pair);
  else
    r.pairwise_correlations = 1.0;
  auto grid = default_quantile_grid(opts.quantile_grid);
  r.alpha_precision = alpha_precision(real_train, syn, grid);
  r.beta_recall = beta_recall(real_train, syn, opts.beta_k, grid);
  if (!schema.target.empty() && real_test.shape[0] > 0) {
    auto [utility, fidelity] = ml_efficiency(real_train, syn, real_test,
                                             schema, opts.classifier, seed);
    r.utility = utility;
    r.ml_fidelity = fidelity;
  }
  return r;
}

}  // namespace tabgen
