#include "tabgen/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tabgen {

using nlohmann::json;

std::string to_string(Component c) {
  switch (c) {
    case Component::Enc: return "enc";
    case Component::Lat: return "lat";
    default: return "dec";
  }
}

Component component_from_string(const std::string& s) {
  if (s == "enc") return Component::Enc;
  if (s == "lat") return Component::Lat;
  if (s == "dec") return Component::Dec;
  throw std::invalid_argument("unknown component: " + s);
}

// ---- linear CKA -----------------------------------------------------------

double linear_cka(const Tensor& e1, const Tensor& e2, bool center) {
  if (e1.ndim() != 2 || e2.ndim() != 2)
    throw std::invalid_argument("linear_cka: expected matrices");
  const std::size_t b = e1.shape[0];
  if (b != e2.shape[0])
    throw std::invalid_argument("linear_cka: row count mismatch");
  if (b < 2) throw std::invalid_argument("linear_cka: need >= 2 rows");
  const std::size_t l1 = e1.shape[1], l2 = e2.shape[1];

  auto centered = [&](const Tensor& e, std::size_t l) {
    std::vector<double> out(e.data.begin(), e.data.end());
    if (!center) return out;
    for (std::size_t j = 0; j < l; ++j) {
      double mean = 0;
      for (std::size_t r = 0; r < b; ++r) mean += out[r * l + j];
      mean /= static_cast<double>(b);
      for (std::size_t r = 0; r < b; ++r) out[r * l + j] -= mean;
    }
    return out;
  };
  std::vector<double> a = centered(e1, l1);
  std::vector<double> c = centered(e2, l2);

  // ||E2^T E1||_F^2 and the two gram norms
  double cross = 0;
  for (std::size_t i = 0; i < l2; ++i)
    for (std::size_t j = 0; j < l1; ++j) {
      double acc = 0;
      for (std::size_t r = 0; r < b; ++r) acc += c[r * l2 + i] * a[r * l1 + j];
      cross += acc * acc;
    }
  auto gram_norm = [&](const std::vector<double>& e, std::size_t l) {
    double total = 0;
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j) {
        double acc = 0;
        for (std::size_t r = 0; r < b; ++r)
          acc += e[r * l + i] * e[r * l + j];
        total += acc * acc;
      }
    return std::sqrt(total);
  };
  double n1 = gram_norm(a, l1);
  double n2 = gram_norm(c, l2);
  if (n1 <= 0 || n2 <= 0) return 0.0;
  return cross / (n1 * n2);
}

// ---- capture grid ---------------------------------------------------------

namespace {

Tensor flatten_samples(const Tensor& t) {
  // [b, M, d] -> [b, M*d]
  if (t.ndim() != 3) throw std::invalid_argument("flatten_samples: expected 3-d");
  return Tensor({t.shape[0], t.shape[1] * t.shape[2]}, t.data);
}

}  // namespace

SimilarityReport capture_similarity_grid(const VAEModel& model,
                                         const Tensor& x_test,
                                         Component component,
                                         std::uint64_t seed) {
  bool present = component == Component::Enc   ? model.config.variant.enc
                 : component == Component::Lat ? model.config.variant.lat
                                               : model.config.variant.dec;
  if (!present)
    throw std::invalid_argument("variant " + model.config.variant.name() +
                                " has no Transformer at component " +
                                to_string(component));
  ForwardCaptures caps;
  reconstruct(model, x_test, seed, /*deterministic=*/false, &caps);
  const CaptureTrace& trace = component == Component::Enc   ? caps.enc
                              : component == Component::Lat ? caps.lat
                                                            : caps.dec;
  SimilarityReport report;
  report.component = component;
  std::vector<Tensor> mats;
  for (const auto& rec : trace.records) {
    report.labels.push_back("b" + std::to_string(rec.block) + "." + rec.label);
    mats.push_back(flatten_samples(rec.snapshot));
  }
  const std::size_t n = mats.size();
  report.grid.assign(n, std::vector<double>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    report.grid[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = linear_cka(mats[i], mats[j]);
      report.grid[i][j] = v;
      report.grid[j][i] = v;
    }
  }
  return report;
}

std::string SimilarityReport::to_json() const {
  return json{{"component", tabgen::to_string(component)},
              {"labels", labels},
              {"grid", grid}}
      .dump(2);
}

std::string SimilarityReport::to_csv() const {
  std::ostringstream os;
  os << "label";
  for (const auto& l : labels) os << "," << l;
  os << "\n";
  os.precision(10);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << labels[i];
    for (std::size_t j = 0; j < labels.size(); ++j) os << "," << grid[i][j];
    os << "\n";
  }
  return os.str();
}

// ---- residual sigma -------------------------------------------------------

SigmaReport residual_sigma(const CaptureTrace& trace) {
  SigmaReport report;
  const CaptureRecord* block_in = nullptr;
  for (const auto& rec : trace.records) {
    // per-sample norms for every label
    const std::size_t b = rec.snapshot.shape[0];
    const std::size_t fd = rec.snapshot.size() / b;
    auto& norms = report.norms["b" + std::to_string(rec.block) + "." + rec.label];
    norms.resize(b);
    for (std::size_t r = 0; r < b; ++r) {
      double acc = 0;
      for (std::size_t j = 0; j < fd; ++j) {
        double v = rec.snapshot.data[r * fd + j];
        acc += v * v;
      }
      norms[r] = std::sqrt(acc);
    }
    if (rec.label == "in") {
      block_in = &rec;
    } else if (rec.label == "res") {
      if (!block_in || block_in->block != rec.block)
        throw std::invalid_argument("residual_sigma: res without matching in");
      std::vector<double> sigma(b);
      for (std::size_t r = 0; r < b; ++r) {
        double num = 0, den = 0;
        for (std::size_t j = 0; j < fd; ++j) {
          double e = block_in->snapshot.data[r * fd + j];
          double eh = rec.snapshot.data[r * fd + j];
          num += eh * e;
          den += e * e;
        }
        if (den < 1e-12)
          throw std::invalid_argument("residual_sigma: near-zero block input");
        sigma[r] = num / den;
      }
      report.sigma_per_block.push_back(std::move(sigma));
    }
  }
  if (report.sigma_per_block.empty())
    throw std::invalid_argument("residual_sigma: trace has no (in,res) pairs");
  return report;
}

std::string SigmaReport::to_json() const {
  // sigma distributions summarized as box-plot quantiles, full values kept
  auto quantiles = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
      double pos = p * static_cast<double>(v.size() - 1);
      std::size_t lo = static_cast<std::size_t>(pos);
      std::size_t hi = std::min(lo + 1, v.size() - 1);
      double t = pos - static_cast<double>(lo);
      return v[lo] + t * (v[hi] - v[lo]);
    };
    return json{{"min", v.front()}, {"q25", q(0.25)},  {"median", q(0.5)},
                {"q75", q(0.75)},   {"max", v.back()}};
  };
  json blocks = json::array();
  for (const auto& s : sigma_per_block)
    blocks.push_back({{"values", s}, {"quantiles", quantiles(s)}});
  json jn;
  for (const auto& [label, v] : norms) {
    double mean = std::accumulate(v.begin(), v.end(), 0.0) /
                  static_cast<double>(v.size());
    jn[label] = mean;
  }
  return json{{"sigma_per_block", blocks}, {"mean_norms", jn}}.dump(2);
}

// ---- Wilcoxon signed-rank -------------------------------------------------

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("wilcoxon: length mismatch");
  if (a.size() < 6) throw std::invalid_argument("wilcoxon: need >= 6 pairs");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty())
    throw std::invalid_argument("wilcoxon: all differences are zero");
  const std::size_t n = diffs.size();

  // mid-ranks of |d|
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return std::abs(diffs[i]) < std::abs(diffs[j]);
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n &&
           std::abs(diffs[order[j]]) == std::abs(diffs[order[i]]))
      ++j;
    double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = mid;
    i = j;
  }

  double w_plus = 0, w_total = 0;
  for (std::size_t t = 0; t < n; ++t) {
    w_total += ranks[t];
    if (diffs[t] > 0) w_plus += ranks[t];
  }
  double w_minus = w_total - w_plus;
  double w = std::min(w_plus, w_minus);

  WilcoxonResult res;
  res.statistic = w;
  res.n_effective = n;

  if (n <= 25) {
    // exact null distribution of W+ over 2^n sign patterns, via DP on
    // doubled ranks (mid-ranks are half-integers)
    std::vector<long long> r2(n);
    for (std::size_t t = 0; t < n; ++t)
      r2[t] = static_cast<long long>(std::llround(2.0 * ranks[t]));
    long long total2 = std::accumulate(r2.begin(), r2.end(), 0LL);
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    long long reach = 0;
    for (std::size_t t = 0; t < n; ++t) {
      reach += r2[t];
      for (long long s = reach; s >= r2[t]; --s)
        count[static_cast<std::size_t>(s)] +=
            count[static_cast<std::size_t>(s - r2[t])];
    }
    long long w2 = static_cast<long long>(std::llround(2.0 * w));
    double below = 0;
    for (long long s = 0; s <= w2; ++s)
      below += count[static_cast<std::size_t>(s)];
    double p = 2.0 * below / std::pow(2.0, static_cast<double>(n));
    res.p_value = std::min(p, 1.0);
  } else {
    double mean = static_cast<double>(n) * (n + 1) / 4.0;
    double var = static_cast<double>(n) * (n + 1) * (2.0 * n + 1) / 24.0;
    double z = (w - mean + 0.5) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * norm_cdf(z));
  }
  return res;
}

// ---- gain aggregation -----------------------------------------------------

namespace {

std::map<std::string, double> metric_map(const MetricsReport& r) {
  return {{"marginals", r.marginals},
          {"pairwise_correlations", r.pairwise_correlations},
          {"alpha_precision", r.alpha_precision},
          {"beta_recall", r.beta_recall},
          {"utility", r.utility},
          {"ml_fidelity", r.ml_fidelity}};
}

}  // namespace

BucketGains gain_aggregation(const std::vector<PairedReport>& pairs) {
  if (pairs.empty())
    throw std::invalid_argument("gain_aggregation: no paired reports");
  BucketGains g;
  for (const auto& pr : pairs) {
    std::string bucket = to_string(pr.bucket);
    auto before = metric_map(pr.before);
    auto after = metric_map(pr.after);
    for (const auto& [metric, v] : after)
      g.mean[bucket][metric] += v - before.at(metric);
    g.count[bucket] += 1;
  }
  for (auto& [bucket, metrics] : g.mean)
    for (auto& [_, v] : metrics) v /= static_cast<double>(g.count[bucket]);
  for (SizeBucket b : {SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large})
    if (!g.count.count(to_string(b))) g.empty_buckets.push_back(to_string(b));
  return g;
}

std::string BucketGains::to_csv(const std::string& transition) const {
  std::ostringstream os;
  os << "transition,bucket,metric,mean_gain,count\n";
  os.precision(10);
  for (const auto& [bucket, metrics] : mean)
    for (const auto& [metric, v] : metrics)
      os << transition << "," << bucket << "," << metric << "," << v << ","
         << count.at(bucket) << "\n";
  for (const auto& b : empty_buckets)
    os << transition << "," << b << ",,empty,0\n";
  return os.str();
}

std::vector<std::pair<std::string, std::string>> forward_sequence() {
  return {{"VAE", "E-VAE"}, {"E-VAE", "EL-VAE"}, {"EL-VAE", "ELD-VAE"}};
}

std::vector<std::pair<std::string, std::string>> backward_sequence() {
  return {{"VAE", "D-VAE"}, {"D-VAE", "LD-VAE"}, {"LD-VAE", "ELD-VAE"}};
}

}  // namespace tabgen
