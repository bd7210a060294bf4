#pragma once

#include <map>
#include <string>
#include <vector>

#include "tabgen/metrics.hpp"
#include "tabgen/transformer.hpp"
#include "tabgen/vae.hpp"

namespace tabgen {

enum class Component { Enc, Lat, Dec };
std::string to_string(Component c);
Component component_from_string(const std::string& s);

struct SimilarityReport {
  Component component = Component::Enc;
  std::vector<std::string> labels;       // "b<block>.<label>" in forward order
  std::vector<std::vector<double>> grid; // symmetric, diagonal 1

  std::string to_json() const;
  std::string to_csv() const;
};

struct SigmaReport {
  // per block: one sigma per sample (flattened F*d vectors)
  std::vector<std::vector<double>> sigma_per_block;
  // per capture label: one representation norm per sample
  std::map<std::string, std::vector<double>> norms;

  std::string to_json() const;
};

/// Linear CKA between two column-centered feature maps with equal row
/// counts; 1 for identical non-degenerate inputs, 0 if either centers
/// to zero.
double linear_cka(const Tensor& e1, const Tensor& e2, bool center = true);

SimilarityReport capture_similarity_grid(const VAEModel& model,
                                         const Tensor& x_test,
                                         Component component,
                                         std::uint64_t seed);

SigmaReport residual_sigma(const CaptureTrace& trace);

struct WilcoxonResult {
  double statistic = 0;  // min(W+, W-)
  double p_value = 1;
  std::size_t n_effective = 0;
};

/// Two-sided paired signed-rank test; zero differences dropped,
/// mid-ranks for ties, exact enumeration for n <= 25, normal
/// approximation with continuity correction above.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b);

struct PairedReport {
  MetricsReport before, after;
  SizeBucket bucket = SizeBucket::Small;
};

struct BucketGains {
  // bucket name -> metric name -> mean (after - before); buckets with
  // no datasets are absent and listed in `empty_buckets`
  std::map<std::string, std::map<std::string, double>> mean;
  std::map<std::string, std::size_t> count;
  std::vector<std::string> empty_buckets;

  std::string to_csv(const std::string& transition) const;
};

BucketGains gain_aggregation(const std::vector<PairedReport>& pairs);

/// Model orderings for gain attribution.
std::vector<std::pair<std::string, std::string>> forward_sequence();
std::vector<std::pair<std::string, std::string>> backward_sequence();

}  // namespace tabgen
