#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tabgen/dataio.hpp"
#include "tabgen/gbt.hpp"
#include "tabgen/tensor.hpp"

namespace tabgen {

/// All metrics live in [0,1], higher is better.
struct MetricsReport {
  double marginals = 0;
  double pairwise_correlations = 0;
  double alpha_precision = 0;
  double beta_recall = 0;
  double utility = 0;
  double ml_fidelity = 0;
  std::map<std::string, double> per_feature;                // marginals
  std::map<std::string, double> per_pair;                   // "a|b" -> score

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

struct MetricOptions {
  std::size_t quantile_grid = 30;  // evenly spaced in (0,1) exclusive
  std::size_t beta_k = 5;
  std::size_t bins = 10;  // num-cat discretization
  ClassifierConfig classifier;
};

/// 1 - sup |F_real - F_syn| over empirical CDFs.
double ks_statistic_score(const std::vector<double>& real_col,
                          const std::vector<double>& syn_col);

/// 1 - total variation distance over the union of categories.
double tvd_score(const std::vector<std::size_t>& real_col,
                 const std::vector<std::size_t>& syn_col);

double marginals_score(const Tensor& real, const Tensor& syn,
                       const Schema& schema,
                       std::map<std::string, double>* breakdown = nullptr);

double pairwise_correlations_score(const Tensor& real, const Tensor& syn,
                                   const Schema& schema, std::size_t bins = 10,
                                   std::map<std::string, double>* breakdown = nullptr);

std::vector<double> default_quantile_grid(std::size_t n);

double alpha_precision(const Tensor& real, const Tensor& syn,
                       const std::vector<double>& quantile_grid);

double beta_recall(const Tensor& real, const Tensor& syn, std::size_t k,
                   const std::vector<double>& quantile_grid);

std::pair<double, double> ml_efficiency(const Tensor& real_train,
                                        const Tensor& syn_train,
                                        const Tensor& real_test,
                                        const Schema& schema,
                                        ClassifierConfig clf,
                                        std::uint64_t seed);

MetricsReport evaluate_all(const Tensor& real_train, const Tensor& syn,
                           const Tensor& real_test, const Schema& schema,
                           MetricOptions opts, std::uint64_t seed);

/// Split an Eq.-2 matrix into classifier features and integer labels
/// taken from the target column.
std::pair<Tensor, std::vector<int>> split_features_labels(const Tensor& X,
                                                          const Schema& schema);

}  // namespace tabgen
