#pragma once

#include <cstdint>
#include <vector>

#include "tabgen/tensor.hpp"

namespace tabgen {

struct ClassifierConfig {
  std::size_t rounds = 500;
  double learning_rate = 0.01;
  std::size_t max_depth = 3;
  double lambda = 1.0;  // L2 on leaf weights

  void validate() const;
};

/// Gradient-boosted depth-limited regression trees with logistic loss
/// (binary) or one-vs-all softmax (multiclass). Exact greedy splits, no
/// subsampling, so training is deterministic.
class GbtModel {
 public:
  struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0;
    double leaf_value = 0;
    int left = -1, right = -1;
  };
  struct Tree {
    std::vector<TreeNode> nodes;
    double predict(const real* row) const;
  };

  std::size_t n_classes = 2;
  std::size_t n_features = 0;
  std::vector<double> base_score;         // per class (single entry if binary)
  std::vector<std::vector<Tree>> rounds;  // rounds x (1 or n_classes)
  ClassifierConfig config;

  /// Raw scores per class for one row.
  std::vector<double> score(const real* row) const;
  int predict(const real* row) const;
  std::vector<int> predict_all(const Tensor& X) const;
};

GbtModel gbt_train(const Tensor& X, const std::vector<int>& labels,
                   ClassifierConfig config, std::uint64_t seed);

}  // namespace tabgen
