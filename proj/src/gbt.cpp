#include "tabgen/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tabgen {

void ClassifierConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("gbt: rounds must be >= 1");
  if (max_depth < 1) throw std::invalid_argument("gbt: max_depth must be >= 1");
}

double GbtModel::Tree::predict(const real* row) const {
  int ni = 0;
  while (nodes[ni].feature >= 0)
    ni = row[nodes[ni].feature] < nodes[ni].threshold ? nodes[ni].left
                                                      : nodes[ni].right;
  return nodes[ni].leaf_value;
}

std::vector<double> GbtModel::score(const real* row) const {
  std::vector<double> s = base_score;
  for (const auto& round : rounds)
    for (std::size_t k = 0; k < round.size(); ++k)
      s[k] += config.learning_rate * round[k].predict(row);
  return s;
}

int GbtModel::predict(const real* row) const {
  std::vector<double> s = score(row);
  if (n_classes == 2 && s.size() == 1) return s[0] > 0 ? 1 : 0;
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

std::vector<int> GbtModel::predict_all(const Tensor& X) const {
  std::vector<int> out(X.shape[0]);
  for (std::size_t r = 0; r < X.shape[0]; ++r)
    out[r] = predict(&X.data[r * X.shape[1]]);
  return out;
}

namespace {

struct Builder {
  const Tensor& X;
  const std::vector<double>& grad;
  const std::vector<double>& hess;
  double lambda;
  std::size_t max_depth;
  std::vector<GbtModel::TreeNode> nodes;

  double leaf_weight(double g, double h) const { return -g / (h + lambda); }

  int build(std::vector<std::size_t> rows, std::size_t depth) {
    double gsum = 0, hsum = 0;
    for (std::size_t r : rows) {
      gsum += grad[r];
      hsum += hess[r];
    }
    auto make_leaf = [&]() {
      GbtModel::TreeNode leaf;
      leaf.leaf_value = leaf_weight(gsum, hsum);
      nodes.push_back(leaf);
      return static_cast<int>(nodes.size() - 1);
    };
    if (depth >= max_depth || rows.size() < 2) return make_leaf();

    const std::size_t m = X.shape[1];
    double parent_obj = gsum * gsum / (hsum + lambda);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0;
    for (std::size_t f = 0; f < m; ++f) {
      std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
        return X.data[a * m + f] < X.data[b * m + f];
      });
      double gl = 0, hl = 0;
      for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
        gl += grad[rows[i]];
        hl += hess[rows[i]];
        double xv = X.data[rows[i] * m + f];
        double xn = X.data[rows[i + 1] * m + f];
        if (xv == xn) continue;
        double gr = gsum - gl, hr = hsum - hl;
        double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) -
                      parent_obj;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = (xv + xn) / 2.0;
        }
      }
    }
    if (best_feature < 0) return make_leaf();

    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      if (X.data[r * m + best_feature] < best_threshold)
        left.push_back(r);
      else
        right.push_back(r);
    }
    GbtModel::TreeNode node;
    node.feature = best_feature;
    node.threshold = best_threshold;
    nodes.push_back(node);
    int self = static_cast<int>(nodes.size() - 1);
    nodes[self].left = build(std::move(left), depth + 1);
    nodes[self].right = build(std::move(right), depth + 1);
    return self;
  }
};

GbtModel::Tree fit_tree(const Tensor& X, const std::vector<double>& grad,
                        const std::vector<double>& hess,
                        const ClassifierConfig& cfg) {
  std::vector<std::size_t> rows(X.shape[0]);
  std::iota(rows.begin(), rows.end(), 0);
  Builder b{X, grad, hess, cfg.lambda, cfg.max_depth, {}};
  // root must end at index 0: build appends the root first
  b.build(std::move(rows), 0);
  GbtModel::Tree t;
  t.nodes = std::move(b.nodes);
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

GbtModel gbt_train(const Tensor& X, const std::vector<int>& labels,
                   ClassifierConfig config, std::uint64_t /*seed*/) {
  config.validate();
  if (X.ndim() != 2 || X.shape[0] != labels.size() || X.shape[0] == 0)
    throw std::invalid_argument("gbt_train: bad input shapes");
  for (real v : X.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::invalid_argument("gbt_train: non-finite feature value");
  const std::size_t n = X.shape[0];
  int max_label = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0)
    throw std::invalid_argument("gbt_train: negative label");

  GbtModel model;
  model.config = config;
  model.n_features = X.shape[1];
  model.n_classes = static_cast<std::size_t>(max_label) + 1;
  if (model.n_classes < 2) model.n_classes = 2;

  if (model.n_classes == 2) {
    double pos = 0;
    for (int y : labels) pos += y;
    double p = std::clamp(pos / n, 1e-6, 1.0 - 1e-6);
    model.base_score = {std::log(p / (1.0 - p))};
    std::vector<double> score(n, model.base_score[0]);
    std::vector<double> grad(n), hess(n);
    for (std::size_t round = 0; round < config.rounds; ++round) {
      for (std::size_t i = 0; i < n; ++i) {
        double p_i = sigmoid(score[i]);
        grad[i] = p_i - labels[i];
        hess[i] = std::max(p_i * (1.0 - p_i), 1e-16);
      }
      auto tree = fit_tree(X, grad, hess, config);
      for (std::size_t i = 0; i < n; ++i)
        score[i] += config.learning_rate * tree.predict(&X.data[i * X.shape[1]]);
      model.rounds.push_back({std::move(tree)});
    }
  } else {
    const std::size_t K = model.n_classes;
    std::vector<double> prior(K, 0);
    for (int y : labels) prior[y] += 1;
    model.base_score.resize(K);
    for (std::size_t k = 0; k < K; ++k)
      model.base_score[k] = std::log(std::max(prior[k] / n, 1e-6));
    std::vector<std::vector<double>> score(K,
                                           std::vector<double>(n, 0));
    for (std::size_t k = 0; k < K; ++k)
      std::fill(score[k].begin(), score[k].end(), model.base_score[k]);
    std::vector<double> grad(n), hess(n), prob(K);
    for (std::size_t round = 0; round < config.rounds; ++round) {
      std::vector<GbtModel::Tree> trees;
      // softmax probabilities per sample, one tree per class
      std::vector<std::vector<double>> probs(n, std::vector<double>(K));
      for (std::size_t i = 0; i < n; ++i) {
        double mx = score[0][i];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, score[k][i]);
        double sum = 0;
        for (std::size_t k = 0; k < K; ++k) {
          probs[i][k] = std::exp(score[k][i] - mx);
          sum += probs[i][k];
        }
        for (std::size_t k = 0; k < K; ++k) probs[i][k] /= sum;
      }
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
          double p = probs[i][k];
          grad[i] = p - (labels[i] == static_cast<int>(k) ? 1.0 : 0.0);
          hess[i] = std::max(p * (1.0 - p), 1e-16);
        }
        auto tree = fit_tree(X, grad, hess, config);
        for (std::size_t i = 0; i < n; ++i)
          score[k][i] +=
              config.learning_rate * tree.predict(&X.data[i * X.shape[1]]);
        trees.push_back(std::move(tree));
      }
      model.rounds.push_back(std::move(trees));
    }
  }
  return model;
}

}  // namespace tabgen
