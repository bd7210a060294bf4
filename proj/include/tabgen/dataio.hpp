#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tabgen/tensor.hpp"

namespace tabgen {

enum class ColumnKind { Numerical, Categorical };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::Numerical;
  std::vector<std::string> categories;  // categorical only, ordered
};

enum class Task { Binary, Multiclass };

struct Schema {
  std::vector<Column> columns;
  std::string target;
  Task task = Task::Binary;

  const Column& column(const std::string& name) const;
  std::size_t column_index(const std::string& name) const;
  void validate() const;
};

/// A cell is missing, a number, or a category label.
struct Cell {
  bool missing = true;
  double num = 0.0;
  std::string cat;

  static Cell none() { return {}; }
  static Cell number(double v) { return {false, v, {}}; }
  static Cell category(std::string s) { return {false, 0.0, std::move(s)}; }
};

struct RawTable {
  Schema schema;
  std::vector<std::vector<Cell>> rows;  // rows x columns, schema order

  std::size_t n_rows() const { return rows.size(); }
};

/// Monotone empirical map numeric value <-> standard-Gaussian score.
/// Knots are the sorted unique training values with midpoint-rank
/// cumulative probabilities; linear interpolation in between, clamped
/// to the observed range on the way back.
struct QuantileMap {
  std::vector<double> values;  // sorted unique
  std::vector<double> probs;   // matching CDF values in (0,1)

  double forward(double x) const;   // value -> z
  double inverse(double z) const;   // z -> value, clamped to [min,max]
};

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct PreprocessedDataset {
  Schema schema;  // after column drops; categories as observed
  Tensor X;       // N x M', numericals first then one-hot blocks
  std::vector<QuantileMap> quantile_maps;  // one per numerical column
  Splits splits;

  std::size_t n_numerical() const;
  std::size_t width() const { return X.shape[1]; }
  /// Column offset of feature `fi` in the Eq.-2 layout and its width
  /// (1 for numeric, |C| for categorical).
  std::pair<std::size_t, std::size_t> feature_span(std::size_t fi) const;

  Tensor rows_matrix(const std::vector<std::size_t>& idx) const;
};

struct PreprocessOptions {
  double test_fraction = 0.2;   // held out before the 15% validation split
  double val_fraction = 0.15;
};

/// Eq.-2 layout helpers over a (preprocessed) schema.
std::size_t schema_n_numerical(const Schema& schema);
std::size_t schema_width(const Schema& schema);
std::pair<std::size_t, std::size_t> schema_feature_span(const Schema& schema,
                                                        std::size_t fi);

Schema load_schema(const std::filesystem::path& schema_path);
void save_schema(const Schema& schema, const std::filesystem::path& path);

RawTable load_csv(const std::filesystem::path& csv_path,
                  const std::filesystem::path& schema_path);
RawTable parse_csv(const std::string& text, const Schema& schema);
void save_csv(const RawTable& table, const std::filesystem::path& path);

PreprocessedDataset preprocess(const RawTable& raw, std::uint64_t seed,
                               PreprocessOptions opts = {});

RawTable inverse_transform(const Tensor& X_syn, const PreprocessedDataset& ds);

enum class SizeBucket { Small, Medium, Large };
SizeBucket size_bucket(std::size_t n_train);
std::string to_string(SizeBucket b);

void save_dataset(const PreprocessedDataset& ds,
                  const std::filesystem::path& dir);
PreprocessedDataset load_dataset(const std::filesystem::path& dir);

/// Inverse standard-normal CDF (Acklam's rational approximation,
/// |relative error| < 1.2e-8 after one Halley refinement step).
double inv_norm_cdf(double p);
double norm_cdf(double z);

}  // namespace tabgen
