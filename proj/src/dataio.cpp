#include "tabgen/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tabgen/rng.hpp"
#include "tabgen/serialize.hpp"

namespace tabgen {

using nlohmann::json;

// ---- Schema ---------------------------------------------------------------

const Column& Schema::column(const std::string& name) const {
  return columns[column_index(name)];
}

std::size_t Schema::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return i;
  throw std::invalid_argument("unknown column: " + name);
}

void Schema::validate() const {
  std::set<std::string> names;
  for (const auto& c : columns) {
    if (!names.insert(c.name).second)
      throw std::invalid_argument("duplicate column name: " + c.name);
  }
  if (!target.empty()) column_index(target);
}

Schema load_schema(const std::filesystem::path& schema_path) {
  std::ifstream is(schema_path);
  if (!is) throw std::runtime_error("cannot open schema: " + schema_path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed schema JSON: " + std::string(e.what()));
  }
  Schema s;
  for (const auto& jc : j.at("columns")) {
    Column c;
    c.name = jc.at("name").get<std::string>();
    std::string kind = jc.at("kind").get<std::string>();
    if (kind == "numerical") {
      c.kind = ColumnKind::Numerical;
    } else if (kind == "categorical") {
      c.kind = ColumnKind::Categorical;
      if (jc.contains("categories"))
        c.categories = jc["categories"].get<std::vector<std::string>>();
    } else {
      throw std::runtime_error("unknown column kind: " + kind);
    }
    s.columns.push_back(std::move(c));
  }
  s.target = j.value("target", "");
  std::string task = j.value("task", "binary");
  s.task = task == "multiclass" ? Task::Multiclass : Task::Binary;
  s.validate();
  return s;
}

static json schema_to_json(const Schema& s) {
  json cols = json::array();
  for (const auto& c : s.columns) {
    json jc{{"name", c.name},
            {"kind", c.kind == ColumnKind::Numerical ? "numerical" : "categorical"}};
    if (c.kind == ColumnKind::Categorical) jc["categories"] = c.categories;
    cols.push_back(jc);
  }
  return json{{"columns", cols},
              {"target", s.target},
              {"task", s.task == Task::Binary ? "binary" : "multiclass"}};
}

void save_schema(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream os(path);
  os << schema_to_json(schema).dump(2) << "\n";
}

// ---- CSV ------------------------------------------------------------------

// RFC-4180: quoted fields may contain commas, CRLF and doubled quotes.
static std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&]() {
    row.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_row = [&]() {
    end_field();
    records.push_back(row);
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // consumed with the following \n
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (field_started || !field.empty() || !row.empty()) end_row();
  if (in_quotes) throw std::runtime_error("CSV: unterminated quote");
  return records;
}

RawTable parse_csv(const std::string& text, const Schema& schema) {
  auto records = split_csv(text);
  if (records.empty()) throw std::runtime_error("CSV: empty file");
  const auto& header = records[0];
  // header must match schema names exactly (as a set)
  std::vector<std::size_t> col_of_schema(schema.columns.size());
  std::set<std::string> schema_names;
  for (const auto& c : schema.columns) schema_names.insert(c.name);
  for (const auto& h : header)
    if (!schema_names.count(h))
      throw std::runtime_error("CSV column not in schema: " + h);
  for (std::size_t si = 0; si < schema.columns.size(); ++si) {
    auto it = std::find(header.begin(), header.end(), schema.columns[si].name);
    if (it == header.end())
      throw std::runtime_error("schema column missing from CSV: " +
                               schema.columns[si].name);
    col_of_schema[si] = static_cast<std::size_t>(it - header.begin());
  }
  RawTable table;
  table.schema = schema;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size())
      throw std::runtime_error("CSV: row " + std::to_string(r) +
                               " has wrong field count");
    std::vector<Cell> row(schema.columns.size());
    for (std::size_t si = 0; si < schema.columns.size(); ++si) {
      const std::string& raw = rec[col_of_schema[si]];
      if (raw.empty()) {
        row[si] = Cell::none();
      } else if (schema.columns[si].kind == ColumnKind::Numerical) {
        const char* s = raw.c_str();
        char* end = nullptr;
        double v = std::strtod(s, &end);
        if (end == s || *end != '\0')
          throw std::runtime_error("CSV: cannot parse number '" + raw +
                                   "' in column " + schema.columns[si].name);
        row[si] = Cell::number(v);
      } else {
        row[si] = Cell::category(raw);
      }
    }
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw std::runtime_error("CSV: no data rows");
  return table;
}

RawTable load_csv(const std::filesystem::path& csv_path,
                  const std::filesystem::path& schema_path) {
  Schema schema = load_schema(schema_path);
  std::ifstream is(csv_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open CSV: " + csv_path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_csv(ss.str(), schema);
}

static std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  return out + "\"";
}

void save_csv(const RawTable& table, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  for (std::size_t i = 0; i < table.schema.columns.size(); ++i)
    os << (i ? "," : "") << csv_quote(table.schema.columns[i].name);
  os << "\n";
  std::ostringstream num;
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      const Cell& c = row[i];
      if (c.missing) continue;
      if (table.schema.columns[i].kind == ColumnKind::Numerical) {
        num.str("");
        num.precision(17);
        num << c.num;
        os << num.str();
      } else {
        os << csv_quote(c.cat);
      }
    }
    os << "\n";
  }
}

// ---- normal CDF / inverse -------------------------------------------------

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double inv_norm_cdf(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("inv_norm_cdf: p outside (0,1)");
  // Acklam's rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // One Halley refinement step.
  double e = norm_cdf(x) - p;
  double u = e * std::sqrt(2 * 3.14159265358979323846) * std::exp(x * x / 2);
  x = x - u / (1 + x * u / 2);
  return x;
}

// ---- QuantileMap ----------------------------------------------------------

static double interp(const std::vector<double>& xs,
                     const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  std::size_t lo = hi - 1;
  double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

double QuantileMap::forward(double x) const {
  return inv_norm_cdf(interp(values, probs, x));
}

double QuantileMap::inverse(double z) const {
  double p = norm_cdf(z);
  if (p <= probs.front()) return values.front();
  if (p >= probs.back()) return values.back();
  return interp(probs, values, p);
}

static QuantileMap fit_quantile_map(std::vector<double> vals) {
  std::sort(vals.begin(), vals.end());
  const std::size_t n = vals.size();
  // midpoint ranks (r - 0.5)/N; duplicates collapse to their mean rank
  QuantileMap qm;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && vals[j] == vals[i]) ++j;
    double mean_rank = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0;
    qm.values.push_back(vals[i]);
    qm.probs.push_back((mean_rank + 0.5) / static_cast<double>(n));
    i = j;
  }
  return qm;
}

// ---- PreprocessedDataset --------------------------------------------------

std::size_t schema_n_numerical(const Schema& schema) {
  std::size_t n = 0;
  for (const auto& c : schema.columns)
    if (c.kind == ColumnKind::Numerical) ++n;
  return n;
}

std::size_t schema_width(const Schema& schema) {
  std::size_t w = 0;
  for (const auto& c : schema.columns)
    w += c.kind == ColumnKind::Numerical ? 1 : c.categories.size();
  return w;
}

std::pair<std::size_t, std::size_t> schema_feature_span(const Schema& schema,
                                                        std::size_t fi) {
  std::size_t num_before = 0, cat_width_before = 0;
  for (std::size_t i = 0; i < fi; ++i) {
    if (schema.columns[i].kind == ColumnKind::Numerical)
      ++num_before;
    else
      cat_width_before += schema.columns[i].categories.size();
  }
  if (schema.columns[fi].kind == ColumnKind::Numerical)
    return {num_before, 1};
  return {schema_n_numerical(schema) + cat_width_before,
          schema.columns[fi].categories.size()};
}

std::size_t PreprocessedDataset::n_numerical() const {
  return schema_n_numerical(schema);
}

std::pair<std::size_t, std::size_t> PreprocessedDataset::feature_span(
    std::size_t fi) const {
  return schema_feature_span(schema, fi);
}

Tensor PreprocessedDataset::rows_matrix(
    const std::vector<std::size_t>& idx) const {
  const std::size_t w = width();
  Tensor out({idx.size(), w});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(&X.data[idx[i] * w], w, &out.data[i * w]);
  return out;
}

// ---- preprocess -----------------------------------------------------------

PreprocessedDataset preprocess(const RawTable& raw, std::uint64_t seed,
                               PreprocessOptions opts) {
  const std::size_t n = raw.n_rows();
  if (n < 1) throw std::invalid_argument("preprocess: empty table");

  // splits first; all statistics below are fit on train+val rows only
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, "splits"));
  rng.shuffle(order);
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(opts.test_fraction * static_cast<double>(n)));
  if (n_test >= n) n_test = n > 1 ? n - 1 : 0;
  std::size_t n_train_orig = n - n_test;
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(opts.val_fraction * static_cast<double>(n_train_orig)));
  if (n_val >= n_train_orig) n_val = n_train_orig > 1 ? n_train_orig - 1 : 0;
  Splits splits;
  splits.test.assign(order.begin(), order.begin() + n_test);
  splits.val.assign(order.begin() + n_test, order.begin() + n_test + n_val);
  splits.train.assign(order.begin() + n_test + n_val, order.end());
  std::sort(splits.test.begin(), splits.test.end());
  std::sort(splits.val.begin(), splits.val.end());
  std::sort(splits.train.begin(), splits.train.end());

  std::vector<std::size_t> fit_rows = splits.train;
  fit_rows.insert(fit_rows.end(), splits.val.begin(), splits.val.end());

  // per-column statistics; decide drops, imputation and encodings
  struct ColPrep {
    bool keep = true;
    double impute_mean = 0.0;          // numeric
    std::string impute_mode;           // categorical
    std::vector<std::string> categories;
    QuantileMap qmap;
  };
  const std::size_t m = raw.schema.columns.size();
  std::vector<ColPrep> preps(m);

  for (std::size_t ci = 0; ci < m; ++ci) {
    const Column& col = raw.schema.columns[ci];
    ColPrep& p = preps[ci];
    if (col.kind == ColumnKind::Numerical) {
      std::vector<double> vals;
      for (std::size_t ri : fit_rows) {
        const Cell& c = raw.rows[ri][ci];
        if (!c.missing) vals.push_back(c.num);
      }
      if (vals.empty()) {
        p.keep = false;  // all missing
        continue;
      }
      double mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                    static_cast<double>(vals.size());
      bool constant =
          std::all_of(vals.begin(), vals.end(),
                      [&](double v) { return v == vals.front(); });
      if (constant) {
        p.keep = false;  // zero variance
        continue;
      }
      p.impute_mean = mean;
      std::vector<double> imputed;
      for (std::size_t ri : fit_rows) {
        const Cell& c = raw.rows[ri][ci];
        imputed.push_back(c.missing ? mean : c.num);
      }
      p.qmap = fit_quantile_map(std::move(imputed));
    } else {
      std::map<std::string, std::size_t> counts;
      for (std::size_t ri : fit_rows) {
        const Cell& c = raw.rows[ri][ci];
        if (!c.missing) ++counts[c.cat];
      }
      if (counts.empty()) {
        p.keep = false;
        continue;
      }
      // mode; ties resolved by lexicographic order (std::map iteration)
      std::size_t best = 0;
      for (const auto& [cat, cnt] : counts)
        if (cnt > best) {
          best = cnt;
          p.impute_mode = cat;
        }
      if (!col.categories.empty()) {
        p.categories = col.categories;
        for (const auto& [cat, cnt] : counts)
          if (std::find(p.categories.begin(), p.categories.end(), cat) ==
              p.categories.end())
            throw std::runtime_error("category '" + cat +
                                     "' not declared for column " + col.name);
      } else {
        // observe over the full table so held-out categories encode too
        std::set<std::string> seen;
        for (const auto& row : raw.rows)
          if (!row[ci].missing) seen.insert(row[ci].cat);
        p.categories.assign(seen.begin(), seen.end());
      }
      if (p.categories.size() < 2) p.keep = false;  // single category
    }
  }

  PreprocessedDataset ds;
  ds.splits = std::move(splits);
  ds.schema.target = raw.schema.target;
  ds.schema.task = raw.schema.task;
  // Eq.-2 layout: numericals first, then categorical one-hot blocks,
  // each group in schema order
  std::vector<std::size_t> num_cols, cat_cols;
  for (std::size_t ci = 0; ci < m; ++ci) {
    if (!preps[ci].keep) continue;
    if (raw.schema.columns[ci].kind == ColumnKind::Numerical)
      num_cols.push_back(ci);
    else
      cat_cols.push_back(ci);
  }
  if (num_cols.empty() && cat_cols.empty())
    throw std::runtime_error("preprocess: all columns dropped");
  if (!raw.schema.target.empty()) {
    std::size_t ti = raw.schema.column_index(raw.schema.target);
    if (!preps[ti].keep)
      throw std::runtime_error("preprocess: target column dropped");
  }
  std::size_t width = num_cols.size();
  for (std::size_t ci : cat_cols) width += preps[ci].categories.size();

  for (std::size_t ci : num_cols) {
    ds.schema.columns.push_back({raw.schema.columns[ci].name,
                                 ColumnKind::Numerical,
                                 {}});
    ds.quantile_maps.push_back(preps[ci].qmap);
  }
  for (std::size_t ci : cat_cols)
    ds.schema.columns.push_back({raw.schema.columns[ci].name,
                                 ColumnKind::Categorical,
                                 preps[ci].categories});

  ds.X = Tensor({n, width});
  for (std::size_t ri = 0; ri < n; ++ri) {
    std::size_t off = 0;
    for (std::size_t ci : num_cols) {
      const Cell& c = raw.rows[ri][ci];
      double v = c.missing ? preps[ci].impute_mean : c.num;
      ds.X.data[ri * width + off] = static_cast<real>(preps[ci].qmap.forward(v));
      ++off;
    }
    for (std::size_t ci : cat_cols) {
      const auto& cats = preps[ci].categories;
      const Cell& c = raw.rows[ri][ci];
      const std::string& label = c.missing ? preps[ci].impute_mode : c.cat;
      auto it = std::find(cats.begin(), cats.end(), label);
      if (it == cats.end())
        throw std::runtime_error("unknown category '" + label + "' in column " +
                                 raw.schema.columns[ci].name);
      ds.X.data[ri * width + off + static_cast<std::size_t>(it - cats.begin())] =
          real(1);
      off += cats.size();
    }
  }
  return ds;
}

// ---- inverse_transform ----------------------------------------------------

RawTable inverse_transform(const Tensor& X_syn, const PreprocessedDataset& ds) {
  if (X_syn.ndim() != 2 || X_syn.shape[1] != ds.width())
    throw std::invalid_argument("inverse_transform: layout mismatch");
  RawTable out;
  out.schema = ds.schema;
  const std::size_t w = ds.width();
  for (std::size_t ri = 0; ri < X_syn.shape[0]; ++ri) {
    std::vector<Cell> row;
    std::size_t qi = 0;
    for (std::size_t fi = 0; fi < ds.schema.columns.size(); ++fi) {
      auto [off, span] = ds.feature_span(fi);
      if (ds.schema.columns[fi].kind == ColumnKind::Numerical) {
        double z = X_syn.data[ri * w + off];
        row.push_back(Cell::number(ds.quantile_maps[qi].inverse(z)));
        ++qi;
      } else {
        std::size_t best = 0;
        for (std::size_t j = 1; j < span; ++j)
          if (X_syn.data[ri * w + off + j] > X_syn.data[ri * w + off + best])
            best = j;
        row.push_back(Cell::category(ds.schema.columns[fi].categories[best]));
      }
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---- size buckets ---------------------------------------------------------

SizeBucket size_bucket(std::size_t n_train) {
  if (n_train < 1000) return SizeBucket::Small;
  if (n_train < 5000) return SizeBucket::Medium;
  return SizeBucket::Large;
}

std::string to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::Small: return "small";
    case SizeBucket::Medium: return "medium";
    default: return "large";
  }
}

// ---- persistence ----------------------------------------------------------

void save_dataset(const PreprocessedDataset& ds,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json maps = json::array();
  for (const auto& qm : ds.quantile_maps)
    maps.push_back({{"values", qm.values}, {"probs", qm.probs}});
  json manifest{{"schema", schema_to_json(ds.schema)},
                {"quantile_maps", maps},
                {"splits",
                 {{"train", ds.splits.train},
                  {"val", ds.splits.val},
                  {"test", ds.splits.test}}},
                {"shape", ds.X.shape}};
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << "\n";
  write_f32(dir / "X.f32", ds.X.data);
}

PreprocessedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is)
    throw std::runtime_error("cannot open dataset manifest in " + dir.string());
  json manifest;
  is >> manifest;
  PreprocessedDataset ds;
  {
    const json& js = manifest.at("schema");
    for (const auto& jc : js.at("columns")) {
      Column c;
      c.name = jc.at("name").get<std::string>();
      c.kind = jc.at("kind") == "numerical" ? ColumnKind::Numerical
                                            : ColumnKind::Categorical;
      if (jc.contains("categories"))
        c.categories = jc["categories"].get<std::vector<std::string>>();
      ds.schema.columns.push_back(std::move(c));
    }
    ds.schema.target = js.value("target", "");
    ds.schema.task =
        js.value("task", "binary") == "multiclass" ? Task::Multiclass : Task::Binary;
  }
  for (const auto& jm : manifest.at("quantile_maps")) {
    QuantileMap qm;
    qm.values = jm.at("values").get<std::vector<double>>();
    qm.probs = jm.at("probs").get<std::vector<double>>();
    ds.quantile_maps.push_back(std::move(qm));
  }
  ds.splits.train = manifest["splits"]["train"].get<std::vector<std::size_t>>();
  ds.splits.val = manifest["splits"]["val"].get<std::vector<std::size_t>>();
  ds.splits.test = manifest["splits"]["test"].get<std::vector<std::size_t>>();
  auto shape = manifest.at("shape").get<std::vector<std::size_t>>();
  ds.X = Tensor(shape, read_f32(dir / "X.f32"));
  return ds;
}

}  // namespace tabgen
