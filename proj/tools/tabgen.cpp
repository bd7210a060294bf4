#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "tabgen/analysis.hpp"
#include "tabgen/dataio.hpp"
#include "tabgen/metrics.hpp"
#include "tabgen/vae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tabgen;

namespace {

constexpr const char* kVersion = "0.1.0";

// validation failures exit 1, anything else that throws exits 2
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw ValidationError("no such input: " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

// FNV-1a over the file bytes; enough to detect artifact drift
std::string file_checksum(const fs::path& p) {
  std::string bytes = read_file(p);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::size_t thread_cap() {
  const char* env = std::getenv("TABGEN_THREADS");
  if (!env) return 1;
  long v = std::strtol(env, nullptr, 10);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

// Map a raw synthetic table into the one-hot training layout using the
// transforms fitted on the real dataset.
Tensor encode_with_fitted(const RawTable& raw, const PreprocessedDataset& ds) {
  const Schema& s = ds.schema;
  if (raw.schema.columns.size() != s.columns.size())
    throw ValidationError("synthetic table does not match the dataset schema");
  Tensor x({raw.n_rows(), ds.width()});
  std::size_t qi = 0;
  for (std::size_t fi = 0; fi < s.columns.size(); ++fi) {
    auto [off, span] = ds.feature_span(fi);
    const Column& col = s.columns[fi];
    if (col.kind == ColumnKind::Numerical) {
      for (std::size_t r = 0; r < raw.n_rows(); ++r) {
        const Cell& c = raw.rows[r][fi];
        if (c.missing)
          throw ValidationError("missing value in synthetic column " +
                                col.name);
        x.at2(r, off) = static_cast<real>(ds.quantile_maps[qi].forward(c.num));
      }
      ++qi;
    } else {
      for (std::size_t r = 0; r < raw.n_rows(); ++r) {
        const Cell& c = raw.rows[r][fi];
        if (c.missing)
          throw ValidationError("missing value in synthetic column " +
                                col.name);
        auto it = std::find(col.categories.begin(), col.categories.end(),
                            c.cat);
        if (it == col.categories.end())
          throw ValidationError("unknown category '" + c.cat + "' in column " +
                                col.name);
        x.at2(r, off + static_cast<std::size_t>(
                           it - col.categories.begin())) = 1;
      }
    }
  }
  return x;
}

ModelConfig model_config_from_json(const json& m, const std::string& variant) {
  ModelConfig cfg;
  cfg.d = m.value("d", cfg.d);
  cfg.hidden_tokens = m.value("hidden_tokens", cfg.hidden_tokens);
  cfg.latent_tokens = m.value("latent_tokens", cfg.latent_tokens);
  cfg.transformer.blocks = m.value("blocks", cfg.transformer.blocks);
  cfg.transformer.heads = m.value("heads", cfg.transformer.heads);
  cfg.transformer.hidden = m.value("ffn_hidden", cfg.transformer.hidden);
  cfg.multinomial_sampling =
      m.value("multinomial_sampling", cfg.multinomial_sampling);
  cfg.variant = ModelVariant::from_name(variant);
  cfg.validate();
  return cfg;
}

MetricOptions metric_options_from_json(const json& m) {
  MetricOptions opts;
  opts.quantile_grid = m.value("quantile_grid", opts.quantile_grid);
  opts.beta_k = m.value("beta_k", opts.beta_k);
  opts.bins = m.value("bins", opts.bins);
  opts.classifier.rounds = m.value("rounds", opts.classifier.rounds);
  return opts;
}

// ---- run_experiment -------------------------------------------------------

struct StageRecord {
  std::string name;
  std::string status;
  double seconds = 0;
};

json run_experiment(const json& cfg) {
  if (!cfg.contains("variants") || cfg["variants"].empty())
    throw ValidationError("config needs at least one variant");
  if (!cfg.contains("seeds"))
    throw ValidationError("config needs explicit seeds");
  const json& seeds = cfg["seeds"];
  for (const char* k : {"preprocess", "build", "train", "sample", "evaluate",
                        "analyze"})
    if (!seeds.contains(k))
      throw ValidationError(std::string("config needs seeds.") + k);

  std::string run_id = cfg.value("run_id", std::string("run"));
  fs::path out = fs::path(cfg.value("out_dir", std::string("out"))) / run_id;
  fs::create_directories(out);

  std::vector<StageRecord> stages;
  std::vector<fs::path> artifacts;
  auto timed = [&](const std::string& name, auto&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (...) {
      stages.push_back(
          {name, "failed",
           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
               .count()});
      throw;
    }
    stages.push_back(
        {name, "ok",
         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
             .count()});
  };
  auto emit = [&](const fs::path& p, const std::string& text) {
    write_file(p, text);
    artifacts.push_back(p);
  };

  PreprocessedDataset ds;
  timed("preprocess", [&] {
    auto raw = load_csv(cfg.at("dataset").at("csv").get<std::string>(),
                        cfg.at("dataset").at("schema").get<std::string>());
    PreprocessOptions popts;
    popts.test_fraction = cfg.value("test_fraction", popts.test_fraction);
    popts.val_fraction = cfg.value("val_fraction", popts.val_fraction);
    ds = preprocess(raw, seeds["preprocess"].get<std::uint64_t>(), popts);
  });

  json model_cfg = cfg.value("model", json::object());
  std::size_t epochs =
      cfg.value("train", json::object()).value("epochs", std::size_t{500});
  std::size_t batch_override =
      cfg.value("train", json::object()).value("batch", std::size_t{0});
  std::size_t sample_n = cfg.value("sample_n", ds.splits.train.size());
  MetricOptions mopts =
      metric_options_from_json(cfg.value("metrics", json::object()));

  auto real_train = ds.rows_matrix(ds.splits.train);
  auto real_test = ds.rows_matrix(ds.splits.test);

  std::map<std::string, MetricsReport> reports;
  for (const auto& vj : cfg["variants"]) {
    std::string variant = vj.get<std::string>();
    ModelConfig vcfg = model_config_from_json(model_cfg, variant);
    VAEModel model;
    timed("train:" + variant, [&] {
      model = build_model(ds.schema, vcfg, seeds["build"].get<std::uint64_t>());
      train(model, ds, {.epochs = epochs, .batch_override = batch_override},
            seeds["train"].get<std::uint64_t>());
      fs::path ckpt = out / "checkpoints" / variant;
      save_model(model, ckpt);
      for (const auto& e : fs::directory_iterator(ckpt))
        artifacts.push_back(e.path());
    });
    timed("sample:" + variant, [&] {
      auto syn =
          sample(model, sample_n, seeds["sample"].get<std::uint64_t>());
      auto raw_syn = inverse_transform(syn, ds);
      fs::path p = out / "synthetic" / (variant + ".csv");
      fs::create_directories(p.parent_path());
      save_csv(raw_syn, p);
      artifacts.push_back(p);
    });
    timed("evaluate:" + variant, [&] {
      auto raw_syn = parse_csv(
          read_file(out / "synthetic" / (variant + ".csv")), ds.schema);
      auto syn = encode_with_fitted(raw_syn, ds);
      auto metrics = evaluate_all(real_train, syn, real_test, ds.schema, mopts,
                                  seeds["evaluate"].get<std::uint64_t>());
      reports[variant] = metrics;
      emit(out / "metrics" / (variant + ".json"), metrics.to_json());
    });
    timed("analyze:" + variant, [&] {
      std::uint64_t aseed = seeds["analyze"].get<std::uint64_t>();
      for (auto [comp, present] :
           {std::pair{Component::Enc, vcfg.variant.enc},
            {Component::Lat, vcfg.variant.lat},
            {Component::Dec, vcfg.variant.dec}}) {
        if (!present) continue;
        auto grid = capture_similarity_grid(model, real_test, comp, aseed);
        std::string base = variant + "_" + to_string(comp);
        emit(out / "analysis" / (base + "_cka.csv"), grid.to_csv());
        emit(out / "analysis" / (base + "_cka.json"), grid.to_json());
      }
      if (vcfg.variant.enc) {
        ForwardCaptures caps;
        reconstruct(model, real_test, aseed, true, &caps);
        emit(out / "analysis" / (variant + "_enc_sigma.json"),
             residual_sigma(caps.enc).to_json());
      }
    });
  }

  timed("report", [&] {
    auto emit_gains = [&](const char* fname, const auto& sequence) {
      std::string csv;
      for (const auto& [from, to] : sequence) {
        if (!reports.count(from) || !reports.count(to)) continue;
        PairedReport pr{reports[from], reports[to],
                        size_bucket(ds.splits.train.size())};
        std::string block = gain_aggregation({pr}).to_csv(from + "->" + to);
        if (!csv.empty()) {  // keep a single header
          block.erase(0, block.find('\n') + 1);
        }
        csv += block;
      }
      if (!csv.empty()) emit(out / "analysis" / fname, csv);
    };
    emit_gains("gains_forward.csv", forward_sequence());
    emit_gains("gains_backward.csv", backward_sequence());
  });

  json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = cfg;
  manifest["threads"] = thread_cap();
  json jst = json::array();
  for (const auto& s : stages)
    jst.push_back({{"name", s.name}, {"status", s.status},
                   {"seconds", s.seconds}});
  manifest["stages"] = jst;
  json files = json::array();
  for (const auto& p : artifacts)
    files.push_back({{"path", fs::relative(p, out).string()},
                     {"checksum", file_checksum(p)}});
  manifest["files"] = files;
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transformer-placement laboratory for tabular vaes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "fit transforms and splits");
  std::string pre_csv, pre_schema, pre_out;
  std::uint64_t pre_seed = 0;
  PreprocessOptions pre_opts;
  pre->add_option("--csv", pre_csv)->required();
  pre->add_option("--schema", pre_schema)->required();
  pre->add_option("--out", pre_out)->required();
  pre->add_option("--seed", pre_seed)->required();
  pre->add_option("--test-fraction", pre_opts.test_fraction);
  pre->add_option("--val-fraction", pre_opts.val_fraction);

  // train
  auto* tr = app.add_subcommand("train", "train one variant");
  std::string tr_dataset, tr_variant = "VAE", tr_out;
  std::uint64_t tr_build_seed = 0, tr_seed = 0;
  std::size_t tr_epochs = 500, tr_batch = 0;
  ModelConfig tr_cfg;
  tr->add_option("--dataset", tr_dataset)->required();
  tr->add_option("--variant", tr_variant);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--batch", tr_batch);
  tr->add_option("--build-seed", tr_build_seed)->required();
  tr->add_option("--seed", tr_seed)->required();
  tr->add_option("--d", tr_cfg.d);
  tr->add_option("--hidden-tokens", tr_cfg.hidden_tokens);
  tr->add_option("--latent-tokens", tr_cfg.latent_tokens);
  tr->add_option("--blocks", tr_cfg.transformer.blocks);
  tr->add_option("--heads", tr_cfg.transformer.heads);
  tr->add_option("--ffn-hidden", tr_cfg.transformer.hidden);
  tr->add_option("--out", tr_out)->required();

  // sample
  auto* sa = app.add_subcommand("sample", "draw synthetic rows");
  std::string sa_ckpt, sa_dataset, sa_out;
  std::size_t sa_n = 0;
  std::uint64_t sa_seed = 0;
  sa->add_option("--checkpoint", sa_ckpt)->required();
  sa->add_option("--dataset", sa_dataset)->required();
  sa->add_option("--n", sa_n)->required();
  sa->add_option("--seed", sa_seed)->required();
  sa->add_option("--out", sa_out)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score synthetic against real");
  std::string ev_real, ev_syn, ev_schema, ev_out;
  std::uint64_t ev_seed = 0, ev_pre_seed = 0;
  std::size_t ev_rounds = 0;
  ev->add_option("--real", ev_real)->required();
  ev->add_option("--syn", ev_syn)->required();
  ev->add_option("--schema", ev_schema)->required();
  ev->add_option("--seed", ev_seed)->required();
  ev->add_option("--preprocess-seed", ev_pre_seed);
  ev->add_option("--rounds", ev_rounds);
  ev->add_option("--out", ev_out);

  // analyze
  auto* an = app.add_subcommand("analyze", "similarity and sigma reports");
  std::string an_ckpt, an_dataset, an_component = "enc", an_out;
  std::uint64_t an_seed = 0;
  an->add_option("--checkpoint", an_ckpt)->required();
  an->add_option("--dataset", an_dataset)->required();
  an->add_option("--component", an_component);
  an->add_option("--seed", an_seed)->required();
  an->add_option("--out", an_out)->required();

  // report
  auto* re = app.add_subcommand("report", "aggregate metric gains");
  std::vector<std::string> re_before, re_after;
  std::vector<std::size_t> re_sizes;
  std::string re_transition = "before->after", re_out;
  re->add_option("--before", re_before)->required();
  re->add_option("--after", re_after)->required();
  re->add_option("--n-train", re_sizes)->required();
  re->add_option("--transition", re_transition);
  re->add_option("--out", re_out);

  // run
  auto* ru = app.add_subcommand("run", "full experiment from a config");
  std::string ru_config;
  ru->add_option("--config", ru_config)->required();
  ru->allow_extras();  // dotted-name config overrides

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // bad flags are validation errors
  }

  try {
    if (*pre) {
      require_exists(pre_csv);
      require_exists(pre_schema);
      auto raw = load_csv(pre_csv, pre_schema);
      auto ds = preprocess(raw, pre_seed, pre_opts);
      save_dataset(ds, pre_out);
    } else if (*tr) {
      require_exists(tr_dataset);
      auto ds = load_dataset(tr_dataset);
      tr_cfg.variant = ModelVariant::from_name(tr_variant);
      tr_cfg.validate();
      auto model = build_model(ds.schema, tr_cfg, tr_build_seed);
      train(model, ds, {.epochs = tr_epochs, .batch_override = tr_batch},
            tr_seed);
      save_model(model, tr_out);
    } else if (*sa) {
      require_exists(sa_ckpt);
      require_exists(sa_dataset);
      auto model = load_model(sa_ckpt);
      auto ds = load_dataset(sa_dataset);
      auto syn = sample(model, sa_n, sa_seed);
      save_csv(inverse_transform(syn, ds), sa_out);
    } else if (*ev) {
      require_exists(ev_real);
      require_exists(ev_syn);
      require_exists(ev_schema);
      auto raw = load_csv(ev_real, ev_schema);
      auto ds = preprocess(raw, ev_pre_seed);
      auto raw_syn = parse_csv(read_file(ev_syn), ds.schema);
      auto syn = encode_with_fitted(raw_syn, ds);
      MetricOptions opts;
      if (ev_rounds > 0) opts.classifier.rounds = ev_rounds;
      auto metrics =
          evaluate_all(ds.rows_matrix(ds.splits.train), syn,
                       ds.rows_matrix(ds.splits.test), ds.schema, opts,
                       ev_seed);
      if (ev_out.empty())
        std::cout << metrics.to_json() << "\n";
      else
        write_file(ev_out, metrics.to_json() + "\n");
    } else if (*an) {
      require_exists(an_ckpt);
      require_exists(an_dataset);
      auto model = load_model(an_ckpt);
      auto ds = load_dataset(an_dataset);
      Component comp = component_from_string(an_component);
      bool present = (comp == Component::Enc && model.config.variant.enc) ||
                     (comp == Component::Lat && model.config.variant.lat) ||
                     (comp == Component::Dec && model.config.variant.dec);
      if (!present)
        throw ValidationError("variant " + model.config.variant.name() +
                              " has no " + an_component + " transformer");
      auto x_test = ds.rows_matrix(ds.splits.test);
      auto grid = capture_similarity_grid(model, x_test, comp, an_seed);
      write_file(fs::path(an_out) / (an_component + "_cka.csv"),
                 grid.to_csv());
      write_file(fs::path(an_out) / (an_component + "_cka.json"),
                 grid.to_json());
      if (comp == Component::Enc) {
        ForwardCaptures caps;
        reconstruct(model, x_test, an_seed, true, &caps);
        write_file(fs::path(an_out) / "enc_sigma.json",
                   residual_sigma(caps.enc).to_json());
      }
    } else if (*re) {
      if (re_before.size() != re_after.size() ||
          re_before.size() != re_sizes.size())
        throw ValidationError("--before/--after/--n-train must align");
      for (const auto& f : re_before) require_exists(f);
      for (const auto& f : re_after) require_exists(f);
      std::vector<PairedReport> pairs;
      for (std::size_t i = 0; i < re_before.size(); ++i)
        pairs.push_back({MetricsReport::from_json(read_file(re_before[i])),
                         MetricsReport::from_json(read_file(re_after[i])),
                         size_bucket(re_sizes[i])});
      auto csv = gain_aggregation(pairs).to_csv(re_transition);
      if (re_out.empty())
        std::cout << csv;
      else
        write_file(re_out, csv);
    } else if (*ru) {
      require_exists(ru_config);
      json cfg = json::parse(read_file(ru_config));
      // remaining arguments override config fields by dotted name
      auto extras = ru->remaining();
      for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0 || i + 1 >= extras.size())
          throw ValidationError("override needs --dotted.name value: " + key);
        key = key.substr(2);
        std::string value = extras[++i];
        std::string pointer = "/" + key;
        for (auto& c : pointer)
          if (c == '.') c = '/';
        json parsed;
        try {
          parsed = json::parse(value);
        } catch (const json::parse_error&) {
          parsed = value;
        }
        cfg[json::json_pointer(pointer)] = parsed;
      }
      run_experiment(cfg);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
