#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dcdh/dataset.hpp"
#include "dcdh/error.hpp"
#include "dcdh/retrieval.hpp"
#include "dcdh/train.hpp"

// Command-line front end: synth, split, train, encode, eval and run (the
// whole pipeline from one config file).
namespace dcdh::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kNumerical = 1, kBadInput = 2 };

/// Flat key=value configuration with '#' comments.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin = "config") {
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw InputError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const std::string key = detail::trim(line.substr(0, eq));
      if (key.empty()) throw InputError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = detail::trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path.string());
    return parse(in, path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if constexpr (std::is_same_v<T, std::string>) {
      return *v;
    } else {
      return detail::parse_number<T>(*v, "for config key '" + key + "'");
    }
  }

  /// Keys not in `known`; used to reject typos.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::vector<long> parse_k_grid(const std::string& s) {
  std::vector<long> grid;
  for (const auto& f : detail::split_commas(s)) {
    grid.push_back(detail::parse_number<long>(f, "in K grid"));
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    detail::require(grid[i] >= 1 && (i == 0 || grid[i] > grid[i - 1]),
                    "K grid must be positive and strictly ascending");
  }
  detail::require(!grid.empty(), "K grid must not be empty");
  return grid;
}

struct SynthSpec {
  long n = 600;
  long d = 16;
  long c = 3;
  double spread = 1.0;
};

struct RunConfig {
  std::optional<fs::path> dataset;  // otherwise synthesize
  SynthSpec synth;
  std::optional<long> query_count;
  double query_fraction = 0.1;
  TrainConfig train;
  std::vector<long> k_grid{1, 5, 10, 20, 50, 100, 200, 500};
  fs::path out_dir = "dcdh_out";
  std::uint64_t seed = 0;

  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys{
        "seed", "dataset", "synth_n", "synth_d", "synth_c", "synth_spread", "query_count",
        "query_fraction", "bits", "rho", "alpha", "lambda", "mu", "gamma", "epochs",
        "batch_size", "dcc_interval", "learning_rate", "mode", "visual_hidden",
        "label_hidden", "dcc_max_sweeps", "dcc_tol", "k_grid", "out_dir"};
    return keys;
  }

  static RunConfig from(const KeyValueConfig& kv) {
    if (auto bad = kv.unknown_keys(known_keys()); !bad.empty()) {
      throw InputError("unknown config key '" + bad.front() + "'");
    }
    if (!kv.has("seed")) throw InputError("config must set 'seed'");
    RunConfig rc;
    rc.seed = kv.get_or<std::uint64_t>("seed", 0);
    if (auto p = kv.get("dataset")) rc.dataset = fs::path(*p);
    rc.synth.n = kv.get_or<long>("synth_n", rc.synth.n);
    rc.synth.d = kv.get_or<long>("synth_d", rc.synth.d);
    rc.synth.c = kv.get_or<long>("synth_c", rc.synth.c);
    rc.synth.spread = kv.get_or<double>("synth_spread", rc.synth.spread);
    if (kv.has("query_count")) rc.query_count = kv.get_or<long>("query_count", 0);
    rc.query_fraction = kv.get_or<double>("query_fraction", rc.query_fraction);

    auto& t = rc.train;
    const long bits = kv.get_or<long>("bits", 16);
    t.hp = HyperParams::defaults_for(bits);
    t.hp.rho = kv.get_or<double>("rho", t.hp.rho);
    t.hp.alpha = kv.get_or<double>("alpha", t.hp.alpha);
    t.hp.lambda = kv.get_or<double>("lambda", t.hp.lambda);
    t.hp.mu = kv.get_or<double>("mu", t.hp.mu);
    t.hp.gamma_focal = kv.get_or<double>("gamma", t.hp.gamma_focal);
    t.hp.validate();
    t.epochs = kv.get_or<int>("epochs", t.epochs);
    t.batch_size = kv.get_or<long>("batch_size", t.batch_size);
    t.dcc_interval = kv.get_or<int>("dcc_interval", t.dcc_interval);
    t.learning_rate = kv.get_or<double>("learning_rate", t.learning_rate);
    t.mode = parse_mode(kv.get_or<std::string>("mode", "full"));
    t.arch.visual_hidden = kv.get_or<long>("visual_hidden", t.arch.visual_hidden);
    t.arch.label_hidden = kv.get_or<long>("label_hidden", t.arch.label_hidden);
    t.dcc.max_sweeps = kv.get_or<int>("dcc_max_sweeps", t.dcc.max_sweeps);
    t.dcc.tol = kv.get_or<double>("dcc_tol", t.dcc.tol);
    t.seed = rc.seed;
    if (auto g = kv.get("k_grid")) rc.k_grid = parse_k_grid(*g);
    rc.out_dir = kv.get_or<std::string>("out_dir", rc.out_dir.string());
    if (rc.dataset && !fs::exists(*rc.dataset)) {
      throw InputError("dataset not found: " + rc.dataset->string());
    }
    return rc;
  }
};

inline std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline void write_history_csv(const fs::path& path, const std::vector<HistoryRow>& history) {
  io::atomic_write(path, [&](std::ostream& out) {
    out << "epoch,L1,L2,L3,total\n";
    for (const auto& r : history) {
      out << r.epoch << ',' << fmt4(r.l1) << ',' << fmt4(r.l2) << ',' << fmt4(r.l3) << ','
          << fmt4(r.total) << '\n';
    }
  });
}

inline std::string format_report(const EvalReport& report, const std::string& title) {
  std::ostringstream out;
  out << "# " << title << '\n';
  out << "MAP," << fmt4(report.map.map) << '\n';
  out << "queries_evaluated," << report.map.evaluated << '\n';
  out << "queries_skipped," << report.map.skipped << '\n';
  out << "K,precision\n";
  for (std::size_t i = 0; i < report.k_grid.size(); ++i) {
    out << report.k_grid[i] << ',' << fmt4(report.precision[i]) << '\n';
  }
  return out.str();
}

inline void write_curve_csv(const fs::path& path, const EvalReport& report) {
  io::atomic_write(path, [&](std::ostream& out) {
    out << "K,precision\n";
    for (std::size_t i = 0; i < report.k_grid.size(); ++i) {
      out << report.k_grid[i] << ',' << fmt4(report.precision[i]) << '\n';
    }
  });
}

inline void write_text(const fs::path& path, const std::string& text) {
  io::atomic_write(path, [&](std::ostream& out) { out << text; });
}

inline DatasetFormat format_for(const fs::path& path, const std::string& requested) {
  if (requested == "csv") return DatasetFormat::csv;
  if (requested == "packed") return DatasetFormat::packed;
  detail::require(requested == "auto", "format must be csv, packed or auto");
  return path.extension() == ".csv" ? DatasetFormat::csv : DatasetFormat::packed;
}

inline long resolve_query_count(const RunConfig& rc, long n) {
  if (rc.query_count) return *rc.query_count;
  return std::max(1L, static_cast<long>(std::lround(rc.query_fraction * static_cast<double>(n))));
}

struct PipelineResult {
  EvalReport dcdh;
  EvalReport lsh;
};

/// synth/load -> split -> train -> encode -> LSH baseline -> eval, with every
/// artifact written under rc.out_dir.
inline PipelineResult run_pipeline(const RunConfig& rc, std::ostream& log) {
  fs::create_directories(rc.out_dir);
  const Dataset data = rc.dataset ? load_dataset(*rc.dataset)
                                  : synth_clusters(rc.synth.n, rc.synth.d, rc.synth.c,
                                                   rc.synth.spread, rc.seed);
  const Split split = split_query_database(data, resolve_query_count(rc, data.n()), rc.seed);
  const Dataset query = data.subset(split.query_indices);
  const Dataset db = data.subset(split.database_indices);
  save_dataset(query, rc.out_dir / "query.dcdh", DatasetFormat::packed);
  save_dataset(db, rc.out_dir / "database.dcdh", DatasetFormat::packed);

  const Model model = train(db, rc.train, [&](const HistoryRow& r) {
    log << "epoch " << r.epoch << " total " << fmt4(r.total) << '\n';
  });
  save_model(model, rc.out_dir / "model.ckpt");
  write_history_csv(rc.out_dir / "history.csv", model.history);

  const PackedCodes query_codes = pack_codes(encode(query.features(), model));
  const PackedCodes db_codes = pack_codes(model.codes);
  save_codes(query_codes, rc.out_dir / "query.codes");
  save_codes(db_codes, rc.out_dir / "database.codes");

  const long k = rc.train.hp.k;
  const PackedCodes lsh_query = pack_codes(lsh_codes(query.features(), k, rc.seed));
  const PackedCodes lsh_db = pack_codes(lsh_codes(db.features(), k, rc.seed));
  save_codes(lsh_query, rc.out_dir / "lsh_query.codes");
  save_codes(lsh_db, rc.out_dir / "lsh_database.codes");

  PipelineResult res{evaluate(query_codes, db_codes, query.labels(), db.labels(), rc.k_grid),
                     evaluate(lsh_query, lsh_db, query.labels(), db.labels(), rc.k_grid)};
  write_text(rc.out_dir / "report.txt",
             format_report(res.dcdh, "DCDH mode=" + std::string(to_string(rc.train.mode))) +
                 format_report(res.lsh, "LSH"));
  write_curve_csv(rc.out_dir / "curve.csv", res.dcdh);
  write_curve_csv(rc.out_dir / "lsh_curve.csv", res.lsh);
  return res;
}

/// Parses argv and dispatches. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Learn, encode and evaluate binary hash codes"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a Gaussian-cluster toy dataset");
  SynthSpec spec;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  std::string synth_format = "auto";
  synth->add_option("--n", spec.n, "Number of samples")->required();
  synth->add_option("--d", spec.d, "Feature dimension")->required();
  synth->add_option("--c", spec.c, "Number of classes")->required();
  synth->add_option("--spread", spec.spread, "Within-cluster standard deviation");
  synth->add_option("--seed", synth_seed, "Random seed")->required();
  synth->add_option("-o,--out", synth_out, "Output dataset path")->required();
  synth->add_option("--format", synth_format, "csv, packed or auto (by extension)");

  // split
  auto* split = app.add_subcommand("split", "Partition a dataset into query and database files");
  std::string split_in, split_q, split_db;
  std::optional<long> split_nq;
  std::uint64_t split_seed = 0;
  split->add_option("--in", split_in, "Input dataset")->required();
  split->add_option("--n-query", split_nq, "Number of queries (default 10% of n)");
  split->add_option("--seed", split_seed, "Random seed")->required();
  split->add_option("--query-out", split_q, "Query dataset path")->required();
  split->add_option("--db-out", split_db, "Database dataset path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset; writes checkpoint, history and codes");
  std::string train_config;
  std::map<std::string, std::string> train_over;
  train_cmd->add_option("--config", train_config, "key=value config file")->required();
  for (const char* key : {"dataset", "mode", "epochs", "learning_rate", "seed", "out_dir", "bits"}) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    train_cmd->add_option_function<std::string>(
        flag, [&train_over, key](const std::string& v) { train_over[key] = v; },
        std::string("Override config key ") + key);
  }

  // encode
  auto* enc = app.add_subcommand("encode", "Encode a dataset to a codes file");
  std::string enc_ckpt, enc_data, enc_out;
  std::string enc_method = "dcdh";
  long enc_bits = 16;
  std::uint64_t enc_seed = 0;
  enc->add_option("--checkpoint", enc_ckpt, "Model checkpoint (method dcdh)");
  enc->add_option("--dataset", enc_data, "Dataset to encode")->required();
  enc->add_option("-o,--out", enc_out, "Output codes path")->required();
  enc->add_option("--method", enc_method, "dcdh or lsh");
  enc->add_option("--bits", enc_bits, "Code length (method lsh)");
  enc->add_option("--seed", enc_seed, "Hyperplane seed (method lsh)");

  // eval
  auto* ev = app.add_subcommand("eval", "MAP and precision@K of query codes against database codes");
  std::string ev_qc, ev_dbc, ev_ql, ev_dbl, ev_report, ev_curve;
  std::string ev_grid = "1,5,10,20,50,100,200,500";
  ev->add_option("--query-codes", ev_qc)->required();
  ev->add_option("--db-codes", ev_dbc)->required();
  ev->add_option("--query-labels", ev_ql, "Dataset holding the query labels")->required();
  ev->add_option("--db-labels", ev_dbl, "Dataset holding the database labels")->required();
  ev->add_option("--k", ev_grid, "Comma-separated ascending K grid");
  ev->add_option("--report", ev_report, "Write the report here as well as stdout");
  ev->add_option("--curve", ev_curve, "Write K,precision CSV here");

  // run
  auto* run_cmd = app.add_subcommand("run", "Full pipeline (synth or load, split, train, encode, LSH, eval)");
  std::string run_config;
  run_cmd->add_option("--config", run_config, "key=value config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    if (synth->parsed()) {
      const Dataset ds = synth_clusters(spec.n, spec.d, spec.c, spec.spread, synth_seed);
      save_dataset(ds, synth_out, format_for(synth_out, synth_format));
      out << "wrote " << ds.n() << " samples to " << synth_out << '\n';
    } else if (split->parsed()) {
      const Dataset ds = load_dataset(split_in);
      const long nq = split_nq.value_or(std::max(1L, ds.n() / 10));
      const Split sp = split_query_database(ds, nq, split_seed);
      save_dataset(ds.subset(sp.query_indices), split_q, format_for(split_q, "auto"));
      save_dataset(ds.subset(sp.database_indices), split_db, format_for(split_db, "auto"));
      out << "query " << sp.query_indices.size() << ", database " << sp.database_indices.size()
          << '\n';
    } else if (train_cmd->parsed()) {
      auto kv = KeyValueConfig::load(train_config);
      for (const auto& [k, v] : train_over) kv.set(k, v);
      const RunConfig rc = RunConfig::from(kv);
      if (!rc.dataset) throw InputError("train: config must set 'dataset'");
      const Dataset ds = load_dataset(*rc.dataset);
      fs::create_directories(rc.out_dir);
      const Model model = train(ds, rc.train, [&](const HistoryRow& r) {
        out << "epoch " << r.epoch << " L1 " << fmt4(r.l1) << " L2 " << fmt4(r.l2) << " L3 "
            << fmt4(r.l3) << " total " << fmt4(r.total) << '\n';
      });
      save_model(model, rc.out_dir / "model.ckpt");
      write_history_csv(rc.out_dir / "history.csv", model.history);
      save_codes(pack_codes(model.codes), rc.out_dir / "train.codes");
    } else if (enc->parsed()) {
      const Dataset ds = load_dataset(enc_data);
      CodeMatrix codes;
      if (enc_method == "dcdh") {
        if (enc_ckpt.empty()) throw InputError("encode: --checkpoint is required for method dcdh");
        codes = encode(ds.features(), load_model(enc_ckpt));
      } else if (enc_method == "lsh") {
        codes = lsh_codes(ds.features(), enc_bits, enc_seed);
      } else {
        throw InputError("encode: unknown method '" + enc_method + "'");
      }
      save_codes(pack_codes(codes), enc_out);
      out << "encoded " << codes.n() << " samples with " << codes.k() << " bits\n";
    } else if (ev->parsed()) {
      const PackedCodes qc = load_codes(ev_qc);
      const PackedCodes dbc = load_codes(ev_dbc);
      const Dataset ql = load_dataset(ev_ql);
      const Dataset dbl = load_dataset(ev_dbl);
      const EvalReport report = evaluate(qc, dbc, ql.labels(), dbl.labels(), parse_k_grid(ev_grid));
      const std::string text = format_report(report, "eval");
      out << text;
      if (!ev_report.empty()) write_text(ev_report, text);
      if (!ev_curve.empty()) write_curve_csv(ev_curve, report);
    } else if (run_cmd->parsed()) {
      const RunConfig rc = RunConfig::from(KeyValueConfig::load(run_config));
      const auto res = run_pipeline(rc, out);
      out << "DCDH MAP " << fmt4(res.dcdh.map.map) << "  LSH MAP " << fmt4(res.lsh.map.map) << '\n';
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  }
  return kOk;
}

}  // namespace dcdh::cli
