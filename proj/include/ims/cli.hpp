#ifndef IMS_CLI_HPP
#define IMS_CLI_HPP

// Command-line surface: gen-data, audit-shift, partition, train, mi-profile.
//
// Every command reads an optional flat key=value config file (`#` starts a
// comment), overlays command-line flags, rejects unknown keys and writes the
// resolved configuration to <out>/config.resolved. Exit codes: 0 success,
// 2 usage or config error, 3 data error, 4 numerical failure.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ims/common.hpp"
#include "ims/dataset.hpp"
#include "ims/environments.hpp"
#include "ims/experiment.hpp"
#include "ims/infotheory.hpp"
#include "ims/objectives.hpp"

namespace ims::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

inline constexpr const char* kOutDirEnv = "IMS_OUT_DIR";

// ---------------------------------------------------------------------------
// key=value configuration

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline ConfigMap parse_config(std::istream& is, const std::string& name = "<config>") {
  ConfigMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = name + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw UsageError(where + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(where + ": empty key");
    if (!out.emplace(key, value).second) throw UsageError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

inline ConfigMap load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file '" + path + "'");
  return parse_config(is, path);
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

using FieldTable = std::vector<Field>;

namespace detail {

[[noreturn]] inline void bad_value(const std::string& key, const std::string& v, const char* what) {
  throw UsageError("config key '" + key + "': cannot parse '" + v + "' as " + what);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  bad_value(key, v, "a number");
}

inline std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    bad_value(key, v, "a non-negative integer");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    bad_value(key, v, "a non-negative integer");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean (true/false)");
}

}  // namespace detail

inline Field real_field(std::string key, double& ref) {
  return {key, [&ref, key](const std::string& v) { ref = detail::to_double(key, v); },
          [&ref] { return format_real(ref); }};
}

template <class T>
Field count_field(std::string key, T& ref) {
  return {key, [&ref, key](const std::string& v) { ref = static_cast<T>(detail::to_unsigned(key, v)); },
          [&ref] { return std::to_string(ref); }};
}

inline Field bool_field(std::string key, bool& ref) {
  return {key, [&ref, key](const std::string& v) { ref = detail::to_bool(key, v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

// "auto" clears the value.
inline Field optional_real_field(std::string key, std::optional<double>& ref) {
  return {key,
          [&ref, key](const std::string& v) {
            if (v == "auto") ref.reset();
            else ref = detail::to_double(key, v);
          },
          [&ref] { return ref ? format_real(*ref) : std::string("auto"); }};
}

inline FieldTable synth_fields(SynthConfig& c) {
  return {count_field("classes", c.classes),
          count_field("train_per_class", c.train_per_class),
          count_field("test_per_class", c.test_per_class),
          count_field("invariant_dims", c.invariant_dims),
          real_field("separation", c.separation),
          real_field("invariant_noise", c.invariant_noise),
          count_field("spurious_dims", c.spurious_dims),
          real_field("spurious_scale", c.spurious_scale),
          real_field("spurious_noise", c.spurious_noise),
          real_field("rho", c.rho),
          real_field("rho_test", c.rho_test),
          count_field("noise_dims", c.noise_dims),
          real_field("majority_fraction", c.majority_fraction),
          count_field("seed", c.seed)};
}

inline FieldTable train_fields(TrainConfig& c) {
  Field method{"method", [&c](const std::string& v) { c.method = parse_method(v); },
               [&c] { return std::string(method_name(c.method)); }};
  Field source{"partition_source",
               [&c](const std::string& v) {
                 if (v == "warmup") c.partition_source = PartitionSource::Warmup;
                 else if (v == "raw") c.partition_source = PartitionSource::Raw;
                 else throw UsageError("config key 'partition_source': expected warmup or raw, got '" + v + "'");
               },
               [&c] { return std::string(c.partition_source == PartitionSource::Raw ? "raw" : "warmup"); }};
  return {method,
          real_field("eta", c.eta),
          real_field("beta", c.beta),
          real_field("alpha", c.alpha),
          count_field("k", c.k),
          real_field("learning_rate", c.learning_rate),
          real_field("momentum", c.momentum),
          count_field("epochs", c.epochs),
          count_field("batch_size", c.batch_size),
          count_field("seed", c.seed),
          bool_field("hard_env", c.hard_env),
          bool_field("normalize_by_k", c.normalize_by_k),
          source,
          count_field("warmup_epochs", c.warmup_epochs)};
}

inline FieldTable partition_fields(PartitionConfig& c) {
  return {count_field("k", c.k), optional_real_field("stiffness", c.stiffness),
          count_field("max_iterations", c.max_iterations), real_field("tolerance", c.tolerance),
          count_field("seed", c.seed)};
}

struct AuditConfig {
  std::size_t perms = 100;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::optional<double> sigma;  // median heuristic when unset
};

inline FieldTable audit_fields(AuditConfig& c) {
  return {count_field("perms", c.perms), real_field("level", c.level), count_field("seed", c.seed),
          optional_real_field("sigma", c.sigma)};
}

struct ProfileConfig {
  double alpha = kDefaultAlpha;
  bool last_only = false;
};

inline FieldTable profile_fields(ProfileConfig& c) {
  return {real_field("alpha", c.alpha), bool_field("last_only", c.last_only)};
}

inline void apply_config(const FieldTable& table, const ConfigMap& values) {
  for (const auto& [key, value] : values) {
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw UsageError("unknown config key '" + key + "'");
    it->set(value);
  }
}

inline void write_resolved(std::ostream& os, const std::string& command, const FieldTable& table) {
  os << "# resolved configuration for " << command << '\n';
  for (const auto& f : table) os << f.key << '=' << f.get() << '\n';
}

// ---------------------------------------------------------------------------
// Output helpers

namespace fs = std::filesystem;

inline fs::path output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return ".";
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError("cannot create output directory '" + dir.string() + "'");
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  return os;
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

inline void write_resolved_file(const fs::path& dir, const std::string& command, const FieldTable& t) {
  std::ostringstream ss;
  write_resolved(ss, command, t);
  write_text(dir / "config.resolved", ss.str());
}

struct Series {
  std::string name;
  std::string color;
  std::vector<double> values;
};

// Minimal line chart: one polyline per series over x = 0..n-1.
inline void write_polyline_svg(std::ostream& os, const std::string& title,
                               const std::vector<Series>& series) {
  const double w = 480, h = 300, pad = 40;
  std::size_t n = 0;
  double lo = 0.0, hi = 0.0;
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi <= lo) hi = lo + 1.0;
  auto px = [&](std::size_t i) { return pad + (n > 1 ? (w - 2 * pad) * double(i) / double(n - 1) : 0.0); };
  auto py = [&](double v) { return h - pad - (h - 2 * pad) * (v - lo) / (hi - lo); };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<text x=\"" << pad << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    os << "<polyline fill=\"none\" stroke=\"" << series[s].color << "\" points=\"";
    for (std::size_t i = 0; i < series[s].values.size(); ++i)
      os << (i ? " " : "") << format_report(px(i)) << ',' << format_report(py(series[s].values[i]));
    os << "\"/>\n";
    os << "<text x=\"" << w - pad - 100 << "\" y=\"" << 20 + 14 * s << "\" font-size=\"12\" fill=\""
       << series[s].color << "\">" << series[s].name << "</text>\n";
  }
  os << "</svg>\n";
}

// Dataset CSV (…,label,tag) or a plain numeric CSV with a header row.
inline Matrix read_feature_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::string header;
  if (!std::getline(is, header)) throw DataError(path + ": empty file");
  header = ims::detail::strip_cr(header);
  const auto cols = ims::detail::split_csv_line(header);
  if (cols.size() >= 2 && cols[cols.size() - 2] == "label" && cols.back() == "tag") {
    is.clear();
    is.seekg(0);
    return read_dataset_csv(is, path).features;
  }
  std::vector<double> values;
  std::size_t rows = 0, lineno = 1;
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    line = ims::detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = ims::detail::split_csv_line(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != cols.size())
      throw DataError(where + ": expected " + std::to_string(cols.size()) + " fields, got " +
                      std::to_string(cells.size()));
    for (const auto& c : cells) values.push_back(ims::detail::parse_double(c, where));
    ++rows;
  }
  Matrix m(rows, cols.size(), std::move(values));
  if (!m.all_finite()) throw DataError(path + ": non-finite feature value");
  return m;
}

// ---------------------------------------------------------------------------
// Commands

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline void cmd_gen_data(const SynthConfig& cfg, const fs::path& dir, Streams io) {
  SynthConfig c = cfg;
  c.validate();
  ensure_dir(dir);
  const SplitData data = gen_spurious(c);
  save_dataset_csv((dir / "train.csv").string(), data.train);
  save_dataset_csv((dir / "test.csv").string(), data.test);
  nlohmann::json config;
  for (const auto& f : synth_fields(c)) config[f.key] = f.get();
  nlohmann::json manifest{{"schema", "ims.dataset_manifest/1"},
                          {"seed", c.seed},
                          {"rho", c.rho},
                          {"rho_test", c.rho_test},
                          {"dim", c.dim()},
                          {"train_rows", data.train.size()},
                          {"test_rows", data.test.size()},
                          {"files", {"train.csv", "test.csv"}},
                          {"config", config}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_resolved_file(dir, "gen-data", synth_fields(c));
  io.out << "wrote " << data.train.size() << " train and " << data.test.size() << " test rows to "
         << dir.string() << '\n';
}

inline ShiftReport cmd_audit_shift(const std::string& train_path, const std::string& test_path,
                                   const AuditConfig& cfg, const fs::path& dir, bool svg, Streams io) {
  AuditConfig c = cfg;
  if (c.perms == 0) throw UsageError("audit-shift: --perms must be at least 1");
  if (!(c.level > 0.0 && c.level < 1.0)) throw UsageError("audit-shift: --level must lie in (0, 1)");
  if (c.sigma && !(*c.sigma > 0.0)) throw UsageError("audit-shift: --sigma must be positive");
  const LabeledDataset train = load_dataset_csv(train_path);
  const LabeledDataset test = load_dataset_csv(test_path);
  if (train.dim() != test.dim())
    throw DataError("audit-shift: train has " + std::to_string(train.dim()) + " features, test has " +
                    std::to_string(test.dim()));
  ensure_dir(dir);
  const ShiftReport report = audit_per_class(train, test, KernelPolicy{c.sigma}, c.perms, c.level, c.seed);
  if (report.records.empty() && !report.warnings.empty() &&
      report.warnings.front().rfind("no shared classes", 0) == 0)
    throw DataError("audit-shift: no shared classes between '" + train_path + "' and '" + test_path + "'");
  {
    auto os = open_out(dir / "shift_report.csv");
    write_shift_csv(os, report);
  }
  write_text(dir / "summary.json", shift_summary_json(report).dump(2) + "\n");
  write_resolved_file(dir, "audit-shift", audit_fields(c));
  if (svg) {
    Series mmd{"MMD^2", "steelblue", {}}, bound{"bound", "firebrick", {}};
    for (const auto& r : report.records) {
      mmd.values.push_back(r.mmd);
      bound.values.push_back(r.bound95);
    }
    auto os = open_out(dir / "shift_curve.svg");
    write_polyline_svg(os, "per-class MMD^2 vs permutation bound", {mmd, bound});
  }
  for (const auto& w : report.warnings) io.err << "warning: " << w << '\n';
  io.out << report.significant_count() << " of " << report.records.size()
         << " classes significant (fraction " << format_report(report.significant_fraction()) << ")\n";
  return report;
}

inline EnvironmentAssignment cmd_partition(const std::string& features_path, const PartitionConfig& cfg,
                                           const fs::path& dir, Streams io) {
  PartitionConfig c = cfg;
  c.validate();
  const Matrix x = read_feature_csv(features_path);
  ensure_dir(dir);
  const EnvironmentAssignment a = soft_kmeans(x, c);
  {
    auto os = open_out(dir / "memberships.csv");
    write_assignment_csv(os, a);
  }
  write_resolved_file(dir, "partition", partition_fields(c));
  io.out << "objective " << format_report(a.objective) << " after " << a.iterations << " iterations\n";
  return a;
}

struct TrainOutcome {
  RunReport report;
  fs::path dir;
};

namespace detail {

inline TrainOutcome train_one(const LabeledDataset& train, const LabeledDataset* test,
                              const TrainConfig& cfg, const fs::path& dir) {
  ensure_dir(dir);
  TrainConfig c = cfg;
  write_resolved_file(dir, "train", train_fields(c));
  try {
    ExperimentResult res = run_experiment(train, test, cfg);
    save_model((dir / "model.bin").string(), res.model);
    {
      auto os = open_out(dir / "epochs.csv");
      write_epoch_csv(os, res.report);
    }
    {
      auto os = open_out(dir / "memberships.csv");
      write_assignment_csv(os, res.assignment);
    }
    nlohmann::json j = run_report_json(res.report);
    j["status"] = "ok";
    write_text(dir / "report.json", j.dump(2) + "\n");
    return {res.report, dir};
  } catch (const NumericalError& e) {
    nlohmann::json j{{"schema", "ims.run_report/1"},
                     {"method", std::string(method_name(cfg.method))},
                     {"seed", cfg.seed},
                     {"status", "numerical_failure"},
                     {"error", e.what()}};
    write_text(dir / "report.json", j.dump(2) + "\n");
    throw;
  }
}

}  // namespace detail

// Trains `replicates` runs with seeds seed, seed+1, …; with more than one
// replicate each lands in <out>/seed_<s>/ and the runs are spread over
// `jobs` threads. Results do not depend on `jobs`.
inline std::vector<TrainOutcome> cmd_train(const std::string& data_dir, const TrainConfig& cfg,
                                           const fs::path& dir, std::size_t replicates,
                                           std::size_t jobs, Streams io) {
  cfg.validate();
  if (replicates == 0) throw UsageError("train: --replicates must be at least 1");
  if (jobs == 0) throw UsageError("train: --jobs must be at least 1");
  const fs::path base(data_dir);
  const fs::path train_path = base / "train.csv", test_path = base / "test.csv";
  if (!fs::exists(train_path)) throw DataError("train: missing '" + train_path.string() + "'");
  const LabeledDataset train = load_dataset_csv(train_path.string());
  std::optional<LabeledDataset> test;
  if (fs::exists(test_path)) {
    test = load_dataset_csv(test_path.string());
    if (test->dim() != train.dim()) throw DataError("train: train and test feature counts differ");
  }
  ensure_dir(dir);

  std::vector<std::optional<TrainOutcome>> results(replicates);
  std::vector<std::exception_ptr> errors(replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < replicates; r = next++) {
      TrainConfig c = cfg;
      c.seed = cfg.seed + r;
      const fs::path sub = replicates == 1 ? dir : dir / ("seed_" + std::to_string(c.seed));
      try {
        results[r] = detail::train_one(train, test ? &*test : nullptr, c, sub);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(jobs, replicates);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<TrainOutcome> out;
  nlohmann::json sweep = nlohmann::json::array();
  for (auto& r : results) {
    const RunReport& rep = r->report;
    io.out << rep.method << " seed " << rep.seed << ": train accuracy "
           << format_report(rep.final_train_accuracy);
    if (rep.test_accuracy >= 0.0) io.out << ", test accuracy " << format_report(rep.test_accuracy);
    io.out << '\n';
    sweep.push_back({{"seed", rep.seed},
                     {"final_train_accuracy", rep.final_train_accuracy},
                     {"test_accuracy", rep.test_accuracy < 0.0 ? nlohmann::json(nullptr)
                                                               : nlohmann::json(rep.test_accuracy)}});
    out.push_back(std::move(*r));
  }
  if (replicates > 1) {
    TrainConfig c = cfg;
    write_resolved_file(dir, "train", train_fields(c));
    write_text(dir / "sweep.json",
               nlohmann::json{{"schema", "ims.sweep/1"}, {"runs", sweep}}.dump(2) + "\n");
  }
  return out;
}

inline std::vector<LayerMi> cmd_mi_profile(const std::string& model_path, const std::string& data_path,
                                           const ProfileConfig& cfg, const fs::path& dir, Streams io) {
  ProfileConfig c = cfg;
  if (!(c.alpha > 0.0) || c.alpha == 1.0) throw UsageError("mi-profile: alpha must be positive and differ from 1");
  const MlpModel model = load_model(model_path);
  const LabeledDataset data = load_dataset_csv(data_path);
  if (data.dim() != model.input_dim())
    throw DataError("mi-profile: model expects " + std::to_string(model.input_dim()) + " features, '" +
                    data_path + "' has " + std::to_string(data.dim()));
  if (data.size() < kMinProfileRows)
    throw DataError("mi-profile: '" + data_path + "' has fewer than " + std::to_string(kMinProfileRows) +
                    " rows");
  ensure_dir(dir);
  const auto rows = mi_profile(model, data, c.alpha, c.last_only);
  {
    auto os = open_out(dir / "mi_profile.csv");
    write_mi_profile_csv(os, rows);
  }
  write_resolved_file(dir, "mi-profile", profile_fields(c));
  for (const auto& r : rows) {
    if (r.warning) io.err << "warning: layer " << r.layer << " had a negative MI estimate clipped to 0\n";
    io.out << "layer " << r.layer << ": I(x;phi) " << format_report(r.i_x_phi) << " bits, I(y;phi) "
           << format_report(r.i_y_phi) << " bits\n";
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch

namespace detail {

// Adds one string-valued flag per config key (`--train-per-class` for
// `train_per_class`) and collects the ones given on the command line.
class FlagOverlay {
 public:
  void add(CLI::App* app, const FieldTable& table, const std::vector<std::string>& skip = {}) {
    for (const auto& f : table) {
      if (std::find(skip.begin(), skip.end(), f.key) != skip.end()) continue;
      std::string flag = f.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      storage_.emplace_back();
      bindings_.push_back({app->add_option("--" + flag, storage_.back(), "config key " + f.key), f.key,
                           &storage_.back()});
    }
  }

  void overlay(ConfigMap& values) const {
    for (const auto& b : bindings_)
      if (b.option->count() > 0) values[b.key] = *b.value;
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::string* value;
  };
  std::deque<std::string> storage_;
  std::vector<Binding> bindings_;
};

inline ConfigMap resolve(const std::string& config_path, const FlagOverlay& flags) {
  ConfigMap values = config_path.empty() ? ConfigMap{} : load_config(config_path);
  flags.overlay(values);
  return values;
}

}  // namespace detail

// Parses `args` (without the program name), runs the selected command and
// returns its exit code. Diagnostics go to `err`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Invariant and minimum-sufficient representation learning toolkit", "ims"};
  app.require_subcommand(1);
  Streams io{out, err};

  std::string config_path, out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--out", out_dir, std::string("output directory (default $") + kOutDirEnv + " or .)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic spurious-shift benchmark");
  add_common(gen);
  detail::FlagOverlay gen_flags;
  SynthConfig synth_probe;
  gen_flags.add(gen, synth_fields(synth_probe));

  auto* audit = app.add_subcommand("audit-shift", "per-class MMD permutation audit of train/test shift");
  add_common(audit);
  std::string train_path, test_path;
  bool svg = false;
  audit->add_option("--train", train_path, "training CSV")->required();
  audit->add_option("--test", test_path, "test CSV")->required();
  audit->add_flag("--svg", svg, "also write shift_curve.svg");
  detail::FlagOverlay audit_flags;
  AuditConfig audit_probe;
  audit_flags.add(audit, audit_fields(audit_probe));

  auto* part = app.add_subcommand("partition", "soft k-means environment partition");
  add_common(part);
  std::string features_path;
  part->add_option("--features", features_path, "feature or dataset CSV")->required();
  detail::FlagOverlay part_flags;
  PartitionConfig part_probe;
  part_flags.add(part, partition_fields(part_probe));

  auto* tr = app.add_subcommand("train", "train with ERM, IRM, IB, IMS or IB-IRM(var)");
  add_common(tr);
  std::string data_dir;
  std::size_t replicates = 1, jobs = 1;
  tr->add_option("--data-dir", data_dir, "directory holding train.csv and optionally test.csv")->required();
  tr->add_option("--replicates", replicates, "number of seeds (seed, seed+1, ...)");
  tr->add_option("--jobs", jobs, "parallel replicate workers");
  detail::FlagOverlay train_flags;
  TrainConfig train_probe;
  train_flags.add(tr, train_fields(train_probe));

  auto* prof = app.add_subcommand("mi-profile", "I(x;phi) and I(y;phi) per hidden layer");
  add_common(prof);
  std::string model_path, data_path;
  prof->add_option("--model", model_path, "model file written by train")->required();
  prof->add_option("--data", data_path, "dataset CSV")->required();
  detail::FlagOverlay prof_flags;
  ProfileConfig prof_probe;
  prof_flags.add(prof, profile_fields(prof_probe));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const fs::path dir = output_dir(out_dir);
    if (gen->parsed()) {
      SynthConfig c;
      apply_config(synth_fields(c), detail::resolve(config_path, gen_flags));
      cmd_gen_data(c, dir, io);
    } else if (audit->parsed()) {
      AuditConfig c;
      apply_config(audit_fields(c), detail::resolve(config_path, audit_flags));
      cmd_audit_shift(train_path, test_path, c, dir, svg, io);
    } else if (part->parsed()) {
      PartitionConfig c;
      apply_config(partition_fields(c), detail::resolve(config_path, part_flags));
      cmd_partition(features_path, c, dir, io);
    } else if (tr->parsed()) {
      TrainConfig c;
      apply_config(train_fields(c), detail::resolve(config_path, train_flags));
      cmd_train(data_dir, c, dir, replicates, jobs, io);
    } else if (prof->parsed()) {
      ProfileConfig c;
      apply_config(profile_fields(c), detail::resolve(config_path, prof_flags));
      cmd_mi_profile(model_path, data_path, c, dir, io);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}

}  // namespace ims::cli

#endif  // IMS_CLI_HPP
