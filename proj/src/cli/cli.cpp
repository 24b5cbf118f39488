#include "can/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "can/data/dataset.hpp"
#include "can/data/split.hpp"
#include "can/data/synthetic.hpp"
#include "can/error.hpp"
#include "can/eval/eval.hpp"
#include "can/kernel/kernel.hpp"
#include "can/model/gradcheck.hpp"
#include "can/model/model.hpp"

namespace can::cli {

namespace {

namespace fs = std::filesystem;

// Raised when a command ran but its check did not pass.
class CheckFailed : public Error {
 public:
  using Error::Error;
};

struct KeyDefault {
  const char* key;
  const char* value;
};

// Command keys and their defaults. Model keys have no entry: unset model keys
// leave the command's base model config untouched.
constexpr KeyDefault kCommandKeys[] = {
    {"out_dir", "out"},
    {"n_users", "2000"},
    {"n_items", "1000"},
    {"buckets", "8"},
    {"beta", "3"},
    {"n_train", "50000"},
    {"n_test", "10000"},
    {"seq_len", "10"},
    {"data_seed", "1"},
    {"schema_file", ""},
    {"train_file", ""},
    {"test_file", ""},
    {"checkpoint", ""},
    {"epochs", "6"},
    {"batch_size", "128"},
    {"lr", "0.001"},
    {"adam_beta1", "0.9"},
    {"adam_beta2", "0.999"},
    {"adam_epsilon", "1e-8"},
    {"seed", "1"},
    {"experiment", "false"},
    {"variants", "unary,can,cartesian"},
    {"seeds", "1,2,3,4,5"},
    {"bench_shapes", "128,48,50,4,4;128,48,10,4,4;32,8,50,4,4;8,4,50,4,4"},
    {"bench_modes", "fp64,fp32"},
    {"bench_repetitions", "5"},
    {"gradcheck_trials", "20"},
    {"gradcheck_seed", "1"},
    {"gradcheck_tolerance", "1e-4"},
    {"split_user_field", "user"},
    {"split_item_field", "item"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(sep, start), s.size());
    const std::string part = trim(s.substr(start, end - start));
    if (!part.empty()) out.push_back(part);
    start = end + 1;
  }
  return out;
}

template <class T>
T parse_as(std::string_view key, const std::string& text) {
  T out{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("key '" + std::string(key) + "': '" + text + "' is not a valid number");
  }
  return out;
}

template <class T>
T number(const RunConfig& cfg, std::string_view key) {
  return parse_as<T>(key, cfg.get(key));
}

bool flag(const RunConfig& cfg, std::string_view key) {
  const std::string v = cfg.get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + std::string(key) + "': expected true or false, got '" + v + "'");
}

std::string fixed6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

std::string full(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

fs::path out_dir(const RunConfig& cfg) { return fs::path(cfg.get("out_dir")); }

fs::path path_or(const RunConfig& cfg, std::string_view key, const char* fallback) {
  const std::string v = cfg.get(key);
  return v.empty() ? out_dir(cfg) / fallback : fs::path(v);
}

void make_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(out_dir(cfg), ec);
  if (ec || !fs::is_directory(out_dir(cfg))) {
    throw IoError("cannot create output directory '" + out_dir(cfg).string() + "'");
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

data::SyntheticSpec synthetic_spec(const RunConfig& cfg) {
  data::SyntheticSpec s;
  s.n_users = number<std::int64_t>(cfg, "n_users");
  s.n_items = number<std::int64_t>(cfg, "n_items");
  s.buckets = number<std::int64_t>(cfg, "buckets");
  s.beta = number<double>(cfg, "beta");
  s.n_train = number<std::int64_t>(cfg, "n_train");
  s.n_test = number<std::int64_t>(cfg, "n_test");
  s.seq_len = number<std::int64_t>(cfg, "seq_len");
  s.seed = number<std::uint64_t>(cfg, "data_seed");
  s.validate();
  return s;
}

model::TrainConfig train_config(const RunConfig& cfg) {
  model::TrainConfig tc;
  tc.epochs = number<std::size_t>(cfg, "epochs");
  tc.batch_size = number<std::size_t>(cfg, "batch_size");
  tc.adam.lr = number<double>(cfg, "lr");
  tc.adam.beta1 = number<double>(cfg, "adam_beta1");
  tc.adam.beta2 = number<double>(cfg, "adam_beta2");
  tc.adam.epsilon = number<double>(cfg, "adam_epsilon");
  tc.seed = number<std::uint64_t>(cfg, "seed");
  return tc;
}

void apply_model_keys(const RunConfig& cfg, model::ModelConfig& mc) {
  for (const auto& [k, v] : cfg.explicit_values()) model::apply_model_key(mc, k, v);
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const data::SyntheticSpec spec = synthetic_spec(cfg);
  make_out_dir(cfg);
  const data::SyntheticData d = data::generate_synthetic(spec);
  data::save_schema((out_dir(cfg) / "schema.txt").string(), d.train.schema);
  data::save_dataset((out_dir(cfg) / "train.txt").string(), d.train);
  data::save_dataset((out_dir(cfg) / "test.txt").string(), d.test);
  std::size_t clicks = 0;
  for (const auto& ex : d.train.examples) clicks += ex.label;
  std::ostringstream s;
  s << "bayes_auc " << fixed6(d.oracle.bayes_auc()) << '\n'
    << "global_click_rate " << fixed6(d.oracle.global_mean()) << '\n'
    << "train_click_rate " << fixed6(static_cast<double>(clicks) / static_cast<double>(d.train.size())) << '\n'
    << "n_train " << d.train.size() << '\n'
    << "n_test " << d.test.size() << '\n';
  write_file(out_dir(cfg) / "summary.txt", s.str());
  out << s.str();
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const data::Schema schema = data::load_schema(path_or(cfg, "schema_file", "schema.txt").string());
  model::ModelConfig mc = eval::default_experiment().model;
  mc.schema = schema;
  apply_model_keys(cfg, mc);
  mc.validate();
  const model::TrainConfig tc = train_config(cfg);
  const data::Dataset ds = data::load_dataset(path_or(cfg, "train_file", "train.txt").string(), schema);
  make_out_dir(cfg);
  model::CanModel m(mc, tc.seed);
  std::ostringstream loss_log;
  const model::TrainLog log = model::train(m, ds, tc, [&](std::size_t epoch, double loss) {
    loss_log << epoch << ' ' << full(loss) << '\n';
    out << "epoch " << epoch << " loss " << fixed6(loss) << '\n' << std::flush;
  });
  model::save_model(path_or(cfg, "checkpoint", "checkpoint").string(), m);
  write_file(out_dir(cfg) / "loss.txt", loss_log.str());
  out << "initial loss " << fixed6(log.initial_loss) << ", " << log.steps << " steps\n";
  return kOk;
}

int cmd_eval_checkpoint(const RunConfig& cfg, std::ostream& out) {
  const auto m = model::load_model(path_or(cfg, "checkpoint", "checkpoint").string());
  const data::Dataset ds = data::load_dataset(path_or(cfg, "test_file", "test.txt").string(), m->config().schema);
  const double a = eval::auc(m->predict(ds), eval::labels_of(ds));
  make_out_dir(cfg);
  std::ostringstream s;
  s << "auc " << fixed6(a) << '\n' << "examples " << ds.size() << '\n';
  write_file(out_dir(cfg) / "eval.txt", s.str());
  out << s.str();
  return kOk;
}

int cmd_eval_experiment(const RunConfig& cfg, std::ostream& out) {
  eval::ExperimentConfig ec = eval::default_experiment();
  ec.data = synthetic_spec(cfg);
  apply_model_keys(cfg, ec.model);
  ec.train = train_config(cfg);
  ec.variants = split_list(cfg.get("variants"), ',');
  ec.seeds.clear();
  for (const std::string& s : split_list(cfg.get("seeds"), ',')) ec.seeds.push_back(parse_as<std::uint64_t>("seeds", s));
  make_out_dir(cfg);
  const eval::ExperimentResult r = eval::run_experiment(ec, [&](const eval::CellResult& c) {
    out << c.variant << " seed " << c.seed << ' ' << c.split << ' '
        << (c.failed ? "failed: " + c.error : fixed6(c.auc)) << '\n' << std::flush;
  });
  std::ostringstream csv, table;
  eval::write_report_csv(csv, r);
  eval::write_report_table(table, r);
  write_file(out_dir(cfg) / "report.csv", csv.str());
  write_file(out_dir(cfg) / "report.txt", table.str());
  out << '\n' << table.str();
  return kOk;
}

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  std::vector<kernel::BatchShapes> grid;
  for (const std::string& s : split_list(cfg.get("bench_shapes"), ';')) grid.push_back(kernel::parse_shapes(s));
  if (grid.empty()) throw ConfigError("key 'bench_shapes': no shapes listed");
  const int reps = number<int>(cfg, "bench_repetitions");
  std::vector<kernel::BenchReport> all;
  for (const std::string& m : split_list(cfg.get("bench_modes"), ',')) {
    kernel::BenchOptions opts;
    opts.repetitions = reps;
    opts.mode = kernel::parse_precision(m);
    for (const kernel::BenchReport& r : kernel::run_bench(grid, opts)) {
      std::ostringstream line;
      line << r.shapes.str() << ' ' << kernel::precision_name(r.mode) << " ref " << fixed6(r.ref_ms) << " ms fused "
           << fixed6(r.fused_ms) << " ms speedup " << std::setprecision(3) << r.speedup() << " max_abs_diff "
           << std::scientific << r.max_abs_diff << '\n';
      out << line.str() << std::flush;
      all.push_back(r);
    }
  }
  make_out_dir(cfg);
  std::ostringstream csv;
  kernel::write_bench_csv(csv, all);
  write_file(out_dir(cfg) / "bench.csv", csv.str());
  for (const kernel::BenchReport& r : all) {
    if (!(r.max_abs_diff <= kernel::tolerance(r.mode))) throw CheckFailed("bench: " + r.shapes.str() + " out of tolerance");
  }
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  model::ModelConfig mc = model::gradcheck_config();
  apply_model_keys(cfg, mc);
  mc.validate();
  const double tol = number<double>(cfg, "gradcheck_tolerance");
  const model::GradCheckReport r = model::gradient_check(mc, number<std::size_t>(cfg, "gradcheck_trials"),
                                                         number<std::uint64_t>(cfg, "gradcheck_seed"));
  const bool pass = r.max_relative_error <= tol;
  std::ostringstream s;
  s << "max_relative_error " << std::scientific << std::setprecision(3) << r.max_relative_error << '\n'
    << "tolerance " << tol << std::defaultfloat << '\n'
    << "worst_parameter " << r.worst_parameter << " (trial " << r.worst_trial << ")\n"
    << "trials " << r.trials << '\n'
    << "status " << (pass ? "pass" : "fail") << '\n';
  make_out_dir(cfg);
  write_file(out_dir(cfg) / "gradcheck.txt", s.str());
  out << s.str();
  if (!pass) throw CheckFailed("gradcheck: max relative error above tolerance");
  return kOk;
}

int cmd_split(const RunConfig& cfg, std::ostream& out) {
  const data::Schema schema = data::load_schema(path_or(cfg, "schema_file", "schema.txt").string());
  const data::Dataset train = data::load_dataset(path_or(cfg, "train_file", "train.txt").string(), schema);
  const data::Dataset test = data::load_dataset(path_or(cfg, "test_file", "test.txt").string(), schema);
  const auto parts =
      data::split_generalization(train, test, cfg.get("split_user_field"), cfg.get("split_item_field"));
  make_out_dir(cfg);
  data::save_dataset((out_dir(cfg) / "seen.txt").string(), parts.seen);
  data::save_dataset((out_dir(cfg) / "unseen.txt").string(), parts.unseen);
  out << "seen " << parts.seen.size() << "\nunseen " << parts.unseen.size() << '\n';
  return kOk;
}

}  // namespace

std::vector<std::string> published_keys() {
  std::vector<std::string> keys;
  for (const KeyDefault& k : kCommandKeys) keys.emplace_back(k.key);
  for (const std::string& k : model::model_config_keys()) keys.push_back(k);
  return keys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string k = trim(key);
  const auto keys = published_keys();
  if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown config key '" + k + "'");
  values_[k] = trim(value);
}

void RunConfig::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::parse(std::istream& in, const std::string& source) {
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected key = value");
    try {
      set(t.substr(0, eq), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file '" + path + "'");
  parse(f, path);
}

bool RunConfig::has(std::string_view key) const { return values_.find(key) != values_.end(); }

std::string RunConfig::get(std::string_view key) const {
  if (const auto it = values_.find(key); it != values_.end()) return it->second;
  for (const KeyDefault& k : kCommandKeys)
    if (key == k.key) return k.value;
  return {};
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Co-action network training and evaluation"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  std::vector<std::string> config_files, assignments;
  bool list_keys = false;
  app.add_option("--config", config_files, "key = value config file (repeatable, later files win)");
  app.add_option("--set", assignments, "override as key=value (repeatable, applied after config files)");
  app.add_flag("--keys", list_keys, "print every config key with its default");

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const RunConfig&, std::ostream&);
  };
  const Command commands[] = {
      {"synth", "generate planted-interaction train/test files and an oracle summary", cmd_synth},
      {"train", "train a model and write a checkpoint and loss log", cmd_train},
      {"eval", "score a checkpoint on a test file, or run the multi-seed experiment with experiment=true",
       nullptr},
      {"bench", "time the fused kernel against reference-then-pool", cmd_bench},
      {"gradcheck", "finite-difference check of the end-to-end gradient", cmd_gradcheck},
      {"split", "split a test file by whether its user/item pair occurs in train", cmd_split},
  };
  for (const Command& c : commands) app.add_subcommand(c.name, c.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    RunConfig cfg;
    for (const std::string& f : config_files) cfg.load_file(f);
    for (const std::string& a : assignments) cfg.set_assignment(a);
    if (list_keys) {
      // Model keys show the base config of train and eval.
      RunConfig model_defaults;
      std::istringstream text(model::format_model_config(eval::default_experiment().model));
      model_defaults.parse(text, "model defaults");
      for (const std::string& k : published_keys())
        out << k << " = " << (cfg.has(k) || !model_defaults.has(k) ? cfg.get(k) : model_defaults.get(k)) << '\n';
      return kOk;
    }
    const auto chosen = app.get_subcommands();
    if (chosen.empty()) {
      err << app.help();
      return kConfigFailure;
    }
    const std::string name = chosen.front()->get_name();
    if (name == "eval") return flag(cfg, "experiment") ? cmd_eval_experiment(cfg, out) : cmd_eval_checkpoint(cfg, out);
    for (const Command& c : commands)
      if (name == c.name) return c.fn(cfg, out);
    return kConfigFailure;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const CheckFailed& e) {
    err << "check failed: " << e.what() << '\n';
    return kCheckFailure;
  } catch (const NumericError& e) {
    err << "check failed: " << e.what() << '\n';
    return kCheckFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kConfigFailure;
  }
}

}  // namespace can::cli
