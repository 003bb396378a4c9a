// Command-line harness: synth, train, test, conformal and benchmark.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
// The output directory is --out, else $FAIRDUMMIES_OUT, else output_dir from the config.

#include "fairdummies/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace fairdummies;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> reps;
  std::optional<int> jobs;
  std::string checkpoint;
  std::vector<std::string> overrides;
};

// --set key=value; the value is read as JSON and falls back to a plain string
void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  config.set(key, value);
}

ExperimentConfig load_config(const Options& o, const ExperimentConfig* base = nullptr) {
  ExperimentConfig c = !o.config_path.empty() ? ExperimentConfig::read(o.config_path)
                       : base                 ? *base
                                              : ExperimentConfig{};
  for (const auto& s : o.overrides) apply_override(c, s);
  if (o.seed) c.set("seed", *o.seed);
  if (o.reps) c.set("benchmark.repetitions", *o.reps);
  if (o.jobs) c.set("jobs", *o.jobs);
  return c;
}

fs::path output_dir(const Options& o, const ExperimentConfig& c) {
  fs::path dir = c.output_dir();
  if (const char* env = std::getenv("FAIRDUMMIES_OUT"); env && *env) dir = env;
  if (!o.out.empty()) dir = o.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

fs::path checkpoint_path(const Options& o) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::read(o.config_path);
  return output_dir(o, c) / "checkpoint.txt";
}

// Splits the data with the checkpoint seed and reuses its feature scaling.
SplitData checkpoint_parts(const Checkpoint& ckpt, const ExperimentConfig& config) {
  const Dataset data = config.load_data();
  if (data.X.cols() != ckpt.standardizer.mean().size())
    throw DataError("data has " + std::to_string(data.X.cols()) + " features but the checkpoint expects " +
                    std::to_string(ckpt.standardizer.mean().size()));
  if (data.task != ckpt.model.task || data.num_classes != ckpt.model.num_classes)
    throw DataError("data task or class count differs from the checkpoint");
  SplitData parts = split(data, config.split_spec(ckpt.seed));
  for (Dataset* d : {&parts.train, &parts.holdout, &parts.test}) d->X = ckpt.standardizer.apply(d->X);
  return parts;
}

void write_error_columns(std::ostream& out, const ErrorSummary& e) {
  out << ',' << e.overall << ',' << e.group[0] << ',' << e.group[1];
}

int cmd_synth(const Options& o) {
  const ExperimentConfig config = load_config(o);
  const fs::path dir = output_dir(o, config);
  const Dataset data = config.load_data();
  write_schema(dir / "schema.json", write_csv(dir / "data.csv", data));
  std::cout << "wrote " << data.size() << " rows to " << (dir / "data.csv").string() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig config = load_config(o);
  const fs::path dir = output_dir(o, config);
  const Dataset data = config.load_data();
  const std::uint64_t seed = config.seed();
  const PreparedData prepared = prepare(data, config, seed);
  Checkpoint ckpt;
  try {
    ckpt = train_model(prepared, config, seed);
  } catch (const TrainingDiverged& e) {
    auto trace = open_output(dir / "trace.csv");
    write_trace_csv(trace, e.trace());
    throw;
  }
  ckpt.save(dir / "checkpoint.txt");
  auto trace = open_output(dir / "trace.csv");
  write_trace_csv(trace, ckpt.model.trace);

  const fs::path metrics = dir / "metrics.csv";
  const bool fresh = !fs::exists(metrics) || fs::file_size(metrics) == 0;
  auto out = open_output(metrics, std::ios::app);
  out.precision(10);
  const char* err = data.task == Task::Regression ? "rmse" : "misclassification";
  if (fresh)
    out << "seed,task,lambda,train_" << err << ",train_" << err << "_group0,train_" << err << "_group1,test_"
        << err << ",test_" << err << "_group0,test_" << err << "_group1\n";
  out << seed << ',' << to_string(data.task) << ',' << config.train_config(data.task, seed).lambda;
  write_error_columns(out, prediction_error(ckpt.model, prepared.parts.train));
  const ErrorSummary test_error = prediction_error(ckpt.model, prepared.parts.test);
  write_error_columns(out, test_error);
  out << '\n';
  std::cout << "trained " << to_string(data.task) << " model, test " << err << ' ' << test_error.overall
            << ", checkpoint " << (dir / "checkpoint.txt").string() << '\n';
  return 0;
}

int cmd_test(const Options& o) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint_path(o));
  const ExperimentConfig config = load_config(o, &ckpt.config);
  const fs::path dir = output_dir(o, config);
  const SplitData parts = checkpoint_parts(ckpt, config);
  TestConfig tc = config.test_config(o.seed ? *o.seed : ckpt.seed);
  tc.jobs = config.jobs();
  const TestReport report = run_test(test_data(ckpt.model, parts.holdout), test_data(ckpt.model, parts.test),
                                     posterior_of(ckpt.model.sampler), tc);
  open_output(dir / "test_report.json") << report.to_json() << '\n';
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "p-value " << report.p_value << '\n';
  return 0;
}

int cmd_conformal(const Options& o) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint_path(o));
  const ExperimentConfig config = load_config(o, &ckpt.config);
  if (ckpt.model.task != Task::Classification)
    throw ConfigError("conformal prediction sets need a classification checkpoint");
  const fs::path dir = output_dir(o, config);
  const SplitData parts = checkpoint_parts(ckpt, config);
  const auto cal = calibrate(ckpt.model.predict(parts.holdout.X), parts.holdout.A, parts.holdout.Y, config.alpha());
  const auto sets = predict_sets(cal, ckpt.model.predict(parts.test.X), parts.test.A);
  const auto summary = summarize_sets(sets, parts.test.A, parts.test.Y);
  auto out = open_output(dir / "sets.csv");
  write_sets_csv(out, sets, parts.test.A);
  open_output(dir / "conformal_summary.json") << summary_json(cal, summary) << '\n';
  for (const auto& g : summary)
    std::cout << "group " << g.group << ": coverage " << g.coverage << ", mean size " << g.mean_size << '\n';
  return 0;
}

int cmd_benchmark(const Options& o) {
  const ExperimentConfig config = load_config(o);
  const fs::path dir = output_dir(o, config);
  const Dataset data = config.load_data();
  const auto rows = run_benchmark(data, config, config.jobs());
  auto table = open_output(dir / "benchmark.csv");
  write_metrics_csv(table, rows);
  auto summary = open_output(dir / "benchmark_summary.csv");
  write_metrics_summary_csv(summary, rows);
  auto times = open_output(dir / "runtimes.csv");
  times << "repetition,train_seconds,test_seconds\n";
  for (const auto& r : rows) times << r.repetition << ',' << r.train_seconds << ',' << r.test_seconds << '\n';
  std::cout << rows.size() << " repetitions written to " << (dir / "benchmark.csv").string() << '\n';
  return 0;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON configuration file with flat keys")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "base seed (overrides the config)");
  cmd->add_option("--out", o.out, "output directory (overrides FAIRDUMMIES_OUT and the config)");
  cmd->add_option("--set", o.overrides, "override one configuration key, key=value");
}

}  // namespace

int main(int argc, char** argv) {
  keep_large_allocations();
  CLI::App app{"Equalized-odds training, testing and conformal sets with fair dummies"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every configuration key and exit");
  Options o;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset and its schema");
  auto* train = app.add_subcommand("train", "fit a model and write checkpoint, trace and metrics");
  auto* test = app.add_subcommand("test", "run the fair dummies test on a checkpoint");
  auto* conformal = app.add_subcommand("conformal", "group-conditional prediction sets from a checkpoint");
  auto* bench = app.add_subcommand("benchmark", "repeat split, train, test over derived seeds");
  for (auto* cmd : {synth, train, test, conformal, bench}) add_common(cmd, o);
  for (auto* cmd : {test, conformal})
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file (default <out>/checkpoint.txt)");
  for (auto* cmd : {test, bench}) cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  bench->add_option("--reps", o.reps, "number of repetitions")->check(CLI::PositiveNumber);

  if (argc == 2 && std::string(argv[1]) == "--list-keys") {
    for (const auto& [k, help] : ExperimentConfig::keys()) std::cout << k << "\t" << help << '\n';
    return 0;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*test) return cmd_test(o);
    if (*conformal) return cmd_conformal(o);
    return cmd_benchmark(o);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
}
