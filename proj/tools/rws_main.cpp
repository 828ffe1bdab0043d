// Command-line surface for the renewable estimation library: synthetic
// stream simulation, streaming fits with resumable state, the experiment
// runner, convergence-rate checks and snapshot inspection.
//
// Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "rws/rws.hpp"

namespace {

namespace fs = std::filesystem;

int resolve_threads(int flag_value, int config_value = 0) {
  if (flag_value > 0) return flag_value;
  if (config_value > 0) return config_value;
  if (const char* env = std::getenv("RWS_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

std::string format17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string model;
  std::int64_t n = 0;
  std::int64_t batch_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t replication = 0;
  std::string out_dir;
};

int cmd_simulate(const SimulateArgs& args) {
  const rws::ModelSpec model = rws::model_from_name(args.model);
  const auto stream = rws::generate_stream(model, {args.n, args.batch_size, args.seed,
                                                   args.replication});
  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  const int width = std::max<int>(4, static_cast<int>(std::to_string(stream.size()).size()));
  for (const rws::Batch& b : stream) {
    char name[64];
    std::snprintf(name, sizeof name, "batch_%0*d.csv", width, b.index);
    const std::string path = (fs::path(args.out_dir) / name).string();
    rws::write_batch_csv(b, path);
    std::cout << path << " rows=" << b.size() << "\n";
  }
  return 0;
}

// --------------------------------------------------------------- fit-stream

struct FitArgs {
  std::string estfun;
  double bandwidth = 0.0;
  double bandwidth_constant = 0.0;
  std::vector<std::string> batch_files;
  std::string batch_dir;
  int grid_points = 401;
  bool grid_points_set = false;
  double support_lo = 0.0, support_hi = 0.0;
  bool support_set = false;
  double trim = 0.05;
  bool trim_set = false;
  std::string kernel = "gaussian";
  double tol = 1e-8;
  int max_iter = 50;
  std::string state_in, state_out;
  std::string eval_points;
  std::string out = "-";
};

std::vector<std::string> collect_batch_files(const FitArgs& args) {
  std::vector<std::string> files = args.batch_files;
  if (!args.batch_dir.empty()) {
    if (!fs::is_directory(args.batch_dir))
      throw rws::DataError("fit-stream: '" + args.batch_dir + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(args.batch_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".csv")
        files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw rws::ConfigError("fit-stream: no batch files given");
  return files;
}

void write_estimates(std::ostream& out, int dim, const std::vector<double>& xs,
                     const std::vector<std::optional<std::vector<double>>>& values) {
  out << "x,estimate";
  if (dim > 1) out << ",estimate2";
  out << "\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out << format17(xs[i]);
    for (int c = 0; c < dim; ++c)
      out << ',' << (values[i] ? format17((*values[i])[c]) : "nan");
    out << "\n";
  }
}

int cmd_fit_stream(const FitArgs& args) {
  if ((args.bandwidth > 0.0) == (args.bandwidth_constant > 0.0) && args.state_in.empty())
    throw rws::ConfigError(
        "fit-stream: exactly one of --bandwidth and --bandwidth-constant is required");
  if (args.support_set && !(args.support_lo < args.support_hi))
    throw rws::ConfigError("fit-stream: --support-lo must be below --support-hi");

  const auto files = collect_batch_files(args);
  std::vector<rws::Batch> batches;
  for (const auto& f : files) batches.push_back(rws::read_batch_csv(f));
  for (std::size_t j = 0; j < batches.size(); ++j) batches[j].index = static_cast<int>(j) + 1;

  rws::SnapshotMeta meta;
  std::optional<rws::RenewableState> state;
  if (!args.state_in.empty()) {
    auto [loaded, loaded_meta] = rws::load_state(args.state_in);
    state = std::move(loaded);
    meta = loaded_meta;
    if (!args.estfun.empty() && args.estfun != meta.estfun)
      throw rws::ConfigError("fit-stream: --estfun conflicts with snapshot (" + meta.estfun +
                             ")");
    if (args.bandwidth > 0.0 && args.bandwidth != meta.fixed_bandwidth)
      throw rws::ConfigError("fit-stream: --bandwidth conflicts with snapshot");
    if (args.bandwidth_constant > 0.0 && args.bandwidth_constant != meta.schedule_constant)
      throw rws::ConfigError("fit-stream: --bandwidth-constant conflicts with snapshot");
    if (args.kernel != meta.kernel)
      throw rws::ConfigError("fit-stream: --kernel conflicts with snapshot (" + meta.kernel +
                             ")");
    const rws::EvaluationGrid& g = state->grid();
    if (args.grid_points_set && args.grid_points != static_cast<int>(g.size()))
      throw rws::ConfigError("fit-stream: --grid-points conflicts with snapshot");
    if (args.support_set && (args.support_lo != g.lo() || args.support_hi != g.hi()))
      throw rws::ConfigError("fit-stream: --support-lo/--support-hi conflict with snapshot");
    if (args.trim_set && args.trim != g.trim())
      throw rws::ConfigError("fit-stream: --trim conflicts with snapshot");
  } else {
    if (args.estfun.empty())
      throw rws::ConfigError("fit-stream: --estfun is required when starting a new stream");
    meta.estfun = args.estfun;
    meta.kernel = args.kernel;
    meta.fixed_bandwidth = args.bandwidth;
    meta.schedule_constant = args.bandwidth_constant;
    meta.estimator = args.estfun == "mean" ? "closed-form" : "newton";

    double lo = args.support_lo, hi = args.support_hi;
    if (!args.support_set) {
      lo = *std::min_element(batches.front().xs.begin(), batches.front().xs.end());
      hi = *std::max_element(batches.front().xs.begin(), batches.front().xs.end());
      if (!(lo < hi)) throw rws::DataError("fit-stream: degenerate covariate range");
    }
    const rws::EstimatingFunction f = rws::estimating_function_from_name(meta.estfun);
    state.emplace(rws::EvaluationGrid::uniform(lo, hi, args.grid_points, args.trim), f.dim);
  }

  const rws::KernelSpec kernel = rws::kernel_from_name(meta.kernel);
  const rws::EstimatingFunction f = rws::estimating_function_from_name(meta.estfun);
  const bool closed = meta.estimator == "closed-form";

  for (const rws::Batch& b : batches) {
    const std::int64_t cumulative = state->cumulative_n() + static_cast<std::int64_t>(b.size());
    const double h = meta.fixed_bandwidth > 0.0
                         ? meta.fixed_bandwidth
                         : rws::schedule_bandwidth(
                               rws::BandwidthSchedule(meta.schedule_constant), cumulative);
    *state = closed ? update_closed_form(*state, b, h, kernel)
                    : update_newton(*state, b, h, kernel, f, args.tol, args.max_iter);
  }
  if (state->newton_failures() > 0)
    std::cerr << "warning: " << state->newton_failures()
              << " grid points failed to converge and are undefined\n";

  std::vector<double> xs;
  if (!args.eval_points.empty()) {
    std::ifstream in(args.eval_points);
    if (!in) throw rws::DataError("fit-stream: cannot open '" + args.eval_points + "'");
    double x;
    while (in >> x) xs.push_back(x);
    if (!in.eof())
      throw rws::DataError("fit-stream: malformed value in '" + args.eval_points + "'");
    if (xs.empty())
      throw rws::DataError("fit-stream: no evaluation points in '" + args.eval_points + "'");
  } else {
    xs = state->grid().points();
  }
  std::vector<std::optional<std::vector<double>>> values;
  values.reserve(xs.size());
  for (double x : xs) values.push_back(state->evaluate(x));

  if (args.out == "-") {
    write_estimates(std::cout, state->dim(), xs, values);
  } else {
    std::ofstream out(args.out, std::ios::trunc);
    if (!out) throw rws::DataError("fit-stream: cannot open '" + args.out + "' for writing");
    write_estimates(out, state->dim(), xs, values);
  }
  if (!args.state_out.empty()) rws::save_state(*state, meta, args.state_out);
  return 0;
}

// ----------------------------------------------------------- run-experiment

struct RunArgs {
  std::string config;
  std::string out;
  int threads = 0;
  int replications = 0;
  std::int64_t seed = -1;
};

int cmd_run_experiment(const RunArgs& args) {
  std::ifstream in(args.config);
  if (!in) throw rws::DataError("run-experiment: cannot open '" + args.config + "'");
  rws::ExperimentConfig cfg = rws::parse_experiment_config(in);
  if (args.replications > 0) cfg.replications = args.replications;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  cfg.validate();

  const int threads = resolve_threads(args.threads, cfg.threads);
  const auto t0 = std::chrono::steady_clock::now();
  const rws::MiseReport report = rws::run_experiment(cfg, threads);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::cout << "model=" << cfg.model.name() << " design=" << design_name(cfg.design)
            << " replications=" << cfg.replications << " seed=" << cfg.seed
            << " threads=" << threads << "\n";
  for (const auto& r : report.rows) {
    std::cout << "  n=" << r.n << " batch=" << r.batch_size << " estimator=" << r.estimator
              << " component=" << r.component << " mise=" << format17(r.mise)
              << " coverage=" << format17(r.coverage) << "\n";
  }
  std::cout << "wall " << format17(secs) << " s\n";

  const std::string out_path = !args.out.empty() ? args.out : cfg.out;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw rws::DataError("run-experiment: cannot open '" + out_path + "'");
    rws::write_results_csv(report, out);
    std::cout << "results written to " << out_path << "\n";
  }
  return 0;
}

// --------------------------------------------------------------- rate-check

int cmd_rate_check(const std::string& results, const std::string& estimator, int component) {
  std::ifstream in(results);
  if (!in) throw rws::DataError("rate-check: cannot open '" + results + "'");
  const rws::MiseReport report = rws::read_results_csv(in);
  std::size_t points = 0;
  for (const auto& r : report.rows)
    points += (r.estimator == estimator && r.component == component);
  double slope;
  try {
    slope = rws::rate_check(report, estimator, component);
  } catch (const std::invalid_argument& e) {
    throw rws::DataError(std::string("rate-check: ") + e.what());
  }
  std::cout << "rate-check estimator=" << estimator << " component=" << component
            << " points=" << points << " slope=" << format17(slope) << "\n";
  return 0;
}

// ------------------------------------------------------------ inspect-state

int cmd_inspect_state(const std::string& path) {
  const auto [state, meta] = rws::load_state(path);
  std::size_t defined = 0;
  for (std::size_t g = 0; g < state.grid().size(); ++g) defined += state.defined(g);
  std::cout << "snapshot: " << path << "\n"
            << "estimator: " << meta.estimator << " (" << meta.estfun << ")\n"
            << "kernel: " << meta.kernel << "\n";
  if (meta.fixed_bandwidth > 0.0)
    std::cout << "bandwidth: fixed " << format17(meta.fixed_bandwidth) << "\n";
  else if (meta.schedule_constant > 0.0)
    std::cout << "bandwidth: schedule c=" << format17(meta.schedule_constant)
              << " (h = c*N^-1/5)\n";
  std::cout << "grid: " << state.grid().size() << " points over ["
            << format17(state.grid().lo()) << ", " << format17(state.grid().hi())
            << "], trim " << format17(state.grid().trim()) << "\n"
            << "batches: " << state.batch_count()
            << ", observations: " << state.cumulative_n() << "\n"
            << "defined: " << defined << "/" << state.grid().size() << " grid points\n"
            << "newton failures: " << state.newton_failures() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"renewable weighted-sum streaming estimators"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "generate synthetic batch CSV files");
  simulate->add_option("--model", sim.model, "homo | hetero | gamma")
      ->required()
      ->check(CLI::IsMember({"homo", "hetero", "gamma"}));
  simulate->add_option("--n", sim.n, "total observations")->required()
      ->check(CLI::PositiveNumber);
  simulate->add_option("--batch-size", sim.batch_size, "observations per batch")->required()
      ->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "stream seed")->required();
  simulate->add_option("--replication", sim.replication, "replication id (default 0)");
  simulate->add_option("--out,--out-dir", sim.out_dir, "output directory")->required();

  FitArgs fit;
  CLI::App* fit_stream =
      app.add_subcommand("fit-stream", "ingest batch CSVs into a renewable estimator");
  fit_stream->add_option("batches", fit.batch_files, "batch CSV files, ingested in name order");
  fit_stream->add_option("--batch-dir", fit.batch_dir, "directory of batch CSVs");
  fit_stream->add_option("--estfun", fit.estfun, "mean | mean-variance | gamma-shape")
      ->check(CLI::IsMember({"mean", "mean-variance", "gamma-shape"}));
  fit_stream->add_option("--bandwidth", fit.bandwidth, "shared bandwidth h for every batch");
  fit_stream->add_option("--bandwidth-constant", fit.bandwidth_constant,
                         "c of the online schedule h = c*N^-1/5");
  CLI::Option* gp = fit_stream->add_option("--grid-points", fit.grid_points,
                                           "grid size (default 401)")
      ->check(CLI::Range(2, 100000));
  CLI::Option* lo = fit_stream->add_option("--support-lo", fit.support_lo, "grid support lower end");
  CLI::Option* hi = fit_stream->add_option("--support-hi", fit.support_hi, "grid support upper end");
  lo->needs(hi);
  hi->needs(lo);
  CLI::Option* tr = fit_stream->add_option("--trim", fit.trim,
                                           "boundary trim fraction (default 0.05)")
      ->check(CLI::Range(0.0, 0.499));
  fit_stream->add_option("--kernel", fit.kernel, "gaussian | epanechnikov")
      ->check(CLI::IsMember({"gaussian", "epanechnikov"}));
  fit_stream->add_option("--tol", fit.tol, "newton tolerance")->check(CLI::PositiveNumber);
  fit_stream->add_option("--max-iter", fit.max_iter, "newton iteration cap")
      ->check(CLI::PositiveNumber);
  fit_stream->add_option("--state-in", fit.state_in, "resume from snapshot");
  fit_stream->add_option("--state-out", fit.state_out, "write snapshot after ingesting");
  fit_stream->add_option("--eval-points", fit.eval_points,
                         "file of x values to evaluate (default: the grid)");
  fit_stream->add_option("--out", fit.out, "estimates CSV path ('-' = stdout)");

  RunArgs run;
  CLI::App* run_exp = app.add_subcommand("run-experiment", "run a configured MISE experiment");
  run_exp->add_option("--config", run.config, "flat key = value config file")->required();
  run_exp->add_option("--out", run.out, "results CSV path (overrides the config's out key)");
  run_exp->add_option("--threads", run.threads, "worker threads (default RWS_THREADS or cores)");
  run_exp->add_option("--replications", run.replications, "override config replications");
  run_exp->add_option("--seed", run.seed, "override config seed");

  std::string rc_results, rc_estimator;
  int rc_component = 0;
  CLI::App* rate = app.add_subcommand("rate-check", "slope of log MISE vs log n");
  rate->add_option("--results", rc_results, "results CSV from run-experiment")->required();
  rate->add_option("--estimator", rc_estimator,
                   "nwe-f | nwe-a | rws-hf | rws-hk | nml-f | nml-a | csp-f | csp-a | rws-knf | rws-kn1")
      ->required();
  rate->add_option("--component", rc_component, "estimand component (default 0)");

  std::string inspect_path;
  CLI::App* inspect = app.add_subcommand("inspect-state", "print snapshot metadata");
  inspect->add_option("--state", inspect_path, "snapshot path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*fit_stream) {
      fit.support_set = lo->count() > 0;
      fit.grid_points_set = gp->count() > 0;
      fit.trim_set = tr->count() > 0;
      return cmd_fit_stream(fit);
    }
    if (*run_exp) return cmd_run_experiment(run);
    if (*rate) return cmd_rate_check(rc_results, rc_estimator, rc_component);
    if (*inspect) return cmd_inspect_state(inspect_path);
  } catch (const rws::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
