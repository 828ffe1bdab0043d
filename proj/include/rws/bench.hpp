#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rws/baseline.hpp"
#include "rws/errors.hpp"
#include "rws/estfun.hpp"
#include "rws/kernel.hpp"
#include "rws/renew.hpp"
#include "rws/simgen.hpp"
#include "rws/spline.hpp"
#include "rws/types.hpp"

namespace rws {

enum class EstimatorId { NweF, NweA, RwsHf, RwsHk, NmlF, NmlA, CspF, CspA, RwsKnf, RwsKn1 };

inline const char* estimator_name(EstimatorId id) {
  switch (id) {
    case EstimatorId::NweF: return "nwe-f";
    case EstimatorId::NweA: return "nwe-a";
    case EstimatorId::RwsHf: return "rws-hf";
    case EstimatorId::RwsHk: return "rws-hk";
    case EstimatorId::NmlF: return "nml-f";
    case EstimatorId::NmlA: return "nml-a";
    case EstimatorId::CspF: return "csp-f";
    case EstimatorId::CspA: return "csp-a";
    case EstimatorId::RwsKnf: return "rws-knf";
    case EstimatorId::RwsKn1: return "rws-kn1";
  }
  return "?";
}

inline EstimatorId estimator_from_name(const std::string& name) {
  static const std::map<std::string, EstimatorId> table = {
      {"nwe-f", EstimatorId::NweF},   {"nwe-a", EstimatorId::NweA},
      {"rws-hf", EstimatorId::RwsHf}, {"rws-hk", EstimatorId::RwsHk},
      {"nml-f", EstimatorId::NmlF},   {"nml-a", EstimatorId::NmlA},
      {"csp-f", EstimatorId::CspF},   {"csp-a", EstimatorId::CspA},
      {"rws-knf", EstimatorId::RwsKnf}, {"rws-kn1", EstimatorId::RwsKn1}};
  auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown estimator '" + name + "'");
  return it->second;
}

enum class DesignKind { FixedNVaryBatch, FixedBatchVaryN };

inline const char* design_name(DesignKind d) {
  return d == DesignKind::FixedNVaryBatch ? "fixed-n-vary-batch" : "fixed-batch-vary-n";
}

/// Minimum pilot-prefix size for calibrating the online bandwidth
/// schedule constant.
inline constexpr std::size_t kSchedulePilot = 1000;

/// One replication's integrated squared error: length-normalized
/// trapezoid of the squared error over adjacent defined interior grid
/// points. Falls back to the mean squared error over defined interior
/// points when no adjacent defined pair exists.
inline double mise(const GridEstimate& est,
                   const std::function<std::vector<double>(double)>& truth,
                   const EvaluationGrid& grid, int component) {
  if (component < 0 || component >= est.dim) throw std::invalid_argument("mise: bad component");
  const auto& pts = grid.points();
  double integral = 0.0, length = 0.0, point_sum = 0.0;
  std::size_t n_points = 0;
  auto sqerr = [&](std::size_t g) {
    const double e = est.value(g, component) - truth(pts[g])[component];
    return e * e;
  };
  std::ptrdiff_t prev = -1;
  double prev_err = 0.0;
  for (std::size_t g = 0; g < pts.size(); ++g) {
    if (!grid.interior(pts[g]) || !est.is_defined(g)) {
      prev = -1;
      continue;
    }
    const double e2 = sqerr(g);
    point_sum += e2;
    ++n_points;
    if (prev >= 0 && static_cast<std::size_t>(prev) + 1 == g) {
      const double dx = pts[g] - pts[prev];
      integral += 0.5 * (prev_err + e2) * dx;
      length += dx;
    }
    prev = static_cast<std::ptrdiff_t>(g);
    prev_err = e2;
  }
  if (n_points == 0) throw std::runtime_error("mise: no defined interior grid points");
  if (length > 0.0) return integral / length;
  return point_sum / static_cast<double>(n_points);
}

inline double coverage(const GridEstimate& est, const EvaluationGrid& grid) {
  std::size_t total = 0, defined = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!grid.interior(grid[g])) continue;
    ++total;
    defined += est.is_defined(g);
  }
  return total == 0 ? 0.0 : static_cast<double>(defined) / static_cast<double>(total);
}

struct ExperimentConfig {
  ModelSpec model;
  DesignKind design = DesignKind::FixedNVaryBatch;
  std::vector<std::int64_t> n_values;
  std::vector<std::int64_t> batch_values;
  std::vector<EstimatorId> estimators;
  int replications = 1;
  std::uint64_t seed = 0;
  int grid_points = 401;
  double trim = 0.05;
  bool timing = false;
  int threads = 0;  // 0 = caller decides
  std::size_t cv_max_points = 2000;
  std::vector<double> cv_candidates = default_cv_candidates();
  std::string out;

  std::vector<std::pair<std::int64_t, std::int64_t>> design_points() const {
    std::vector<std::pair<std::int64_t, std::int64_t>> pts;
    if (design == DesignKind::FixedNVaryBatch) {
      for (auto b : batch_values) pts.emplace_back(n_values.front(), b);
    } else {
      for (auto n : n_values) pts.emplace_back(n, batch_values.front());
    }
    return pts;
  }

  void validate() const {
    if (estimators.empty()) throw ConfigError("config: estimator list is empty");
    if (replications < 1) throw ConfigError("config: replications must be >= 1");
    if (n_values.empty() || batch_values.empty())
      throw ConfigError("config: n_values and batch_values must be non-empty");
    if (design == DesignKind::FixedNVaryBatch && n_values.size() != 1)
      throw ConfigError("config: fixed-n-vary-batch needs exactly one n value");
    if (design == DesignKind::FixedBatchVaryN && batch_values.size() != 1)
      throw ConfigError("config: fixed-batch-vary-n needs exactly one batch value");
    for (auto n : n_values)
      if (n < 1) throw ConfigError("config: n values must be positive");
    for (auto b : batch_values)
      if (b < 1) throw ConfigError("config: batch values must be positive");
    if (grid_points < 2) throw ConfigError("config: grid_points must be >= 2");
    if (!(trim >= 0.0 && trim < 0.5)) throw ConfigError("config: trim must be in [0, 0.5)");
    for (EstimatorId e : estimators) {
      const bool spline_e = e == EstimatorId::CspF || e == EstimatorId::CspA ||
                            e == EstimatorId::RwsKnf || e == EstimatorId::RwsKn1;
      const bool nw_e = e == EstimatorId::NweF || e == EstimatorId::NweA;
      const bool nml_e = e == EstimatorId::NmlF || e == EstimatorId::NmlA;
      switch (model.family) {
        case ModelFamily::Homoscedastic:
          if (nml_e)
            throw ConfigError(std::string("config: estimator '") + estimator_name(e) +
                              "' incompatible with model 'homo'");
          break;
        case ModelFamily::Heteroscedastic:
          if (nml_e || spline_e)
            throw ConfigError(std::string("config: estimator '") + estimator_name(e) +
                              "' incompatible with model 'hetero'");
          break;
        case ModelFamily::GammaLaw:
          if (nw_e || spline_e)
            throw ConfigError(std::string("config: estimator '") + estimator_name(e) +
                              "' incompatible with model 'gamma'");
          break;
      }
    }
  }
};

namespace detail {

inline std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim_ws(cur);
    if (!cur.empty()) parts.push_back(cur);
  }
  return parts;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: key '" + key + "' expects true or false, got '" + v + "'");
}

inline std::string format17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Flat key = value configuration with '#' comments. Unknown keys are
/// rejected by name.
inline ExperimentConfig parse_experiment_config(std::istream& in) {
  ExperimentConfig cfg;
  bool has_model = false, has_design = false, has_estimators = false, has_seed = false,
       has_reps = false, has_n = false, has_batch = false;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim_ws(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected 'key = value' at line " + std::to_string(line_no));
    const std::string key = detail::trim_ws(line.substr(0, eq));
    const std::string value = detail::trim_ws(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config: empty key or value at line " + std::to_string(line_no));

    if (key == "model") {
      try {
        cfg.model = model_from_name(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
      has_model = true;
    } else if (key == "design") {
      if (value == "fixed-n-vary-batch") cfg.design = DesignKind::FixedNVaryBatch;
      else if (value == "fixed-batch-vary-n") cfg.design = DesignKind::FixedBatchVaryN;
      else throw ConfigError("config: unknown design '" + value + "'");
      has_design = true;
    } else if (key == "n_values") {
      cfg.n_values.clear();
      for (const auto& v : detail::split_list(value))
        cfg.n_values.push_back(detail::parse_int(key, v));
      has_n = true;
    } else if (key == "batch_values") {
      cfg.batch_values.clear();
      for (const auto& v : detail::split_list(value))
        cfg.batch_values.push_back(detail::parse_int(key, v));
      has_batch = true;
    } else if (key == "estimators") {
      cfg.estimators.clear();
      for (const auto& v : detail::split_list(value))
        cfg.estimators.push_back(estimator_from_name(v));
      has_estimators = true;
    } else if (key == "replications") {
      cfg.replications = static_cast<int>(detail::parse_int(key, value));
      has_reps = true;
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
      has_seed = true;
    } else if (key == "grid_points") {
      cfg.grid_points = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "trim") {
      cfg.trim = detail::parse_real(key, value);
    } else if (key == "timing") {
      cfg.timing = detail::parse_bool(key, value);
    } else if (key == "threads") {
      cfg.threads = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "cv_max_points") {
      cfg.cv_max_points = static_cast<std::size_t>(detail::parse_int(key, value));
    } else if (key == "cv_candidates") {
      cfg.cv_candidates.clear();
      for (const auto& v : detail::split_list(value))
        cfg.cv_candidates.push_back(detail::parse_real(key, v));
    } else if (key == "out") {
      cfg.out = value;
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  if (!has_model) throw ConfigError("config: missing key 'model'");
  if (!has_design) throw ConfigError("config: missing key 'design'");
  if (!has_estimators) throw ConfigError("config: missing key 'estimators'");
  if (!has_reps) throw ConfigError("config: missing key 'replications'");
  if (!has_seed) throw ConfigError("config: missing key 'seed'");
  if (!has_n) throw ConfigError("config: missing key 'n_values'");
  if (!has_batch) throw ConfigError("config: missing key 'batch_values'");
  cfg.validate();
  return cfg;
}

struct MiseRow {
  std::string model;
  std::string design;
  std::int64_t n = 0;
  std::int64_t batch_size = 0;
  std::string estimator;
  int component = 0;
  int replications = 0;
  double mise = 0.0;
  double coverage = 0.0;
  double wall_ms = 0.0;
};

struct MiseReport {
  std::vector<MiseRow> rows;
};

/// Bit-exact header contract; values as 17-significant-digit decimals.
inline void write_results_csv(const MiseReport& report, std::ostream& out) {
  out << "model,design,n,batch_size,estimator,component,replications,mise,coverage,wall_ms\n";
  for (const MiseRow& r : report.rows) {
    out << r.model << ',' << r.design << ',' << r.n << ',' << r.batch_size << ','
        << r.estimator << ',' << r.component << ',' << r.replications << ','
        << detail::format17(r.mise) << ',' << detail::format17(r.coverage) << ','
        << detail::format17(r.wall_ms) << '\n';
  }
}

/// Parses a results CSV produced by write_results_csv.
inline MiseReport read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw DataError("results csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "model,design,n,batch_size,estimator,component,replications,mise,coverage,wall_ms")
    throw DataError("results csv: unexpected header");
  MiseReport report;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream row(line);
    while (std::getline(row, cur, ',')) fields.push_back(cur);
    if (fields.size() != 10) throw DataError("results csv: expected 10 fields", line_no);
    MiseRow r;
    try {
      r.model = fields[0];
      r.design = fields[1];
      r.n = std::stoll(fields[2]);
      r.batch_size = std::stoll(fields[3]);
      r.estimator = fields[4];
      r.component = std::stoi(fields[5]);
      r.replications = std::stoi(fields[6]);
      r.mise = std::stod(fields[7]);
      r.coverage = std::stod(fields[8]);
      r.wall_ms = std::stod(fields[9]);
    } catch (const std::exception&) {
      throw DataError("results csv: malformed row", line_no);
    }
    report.rows.push_back(std::move(r));
  }
  return report;
}

namespace detail {

/// Deterministic stride subsample used for the pooled-data CV when the
/// pool exceeds the cap.
inline void cv_subsample(const PooledDataset& pool, std::size_t cap, std::vector<double>& xs,
                         std::vector<double>& ys) {
  const std::size_t n = pool.n();
  if (cap == 0 || n <= cap) {
    xs = pool.xs;
    ys = pool.ys;
    return;
  }
  xs.resize(cap);
  ys.resize(cap);
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t idx = i * n / cap;
    xs[i] = pool.xs[idx];
    ys[i] = pool.ys[idx];
  }
}

struct RepContext {
  const ExperimentConfig* cfg = nullptr;
  std::vector<Batch> stream;
  PooledDataset pooled;
  EvaluationGrid grid{std::vector<double>{0.0, 1.0}, 0.0, 1.0, 0.0};
  double c_f = 0.0;           // pooled-data CV constant
  double c_1 = 0.0;           // first-batch CV constant
  int kn_f = -1, kn_1 = -1;   // knot counts
  double spline_lo = 0.0, spline_hi = 0.0;
};

inline EstimatingFunction model_estfun(const ModelSpec& m) {
  switch (m.family) {
    case ModelFamily::Homoscedastic: return mean_regression();
    case ModelFamily::Heteroscedastic: return mean_variance();
    case ModelFamily::GammaLaw: return gamma_shape_score();
  }
  return mean_regression();
}

inline GridEstimate stream_rws(const RepContext& ctx, bool online_bandwidth) {
  const ModelSpec& model = ctx.cfg->model;
  const KernelSpec kernel = KernelSpec::gaussian();
  const EstimatingFunction f = model_estfun(model);
  const double n_total = static_cast<double>(ctx.pooled.n());
  const double h_f = ctx.c_f * std::pow(n_total, -0.2);
  RenewableState state(ctx.grid, f.dim);
  std::int64_t seen = 0;
  for (const Batch& b : ctx.stream) {
    seen += static_cast<std::int64_t>(b.size());
    const double h = online_bandwidth
                         ? ctx.c_1 * std::pow(static_cast<double>(seen), -0.2)
                         : h_f;
    if (model.family == ModelFamily::Homoscedastic)
      state = update_closed_form(state, b, h, kernel);
    else
      state = update_newton(state, b, h, kernel, f);
  }
  return state.to_grid_estimate();
}

inline GridEstimate stream_spline(const RepContext& ctx, int knot_count) {
  const SplineBasis basis = SplineBasis::equidistant(knot_count, ctx.spline_lo, ctx.spline_hi);
  SplineState state(basis);
  for (const Batch& b : ctx.stream) state = update_spline(state, b);
  const std::vector<double> gamma = solve_spline(state);
  return spline_on_grid(basis, gamma, ctx.grid);
}

inline GridEstimate compute_estimator(const RepContext& ctx, EstimatorId id) {
  const ModelSpec& model = ctx.cfg->model;
  const KernelSpec kernel = KernelSpec::gaussian();
  const double n_total = static_cast<double>(ctx.pooled.n());
  const double h_f = ctx.c_f * std::pow(n_total, -0.2);

  auto per_batch_h = [&] {
    std::vector<double> hs(ctx.stream.size());
    for (std::size_t j = 0; j < ctx.stream.size(); ++j)
      hs[j] = ctx.c_f * std::pow(static_cast<double>(ctx.stream[j].size()), -0.2);
    return hs;
  };

  switch (id) {
    case EstimatorId::NweF:
      if (model.family == ModelFamily::Homoscedastic)
        return nw_full(ctx.pooled, h_f, kernel, ctx.grid);
      return nml_full(ctx.pooled, h_f, kernel, mean_variance(), ctx.grid);
    case EstimatorId::NweA:
      if (model.family == ModelFamily::Homoscedastic)
        return nw_batch_average(ctx.stream, per_batch_h(), kernel, ctx.grid).estimate;
      return nml_batch_average(ctx.stream, per_batch_h(), kernel, mean_variance(), ctx.grid)
          .estimate;
    case EstimatorId::NmlF:
      return nml_full(ctx.pooled, h_f, kernel, gamma_shape_score(), ctx.grid);
    case EstimatorId::NmlA:
      return nml_batch_average(ctx.stream, per_batch_h(), kernel, gamma_shape_score(), ctx.grid)
          .estimate;
    case EstimatorId::RwsHf:
      return stream_rws(ctx, false);
    case EstimatorId::RwsHk:
      return stream_rws(ctx, true);
    case EstimatorId::CspF: {
      const SplineBasis basis =
          SplineBasis::equidistant(ctx.kn_f, ctx.spline_lo, ctx.spline_hi);
      return spline_on_grid(basis, spline_full(ctx.pooled, basis), ctx.grid);
    }
    case EstimatorId::CspA: {
      const SplineBasis basis =
          SplineBasis::equidistant(ctx.kn_f, ctx.spline_lo, ctx.spline_hi);
      return spline_on_grid(basis, spline_batch_average(ctx.stream, basis).gamma, ctx.grid);
    }
    case EstimatorId::RwsKnf:
      return stream_spline(ctx, ctx.kn_f);
    case EstimatorId::RwsKn1:
      return stream_spline(ctx, ctx.kn_1);
  }
  throw std::logic_error("unreachable estimator id");
}

struct RepOutcome {
  // per estimator (cfg order): per component ISE, coverage, wall ms
  std::vector<std::vector<double>> ise;
  std::vector<double> cov;
  std::vector<double> wall_ms;
};

}  // namespace detail

/// Runs every (design point × replication × estimator) cell, averaging the
/// per-replication ISEs into MISE rows. Deterministic in the seed:
/// replications use the counter RNG keyed by replication id, and results
/// are aggregated in replication order no matter how many worker threads
/// run. Requested estimators are validated against the model before any
/// computation starts.
inline MiseReport run_experiment(const ExperimentConfig& cfg, int threads = 1) {
  cfg.validate();
  const ModelSpec model = cfg.model;
  const KernelSpec kernel = KernelSpec::gaussian();
  const EvaluationGrid grid = EvaluationGrid::uniform(model.support_lo(), model.support_hi(),
                                                      cfg.grid_points, cfg.trim);

  auto wants = [&](EstimatorId id) {
    return std::find(cfg.estimators.begin(), cfg.estimators.end(), id) != cfg.estimators.end();
  };
  const bool need_cf = wants(EstimatorId::NweF) || wants(EstimatorId::NweA) ||
                       wants(EstimatorId::RwsHf) || wants(EstimatorId::NmlF) ||
                       wants(EstimatorId::NmlA);
  const bool need_c1 = wants(EstimatorId::RwsHk);
  const bool need_knf = wants(EstimatorId::CspF) || wants(EstimatorId::CspA) ||
                        wants(EstimatorId::RwsKnf);
  const bool need_kn1 = wants(EstimatorId::RwsKn1);
  const bool need_spline_support = need_knf || need_kn1;

  auto truth = [&](double x) {
    std::vector<double> out(model.dim());
    model.truth(x, out.data());
    return out;
  };

  MiseReport report;
  for (const auto& [n, batch_size] : cfg.design_points()) {
    std::vector<detail::RepOutcome> outcomes(cfg.replications);

    auto run_rep = [&](int rep) {
      detail::RepContext ctx;
      ctx.cfg = &cfg;
      ctx.grid = grid;
      ctx.stream = generate_stream(model, {n, batch_size, cfg.seed,
                                           static_cast<std::uint64_t>(rep)});
      for (const Batch& b : ctx.stream) ctx.pooled.append(b);

      if (need_cf) {
        std::vector<double> xs, ys;
        detail::cv_subsample(ctx.pooled, cfg.cv_max_points, xs, ys);
        ctx.c_f = select_cv_constant(xs, ys, kernel, cfg.cv_candidates);
      }
      if (need_c1) {
        // schedule constant from a pilot prefix: leading whole batches
        // until at least kSchedulePilot observations (a single batch when
        // batches are that large). A batch-sized CV is unstable below
        // that, and for nearly flat curves it degenerates to the largest
        // candidate; the schedule then carries the bad constant forever.
        std::vector<double> xs, ys;
        for (const Batch& b : ctx.stream) {
          xs.insert(xs.end(), b.xs.begin(), b.xs.end());
          ys.insert(ys.end(), b.ys.begin(), b.ys.end());
          if (xs.size() >= kSchedulePilot) break;
        }
        ctx.c_1 = select_cv_constant(xs, ys, kernel, cfg.cv_candidates);
      }
      if (need_spline_support) {
        const auto& xs = ctx.stream.front().xs;
        ctx.spline_lo = *std::min_element(xs.begin(), xs.end());
        ctx.spline_hi = *std::max_element(xs.begin(), xs.end());
      }
      if (need_knf) {
        std::vector<double> xs, ys;
        detail::cv_subsample(ctx.pooled, cfg.cv_max_points, xs, ys);
        ctx.kn_f = select_knot_count(xs, ys, ctx.spline_lo, ctx.spline_hi);
      }
      if (need_kn1)
        ctx.kn_1 = select_knot_count(ctx.stream.front().xs, ctx.stream.front().ys,
                                     ctx.spline_lo, ctx.spline_hi);

      detail::RepOutcome out;
      out.ise.resize(cfg.estimators.size());
      out.cov.resize(cfg.estimators.size(), 0.0);
      out.wall_ms.resize(cfg.estimators.size(), 0.0);
      std::vector<GridEstimate> estimates(cfg.estimators.size());
      for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        estimates[e] = detail::compute_estimator(ctx, cfg.estimators[e]);
        const auto t1 = std::chrono::steady_clock::now();
        if (cfg.timing)
          out.wall_ms[e] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        out.cov[e] = coverage(estimates[e], grid);
        out.ise[e].resize(model.dim());
        for (int c = 0; c < model.dim(); ++c)
          out.ise[e][c] = mise(estimates[e], truth, grid, c);
      }

      // exact-equivalence guard: shared-bandwidth RWS must reproduce the
      // pooled N-W estimator
      if (model.family == ModelFamily::Homoscedastic && wants(EstimatorId::NweF) &&
          wants(EstimatorId::RwsHf)) {
        const auto& a = estimates[static_cast<std::size_t>(
            std::find(cfg.estimators.begin(), cfg.estimators.end(), EstimatorId::RwsHf) -
            cfg.estimators.begin())];
        const auto& b = estimates[static_cast<std::size_t>(
            std::find(cfg.estimators.begin(), cfg.estimators.end(), EstimatorId::NweF) -
            cfg.estimators.begin())];
        for (std::size_t g = 0; g < grid.size(); ++g) {
          if (!a.is_defined(g) || !b.is_defined(g)) continue;
          if (std::abs(a.values[g] - b.values[g]) > 1e-10 * (1.0 + std::abs(b.values[g])))
            throw std::logic_error("run_experiment: RWS_hf / NWE_f equivalence violated");
        }
      }
      return out;
    };

    const int workers = std::max(1, std::min<int>(threads, cfg.replications));
    if (workers == 1) {
      for (int r = 0; r < cfg.replications; ++r) outcomes[r] = run_rep(r);
    } else {
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (;;) {
              const int r = next.fetch_add(1);
              if (r >= cfg.replications) break;
              outcomes[r] = run_rep(r);
            }
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& err : errors)
        if (err) std::rethrow_exception(err);
    }

    // aggregate in replication order
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      for (int c = 0; c < model.dim(); ++c) {
        double sum = 0.0, cov_sum = 0.0, wall = 0.0;
        for (int r = 0; r < cfg.replications; ++r) {
          sum += outcomes[r].ise[e][c];
          cov_sum += outcomes[r].cov[e];
          wall += outcomes[r].wall_ms[e];
        }
        MiseRow row;
        row.model = model.name();
        row.design = design_name(cfg.design);
        row.n = n;
        row.batch_size = batch_size;
        row.estimator = estimator_name(cfg.estimators[e]);
        row.component = c;
        row.replications = cfg.replications;
        row.mise = sum / cfg.replications;
        row.coverage = cov_sum / cfg.replications;
        row.wall_ms = wall;
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

/// Least-squares slope of log MISE against log n.
inline double rate_check(const std::vector<std::pair<double, double>>& n_vs_mise) {
  if (n_vs_mise.size() < 3)
    throw std::invalid_argument("rate_check: need at least 3 design points");
  double lo = n_vs_mise.front().first, hi = n_vs_mise.front().first;
  for (const auto& [n, m] : n_vs_mise) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
    if (!(n > 0.0 && m > 0.0)) throw std::invalid_argument("rate_check: values must be positive");
  }
  if (hi / lo < 100.0)
    throw std::invalid_argument("rate_check: n values must span at least two decades");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(n_vs_mise.size());
  for (const auto& [n, m] : n_vs_mise) {
    const double x = std::log(n), y = std::log(m);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

inline double rate_check(const MiseReport& report, const std::string& estimator,
                         int component = 0) {
  std::vector<std::pair<double, double>> pts;
  for (const MiseRow& r : report.rows)
    if (r.estimator == estimator && r.component == component)
      pts.emplace_back(static_cast<double>(r.n), r.mise);
  return rate_check(pts);
}

}  // namespace rws
