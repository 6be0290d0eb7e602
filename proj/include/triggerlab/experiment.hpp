#pragma once

// Experiment orchestration: JSON configuration, content-keyed output layout,
// and the high-level drivers behind the CLI subcommands (train, eval,
// generate, oracle, lp, concentration, sweep, heatmap).
//
// Every artifact an experiment writes is keyed by an FNV-1a hash of the
// deterministic configuration core, so reruns of the same configuration
// land on the same paths with byte-identical content, and a sweep is
// idempotent cell by cell. Manifests additionally record a core_hash over
// their own deterministic fields; wall-clock timing is recorded outside the
// hashed core.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "triggerlab/checkpoint.hpp"
#include "triggerlab/datagen.hpp"
#include "triggerlab/diversity.hpp"
#include "triggerlab/evalkit.hpp"
#include "triggerlab/length_distribution.hpp"
#include "triggerlab/linalg.hpp"
#include "triggerlab/model.hpp"
#include "triggerlab/oracle.hpp"
#include "triggerlab/trainer.hpp"

namespace triggerlab {

using ordered_json = nlohmann::ordered_json;

// --- Distribution specification -------------------------------------------

struct DistributionSpec {
  std::string kind = "uniform";  // uniform | singleton | optimal | explicit
  int ell_min = 3;               // uniform
  int ell_max = 8;               // uniform
  int ell = 3;                   // singleton
  int u_max = 8;                 // optimal (n_trg comes from the sampler)
  std::vector<int> support;      // explicit
  std::vector<double> masses;    // explicit

  ordered_json to_json() const {
    ordered_json j;
    j["kind"] = kind;
    if (kind == "uniform") {
      j["ell_min"] = ell_min;
      j["ell_max"] = ell_max;
    } else if (kind == "singleton") {
      j["ell"] = ell;
    } else if (kind == "optimal") {
      j["u_max"] = u_max;
    } else if (kind == "explicit") {
      j["support"] = support;
      j["masses"] = masses;
    } else {
      throw std::invalid_argument("unknown distribution kind: " + kind);
    }
    return j;
  }

  static DistributionSpec from_json(const ordered_json& j) {
    DistributionSpec spec;
    spec.kind = j.at("kind").get<std::string>();
    if (spec.kind == "uniform") {
      spec.ell_min = j.at("ell_min").get<int>();
      spec.ell_max = j.at("ell_max").get<int>();
    } else if (spec.kind == "singleton") {
      spec.ell = j.at("ell").get<int>();
    } else if (spec.kind == "optimal") {
      spec.u_max = j.at("u_max").get<int>();
    } else if (spec.kind == "explicit") {
      spec.support = j.at("support").get<std::vector<int>>();
      spec.masses = j.at("masses").get<std::vector<double>>();
    } else {
      throw std::invalid_argument("unknown distribution kind: " + spec.kind);
    }
    return spec;
  }

  LengthDistribution make(int n_trg) const {
    if (kind == "uniform") return LengthDistribution::uniform(ell_min, ell_max);
    if (kind == "singleton") return LengthDistribution::singleton(ell);
    if (kind == "optimal") return optimal_distribution(n_trg, u_max);
    if (kind == "explicit") return LengthDistribution(support, masses);
    throw std::invalid_argument("unknown distribution kind: " + kind);
  }
};

// --- Experiment configuration ----------------------------------------------

struct EvalSpec {
  int n_samples = 1024;
  int ell_min = 3;
  int ell_max = 8;
  uint64_t seed = 0;

  ordered_json to_json() const {
    ordered_json j;
    j["n_samples"] = n_samples;
    j["ell_min"] = ell_min;
    j["ell_max"] = ell_max;
    j["seed"] = seed;
    return j;
  }
};

struct ExperimentConfig {
  SamplerConfig sampler;
  DistributionSpec distribution;
  TrainConfig train;
  EvalSpec eval;
  std::string out_dir;  // empty -> $TRIGGERLAB_OUT or "out"

  ordered_json core_json() const {
    ordered_json j;
    j["N"] = sampler.N;
    j["N_trg"] = sampler.N_trg;
    j["L"] = sampler.L;
    j["distribution"] = distribution.to_json();
    ordered_json t;
    t["eta_v"] = train.eta_v;
    t["eta_kq"] = train.eta_kq;
    t["m_v"] = train.m_v;
    t["m_kq"] = train.m_kq;
    t["seed"] = train.seed;
    t["reuse_samples"] = train.reuse_samples;
    j["train"] = t;
    return j;
  }

  std::string train_key() const { return fnv1a64_hex(core_json().dump()); }

  LengthDistribution make_distribution() const {
    return distribution.make(sampler.N_trg);
  }

  void validate() const {
    sampler.validate_with(make_distribution());
    train.validate();
  }
};

inline ExperimentConfig experiment_config_from_json(const ordered_json& j) {
  ExperimentConfig cfg;
  cfg.sampler.N = j.at("N").get<int>();
  cfg.sampler.N_trg = j.at("N_trg").get<int>();
  if (j.contains("L")) cfg.sampler.L = j.at("L").get<int>();
  cfg.distribution = DistributionSpec::from_json(j.at("distribution"));
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("eta_v")) cfg.train.eta_v = t.at("eta_v").get<double>();
    if (t.contains("eta_kq")) cfg.train.eta_kq = t.at("eta_kq").get<double>();
    if (t.contains("m_v")) cfg.train.m_v = t.at("m_v").get<int>();
    if (t.contains("m_kq")) cfg.train.m_kq = t.at("m_kq").get<int>();
    if (t.contains("seed")) cfg.train.seed = t.at("seed").get<uint64_t>();
    if (t.contains("reuse_samples"))
      cfg.train.reuse_samples = t.at("reuse_samples").get<bool>();
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("n_samples"))
      cfg.eval.n_samples = e.at("n_samples").get<int>();
    if (e.contains("ell_min")) cfg.eval.ell_min = e.at("ell_min").get<int>();
    if (e.contains("ell_max")) cfg.eval.ell_max = e.at("ell_max").get<int>();
    if (e.contains("seed")) cfg.eval.seed = e.at("seed").get<uint64_t>();
  }
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  ordered_json j;
  in >> j;
  return experiment_config_from_json(j);
}

// --- Output layout -----------------------------------------------------------

inline std::string resolve_out_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("TRIGGERLAB_OUT"); env != nullptr && *env)
    return env;
  return "out";
}

inline void ensure_layout(const std::string& out_dir) {
  namespace fs = std::filesystem;
  for (const char* sub :
       {"manifests", "checkpoints", "metrics", "heatmaps", "datasets"})
    fs::create_directories(fs::path(out_dir) / sub);
}

// Write via a temporary file and rename, so partially written artifacts are
// never visible under their final name.
inline void write_file_atomic(const std::string& path,
                              const std::string& content) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline int64_t elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now() - start)
      .count();
}

// Finalize a manifest: hash the deterministic core, then attach timing.
inline std::string finalize_manifest(ordered_json core, int64_t wall_ms) {
  core["core_hash"] = fnv1a64_hex(core.dump());
  core["wall_time_ms"] = wall_ms;
  return core.dump(2) + "\n";
}

// --- Train / eval drivers ------------------------------------------------------

struct TrainOutcome {
  ModelParams params;
  std::string checkpoint_path;
  std::string manifest_path;
  bool reused_existing = false;
};

inline TrainOutcome cmd_train(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  const std::string out_dir = resolve_out_dir(config.out_dir);
  ensure_layout(out_dir);
  const std::string key = config.train_key();
  const std::string ckpt_path =
      (fs::path(out_dir) / "checkpoints" / ("ckpt_" + key + ".txt")).string();
  const std::string manifest_path =
      (fs::path(out_dir) / "manifests" / ("train_" + key + ".json")).string();

  TrainOutcome outcome;
  outcome.checkpoint_path = ckpt_path;
  outcome.manifest_path = manifest_path;

  if (fs::exists(ckpt_path)) {
    outcome.params = load_checkpoint(ckpt_path);
    outcome.reused_existing = true;
    return outcome;
  }

  const LengthDistribution dist = config.make_distribution();
  outcome.params = run_algorithm1(config.sampler, dist, config.train);
  {
    std::ostringstream body;
    serialize_checkpoint(body, outcome.params);
    write_file_atomic(ckpt_path, body.str());
  }

  ordered_json core;
  core["kind"] = "train";
  core["key"] = key;
  core["config"] = config.core_json();
  core["checkpoint"] = "checkpoints/ckpt_" + key + ".txt";
  core["checkpoint_fnv"] = fnv1a64_hex(read_file(ckpt_path));
  write_file_atomic(manifest_path, finalize_manifest(core, elapsed_ms(start)));
  return outcome;
}

struct EvalOutcome {
  MetricsRecord record;
  double in_dist_accuracy = 0.0;
  MechanismProbe probe;
  std::string metrics_path;
  std::string manifest_path;
};

inline EvalOutcome cmd_eval(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  const TrainOutcome trained = cmd_train(config);
  const std::string out_dir = resolve_out_dir(config.out_dir);

  ordered_json core;
  core["kind"] = "eval";
  core["config"] = config.core_json();
  core["eval"] = config.eval.to_json();
  const std::string key = fnv1a64_hex(core.dump());

  EvalOutcome outcome;
  const LengthDistribution dist = config.make_distribution();
  outcome.in_dist_accuracy = eval_in_distribution(
      trained.params, dist, config.eval.n_samples, config.eval.seed);
  const OodRates rates =
      eval_ood(trained.params, config.eval.ell_min, config.eval.ell_max,
               config.eval.n_samples, config.eval.seed);
  outcome.probe = probe_mechanism(trained.params, dist);

  outcome.record.ell_min = config.eval.ell_min;
  outcome.record.ell_max = config.eval.ell_max;
  outcome.record.n_trg = config.sampler.N_trg;
  outcome.record.seed = config.train.seed;
  outcome.record.ood_accuracy = rates.ood_accuracy;
  outcome.record.pseudo_rate = rates.pseudo_rate;
  outcome.record.leftmost_rate = rates.leftmost_rate;
  outcome.record.dominant_mechanism = outcome.probe.dominant;

  outcome.metrics_path =
      (fs::path(out_dir) / "metrics" / ("eval_" + key + ".csv")).string();
  write_file_atomic(outcome.metrics_path, MetricsRecord::csv_header() + "\n" +
                                              outcome.record.csv_row() + "\n");

  core["key"] = key;
  core["metrics"] = "metrics/eval_" + key + ".csv";
  core["in_dist_accuracy"] = format_double(outcome.in_dist_accuracy);
  core["ood_accuracy"] = format_double(rates.ood_accuracy);
  core["pseudo_rate"] = format_double(rates.pseudo_rate);
  core["leftmost_rate"] = format_double(rates.leftmost_rate);
  core["dominant_mechanism"] = outcome.record.dominant_mechanism;
  outcome.manifest_path =
      (fs::path(out_dir) / "manifests" / ("eval_" + key + ".json")).string();
  write_file_atomic(outcome.manifest_path,
                    finalize_manifest(core, elapsed_ms(start)));
  return outcome;
}

// --- Dataset generation ---------------------------------------------------------

// law: "train" draws (ell, ell) gaps from the distribution; "ood" draws the
// unequal-gap test law over [eval.ell_min, eval.ell_max].
inline std::string cmd_generate(const ExperimentConfig& config, int n_sequences,
                                const std::string& law) {
  namespace fs = std::filesystem;
  config.validate();
  if (n_sequences < 1)
    throw std::invalid_argument("cmd_generate: n_sequences must be >= 1");
  if (law != "train" && law != "ood")
    throw std::invalid_argument("cmd_generate: law must be train or ood");
  const std::string out_dir = resolve_out_dir(config.out_dir);
  ensure_layout(out_dir);

  ordered_json core;
  core["kind"] = "generate";
  core["config"] = config.core_json();
  core["law"] = law;
  core["n_sequences"] = n_sequences;
  core["eval"] = config.eval.to_json();
  const std::string key = fnv1a64_hex(core.dump());
  const std::string path =
      (fs::path(out_dir) / "datasets" / ("data_" + key + ".jsonl")).string();

  const LengthDistribution dist = config.make_distribution();
  std::vector<TokenSequence> sequences;
  sequences.reserve(static_cast<size_t>(n_sequences));
  for (int i = 0; i < n_sequences; ++i) {
    Rng rng(config.train.seed, Stream::generate, static_cast<uint64_t>(i));
    if (law == "train") {
      const int ell = sample_length(dist, rng);
      sequences.push_back(sample_train_sequence(config.sampler, ell, rng));
    } else {
      sequences.push_back(sample_ood_sequence(
          config.sampler, config.eval.ell_min, config.eval.ell_max, rng));
    }
  }
  write_dataset(path, sequences);
  return path;
}

// --- Oracle driver ---------------------------------------------------------------

struct OracleOutcome {
  Mat population_wv_matrix;
  PopulationWkq population_wkq_dominant;
  CertificationResult certification;
  double diversity_ratio = 0.0;
  std::string wv_path;
  std::string wkq_path;
  std::string manifest_path;
};

inline OracleOutcome cmd_oracle(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  const std::string out_dir = resolve_out_dir(config.out_dir);
  ensure_layout(out_dir);
  const LengthDistribution dist = config.make_distribution();
  const SamplerConfig& cfg = config.sampler;
  const PopulationStats stats = population_stats(dist, cfg.L);

  OracleOutcome outcome;
  const double eta_tilde_v = config.train.eta_v / cfg.N;
  const double eta_tilde =
      eta_tilde_scale(config.train.eta_v, config.train.eta_kq, cfg, stats);
  outcome.population_wv_matrix = population_wv(dist, cfg, eta_tilde_v);
  outcome.population_wkq_dominant = population_wkq(dist, cfg, eta_tilde);
  outcome.certification = certify_ood(dist, cfg);
  outcome.diversity_ratio = max_sum_ratio(dist);

  ordered_json core;
  core["kind"] = "oracle";
  core["config"] = config.core_json();
  const std::string key = fnv1a64_hex(core.dump());
  outcome.wv_path =
      (fs::path(out_dir) / "heatmaps" / ("popwv_" + key + ".txt")).string();
  outcome.wkq_path =
      (fs::path(out_dir) / "heatmaps" / ("popwkq_" + key + ".txt")).string();
  write_matrix_text(outcome.wv_path, outcome.population_wv_matrix);
  write_matrix_text(outcome.wkq_path, outcome.population_wkq_dominant.matrix);

  core["key"] = key;
  core["population_wv"] = "heatmaps/popwv_" + key + ".txt";
  core["population_wkq"] = "heatmaps/popwkq_" + key + ".txt";
  core["wkq_excluded_bound"] =
      format_double(outcome.population_wkq_dominant.excluded_bound);
  core["diversity_ratio"] = format_double(outcome.diversity_ratio);
  core["generalizes"] = outcome.certification.generalizes;
  core["certification_margin"] = format_double(outcome.certification.margin);
  if (outcome.certification.witness.has_value()) {
    const TokenSequence& w = *outcome.certification.witness;
    ordered_json wit;
    wit["ell1"] = w.ell1;
    wit["ell2"] = w.ell2;
    wit["competitor_position"] = outcome.certification.witness_position;
    core["witness"] = wit;
  }
  outcome.manifest_path =
      (fs::path(out_dir) / "manifests" / ("oracle_" + key + ".json")).string();
  write_file_atomic(outcome.manifest_path,
                    finalize_manifest(core, elapsed_ms(start)));
  return outcome;
}

// --- LP driver --------------------------------------------------------------------

struct LpOutcome {
  LpSolution closed_form;
  LpSolution brute_force;
  KktReport kkt;
  double boundary_ratio = 0.0;  // R of the closed-form optimum
};

inline LpOutcome cmd_lp(int n_trg, int u_max, int resolution) {
  const LpInstance inst{n_trg, u_max};
  LpOutcome outcome;
  outcome.closed_form = closed_form_lp(inst);
  outcome.brute_force = brute_force_lp(inst, resolution);
  outcome.kkt = check_kkt(inst, outcome.closed_form.masses);
  outcome.boundary_ratio = max_sum_ratio(optimal_distribution(n_trg, u_max));
  return outcome;
}

// --- Concentration experiment -------------------------------------------------------

// Measures the Monte-Carlo error of the one-step estimates against the exact
// population limits as the per-stage sample count grows, and fits the decay
// exponent: slope of log10(relative Frobenius error) against log10(M).
//
// Default learning rates are 1 rather than the large values used in the
// transition experiments: the error rate is a property of the estimator in
// its linear-response regime, and at eta_v ~ 1e3 the stage-two softmax is
// saturated, so first-stage noise propagates sub-linearly at small M and
// bends the measured curve away from the asymptotic M^{-1/2} law.
struct ConcentrationConfig {
  SamplerConfig sampler{8, 2, 16};
  DistributionSpec distribution{"uniform", 4, 5};
  double eta_v = 1.0;
  double eta_kq = 1.0;
  std::vector<int> sample_sizes{1000, 10000, 100000};
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
};

struct ConcentrationResult {
  std::vector<int> sample_sizes;
  std::vector<double> err_wv;   // mean over seeds, per sample size
  std::vector<double> err_wkq;
  double slope_wv = 0.0;
  double slope_wkq = 0.0;
  std::string csv_path;
};

inline double fit_log_slope(const std::vector<int>& xs,
                            const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("fit_log_slope: need >= 2 points");
  const size_t n = xs.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double lx = std::log10(static_cast<double>(xs[i]));
    const double ly = std::log10(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline ConcentrationResult cmd_concentration(const ConcentrationConfig& config,
                                             const std::string& out_dir_arg) {
  const LengthDistribution dist =
      config.distribution.make(config.sampler.N_trg);
  config.sampler.validate_with(dist);
  if (config.sample_sizes.size() < 2 || config.seeds.empty())
    throw std::invalid_argument(
        "cmd_concentration: need >= 2 sample sizes and >= 1 seed");

  const Mat pop_wv =
      population_wv(dist, config.sampler, config.eta_v / config.sampler.N);
  const Mat pop_wkq_exact =
      population_wkq_exact(dist, config.sampler, config.eta_v, config.eta_kq);
  const double wv_norm = pop_wv.norm();
  const double wkq_norm = pop_wkq_exact.norm();

  ConcentrationResult result;
  result.sample_sizes = config.sample_sizes;
  for (const int m : config.sample_sizes) {
    double acc_wv = 0.0, acc_wkq = 0.0;
    for (const uint64_t seed : config.seeds) {
      TrainConfig train;
      train.eta_v = config.eta_v;
      train.eta_kq = config.eta_kq;
      train.m_v = m;
      train.m_kq = m;
      train.seed = seed;
      const ModelParams params =
          run_algorithm1(config.sampler, dist, train);
      acc_wv += (params.W_V - pop_wv).norm() / wv_norm;
      acc_wkq += (params.W_KQ - pop_wkq_exact).norm() / wkq_norm;
    }
    result.err_wv.push_back(acc_wv / static_cast<double>(config.seeds.size()));
    result.err_wkq.push_back(acc_wkq /
                             static_cast<double>(config.seeds.size()));
  }
  result.slope_wv = fit_log_slope(result.sample_sizes, result.err_wv);
  result.slope_wkq = fit_log_slope(result.sample_sizes, result.err_wkq);

  const std::string out_dir = resolve_out_dir(out_dir_arg);
  ensure_layout(out_dir);
  std::ostringstream csv;
  csv << "samples,err_wv,err_wkq\n";
  for (size_t i = 0; i < result.sample_sizes.size(); ++i)
    csv << result.sample_sizes[i] << ',' << format_double(result.err_wv[i])
        << ',' << format_double(result.err_wkq[i]) << '\n';
  csv << "slope," << format_double(result.slope_wv) << ','
      << format_double(result.slope_wkq) << '\n';
  result.csv_path = (std::filesystem::path(out_dir) / "metrics" /
                     "concentration.csv")
                        .string();
  write_file_atomic(result.csv_path, csv.str());
  return result;
}

// --- Sweep ------------------------------------------------------------------------------

// Grid over window upper ends and training seeds at fixed N_trg. Each cell
// trains, evaluates, and writes a one-row CSV fragment keyed by its own
// configuration hash, plus a done marker; completed cells are skipped on
// rerun, so an interrupted sweep resumes where it stopped. Cells run on a
// small thread pool (TRIGGERLAB_WORKERS, default 1); the final CSV is
// assembled from the fragments in grid order, so its bytes do not depend on
// scheduling. A failing cell records an .error file and leaves the other
// cells untouched.
struct SweepConfig {
  ExperimentConfig base;
  std::vector<int> ell_max_values;
  std::vector<uint64_t> seeds;
};

struct SweepOutcome {
  std::vector<MetricsRecord> records;  // grid order: ell_max major, seed minor
  std::vector<std::string> failures;   // "cell <key>: <message>"
  std::string csv_path;
};

inline int sweep_worker_count() {
  if (const char* env = std::getenv("TRIGGERLAB_WORKERS");
      env != nullptr && *env) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

inline SweepOutcome cmd_sweep(const SweepConfig& sweep) {
  namespace fs = std::filesystem;
  if (sweep.ell_max_values.empty() || sweep.seeds.empty())
    throw std::invalid_argument("cmd_sweep: empty grid");
  const std::string out_dir = resolve_out_dir(sweep.base.out_dir);
  ensure_layout(out_dir);

  struct Cell {
    ExperimentConfig config;
    std::string key;
  };
  std::vector<Cell> cells;
  for (const int ell_max : sweep.ell_max_values) {
    for (const uint64_t seed : sweep.seeds) {
      ExperimentConfig config = sweep.base;
      config.out_dir = out_dir;
      config.distribution.kind = "uniform";
      config.distribution.ell_max = ell_max;
      config.eval.ell_max = ell_max;
      config.eval.ell_min = config.distribution.ell_min;
      config.train.seed = seed;
      config.eval.seed = seed;
      ordered_json cell_core;
      cell_core["kind"] = "sweep_cell";
      cell_core["config"] = config.core_json();
      cell_core["eval"] = config.eval.to_json();
      cells.push_back(Cell{config, fnv1a64_hex(cell_core.dump())});
    }
  }

  std::mutex failures_mutex;
  std::vector<std::string> failures;
  std::atomic<size_t> next{0};
  const auto run_cell = [&](const Cell& cell) {
    const std::string row_path =
        (fs::path(out_dir) / "metrics" / ("cell_" + cell.key + ".csv"))
            .string();
    const std::string err_path =
        (fs::path(out_dir) / "metrics" / ("cell_" + cell.key + ".error"))
            .string();
    if (fs::exists(row_path)) return;
    try {
      const EvalOutcome outcome = cmd_eval(cell.config);
      write_file_atomic(row_path, outcome.record.csv_row() + "\n");
      if (fs::exists(err_path)) fs::remove(err_path);
    } catch (const std::exception& e) {
      write_file_atomic(err_path, std::string(e.what()) + "\n");
      std::lock_guard<std::mutex> lock(failures_mutex);
      failures.push_back("cell " + cell.key + ": " + e.what());
    }
  };

  const int workers =
      std::min<int>(sweep_worker_count(), static_cast<int>(cells.size()));
  if (workers <= 1) {
    for (const Cell& cell : cells) run_cell(cell);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int i = 0; i < workers; ++i)
      pool.emplace_back([&]() {
        while (true) {
          const size_t idx = next.fetch_add(1);
          if (idx >= cells.size()) return;
          run_cell(cells[idx]);
        }
      });
    for (std::thread& t : pool) t.join();
  }

  SweepOutcome outcome;
  outcome.failures = failures;
  std::ostringstream csv;
  csv << MetricsRecord::csv_header() << '\n';
  for (const Cell& cell : cells) {
    const std::string row_path =
        (fs::path(out_dir) / "metrics" / ("cell_" + cell.key + ".csv"))
            .string();
    if (!fs::exists(row_path)) continue;
    const std::string row = read_file(row_path);
    csv << row;
    // parse the row back into a record for the in-memory result
    MetricsRecord rec;
    std::istringstream in(row);
    std::string field;
    std::getline(in, field, ',');
    rec.ell_min = std::stoi(field);
    std::getline(in, field, ',');
    rec.ell_max = std::stoi(field);
    std::getline(in, field, ',');
    rec.n_trg = std::stoi(field);
    std::getline(in, field, ',');
    rec.seed = std::stoull(field);
    std::getline(in, field, ',');
    rec.ood_accuracy = std::stod(field);
    std::getline(in, field, ',');
    rec.pseudo_rate = std::stod(field);
    std::getline(in, field, ',');
    rec.leftmost_rate = std::stod(field);
    std::getline(in, rec.dominant_mechanism);
    while (!rec.dominant_mechanism.empty() &&
           (rec.dominant_mechanism.back() == '\n' ||
            rec.dominant_mechanism.back() == '\r'))
      rec.dominant_mechanism.pop_back();
    outcome.records.push_back(rec);
  }
  outcome.csv_path =
      (fs::path(out_dir) / "metrics" / "sweep.csv").string();
  write_file_atomic(outcome.csv_path, csv.str());
  return outcome;
}

// --- Heatmap driver -------------------------------------------------------------------

// Extract a block of a checkpoint matrix and write it as a text grid
// (optionally also a PGM preview). `which` selects "wkq" or "wv".
inline std::string cmd_heatmap(const std::string& checkpoint_path,
                               const std::string& which,
                               const std::string& row_block,
                               const std::string& col_block,
                               const std::string& out_dir_arg, bool pgm) {
  namespace fs = std::filesystem;
  const ModelParams params = load_checkpoint(checkpoint_path);
  const std::string out_dir = resolve_out_dir(out_dir_arg);
  ensure_layout(out_dir);
  Mat block;
  if (which == "wkq") {
    block = extract_block(params.W_KQ, params.L, params.N,
                          heatmap_block_from_string(row_block),
                          heatmap_block_from_string(col_block));
  } else if (which == "wv") {
    // W_V rows are token ids; only the column axis has embedding blocks.
    const auto [c0, nc] = heatmap_block_range(
        heatmap_block_from_string(col_block), params.L, params.N);
    block = params.W_V.block(0, c0, params.N, nc);
  } else {
    throw std::invalid_argument("cmd_heatmap: which must be wkq or wv");
  }
  ordered_json core;
  core["kind"] = "heatmap";
  core["checkpoint_fnv"] = fnv1a64_hex(read_file(checkpoint_path));
  core["which"] = which;
  core["row_block"] = row_block;
  core["col_block"] = col_block;
  const std::string key = fnv1a64_hex(core.dump());
  const std::string path =
      (fs::path(out_dir) / "heatmaps" / ("hm_" + key + ".txt")).string();
  write_matrix_text(path, block);
  if (pgm)
    write_matrix_pgm(
        (fs::path(out_dir) / "heatmaps" / ("hm_" + key + ".pgm")).string(),
        block);
  return path;
}

}  // namespace triggerlab
