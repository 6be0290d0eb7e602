// triggerlab CLI: generate | train | eval | sweep | oracle | concentration |
// lp | heatmap. Flags mirror the ExperimentConfig fields; a JSON config file
// provides the base and flags override it. Environment variables:
// TRIGGERLAB_OUT (output root when --out is absent) and TRIGGERLAB_WORKERS
// (sweep worker count).

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "triggerlab/experiment.hpp"

namespace {

using triggerlab::ExperimentConfig;

struct ConfigFlags {
  std::string config_path;
  int N = 0, N_trg = 0, L = 0;
  std::string dist_kind;
  int ell_min = 0, ell_max = 0, ell = 0, u_max = 0;
  double eta_v = 0.0, eta_kq = 0.0;
  int m_v = 0, m_kq = 0;
  std::uint64_t seed = 0, eval_seed = 0;
  bool reuse_samples = false;
  int eval_samples = 0, eval_ell_min = 0, eval_ell_max = 0;
  std::string out_dir;

  CLI::Option *o_config = nullptr, *o_N = nullptr, *o_N_trg = nullptr,
              *o_L = nullptr, *o_dist = nullptr, *o_ell_min = nullptr,
              *o_ell_max = nullptr, *o_ell = nullptr, *o_u_max = nullptr,
              *o_eta_v = nullptr, *o_eta_kq = nullptr, *o_m_v = nullptr,
              *o_m_kq = nullptr, *o_seed = nullptr, *o_reuse = nullptr,
              *o_eval_samples = nullptr, *o_eval_ell_min = nullptr,
              *o_eval_ell_max = nullptr, *o_eval_seed = nullptr,
              *o_out = nullptr;
};

std::shared_ptr<ConfigFlags> add_config_flags(CLI::App* cmd) {
  auto f = std::make_shared<ConfigFlags>();
  f->o_config = cmd->add_option("--config", f->config_path,
                                "JSON configuration file (flags override)");
  f->o_N = cmd->add_option("--N", f->N, "vocabulary size");
  f->o_N_trg = cmd->add_option("--N-trg", f->N_trg, "number of trigger tokens");
  f->o_L = cmd->add_option("--L", f->L, "maximum context length");
  f->o_dist = cmd->add_option(
      "--dist", f->dist_kind, "length distribution: uniform|singleton|optimal");
  f->o_ell_min = cmd->add_option("--ell-min", f->ell_min,
                                 "uniform window lower end");
  f->o_ell_max = cmd->add_option("--ell-max", f->ell_max,
                                 "uniform window upper end");
  f->o_ell = cmd->add_option("--ell", f->ell, "singleton length");
  f->o_u_max = cmd->add_option("--u-max", f->u_max,
                               "optimal-distribution support horizon");
  f->o_eta_v = cmd->add_option("--eta-v", f->eta_v, "stage-1 learning rate");
  f->o_eta_kq = cmd->add_option("--eta-kq", f->eta_kq, "stage-2 learning rate");
  f->o_m_v = cmd->add_option("--m-v", f->m_v, "stage-1 sample count");
  f->o_m_kq = cmd->add_option("--m-kq", f->m_kq, "stage-2 sample count");
  f->o_seed = cmd->add_option("--seed", f->seed, "training root seed");
  f->o_reuse = cmd->add_flag("--reuse-samples", f->reuse_samples,
                             "stage 2 replays the stage-1 sample stream");
  f->o_eval_samples =
      cmd->add_option("--eval-samples", f->eval_samples, "evaluation samples");
  f->o_eval_ell_min = cmd->add_option("--eval-ell-min", f->eval_ell_min,
                                      "evaluation window lower end");
  f->o_eval_ell_max = cmd->add_option("--eval-ell-max", f->eval_ell_max,
                                      "evaluation window upper end");
  f->o_eval_seed =
      cmd->add_option("--eval-seed", f->eval_seed, "evaluation seed");
  f->o_out = cmd->add_option("--out", f->out_dir,
                             "output root (else $TRIGGERLAB_OUT, else ./out)");
  return f;
}

ExperimentConfig resolve_config(const ConfigFlags& f) {
  ExperimentConfig cfg;
  if (f.o_config->count()) cfg = triggerlab::load_experiment_config(f.config_path);
  if (f.o_N->count()) cfg.sampler.N = f.N;
  if (f.o_N_trg->count()) cfg.sampler.N_trg = f.N_trg;
  if (f.o_L->count()) cfg.sampler.L = f.L;
  if (f.o_dist->count()) cfg.distribution.kind = f.dist_kind;
  if (f.o_ell_min->count()) {
    cfg.distribution.ell_min = f.ell_min;
    cfg.eval.ell_min = f.ell_min;
  }
  if (f.o_ell_max->count()) {
    cfg.distribution.ell_max = f.ell_max;
    cfg.eval.ell_max = f.ell_max;
  }
  if (f.o_ell->count()) cfg.distribution.ell = f.ell;
  if (f.o_u_max->count()) cfg.distribution.u_max = f.u_max;
  if (f.o_eta_v->count()) cfg.train.eta_v = f.eta_v;
  if (f.o_eta_kq->count()) cfg.train.eta_kq = f.eta_kq;
  if (f.o_m_v->count()) cfg.train.m_v = f.m_v;
  if (f.o_m_kq->count()) cfg.train.m_kq = f.m_kq;
  if (f.o_seed->count()) {
    cfg.train.seed = f.seed;
    if (!f.o_eval_seed->count()) cfg.eval.seed = f.seed;
  }
  if (f.o_reuse->count()) cfg.train.reuse_samples = f.reuse_samples;
  if (f.o_eval_samples->count()) cfg.eval.n_samples = f.eval_samples;
  if (f.o_eval_ell_min->count()) cfg.eval.ell_min = f.eval_ell_min;
  if (f.o_eval_ell_max->count()) cfg.eval.ell_max = f.eval_ell_max;
  if (f.o_eval_seed->count()) cfg.eval.seed = f.eval_seed;
  if (f.o_out->count()) cfg.out_dir = f.out_dir;
  return cfg;
}

void print_scaling_warnings(const ExperimentConfig& cfg) {
  const auto warnings =
      cfg.sampler.scaling_warnings(cfg.make_distribution());
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "triggerlab: one-step trained single-layer attention laboratory for "
      "the trigger-output copying task"};
  app.require_subcommand(1);
  int exit_code = 0;

  // --- generate ---
  auto* c_generate =
      app.add_subcommand("generate", "Sample a dataset to JSONL");
  auto f_generate = add_config_flags(c_generate);
  auto gen_count = std::make_shared<int>(1024);
  auto gen_law = std::make_shared<std::string>("train");
  c_generate->add_option("--count", *gen_count, "number of sequences");
  c_generate->add_option("--law", *gen_law, "train|ood");
  c_generate->callback([f_generate, gen_count, gen_law]() {
    const ExperimentConfig cfg = resolve_config(*f_generate);
    const std::string path = triggerlab::cmd_generate(cfg, *gen_count, *gen_law);
    std::cout << "dataset: " << path << "\n";
  });

  // --- train ---
  auto* c_train = app.add_subcommand(
      "train", "Run the two-stage one-step training and save a checkpoint");
  auto f_train = add_config_flags(c_train);
  c_train->callback([f_train]() {
    const ExperimentConfig cfg = resolve_config(*f_train);
    print_scaling_warnings(cfg);
    const triggerlab::TrainOutcome outcome = triggerlab::cmd_train(cfg);
    std::cout << "checkpoint: " << outcome.checkpoint_path
              << (outcome.reused_existing ? " (reused existing)" : "") << "\n";
    if (!outcome.reused_existing)
      std::cout << "manifest: " << outcome.manifest_path << "\n";
  });

  // --- eval ---
  auto* c_eval = app.add_subcommand(
      "eval", "Train (or reuse) a checkpoint and evaluate it");
  auto f_eval = add_config_flags(c_eval);
  c_eval->callback([f_eval]() {
    const ExperimentConfig cfg = resolve_config(*f_eval);
    print_scaling_warnings(cfg);
    const triggerlab::EvalOutcome outcome = triggerlab::cmd_eval(cfg);
    std::cout << "in_dist_accuracy: "
              << triggerlab::format_double(outcome.in_dist_accuracy) << "\n";
    std::cout << triggerlab::MetricsRecord::csv_header() << "\n"
              << outcome.record.csv_row() << "\n";
    std::cout << "metrics: " << outcome.metrics_path << "\n";
    std::cout << "manifest: " << outcome.manifest_path << "\n";
  });

  // --- sweep ---
  auto* c_sweep = app.add_subcommand(
      "sweep", "Grid over window upper ends and seeds (idempotent per cell)");
  auto f_sweep = add_config_flags(c_sweep);
  auto sweep_ell_max = std::make_shared<std::vector<int>>();
  auto sweep_seeds = std::make_shared<std::vector<std::uint64_t>>();
  c_sweep
      ->add_option("--ell-max-values", *sweep_ell_max,
                   "window upper ends to sweep")
      ->required();
  c_sweep->add_option("--seeds", *sweep_seeds, "training seeds to sweep")
      ->required();
  c_sweep->callback([f_sweep, sweep_ell_max, sweep_seeds, &exit_code]() {
    triggerlab::SweepConfig sweep;
    sweep.base = resolve_config(*f_sweep);
    sweep.ell_max_values = *sweep_ell_max;
    sweep.seeds = *sweep_seeds;
    const triggerlab::SweepOutcome outcome = triggerlab::cmd_sweep(sweep);
    std::cout << triggerlab::MetricsRecord::csv_header() << "\n";
    for (const triggerlab::MetricsRecord& rec : outcome.records)
      std::cout << rec.csv_row() << "\n";
    std::cout << "table: " << outcome.csv_path << "\n";
    for (const std::string& failure : outcome.failures)
      std::cerr << "failed: " << failure << "\n";
    if (!outcome.failures.empty()) exit_code = 2;
  });

  // --- oracle ---
  auto* c_oracle = app.add_subcommand(
      "oracle",
      "Emit population-limit weights and certify out-of-distribution "
      "behavior");
  auto f_oracle = add_config_flags(c_oracle);
  c_oracle->callback([f_oracle]() {
    const ExperimentConfig cfg = resolve_config(*f_oracle);
    const triggerlab::OracleOutcome outcome = triggerlab::cmd_oracle(cfg);
    std::cout << "population_wv: " << outcome.wv_path << "\n";
    std::cout << "population_wkq: " << outcome.wkq_path << " (excluded bound "
              << triggerlab::format_double(
                     outcome.population_wkq_dominant.excluded_bound)
              << ")\n";
    std::cout << "max_sum_ratio: "
              << triggerlab::format_double(outcome.diversity_ratio) << "\n";
    std::cout << "generalizes: "
              << (outcome.certification.generalizes ? "true" : "false")
              << " (margin "
              << triggerlab::format_double(outcome.certification.margin)
              << ")\n";
    if (outcome.certification.witness.has_value()) {
      const triggerlab::TokenSequence& w = *outcome.certification.witness;
      std::cout << "witness: ell1=" << w.ell1 << " ell2=" << w.ell2
                << " competitor_position="
                << outcome.certification.witness_position << "\n";
    }
    std::cout << "manifest: " << outcome.manifest_path << "\n";
  });

  // --- concentration ---
  auto* c_conc = app.add_subcommand(
      "concentration",
      "Measure empirical-vs-population error decay across sample sizes");
  auto conc = std::make_shared<triggerlab::ConcentrationConfig>();
  auto conc_out = std::make_shared<std::string>();
  c_conc->add_option("--N", conc->sampler.N, "vocabulary size");
  c_conc->add_option("--N-trg", conc->sampler.N_trg, "trigger tokens");
  c_conc->add_option("--L", conc->sampler.L, "maximum context length");
  c_conc->add_option("--ell-min", conc->distribution.ell_min,
                     "uniform window lower end");
  c_conc->add_option("--ell-max", conc->distribution.ell_max,
                     "uniform window upper end");
  c_conc->add_option("--eta-v", conc->eta_v, "stage-1 learning rate");
  c_conc->add_option("--eta-kq", conc->eta_kq, "stage-2 learning rate");
  c_conc->add_option("--sizes", conc->sample_sizes, "per-stage sample counts");
  c_conc->add_option("--seeds", conc->seeds, "seeds to average over");
  c_conc->add_option("--out", *conc_out, "output root");
  c_conc->callback([conc, conc_out]() {
    const triggerlab::ConcentrationResult result =
        triggerlab::cmd_concentration(*conc, *conc_out);
    std::cout << "samples,err_wv,err_wkq\n";
    for (size_t i = 0; i < result.sample_sizes.size(); ++i)
      std::cout << result.sample_sizes[i] << ','
                << triggerlab::format_double(result.err_wv[i]) << ','
                << triggerlab::format_double(result.err_wkq[i]) << "\n";
    std::cout << "slope_wv: " << triggerlab::format_double(result.slope_wv)
              << "\n";
    std::cout << "slope_wkq: " << triggerlab::format_double(result.slope_wkq)
              << "\n";
    std::cout << "table: " << result.csv_path << "\n";
  });

  // --- lp ---
  auto* c_lp = app.add_subcommand(
      "lp", "Compute-optimal length distribution: closed form vs brute force");
  auto lp_n_trg = std::make_shared<int>(2);
  auto lp_u_max = std::make_shared<int>(4);
  auto lp_resolution = std::make_shared<int>(60);
  c_lp->add_option("--n-trg", *lp_n_trg, "diversity budget 1/n_trg")
      ->required();
  c_lp->add_option("--u-max", *lp_u_max, "support horizon U")->required();
  c_lp->add_option("--resolution", *lp_resolution, "simplex grid resolution");
  c_lp->callback([lp_n_trg, lp_u_max, lp_resolution]() {
    const triggerlab::LpOutcome outcome =
        triggerlab::cmd_lp(*lp_n_trg, *lp_u_max, *lp_resolution);
    const auto print_solution = [](const char* name,
                                   const triggerlab::LpSolution& sol) {
      std::cout << name << ": objective "
                << triggerlab::format_double(sol.objective) << ", masses (";
      for (size_t i = 0; i < sol.masses.size(); ++i) {
        if (i > 0) std::cout << ", ";
        std::cout << triggerlab::format_double(sol.masses[i]);
      }
      std::cout << ")\n";
    };
    print_solution("closed_form", outcome.closed_form);
    print_solution("brute_force", outcome.brute_force);
    std::cout << "kkt: " << (outcome.kkt.ok() ? "accepted" : "REJECTED")
              << "\n";
    std::cout << "boundary max_sum_ratio: "
              << triggerlab::format_double(outcome.boundary_ratio) << "\n";
  });

  // --- heatmap ---
  auto* c_heatmap = app.add_subcommand(
      "heatmap", "Export a checkpoint weight block as a text grid (and PGM)");
  auto hm_checkpoint = std::make_shared<std::string>();
  auto hm_which = std::make_shared<std::string>("wkq");
  auto hm_row = std::make_shared<std::string>("full");
  auto hm_col = std::make_shared<std::string>("full");
  auto hm_out = std::make_shared<std::string>();
  auto hm_pgm = std::make_shared<bool>(false);
  c_heatmap->add_option("--checkpoint", *hm_checkpoint, "checkpoint file")
      ->required();
  c_heatmap->add_option("--which", *hm_which, "wkq|wv");
  c_heatmap->add_option("--row-block", *hm_row,
                        "full|position|token|prev (wkq only)");
  c_heatmap->add_option("--col-block", *hm_col, "full|position|token|prev");
  c_heatmap->add_option("--out", *hm_out, "output root");
  c_heatmap->add_flag("--pgm", *hm_pgm, "also write an 8-bit PGM preview");
  c_heatmap->callback([hm_checkpoint, hm_which, hm_row, hm_col, hm_out,
                       hm_pgm]() {
    const std::string path = triggerlab::cmd_heatmap(
        *hm_checkpoint, *hm_which, *hm_row, *hm_col, *hm_out, *hm_pgm);
    std::cout << "heatmap: " << path << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
