#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "triggerlab/experiment.hpp"

using namespace triggerlab;
namespace fs = std::filesystem;

namespace {

// Small, fast configuration shared by the driver tests.
ExperimentConfig small_config(const std::string& out_dir) {
  ExperimentConfig config;
  config.sampler = SamplerConfig{8, 2, 16};
  config.distribution.kind = "uniform";
  config.distribution.ell_min = 3;
  config.distribution.ell_max = 4;
  config.train.eta_v = 1000.0;
  config.train.eta_kq = 10000.0;
  config.train.m_v = 64;
  config.train.m_kq = 64;
  config.train.seed = 1;
  config.eval.n_samples = 128;
  config.eval.ell_min = 3;
  config.eval.ell_max = 5;
  config.eval.seed = 1;
  config.out_dir = out_dir;
  return config;
}

struct EnvGuard {
  std::string name;
  std::string old_value;
  bool had_value = false;
  EnvGuard(const std::string& n, const std::string& value) : name(n) {
    if (const char* old = std::getenv(n.c_str())) {
      had_value = true;
      old_value = old;
    }
    ::setenv(n.c_str(), value.c_str(), 1);
  }
  ~EnvGuard() {
    if (had_value)
      ::setenv(name.c_str(), old_value.c_str(), 1);
    else
      ::unsetenv(name.c_str());
  }
};

}  // namespace

TEST_CASE("experiment config json round trip", "[experiment]") {
  const auto config = small_config("somewhere");
  const ordered_json j = config.core_json();
  auto back = experiment_config_from_json(j);
  CHECK(back.core_json().dump() == j.dump());
  CHECK(back.sampler.N == 8);
  CHECK(back.sampler.L == 16);
  CHECK(back.train.m_v == 64);
  CHECK(back.distribution.ell_max == 4);

  // Missing optional sections fall back to defaults.
  ordered_json minimal;
  minimal["N"] = 16;
  minimal["N_trg"] = 2;
  minimal["distribution"] = {{"kind", "singleton"}, {"ell", 3}};
  const auto parsed = experiment_config_from_json(minimal);
  CHECK(parsed.sampler.L == 40);
  CHECK(parsed.train.m_v == 4096);
  CHECK(parsed.eval.n_samples == 1024);
  CHECK_NOTHROW(parsed.validate());

  ordered_json bad = minimal;
  bad["distribution"] = {{"kind", "mystery"}};
  CHECK_THROWS(experiment_config_from_json(bad));
}

TEST_CASE("explicit and optimal distribution specs", "[experiment]") {
  DistributionSpec spec;
  spec.kind = "optimal";
  spec.u_max = 4;
  const auto opt = spec.make(2);
  CHECK(opt.mass_at(1) == 1.0 / 3.0);
  CHECK(opt.mass_at(2) == 2.0 / 3.0);
  CHECK(opt.mass_at(3) == 0.0);

  spec.kind = "explicit";
  spec.support = {2, 5};
  spec.masses = {0.25, 0.75};
  const auto ex = spec.make(2);
  CHECK(ex.mass_at(5) == 0.75);
  const auto round = DistributionSpec::from_json(spec.to_json());
  CHECK(round.support == spec.support);
  CHECK(round.masses == spec.masses);
}

TEST_CASE("train key tracks the deterministic core", "[experiment]") {
  const auto a = small_config("x");
  auto b = small_config("completely-different-out-dir");
  CHECK(a.train_key() == b.train_key());  // out_dir is not part of the key
  b.train.seed = 2;
  CHECK(a.train_key() != b.train_key());
  auto c = small_config("x");
  c.distribution.ell_max = 5;
  CHECK(a.train_key() != c.train_key());
}

TEST_CASE("cmd_train writes a checkpoint once and reuses it", "[experiment]") {
  testutil::TempDir dir;
  const auto config = small_config(dir.str());
  const auto first = cmd_train(config);
  CHECK_FALSE(first.reused_existing);
  REQUIRE(fs::exists(first.checkpoint_path));
  REQUIRE(fs::exists(first.manifest_path));
  const std::string bytes = read_file(first.checkpoint_path);

  const auto second = cmd_train(config);
  CHECK(second.reused_existing);
  CHECK(second.checkpoint_path == first.checkpoint_path);
  CHECK(read_file(second.checkpoint_path) == bytes);

  // The checkpoint parses back to the exact parameters.
  const auto loaded = load_checkpoint(first.checkpoint_path);
  CHECK((loaded.W_V - first.params.W_V).norm() == 0.0);
  CHECK((loaded.W_KQ - first.params.W_KQ).norm() == 0.0);
  CHECK(loaded.N == 8);
  CHECK(loaded.L == 16);

  // The manifest is valid json carrying the config echo and content hash.
  const auto manifest = ordered_json::parse(read_file(first.manifest_path));
  CHECK(manifest.at("kind") == "train");
  CHECK(manifest.at("config").at("N") == 8);
  CHECK(manifest.at("checkpoint_fnv") == fnv1a64_hex(bytes));
  CHECK(manifest.contains("core_hash"));
  CHECK(manifest.contains("wall_time_ms"));
}

TEST_CASE("cmd_eval reruns are byte identical across directories",
          "[experiment]") {
  testutil::TempDir dir_a, dir_b;
  const auto out_a = cmd_eval(small_config(dir_a.str()));
  const auto out_b = cmd_eval(small_config(dir_b.str()));

  CHECK(read_file(out_a.metrics_path) == read_file(out_b.metrics_path));
  CHECK(out_a.record.csv_row() == out_b.record.csv_row());
  CHECK(out_a.in_dist_accuracy == out_b.in_dist_accuracy);

  // Same-directory rerun reuses the checkpoint and reproduces the metrics.
  const auto again = cmd_eval(small_config(dir_a.str()));
  CHECK(read_file(again.metrics_path) == read_file(out_a.metrics_path));

  // Metrics CSV has the pinned header and exactly one data row.
  std::istringstream csv(read_file(out_a.metrics_path));
  std::string header, row, extra;
  REQUIRE(std::getline(csv, header));
  REQUIRE(std::getline(csv, row));
  CHECK_FALSE(std::getline(csv, extra));
  CHECK(header == MetricsRecord::csv_header());
  CHECK(row == out_a.record.csv_row());
}

TEST_CASE("cmd_generate writes datasets under the requested law",
          "[experiment]") {
  testutil::TempDir dir;
  const auto config = small_config(dir.str());

  const auto train_path = cmd_generate(config, 40, "train");
  const auto train_ds = read_dataset(train_path);
  REQUIRE(train_ds.size() == 40);
  for (const auto& seq : train_ds) {
    CHECK(seq.ell1 == seq.ell2);
    CHECK(seq.ell1 >= 3);
    CHECK(seq.ell1 <= 4);
    CHECK_NOTHROW(seq.validate(config.sampler));
  }

  const auto ood_path = cmd_generate(config, 40, "ood");
  const auto ood_ds = read_dataset(ood_path);
  REQUIRE(ood_ds.size() == 40);
  for (const auto& seq : ood_ds) {
    CHECK(seq.ell1 != seq.ell2);
    const int mid = (seq.ell1 + seq.ell2) / 2;
    CHECK(mid >= 4);  // eval window {ell_min+1 .. ell_max} = {4, 5}
    CHECK(mid <= 5);
  }
  CHECK(train_path != ood_path);

  CHECK_THROWS(cmd_generate(config, 0, "train"));
  CHECK_THROWS(cmd_generate(config, 4, "bogus"));
}

TEST_CASE("cmd_oracle writes matrices, certification, and manifest",
          "[experiment]") {
  testutil::TempDir dir;
  auto config = small_config(dir.str());
  config.distribution.kind = "singleton";
  config.distribution.ell = 3;

  const auto outcome = cmd_oracle(config);
  const Mat wv = read_matrix_text(outcome.wv_path);
  CHECK(wv.rows() == 8);
  CHECK(wv.cols() == 32);
  CHECK((wv - outcome.population_wv_matrix).norm() == 0.0);
  const Mat wkq = read_matrix_text(outcome.wkq_path);
  CHECK(wkq.rows() == 32);
  CHECK(wkq.cols() == 32);

  CHECK_FALSE(outcome.certification.generalizes);  // singleton never certifies
  CHECK(outcome.diversity_ratio == 1.0);

  const auto manifest = ordered_json::parse(read_file(outcome.manifest_path));
  CHECK(manifest.at("kind") == "oracle");
  CHECK(manifest.at("generalizes") == false);
  REQUIRE(manifest.contains("witness"));
  CHECK(manifest.at("witness").contains("ell1"));
  CHECK(manifest.at("witness").contains("competitor_position"));
}

TEST_CASE("cmd_lp bundles solver, search, and certificate", "[experiment]") {
  const auto outcome = cmd_lp(2, 4, 60);
  CHECK(outcome.closed_form.objective == 3.0);
  CHECK(outcome.brute_force.objective >= outcome.closed_form.objective - 1e-9);
  CHECK(outcome.kkt.ok());
  CHECK(outcome.boundary_ratio == 0.5);
}

TEST_CASE("fit_log_slope recovers an exact power law", "[experiment]") {
  const std::vector<int> xs = {10, 100, 1000};
  const std::vector<double> ys = {1.0e-1, std::pow(10.0, -1.5), 1.0e-2};
  CHECK(fit_log_slope(xs, ys) == Catch::Approx(-0.5).epsilon(1e-12));
  CHECK_THROWS(fit_log_slope({10}, {0.1}));
}

TEST_CASE("cmd_concentration decays with sample size", "[experiment]") {
  testutil::TempDir dir;
  ConcentrationConfig config;  // criterion defaults: N=8, Unif{4,5}
  config.sample_sizes = {100, 1600};
  config.seeds = {1, 2, 3};
  const auto result = cmd_concentration(config, dir.str());
  REQUIRE(result.err_wv.size() == 2);
  REQUIRE(result.err_wkq.size() == 2);
  CHECK(result.err_wv[1] < result.err_wv[0]);
  CHECK(result.err_wkq[1] < result.err_wkq[0]);
  CHECK(result.slope_wv < -0.2);
  CHECK(result.slope_wkq < -0.2);
  REQUIRE(fs::exists(result.csv_path));
  const auto csv = read_file(result.csv_path);
  CHECK(csv.rfind("samples,err_wv,err_wkq\n", 0) == 0);
  CHECK(csv.find("slope,") != std::string::npos);
}

TEST_CASE("cmd_sweep assembles a deterministic grid", "[experiment]") {
  testutil::TempDir dir;
  SweepConfig sweep;
  sweep.base = small_config(dir.str());
  sweep.base.eval.n_samples = 64;
  sweep.ell_max_values = {4, 5};
  sweep.seeds = {1, 2};

  const auto outcome = cmd_sweep(sweep);
  CHECK(outcome.failures.empty());
  REQUIRE(outcome.records.size() == 4);
  // Grid order: ell_max major, seed minor.
  CHECK(outcome.records[0].ell_max == 4);
  CHECK(outcome.records[0].seed == 1);
  CHECK(outcome.records[1].ell_max == 4);
  CHECK(outcome.records[1].seed == 2);
  CHECK(outcome.records[2].ell_max == 5);
  CHECK(outcome.records[3].seed == 2);
  const std::string bytes = read_file(outcome.csv_path);

  // Rerun: identical bytes (cells are skipped, not recomputed).
  const auto again = cmd_sweep(sweep);
  CHECK(read_file(again.csv_path) == bytes);

  // Delete one fragment: the sweep resumes just that cell and reproduces the
  // same csv.
  int removed = 0;
  for (const auto& entry : fs::directory_iterator(dir.path / "metrics")) {
    const auto name = entry.path().filename().string();
    if (removed == 0 && name.rfind("cell_", 0) == 0 &&
        name.find(".csv") != std::string::npos) {
      fs::remove(entry.path());
      ++removed;
    }
  }
  REQUIRE(removed == 1);
  const auto resumed = cmd_sweep(sweep);
  CHECK(read_file(resumed.csv_path) == bytes);

  // A parallel run in a fresh directory produces the same bytes.
  testutil::TempDir dir2;
  EnvGuard workers("TRIGGERLAB_WORKERS", "3");
  SweepConfig parallel = sweep;
  parallel.base.out_dir = dir2.str();
  const auto par = cmd_sweep(parallel);
  CHECK(par.failures.empty());
  CHECK(read_file(par.csv_path) == bytes);
}

TEST_CASE("out dir resolution order", "[experiment]") {
  CHECK(resolve_out_dir("explicit") == "explicit");
  {
    EnvGuard env("TRIGGERLAB_OUT", "from-env");
    CHECK(resolve_out_dir("") == "from-env");
    CHECK(resolve_out_dir("explicit") == "explicit");
  }
  ::unsetenv("TRIGGERLAB_OUT");
  CHECK(resolve_out_dir("") == "out");
}

TEST_CASE("cmd_heatmap extracts checkpoint blocks", "[experiment]") {
  testutil::TempDir dir;
  const auto config = small_config(dir.str());
  const auto trained = cmd_train(config);

  const auto pos_path = cmd_heatmap(trained.checkpoint_path, "wkq", "position",
                                    "position", dir.str(), false);
  const Mat pos = read_matrix_text(pos_path);
  CHECK(pos.rows() == 16);
  CHECK(pos.cols() == 16);
  CHECK((pos - trained.params.W_KQ.block(0, 0, 16, 16)).norm() == 0.0);

  const auto tok_path = cmd_heatmap(trained.checkpoint_path, "wv", "full",
                                    "token", dir.str(), true);
  const Mat tok = read_matrix_text(tok_path);
  CHECK(tok.rows() == 8);
  CHECK(tok.cols() == 8);
  const std::string pgm_path =
      tok_path.substr(0, tok_path.size() - 4) + ".pgm";
  CHECK(fs::exists(pgm_path));

  CHECK_THROWS(cmd_heatmap(trained.checkpoint_path, "nope", "full", "full",
                           dir.str(), false));
}
