#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "multivae/evalharness.hpp"
#include "test_helpers.hpp"

using namespace multivae;
using namespace test_helpers;
namespace fs = std::filesystem;

namespace {

scene::DatasetConfig cell(std::vector<scene::Task> tasks, int distractors,
                          scene::Variability var) {
  scene::DatasetConfig c;
  c.name = "evalcell";
  c.tasks = std::move(tasks);
  c.n_distractors = distractors;
  c.variability = var;
  return c;
}

eval::Policy oracle_policy(std::uint64_t seed) {
  auto counter = std::make_shared<std::uint64_t>(0);
  return [seed, counter](const scene::SceneSpec& s, const ImageTensor&, const TokenSequence&,
                         Index) {
    Rng rng = derive_rng(seed, "oracle", (*counter)++);
    return scene::synthesize_trajectory(s, rng);
  };
}

eval::Policy zero_policy() {
  return [](const scene::SceneSpec&, const ImageTensor&, const TokenSequence&, Index length) {
    Trajectory t;
    t.steps = Tensor({length, 4});
    t.mask.assign(static_cast<std::size_t>(length), true);
    return t;
  };
}

}  // namespace

TEST_CASE("scripted oracle scores a perfect accuracy") {
  auto config = cell({scene::Task::reach, scene::Task::lift}, 0, scene::Variability::var2);
  eval::EvalResult r = eval::evaluate_success(oracle_policy(5), config, 40, 77);
  CHECK(r.accuracy == doctest::Approx(1.0));
  CHECK(r.trials.size() == 40);
}

TEST_CASE("constant-zero policy fails every move trial") {
  auto config = cell({scene::Task::move_left}, 0, scene::Variability::var2);
  eval::EvalResult r = eval::evaluate_success(zero_policy(), config, 25, 78);
  CHECK(r.accuracy == doctest::Approx(0.0));
}

TEST_CASE("evaluation is reproducible for a fixed seed") {
  auto config = cell({scene::Task::reach}, 0, scene::Variability::var2);
  eval::EvalResult a = eval::evaluate_success(oracle_policy(9), config, 15, 123);
  eval::EvalResult b = eval::evaluate_success(oracle_policy(9), config, 15, 123);
  CHECK(a.accuracy == b.accuracy);
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    CHECK(a.trials[i].min_distance_m == b.trials[i].min_distance_m);
    CHECK(a.trials[i].success == b.trials[i].success);
  }
}

TEST_CASE("threshold curve is monotone and pins the native threshold") {
  auto config = cell({scene::Task::reach}, 0, scene::Variability::var2);
  // blend a perfect oracle with a zero policy for a nontrivial distance spread
  auto counter = std::make_shared<std::uint64_t>(0);
  eval::Policy mixed = [&, counter](const scene::SceneSpec& s, const ImageTensor& img,
                                    const TokenSequence& tok, Index len) {
    const std::uint64_t i = (*counter)++;
    if (i % 3 == 0) return zero_policy()(s, img, tok, len);
    return oracle_policy(11)(s, img, tok, len);
  };
  eval::EvalResult r = eval::evaluate_success(mixed, config, 30, 91);
  std::vector<double> ts = {0.001, 0.01, 0.03, 0.06, 0.12, 0.30, 10.0};
  auto curve = eval::threshold_curve(r, ts);
  REQUIRE(curve.size() == ts.size());
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].second >= curve[i - 1].second);
  CHECK(curve.back().second == doctest::Approx(1.0));  // all min distances are finite
  CHECK(curve.front().second == doctest::Approx(0.0));
  for (const auto& [t, acc] : curve)
    if (t == 0.06) CHECK(acc == doctest::Approx(r.accuracy));

  CHECK_THROWS_AS(eval::threshold_curve(r, {}), ConfigError);
  CHECK_THROWS_AS(eval::threshold_curve(r, {0.1, 0.05}), ConfigError);
}

TEST_CASE("inference operations are deterministic with contract shapes") {
  model::ModelConfig cfg = tiny_config();
  model::MultimodalVAE m(cfg, 41);
  Rng rng(1);
  ImageTensor img{random_image(rng, 8)};
  TokenSequence instr{{0, 5, 6, default_vocabulary().pad_id()}};

  Trajectory t1 = eval::infer_trajectory(m, img, instr, 9);
  Trajectory t2 = eval::infer_trajectory(m, img, instr, 9);
  CHECK(t1.steps.shape() == std::vector<Index>{9, 4});
  for (Index i = 0; i < t1.steps.numel(); ++i) CHECK(t1.steps[i] == t2.steps[i]);
  for (Index r = 0; r < 9; ++r) {
    CHECK(t1.steps[r * 4 + 3] >= 0.0);
    CHECK(t1.steps[r * 4 + 3] <= 1.0);
  }
  CHECK_THROWS_AS(eval::infer_trajectory(m, img, instr, 0), ConfigError);

  Trajectory traj = random_trajectory(rng, 6);
  TokenSequence c1 = eval::infer_caption(m, img, traj);
  TokenSequence c2 = eval::infer_caption(m, img, traj);
  CHECK(c1.tokens.size() == static_cast<std::size_t>(cfg.codec.l_max));
  CHECK(c1.tokens == c2.tokens);

  // the alternative deterministic fusion rule is also deterministic
  eval::InferenceOptions alt;
  alt.component_mean = true;
  Trajectory t3 = eval::infer_trajectory(m, img, instr, 9, alt);
  Trajectory t4 = eval::infer_trajectory(m, img, instr, 9, alt);
  for (Index i = 0; i < t3.steps.numel(); ++i) CHECK(t3.steps[i] == t4.steps[i]);
}

TEST_CASE("grid report: rows, improvement column, idempotence, bad files") {
  const fs::path base = fs::temp_directory_path() / "mvtest_report";
  fs::remove_all(base);
  fs::create_directories(base);

  auto write_run = [&](const std::string& dirname, const std::string& model,
                       const std::string& recon, const std::string& cellname, double acc) {
    const fs::path dir = base / dirname;
    fs::create_directories(dir);
    eval::RunRecord r;
    r.model = model;
    r.recon = recon;
    r.cell = cellname;
    r.accuracy = acc;
    r.n_trials = 100;
    r.seed = 5;
    std::ofstream(dir / "summary.json") << r.to_json();
    std::ofstream(dir / "curve.csv") << "threshold,accuracy\n0.03,0.5\n0.06," << acc << "\n";
    return dir / "summary.json";
  };

  std::vector<fs::path> runs;
  runs.push_back(write_run("r1", "mvae", "mse", "c1", 0.60));
  runs.push_back(write_run("r2", "mvae", "sigma_vae", "c1", 0.90));
  runs.push_back(write_run("r3", "mvae", "mse", "c2", 0.50));
  runs.push_back(write_run("r4", "mvae", "sigma_vae", "c2", 0.55));
  runs.push_back(write_run("r5", "mopoe", "sigma_vae", "c1", 0.40));
  runs.push_back(write_run("r6", "mmvae", "mse", "c1", 0.30));

  const fs::path out = base / "out";
  eval::GridReportPaths paths = eval::grid_report(runs, out);
  std::ifstream csv(paths.report_csv);
  std::string line;
  std::getline(csv, line);
  CHECK(line == "model,cell,recon,accuracy,n,seed,improvement");
  std::vector<std::string> data_rows;
  while (std::getline(csv, line))
    if (!line.empty()) data_rows.push_back(line);
  CHECK(data_rows.size() == 6);
  double improvement_sum = 0;
  int improvements = 0;
  for (const auto& row : data_rows) {
    const auto last_comma = row.rfind(',');
    const std::string imp = row.substr(last_comma + 1);
    if (!imp.empty()) {
      improvement_sum += std::stod(imp);
      ++improvements;
    }
  }
  CHECK(improvements == 2);  // the two (model, cell) pairs with both recon kinds
  CHECK(improvement_sum == doctest::Approx(0.30 + 0.05));

  // idempotent rerun
  std::ifstream again(paths.report_csv);
  std::string before((std::istreambuf_iterator<char>(again)), std::istreambuf_iterator<char>());
  eval::grid_report(runs, out);
  std::ifstream after_f(paths.report_csv);
  std::string after((std::istreambuf_iterator<char>(after_f)), std::istreambuf_iterator<char>());
  CHECK(before == after);

  // plot data aggregates the curve files
  std::ifstream plot(paths.plot_data_csv);
  std::getline(plot, line);
  CHECK(line == "model,cell,recon,threshold,accuracy");
  int plot_rows = 0;
  while (std::getline(plot, line))
    if (!line.empty()) ++plot_rows;
  CHECK(plot_rows == 12);

  // malformed run files are skipped with a warning
  const fs::path bad = base / "bad.json";
  std::ofstream(bad) << "{not json";
  runs.push_back(bad);
  std::vector<std::string> warnings;
  eval::grid_report(runs, out, &warnings);
  CHECK(warnings.size() == 1);

  // zero valid runs is an error
  CHECK_THROWS_AS(eval::grid_report({bad}, out), ConfigError);
  fs::remove_all(base);
}

TEST_CASE("run record json round trip") {
  eval::RunRecord r;
  r.model = "mvae";
  r.recon = "sigma_vae";
  r.cell = "a_1fixed_reach";
  r.accuracy = 0.93;
  r.n_trials = 100;
  r.seed = 12;
  eval::RunRecord back = eval::RunRecord::from_json(r.to_json());
  CHECK(back.model == r.model);
  CHECK(back.recon == r.recon);
  CHECK(back.cell == r.cell);
  CHECK(back.accuracy == doctest::Approx(r.accuracy));
  CHECK(back.n_trials == r.n_trials);
  CHECK(back.seed == r.seed);
}

TEST_CASE("scripted median lengths order by stage count") {
  auto config = cell({scene::Task::reach}, 0, scene::Variability::var2);
  const Index reach = eval::scripted_median_length(config, scene::Task::reach, 3);
  const Index lift = eval::scripted_median_length(config, scene::Task::lift, 3);
  CHECK(reach >= 10);
  CHECK(reach <= 25);
  CHECK(lift > reach);
}
