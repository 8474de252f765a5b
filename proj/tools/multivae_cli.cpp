#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "multivae/data_io.hpp"
#include "multivae/evalharness.hpp"
#include "multivae/trainer.hpp"

namespace fs = std::filesystem;
using namespace multivae;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Wildcard match supporting '*' (any run, including separators) and '?'.
bool wildcard_match(const std::string& pattern, const std::string& text) {
  std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  const fs::path pat(pattern);
  fs::path root = pat;
  while (root.string().find('*') != std::string::npos ||
         root.string().find('?') != std::string::npos)
    root = root.parent_path();
  if (root.empty()) root = ".";
  std::vector<fs::path> out;
  if (!fs::exists(root)) return out;
  if (fs::is_regular_file(root) && pattern == root.string()) {
    out.push_back(root);
    return out;
  }
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    if (wildcard_match(pattern, entry.path().string())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int run_gen_data(const std::string& config_path, Index n, std::uint64_t seed,
                 const std::string& out_dir) {
  scene::DatasetConfig config = scene::DatasetConfig::from_file(config_path);
  data::generate_dataset(config, n, seed, out_dir);
  std::cout << (fs::path(out_dir) / "manifest.json").string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string model = "mvae";
  std::string recon = "sigma";
  std::string data_dir;
  Index epochs = 200;
  std::uint64_t seed = 0;
  std::string out_dir;
  Index batch_size = 32;
  double step_size = 1e-3;
  Index d_z = 12;
  double beta = 1.0;
  Index iwae_k = 5;
  std::string resume;
};

int run_train(const TrainArgs& a) {
  data::Dataset ds = data::load_dataset(a.data_dir);

  std::unique_ptr<model::MultimodalVAE> m;
  trainer::AdamOptimizer adam(a.step_size);
  trainer::TrainOptions opt;
  opt.epochs = a.epochs;
  opt.batch_size = a.batch_size;
  opt.step_size = a.step_size;
  opt.seed = a.seed;
  opt.out_dir = a.out_dir;

  if (!a.resume.empty()) {
    trainer::LoadedCheckpoint lc = trainer::load_checkpoint(a.resume);
    m = std::move(lc.model);
    adam.set_step_count(lc.adam_steps);
    opt.start_epoch = lc.epoch;
    opt.seed = lc.seed;
  } else {
    model::ModelConfig cfg;
    cfg.model_kind = model::model_kind_from_string(a.model);
    const model::ReconKind rk = model::recon_kind_from_string(a.recon);
    cfg.recon_image = rk;
    cfg.recon_traj = rk;
    cfg.beta = a.beta;
    cfg.iwae_k = static_cast<int>(a.iwae_k);
    cfg.codec.d_z = a.d_z;
    cfg.codec.t_max = ds.manifest.t_max;
    cfg.codec.l_max = ds.manifest.l_max;
    cfg.vocabulary = ds.manifest.vocabulary;
    cfg.validate();
    m = std::make_unique<model::MultimodalVAE>(cfg, derive_seed(a.seed, "model-init"));
  }

  trainer::TrainResult result = trainer::train(*m, adam, ds, opt);
  const trainer::EpochStats& last = result.history.back();
  std::cout << "final epoch " << last.epoch << ": total " << last.total << " recon_image "
            << last.recon_image << " recon_traj " << last.recon_traj << " recon_text "
            << last.recon_text << " kl " << last.kl << "\n";
  std::cout << result.checkpoint_path.string() << "\n";
  return kExitOk;
}

int run_eval(const std::string& ckpt, const std::string& config_path, Index trials,
             std::uint64_t seed, const std::vector<double>& curve, const std::string& out_dir) {
  if (!curve.empty())
    for (std::size_t i = 1; i < curve.size(); ++i)
      if (curve[i] <= curve[i - 1])
        throw ConfigError("eval: --curve thresholds must be sorted ascending");

  trainer::LoadedCheckpoint lc = trainer::load_checkpoint(ckpt);
  scene::DatasetConfig config = scene::DatasetConfig::from_file(config_path);
  eval::EvalResult result =
      eval::evaluate_success(eval::model_policy(*lc.model), config, trials, seed);

  fs::create_directories(out_dir);
  {
    std::ofstream diag(fs::path(out_dir) / "diagnostics.jsonl", std::ios::trunc);
    for (const auto& t : result.trials) diag << t.to_json_line() << "\n";
  }
  eval::RunRecord rec;
  rec.model = model::to_string(lc.config.model_kind);
  rec.recon = model::to_string(lc.config.recon_image);
  rec.cell = config.name;
  rec.accuracy = result.accuracy;
  rec.n_trials = trials;
  rec.seed = seed;
  {
    std::ofstream summary(fs::path(out_dir) / "summary.json", std::ios::trunc);
    summary << rec.to_json() << "\n";
  }
  if (!curve.empty()) {
    auto pts = eval::threshold_curve(result, curve);
    std::ofstream cf(fs::path(out_dir) / "curve.csv", std::ios::trunc);
    cf << "threshold,accuracy\n";
    for (const auto& [t, acc] : pts) cf << t << "," << acc << "\n";
  }
  std::cout << "accuracy " << result.accuracy << " over " << trials << " trials\n";
  return kExitOk;
}

int run_report(const std::string& runs_glob, const std::string& out_dir) {
  std::vector<fs::path> files = expand_glob(runs_glob);
  if (files.empty()) throw GenerationError("report: no run files match " + runs_glob);
  std::vector<std::string> warnings;
  eval::GridReportPaths paths = eval::grid_report(files, out_dir, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::cout << paths.report_csv.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal VAE lab: synthetic tabletop data, training, evaluation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset cell");
  std::string gen_config, gen_out;
  Index gen_n = 500;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "dataset config JSON file")->required();
  gen->add_option("--n", gen_n, "number of samples")->capture_default_str();
  gen->add_option("--seed", gen_seed, "generation seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
  TrainArgs ta;
  tr->add_option("--model", ta.model, "model kind: mvae, mmvae or mopoe")
      ->check(CLI::IsMember({"mvae", "mmvae", "mopoe"}))
      ->capture_default_str();
  tr->add_option("--recon", ta.recon, "reconstruction loss: mse or sigma")
      ->check(CLI::IsMember({"mse", "sigma"}))
      ->capture_default_str();
  tr->add_option("--data", ta.data_dir, "dataset directory")->required();
  tr->add_option("--epochs", ta.epochs, "training epochs")->capture_default_str();
  tr->add_option("--seed", ta.seed, "training seed")->capture_default_str();
  tr->add_option("--out", ta.out_dir, "run output directory")->required();
  tr->add_option("--batch", ta.batch_size, "batch size")->capture_default_str();
  tr->add_option("--step-size", ta.step_size, "optimizer step size")->capture_default_str();
  tr->add_option("--dz", ta.d_z, "latent dimensionality")->capture_default_str();
  tr->add_option("--beta", ta.beta, "KL weight")->capture_default_str();
  tr->add_option("--k", ta.iwae_k, "IWAE importance samples (mmvae)")->capture_default_str();
  tr->add_option("--resume", ta.resume, "resume from a checkpoint file");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on fresh test scenes");
  std::string ev_ckpt, ev_config, ev_out;
  Index ev_trials = 100;
  std::uint64_t ev_seed = 1000;
  std::vector<double> ev_curve;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--config", ev_config, "test-cell config JSON file")->required();
  ev->add_option("--trials", ev_trials, "number of test trials")->capture_default_str();
  ev->add_option("--seed", ev_seed, "evaluation seed")->capture_default_str();
  ev->add_option("--curve", ev_curve, "threshold curve points (meters, ascending)")
      ->delimiter(',');
  ev->add_option("--out", ev_out, "evaluation output directory")->required();

  // report
  auto* rp = app.add_subcommand("report", "aggregate run summaries into CSV tables");
  std::string rp_runs, rp_out;
  rp->add_option("--runs", rp_runs, "glob over summary.json run files")->required();
  rp->add_option("--out", rp_out, "report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_config, gen_n, gen_seed, gen_out);
    if (tr->parsed()) return run_train(ta);
    if (ev->parsed()) return run_eval(ev_ckpt, ev_config, ev_trials, ev_seed, ev_curve, ev_out);
    if (rp->parsed()) return run_report(rp_runs, rp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const VocabularyError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
