#include "multivae/evalharness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace multivae::eval {

using nlohmann::json;

namespace {

// Fused latent (mean decoding) from any subset of experts.
Tensor fused_mean(ad::Graph& g, const model::MultimodalVAE& m,
                  const std::vector<dist::Gaussian>& experts, const InferenceOptions& opt) {
  const model::ModelConfig& cfg = m.config();
  if (opt.component_mean) {
    Tensor mean({cfg.codec.d_z});
    for (const auto& e : experts) mean.arr() += e.mean.value().arr();
    mean.arr() /= static_cast<double>(experts.size());
    return mean;
  }
  const bool with_prior =
      cfg.model_kind == model::ModelKind::mvae && cfg.poe_include_prior;
  dist::Gaussian fused = fusion::product_of_experts(
      g, std::span<const dist::Gaussian>(experts), with_prior);
  return fused.mean.value();
}

Trajectory clamp_to_workspace(Tensor steps) {
  const double lo = -kWorkspaceHalf - kWorkspaceSlack;
  const double hi = kWorkspaceHalf + kWorkspaceSlack;
  const Index t = steps.dim(0);
  for (Index r = 0; r < t; ++r)
    for (Index c = 0; c < 3; ++c)
      steps[r * 4 + c] = std::min(hi, std::max(lo, steps[r * 4 + c]));
  Trajectory traj;
  traj.steps = std::move(steps);
  traj.mask.assign(static_cast<std::size_t>(t), true);
  return traj;
}

}  // namespace

Trajectory infer_trajectory(const model::MultimodalVAE& m, const ImageTensor& img,
                            const TokenSequence& instruction, Index length,
                            const InferenceOptions& opt) {
  if (length < 1 || length > m.config().codec.t_max)
    throw ConfigError("infer_trajectory: length outside [1, T_max]");
  ad::Graph g;
  nn::ParamContext pc(g, const_cast<model::MultimodalVAE&>(m).params(), false);
  std::vector<dist::Gaussian> experts = {m.encode_image(pc, img),
                                         m.encode_text(pc, instruction)};
  Tensor z = fused_mean(g, m, experts, opt);
  ad::Var out = m.decode_trajectory(pc, g.constant(std::move(z)), length);
  return clamp_to_workspace(out.value());
}

TokenSequence infer_caption(const model::MultimodalVAE& m, const ImageTensor& img,
                            const Trajectory& traj, const InferenceOptions& opt) {
  ad::Graph g;
  nn::ParamContext pc(g, const_cast<model::MultimodalVAE&>(m).params(), false);
  std::vector<dist::Gaussian> experts = {m.encode_image(pc, img),
                                         m.encode_trajectory(pc, traj)};
  Tensor z = fused_mean(g, m, experts, opt);
  const Index l_max = m.config().codec.l_max;
  ad::Var logits = m.decode_text(pc, g.constant(std::move(z)), l_max);
  TokenSequence seq;
  auto lm = logits.value().mat();
  for (Index r = 0; r < l_max; ++r) {
    Index best = 0;
    for (Index v = 1; v < lm.cols(); ++v)
      if (lm(r, v) > lm(r, best)) best = v;
    seq.tokens.push_back(best);
  }
  return seq;
}

std::string TrialDiag::to_json_line() const {
  json j{{"trial", index},
         {"task", scene::to_string(task)},
         {"success", success},
         {"aux_ok", aux_ok},
         {"min_distance_m", min_distance_m},
         {"displacement_m", {displacement_m[0], displacement_m[1], displacement_m[2]}},
         {"traj_len", traj_len},
         {"generation_failed", generation_failed}};
  return j.dump();
}

Policy model_policy(const model::MultimodalVAE& m, const InferenceOptions& opt) {
  return [&m, opt](const scene::SceneSpec&, const ImageTensor& img, const TokenSequence& instr,
                   Index length) { return infer_trajectory(m, img, instr, length, opt); };
}

Index scripted_median_length(const scene::DatasetConfig& config, scene::Task task,
                             std::uint64_t seed) {
  scene::DatasetConfig single = config;
  single.tasks = {task};
  std::vector<Index> lengths;
  for (int i = 0; i < 101; ++i) {
    Rng rng = derive_rng(seed, "medlen", static_cast<std::uint64_t>(i));
    scene::SceneSpec s = scene::sample_scene(single, rng);
    lengths.push_back(scene::synthesize_trajectory(s, rng).length());
  }
  std::sort(lengths.begin(), lengths.end());
  return lengths[lengths.size() / 2];
}

EvalResult evaluate_success(const Policy& policy, const scene::DatasetConfig& test_config,
                            Index n_trials, std::uint64_t seed,
                            const scene::Thresholds& thresholds) {
  test_config.validate();
  if (n_trials < 1) throw ConfigError("evaluate_success: n_trials must be >= 1");
  const Vocabulary vocab = default_vocabulary();

  std::map<scene::Task, Index> median_len;
  for (scene::Task t : test_config.tasks)
    median_len[t] = scripted_median_length(test_config, t, seed);

  EvalResult out;
  Index successes = 0;
  for (Index i = 0; i < n_trials; ++i) {
    TrialDiag diag;
    diag.index = i;
    try {
      // test scenes draw from a namespace disjoint from training trials
      Rng rng = derive_rng(seed, "eval-trial", static_cast<std::uint64_t>(i));
      scene::SceneSpec spec = scene::sample_scene(test_config, rng);
      diag.task = spec.task;
      ImageTensor image = scene::render_topview(spec);
      TokenSequence instr = scene::make_instruction(spec, vocab);
      Trajectory traj = policy(spec, image, instr, median_len.at(spec.task));
      diag.traj_len = traj.length();
      scene::SuccessReport rep = scene::check_success(spec, traj, thresholds);
      diag.success = rep.success;
      diag.aux_ok = rep.aux_ok;
      diag.min_distance_m = rep.final_distance_m;
      diag.displacement_m = rep.displacement_m;
    } catch (const std::exception&) {
      diag.generation_failed = true;
      diag.success = false;
    }
    successes += diag.success ? 1 : 0;
    out.trials.push_back(diag);
  }
  out.accuracy = static_cast<double>(successes) / static_cast<double>(n_trials);
  return out;
}

std::vector<std::pair<double, double>> threshold_curve(const EvalResult& result,
                                                       const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ConfigError("threshold_curve: empty threshold list");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] <= thresholds[i - 1])
      throw ConfigError("threshold_curve: thresholds must be sorted ascending");
  std::vector<std::pair<double, double>> curve;
  for (double t : thresholds) {
    Index ok = 0;
    for (const auto& d : result.trials) {
      if (d.generation_failed) continue;
      scene::SuccessReport rep;
      rep.final_distance_m = d.min_distance_m;
      rep.aux_ok = d.aux_ok;
      ok += scene::success_at_threshold(rep, d.task, t) ? 1 : 0;
    }
    curve.push_back({t, static_cast<double>(ok) / static_cast<double>(result.trials.size())});
  }
  return curve;
}

std::string RunRecord::to_json() const {
  json j{{"model", model},   {"recon", recon},       {"cell", cell},
         {"accuracy", accuracy}, {"n_trials", n_trials}, {"seed", seed}};
  return j.dump(2);
}

RunRecord RunRecord::from_json(const std::string& text) {
  json j = json::parse(text);
  RunRecord r;
  r.model = j.at("model");
  r.recon = j.at("recon");
  r.cell = j.at("cell");
  r.accuracy = j.at("accuracy");
  r.n_trials = j.at("n_trials");
  r.seed = j.at("seed");
  return r;
}

GridReportPaths grid_report(const std::vector<std::filesystem::path>& run_files,
                            const std::filesystem::path& out_dir,
                            std::vector<std::string>* warnings) {
  namespace fs = std::filesystem;
  struct Row {
    RunRecord rec;
    fs::path dir;
  };
  std::vector<Row> rows;
  for (const auto& p : run_files) {
    try {
      std::ifstream in(p);
      if (!in) throw IntegrityError("cannot open");
      std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      rows.push_back({RunRecord::from_json(text), p.parent_path()});
    } catch (const std::exception& e) {
      if (warnings) warnings->push_back("skipping " + p.string() + ": " + e.what());
    }
  }
  if (rows.empty()) throw ConfigError("grid_report: no valid run files");

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.rec.model, a.rec.cell, a.rec.recon) <
           std::tie(b.rec.model, b.rec.cell, b.rec.recon);
  });

  // sigma-vae improvement over mse for matching (model, cell)
  std::map<std::pair<std::string, std::string>, double> mse_acc;
  for (const auto& r : rows)
    if (r.rec.recon == "mse") mse_acc[{r.rec.model, r.rec.cell}] = r.rec.accuracy;

  fs::create_directories(out_dir);
  GridReportPaths paths{out_dir / "report.csv", out_dir / "plot_data.csv"};
  std::ofstream csv(paths.report_csv, std::ios::trunc);
  csv << "model,cell,recon,accuracy,n,seed,improvement\n";
  std::ostringstream body;
  for (const auto& r : rows) {
    body << r.rec.model << "," << r.rec.cell << "," << r.rec.recon << "," << r.rec.accuracy
         << "," << r.rec.n_trials << "," << r.rec.seed << ",";
    auto it = mse_acc.find({r.rec.model, r.rec.cell});
    if (r.rec.recon == "sigma_vae" && it != mse_acc.end())
      body << (r.rec.accuracy - it->second);
    body << "\n";
  }
  csv << body.str();

  std::ofstream plot(paths.plot_data_csv, std::ios::trunc);
  plot << "model,cell,recon,threshold,accuracy\n";
  for (const auto& r : rows) {
    const fs::path curve = r.dir / "curve.csv";
    if (!fs::exists(curve)) continue;
    std::ifstream in(curve);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      plot << r.rec.model << "," << r.rec.cell << "," << r.rec.recon << "," << line << "\n";
    }
  }
  return paths;
}

}  // namespace multivae::eval
