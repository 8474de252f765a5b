#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "multivae/model.hpp"
#include "multivae/scenegen.hpp"

namespace multivae::eval {

struct InferenceOptions {
  /// Deterministic fusion of the present modalities' experts. The default is
  /// the precision-weighted product; component_mean averages the expert means
  /// uniformly instead. Either way the fused MEAN is decoded, never a sample.
  bool component_mean = false;
};

/// Cross-generates a trajectory of the requested length from image + text.
Trajectory infer_trajectory(const model::MultimodalVAE& m, const ImageTensor& img,
                            const TokenSequence& instruction, Index length,
                            const InferenceOptions& opt = {});

/// Cross-generates an instruction (greedy argmax over L_max positions) from
/// image + trajectory.
TokenSequence infer_caption(const model::MultimodalVAE& m, const ImageTensor& img,
                            const Trajectory& traj, const InferenceOptions& opt = {});

struct TrialDiag {
  Index index = 0;
  scene::Task task = scene::Task::reach;
  bool success = false;
  bool aux_ok = false;
  double min_distance_m = 0.0;
  scene::Vec3 displacement_m = {0, 0, 0};
  Index traj_len = 0;
  bool generation_failed = false;

  std::string to_json_line() const;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<TrialDiag> trials;
};

/// A policy maps (scene, image, instruction, requested length) to a
/// trajectory. Models, scripted oracles and degenerate baselines all fit.
using Policy = std::function<Trajectory(const scene::SceneSpec&, const ImageTensor&,
                                        const TokenSequence&, Index)>;

Policy model_policy(const model::MultimodalVAE& m, const InferenceOptions& opt = {});

/// Median scripted demonstration length for each task of the config,
/// estimated over seeded rollouts; inference requests this length.
Index scripted_median_length(const scene::DatasetConfig& config, scene::Task task,
                             std::uint64_t seed);

/// Fresh seeded test scenes -> render -> instruction -> policy -> success
/// check. Generation errors are logged per trial and count as failures.
EvalResult evaluate_success(const Policy& policy, const scene::DatasetConfig& test_config,
                            Index n_trials, std::uint64_t seed,
                            const scene::Thresholds& thresholds = {});

/// Accuracy as a function of the reach threshold, re-derived from stored
/// diagnostics. Thresholds must be sorted ascending.
std::vector<std::pair<double, double>> threshold_curve(const EvalResult& result,
                                                       const std::vector<double>& thresholds);

// --------------------------------------------------------------- run records

struct RunRecord {
  std::string model;
  std::string recon;
  std::string cell;
  double accuracy = 0.0;
  Index n_trials = 0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
};

/// Writes report.csv (one row per run, with a sigma-minus-mse improvement
/// column where both recon kinds exist for a model/cell pair) and
/// plot_data.csv aggregating any curve files found beside the run summaries.
struct GridReportPaths {
  std::filesystem::path report_csv;
  std::filesystem::path plot_data_csv;
};

GridReportPaths grid_report(const std::vector<std::filesystem::path>& run_files,
                            const std::filesystem::path& out_dir,
                            std::vector<std::string>* warnings = nullptr);

}  // namespace multivae::eval
