#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "multivae/data_io.hpp"
#include "multivae/model.hpp"
#include "multivae/objectives.hpp"

namespace multivae::trainer {

/// First-order adaptive per-parameter optimizer (Adam). The exact method and
/// its hyperparameters are recorded in the run metadata.
class AdamOptimizer {
 public:
  AdamOptimizer(double step_size = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(step_size), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(nn::ParamStore& params);

  Index step_count() const { return t_; }
  void set_step_count(Index t) { t_ = t; }
  double step_size() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Index t_ = 0;
};

struct TrainOptions {
  Index epochs = 200;
  Index batch_size = 32;
  double step_size = 1e-3;
  std::uint64_t seed = 0;
  Index checkpoint_every = 25;  // epochs between rolling checkpoint writes
  std::filesystem::path out_dir;
  Index start_epoch = 0;  // resuming continues epoch numbering
};

struct EpochStats {
  Index epoch = 0;
  double total = 0, recon_image = 0, recon_text = 0, recon_traj = 0, kl = 0;
  std::string objective_kind;

  std::string to_json_line() const;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::filesystem::path checkpoint_path;
};

/// Deterministic single-worker training loop: the objective follows the model
/// kind (mvae/mopoe -> multimodal ELBO with poe/mopoe fusion, mmvae ->
/// IWAE+DReG). Writes a JSON-lines loss log, run metadata, and rolling +
/// final checkpoints under out_dir. A non-finite loss aborts with the last
/// completed epoch's checkpoint on disk.
TrainResult train(model::MultimodalVAE& m, AdamOptimizer& adam, const data::Dataset& ds,
                  const TrainOptions& opt);

// ------------------------------------------------------------- checkpointing

void save_checkpoint(const std::filesystem::path& path, const model::MultimodalVAE& m,
                     Index epoch, std::uint64_t seed, Index adam_steps);

struct LoadedCheckpoint {
  model::ModelConfig config;
  Index epoch = 0;
  std::uint64_t seed = 0;
  Index adam_steps = 0;
  std::unique_ptr<model::MultimodalVAE> model;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Run metadata for reproducibility diffs: model config + optimizer + data
/// identity. Paths are deliberately excluded so metadata from runs that differ
/// only in output location compares equal.
std::string run_metadata_json(const model::ModelConfig& cfg, const TrainOptions& opt,
                              const data::Manifest& manifest);

}  // namespace multivae::trainer
