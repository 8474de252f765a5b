#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "multivae/codecs.hpp"
#include "multivae/fusion.hpp"

namespace multivae::model {

enum class ModelKind { mvae, mmvae, mopoe };
enum class ReconKind { mse, sigma_vae };

std::string to_string(ModelKind k);
std::string to_string(ReconKind k);
ModelKind model_kind_from_string(const std::string& s);
ReconKind recon_kind_from_string(const std::string& s);

/// Modality indices used everywhere a subset of {image, trajectory, text} is
/// referenced.
enum Modality : int { kImage = 0, kTrajectory = 1, kText = 2 };

struct ModelConfig {
  ModelKind model_kind = ModelKind::mvae;
  ReconKind recon_image = ReconKind::sigma_vae;
  ReconKind recon_traj = ReconKind::sigma_vae;
  double beta = 1.0;
  int iwae_k = 5;  // mmvae only
  double sigma_min_sq = 1e-6;
  bool poe_include_prior = true;
  bool mopoe_include_empty = true;
  codecs::CodecConfig codec;
  std::vector<std::string> vocabulary;

  /// mvae trains with the mvae_standard subset schedule; mmvae and mopoe use
  /// the full modality set every step.
  fusion::SubsetStrategy subset_strategy() const {
    return model_kind == ModelKind::mvae ? fusion::SubsetStrategy::mvae_standard
                                         : fusion::SubsetStrategy::full_only;
  }

  std::string objective_kind() const {
    return model_kind == ModelKind::mmvae ? "iwae_dreg" : "elbo";
  }

  fusion::FusionKind elbo_fusion() const {
    return model_kind == ModelKind::mopoe ? fusion::FusionKind::mopoe : fusion::FusionKind::poe;
  }

  Vocabulary vocab() const { return Vocabulary{vocabulary}; }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// One training sample as consumed by the objectives.
struct Episode {
  Tensor image;  // [H,W,3]
  TokenSequence text;
  Trajectory traj;
};

/// The three per-modality codecs under one parameter store.
class MultimodalVAE {
 public:
  MultimodalVAE(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  const codecs::ImageCodec& image_codec() const { return *image_; }
  const codecs::TrajectoryCodec& traj_codec() const { return *traj_; }
  const codecs::TextCodec& text_codec() const { return *text_; }

  /// Per-datum experts for all three modalities. The image modality is
  /// encoded as one batch and sliced per datum.
  std::vector<std::array<dist::Gaussian, 3>> encode_all(
      nn::ParamContext& pc, std::span<const Episode* const> batch) const;

  /// Single-datum encoders (spec-level operations).
  dist::Gaussian encode_image(nn::ParamContext& pc, const ImageTensor& img) const;
  dist::Gaussian encode_trajectory(nn::ParamContext& pc, const Trajectory& traj) const;
  dist::Gaussian encode_text(nn::ParamContext& pc, const TokenSequence& seq) const;

  ad::Var decode_image_rows(nn::ParamContext& pc, ad::Var z_rows) const;  // [B,Dz]->[B,H,W,3]
  ad::Var decode_trajectory(nn::ParamContext& pc, ad::Var z, Index length) const;
  ad::Var decode_text(nn::ParamContext& pc, ad::Var z, Index length) const;

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  std::unique_ptr<codecs::ImageCodec> image_;
  std::unique_ptr<codecs::TrajectoryCodec> traj_;
  std::unique_ptr<codecs::TextCodec> text_;
};

/// Stacks episode images into a [B,H,W,3] constant.
Tensor stack_images(std::span<const Episode* const> batch);

}  // namespace multivae::model
