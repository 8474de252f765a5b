#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "multivae/model.hpp"

namespace multivae::objectives {

/// Mean squared error over all elements: (1/D) * sum (x_i - mu_i)^2.
ad::Var mse_recon(ad::Graph& g, ad::Var pred, const Tensor& target);
double mse_recon_value(const Tensor& x, const Tensor& mu);

/// Gaussian negative log-likelihood at the batch-wise optimal decoder variance
/// sigma*^2 = max(MSE(x, mu), sigma_min_sq). The variance estimate is a
/// constant for gradient purposes: only the squared-error term carries
/// gradients.
ad::Var sigma_vae_recon(ad::Graph& g, ad::Var pred, const Tensor& target, double sigma_min_sq);
double sigma_vae_recon_value(const Tensor& x, const Tensor& mu, double sigma_min_sq);

/// Gaussian NLL at a fixed variance; reference formula shared with tests.
double gaussian_nll_value(const Tensor& x, const Tensor& mu, double sigma_sq);

/// Mean over unmasked positions of -log softmax(logits)[t, target_t].
ad::Var categorical_recon(ad::Graph& g, ad::Var logits, const std::vector<Index>& targets,
                          const std::vector<bool>& pad_mask);
double categorical_recon_value(const Tensor& logits, const std::vector<Index>& targets,
                               const std::vector<bool>& pad_mask);

struct LossBreakdown {
  ad::Var total;  // scalar graph node driven by backward(); for iwae_dreg this
                  // is the gradient surrogate, not the bound value
  double total_value = 0.0;
  std::map<std::string, double> per_modality_recon;
  double kl = 0.0;
  std::string objective_kind;
};

struct ReconSpec {
  model::ReconKind image = model::ReconKind::sigma_vae;
  model::ReconKind traj = model::ReconKind::sigma_vae;
};

struct ElboOptions {
  fusion::FusionKind fusion = fusion::FusionKind::poe;  // poe or mopoe
  std::vector<std::vector<int>> schedule;               // modality-index subsets
  double beta = 1.0;
  ReconSpec recon;
  double sigma_min_sq = 1e-6;
  bool poe_include_prior = true;
  bool mopoe_include_empty = true;
  bool mopoe_full_subset_only = false;  // restrict the powerset to the full subset
};

/// Multimodal ELBO over a subset schedule: per subset, fuse the present
/// experts, draw one reparameterized sample per datum, decode every modality
/// and combine reconstruction losses with the beta-weighted KL (mixture KL is
/// the weighted average of component KLs). The result is the mean over
/// subsets.
LossBreakdown multimodal_elbo(nn::ParamContext& pc, const model::MultimodalVAE& m,
                              std::span<const model::Episode* const> batch,
                              const ElboOptions& opt, Rng& noise_rng);

struct IwaeOptions {
  int k = 5;
  double beta = 1.0;
  ReconSpec recon;
  double sigma_min_sq = 1e-6;
};

/// IWAE bound over stratified samples from the MoE mixture, with the DReG
/// gradient treatment: posterior parameters inside the importance weights are
/// stop-gradiented and the sample path is re-weighted by the normalized
/// importance weights (squared weighting for encoder parameters).
LossBreakdown iwae_dreg(nn::ParamContext& pc, const model::MultimodalVAE& m,
                        std::span<const model::Episode* const> batch, const IwaeOptions& opt,
                        Rng& noise_rng);

}  // namespace multivae::objectives
