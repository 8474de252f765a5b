#pragma once

#include <span>
#include <vector>

#include "multivae/distributions.hpp"
#include "multivae/rng.hpp"

namespace multivae::fusion {

constexpr int kNumModalities = 3;

/// Per-modality posteriors for one datum, in modality order, present ones only.
struct ExpertSet {
  std::vector<dist::Gaussian> experts;
  std::vector<bool> present_mask;  // length kNumModalities

  void validate() const;
  int count() const { return static_cast<int>(experts.size()); }
};

enum class FusionKind { poe, moe, mopoe };

struct Component {
  double weight;
  dist::Gaussian dist;
};

/// Joint posterior: a single Gaussian for PoE (one component, weight 1) or a
/// uniformly weighted mixture for MoE / MoPoE.
struct JointPosterior {
  std::vector<Component> components;
  FusionKind kind;

  void validate() const;
};

/// Precision-weighted product of Gaussian experts. With include_prior the
/// standard normal joins as one more unit-precision expert. The result's
/// log-variance is re-clamped after fusion.
dist::Gaussian product_of_experts(ad::Graph& g, std::span<const dist::Gaussian> experts,
                                  bool include_prior);

inline dist::Gaussian product_of_experts(ad::Graph& g, const ExpertSet& e, bool include_prior) {
  e.validate();
  return product_of_experts(g, e.experts, include_prior);
}

/// Uniform mixture of the unimodal posteriors (weights 1/M).
JointPosterior mixture_components(const ExpertSet& e);

/// Mixture over the powerset of present experts, each subset fused by PoE
/// (no inner prior expert). Subsets enumerate in binary-counting order over
/// expert indices; with include_empty_subset the empty subset contributes the
/// standard-normal prior, for exactly 2^M uniformly weighted components.
JointPosterior mopoe_components(ad::Graph& g, const ExpertSet& e, bool include_empty_subset);

/// Cycles component indices 0,1,...,C-1,0,... so equal sample counts hit each
/// component when k is a multiple of the component count.
std::vector<int> stratified_choices(int k, int n_components);

/// Draws sample i from components[choices[i]] using noise row i.
std::vector<ad::Var> sample_mixture(ad::Graph& g, const JointPosterior& jp, int k,
                                    const Tensor& noise, const std::vector<int>& choices);

enum class SubsetStrategy { full_only, mvae_standard };

/// Modality-subset schedule for training with missing modalities.
/// full_only: just the full set. mvae_standard: full set + every singleton +
/// one random proper subset of size >= 2 when n_present >= 3 (deduplicated).
std::vector<std::vector<int>> subset_schedule(int n_present, SubsetStrategy strategy, Rng& rng);

}  // namespace multivae::fusion
