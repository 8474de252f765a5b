#include "multivae/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace multivae::fusion {

void ExpertSet::validate() const {
  if (experts.empty()) throw ShapeError("expert set: at least one expert required");
  if (present_mask.size() != kNumModalities)
    throw ShapeError("expert set: present_mask must have length 3");
  int present = 0;
  for (bool b : present_mask) present += b ? 1 : 0;
  if (present != count()) throw ShapeError("expert set: present_mask/expert count mismatch");
  const Index d = experts[0].dim();
  for (const auto& e : experts)
    if (e.dim() != d) throw ShapeError("expert set: latent dimension mismatch");
}

void JointPosterior::validate() const {
  if (components.empty()) throw ShapeError("joint posterior: no components");
  double wsum = 0.0;
  for (const auto& c : components) {
    if (c.weight < 0.0 || c.weight > 1.0)
      throw InvalidDistributionError("joint posterior: weight outside [0,1]");
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw InvalidDistributionError("joint posterior: weights do not sum to 1");
  if (kind == FusionKind::poe && components.size() != 1)
    throw InvalidDistributionError("joint posterior: poe must have exactly one component");
}

dist::Gaussian product_of_experts(ad::Graph& g, std::span<const dist::Gaussian> experts,
                                  bool include_prior) {
  if (experts.empty() && !include_prior)
    throw ShapeError("product_of_experts: empty product without prior");
  Index d = experts.empty() ? 0 : experts[0].dim();
  for (const auto& e : experts) {
    if (e.dim() != d) throw ShapeError("product_of_experts: latent dimension mismatch");
  }
  if (experts.empty()) return dist::standard_normal(g, d);

  std::vector<ad::Var> precisions;
  std::vector<ad::Var> weighted_means;
  precisions.reserve(experts.size() + 1);
  weighted_means.reserve(experts.size() + 1);
  for (const auto& e : experts) {
    ad::Var prec = g.exp(g.neg(e.log_var));
    precisions.push_back(prec);
    weighted_means.push_back(g.mul(e.mean, prec));
  }
  if (include_prior) {
    // Unit-precision, zero-mean expert; contributes +1 precision only.
    precisions.push_back(g.constant(Tensor::full({d}, 1.0)));
  }
  ad::Var total_prec = g.add_n(precisions);
  ad::Var mean = g.div(g.add_n(weighted_means), total_prec);
  ad::Var log_var = g.neg(g.log(total_prec));
  return dist::make_gaussian(g, mean, log_var);
}

JointPosterior mixture_components(const ExpertSet& e) {
  e.validate();
  JointPosterior jp;
  jp.kind = FusionKind::moe;
  const double w = 1.0 / e.count();
  for (const auto& expert : e.experts) jp.components.push_back({w, expert});
  jp.validate();
  return jp;
}

JointPosterior mopoe_components(ad::Graph& g, const ExpertSet& e, bool include_empty_subset) {
  e.validate();
  const int m = e.count();
  const unsigned total = 1u << m;
  JointPosterior jp;
  jp.kind = FusionKind::mopoe;
  const double w = include_empty_subset ? 1.0 / total : 1.0 / (total - 1);
  for (unsigned bits = include_empty_subset ? 0 : 1; bits < total; ++bits) {
    if (bits == 0) {
      jp.components.push_back({w, dist::standard_normal(g, e.experts[0].dim())});
      continue;
    }
    std::vector<dist::Gaussian> subset;
    for (int i = 0; i < m; ++i)
      if (bits & (1u << i)) subset.push_back(e.experts[static_cast<std::size_t>(i)]);
    jp.components.push_back({w, product_of_experts(g, subset, /*include_prior=*/false)});
  }
  jp.validate();
  return jp;
}

std::vector<int> stratified_choices(int k, int n_components) {
  if (n_components < 1) throw ConfigError("stratified_choices: need at least one component");
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = i % n_components;
  return out;
}

std::vector<ad::Var> sample_mixture(ad::Graph& g, const JointPosterior& jp, int k,
                                    const Tensor& noise, const std::vector<int>& choices) {
  jp.validate();
  if (static_cast<int>(choices.size()) != k)
    throw ShapeError("sample_mixture: choices length mismatch");
  if (k == 0) return {};
  const Index d = jp.components[0].dist.dim();
  if (noise.rank() != 2 || noise.dim(0) != k || noise.dim(1) != d)
    throw ShapeError("sample_mixture: noise must be [k, D_z]");
  std::vector<ad::Var> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const int c = choices[static_cast<std::size_t>(i)];
    if (c < 0 || c >= static_cast<int>(jp.components.size()))
      throw std::out_of_range("sample_mixture: component choice out of range");
    Tensor row({d});
    std::copy(noise.data() + i * d, noise.data() + (i + 1) * d, row.data());
    out.push_back(dist::reparam_sample(jp.components[static_cast<std::size_t>(c)].dist,
                                       g.input(std::move(row))));
  }
  return out;
}

std::vector<std::vector<int>> subset_schedule(int n_present, SubsetStrategy strategy, Rng& rng) {
  if (n_present < 1) throw ConfigError("subset_schedule: n_present must be >= 1");
  std::vector<int> full(static_cast<std::size_t>(n_present));
  for (int i = 0; i < n_present; ++i) full[static_cast<std::size_t>(i)] = i;
  std::vector<std::vector<int>> out = {full};
  if (strategy == SubsetStrategy::full_only) return out;

  for (int i = 0; i < n_present; ++i) {
    std::vector<int> single = {i};
    if (single != full) out.push_back(single);
  }
  if (n_present >= 3) {
    // One uniformly random proper subset of size >= 2: pick the size, then the
    // members, via the caller's rng.
    const int size = 2 + static_cast<int>(rng.below(n_present - 2));
    std::vector<int> pool = full;
    std::vector<int> subset;
    for (int i = 0; i < size; ++i) {
      const auto j = static_cast<std::size_t>(rng.below(static_cast<int>(pool.size())));
      subset.push_back(pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
    std::sort(subset.begin(), subset.end());
    if (std::find(out.begin(), out.end(), subset) == out.end()) out.push_back(subset);
  }
  return out;
}

}  // namespace multivae::fusion
