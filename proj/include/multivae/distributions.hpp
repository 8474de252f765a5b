#pragma once

#include <vector>

#include "multivae/errors.hpp"
#include "multivae/graph.hpp"

namespace multivae::dist {

/// Clamp range for log-variances. Keeps precisions exp(-log_var) finite when
/// near-deterministic experts are fused in precision space.
constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)

/// Factorized Gaussian over a D-dimensional latent, parameterized by mean and
/// log-variance vectors. Instances may carry gradients (encoder outputs) or be
/// plain constants; both flow through the same ops.
struct Gaussian {
  ad::Var mean;
  ad::Var log_var;

  Index dim() const { return mean.value().numel(); }
};

/// Validates invariants and applies the log-variance clamp.
Gaussian make_gaussian(ad::Graph& g, ad::Var mean, ad::Var log_var);

/// Constant (non-differentiable) Gaussian from raw vectors.
Gaussian make_constant_gaussian(ad::Graph& g, const std::vector<double>& mean,
                                const std::vector<double>& log_var);

/// The fixed prior p(z): mean 0, unit variance.
Gaussian standard_normal(ad::Graph& g, Index d);

/// KL(q || N(0, I)) in nats: 0.5 * sum(exp(lv) + mu^2 - 1 - lv).
ad::Var kl_to_standard_normal(const Gaussian& q);

/// z = mu + exp(lv/2) * eps; eps supplied by the caller for determinism.
ad::Var reparam_sample(const Gaussian& q, ad::Var noise);

/// Log-density of z under q, in nats.
ad::Var log_prob(const Gaussian& q, ad::Var z);

// Value-level conveniences (no gradient bookkeeping).
double kl_value(const std::vector<double>& mean, const std::vector<double>& log_var);
std::vector<double> reparam_value(const std::vector<double>& mean,
                                  const std::vector<double>& log_var,
                                  const std::vector<double>& noise);
double log_prob_value(const std::vector<double>& mean, const std::vector<double>& log_var,
                      const std::vector<double>& z);

}  // namespace multivae::dist
