#include "multivae/distributions.hpp"

namespace multivae::dist {

Gaussian make_gaussian(ad::Graph& g, ad::Var mean, ad::Var log_var) {
  const Tensor& m = mean.value();
  const Tensor& lv = log_var.value();
  if (m.numel() < 1) throw ShapeError("gaussian: latent dimension must be >= 1");
  if (m.numel() != lv.numel())
    throw ShapeError("gaussian: mean/log_var length mismatch " + m.shape_str() + " vs " +
                     lv.shape_str());
  if (!m.all_finite() || !lv.all_finite())
    throw InvalidDistributionError("gaussian: non-finite parameters");
  return Gaussian{mean, g.clamp(log_var, kLogVarMin, kLogVarMax)};
}

Gaussian make_constant_gaussian(ad::Graph& g, const std::vector<double>& mean,
                                const std::vector<double>& log_var) {
  const Index d = static_cast<Index>(mean.size());
  return make_gaussian(g, g.input(Tensor({d}, mean)),
                       g.input(Tensor({static_cast<Index>(log_var.size())}, log_var)));
}

Gaussian standard_normal(ad::Graph& g, Index d) {
  return Gaussian{g.constant(Tensor({d})), g.constant(Tensor({d}))};
}

ad::Var kl_to_standard_normal(const Gaussian& q) {
  ad::Graph& g = *q.mean.graph();
  ad::Var mu2 = g.mul(q.mean, q.mean);
  ad::Var inner = g.add_scalar(g.sub(g.add(g.exp(q.log_var), mu2), q.log_var), -1.0);
  return g.scale(g.sum(inner), 0.5);
}

ad::Var reparam_sample(const Gaussian& q, ad::Var noise) {
  ad::Graph& g = *q.mean.graph();
  if (noise.value().numel() != q.dim())
    throw ShapeError("reparam_sample: noise length mismatch");
  ad::Var std = g.exp(g.scale(q.log_var, 0.5));
  return g.add(q.mean, g.mul(std, g.reshape(noise, q.mean.value().shape())));
}

ad::Var log_prob(const Gaussian& q, ad::Var z) {
  ad::Graph& g = *q.mean.graph();
  if (z.value().numel() != q.dim()) throw ShapeError("log_prob: z length mismatch");
  ad::Var diff = g.sub(g.reshape(z, q.mean.value().shape()), q.mean);
  ad::Var quad = g.mul(g.mul(diff, diff), g.exp(g.neg(q.log_var)));
  ad::Var s = g.add(quad, q.log_var);
  const double c = static_cast<double>(q.dim()) * kLogTwoPi;
  return g.scale(g.add_scalar(g.sum(s), c), -0.5);
}

double kl_value(const std::vector<double>& mean, const std::vector<double>& log_var) {
  ad::Graph g;
  return kl_to_standard_normal(make_constant_gaussian(g, mean, log_var)).item();
}

std::vector<double> reparam_value(const std::vector<double>& mean,
                                  const std::vector<double>& log_var,
                                  const std::vector<double>& noise) {
  ad::Graph g;
  Gaussian q = make_constant_gaussian(g, mean, log_var);
  ad::Var z = reparam_sample(q, g.input(Tensor({static_cast<Index>(noise.size())}, noise)));
  const Tensor& t = z.value();
  return std::vector<double>(t.data(), t.data() + t.numel());
}

double log_prob_value(const std::vector<double>& mean, const std::vector<double>& log_var,
                      const std::vector<double>& z) {
  ad::Graph g;
  Gaussian q = make_constant_gaussian(g, mean, log_var);
  return log_prob(q, g.input(Tensor({static_cast<Index>(z.size())}, z))).item();
}

}  // namespace multivae::dist
