#include "multivae/objectives.hpp"

#include <cmath>

namespace multivae::objectives {

using ad::Graph;
using ad::Var;
using model::Episode;
using model::kImage;
using model::kText;
using model::kTrajectory;
using model::MultimodalVAE;
using model::ReconKind;

namespace {

void check_shapes(const Tensor& pred, const Tensor& target, const char* op) {
  if (!pred.same_shape(target))
    throw ShapeError(std::string(op) + ": shape mismatch " + pred.shape_str() + " vs " +
                     target.shape_str());
}

Var squared_error_sum(Graph& g, Var pred, const Tensor& target) {
  Var diff = g.sub(pred, g.constant(target));
  return g.sum(g.mul(diff, diff));
}

}  // namespace

Var mse_recon(Graph& g, Var pred, const Tensor& target) {
  check_shapes(pred.value(), target, "mse_recon");
  return g.scale(squared_error_sum(g, pred, target), 1.0 / static_cast<double>(target.numel()));
}

double mse_recon_value(const Tensor& x, const Tensor& mu) {
  check_shapes(x, mu, "mse_recon");
  return (x.arr() - mu.arr()).square().sum() / static_cast<double>(x.numel());
}

Var sigma_vae_recon(Graph& g, Var pred, const Tensor& target, double sigma_min_sq) {
  check_shapes(pred.value(), target, "sigma_vae_recon");
  if (sigma_min_sq <= 0.0) throw ConfigError("sigma_vae_recon: sigma_min_sq must be > 0");
  const double d = static_cast<double>(target.numel());
  const double sigma_sq = std::max(mse_recon_value(pred.value(), target), sigma_min_sq);
  Var sq = squared_error_sum(g, pred, target);
  return g.add_scalar(g.scale(sq, 0.5 / sigma_sq),
                      0.5 * d * std::log(2.0 * M_PI * sigma_sq));
}

double sigma_vae_recon_value(const Tensor& x, const Tensor& mu, double sigma_min_sq) {
  check_shapes(x, mu, "sigma_vae_recon");
  if (sigma_min_sq <= 0.0) throw ConfigError("sigma_vae_recon: sigma_min_sq must be > 0");
  const double d = static_cast<double>(x.numel());
  const double mse = mse_recon_value(x, mu);
  const double sigma_sq = std::max(mse, sigma_min_sq);
  return 0.5 * d * (std::log(2.0 * M_PI * sigma_sq) + mse / sigma_sq);
}

double gaussian_nll_value(const Tensor& x, const Tensor& mu, double sigma_sq) {
  check_shapes(x, mu, "gaussian_nll");
  const double d = static_cast<double>(x.numel());
  const double mse = mse_recon_value(x, mu);
  return 0.5 * d * (std::log(2.0 * M_PI * sigma_sq) + mse / sigma_sq);
}

Var categorical_recon(Graph& g, Var logits, const std::vector<Index>& targets,
                      const std::vector<bool>& pad_mask) {
  bool any = false;
  for (bool b : pad_mask) any = any || b;
  if (!any) throw EmptySequenceError("categorical_recon: all positions masked");
  return g.cross_entropy_rows(logits, targets, pad_mask, /*mean_reduce=*/true);
}

double categorical_recon_value(const Tensor& logits, const std::vector<Index>& targets,
                               const std::vector<bool>& pad_mask) {
  Graph g;
  return categorical_recon(g, g.constant(logits), targets, pad_mask).item();
}

namespace {

// One fused latent + its KL for a single datum and subset.
struct FusedDraw {
  Var z;
  Var kl;
};

FusedDraw fuse_and_sample(Graph& g, const std::array<dist::Gaussian, 3>& experts,
                          const std::vector<int>& subset, const ElboOptions& opt, Index datum,
                          const Tensor& noise) {
  std::vector<dist::Gaussian> chosen;
  std::vector<bool> mask(fusion::kNumModalities, false);
  for (int m : subset) {
    if (m < 0 || m >= fusion::kNumModalities) throw ConfigError("elbo: bad modality index");
    chosen.push_back(experts[static_cast<std::size_t>(m)]);
    mask[static_cast<std::size_t>(m)] = true;
  }
  if (chosen.empty()) throw ConfigError("elbo: empty subset");

  if (opt.fusion == fusion::FusionKind::poe) {
    dist::Gaussian q = fusion::product_of_experts(
        g, std::span<const dist::Gaussian>(chosen), opt.poe_include_prior);
    return {dist::reparam_sample(q, g.constant(noise)), dist::kl_to_standard_normal(q)};
  }

  // MoPoE: mixture over the subset's powerset; one component decoded per
  // datum (stratified across the batch), KL averaged over components.
  fusion::JointPosterior jp;
  if (opt.mopoe_full_subset_only) {
    jp.kind = fusion::FusionKind::mopoe;
    jp.components = {{1.0, fusion::product_of_experts(
                               g, std::span<const dist::Gaussian>(chosen), false)}};
  } else {
    fusion::ExpertSet es;
    es.experts = chosen;
    es.present_mask = mask;
    jp = fusion::mopoe_components(g, es, opt.mopoe_include_empty);
  }
  const int ncomp = static_cast<int>(jp.components.size());
  const int pick = static_cast<int>(datum % ncomp);
  Var z = dist::reparam_sample(jp.components[static_cast<std::size_t>(pick)].dist,
                               g.constant(noise));
  std::vector<Var> kls;
  kls.reserve(jp.components.size());
  Tensor weights({ncomp});
  for (int c = 0; c < ncomp; ++c) {
    kls.push_back(dist::kl_to_standard_normal(jp.components[static_cast<std::size_t>(c)].dist));
    weights[c] = jp.components[static_cast<std::size_t>(c)].weight;
  }
  Var kl = g.weighted_sum(g.stack_scalars(kls), std::move(weights));
  return {z, kl};
}

struct ModalityRecon {
  Var loss;  // pooled over the batch (per-datum average)
  double value;
};

// Pools per-datum squared-error sums into one mse / sigma-vae loss; the
// sigma-vae variance is the batch-wise MSE over every element in the modality.
ModalityRecon pool_gaussian_recon(Graph& g, std::vector<Var> sqerr, double total_elems,
                                  ReconKind kind, double sigma_min_sq, double batch) {
  Var total_sq = g.add_n(sqerr);
  if (kind == ReconKind::mse) {
    Var loss = g.scale(total_sq, 1.0 / total_elems);
    return {loss, loss.item()};
  }
  const double mse = total_sq.item() / total_elems;
  const double sigma_sq = std::max(mse, sigma_min_sq);
  Var loss = g.add_scalar(g.scale(total_sq, 0.5 / (sigma_sq * batch)),
                          0.5 * (total_elems / batch) * std::log(2.0 * M_PI * sigma_sq));
  return {loss, loss.item()};
}

}  // namespace

LossBreakdown multimodal_elbo(nn::ParamContext& pc, const MultimodalVAE& m,
                              std::span<const Episode* const> batch, const ElboOptions& opt,
                              Rng& noise_rng) {
  Graph& g = pc.graph();
  if (opt.schedule.empty()) throw ConfigError("multimodal_elbo: empty subset schedule");
  if (batch.empty()) throw ShapeError("multimodal_elbo: empty batch");
  const Index b = static_cast<Index>(batch.size());
  const Index dz = m.config().codec.d_z;

  auto experts = m.encode_all(pc, batch);
  const Tensor image_targets = model::stack_images(batch);
  const Vocabulary vocab = m.config().vocab();
  const Index pad = vocab.pad_id();

  std::vector<Var> subset_totals;
  double recon_img_acc = 0, recon_traj_acc = 0, recon_text_acc = 0, kl_acc = 0;

  for (const auto& subset : opt.schedule) {
    std::vector<Var> zs, kls;
    zs.reserve(batch.size());
    for (Index i = 0; i < b; ++i) {
      Tensor noise({dz});
      for (Index d = 0; d < dz; ++d) noise[d] = noise_rng.normal();
      FusedDraw draw =
          fuse_and_sample(g, experts[static_cast<std::size_t>(i)], subset, opt, i, noise);
      zs.push_back(draw.z);
      kls.push_back(draw.kl);
    }

    // image: decode the whole batch at once
    std::vector<Var> zrows;
    zrows.reserve(zs.size());
    for (Var z : zs) zrows.push_back(g.reshape(z, {1, dz}));
    Var img_pred = m.decode_image_rows(pc, g.concat_rows(zrows));
    std::vector<Var> img_sq = {squared_error_sum(g, img_pred, image_targets)};
    ModalityRecon img = pool_gaussian_recon(g, std::move(img_sq),
                                            static_cast<double>(image_targets.numel()),
                                            opt.recon.image, opt.sigma_min_sq,
                                            static_cast<double>(b));

    // trajectory: per-datum native lengths
    std::vector<Var> traj_sq;
    double traj_elems = 0;
    for (Index i = 0; i < b; ++i) {
      const Trajectory& t = batch[static_cast<std::size_t>(i)]->traj;
      const Index tv = t.valid_count();
      Tensor target({tv, 4});
      Index r = 0;
      for (Index s = 0; s < t.length(); ++s) {
        if (!t.mask[static_cast<std::size_t>(s)]) continue;
        std::copy(t.steps.data() + s * 4, t.steps.data() + (s + 1) * 4, target.data() + r * 4);
        ++r;
      }
      Var pred = m.decode_trajectory(pc, zs[static_cast<std::size_t>(i)], tv);
      traj_sq.push_back(squared_error_sum(g, pred, target));
      traj_elems += static_cast<double>(tv * 4);
    }
    ModalityRecon traj = pool_gaussian_recon(g, std::move(traj_sq), traj_elems, opt.recon.traj,
                                             opt.sigma_min_sq, static_cast<double>(b));

    // text: pooled mean over unmasked positions
    std::vector<Var> text_ces;
    double text_positions = 0;
    for (Index i = 0; i < b; ++i) {
      const TokenSequence& seq = batch[static_cast<std::size_t>(i)]->text;
      const Index l = static_cast<Index>(seq.tokens.size());
      std::vector<bool> mask(static_cast<std::size_t>(l));
      for (Index t = 0; t < l; ++t)
        mask[static_cast<std::size_t>(t)] = seq.tokens[static_cast<std::size_t>(t)] != pad;
      Var logits = m.decode_text(pc, zs[static_cast<std::size_t>(i)], l);
      text_ces.push_back(g.cross_entropy_rows(logits, seq.tokens, mask, /*mean_reduce=*/false));
      for (bool v : mask) text_positions += v ? 1.0 : 0.0;
    }
    Var text_loss = g.scale(g.add_n(text_ces), 1.0 / text_positions);

    Var kl_mean = g.scale(g.add_n(kls), 1.0 / static_cast<double>(b));
    std::vector<Var> parts = {img.loss, traj.loss, text_loss};
    Var recon_total = g.add_n(parts);
    Var subset_total = opt.beta == 0.0
                           ? recon_total
                           : g.add(recon_total, g.scale(kl_mean, opt.beta));
    subset_totals.push_back(subset_total);

    recon_img_acc += img.value;
    recon_traj_acc += traj.value;
    recon_text_acc += text_loss.item();
    kl_acc += kl_mean.item();
  }

  const double ns = static_cast<double>(opt.schedule.size());
  LossBreakdown out;
  out.total = g.scale(g.add_n(subset_totals), 1.0 / ns);
  out.total_value = out.total.item();
  out.per_modality_recon = {{"image", recon_img_acc / ns},
                            {"trajectory", recon_traj_acc / ns},
                            {"text", recon_text_acc / ns}};
  out.kl = kl_acc / ns;
  out.objective_kind = "elbo";
  if (!std::isfinite(out.total_value))
    throw InvalidDistributionError("multimodal_elbo: non-finite loss");
  return out;
}

LossBreakdown iwae_dreg(nn::ParamContext& pc, const MultimodalVAE& m,
                        std::span<const Episode* const> batch, const IwaeOptions& opt,
                        Rng& noise_rng) {
  Graph& g = pc.graph();
  if (opt.k < 1) throw ConfigError("iwae_dreg: K must be >= 1");
  if (batch.empty()) throw ShapeError("iwae_dreg: empty batch");
  const Index b = static_cast<Index>(batch.size());
  const Index dz = m.config().codec.d_z;
  const int k = opt.k;

  auto experts = m.encode_all(pc, batch);
  const Vocabulary vocab = m.config().vocab();
  const Index pad = vocab.pad_id();

  // Sample latents and attach deferred importance-weight hooks.
  std::vector<std::vector<Var>> zh(static_cast<std::size_t>(b));
  std::vector<std::vector<std::shared_ptr<Tensor>>> hooks(static_cast<std::size_t>(b));
  std::vector<std::vector<Var>> log_ratio(static_cast<std::size_t>(b));  // beta*(log p - log q)
  for (Index i = 0; i < b; ++i) {
    const auto& ex = experts[static_cast<std::size_t>(i)];
    fusion::ExpertSet es;
    es.experts = {ex[0], ex[1], ex[2]};
    es.present_mask = {true, true, true};
    fusion::JointPosterior moe = fusion::mixture_components(es);
    const int ncomp = static_cast<int>(moe.components.size());
    dist::Gaussian prior = dist::standard_normal(g, dz);

    // Mixture density with stop-gradiented parameters (the DReG contract).
    std::vector<dist::Gaussian> detached;
    detached.reserve(moe.components.size());
    for (const auto& c : moe.components)
      detached.push_back(
          {g.stop_gradient(c.dist.mean), g.stop_gradient(c.dist.log_var)});

    for (int s = 0; s < k; ++s) {
      Tensor noise({dz});
      for (Index d = 0; d < dz; ++d) noise[d] = noise_rng.normal();
      const int comp = s % ncomp;
      Var z = dist::reparam_sample(moe.components[static_cast<std::size_t>(comp)].dist,
                                   g.constant(noise));
      auto hook = std::make_shared<Tensor>(Tensor::scalar(1.0));
      Var z_hooked = g.scale_gradient_deferred(z, hook);
      std::vector<Var> comp_logs;
      comp_logs.reserve(detached.size());
      for (const auto& dcomp : detached) comp_logs.push_back(dist::log_prob(dcomp, z_hooked));
      Var log_q = g.add_scalar(g.logsumexp_vec(g.stack_scalars(comp_logs)),
                               -std::log(static_cast<double>(ncomp)));
      Var log_p = dist::log_prob(prior, z_hooked);
      zh[static_cast<std::size_t>(i)].push_back(z_hooked);
      hooks[static_cast<std::size_t>(i)].push_back(hook);
      log_ratio[static_cast<std::size_t>(i)].push_back(
          g.scale(g.sub(log_p, log_q), opt.beta));
    }
  }

  // Decode every modality for every (datum, sample) pair; image decoding is
  // one [B*K] batch.
  std::vector<Var> zrows;
  zrows.reserve(static_cast<std::size_t>(b * k));
  for (Index i = 0; i < b; ++i)
    for (int s = 0; s < k; ++s)
      zrows.push_back(g.reshape(zh[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)],
                                {1, dz}));
  Var img_pred = m.decode_image_rows(pc, g.concat_rows(zrows));

  struct PerSample {
    Var img_sq, traj_sq, text_ce;
    double img_elems = 0, traj_elems = 0;
  };
  std::vector<std::vector<PerSample>> per(static_cast<std::size_t>(b));
  double img_sq_total = 0, traj_sq_total = 0, img_elems_total = 0, traj_elems_total = 0;

  const Index img_numel = batch[0]->image.numel();
  Var img_flat = g.reshape(img_pred, {b * k, img_numel});
  for (Index i = 0; i < b; ++i) {
    const Episode& ep = *batch[static_cast<std::size_t>(i)];
    Tensor img_target({1, img_numel});
    std::copy(ep.image.data(), ep.image.data() + img_numel, img_target.data());

    const Trajectory& t = ep.traj;
    const Index tv = t.valid_count();
    Tensor traj_target({tv, 4});
    Index r = 0;
    for (Index s = 0; s < t.length(); ++s) {
      if (!t.mask[static_cast<std::size_t>(s)]) continue;
      std::copy(t.steps.data() + s * 4, t.steps.data() + (s + 1) * 4,
                traj_target.data() + r * 4);
      ++r;
    }
    const Index l = static_cast<Index>(ep.text.tokens.size());
    std::vector<bool> mask(static_cast<std::size_t>(l));
    for (Index p = 0; p < l; ++p)
      mask[static_cast<std::size_t>(p)] = ep.text.tokens[static_cast<std::size_t>(p)] != pad;

    for (int s = 0; s < k; ++s) {
      PerSample ps;
      Var img_row = g.slice_rows(img_flat, i * k + s, 1);
      ps.img_sq = squared_error_sum(g, img_row, img_target);
      ps.img_elems = static_cast<double>(img_numel);
      Var traj_pred =
          m.decode_trajectory(pc, zh[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)], tv);
      ps.traj_sq = squared_error_sum(g, traj_pred, traj_target);
      ps.traj_elems = static_cast<double>(tv * 4);
      Var logits =
          m.decode_text(pc, zh[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)], l);
      ps.text_ce = g.cross_entropy_rows(logits, ep.text.tokens, mask, /*mean_reduce=*/false);
      img_sq_total += ps.img_sq.item();
      traj_sq_total += ps.traj_sq.item();
      img_elems_total += ps.img_elems;
      traj_elems_total += ps.traj_elems;
      per[static_cast<std::size_t>(i)].push_back(ps);
    }
  }

  // Batch-wise decoder variances (constants in the gradient).
  auto pooled_sigma = [&](double sq_total, double elems, model::ReconKind kind) {
    if (kind == model::ReconKind::mse) return 1.0;  // MSE runs use unit-variance log-densities
    return std::max(sq_total / elems, opt.sigma_min_sq);
  };
  const double img_sigma = pooled_sigma(img_sq_total, img_elems_total, opt.recon.image);
  const double traj_sigma = pooled_sigma(traj_sq_total, traj_elems_total, opt.recon.traj);

  std::vector<Var> surrogates;
  std::vector<double> values;
  double recon_img = 0, recon_traj = 0, recon_text = 0, kl_est = 0;
  for (Index i = 0; i < b; ++i) {
    std::vector<Var> lws;
    for (int s = 0; s < k; ++s) {
      const PerSample& ps = per[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
      Var img_ll = g.add_scalar(g.scale(ps.img_sq, -0.5 / img_sigma),
                                -0.5 * ps.img_elems * std::log(2.0 * M_PI * img_sigma));
      Var traj_ll = g.add_scalar(g.scale(ps.traj_sq, -0.5 / traj_sigma),
                                 -0.5 * ps.traj_elems * std::log(2.0 * M_PI * traj_sigma));
      Var text_ll = g.neg(ps.text_ce);
      std::vector<Var> parts = {
          img_ll, traj_ll, text_ll,
          log_ratio[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)]};
      lws.push_back(g.add_n(parts));
      recon_img -= img_ll.item();
      recon_traj -= traj_ll.item();
      recon_text -= text_ll.item();
      kl_est -= log_ratio[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)].item();
    }
    Var lw_vec = g.stack_scalars(lws);
    // normalized importance weights (constants for the surrogate)
    const auto& lw_vals = lw_vec.value();
    double mx = lw_vals[0];
    for (Index s = 1; s < lw_vals.numel(); ++s) mx = std::max(mx, lw_vals[s]);
    double denom = 0;
    for (Index s = 0; s < lw_vals.numel(); ++s) denom += std::exp(lw_vals[s] - mx);
    Tensor wtilde({static_cast<Index>(k)});
    for (Index s = 0; s < lw_vals.numel(); ++s)
      wtilde[s] = std::exp(lw_vals[s] - mx) / denom;
    for (int s = 0; s < k; ++s)
      *hooks[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] =
          Tensor::scalar(wtilde[s]);
    surrogates.push_back(g.neg(g.weighted_sum(lw_vec, wtilde)));
    values.push_back(-(mx + std::log(denom)) + std::log(static_cast<double>(k)));
  }

  const double bk = static_cast<double>(b * k);
  LossBreakdown out;
  out.total = g.scale(g.add_n(surrogates), 1.0 / static_cast<double>(b));
  out.total_value = 0;
  for (double v : values) out.total_value += v;
  out.total_value /= static_cast<double>(b);
  out.per_modality_recon = {{"image", recon_img / bk},
                            {"trajectory", recon_traj / bk},
                            {"text", recon_text / bk}};
  out.kl = kl_est / bk;
  out.objective_kind = "iwae_dreg";
  if (!std::isfinite(out.total_value)) throw InvalidDistributionError("iwae_dreg: non-finite loss");
  return out;
}

}  // namespace multivae::objectives
