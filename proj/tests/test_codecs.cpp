#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "multivae/codecs.hpp"
#include "multivae/objectives.hpp"
#include "test_helpers.hpp"

using namespace multivae;
using namespace test_helpers;
using model::MultimodalVAE;

TEST_CASE("positional encoding formula") {
  Tensor pe = codecs::positional_encoding(10, 4);
  for (Index i = 0; i < pe.numel(); ++i) {
    CHECK(pe[i] >= -1.0);
    CHECK(pe[i] <= 1.0);
  }
  // t = 0: even columns sin(0)=0, odd columns cos(0)=1
  CHECK(pe[0] == doctest::Approx(0.0));
  CHECK(pe[1] == doctest::Approx(1.0));
  CHECK(pe[2] == doctest::Approx(0.0));
  CHECK(pe[3] == doctest::Approx(1.0));
  CHECK(pe[1 * 4 + 0] == doctest::Approx(std::sin(1.0)).epsilon(1e-9));
  CHECK(pe[1 * 4 + 1] == doctest::Approx(std::cos(1.0)).epsilon(1e-9));
  CHECK(pe[1 * 4 + 2] == doctest::Approx(std::sin(1.0 / 100.0)).epsilon(1e-9));
  CHECK_THROWS_AS(codecs::positional_encoding(4, 5), ConfigError);
}

TEST_CASE("image codec: determinism, shapes, output range") {
  MultimodalVAE m(tiny_config(), 99);
  Rng rng(1);
  ImageTensor img{random_image(rng, 8)};

  ad::Graph g;
  nn::ParamContext pc(g, m.params(), false);
  dist::Gaussian q1 = m.encode_image(pc, img);
  dist::Gaussian q2 = m.encode_image(pc, img);
  CHECK(q1.dim() == 4);
  CHECK(q2.dim() == 4);
  for (Index i = 0; i < 4; ++i) {
    CHECK(q1.mean.value()[i] == q2.mean.value()[i]);
    CHECK(q1.log_var.value()[i] == q2.log_var.value()[i]);
  }

  Tensor z({1, 4}, {0.3, -0.2, 0.5, 0.1});
  ad::Var imgs1 = m.decode_image_rows(pc, g.constant(z));
  ad::Var imgs2 = m.decode_image_rows(pc, g.constant(z));
  CHECK(imgs1.value().shape() == std::vector<Index>{1, 8, 8, 3});
  for (Index i = 0; i < imgs1.value().numel(); ++i) {
    CHECK(imgs1.value()[i] == imgs2.value()[i]);
    CHECK(imgs1.value()[i] >= 0.0);
    CHECK(imgs1.value()[i] <= 1.0);
  }

  Tensor wrong({1, 4, 4, 3});
  ad::Graph g2;
  nn::ParamContext pc2(g2, m.params(), false);
  CHECK_THROWS_AS(m.image_codec().encode_batch(pc2, g2.constant(wrong)), ShapeError);
}

TEST_CASE("default-size image decoder emits 64x64x3") {
  model::ModelConfig cfg;
  cfg.vocabulary = default_vocabulary().words;
  MultimodalVAE m(cfg, 5);
  ad::Graph g;
  nn::ParamContext pc(g, m.params(), false);
  Tensor z({1, cfg.codec.d_z});
  ad::Var out = m.decode_image_rows(pc, g.constant(z));
  CHECK(out.value().shape() == std::vector<Index>{1, 64, 64, 3});
}

TEST_CASE("image encoder pixel gradients match finite differences") {
  MultimodalVAE m(tiny_config(), 7);
  Rng rng(2);
  Tensor img = random_image(rng, 8);

  auto mean_sum = [&](const Tensor& pixels, bool with_grad, Tensor* pixel_grad) {
    ad::Graph g;
    nn::ParamContext pc(g, m.params(), false);
    Tensor batch({1, 8, 8, 3});
    std::copy(pixels.data(), pixels.data() + pixels.numel(), batch.data());
    ad::Var in = g.input(std::move(batch), with_grad);
    auto [mu, lv] = m.image_codec().encode_batch(pc, in);
    ad::Var loss = g.sum(mu);
    if (with_grad) {
      g.backward(loss);
      *pixel_grad = g.node(in.id()).grad;
    }
    return loss.item();
  };

  Tensor pixel_grad;
  mean_sum(img, true, &pixel_grad);
  const double h = 1e-6;
  for (Index i : {Index(0), Index(37), Index(101), Index(190)}) {
    Tensor up = img, down = img;
    up[i] += h;
    down[i] -= h;
    const double fd = (mean_sum(up, false, nullptr) - mean_sum(down, false, nullptr)) / (2 * h);
    CHECK(std::abs(fd - pixel_grad[i]) / std::max(1.0, std::abs(fd)) < 1e-4);
  }
}

TEST_CASE("trajectory encoder: masking invariance and positional sensitivity") {
  MultimodalVAE m(tiny_config(), 11);
  Rng rng(3);
  Trajectory traj = random_trajectory(rng, 6);

  Trajectory padded = traj;
  padded.steps = Tensor({9, 4});
  std::copy(traj.steps.data(), traj.steps.data() + traj.steps.numel(), padded.steps.data());
  for (Index r = 6; r < 9; ++r) padded.steps[r * 4 + 3] = 1.0;  // garbage in masked rows
  padded.mask = {true, true, true, true, true, true, false, false, false};

  ad::Graph g;
  nn::ParamContext pc(g, m.params(), false);
  dist::Gaussian a = m.encode_trajectory(pc, traj);
  dist::Gaussian b = m.encode_trajectory(pc, padded);
  CHECK(a.dim() == 4);
  for (Index i = 0; i < 4; ++i) {
    CHECK(std::abs(a.mean.value()[i] - b.mean.value()[i]) < 1e-6);
    CHECK(std::abs(a.log_var.value()[i] - b.log_var.value()[i]) < 1e-6);
  }

  // swapping two valid timesteps must change the posterior
  Trajectory swapped = traj;
  for (Index c = 0; c < 4; ++c)
    std::swap(swapped.steps[1 * 4 + c], swapped.steps[4 * 4 + c]);
  dist::Gaussian sw = m.encode_trajectory(pc, swapped);
  double diff = 0;
  for (Index i = 0; i < 4; ++i) diff += std::abs(sw.mean.value()[i] - a.mean.value()[i]);
  CHECK(diff > 0.0);

  Trajectory empty = traj;
  empty.mask.assign(6, false);
  CHECK_THROWS_AS(m.encode_trajectory(pc, empty), EmptySequenceError);
}

TEST_CASE("trajectory decoder: lengths, determinism, gripper range") {
  model::ModelConfig cfg;
  cfg.vocabulary = default_vocabulary().words;
  MultimodalVAE m(cfg, 13);
  ad::Graph g;
  nn::ParamContext pc(g, m.params(), false);
  Tensor zt({cfg.codec.d_z});
  for (Index i = 0; i < zt.numel(); ++i) zt[i] = 0.1 * static_cast<double>(i);
  ad::Var z = g.constant(zt);

  ad::Var t13 = m.decode_trajectory(pc, z, 13);
  CHECK(t13.value().shape() == std::vector<Index>{13, 4});
  ad::Var t68 = m.decode_trajectory(pc, z, 68);
  CHECK(t68.value().shape() == std::vector<Index>{68, 4});
  ad::Var again = m.decode_trajectory(pc, z, 13);
  for (Index i = 0; i < t13.value().numel(); ++i) CHECK(t13.value()[i] == again.value()[i]);
  for (Index r = 0; r < 68; ++r) {
    CHECK(t68.value()[r * 4 + 3] >= 0.0);
    CHECK(t68.value()[r * 4 + 3] <= 1.0);
  }
  CHECK_THROWS_AS(m.decode_trajectory(pc, z, 0), ConfigError);
  CHECK_THROWS_AS(m.decode_trajectory(pc, z, 81), ConfigError);
}

TEST_CASE("text codec: determinism, shapes, vocabulary errors") {
  MultimodalVAE m(tiny_config(), 17);
  ad::Graph g;
  nn::ParamContext pc(g, m.params(), false);
  const Index pad = default_vocabulary().pad_id();
  TokenSequence seq{{0, 5, 6, pad}};

  dist::Gaussian a = m.encode_text(pc, seq);
  dist::Gaussian b = m.encode_text(pc, seq);
  CHECK(a.dim() == 4);
  for (Index i = 0; i < 4; ++i) CHECK(a.mean.value()[i] == b.mean.value()[i]);

  // appended PAD must not change the posterior
  TokenSequence padded{{0, 5, 6, pad, pad, pad}};
  dist::Gaussian c = m.encode_text(pc, padded);
  for (Index i = 0; i < 4; ++i) {
    CHECK(std::abs(a.mean.value()[i] - c.mean.value()[i]) < 1e-6);
    CHECK(std::abs(a.log_var.value()[i] - c.log_var.value()[i]) < 1e-6);
  }

  TokenSequence bad{{0, 99}};
  CHECK_THROWS_AS(m.encode_text(pc, bad), VocabularyError);

  Tensor zt({4}, {0.2, 0.1, -0.3, 0.4});
  ad::Var z = g.constant(zt);
  ad::Var logits = m.decode_text(pc, z, 4);
  CHECK(logits.value().shape() == std::vector<Index>{4, 13});
  ad::Var logits2 = m.decode_text(pc, z, 4);
  for (Index i = 0; i < logits.value().numel(); ++i)
    CHECK(logits.value()[i] == logits2.value()[i]);
  CHECK_THROWS_AS(m.decode_text(pc, z, 7), ConfigError);
}

TEST_CASE("encoder outputs satisfy gaussian invariants") {
  MultimodalVAE m(tiny_config(), 23);
  Rng rng(5);
  ad::Graph g;
  nn::ParamContext pc(g, m.params(), false);
  for (int trial = 0; trial < 5; ++trial) {
    ImageTensor img{random_image(rng, 8)};
    dist::Gaussian q = m.encode_image(pc, img);
    CHECK(q.mean.value().all_finite());
    for (Index i = 0; i < q.dim(); ++i) {
      CHECK(q.log_var.value()[i] >= dist::kLogVarMin);
      CHECK(q.log_var.value()[i] <= dist::kLogVarMax);
    }
  }
}

TEST_CASE("composite encode-sample-decode gradients match finite differences") {
  MultimodalVAE m(tiny_config(), 31);
  Rng data_rng(6);
  model::Episode ep = random_episode(data_rng, m.config());
  std::vector<double> eps = {0.3, -0.7, 0.2, 0.9, 0.1, -0.4, 0.8, -0.2, 0.5, 0.0, -0.6, 0.7};

  auto loss_fn = [&](bool with_grads) {
    ad::Graph g;
    nn::ParamContext pc(g, m.params(), with_grads);
    const model::Episode* ptr = &ep;
    auto experts = m.encode_all(pc, std::span<const model::Episode* const>(&ptr, 1));
    std::vector<dist::Gaussian> ex = {experts[0][0], experts[0][1], experts[0][2]};
    dist::Gaussian q = fusion::product_of_experts(
        g, std::span<const dist::Gaussian>(ex), true);
    Tensor noise({4}, {eps[0], eps[1], eps[2], eps[3]});
    ad::Var z = dist::reparam_sample(q, g.constant(noise));
    ad::Var img = m.decode_image_rows(pc, g.reshape(z, {1, 4}));
    ad::Var traj = m.decode_trajectory(pc, z, 6);
    ad::Var logits = m.decode_text(pc, z, 4);
    Tensor img_target({1, 8, 8, 3});
    std::copy(ep.image.data(), ep.image.data() + ep.image.numel(), img_target.data());
    ad::Var l1 = objectives::mse_recon(g, img, img_target);
    ad::Var l2 = objectives::mse_recon(g, traj, ep.traj.steps);
    std::vector<bool> mask(4, true);
    ad::Var l3 = g.cross_entropy_rows(logits, ep.text.tokens, mask, true);
    ad::Var kl = dist::kl_to_standard_normal(q);
    std::vector<ad::Var> parts = {l1, l2, l3, kl};
    ad::Var loss = g.add_n(parts);
    if (with_grads) {
      g.backward(loss);
      pc.harvest();
    }
    return loss.item();
  };

  const double worst = max_param_grad_error(m, loss_fn, 4);
  CHECK(worst < 1e-3);
}
