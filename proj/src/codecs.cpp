#include "multivae/codecs.hpp"

#include <cmath>

namespace multivae::codecs {

Tensor positional_encoding(Index length, Index width) {
  if (width % 2 != 0) throw ConfigError("positional_encoding: width must be even");
  Tensor pe({length, width});
  for (Index t = 0; t < length; ++t) {
    for (Index i = 0; i < width / 2; ++i) {
      const double angle =
          static_cast<double>(t) /
          std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(width));
      pe[t * width + 2 * i] = std::sin(angle);
      pe[t * width + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

namespace {

Tensor conv_init(Rng& rng, Index kh, Index kw, Index cin, Index cout) {
  return nn::xavier_uniform(rng, kh * kw * cin, kh * kw * cout, {kh, kw, cin, cout});
}

Tensor pe_rows(const Tensor& pe, Index length) {
  const Index width = pe.dim(1);
  Tensor out({length, width});
  std::copy(pe.data(), pe.data() + length * width, out.data());
  return out;
}

}  // namespace

// ---------------------------------------------------------------- ImageCodec

ImageCodec::ImageCodec(nn::ParamStore& s, const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
  Index c = 3;
  Index size = cfg.img_size;
  for (std::size_t i = 0; i < cfg.img_enc_channels.size(); ++i) {
    const Index oc = cfg.img_enc_channels[i];
    enc_w_.push_back(s.add("img.enc.conv" + std::to_string(i) + ".w", conv_init(rng, 3, 3, c, oc)));
    enc_b_.push_back(s.add("img.enc.conv" + std::to_string(i) + ".b", Tensor({oc})));
    c = oc;
    size /= 2;
  }
  const Index flat = size * size * c;
  enc_fc_ = nn::Linear::create(s, "img.enc.fc", flat, cfg.img_enc_fc, rng);
  enc_mu_ = nn::Linear::create(s, "img.enc.mu", cfg.img_enc_fc, cfg.d_z, rng);
  enc_lv_ = nn::Linear::create(s, "img.enc.lv", cfg.img_enc_fc, cfg.d_z, rng);

  const Index stages = static_cast<Index>(cfg.img_dec_channels.size()) + 1;
  dec_base_ = cfg.img_size >> stages;
  if (dec_base_ < 1) throw ConfigError("image codec: too many decoder stages for image size");
  dec_fc1_ = nn::Linear::create(s, "img.dec.fc1", cfg.d_z, cfg.img_dec_fc1, rng);
  dec_fc2_ = nn::Linear::create(s, "img.dec.fc2", cfg.img_dec_fc1, cfg.img_dec_fc2, rng);
  dec_fc3_ = nn::Linear::create(s, "img.dec.fc3", cfg.img_dec_fc2,
                                dec_base_ * dec_base_ * cfg.img_dec_base_channels, rng);
  Index dc = cfg.img_dec_base_channels;
  for (std::size_t i = 0; i < cfg.img_dec_channels.size(); ++i) {
    const Index oc = cfg.img_dec_channels[i];
    dec_w_.push_back(s.add("img.dec.conv" + std::to_string(i) + ".w", conv_init(rng, 3, 3, dc, oc)));
    dec_b_.push_back(s.add("img.dec.conv" + std::to_string(i) + ".b", Tensor({oc})));
    dc = oc;
  }
  dec_w_.push_back(s.add("img.dec.out.w", conv_init(rng, 3, 3, dc, 3)));
  dec_b_.push_back(s.add("img.dec.out.b", Tensor({3})));
}

std::pair<ad::Var, ad::Var> ImageCodec::encode_batch(nn::ParamContext& pc, ad::Var images) const {
  ad::Graph& g = pc.graph();
  const Tensor& v = images.value();
  if (v.rank() != 4 || v.dim(1) != cfg_.img_size || v.dim(2) != cfg_.img_size || v.dim(3) != 3)
    throw ShapeError("encode_image: expected [B," + std::to_string(cfg_.img_size) + "," +
                     std::to_string(cfg_.img_size) + ",3], have " + v.shape_str());
  const Index b = v.dim(0);
  ad::Var x = images;
  for (std::size_t i = 0; i < enc_w_.size(); ++i)
    x = g.relu(g.conv2d(x, pc[enc_w_[i]], pc[enc_b_[i]], 2, 1));
  x = g.reshape(x, {b, x.value().numel() / b});
  x = g.relu(enc_fc_.apply(pc, x));
  return {enc_mu_.apply(pc, x), enc_lv_.apply(pc, x)};
}

ad::Var ImageCodec::decode_batch(nn::ParamContext& pc, ad::Var z_rows) const {
  ad::Graph& g = pc.graph();
  const Tensor& v = z_rows.value();
  if (v.rank() != 2 || v.dim(1) != cfg_.d_z)
    throw ShapeError("decode_image: expected [B,D_z], have " + v.shape_str());
  const Index b = v.dim(0);
  ad::Var x = g.relu(dec_fc1_.apply(pc, z_rows));
  x = g.relu(dec_fc2_.apply(pc, x));
  x = g.relu(dec_fc3_.apply(pc, x));
  x = g.reshape(x, {b, dec_base_, dec_base_, cfg_.img_dec_base_channels});
  for (std::size_t i = 0; i < dec_w_.size(); ++i) {
    x = g.upsample2x(x);
    x = g.conv2d(x, pc[dec_w_[i]], pc[dec_b_[i]], 1, 1);
    if (i + 1 < dec_w_.size()) x = g.relu(x);
  }
  return g.sigmoid(x);
}

// ----------------------------------------------------------- TrajectoryCodec

TrajectoryCodec::TrajectoryCodec(nn::ParamStore& s, const CodecConfig& cfg, Rng& rng)
    : cfg_(cfg), pe_(positional_encoding(cfg.t_max, cfg.traj_d_model)) {
  embed_ = nn::Linear::create(s, "traj.embed", 4, cfg.traj_d_model, rng);
  dist_tokens_ =
      s.add("traj.dist_tokens", nn::normal_init(rng, {2, cfg.traj_d_model}, 0.02));
  for (Index i = 0; i < cfg.traj_enc_layers; ++i)
    enc_layers_.push_back(nn::EncoderLayer::create(s, "traj.enc" + std::to_string(i),
                                                   cfg.traj_d_model, cfg.traj_ffn,
                                                   cfg.traj_heads, rng));
  enc_final_ln_ = nn::LayerNorm::create(s, "traj.enc.ln", cfg.traj_d_model);
  mu_head_ = nn::Linear::create(s, "traj.mu", cfg.traj_d_model, cfg.d_z, rng);
  lv_head_ = nn::Linear::create(s, "traj.lv", cfg.traj_d_model, cfg.d_z, rng);

  memory_ = nn::Linear::create(s, "traj.memory", cfg.d_z, cfg.traj_d_model, rng);
  for (Index i = 0; i < cfg.traj_dec_layers; ++i)
    dec_layers_.push_back(nn::DecoderLayer::create(s, "traj.dec" + std::to_string(i),
                                                   cfg.traj_d_model, cfg.traj_ffn,
                                                   cfg.traj_heads, rng));
  dec_final_ln_ = nn::LayerNorm::create(s, "traj.dec.ln", cfg.traj_d_model);
  out_head_ = nn::Linear::create(s, "traj.out", cfg.traj_d_model, 4, rng);
}

dist::Gaussian TrajectoryCodec::encode(nn::ParamContext& pc, const Trajectory& traj) const {
  ad::Graph& g = pc.graph();
  traj.validate(cfg_.t_max);
  const Index tv = traj.valid_count();
  if (tv == 0) throw EmptySequenceError("encode_trajectory: no valid timesteps");
  Tensor steps({tv, 4});
  Index r = 0;
  for (Index t = 0; t < traj.length(); ++t) {
    if (!traj.mask[static_cast<std::size_t>(t)]) continue;
    std::copy(traj.steps.data() + t * 4, traj.steps.data() + (t + 1) * 4, steps.data() + r * 4);
    ++r;
  }
  ad::Var x = embed_.apply(pc, g.constant(std::move(steps)));
  x = g.add(x, g.constant(pe_rows(pe_, tv)));
  std::vector<ad::Var> rows = {pc[dist_tokens_], x};
  x = g.concat_rows(rows);
  for (const auto& layer : enc_layers_) x = layer.apply(pc, x);
  x = enc_final_ln_.apply(pc, x);
  ad::Var mu = g.reshape(mu_head_.apply(pc, g.slice_rows(x, 0, 1)), {cfg_.d_z});
  ad::Var lv = g.reshape(lv_head_.apply(pc, g.slice_rows(x, 1, 1)), {cfg_.d_z});
  return dist::make_gaussian(g, mu, lv);
}

ad::Var TrajectoryCodec::decode(nn::ParamContext& pc, ad::Var z, Index length) const {
  ad::Graph& g = pc.graph();
  if (length < 1 || length > cfg_.t_max)
    throw ConfigError("decode_trajectory: length outside [1, T_max]");
  if (z.value().numel() != cfg_.d_z) throw ShapeError("decode_trajectory: z length mismatch");
  ad::Var memory = memory_.apply(pc, g.reshape(z, {1, cfg_.d_z}));
  ad::Var x = g.constant(pe_rows(pe_, length));
  for (const auto& layer : dec_layers_) x = layer.apply(pc, x, memory);
  x = dec_final_ln_.apply(pc, x);
  ad::Var out = out_head_.apply(pc, x);
  ad::Var xyz = g.slice_cols(out, 0, 3);
  ad::Var grip = g.sigmoid(g.slice_cols(out, 3, 1));
  std::vector<ad::Var> cols = {xyz, grip};
  return g.concat_cols(cols);
}

// ----------------------------------------------------------------- TextCodec

TextCodec::TextCodec(nn::ParamStore& s, const CodecConfig& cfg, Index vocab_size, Index pad_id,
                     Rng& rng)
    : cfg_(cfg),
      vocab_size_(vocab_size),
      pad_id_(pad_id),
      pe_(positional_encoding(cfg.l_max, cfg.text_d_model)) {
  embed_table_ =
      s.add("text.embed", nn::normal_init(rng, {vocab_size, cfg.text_embed_width}, 0.5));
  embed_proj_ = nn::Linear::create(s, "text.proj", cfg.text_embed_width, cfg.text_d_model, rng);
  dist_tokens_ = s.add("text.dist_tokens", nn::normal_init(rng, {2, cfg.text_d_model}, 0.02));
  for (Index i = 0; i < cfg.text_enc_layers; ++i)
    enc_layers_.push_back(nn::EncoderLayer::create(s, "text.enc" + std::to_string(i),
                                                   cfg.text_d_model, cfg.text_ffn,
                                                   cfg.text_heads, rng));
  enc_final_ln_ = nn::LayerNorm::create(s, "text.enc.ln", cfg.text_d_model);
  mu_head_ = nn::Linear::create(s, "text.mu", cfg.text_d_model, cfg.d_z, rng);
  lv_head_ = nn::Linear::create(s, "text.lv", cfg.text_d_model, cfg.d_z, rng);

  memory_ = nn::Linear::create(s, "text.memory", cfg.d_z, cfg.text_d_model, rng);
  for (Index i = 0; i < cfg.text_dec_layers; ++i)
    dec_layers_.push_back(nn::DecoderLayer::create(s, "text.dec" + std::to_string(i),
                                                   cfg.text_d_model, cfg.text_ffn,
                                                   cfg.text_heads, rng));
  dec_final_ln_ = nn::LayerNorm::create(s, "text.dec.ln", cfg.text_d_model);
  out_head_ = nn::Linear::create(s, "text.out", cfg.text_d_model, vocab_size, rng);
}

dist::Gaussian TextCodec::encode(nn::ParamContext& pc, const TokenSequence& seq) const {
  ad::Graph& g = pc.graph();
  const Index l = static_cast<Index>(seq.tokens.size());
  if (l < 1) throw EmptySequenceError("encode_text: empty token sequence");
  if (l > cfg_.l_max) throw ShapeError("encode_text: sequence longer than L_max");
  for (Index t : seq.tokens)
    if (t < 0 || t >= vocab_size_) throw VocabularyError("encode_text: token out of vocabulary");
  ad::Var emb = g.embedding(pc[embed_table_], seq.tokens);
  ad::Var x = embed_proj_.apply(pc, emb);
  x = g.add(x, g.constant(pe_rows(pe_, l)));
  std::vector<ad::Var> rows = {pc[dist_tokens_], x};
  x = g.concat_rows(rows);
  // PAD positions stay in the sequence but are masked out as attention keys.
  std::vector<bool> key_mask(static_cast<std::size_t>(2 + l), true);
  for (Index i = 0; i < l; ++i)
    key_mask[static_cast<std::size_t>(2 + i)] = seq.tokens[static_cast<std::size_t>(i)] != pad_id_;
  for (const auto& layer : enc_layers_) x = layer.apply(pc, x, &key_mask);
  x = enc_final_ln_.apply(pc, x);
  ad::Var mu = g.reshape(mu_head_.apply(pc, g.slice_rows(x, 0, 1)), {cfg_.d_z});
  ad::Var lv = g.reshape(lv_head_.apply(pc, g.slice_rows(x, 1, 1)), {cfg_.d_z});
  return dist::make_gaussian(g, mu, lv);
}

ad::Var TextCodec::decode(nn::ParamContext& pc, ad::Var z, Index length) const {
  ad::Graph& g = pc.graph();
  if (length < 1 || length > cfg_.l_max)
    throw ConfigError("decode_text: length outside [1, L_max]");
  if (z.value().numel() != cfg_.d_z) throw ShapeError("decode_text: z length mismatch");
  ad::Var memory = memory_.apply(pc, g.reshape(z, {1, cfg_.d_z}));
  ad::Var x = g.constant(pe_rows(pe_, length));
  for (const auto& layer : dec_layers_) x = layer.apply(pc, x, memory);
  x = dec_final_ln_.apply(pc, x);
  return out_head_.apply(pc, x);
}

}  // namespace multivae::codecs
