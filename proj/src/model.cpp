#include "multivae/model.hpp"

#include <json.hpp>

namespace multivae::model {

using nlohmann::json;

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::mvae: return "mvae";
    case ModelKind::mmvae: return "mmvae";
    case ModelKind::mopoe: return "mopoe";
  }
  throw ConfigError("unknown model kind");
}

std::string to_string(ReconKind k) {
  return k == ReconKind::mse ? "mse" : "sigma_vae";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mvae") return ModelKind::mvae;
  if (s == "mmvae") return ModelKind::mmvae;
  if (s == "mopoe") return ModelKind::mopoe;
  throw ConfigError("unknown model kind: " + s);
}

ReconKind recon_kind_from_string(const std::string& s) {
  if (s == "mse") return ReconKind::mse;
  if (s == "sigma_vae" || s == "sigma") return ReconKind::sigma_vae;
  throw ConfigError("unknown recon kind: " + s);
}

void ModelConfig::validate() const {
  if (codec.d_z < 1) throw ConfigError("model config: d_z must be >= 1");
  if (iwae_k < 1) throw ConfigError("model config: iwae K must be >= 1");
  if (sigma_min_sq <= 0.0) throw ConfigError("model config: sigma_min_sq must be > 0");
  if (vocabulary.empty()) throw ConfigError("model config: vocabulary required");
  bool has_pad = false;
  for (const auto& w : vocabulary) has_pad = has_pad || w == "PAD";
  if (!has_pad) throw ConfigError("model config: vocabulary must contain PAD");
}

namespace {

json codec_to_json(const codecs::CodecConfig& c) {
  return json{{"d_z", c.d_z},
              {"img_size", c.img_size},
              {"img_enc_channels", c.img_enc_channels},
              {"img_enc_fc", c.img_enc_fc},
              {"img_dec_fc1", c.img_dec_fc1},
              {"img_dec_fc2", c.img_dec_fc2},
              {"img_dec_base_channels", c.img_dec_base_channels},
              {"img_dec_channels", c.img_dec_channels},
              {"traj_d_model", c.traj_d_model},
              {"traj_ffn", c.traj_ffn},
              {"traj_heads", c.traj_heads},
              {"traj_enc_layers", c.traj_enc_layers},
              {"traj_dec_layers", c.traj_dec_layers},
              {"t_max", c.t_max},
              {"text_embed_width", c.text_embed_width},
              {"text_d_model", c.text_d_model},
              {"text_ffn", c.text_ffn},
              {"text_heads", c.text_heads},
              {"text_enc_layers", c.text_enc_layers},
              {"text_dec_layers", c.text_dec_layers},
              {"l_max", c.l_max}};
}

codecs::CodecConfig codec_from_json(const json& j) {
  codecs::CodecConfig c;
  c.d_z = j.at("d_z");
  c.img_size = j.at("img_size");
  c.img_enc_channels = j.at("img_enc_channels").get<std::vector<Index>>();
  c.img_enc_fc = j.at("img_enc_fc");
  c.img_dec_fc1 = j.at("img_dec_fc1");
  c.img_dec_fc2 = j.at("img_dec_fc2");
  c.img_dec_base_channels = j.at("img_dec_base_channels");
  c.img_dec_channels = j.at("img_dec_channels").get<std::vector<Index>>();
  c.traj_d_model = j.at("traj_d_model");
  c.traj_ffn = j.at("traj_ffn");
  c.traj_heads = j.at("traj_heads");
  c.traj_enc_layers = j.at("traj_enc_layers");
  c.traj_dec_layers = j.at("traj_dec_layers");
  c.t_max = j.at("t_max");
  c.text_embed_width = j.at("text_embed_width");
  c.text_d_model = j.at("text_d_model");
  c.text_ffn = j.at("text_ffn");
  c.text_heads = j.at("text_heads");
  c.text_enc_layers = j.at("text_enc_layers");
  c.text_dec_layers = j.at("text_dec_layers");
  c.l_max = j.at("l_max");
  return c;
}

}  // namespace

std::string ModelConfig::to_json() const {
  json j{{"model_kind", model::to_string(model_kind)},
         {"recon_image", model::to_string(recon_image)},
         {"recon_traj", model::to_string(recon_traj)},
         {"beta", beta},
         {"iwae_k", iwae_k},
         {"sigma_min_sq", sigma_min_sq},
         {"poe_include_prior", poe_include_prior},
         {"mopoe_include_empty", mopoe_include_empty},
         {"codec", codec_to_json(codec)},
         {"vocabulary", vocabulary}};
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.model_kind = model_kind_from_string(j.at("model_kind"));
  c.recon_image = recon_kind_from_string(j.at("recon_image"));
  c.recon_traj = recon_kind_from_string(j.at("recon_traj"));
  c.beta = j.at("beta");
  c.iwae_k = j.at("iwae_k");
  c.sigma_min_sq = j.at("sigma_min_sq");
  c.poe_include_prior = j.at("poe_include_prior");
  c.mopoe_include_empty = j.at("mopoe_include_empty");
  c.codec = codec_from_json(j.at("codec"));
  c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  c.validate();
  return c;
}

MultimodalVAE::MultimodalVAE(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const Vocabulary vocab = cfg_.vocab();
  Rng rng_img = derive_rng(init_seed, "init.image");
  Rng rng_traj = derive_rng(init_seed, "init.traj");
  Rng rng_text = derive_rng(init_seed, "init.text");
  image_ = std::make_unique<codecs::ImageCodec>(params_, cfg_.codec, rng_img);
  traj_ = std::make_unique<codecs::TrajectoryCodec>(params_, cfg_.codec, rng_traj);
  text_ = std::make_unique<codecs::TextCodec>(params_, cfg_.codec, vocab.size(), vocab.pad_id(),
                                              rng_text);
}

Tensor stack_images(std::span<const Episode* const> batch) {
  if (batch.empty()) throw ShapeError("stack_images: empty batch");
  const Tensor& first = batch[0]->image;
  Tensor out({static_cast<Index>(batch.size()), first.dim(0), first.dim(1), first.dim(2)});
  const Index per = first.numel();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!batch[b]->image.same_shape(first)) throw ShapeError("stack_images: ragged image shapes");
    std::copy(batch[b]->image.data(), batch[b]->image.data() + per, out.data() + b * per);
  }
  return out;
}

std::vector<std::array<dist::Gaussian, 3>> MultimodalVAE::encode_all(
    nn::ParamContext& pc, std::span<const Episode* const> batch) const {
  ad::Graph& g = pc.graph();
  const Index b = static_cast<Index>(batch.size());
  auto [img_mu, img_lv] = image_->encode_batch(pc, g.constant(stack_images(batch)));
  std::vector<std::array<dist::Gaussian, 3>> out;
  out.reserve(batch.size());
  const Index dz = cfg_.codec.d_z;
  for (Index i = 0; i < b; ++i) {
    dist::Gaussian img = dist::make_gaussian(
        g, g.reshape(g.slice_rows(img_mu, i, 1), {dz}),
        g.reshape(g.slice_rows(img_lv, i, 1), {dz}));
    dist::Gaussian traj = traj_->encode(pc, batch[static_cast<std::size_t>(i)]->traj);
    dist::Gaussian text = text_->encode(pc, batch[static_cast<std::size_t>(i)]->text);
    out.push_back({img, traj, text});
  }
  return out;
}

dist::Gaussian MultimodalVAE::encode_image(nn::ParamContext& pc, const ImageTensor& img) const {
  ad::Graph& g = pc.graph();
  img.validate();
  Tensor batch({1, img.pixels.dim(0), img.pixels.dim(1), 3});
  std::copy(img.pixels.data(), img.pixels.data() + img.pixels.numel(), batch.data());
  auto [mu, lv] = image_->encode_batch(pc, g.constant(std::move(batch)));
  const Index dz = cfg_.codec.d_z;
  return dist::make_gaussian(g, g.reshape(mu, {dz}), g.reshape(lv, {dz}));
}

dist::Gaussian MultimodalVAE::encode_trajectory(nn::ParamContext& pc,
                                                const Trajectory& traj) const {
  return traj_->encode(pc, traj);
}

dist::Gaussian MultimodalVAE::encode_text(nn::ParamContext& pc, const TokenSequence& seq) const {
  return text_->encode(pc, seq);
}

ad::Var MultimodalVAE::decode_image_rows(nn::ParamContext& pc, ad::Var z_rows) const {
  return image_->decode_batch(pc, z_rows);
}

ad::Var MultimodalVAE::decode_trajectory(nn::ParamContext& pc, ad::Var z, Index length) const {
  return traj_->decode(pc, z, length);
}

ad::Var MultimodalVAE::decode_text(nn::ParamContext& pc, ad::Var z, Index length) const {
  return text_->decode(pc, z, length);
}

}  // namespace multivae::model
