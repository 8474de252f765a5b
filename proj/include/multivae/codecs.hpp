#pragma once

#include <utility>
#include <vector>

#include "multivae/distributions.hpp"
#include "multivae/layers.hpp"
#include "multivae/types.hpp"

namespace multivae::codecs {

/// Sinusoidal positional encoding: row t has sin(t / 10000^(2i/width)) in
/// column 2i and cos of the same angle in column 2i+1.
Tensor positional_encoding(Index length, Index width);

/// Widths and depths of the three codecs. Defaults are desk-scale; the paper's
/// larger settings (8 transformer layers, 1024 hidden units, a deep image
/// backbone) are reachable by raising these numbers in the run config.
struct CodecConfig {
  Index d_z = 12;

  Index img_size = kImageSize;
  std::vector<Index> img_enc_channels = {6, 12, 16, 24};  // stride-2 conv blocks
  Index img_enc_fc = 64;
  Index img_dec_fc1 = 128;
  Index img_dec_fc2 = 256;
  Index img_dec_base_channels = 12;
  std::vector<Index> img_dec_channels = {8, 4};  // hidden conv outs; final conv emits RGB

  Index traj_d_model = 32;
  Index traj_ffn = 128;
  Index traj_heads = 2;
  Index traj_enc_layers = 2;
  Index traj_dec_layers = 2;
  Index t_max = kDefaultTMax;

  Index text_embed_width = 2;
  Index text_d_model = 24;
  Index text_ffn = 96;
  Index text_heads = 2;
  Index text_enc_layers = 1;
  Index text_dec_layers = 1;
  Index l_max = kDefaultLMax;
};

class ImageCodec {
 public:
  ImageCodec(nn::ParamStore& store, const CodecConfig& cfg, Rng& rng);

  /// images: [B,H,W,3] -> (mean, log_var), each [B, D_z] (not yet clamped).
  std::pair<ad::Var, ad::Var> encode_batch(nn::ParamContext& pc, ad::Var images) const;

  /// z rows: [B, D_z] -> [B,H,W,3] mean image in [0,1].
  ad::Var decode_batch(nn::ParamContext& pc, ad::Var z_rows) const;

 private:
  CodecConfig cfg_;
  std::vector<Index> enc_w_, enc_b_;  // conv params per block
  nn::Linear enc_fc_, enc_mu_, enc_lv_;
  nn::Linear dec_fc1_, dec_fc2_, dec_fc3_;
  std::vector<Index> dec_w_, dec_b_;
  Index dec_base_ = 0;
};

class TrajectoryCodec {
 public:
  TrajectoryCodec(nn::ParamStore& store, const CodecConfig& cfg, Rng& rng);

  dist::Gaussian encode(nn::ParamContext& pc, const Trajectory& traj) const;
  ad::Var decode(nn::ParamContext& pc, ad::Var z, Index length) const;  // [T,4]

 private:
  CodecConfig cfg_;
  Tensor pe_;
  nn::Linear embed_, mu_head_, lv_head_, memory_, out_head_;
  Index dist_tokens_ = -1;
  std::vector<nn::EncoderLayer> enc_layers_;
  std::vector<nn::DecoderLayer> dec_layers_;
  nn::LayerNorm enc_final_ln_, dec_final_ln_;
};

class TextCodec {
 public:
  TextCodec(nn::ParamStore& store, const CodecConfig& cfg, Index vocab_size, Index pad_id,
            Rng& rng);

  dist::Gaussian encode(nn::ParamContext& pc, const TokenSequence& seq) const;
  ad::Var decode(nn::ParamContext& pc, ad::Var z, Index length) const;  // [L,V] logits

 private:
  CodecConfig cfg_;
  Index vocab_size_ = 0;
  Index pad_id_ = 0;
  Tensor pe_;
  Index embed_table_ = -1;
  nn::Linear embed_proj_, mu_head_, lv_head_, memory_, out_head_;
  Index dist_tokens_ = -1;
  std::vector<nn::EncoderLayer> enc_layers_;
  std::vector<nn::DecoderLayer> dec_layers_;
  nn::LayerNorm enc_final_ln_, dec_final_ln_;
};

}  // namespace multivae::codecs
