#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vqab/codebook.hpp"
#include "vqab/nn_blocks.hpp"
#include "vqab/pos_encoding.hpp"

namespace vqab {

struct ModelConfig {
  int image_size = 32;
  int in_channels = 3;
  int base_channels = 16;
  std::vector<int> channel_multipliers = {1, 2, 2};  // one per resolution stage
  int num_downsamples = 2;
  int latent_dim = 8;
  int codebook_size = 32;
  bool use_positional_encoding = false;
  std::vector<int> attn_at_resolutions;  // empty selects the lowest resolution
  double dropout_rate = 0.1;
  bool small_network = false;

  /// Stage list after the small_network trim.
  std::vector<int> effective_multipliers() const;
  int effective_downsamples() const;
  int latent_size() const;  // image_size / 2^downsamples

  /// Resolutions that get a non-local block.
  std::vector<int> attention_resolutions() const;

  void validate() const;
};

/// conv-in -> optional positional encoding -> {residual x2, optional attn,
/// downsample} per stage -> mid {residual, attn, residual} -> norm -> swish
/// -> conv to latent_dim.
class Encoder {
 public:
  Encoder(const ModelConfig& config, ParamStore& params, Rng& rng);
  Tensor forward(const Tensor& image, const ForwardCtx& ctx) const;

 private:
  ModelConfig config_;
  Conv2dLayer conv_in_;
  std::unique_ptr<PositionalEncoding2D> pos_enc_;
  struct Stage {
    std::vector<ResidualBlock> residuals;
    std::unique_ptr<NonLocalBlock> attn;
    std::unique_ptr<DownsampleBlock> down;
  };
  std::vector<Stage> stages_;
  ResidualBlock mid1_, mid2_;
  NonLocalBlock mid_attn_;
  GroupNormLayer norm_out_;
  Conv2dLayer conv_out_;
};

/// Mirror of the encoder: conv-in -> positional encoding (when enabled) ->
/// mid {residual, attn, residual} -> {residual x2, optional attn, upsample}
/// per stage in reverse, with a second positional encoding immediately
/// before the first upsample -> norm -> swish -> conv to 3 channels.
class Decoder {
 public:
  Decoder(const ModelConfig& config, ParamStore& params, Rng& rng);
  Tensor forward(const Tensor& z_q, const ForwardCtx& ctx) const;
  /// Forward that also exposes the input of the final convolution, for the
  /// adaptive loss-balancing weight.
  Tensor forward(const Tensor& z_q, const ForwardCtx& ctx, Tensor* penultimate) const;

  Tensor last_layer_weight() const { return conv_out_.weight(); }
  Tensor last_layer_bias() const { return conv_out_.bias(); }
  Tensor conv_out(const Tensor& penultimate) const { return conv_out_.forward(penultimate); }

 private:
  ModelConfig config_;
  Conv2dLayer conv_in_;
  std::unique_ptr<PositionalEncoding2D> pos_enc_in_, pos_enc_mid_;
  ResidualBlock mid1_, mid2_;
  NonLocalBlock mid_attn_;
  struct Stage {
    std::vector<ResidualBlock> residuals;
    std::unique_ptr<NonLocalBlock> attn;
    std::unique_ptr<UpsampleBlock> up;
  };
  std::vector<Stage> stages_;  // ordered from lowest to full resolution
  GroupNormLayer norm_out_;
  Conv2dLayer conv_out_;
};

/// Encoder + codebook + decoder owned together with their parameter store.
class VQModel {
 public:
  VQModel(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Codebook& codebook() { return *codebook_; }
  const Encoder& encoder() const { return *encoder_; }
  const Decoder& decoder() const { return *decoder_; }

  Tensor encode(const Tensor& image, const ForwardCtx& ctx) const;
  Tensor decode(const Tensor& z_q, const ForwardCtx& ctx) const;
  Tensor decode(const Tensor& z_q, const ForwardCtx& ctx, Tensor* penultimate) const;

  /// encode -> quantize -> decode with the straight-through path.
  struct Reconstruction {
    Tensor z;
    QuantizationResult quant;
    Tensor x_hat;
    Tensor penultimate;
  };
  Reconstruction reconstruct(const Tensor& image, const ForwardCtx& ctx);

  int64_t parameter_count() const;

 private:
  ModelConfig config_;
  ParamStore params_;
  std::unique_ptr<Codebook> codebook_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
};

}  // namespace vqab
