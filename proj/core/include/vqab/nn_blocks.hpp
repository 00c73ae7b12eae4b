#pragma once

#include <string>
#include <vector>

#include "vqab/ops.hpp"
#include "vqab/tensor.hpp"

namespace vqab {

/// Named, ordered collection of trainable tensors. Registration enforces
/// unique names so every parameter is visited exactly once by the optimizer
/// walk and the checkpoint writer.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  Tensor find(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Weight init: centered uniform scaled by 1/sqrt(fan_in), zero bias.
Tensor init_conv_weight(int out_ch, int in_ch, int kh, int kw, Rng& rng);

/// Group count for normalization: 32, clamped to the channel count.
int norm_groups(int channels);

struct ForwardCtx {
  bool train = false;
  Rng* rng = nullptr;
};

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int padding, ParamStore& params,
              const std::string& prefix, Rng& rng);
  Tensor forward(const Tensor& x) const;
  Tensor weight() const { return weight_; }
  Tensor bias() const { return bias_; }

 private:
  Tensor weight_, bias_;
  int stride_ = 1, padding_ = 0;
};

class GroupNormLayer {
 public:
  GroupNormLayer() = default;
  GroupNormLayer(int channels, ParamStore& params, const std::string& prefix, double eps = 1e-6);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor gamma_, beta_;
  int groups_ = 1;
  double eps_ = 1e-6;
};

/// groupnorm -> swish -> conv3x3 -> groupnorm -> swish -> conv3x3, plus a
/// skip path (identity when channels match, 1x1 conv otherwise).
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(int in_ch, int out_ch, ParamStore& params, const std::string& prefix, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  GroupNormLayer norm1_, norm2_;
  Conv2dLayer conv1_, conv2_, shortcut_;
  bool has_shortcut_ = false;
};

/// Strided 3x3 convolution with (0,1,0,1) pre-padding: exact halving.
class DownsampleBlock {
 public:
  DownsampleBlock() = default;
  DownsampleBlock(int channels, ParamStore& params, const std::string& prefix, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv2dLayer conv_;
};

/// Nearest-neighbor x2 upsampling followed by a 3x3 convolution.
class UpsampleBlock {
 public:
  UpsampleBlock() = default;
  UpsampleBlock(int channels, ParamStore& params, const std::string& prefix, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv2dLayer conv_;
};

/// Single-head self-attention over all spatial positions, scaled by
/// 1/sqrt(C), with an output projection and residual add.
class NonLocalBlock {
 public:
  NonLocalBlock() = default;
  NonLocalBlock(int channels, ParamStore& params, const std::string& prefix, Rng& rng);
  Tensor forward(const Tensor& x) const;
  /// Attention weights for the given input, shape (N, H*W, H*W).
  Tensor attention_weights(const Tensor& x) const;

 private:
  GroupNormLayer norm_;
  Conv2dLayer q_, k_, v_, proj_;
  int channels_ = 0;
};

}  // namespace vqab
