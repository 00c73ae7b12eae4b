#include "vqab/nn_blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace vqab {

namespace op = ops;

Tensor ParamStore::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : entries_)
    if (n == name) throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("ParamStore: no parameter named " + name);
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

Tensor init_conv_weight(int out_ch, int in_ch, int kh, int kw, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * kh * kw);
  return Tensor::uniform({out_ch, in_ch, kh, kw}, -bound, bound, rng);
}

int norm_groups(int channels) { return channels < 32 ? channels : 32; }

Conv2dLayer::Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int padding, ParamStore& params,
                         const std::string& prefix, Rng& rng)
    : stride_(stride), padding_(padding) {
  weight_ = params.add(prefix + ".weight", init_conv_weight(out_ch, in_ch, kernel, kernel, rng));
  bias_ = params.add(prefix + ".bias", Tensor::zeros({out_ch}));
}

Tensor Conv2dLayer::forward(const Tensor& x) const { return op::conv2d(x, weight_, bias_, stride_, padding_); }

GroupNormLayer::GroupNormLayer(int channels, ParamStore& params, const std::string& prefix, double eps)
    : groups_(norm_groups(channels)), eps_(eps) {
  gamma_ = params.add(prefix + ".gamma", Tensor::full({channels}, 1.0));
  beta_ = params.add(prefix + ".beta", Tensor::zeros({channels}));
}

Tensor GroupNormLayer::forward(const Tensor& x) const { return op::group_norm(x, groups_, gamma_, beta_, eps_); }

ResidualBlock::ResidualBlock(int in_ch, int out_ch, ParamStore& params, const std::string& prefix, Rng& rng)
    : norm1_(in_ch, params, prefix + ".norm1"),
      norm2_(out_ch, params, prefix + ".norm2"),
      conv1_(in_ch, out_ch, 3, 1, 1, params, prefix + ".conv1", rng),
      conv2_(out_ch, out_ch, 3, 1, 1, params, prefix + ".conv2", rng),
      has_shortcut_(in_ch != out_ch) {
  if (has_shortcut_) shortcut_ = Conv2dLayer(in_ch, out_ch, 1, 1, 0, params, prefix + ".shortcut", rng);
}

Tensor ResidualBlock::forward(const Tensor& x) const {
  Tensor h = conv1_.forward(op::swish(norm1_.forward(x)));
  h = conv2_.forward(op::swish(norm2_.forward(h)));
  Tensor skip = has_shortcut_ ? shortcut_.forward(x) : x;
  return op::add(h, skip);
}

DownsampleBlock::DownsampleBlock(int channels, ParamStore& params, const std::string& prefix, Rng& rng)
    : conv_(channels, channels, 3, 2, 0, params, prefix + ".conv", rng) {}

Tensor DownsampleBlock::forward(const Tensor& x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0)
    throw std::invalid_argument("DownsampleBlock: spatial size must be even, got " + shape_str(s));
  return conv_.forward(op::pad2d(x, 0, 1, 0, 1));
}

UpsampleBlock::UpsampleBlock(int channels, ParamStore& params, const std::string& prefix, Rng& rng)
    : conv_(channels, channels, 3, 1, 1, params, prefix + ".conv", rng) {}

Tensor UpsampleBlock::forward(const Tensor& x) const { return conv_.forward(op::nearest_upsample2x(x)); }

NonLocalBlock::NonLocalBlock(int channels, ParamStore& params, const std::string& prefix, Rng& rng)
    : norm_(channels, params, prefix + ".norm"),
      q_(channels, channels, 1, 1, 0, params, prefix + ".q", rng),
      k_(channels, channels, 1, 1, 0, params, prefix + ".k", rng),
      v_(channels, channels, 1, 1, 0, params, prefix + ".v", rng),
      proj_(channels, channels, 1, 1, 0, params, prefix + ".proj", rng),
      channels_(channels) {}

Tensor NonLocalBlock::attention_weights(const Tensor& x) const {
  const Shape& s = x.shape();
  int N = s[0], C = s[1], H = s[2], W = s[3];
  int P = H * W;
  Tensor h = norm_.forward(x);
  Tensor q = op::reshape(q_.forward(h), {N, C, P});
  Tensor k = op::reshape(k_.forward(h), {N, C, P});
  Tensor scores = op::scale(op::batched_matmul(op::permute(q, {0, 2, 1}), k), 1.0 / std::sqrt(double(channels_)));
  return op::softmax(scores, 2);
}

Tensor NonLocalBlock::forward(const Tensor& x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != channels_)
    throw std::invalid_argument("NonLocalBlock: expected " + std::to_string(channels_) + " channels, got " +
                                shape_str(s));
  int N = s[0], C = s[1], H = s[2], W = s[3];
  int P = H * W;
  Tensor h = norm_.forward(x);
  Tensor q = op::reshape(q_.forward(h), {N, C, P});
  Tensor k = op::reshape(k_.forward(h), {N, C, P});
  Tensor v = op::reshape(v_.forward(h), {N, C, P});
  Tensor scores = op::scale(op::batched_matmul(op::permute(q, {0, 2, 1}), k), 1.0 / std::sqrt(double(channels_)));
  Tensor attn = op::softmax(scores, 2);                          // (N, P, P), rows sum to 1
  Tensor out = op::batched_matmul(attn, op::permute(v, {0, 2, 1}));  // (N, P, C)
  out = op::reshape(op::permute(out, {0, 2, 1}), {N, C, H, W});
  return op::add(proj_.forward(out), x);
}

}  // namespace vqab
