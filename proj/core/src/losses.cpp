#include "vqab/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "vqab/ops.hpp"

namespace vqab {

namespace op = ops;

void LossWeights::validate() const {
  if (beta < 0 || perceptual_factor < 0 || rec_factor < 0 || disc_factor < 0)
    throw std::invalid_argument("LossWeights: factors must be non-negative");
  if (lambda_eps <= 0) throw std::invalid_argument("LossWeights: lambda_eps must be positive");
  if (lambda_clamp_max < 0 || lambda_scale < 0)
    throw std::invalid_argument("LossWeights: lambda clamp and scale must be non-negative");
  if (disc_start_step < 0) throw std::invalid_argument("LossWeights: disc_start_step must be non-negative");
}

// LPIPS-convention input normalization constants.
namespace {
const std::vector<double> kScalingShift = {-0.030, -0.088, -0.188};
const std::vector<double> kScalingScale = {0.458, 0.448, 0.450};
}  // namespace

RandomConvExtractor::RandomConvExtractor(uint64_t seed) {
  Rng rng(seed);
  auto make = [&](int in_ch, int out_ch, int stride) {
    Layer l;
    l.weight = init_conv_weight(out_ch, in_ch, 3, 3, rng);
    l.bias = Tensor::uniform({out_ch}, -0.1, 0.1, rng);
    l.stride = stride;
    return l;
  };
  layers_.push_back(make(3, 8, 1));
  layers_.push_back(make(8, 16, 2));
  layers_.push_back(make(16, 16, 2));
  layers_.push_back(make(16, 16, 2));
}

std::vector<Tensor> RandomConvExtractor::features(const Tensor& images) const {
  std::vector<Tensor> out;
  Tensor h = images;
  for (const Layer& l : layers_) {
    h = op::conv2d(h, l.weight, l.bias, l.stride, 1);
    out.push_back(h);
    h = op::swish(h);
  }
  return out;
}

PatchDiscriminator::PatchDiscriminator(uint64_t seed, int in_channels, int base_channels) {
  Rng rng(seed);
  conv1_ = Conv2dLayer(in_channels, base_channels, 4, 2, 1, params_, "disc.conv1", rng);
  conv2_ = Conv2dLayer(base_channels, base_channels * 2, 4, 2, 1, params_, "disc.conv2", rng);
  conv3_ = Conv2dLayer(base_channels * 2, 1, 3, 1, 1, params_, "disc.conv3", rng);
}

Tensor PatchDiscriminator::forward(const Tensor& images) const {
  Tensor h = op::swish(conv1_.forward(images));
  h = op::swish(conv2_.forward(h));
  return conv3_.forward(h);
}

Tensor reconstruction_l1(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape())
    throw std::invalid_argument("reconstruction_l1: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(x_hat.shape()));
  return op::mean(op::abs(op::sub(x, x_hat)));
}

Tensor reconstruction_mse(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape())
    throw std::invalid_argument("reconstruction_mse: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(x_hat.shape()));
  Tensor d = op::sub(x, x_hat);
  return op::mean(op::mul(d, d));
}

Tensor vq_loss(const Tensor& x, const Tensor& x_hat, const Tensor& commitment, const Tensor& codebook_term,
               const LossWeights& weights) {
  Tensor rec = reconstruction_mse(x, x_hat);
  return op::add(rec, op::add(codebook_term, op::scale(commitment, weights.beta)));
}

Tensor perceptual_distance(const Tensor& x, const Tensor& x_hat, const FeatureExtractor& extractor) {
  if (x.shape() != x_hat.shape())
    throw std::invalid_argument("perceptual_distance: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(x_hat.shape()));
  Tensor xs = op::channel_affine(x, kScalingShift, kScalingScale);
  Tensor ys = op::channel_affine(x_hat, kScalingShift, kScalingScale);
  std::vector<Tensor> fx = extractor.features(xs);
  std::vector<Tensor> fy = extractor.features(ys);
  if (fx.size() != fy.size()) throw std::invalid_argument("perceptual_distance: extractor layer count mismatch");
  Tensor total;
  for (size_t i = 0; i < fx.size(); ++i) {
    if (fx[i].shape() != fy[i].shape())
      throw std::invalid_argument("perceptual_distance: layer " + std::to_string(i) + " shape mismatch " +
                                  shape_str(fx[i].shape()) + " vs " + shape_str(fy[i].shape()));
    Tensor d = op::sub(op::channel_l2_normalize(fx[i]), op::channel_l2_normalize(fy[i]));
    Tensor layer = op::mean(op::mul(d, d));
    total = total.defined() ? op::add(total, layer) : layer;
  }
  return total;
}

Tensor generator_adversarial_loss(const Tensor& disc_fake_logits) {
  return op::neg(op::mean(disc_fake_logits));
}

Tensor discriminator_hinge_loss(const Tensor& real_logits, const Tensor& fake_logits) {
  Tensor real_term = op::mean(op::relu(op::add_scalar(op::neg(real_logits), 1.0)));
  Tensor fake_term = op::mean(op::relu(op::add_scalar(fake_logits, 1.0)));
  return op::scale(op::add(real_term, fake_term), 0.5);
}

namespace {
double grad_norm_of(const std::function<Tensor()>& loss_fn, const Tensor& weight) {
  TapeScope scope;
  Tensor loss = loss_fn();
  scope.backward(loss);
  double ss = 0.0;
  for (double g : weight.grad()) ss += g * g;
  return std::sqrt(ss);
}
}  // namespace

double calculate_lambda(const std::function<Tensor()>& perceptual_rec_loss, const std::function<Tensor()>& gan_loss,
                        const Tensor& last_layer_weight, const LossWeights& weights) {
  if (!last_layer_weight.defined()) throw std::invalid_argument("calculate_lambda: missing last-layer weight");
  Tensor w = last_layer_weight;
  std::vector<double> saved = w.data()->grad;  // preserve training gradients
  w.zero_grad();
  double rec_norm = grad_norm_of(perceptual_rec_loss, w);
  w.zero_grad();
  double gan_norm = grad_norm_of(gan_loss, w);
  w.data()->grad = std::move(saved);

  double lambda = rec_norm / (gan_norm + weights.lambda_eps);
  if (lambda > weights.lambda_clamp_max) lambda = weights.lambda_clamp_max;
  if (lambda < 0) lambda = 0;
  return lambda * weights.lambda_scale;
}

double LossBreakdown::recompute_total() const {
  return perceptual_rec + vq_core + adopted_disc_factor * lambda_value * gan_generator;
}

LossBreakdown total_generator_loss(const GeneratorLossInputs& in, const LossWeights& weights, int step) {
  weights.validate();
  LossBreakdown out;
  Tensor perceptual_rec =
      op::add(op::scale(in.perceptual, weights.perceptual_factor), op::scale(in.rec_l1, weights.rec_factor));
  Tensor total = op::add(perceptual_rec, op::add(in.codebook, op::scale(in.commitment, weights.beta)));
  out.adopted_disc_factor = step >= weights.disc_start_step ? weights.disc_factor : 0.0;
  if (in.gan_generator.defined() && out.adopted_disc_factor > 0.0 && in.lambda_value != 0.0) {
    total = op::add(total, op::scale(in.gan_generator, out.adopted_disc_factor * in.lambda_value));
  }
  out.total = total;
  out.rec_l1 = in.rec_l1.item();
  out.perceptual = in.perceptual.item();
  out.perceptual_rec = perceptual_rec.item();
  out.commitment = in.commitment.item();
  out.codebook = in.codebook.item();
  out.vq_core = out.codebook + weights.beta * out.commitment;
  out.vq = in.rec_mse.item() + out.vq_core;
  out.gan_generator = in.gan_generator.defined() ? in.gan_generator.item() : 0.0;
  out.lambda_value = in.lambda_value;
  out.total_value = total.item();
  return out;
}

}  // namespace vqab
