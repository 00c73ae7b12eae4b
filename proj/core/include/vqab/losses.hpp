#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vqab/nn_blocks.hpp"
#include "vqab/tensor.hpp"

namespace vqab {

struct LossWeights {
  double beta = 0.25;             // commitment weight
  double perceptual_factor = 1.0;
  double rec_factor = 1.0;
  double disc_factor = 1.0;
  int disc_start_step = 1000;
  double lambda_clamp_max = 1e4;
  double lambda_scale = 0.8;
  double lambda_eps = 1e-6;

  void validate() const;
};

/// Produces a stack of feature maps for the perceptual distance.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Tensor> features(const Tensor& images) const = 0;
};

/// Fixed, seeded 4-layer convolution stack standing in for a pretrained
/// backbone. Weights are frozen; gradients still flow to the images.
class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(uint64_t seed = 0x7ce5);
  std::vector<Tensor> features(const Tensor& images) const override;

 private:
  struct Layer {
    Tensor weight, bias;
    int stride;
  };
  std::vector<Layer> layers_;
};

/// 3-layer strided-conv patch classifier; fixed across all ablations.
class PatchDiscriminator {
 public:
  PatchDiscriminator(uint64_t seed, int in_channels = 3, int base_channels = 32);
  Tensor forward(const Tensor& images) const;
  ParamStore& params() { return params_; }

 private:
  ParamStore params_;
  Conv2dLayer conv1_, conv2_, conv3_;
};

/// Mean absolute difference over all elements.
Tensor reconstruction_l1(const Tensor& x, const Tensor& x_hat);

/// Mean squared difference over all elements.
Tensor reconstruction_mse(const Tensor& x, const Tensor& x_hat);

/// mse(x, x_hat) + codebook_term + beta * commitment.
Tensor vq_loss(const Tensor& x, const Tensor& x_hat, const Tensor& commitment, const Tensor& codebook_term,
               const LossWeights& weights);

/// Images pass a per-channel scaling layer, then the extractor; each layer's
/// feature maps are unit-normalized along channels; squared differences are
/// averaged spatially and summed across layers.
Tensor perceptual_distance(const Tensor& x, const Tensor& x_hat, const FeatureExtractor& extractor);

/// -mean(disc_fake_logits).
Tensor generator_adversarial_loss(const Tensor& disc_fake_logits);

/// (mean(relu(1 - real)) + mean(relu(1 + fake))) / 2.
Tensor discriminator_hinge_loss(const Tensor& real_logits, const Tensor& fake_logits);

/// Adaptive weight on the adversarial term: the ratio of gradient norms of
/// the two losses at the decoder's last convolution weight. Each loss is
/// rebuilt by its closure on a detached side tape, so training gradients are
/// untouched. lambda = clamp(|g_rec| / (|g_gan| + eps), 0, clamp_max) * scale.
double calculate_lambda(const std::function<Tensor()>& perceptual_rec_loss, const std::function<Tensor()>& gan_loss,
                        const Tensor& last_layer_weight, const LossWeights& weights);

struct LossBreakdown {
  Tensor total;  // on the tape, ready for backward
  double rec_l1 = 0;
  double perceptual = 0;
  double perceptual_rec = 0;
  double commitment = 0;
  double codebook = 0;
  double vq = 0;       // mse + codebook + beta * commitment
  double vq_core = 0;  // codebook + beta * commitment
  double gan_generator = 0;
  double lambda_value = 0;
  double adopted_disc_factor = 0;
  double total_value = 0;

  /// Recomposition identity: total re-derived from the parts.
  double recompute_total() const;
};

struct GeneratorLossInputs {
  Tensor rec_l1;
  Tensor rec_mse;
  Tensor perceptual;
  Tensor commitment;
  Tensor codebook;
  Tensor gan_generator;  // undefined tensor when the discriminator is off
  double lambda_value = 0;
};

/// total = perceptual_factor*perceptual + rec_factor*rec_l1 + codebook
///       + beta*commitment + adopted_disc_factor*lambda*gan_generator,
/// where adopted_disc_factor is disc_factor once step >= disc_start_step.
LossBreakdown total_generator_loss(const GeneratorLossInputs& in, const LossWeights& weights, int step);

}  // namespace vqab
