#include "doctest.h"
#include "vqab/codec.hpp"
#include "vqab/gradcheck.hpp"

using namespace vqab;
namespace op = vqab::ops;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 16;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.num_downsamples = 1;
  c.latent_dim = 4;
  c.codebook_size = 8;
  return c;
}

}  // namespace

TEST_CASE("ModelConfig validation") {
  SUBCASE("multiplier count must match stages") {
    ModelConfig c = tiny_config();
    c.channel_multipliers = {1, 2, 4};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  SUBCASE("image size must be divisible by the downsample factor") {
    ModelConfig c = tiny_config();
    c.image_size = 18;
    c.num_downsamples = 2;
    c.channel_multipliers = {1, 1, 2};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  SUBCASE("latent size arithmetic") {
    ModelConfig c = tiny_config();
    c.image_size = 32;
    c.num_downsamples = 2;
    c.channel_multipliers = {1, 1, 2};
    CHECK(c.latent_size() == 8);
  }

  SUBCASE("small_network removes one stage symmetrically") {
    ModelConfig c = tiny_config();
    c.image_size = 32;
    c.num_downsamples = 2;
    c.channel_multipliers = {1, 1, 2};
    c.small_network = true;
    CHECK(c.effective_multipliers() == std::vector<int>{1, 1});
    CHECK(c.effective_downsamples() == 1);
    CHECK(c.latent_size() == 16);
    CHECK_NOTHROW(c.validate());
  }
}

TEST_CASE("encode/decode shape contracts") {
  SUBCASE("latent spatial size follows the downsample count") {
    ModelConfig c = tiny_config();
    c.image_size = 32;
    c.num_downsamples = 2;
    c.channel_multipliers = {1, 1, 2};
    VQModel model(c, 1);
    Rng rng(2);
    Tensor x = Tensor::uniform({1, 3, 32, 32}, -1, 1, rng);
    Tensor z = model.encode(x, {});
    CHECK(z.shape() == Shape{1, 4, 8, 8});
  }

  SUBCASE("decode mirrors encode for every valid config") {
    for (bool pe : {false, true}) {
      for (bool small : {false, true}) {
        ModelConfig c = tiny_config();
        c.image_size = 16;
        c.num_downsamples = 2;
        c.channel_multipliers = {1, 2, 2};
        c.use_positional_encoding = pe;
        c.small_network = small;
        VQModel model(c, 3);
        Rng rng(4);
        Tensor x = Tensor::uniform({2, 3, 16, 16}, -1, 1, rng);
        auto rec = model.reconstruct(x, {});
        CHECK(rec.x_hat.shape() == x.shape());
        CHECK(rec.z.shape() == Shape{2, 4, c.latent_size(), c.latent_size()});
      }
    }
  }

  SUBCASE("wrong input size is rejected") {
    VQModel model(tiny_config(), 1);
    Rng rng(2);
    Tensor x = Tensor::uniform({1, 3, 8, 8}, -1, 1, rng);
    CHECK_THROWS_AS(model.encode(x, {}), std::invalid_argument);
  }
}

TEST_CASE("zero-weight networks propagate biases only") {
  ModelConfig c = tiny_config();
  VQModel model(c, 1);
  for (const auto& [name, t] : model.params().entries())
    for (auto& v : t.data()->value) v = 0.0;
  Rng rng(2);
  Tensor x1 = Tensor::uniform({1, 3, 16, 16}, -1, 1, rng);
  Tensor x2 = Tensor::uniform({1, 3, 16, 16}, -1, 1, rng);
  Tensor y1 = model.encode(x1, {});
  Tensor y2 = model.encode(x2, {});
  // With all weights and biases zero the output is input-independent.
  CHECK(y1.value() == y2.value());
}

TEST_CASE("parameter count is a pure function of the config") {
  ModelConfig c = tiny_config();
  VQModel a(c, 1), b(c, 99);
  CHECK(a.parameter_count() == b.parameter_count());

  c.small_network = true;
  c.channel_multipliers = {1, 2};
  c.num_downsamples = 1;
  VQModel small(c, 1);
  CHECK(small.parameter_count() < a.parameter_count());
}

TEST_CASE("tiny end-to-end gradient check") {
  ModelConfig c;
  c.image_size = 8;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.num_downsamples = 1;
  c.latent_dim = 2;
  c.codebook_size = 4;
  VQModel model(c, 5);
  Rng rng(6);
  Tensor target = Tensor::uniform({1, 3, 8, 8}, -1, 1, rng);

  // The discrete quantizer is excluded: the straight-through estimator is
  // defined to differ from the true (piecewise-constant) derivative, so it
  // is checked by the exact straight-through identity test instead.
  std::vector<Tensor> inputs = {Tensor::uniform({1, 3, 8, 8}, -1, 1, rng).set_requires_grad(true)};
  auto res = gradcheck::finite_difference_check(
      "codec_end_to_end",
      [&](const std::vector<Tensor>& v) {
        Tensor z = model.encode(v[0], {});
        Tensor x_hat = model.decode(z, {});
        Tensor d = op::sub(x_hat, target);
        return op::mean(op::mul(d, d));
      },
      inputs);
  CHECK_MESSAGE(res.pass, res.detail);
}
