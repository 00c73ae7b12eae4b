#include "vqab/pos_encoding.hpp"

#include <cmath>
#include <stdexcept>

#include "vqab/ops.hpp"

namespace vqab {

PositionalEncoding2D::PositionalEncoding2D(int channels, int height, int width, double dropout_rate)
    : channels_(channels), height_(height), width_(width), dropout_rate_(dropout_rate) {
  if (channels < 4 || channels % 4 != 0)
    throw std::invalid_argument("PositionalEncoding2D: channels must be divisible by 4, got " +
                                std::to_string(channels));
  if (height < 1 || width < 1) throw std::invalid_argument("PositionalEncoding2D: empty spatial size");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("PositionalEncoding2D: dropout rate must lie in [0,1)");

  int half = channels / 2;
  int pairs = channels / 4;
  std::vector<double> t(static_cast<size_t>(channels) * height * width);
  for (int i = 0; i < pairs; ++i) {
    double freq = 1.0 / std::pow(10000.0, 4.0 * i / channels);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        size_t pos = static_cast<size_t>(y) * width + x;
        size_t hw = static_cast<size_t>(height) * width;
        t[(2 * i) * hw + pos] = std::sin(y * freq);
        t[(2 * i + 1) * hw + pos] = std::cos(y * freq);
        t[(half + 2 * i) * hw + pos] = std::sin(x * freq);
        t[(half + 2 * i + 1) * hw + pos] = std::cos(x * freq);
      }
  }
  table_ = Tensor::from({channels, height, width}, std::move(t));
}

Tensor PositionalEncoding2D::apply(const Tensor& features, bool train, Rng& rng) const {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[1] != channels_ || s[2] != height_ || s[3] != width_)
    throw std::invalid_argument("PositionalEncoding2D: features " + shape_str(s) + " do not match table " +
                                shape_str(table_.shape()));
  Tensor enc = ops::dropout(table_, dropout_rate_, train, rng);
  return ops::add_chw(features, enc);
}

}  // namespace vqab
