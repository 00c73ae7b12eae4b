#pragma once

#include "vqab/tensor.hpp"

namespace vqab {

/// Fixed 2D sinusoidal table over (row, column) positions. The first half of
/// the channels encodes the row coordinate, the second half the column; within
/// each half, even channels use sin and odd use cos at geometric frequencies
/// 1/10000^(4i/channels) for pair index i.
class PositionalEncoding2D {
 public:
  /// channels must be divisible by 4.
  PositionalEncoding2D(int channels, int height, int width, double dropout_rate = 0.1);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  double dropout_rate() const { return dropout_rate_; }

  /// Precomputed table, shape (channels, height, width); values in [-1, 1].
  const Tensor& table() const { return table_; }

  /// features + dropout(table). Eval mode adds the raw table. Gradient with
  /// respect to features is the identity; the table is constant.
  Tensor apply(const Tensor& features, bool train, Rng& rng) const;

 private:
  int channels_, height_, width_;
  double dropout_rate_;
  Tensor table_;
};

}  // namespace vqab
