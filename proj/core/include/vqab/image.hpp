#pragma once

#include <string>
#include <vector>

#include "vqab/tensor.hpp"

namespace vqab {

/// 8-bit RGB image, row-major, interleaved channels.
struct ImageU8 {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;  // height * width * 3
};

/// Binary PPM (P6, maxval 255). Writing then reading is bit-exact.
ImageU8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& image);

ImageU8 center_crop_square(const ImageU8& image);
ImageU8 resize_bilinear(const ImageU8& image, int size);

/// Byte [0,255] to [-1,1] planar (3,S,S) tensor and back. Export clips.
Tensor image_to_tensor(const ImageU8& image);
ImageU8 tensor_to_image(const Tensor& t);

/// One row per group: the originals followed by their reconstructions.
ImageU8 side_by_side_grid(const std::vector<Tensor>& originals, const std::vector<Tensor>& reconstructions);

}  // namespace vqab
