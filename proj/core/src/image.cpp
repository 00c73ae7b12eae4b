#include "vqab/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace vqab {

namespace {

int read_ppm_int(std::istream& in) {
  // Skips whitespace and '#' comments per the PPM grammar.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw std::runtime_error("ppm: malformed header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw std::runtime_error("ppm: not a P6 file: " + path);
  ImageU8 img;
  img.width = read_ppm_int(in);
  img.height = read_ppm_int(in);
  int maxval = read_ppm_int(in);
  if (img.width < 1 || img.height < 1 || maxval != 255)
    throw std::runtime_error("ppm: unsupported dimensions or maxval in " + path);
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("ppm: truncated pixel data in " + path);
  return img;
}

void write_ppm(const std::string& path, const ImageU8& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ppm: cannot write " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("ppm: write failed for " + path);
}

ImageU8 center_crop_square(const ImageU8& image) {
  int side = std::min(image.width, image.height);
  int x0 = (image.width - side) / 2;
  int y0 = (image.height - side) / 2;
  ImageU8 out;
  out.width = out.height = side;
  out.pixels.resize(static_cast<size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    const uint8_t* src = image.pixels.data() + (static_cast<size_t>(y0 + y) * image.width + x0) * 3;
    std::copy(src, src + static_cast<size_t>(side) * 3, out.pixels.data() + static_cast<size_t>(y) * side * 3);
  }
  return out;
}

ImageU8 resize_bilinear(const ImageU8& image, int size) {
  ImageU8 out;
  out.width = out.height = size;
  out.pixels.resize(static_cast<size_t>(size) * size * 3);
  double sx = static_cast<double>(image.width) / size;
  double sy = static_cast<double>(image.height) / size;
  for (int y = 0; y < size; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, image.height - 1);
    int yb = std::clamp(y0 + 1, 0, image.height - 1);
    for (int x = 0; x < size; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, image.width - 1);
      int xb = std::clamp(x0 + 1, 0, image.width - 1);
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int yy, int xx) {
          return static_cast<double>(image.pixels[(static_cast<size_t>(yy) * image.width + xx) * 3 + c]);
        };
        double v = (1 - wy) * ((1 - wx) * at(ya, xa) + wx * at(ya, xb)) +
                   wy * ((1 - wx) * at(yb, xa) + wx * at(yb, xb));
        out.pixels[(static_cast<size_t>(y) * size + x) * 3 + c] =
            static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const ImageU8& image) {
  Tensor t = Tensor::zeros({3, image.height, image.width});
  auto& v = t.mutable_value();
  int hw = image.height * image.width;
  for (int p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c)
      v[static_cast<size_t>(c) * hw + p] = image.pixels[static_cast<size_t>(p) * 3 + c] / 127.5 - 1.0;
  return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.size() != 3 || s[0] != 3) throw std::invalid_argument("tensor_to_image: expected (3,H,W), got " + shape_str(s));
  ImageU8 img;
  img.height = s[1];
  img.width = s[2];
  img.pixels.resize(static_cast<size_t>(img.height) * img.width * 3);
  int hw = img.height * img.width;
  for (int p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) {
      double v = std::clamp(t.value()[static_cast<size_t>(c) * hw + p], -1.0, 1.0);
      img.pixels[static_cast<size_t>(p) * 3 + c] = static_cast<uint8_t>(std::lround((v + 1.0) * 127.5));
    }
  return img;
}

ImageU8 side_by_side_grid(const std::vector<Tensor>& originals, const std::vector<Tensor>& reconstructions) {
  if (originals.empty() || originals.size() != reconstructions.size())
    throw std::invalid_argument("side_by_side_grid: need equal non-empty image lists");
  const Shape& s = originals[0].shape();
  int S = s[1];
  int n = static_cast<int>(originals.size());
  ImageU8 grid;
  grid.height = S;
  grid.width = S * 2 * n;
  grid.pixels.assign(static_cast<size_t>(grid.height) * grid.width * 3, 0);
  auto blit = [&](const Tensor& t, int slot) {
    ImageU8 img = tensor_to_image(t);
    for (int y = 0; y < S; ++y)
      std::copy(img.pixels.begin() + static_cast<size_t>(y) * S * 3,
                img.pixels.begin() + static_cast<size_t>(y + 1) * S * 3,
                grid.pixels.begin() + (static_cast<size_t>(y) * grid.width + static_cast<size_t>(slot) * S) * 3);
  };
  for (int i = 0; i < n; ++i) blit(originals[static_cast<size_t>(i)], i);
  for (int i = 0; i < n; ++i) blit(reconstructions[static_cast<size_t>(i)], n + i);
  return grid;
}

}  // namespace vqab
