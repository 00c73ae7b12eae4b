#include "vqab/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <stdexcept>

#include "vqab/image.hpp"

namespace fs = std::filesystem;

namespace vqab {

Dataset load_dataset(const std::string& dir, int image_count, int image_size, double split_fraction, uint64_t seed) {
  if (image_count < 1) throw std::invalid_argument("load_dataset: image_count must be positive");
  if (split_fraction <= 0 || split_fraction > 1) throw std::invalid_argument("load_dataset: bad split_fraction");

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());

  Rng rng(seed);
  shuffle(names, rng);

  Dataset out;
  std::vector<std::pair<std::string, Tensor>> loaded;
  for (const std::string& name : names) {
    if (static_cast<int>(loaded.size()) == image_count) break;
    try {
      ImageU8 img = read_ppm((fs::path(dir) / name).string());
      img = resize_bilinear(center_crop_square(img), image_size);
      loaded.emplace_back(name, image_to_tensor(img));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping undecodable file " << name << ": " << e.what() << "\n";
    }
  }
  if (static_cast<int>(loaded.size()) < image_count)
    throw std::runtime_error("load_dataset: needed " + std::to_string(image_count) + " images, found " +
                             std::to_string(loaded.size()) + " decodable in " + dir);

  int train_count = static_cast<int>(image_count * split_fraction);
  for (int i = 0; i < image_count; ++i) {
    auto& [name, t] = loaded[static_cast<size_t>(i)];
    if (i < train_count) {
      out.train.push_back(t);
      out.train_names.push_back(name);
    } else {
      out.val.push_back(t);
      out.val_names.push_back(name);
    }
  }
  return out;
}

std::vector<Tensor> synthetic_disc_images(int count, int image_size, uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (int i = 0; i < count; ++i) {
    double bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(-0.9, 0.9);
    for (int c = 0; c < 3; ++c) fg[c] = rng.uniform(-0.9, 0.9);
    double cx = rng.uniform(0.25, 0.75) * image_size;
    double cy = rng.uniform(0.25, 0.75) * image_size;
    double r = rng.uniform(0.15, 0.35) * image_size;
    Tensor t = Tensor::zeros({3, image_size, image_size});
    auto& v = t.mutable_value();
    int hw = image_size * image_size;
    for (int y = 0; y < image_size; ++y)
      for (int x = 0; x < image_size; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        bool inside = d2 <= r * r;
        for (int c = 0; c < 3; ++c)
          v[static_cast<size_t>(c) * hw + y * image_size + x] = inside ? fg[c] : bg[c];
      }
    out.push_back(t);
  }
  return out;
}

}  // namespace vqab
