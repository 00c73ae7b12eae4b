#pragma once

#include <array>
#include <string>
#include <vector>

#include "vqab/tensor.hpp"

namespace vqab {

/// Symmetric eigendecomposition by cyclic Jacobi rotations. `a` is a dense
/// row-major n*n matrix, destroyed in place. Outputs are sorted by
/// descending eigenvalue; eigenvectors are the rows of `vectors`.
void jacobi_eigen_symmetric(std::vector<double>& a, int n, std::vector<double>& eigenvalues,
                            std::vector<double>& vectors, double tol = 1e-10);

struct ChannelPCA {
  std::vector<double> mean;                     // P
  std::vector<std::vector<double>> components;  // orthonormal rows, descending eigenvalue
  std::vector<double> explained_variance_ratio;
  bool degenerate = false;  // zero total variance: reconstructs the mean
};

/// Channel-wise PCA over a set of same-sized images.
struct PCAModel {
  int image_size = 0;
  int n_max = 0;
  std::array<ChannelPCA, 3> channels;

  bool degenerate() const;
};

/// Fits one PCA per color channel. Images are (3,S,S) tensors; each channel
/// flattens to one row of an (M,P) matrix. Eigenpairs come from whichever of
/// the covariance or Gram matrix is smaller.
PCAModel pca_fit(const std::vector<Tensor>& train_images);

/// Projects onto the first n components and inverts. No pixel clipping here;
/// callers clip at export.
Tensor pca_reconstruct(const PCAModel& model, const Tensor& image, int n);

struct VarianceRow {
  int component = 0;  // 1-based
  double ratio = 0;
  double cumulative = 0;
  bool crossed90 = false;  // first component at which cumulative >= 0.90
  bool crossed95 = false;
};

/// Per-component ratios averaged over the three channels, with cumulative
/// sums and first-crossing markers.
std::vector<VarianceRow> variance_report(const PCAModel& model);

std::string variance_report_csv(const std::vector<VarianceRow>& rows);

}  // namespace vqab
