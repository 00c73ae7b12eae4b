#include "vqab/pca.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace vqab {

void jacobi_eigen_symmetric(std::vector<double>& a, int n, std::vector<double>& eigenvalues,
                            std::vector<double>& vectors, double tol) {
  if (n < 1 || static_cast<int64_t>(a.size()) != static_cast<int64_t>(n) * n)
    throw std::invalid_argument("jacobi_eigen_symmetric: bad matrix size");
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

  auto off_norm = [&]() {
    double s = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) s += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
    return std::sqrt(2 * s);
  };
  double scale = 0;
  for (double x : a) scale = std::max(scale, std::fabs(x));
  if (scale == 0) scale = 1;

  for (int sweep = 0; sweep < 100 && off_norm() > tol * scale; ++sweep) {
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a[static_cast<size_t>(p) * n + q];
        if (std::fabs(apq) <= tol * scale * 1e-4) continue;
        double app = a[static_cast<size_t>(p) * n + p];
        double aqq = a[static_cast<size_t>(q) * n + q];
        double theta = (aqq - app) / (2 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1));
        double c = 1.0 / std::sqrt(t * t + 1);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a[static_cast<size_t>(k) * n + p];
          double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a[static_cast<size_t>(p) * n + k];
          double aqk = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v[static_cast<size_t>(k) * n + p];
          double vkq = v[static_cast<size_t>(k) * n + q];
          v[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    return a[static_cast<size_t>(i) * n + i] > a[static_cast<size_t>(j) * n + j];
  });
  eigenvalues.assign(static_cast<size_t>(n), 0.0);
  vectors.assign(static_cast<size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r) {
    int src = order[static_cast<size_t>(r)];
    eigenvalues[static_cast<size_t>(r)] = a[static_cast<size_t>(src) * n + src];
    for (int k = 0; k < n; ++k) vectors[static_cast<size_t>(r) * n + k] = v[static_cast<size_t>(k) * n + src];
  }
}

bool PCAModel::degenerate() const {
  for (const ChannelPCA& c : channels)
    if (c.degenerate) return true;
  return false;
}

namespace {

void fix_sign(std::vector<double>& comp) {
  size_t best = 0;
  for (size_t i = 1; i < comp.size(); ++i)
    if (std::fabs(comp[i]) > std::fabs(comp[best])) best = i;
  if (comp[best] < 0)
    for (double& x : comp) x = -x;
}

ChannelPCA fit_channel(const std::vector<const double*>& rows, int P, int n_max) {
  int M = static_cast<int>(rows.size());
  ChannelPCA out;
  out.mean.assign(static_cast<size_t>(P), 0.0);
  for (const double* r : rows)
    for (int p = 0; p < P; ++p) out.mean[static_cast<size_t>(p)] += r[p];
  for (double& m : out.mean) m /= M;

  std::vector<double> X(static_cast<size_t>(M) * P);
  for (int i = 0; i < M; ++i)
    for (int p = 0; p < P; ++p) X[static_cast<size_t>(i) * P + p] = rows[static_cast<size_t>(i)][p] - out.mean[static_cast<size_t>(p)];

  double total_var = 0;
  for (double x : X) total_var += x * x;
  total_var /= (M - 1);
  double mean_sq = 0;
  for (double m : out.mean) mean_sq += m * m;
  // Relative threshold: identical inputs leave only rounding residue.
  if (total_var <= 1e-20 * std::max(1.0, mean_sq)) {
    std::cerr << "warning: zero-variance channel, PCA model reconstructs the mean\n";
    out.degenerate = true;
    out.explained_variance_ratio.assign(static_cast<size_t>(n_max), 0.0);
    return out;
  }

  std::vector<double> eigenvalues, vectors;
  if (M <= P) {
    // Gram trick: eigenpairs of X X^T / (M-1), lifted through X^T.
    std::vector<double> g(static_cast<size_t>(M) * M, 0.0);
    for (int i = 0; i < M; ++i)
      for (int j = i; j < M; ++j) {
        double s = 0;
        for (int p = 0; p < P; ++p) s += X[static_cast<size_t>(i) * P + p] * X[static_cast<size_t>(j) * P + p];
        g[static_cast<size_t>(i) * M + j] = g[static_cast<size_t>(j) * M + i] = s / (M - 1);
      }
    jacobi_eigen_symmetric(g, M, eigenvalues, vectors);
    for (int r = 0; r < n_max; ++r) {
      if (eigenvalues[static_cast<size_t>(r)] <= 1e-12 * eigenvalues[0]) break;
      std::vector<double> comp(static_cast<size_t>(P), 0.0);
      for (int i = 0; i < M; ++i) {
        double u = vectors[static_cast<size_t>(r) * M + i];
        for (int p = 0; p < P; ++p) comp[static_cast<size_t>(p)] += u * X[static_cast<size_t>(i) * P + p];
      }
      double norm = std::sqrt(std::inner_product(comp.begin(), comp.end(), comp.begin(), 0.0));
      for (double& x : comp) x /= norm;
      fix_sign(comp);
      out.components.push_back(std::move(comp));
      out.explained_variance_ratio.push_back(eigenvalues[static_cast<size_t>(r)] / total_var);
    }
  } else {
    std::vector<double> cov(static_cast<size_t>(P) * P, 0.0);
    for (int i = 0; i < M; ++i)
      for (int p = 0; p < P; ++p) {
        double xp = X[static_cast<size_t>(i) * P + p];
        for (int q = p; q < P; ++q) cov[static_cast<size_t>(p) * P + q] += xp * X[static_cast<size_t>(i) * P + q];
      }
    for (int p = 0; p < P; ++p)
      for (int q = p; q < P; ++q) cov[static_cast<size_t>(q) * P + p] = cov[static_cast<size_t>(p) * P + q] /= (M - 1);
    for (int p = 0; p < P; ++p)
      for (int q = 0; q < p; ++q) cov[static_cast<size_t>(p) * P + q] = cov[static_cast<size_t>(q) * P + p];
    jacobi_eigen_symmetric(cov, P, eigenvalues, vectors);
    for (int r = 0; r < n_max; ++r) {
      if (eigenvalues[static_cast<size_t>(r)] <= 1e-12 * eigenvalues[0]) break;
      std::vector<double> comp(vectors.begin() + static_cast<int64_t>(r) * P,
                               vectors.begin() + static_cast<int64_t>(r + 1) * P);
      fix_sign(comp);
      out.components.push_back(std::move(comp));
      out.explained_variance_ratio.push_back(eigenvalues[static_cast<size_t>(r)] / total_var);
    }
  }
  out.explained_variance_ratio.resize(static_cast<size_t>(n_max), 0.0);
  return out;
}

}  // namespace

PCAModel pca_fit(const std::vector<Tensor>& train_images) {
  if (train_images.size() < 2) throw std::invalid_argument("pca_fit: need at least 2 images");
  const Shape& s0 = train_images[0].shape();
  if (s0.size() != 3 || s0[0] != 3 || s0[1] != s0[2])
    throw std::invalid_argument("pca_fit: images must be (3,S,S), got " + shape_str(s0));
  for (const Tensor& t : train_images)
    if (t.shape() != s0) throw std::invalid_argument("pca_fit: inconsistent image sizes");

  int S = s0[1];
  int P = S * S;
  int M = static_cast<int>(train_images.size());
  PCAModel model;
  model.image_size = S;
  model.n_max = std::min(M - 1, P);
  for (int c = 0; c < 3; ++c) {
    std::vector<const double*> rows;
    rows.reserve(static_cast<size_t>(M));
    for (const Tensor& t : train_images) rows.push_back(t.value().data() + static_cast<int64_t>(c) * P);
    model.channels[static_cast<size_t>(c)] = fit_channel(rows, P, model.n_max);
  }
  return model;
}

Tensor pca_reconstruct(const PCAModel& model, const Tensor& image, int n) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != model.image_size || s[2] != model.image_size)
    throw std::invalid_argument("pca_reconstruct: expected (3," + std::to_string(model.image_size) + "," +
                                std::to_string(model.image_size) + "), got " + shape_str(s));
  if (n < 1 || n > model.n_max) throw std::invalid_argument("pca_reconstruct: n out of range [1," +
                                                            std::to_string(model.n_max) + "]");
  int P = model.image_size * model.image_size;
  Tensor out = Tensor::zeros(s);
  for (int c = 0; c < 3; ++c) {
    const ChannelPCA& ch = model.channels[static_cast<size_t>(c)];
    const double* px = image.value().data() + static_cast<int64_t>(c) * P;
    double* py = out.mutable_value().data() + static_cast<int64_t>(c) * P;
    for (int p = 0; p < P; ++p) py[p] = ch.mean[static_cast<size_t>(p)];
    int k = std::min<int>(n, static_cast<int>(ch.components.size()));
    for (int r = 0; r < k; ++r) {
      const std::vector<double>& comp = ch.components[static_cast<size_t>(r)];
      double proj = 0;
      for (int p = 0; p < P; ++p) proj += (px[p] - ch.mean[static_cast<size_t>(p)]) * comp[static_cast<size_t>(p)];
      for (int p = 0; p < P; ++p) py[p] += proj * comp[static_cast<size_t>(p)];
    }
  }
  return out;
}

std::vector<VarianceRow> variance_report(const PCAModel& model) {
  std::vector<VarianceRow> rows(static_cast<size_t>(model.n_max));
  double cum = 0;
  bool seen90 = false, seen95 = false;
  for (int i = 0; i < model.n_max; ++i) {
    VarianceRow& r = rows[static_cast<size_t>(i)];
    r.component = i + 1;
    for (const ChannelPCA& c : model.channels) r.ratio += c.explained_variance_ratio[static_cast<size_t>(i)];
    r.ratio /= 3.0;
    cum += r.ratio;
    r.cumulative = cum;
    if (!seen90 && cum >= 0.90) r.crossed90 = seen90 = true;
    if (!seen95 && cum >= 0.95) r.crossed95 = seen95 = true;
  }
  return rows;
}

std::string variance_report_csv(const std::vector<VarianceRow>& rows) {
  std::string out = "component,ratio,cumulative,crossed90,crossed95\n";
  char buf[128];
  for (const VarianceRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%d,%d\n", r.component, r.ratio, r.cumulative,
                  r.crossed90 ? 1 : 0, r.crossed95 ? 1 : 0);
    out += buf;
  }
  return out;
}

}  // namespace vqab
