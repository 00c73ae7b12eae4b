#include "vqab/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace vqab::ops {

namespace {

using DataPtr = std::shared_ptr<TensorData>;

bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor make_output(const Shape& shape, std::vector<double> value, bool requires_grad) {
  Tensor out = Tensor::from(shape, std::move(value));
  out.set_requires_grad(requires_grad);
  return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

// Elementwise binary op with per-element backward factors d/da and d/db.
template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  check_same_shape(name, a, b);
  size_t n = a.value().size();
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = fwd(a.value()[i], b.value()[i]);
  bool rec = tracing({&a, &b});
  Tensor out = make_output(a.shape(), std::move(v), rec);
  if (rec) {
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Tape::current()->record([ad, bd, od, ga, gb, bwd]() {
      if (od->grad.empty()) return;
      if (ga) ad->ensure_grad();
      if (gb) bd->ensure_grad();
      for (size_t i = 0; i < od->value.size(); ++i) {
        double g = od->grad[i];
        double da, db;
        bwd(ad->value[i], bd->value[i], da, db);
        if (ga) ad->grad[i] += g * da;
        if (gb) bd->grad[i] += g * db;
      }
    });
  }
  return out;
}

// Elementwise unary op; bwd returns dy/dx given x and y.
template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Bwd bwd) {
  size_t n = a.value().size();
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = fwd(a.value()[i]);
  bool rec = tracing({&a});
  Tensor out = make_output(a.shape(), std::move(v), rec);
  if (rec) {
    DataPtr ad = a.data(), od = out.data();
    Tape::current()->record([ad, od, bwd]() {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (size_t i = 0; i < od->value.size(); ++i) ad->grad[i] += od->grad[i] * bwd(ad->value[i], od->value[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double& da, double& db) { da = 1.0, db = 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double& da, double& db) { da = 1.0, db = -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double& da, double& db) { da = y, db = x; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor abs(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor swish(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s + x * s * (1.0 - s);
      });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  bool rec = tracing({&a});
  Tensor out = make_output({}, {s}, rec);
  if (rec) {
    DataPtr ad = a.data(), od = out.data();
    Tape::current()->record([ad, od]() {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      double g = od->grad[0];
      for (auto& gi : ad->grad) gi += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  double inv = 1.0 / static_cast<double>(a.numel());
  bool rec = tracing({&a});
  Tensor out = make_output({}, {s * inv}, rec);
  if (rec) {
    DataPtr ad = a.data(), od = out.data();
    Tape::current()->record([ad, od, inv]() {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      double g = od->grad[0] * inv;
      for (auto& gi : ad->grad) gi += g;
    });
  }
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  const Shape& sh = a.shape();
  int nd = static_cast<int>(sh.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw std::invalid_argument("softmax: axis out of range for shape " + shape_str(sh));
  int64_t axis_len = sh[axis];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= sh[i];
  for (int i = 0; i < axis; ++i) outer *= sh[i];

  std::vector<double> v(a.value().size());
  const auto& x = a.value();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * axis_len * inner + in;
      double mx = x[base];
      for (int64_t k = 1; k < axis_len; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0.0;
      for (int64_t k = 0; k < axis_len; ++k) {
        double e = std::exp(x[base + k * inner] - mx);
        v[base + k * inner] = e;
        z += e;
      }
      double invz = 1.0 / z;
      for (int64_t k = 0; k < axis_len; ++k) v[base + k * inner] *= invz;
    }
  }
  bool rec = tracing({&a});
  Tensor out = make_output(sh, std::move(v), rec);
  if (rec) {
    DataPtr ad = a.data(), od = out.data();
    Tape::current()->record([ad, od, outer, inner, axis_len]() {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * axis_len * inner + in;
          double dot = 0.0;
          for (int64_t k = 0; k < axis_len; ++k) dot += od->grad[base + k * inner] * od->value[base + k * inner];
          for (int64_t k = 0; k < axis_len; ++k) {
            int64_t i = base + k * inner;
            ad->grad[i] += od->value[i] * (od->grad[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  bool rec = tracing({&a});
  Tensor out = make_output(shape, a.value(), rec);
  if (rec) {
    DataPtr ad = a.data(), od = out.data();
    Tape::current()->record([ad, od]() {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
    });
  }
  return out;
}

namespace {
void permute_copy(const Shape& in_shape, const std::vector<int>& dims, const std::vector<double>& src,
                  std::vector<double>& dst, bool inverse) {
  int nd = static_cast<int>(in_shape.size());
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = in_shape[dims[i]];
  std::vector<int64_t> in_stride(nd, 1), out_stride(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  for (int i = nd - 2; i >= 0; --i) out_stride[i] = out_stride[i + 1] * out_shape[i + 1];
  int64_t n = 1;
  for (int d : in_shape) n *= d;
  std::vector<int> idx(nd, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t out_flat = 0;
    for (int i = 0; i < nd; ++i) out_flat += static_cast<int64_t>(idx[dims[i]]) * out_stride[i];
    if (inverse)
      dst[flat] += src[out_flat];
    else
      dst[out_flat] = src[flat];
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[i] < in_shape[i]) break;
      idx[i] = 0;
    }
  }
}
}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& dims) {
  const Shape& sh = a.shape();
  int nd = static_cast<int>(sh.size());
  if (static_cast<int>(dims.size()) != nd) throw std::invalid_argument("permute: dims rank mismatch");
  std::vector<bool> seen(nd, false);
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) {
    if (dims[i] < 0 || dims[i] >= nd || seen[dims[i]]) throw std::invalid_argument("permute: invalid dims");
    seen[dims[i]] = true;
    out_shape[i] = sh[dims[i]];
  }
  std::vector<double> v(a.value().size());
  permute_copy(sh, dims, a.value(), v, false);
  bool rec = tracing({&a});
  Tensor out = make_output(out_shape, std::move(v), rec);
  if (rec) {
    DataPtr ad = a.data(), od = out.data();
    Shape in_shape = sh;
    std::vector<int> d = dims;
    Tape::current()->record([ad, od, in_shape, d]() {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      permute_copy(in_shape, d, od->grad, ad->grad, true);
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose2d: expected rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  int nd = static_cast<int>(s0.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: axis out of range");
  Shape out_shape = s0;
  for (size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (static_cast<int>(s.size()) != nd) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != axis && s[i] != s0[i])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= s0[i];
  for (int i = 0; i < axis; ++i) outer *= s0[i];

  std::vector<double> v(static_cast<size_t>(shape_numel(out_shape)));
  int64_t out_axis = out_shape[axis];
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    int64_t len = p.shape()[axis];
    const auto& src = p.value();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < len; ++k)
        for (int64_t in = 0; in < inner; ++in)
          v[(o * out_axis + offset + k) * inner + in] = src[(o * len + k) * inner + in];
    offset += len;
  }
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  bool rec = Tape::current() != nullptr;
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  rec = rec && any;
  Tensor out = make_output(out_shape, std::move(v), rec);
  if (rec) {
    std::vector<DataPtr> pd;
    std::vector<int64_t> lens;
    std::vector<bool> needs;
    for (const Tensor& p : parts) {
      pd.push_back(p.data());
      lens.push_back(p.shape()[axis]);
      needs.push_back(p.requires_grad());
    }
    DataPtr od = out.data();
    Tape::current()->record([pd, lens, needs, od, outer, inner, out_axis]() {
      if (od->grad.empty()) return;
      int64_t offset = 0;
      for (size_t pi = 0; pi < pd.size(); ++pi) {
        int64_t len = lens[pi];
        if (needs[pi]) {
          pd[pi]->ensure_grad();
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < len; ++k)
              for (int64_t in = 0; in < inner; ++in)
                pd[pi]->grad[(o * len + k) * inner + in] += od->grad[(o * out_axis + offset + k) * inner + in];
        }
        offset += len;
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  int64_t M = sa[0], K = sa[1], N = sb[1];
  std::vector<double> v(static_cast<size_t>(M * N), 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int64_t i = 0; i < M; ++i)
    for (int64_t k = 0; k < K; ++k) {
      double aik = av[i * K + k];
      if (aik == 0.0) continue;
      const double* brow = &bv[k * N];
      double* orow = &v[i * N];
      for (int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  bool rec = tracing({&a, &b});
  Tensor out = make_output({static_cast<int>(M), static_cast<int>(N)}, std::move(v), rec);
  if (rec) {
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Tape::current()->record([ad, bd, od, ga, gb, M, K, N]() {
      if (od->grad.empty()) return;
      if (ga) {
        ad->ensure_grad();
        // dA = dC * B^T
        for (int64_t i = 0; i < M; ++i)
          for (int64_t k = 0; k < K; ++k) {
            double s = 0.0;
            const double* grow = &od->grad[i * N];
            const double* brow = &bd->value[k * N];
            for (int64_t j = 0; j < N; ++j) s += grow[j] * brow[j];
            ad->grad[i * K + k] += s;
          }
      }
      if (gb) {
        bd->ensure_grad();
        // dB = A^T * dC
        for (int64_t i = 0; i < M; ++i)
          for (int64_t k = 0; k < K; ++k) {
            double aik = ad->value[i * K + k];
            if (aik == 0.0) continue;
            const double* grow = &od->grad[i * N];
            double* brow = &bd->grad[k * N];
            for (int64_t j = 0; j < N; ++j) brow[j] += aik * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("batched_matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  int64_t B = sa[0], M = sa[1], K = sa[2], N = sb[2];
  std::vector<double> v(static_cast<size_t>(B * M * N), 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int64_t bb = 0; bb < B; ++bb) {
    const double* A = &av[bb * M * K];
    const double* Bm = &bv[bb * K * N];
    double* O = &v[bb * M * N];
    for (int64_t i = 0; i < M; ++i)
      for (int64_t k = 0; k < K; ++k) {
        double aik = A[i * K + k];
        if (aik == 0.0) continue;
        for (int64_t j = 0; j < N; ++j) O[i * N + j] += aik * Bm[k * N + j];
      }
  }
  bool rec = tracing({&a, &b});
  Tensor out = make_output({static_cast<int>(B), static_cast<int>(M), static_cast<int>(N)}, std::move(v), rec);
  if (rec) {
    DataPtr ad = a.data(), bd = b.data(), od = out.data();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Tape::current()->record([ad, bd, od, ga, gb, B, M, K, N]() {
      if (od->grad.empty()) return;
      if (ga) ad->ensure_grad();
      if (gb) bd->ensure_grad();
      for (int64_t bb = 0; bb < B; ++bb) {
        const double* G = &od->grad[bb * M * N];
        const double* A = &ad->value[bb * M * K];
        const double* Bm = &bd->value[bb * K * N];
        if (ga) {
          double* dA = &ad->grad[bb * M * K];
          for (int64_t i = 0; i < M; ++i)
            for (int64_t k = 0; k < K; ++k) {
              double s = 0.0;
              for (int64_t j = 0; j < N; ++j) s += G[i * N + j] * Bm[k * N + j];
              dA[i * K + k] += s;
            }
        }
        if (gb) {
          double* dB = &bd->grad[bb * K * N];
          for (int64_t i = 0; i < M; ++i)
            for (int64_t k = 0; k < K; ++k) {
              double aik = A[i * K + k];
              if (aik == 0.0) continue;
              for (int64_t j = 0; j < N; ++j) dB[k * N + j] += aik * G[i * N + j];
            }
        }
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const Shape& si = input.shape();
  const Shape& sw = weight.shape();
  if (si.size() != 4 || sw.size() != 4)
    throw std::invalid_argument("conv2d: expected 4D input and weight, got " + shape_str(si) + " and " +
                                shape_str(sw));
  if (si[1] != sw[1])
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(si) + " vs weight " + shape_str(sw));
  if (stride < 1 || padding < 0 || sw[2] < 1 || sw[3] < 1) throw std::invalid_argument("conv2d: bad hyperparameters");
  int64_t N = si[0], C = si[1], H = si[2], W = si[3];
  int64_t F = sw[0], KH = sw[2], KW = sw[3];
  if (bias.shape() != Shape{static_cast<int>(F)})
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) + " does not match filters " +
                                std::to_string(F));
  int64_t OH = (H + 2 * padding - KH) / stride + 1;
  int64_t OW = (W + 2 * padding - KW) / stride + 1;
  if (OH < 1 || OW < 1)
    throw std::invalid_argument("conv2d: kernel " + shape_str(sw) + " too large for input " + shape_str(si));

  std::vector<double> v(static_cast<size_t>(N * F * OH * OW));
  const auto& x = input.value();
  const auto& w = weight.value();
  const auto& bv = bias.value();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          double acc = bv[f];
          int64_t ih0 = oh * stride - padding;
          int64_t iw0 = ow * stride - padding;
          for (int64_t c = 0; c < C; ++c) {
            const double* xp = &x[((n * C + c) * H) * W];
            const double* wp = &w[((f * C + c) * KH) * KW];
            for (int64_t kh = 0; kh < KH; ++kh) {
              int64_t ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              for (int64_t kw = 0; kw < KW; ++kw) {
                int64_t iw = iw0 + kw;
                if (iw < 0 || iw >= W) continue;
                acc += xp[ih * W + iw] * wp[kh * KW + kw];
              }
            }
          }
          v[((n * F + f) * OH + oh) * OW + ow] = acc;
        }

  bool rec = tracing({&input, &weight, &bias});
  Tensor out = make_output({static_cast<int>(N), static_cast<int>(F), static_cast<int>(OH), static_cast<int>(OW)},
                           std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), wd = weight.data(), bd = bias.data(), od = out.data();
    bool gi = input.requires_grad(), gw = weight.requires_grad(), gb = bias.requires_grad();
    Tape::current()->record([id, wd, bd, od, gi, gw, gb, N, C, H, W, F, KH, KW, OH, OW, stride, padding]() {
      if (od->grad.empty()) return;
      if (gi) id->ensure_grad();
      if (gw) wd->ensure_grad();
      if (gb) bd->ensure_grad();
      const auto& g = od->grad;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t f = 0; f < F; ++f)
          for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
              double go = g[((n * F + f) * OH + oh) * OW + ow];
              if (go == 0.0) continue;
              if (gb) bd->grad[f] += go;
              int64_t ih0 = oh * stride - padding;
              int64_t iw0 = ow * stride - padding;
              for (int64_t c = 0; c < C; ++c) {
                const double* xp = &id->value[((n * C + c) * H) * W];
                const double* wp = &wd->value[((f * C + c) * KH) * KW];
                double* dxp = gi ? &id->grad[((n * C + c) * H) * W] : nullptr;
                double* dwp = gw ? &wd->grad[((f * C + c) * KH) * KW] : nullptr;
                for (int64_t kh = 0; kh < KH; ++kh) {
                  int64_t ih = ih0 + kh;
                  if (ih < 0 || ih >= H) continue;
                  for (int64_t kw = 0; kw < KW; ++kw) {
                    int64_t iw = iw0 + kw;
                    if (iw < 0 || iw >= W) continue;
                    if (gi) dxp[ih * W + iw] += go * wp[kh * KW + kw];
                    if (gw) dwp[kh * KW + kw] += go * xp[ih * W + iw];
                  }
                }
              }
            }
    });
  }
  return out;
}

Tensor pad2d(const Tensor& input, int top, int bottom, int left, int right) {
  const Shape& s = input.shape();
  if (s.size() != 4) throw std::invalid_argument("pad2d: expected 4D input, got " + shape_str(s));
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw std::invalid_argument("pad2d: negative padding");
  int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  int64_t OH = H + top + bottom, OW = W + left + right;
  std::vector<double> v(static_cast<size_t>(N * C * OH * OW), 0.0);
  const auto& x = input.value();
  for (int64_t nc = 0; nc < N * C; ++nc)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) v[(nc * OH + h + top) * OW + w + left] = x[(nc * H + h) * W + w];
  bool rec = tracing({&input});
  Tensor out = make_output({static_cast<int>(N), static_cast<int>(C), static_cast<int>(OH), static_cast<int>(OW)},
                           std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), od = out.data();
    Tape::current()->record([id, od, N, C, H, W, OH, OW, top, left]() {
      if (od->grad.empty()) return;
      id->ensure_grad();
      for (int64_t nc = 0; nc < N * C; ++nc)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w)
            id->grad[(nc * H + h) * W + w] += od->grad[(nc * OH + h + top) * OW + w + left];
    });
  }
  return out;
}

Tensor nearest_upsample2x(const Tensor& input) {
  const Shape& s = input.shape();
  if (s.size() != 4) throw std::invalid_argument("nearest_upsample2x: expected 4D input, got " + shape_str(s));
  int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  int64_t OH = 2 * H, OW = 2 * W;
  std::vector<double> v(static_cast<size_t>(N * C * OH * OW));
  const auto& x = input.value();
  for (int64_t nc = 0; nc < N * C; ++nc)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        double val = x[(nc * H + h) * W + w];
        int64_t base = (nc * OH + 2 * h) * OW + 2 * w;
        v[base] = val;
        v[base + 1] = val;
        v[base + OW] = val;
        v[base + OW + 1] = val;
      }
  bool rec = tracing({&input});
  Tensor out = make_output({static_cast<int>(N), static_cast<int>(C), static_cast<int>(OH), static_cast<int>(OW)},
                           std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), od = out.data();
    Tape::current()->record([id, od, N, C, H, W, OH, OW]() {
      if (od->grad.empty()) return;
      id->ensure_grad();
      for (int64_t nc = 0; nc < N * C; ++nc)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t w = 0; w < W; ++w) {
            int64_t base = (nc * OH + 2 * h) * OW + 2 * w;
            id->grad[(nc * H + h) * W + w] +=
                od->grad[base] + od->grad[base + 1] + od->grad[base + OW] + od->grad[base + OW + 1];
          }
    });
  }
  return out;
}

Tensor group_norm(const Tensor& input, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape& s = input.shape();
  if (s.size() != 4) throw std::invalid_argument("group_norm: expected 4D input, got " + shape_str(s));
  int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  if (groups < 1 || C % groups != 0)
    throw std::invalid_argument("group_norm: channel count " + std::to_string(C) + " not divisible by groups " +
                                std::to_string(groups));
  if (eps <= 0) throw std::invalid_argument("group_norm: eps must be positive");
  if (gamma.shape() != Shape{static_cast<int>(C)} || beta.shape() != Shape{static_cast<int>(C)})
    throw std::invalid_argument("group_norm: gamma/beta must have shape (" + std::to_string(C) + ")");
  int64_t cg = C / groups;           // channels per group
  int64_t m = cg * H * W;            // elements per (sample, group) slice
  const auto& x = input.value();
  const auto& gam = gamma.value();
  const auto& bet = beta.value();
  std::vector<double> v(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sigma(static_cast<size_t>(N * groups));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t g = 0; g < groups; ++g) {
      int64_t base = ((n * C + g * cg) * H) * W;
      double mu = 0.0;
      for (int64_t i = 0; i < m; ++i) mu += x[base + i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (int64_t i = 0; i < m; ++i) {
        double d = x[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      double is = 1.0 / std::sqrt(var + eps);
      inv_sigma[n * groups + g] = is;
      for (int64_t i = 0; i < m; ++i) {
        int64_t c = g * cg + i / (H * W);
        double xh = (x[base + i] - mu) * is;
        xhat[base + i] = xh;
        v[base + i] = gam[c] * xh + bet[c];
      }
    }
  bool rec = tracing({&input, &gamma, &beta});
  Tensor out = make_output(s, std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), gd = gamma.data(), bd = beta.data(), od = out.data();
    bool gi = input.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
    int64_t G = groups;
    Tape::current()->record([id, gd, bd, od, gi, gg, gb, xh, is, N, C, H, W, G, cg, m]() {
      if (od->grad.empty()) return;
      if (gi) id->ensure_grad();
      if (gg) gd->ensure_grad();
      if (gb) bd->ensure_grad();
      const auto& g = od->grad;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t gr = 0; gr < G; ++gr) {
          int64_t base = ((n * C + gr * cg) * H) * W;
          if (gi) {
            // dL/dx = (1/sigma) * (t - mean(t) - xhat * mean(t*xhat)),
            // with t = dL/dy * gamma (gamma indexed per channel).
            double mean_t = 0.0, mean_tx = 0.0;
            for (int64_t i = 0; i < m; ++i) {
              int64_t c = gr * cg + i / (H * W);
              double t = g[base + i] * gd->value[c];
              mean_t += t;
              mean_tx += t * (*xh)[base + i];
            }
            mean_t /= static_cast<double>(m);
            mean_tx /= static_cast<double>(m);
            double sigma_inv = (*is)[n * G + gr];
            for (int64_t i = 0; i < m; ++i) {
              int64_t c = gr * cg + i / (H * W);
              double t = g[base + i] * gd->value[c];
              id->grad[base + i] += sigma_inv * (t - mean_t - (*xh)[base + i] * mean_tx);
            }
          }
          if (gg || gb) {
            for (int64_t i = 0; i < m; ++i) {
              int64_t c = gr * cg + i / (H * W);
              if (gg) gd->grad[c] += g[base + i] * (*xh)[base + i];
              if (gb) bd->grad[c] += g[base + i];
            }
          }
        }
    });
  }
  return out;
}

Tensor channel_l2_normalize(const Tensor& input, double eps) {
  const Shape& s = input.shape();
  if (s.size() != 4) throw std::invalid_argument("channel_l2_normalize: expected 4D input, got " + shape_str(s));
  int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  int64_t P = H * W;
  const auto& x = input.value();
  std::vector<double> v(x.size());
  std::vector<double> inv_norm(static_cast<size_t>(N * P));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t p = 0; p < P; ++p) {
      double ss = 0.0;
      for (int64_t c = 0; c < C; ++c) {
        double xv = x[(n * C + c) * P + p];
        ss += xv * xv;
      }
      double in = 1.0 / (std::sqrt(ss) + eps);
      inv_norm[n * P + p] = in;
      for (int64_t c = 0; c < C; ++c) v[(n * C + c) * P + p] = x[(n * C + c) * P + p] * in;
    }
  bool rec = tracing({&input});
  Tensor out = make_output(s, std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), od = out.data();
    auto invn = std::make_shared<std::vector<double>>(std::move(inv_norm));
    Tape::current()->record([id, od, invn, N, C, P]() {
      if (od->grad.empty()) return;
      id->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t p = 0; p < P; ++p) {
          double in = (*invn)[n * P + p];
          double dot = 0.0;
          for (int64_t c = 0; c < C; ++c) dot += od->grad[(n * C + c) * P + p] * od->value[(n * C + c) * P + p];
          for (int64_t c = 0; c < C; ++c) {
            int64_t i = (n * C + c) * P + p;
            id->grad[i] += in * (od->grad[i] - od->value[i] * dot);
          }
        }
    });
  }
  return out;
}

Tensor channel_affine(const Tensor& input, const std::vector<double>& shift, const std::vector<double>& scale) {
  const Shape& s = input.shape();
  if (s.size() != 4) throw std::invalid_argument("channel_affine: expected 4D input, got " + shape_str(s));
  int64_t N = s[0], C = s[1], P = static_cast<int64_t>(s[2]) * s[3];
  if (shift.size() != static_cast<size_t>(C) || scale.size() != static_cast<size_t>(C))
    throw std::invalid_argument("channel_affine: shift/scale length must equal channel count");
  const auto& x = input.value();
  std::vector<double> v(x.size());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double sh = shift[c], in = 1.0 / scale[c];
      for (int64_t p = 0; p < P; ++p) v[(n * C + c) * P + p] = (x[(n * C + c) * P + p] - sh) * in;
    }
  bool rec = tracing({&input});
  Tensor out = make_output(s, std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), od = out.data();
    std::vector<double> sc = scale;
    Tape::current()->record([id, od, sc, N, C, P]() {
      if (od->grad.empty()) return;
      id->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          double in = 1.0 / sc[c];
          for (int64_t p = 0; p < P; ++p) id->grad[(n * C + c) * P + p] += od->grad[(n * C + c) * P + p] * in;
        }
    });
  }
  return out;
}

Tensor add_chw(const Tensor& input, const Tensor& table) {
  const Shape& s = input.shape();
  const Shape& ts = table.shape();
  if (s.size() != 4 || ts.size() != 3 || s[1] != ts[0] || s[2] != ts[1] || s[3] != ts[2])
    throw std::invalid_argument("add_chw: input " + shape_str(s) + " incompatible with table " + shape_str(ts));
  int64_t N = s[0];
  int64_t chw = static_cast<int64_t>(ts[0]) * ts[1] * ts[2];
  const auto& x = input.value();
  const auto& t = table.value();
  std::vector<double> v(x.size());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < chw; ++i) v[n * chw + i] = x[n * chw + i] + t[i];
  bool rec = tracing({&input, &table});
  Tensor out = make_output(s, std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), td = table.data(), od = out.data();
    bool gi = input.requires_grad(), gt = table.requires_grad();
    Tape::current()->record([id, td, od, gi, gt, N, chw]() {
      if (od->grad.empty()) return;
      if (gi) id->ensure_grad();
      if (gt) td->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < chw; ++i) {
          double g = od->grad[n * chw + i];
          if (gi) id->grad[n * chw + i] += g;
          if (gt) td->grad[i] += g;
        }
    });
  }
  return out;
}

Tensor dropout(const Tensor& input, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must lie in [0,1)");
  if (!train || rate == 0.0) return input;
  size_t n = input.value().size();
  double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(n);
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i) {
    double m = rng.uniform() < rate ? 0.0 : keep_scale;
    (*mask)[i] = m;
    v[i] = input.value()[i] * m;
  }
  bool rec = tracing({&input});
  Tensor out = make_output(input.shape(), std::move(v), rec);
  if (rec) {
    DataPtr id = input.data(), od = out.data();
    Tape::current()->record([id, od, mask]() {
      if (od->grad.empty()) return;
      id->ensure_grad();
      for (size_t i = 0; i < od->grad.size(); ++i) id->grad[i] += od->grad[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor detach(const Tensor& a) { return a.detach(); }

Tensor value_from_grad_to(const Tensor& value_source, const Tensor& grad_target) {
  if (value_source.shape() != grad_target.shape())
    throw std::invalid_argument("value_from_grad_to: shape mismatch " + shape_str(value_source.shape()) + " vs " +
                                shape_str(grad_target.shape()));
  bool rec = tracing({&grad_target});
  Tensor out = make_output(value_source.shape(), value_source.value(), rec);
  if (rec) {
    DataPtr gd = grad_target.data(), od = out.data();
    Tape::current()->record([gd, od]() {
      if (od->grad.empty()) return;
      gd->ensure_grad();
      for (size_t i = 0; i < od->grad.size(); ++i) gd->grad[i] += od->grad[i];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw std::invalid_argument("gather_rows: expected 2D table, got " + shape_str(s));
  int64_t K = s[0], D = s[1];
  std::vector<double> v(indices.size() * static_cast<size_t>(D));
  for (size_t r = 0; r < indices.size(); ++r) {
    int idx = indices[r];
    if (idx < 0 || idx >= K) throw std::out_of_range("gather_rows: index " + std::to_string(idx) + " out of [0," +
                                                     std::to_string(K) + ")");
    for (int64_t d = 0; d < D; ++d) v[r * D + d] = table.value()[idx * D + d];
  }
  bool rec = tracing({&table});
  Tensor out = make_output({static_cast<int>(indices.size()), static_cast<int>(D)}, std::move(v), rec);
  if (rec) {
    DataPtr td = table.data(), od = out.data();
    std::vector<int> idx = indices;
    Tape::current()->record([td, od, idx, D]() {
      if (od->grad.empty()) return;
      td->ensure_grad();
      for (size_t r = 0; r < idx.size(); ++r)
        for (int64_t d = 0; d < D; ++d) td->grad[idx[r] * D + d] += od->grad[r * D + d];
    });
  }
  return out;
}

}  // namespace vqab::ops
