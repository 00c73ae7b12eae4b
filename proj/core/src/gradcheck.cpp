#include "vqab/gradcheck.hpp"

#include <cmath>

#include "vqab/losses.hpp"
#include "vqab/nn_blocks.hpp"
#include "vqab/ops.hpp"
#include "vqab/pos_encoding.hpp"

namespace vqab::gradcheck {

CheckResult finite_difference_check(const std::string& name, const ScalarFn& f, std::vector<Tensor> inputs,
                                    double rel_tol, double abs_tol, double step) {
  CheckResult res;
  res.name = name;

  std::vector<std::vector<double>> analytic;
  {
    TapeScope scope;
    for (auto& t : inputs) t.zero_grad();
    Tensor y = f(inputs);
    scope.backward(y);
    for (auto& t : inputs) analytic.push_back(t.grad());
  }

  double worst = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].mutable_value();
    for (size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + step;
      double fp = f(inputs).item();
      vals[i] = orig - step;
      double fm = f(inputs).item();
      vals[i] = orig;
      double fd = (fp - fm) / (2.0 * step);
      double ad = analytic[ti][i];
      double denom = abs_tol + rel_tol * std::max(std::fabs(ad), std::fabs(fd));
      double err = std::fabs(ad - fd) / denom;
      if (err > worst) {
        worst = err;
        if (err > 1.0)
          res.detail = "input " + std::to_string(ti) + " elem " + std::to_string(i) + ": ad=" + std::to_string(ad) +
                       " fd=" + std::to_string(fd);
      }
    }
  }
  res.max_err = worst;
  res.pass = worst <= 1.0;
  return res;
}

namespace {

namespace op = ops;

struct Suite {
  std::string filter;
  int reps;
  Rng rng;
  std::vector<CheckResult> results;

  Suite(std::string f, int reps_, uint64_t seed) : filter(std::move(f)), reps(reps_), rng(seed) {}

  bool wants(const std::string& name) const { return filter.empty() || name.rfind(filter, 0) == 0; }

  /// Runs `make` once per repetition; each call returns (function, leaves).
  void check(const std::string& name,
             const std::function<std::pair<ScalarFn, std::vector<Tensor>>(Rng&)>& make) {
    if (!wants(name)) return;
    CheckResult agg;
    agg.name = name;
    agg.pass = true;
    for (int r = 0; r < reps; ++r) {
      auto [fn, leaves] = make(rng);
      for (Tensor& t : leaves) t.set_requires_grad(true);
      CheckResult one = finite_difference_check(name, fn, leaves);
      if (one.max_err > agg.max_err) agg.max_err = one.max_err;
      if (!one.pass) {
        agg.pass = false;
        if (agg.detail.empty()) agg.detail = "rep " + std::to_string(r) + ": " + one.detail;
      }
    }
    results.push_back(std::move(agg));
  }

  Tensor rand(const Shape& s, double lo = -1.0, double hi = 1.0) { return Tensor::uniform(s, lo, hi, rng); }

  /// Values bounded away from zero, for kinked functions (abs, relu).
  Tensor rand_nonzero(const Shape& s) {
    Tensor t = rand(s, 0.2, 1.0);
    for (double& v : t.mutable_value())
      if (rng.uniform() < 0.5) v = -v;
    return t;
  }

  Shape small_shape(int max_rank = 3, int max_dim = 4) {
    Shape s(static_cast<size_t>(rng.uniform_int(1, max_rank)));
    for (int& d : s) d = rng.uniform_int(1, max_dim);
    return s;
  }

  Shape nchw(int max_c = 4, int max_hw = 5) {
    return {rng.uniform_int(1, 2), rng.uniform_int(1, max_c), rng.uniform_int(1, max_hw), rng.uniform_int(1, max_hw)};
  }
};

ScalarFn through_mean(const std::function<Tensor(const std::vector<Tensor>&)>& f) {
  return [f](const std::vector<Tensor>& v) { return op::mean(f(v)); };
}

/// Weighted sum with fixed coefficients, so non-scalar outputs reduce to a
/// scalar that exercises every output element with a distinct gradient.
ScalarFn weighted(const std::function<Tensor(const std::vector<Tensor>&)>& f, Rng& rng) {
  auto coeffs = std::make_shared<std::vector<double>>();
  uint64_t s = rng.next_u64();
  return [f, coeffs, s](const std::vector<Tensor>& v) {
    Tensor y = f(v);
    if (coeffs->empty()) {
      Rng local(s);
      for (int64_t i = 0; i < y.numel(); ++i) coeffs->push_back(local.uniform(-1, 1));
    }
    Tensor w = Tensor::from(y.shape(), *coeffs);
    return op::sum(op::mul(y, w));
  };
}

}  // namespace

std::vector<CheckResult> run_gradient_checks(const std::string& module_filter, int shapes_per_op, uint64_t seed) {
  Suite s(module_filter, shapes_per_op, seed);

  auto binary = [&](const std::string& name, Tensor (*f)(const Tensor&, const Tensor&)) {
    s.check(name, [&s, f](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
      Shape sh = s.small_shape();
      return {weighted([f](const std::vector<Tensor>& v) { return f(v[0], v[1]); }, s.rng), {s.rand(sh), s.rand(sh)}};
    });
  };
  binary("tensor/add", op::add);
  binary("tensor/sub", op::sub);
  binary("tensor/mul", op::mul);

  auto unary = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f, bool nonzero = false) {
    s.check(name, [&s, f, nonzero](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
      Shape sh = s.small_shape();
      Tensor x = nonzero ? s.rand_nonzero(sh) : s.rand(sh);
      return {weighted([f](const std::vector<Tensor>& v) { return f(v[0]); }, s.rng), {x}};
    });
  };
  unary("tensor/scale", [&](const Tensor& a) { return op::scale(a, 1.7); });
  unary("tensor/add_scalar", [&](const Tensor& a) { return op::add_scalar(a, 0.3); });
  unary("tensor/neg", [](const Tensor& a) { return op::neg(a); });
  unary("tensor/abs", [](const Tensor& a) { return op::abs(a); }, true);
  unary("tensor/relu", [](const Tensor& a) { return op::relu(a); }, true);
  unary("tensor/sigmoid", [](const Tensor& a) { return op::sigmoid(a); });
  unary("tensor/swish", [](const Tensor& a) { return op::swish(a); });
  unary("tensor/sum", [](const Tensor& a) { return op::sum(a); });
  unary("tensor/mean", [](const Tensor& a) { return op::mean(a); });

  s.check("tensor/softmax", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.small_shape(3, 4);
    int axis = rng.uniform_int(0, static_cast<int>(sh.size()) - 1);
    return {weighted([axis](const std::vector<Tensor>& v) { return op::softmax(v[0], axis); }, s.rng),
            {s.rand(sh, -2, 2)}};
  });

  s.check("tensor/reshape", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = {2, 3, 2};
    return {weighted([](const std::vector<Tensor>& v) { return op::reshape(v[0], {3, 4}); }, s.rng), {s.rand(sh)}};
  });

  s.check("tensor/permute", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = {2, 3, 2, 2};
    std::vector<int> dims = {0, 1, 2, 3};
    shuffle(dims, rng);
    return {weighted([dims](const std::vector<Tensor>& v) { return op::permute(v[0], dims); }, s.rng), {s.rand(sh)}};
  });

  s.check("tensor/transpose2d", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    return {weighted([](const std::vector<Tensor>& v) { return op::transpose2d(v[0]); }, s.rng), {s.rand({3, 4})}};
  });

  s.check("tensor/concat", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int rows = rng.uniform_int(1, 3);
    return {weighted([](const std::vector<Tensor>& v) { return op::concat({v[0], v[1]}, 0); }, s.rng),
            {s.rand({rows, 3}), s.rand({2, 3})}};
  });

  s.check("tensor/matmul", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int m = rng.uniform_int(1, 3), k = rng.uniform_int(1, 3), n = rng.uniform_int(1, 3);
    return {weighted([](const std::vector<Tensor>& v) { return op::matmul(v[0], v[1]); }, s.rng),
            {s.rand({m, k}), s.rand({k, n})}};
  });

  s.check("tensor/batched_matmul", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int b = rng.uniform_int(1, 2), m = rng.uniform_int(1, 3), k = rng.uniform_int(1, 3), n = rng.uniform_int(1, 3);
    return {weighted([](const std::vector<Tensor>& v) { return op::batched_matmul(v[0], v[1]); }, s.rng),
            {s.rand({b, m, k}), s.rand({b, k, n})}};
  });

  s.check("tensor/conv2d", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3), k = rng.uniform_int(1, 3);
    int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
    int hw = rng.uniform_int(k, 5);
    return {weighted([stride, pad](const std::vector<Tensor>& v) { return op::conv2d(v[0], v[1], v[2], stride, pad); },
                     s.rng),
            {s.rand({1, cin, hw, hw}), s.rand({cout, cin, k, k}), s.rand({cout})}};
  });

  s.check("tensor/pad2d", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int t = rng.uniform_int(0, 1), b = rng.uniform_int(0, 1), l = rng.uniform_int(0, 1), r = rng.uniform_int(0, 1);
    return {weighted([t, b, l, r](const std::vector<Tensor>& v) { return op::pad2d(v[0], t, b, l, r); }, s.rng),
            {s.rand(s.nchw())}};
  });

  s.check("tensor/nearest_upsample2x", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    return {weighted([](const std::vector<Tensor>& v) { return op::nearest_upsample2x(v[0]); }, s.rng),
            {s.rand(s.nchw(3, 3))}};
  });

  s.check("tensor/group_norm", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int groups = rng.uniform_int(1, 2);
    int c = groups * rng.uniform_int(1, 2);
    int hw = rng.uniform_int(2, 4);
    return {weighted([groups](const std::vector<Tensor>& v) { return op::group_norm(v[0], groups, v[1], v[2], 1e-6); },
                     s.rng),
            {s.rand({2, c, hw, hw}), s.rand({c}, 0.5, 1.5), s.rand({c})}};
  });

  s.check("tensor/channel_l2_normalize", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    return {weighted([](const std::vector<Tensor>& v) { return op::channel_l2_normalize(v[0]); }, s.rng),
            {s.rand(s.nchw(), 0.3, 1.0)}};
  });

  s.check("tensor/channel_affine", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.nchw(3, 4);
    std::vector<double> shift, scl;
    for (int c = 0; c < sh[1]; ++c) {
      shift.push_back(rng.uniform(-0.2, 0.2));
      scl.push_back(rng.uniform(0.4, 0.6));
    }
    return {weighted([shift, scl](const std::vector<Tensor>& v) { return op::channel_affine(v[0], shift, scl); },
                     s.rng),
            {s.rand(sh)}};
  });

  s.check("tensor/add_chw", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.nchw();
    return {weighted([](const std::vector<Tensor>& v) { return op::add_chw(v[0], v[1]); }, s.rng),
            {s.rand(sh), s.rand({sh[1], sh[2], sh[3]})}};
  });

  s.check("tensor/dropout", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.small_shape();
    uint64_t mask_seed = rng.next_u64();
    // The mask is replayed from a fixed seed so every finite-difference
    // evaluation sees the same dropped elements.
    return {weighted(
                [mask_seed](const std::vector<Tensor>& v) {
                  Rng mask_rng(mask_seed);
                  return op::dropout(v[0], 0.3, true, mask_rng);
                },
                s.rng),
            {s.rand(sh)}};
  });

  s.check("tensor/gather_rows", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int k = rng.uniform_int(2, 4), d = rng.uniform_int(1, 3);
    std::vector<int> idx(static_cast<size_t>(rng.uniform_int(1, 5)));
    for (int& i : idx) i = rng.uniform_int(0, k - 1);
    return {weighted([idx](const std::vector<Tensor>& v) { return op::gather_rows(v[0], idx); }, s.rng),
            {s.rand({k, d})}};
  });

  auto block_check = [&](const std::string& name,
                         const std::function<std::function<Tensor(const Tensor&)>(ParamStore&, Rng&, Shape&)>& make) {
    s.check(name, [&s, make](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
      auto params = std::make_shared<ParamStore>();
      Shape in_shape;
      auto fwd = make(*params, rng, in_shape);
      std::vector<Tensor> leaves = {s.rand(in_shape)};
      for (const Tensor& t : params->tensors()) leaves.push_back(t);
      return {weighted([fwd](const std::vector<Tensor>& v) { return fwd(v[0]); }, s.rng), leaves};
    });
  };

  block_check("blocks/residual", [](ParamStore& p, Rng& rng, Shape& in) {
    int cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    in = {1, cin, 4, 4};
    auto b = std::make_shared<ResidualBlock>(cin, cout, p, "res", rng);
    return [b](const Tensor& x) { return b->forward(x); };
  });

  block_check("blocks/downsample", [](ParamStore& p, Rng& rng, Shape& in) {
    int c = rng.uniform_int(1, 3);
    in = {1, c, 4, 4};
    auto b = std::make_shared<DownsampleBlock>(c, p, "down", rng);
    return [b](const Tensor& x) { return b->forward(x); };
  });

  block_check("blocks/upsample", [](ParamStore& p, Rng& rng, Shape& in) {
    int c = rng.uniform_int(1, 3);
    in = {1, c, 3, 3};
    auto b = std::make_shared<UpsampleBlock>(c, p, "up", rng);
    return [b](const Tensor& x) { return b->forward(x); };
  });

  block_check("blocks/nonlocal", [](ParamStore& p, Rng& rng, Shape& in) {
    int c = rng.uniform_int(2, 4);
    in = {1, c, 3, 3};
    auto b = std::make_shared<NonLocalBlock>(c, p, "attn", rng);
    return [b](const Tensor& x) { return b->forward(x); };
  });

  block_check("blocks/group_norm_layer", [](ParamStore& p, Rng& rng, Shape& in) {
    int c = rng.uniform_int(1, 4);
    in = {2, c, 3, 3};
    auto b = std::make_shared<GroupNormLayer>(c, p, "gn");
    return [b](const Tensor& x) { return b->forward(x); };
  });

  s.check("pos/apply", [&s](Rng& rng) -> std::pair<ScalarFn, std::vector<Tensor>> {
    int c = 4 * rng.uniform_int(1, 2);
    int hw = rng.uniform_int(2, 4);
    auto pe = std::make_shared<PositionalEncoding2D>(c, hw, hw, 0.3);
    uint64_t mask_seed = rng.next_u64();
    return {weighted(
                [pe, mask_seed](const std::vector<Tensor>& v) {
                  Rng mask_rng(mask_seed);
                  return pe->apply(v[0], true, mask_rng);
                },
                s.rng),
            {s.rand({1, c, hw, hw})}};
  });

  s.check("losses/reconstruction_l1", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.small_shape();
    // Pairs drawn apart so |a-b| stays away from the kink.
    return {through_mean([](const std::vector<Tensor>& v) { return reconstruction_l1(v[0], v[1]); }),
            {s.rand(sh, 0.5, 1.0), s.rand(sh, -1.0, -0.5)}};
  });

  s.check("losses/reconstruction_mse", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.small_shape();
    return {through_mean([](const std::vector<Tensor>& v) { return reconstruction_mse(v[0], v[1]); }),
            {s.rand(sh), s.rand(sh)}};
  });

  s.check("losses/vq_loss", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.small_shape();
    LossWeights w;
    return {through_mean([w](const std::vector<Tensor>& v) { return vq_loss(v[0], v[1], v[2], v[3], w); }),
            {s.rand(sh), s.rand(sh), s.rand({}, 0, 1), s.rand({}, 0, 1)}};
  });

  {
    auto extractor = std::make_shared<RandomConvExtractor>();
    s.check("losses/perceptual", [&s, extractor](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
      Shape sh = {1, 3, 6, 6};
      return {through_mean(
                  [extractor](const std::vector<Tensor>& v) { return perceptual_distance(v[0], v[1], *extractor); }),
              {s.rand(sh), s.rand(sh)}};
    });
  }

  s.check("losses/generator_adversarial", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    return {through_mean([](const std::vector<Tensor>& v) { return generator_adversarial_loss(v[0]); }),
            {s.rand(s.small_shape())}};
  });

  s.check("losses/discriminator_hinge", [&s](Rng&) -> std::pair<ScalarFn, std::vector<Tensor>> {
    Shape sh = s.small_shape();
    // Logits away from the +/-1 hinge corners.
    return {through_mean([](const std::vector<Tensor>& v) { return discriminator_hinge_loss(v[0], v[1]); }),
            {s.rand(sh, -0.5, 0.5), s.rand(sh, -0.5, 0.5)}};
  });

  return s.results;
}

}  // namespace vqab::gradcheck
