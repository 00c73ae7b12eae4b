#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vqab {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Deterministic seeded generator. All randomness in the project flows
/// through this class; std distributions are avoided so that streams are
/// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();
  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  uint64_t s_[4];
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    int j = rng.uniform_int(0, i);
    std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
  }
}

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

/// Dense 64-bit float tensor, row-major, with an optional reverse-mode
/// gradient buffer. Copies are shallow; the underlying buffer is shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor from(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return d_->numel(); }
  const std::vector<double>& value() const { return d_->value; }
  std::vector<double>& mutable_value() { return d_->value; }
  double item() const;

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  /// Gradient buffer; zeros if no gradient has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad() {
    if (d_) d_->grad.clear();
  }

  /// Same values, no gradient participation.
  Tensor detach() const;

  std::shared_ptr<TensorData> data() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;

  friend Tensor wrap(std::shared_ptr<TensorData> d);
};

Tensor wrap(std::shared_ptr<TensorData> d);

/// Ordered record of backward rules for one forward pass. Ops record onto
/// the innermost active TapeScope; backward replays in reverse. A tape can
/// be traversed once; a second backward without re-recording throws.
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  void backward(const Tensor& root);
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* current();

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;

  friend class TapeScope;
  static thread_local Tape* current_;
};

/// RAII activation of a fresh tape on the current thread.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape& tape() { return tape_; }
  void backward(const Tensor& root) { tape_.backward(root); }

 private:
  Tape tape_;
  Tape* prev_;
};

/// Backward through the innermost active tape.
void backward(const Tensor& root);

}  // namespace vqab
