#include "vqab/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace vqab {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Rng: xoshiro256** seeded via splitmix64. Fixed bit-level behaviour on every
// platform, serializable as four decimal words.
// ---------------------------------------------------------------------------

namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[1] * 5, 7) * 9;
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
  uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << s_[0] << " " << s_[1] << " " << s_[2] << " " << s_[3];
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  for (auto& s : s_) {
    if (!(is >> s)) throw std::runtime_error("Rng::deserialize: malformed state");
  }
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor wrap(std::shared_ptr<TensorData> d) { return Tensor(std::move(d)); }

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double v) {
  auto d = std::make_shared<TensorData>();
  d->shape = shape;
  d->value.assign(static_cast<size_t>(shape_numel(shape)), v);
  return wrap(std::move(d));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  auto d = std::make_shared<TensorData>();
  d->shape = shape;
  d->value = std::move(data);
  return wrap(std::move(d));
}

Tensor Tensor::scalar(double v) {
  auto d = std::make_shared<TensorData>();
  d->shape = {};
  d->value = {v};
  return wrap(std::move(d));
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, Rng& rng) {
  auto d = std::make_shared<TensorData>();
  d->shape = shape;
  d->value.resize(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d->value) v = rng.uniform(lo, hi);
  return wrap(std::move(d));
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return d_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (!d_ || d_->grad.empty()) return std::vector<double>(d_ ? d_->value.size() : 0, 0.0);
  return d_->grad;
}

Tensor Tensor::detach() const {
  auto d = std::make_shared<TensorData>();
  d->shape = d_->shape;
  d->value = d_->value;
  d->requires_grad = false;
  return wrap(std::move(d));
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

thread_local Tape* Tape::current_ = nullptr;

Tape* Tape::current() { return current_; }

void Tape::backward(const Tensor& root) {
  if (consumed_) throw std::runtime_error("backward called twice on the same tape");
  if (!root.defined() || root.numel() != 1)
    throw std::invalid_argument("backward root must be a scalar, got shape " +
                                (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  consumed_ = true;
  auto d = root.data();
  d->ensure_grad();
  d->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope() : prev_(Tape::current_) { Tape::current_ = &tape_; }
TapeScope::~TapeScope() { Tape::current_ = prev_; }

void backward(const Tensor& root) {
  Tape* t = Tape::current();
  if (!t) throw std::runtime_error("backward called with no active tape");
  t->backward(root);
}

}  // namespace vqab
