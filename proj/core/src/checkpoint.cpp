#include "vqab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vqab {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

void put_f64_vec(std::string& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  for (double x : v) put_f64(out, x);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    size_t n = u64();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<double> f64_vec() {
    size_t n = u64();
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = f64();
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out += "VQAB";
  put_u32(out, ckpt.version);
  put_str(out, canonical_config(ckpt.spec));
  put_u64(out, static_cast<uint64_t>(ckpt.epoch));
  put_str(out, ckpt.rng_state);

  put_u64(out, ckpt.parameters.size());
  for (const auto& [name, t] : ckpt.parameters) {
    put_str(out, name);
    put_u64(out, t.shape().size());
    for (int d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
    put_f64_vec(out, t.value());
  }

  put_u64(out, static_cast<uint64_t>(ckpt.optimizer_steps));
  put_u64(out, ckpt.optimizer_slots.size());
  for (const Adam::Slot& s : ckpt.optimizer_slots) {
    put_str(out, s.name);
    put_f64_vec(out, s.m);
    put_f64_vec(out, s.v);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4);
  if (buf.compare(0, 4, "VQAB") != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
  r.pos = 4;

  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ckpt.version));
  std::string spec_text = r.str();
  auto specs = parse_config(spec_text);
  if (specs.size() != 1) throw std::runtime_error("checkpoint: embedded config must hold one experiment");
  ckpt.spec = specs[0];
  ckpt.epoch = static_cast<int64_t>(r.u64());
  ckpt.rng_state = r.str();

  size_t n_params = r.u64();
  for (size_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    size_t rank = r.u64();
    Shape shape(rank);
    for (size_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u64());
    std::vector<double> data = r.f64_vec();
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw std::runtime_error("checkpoint: shape/data mismatch for " + name);
    ckpt.parameters.emplace_back(name, Tensor::from(shape, std::move(data)));
  }

  ckpt.optimizer_steps = static_cast<int64_t>(r.u64());
  size_t n_slots = r.u64();
  for (size_t i = 0; i < n_slots; ++i) {
    Adam::Slot s;
    s.name = r.str();
    s.m = r.f64_vec();
    s.v = r.f64_vec();
    ckpt.optimizer_slots.push_back(std::move(s));
  }
  if (r.pos != buf.size()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return ckpt;
}

Checkpoint snapshot(const ExperimentSpec& spec, const ParamStore& params, const Adam* optimizer, int64_t epoch,
                    const Rng& rng) {
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.epoch = epoch;
  ckpt.rng_state = rng.serialize();
  for (const auto& [name, t] : params.entries())
    ckpt.parameters.emplace_back(name, Tensor::from(t.shape(), t.value()));
  if (optimizer) {
    ckpt.optimizer_slots = optimizer->slots();
    ckpt.optimizer_steps = optimizer->step_count();
  }
  return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, ParamStore& params) {
  if (ckpt.parameters.size() != params.entries().size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < ckpt.parameters.size(); ++i) {
    const auto& [name, src] = ckpt.parameters[i];
    const auto& [live_name, dst] = params.entries()[i];
    if (name != live_name || src.shape() != dst.shape())
      throw std::runtime_error("checkpoint: parameter mismatch at " + name);
    Tensor live = dst;  // shallow copy, shared buffer
    live.mutable_value() = src.value();
  }
}

}  // namespace vqab
