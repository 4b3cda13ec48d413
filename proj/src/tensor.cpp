#include "pirt/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>

#include "pirt/error.hpp"

namespace pirt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) const {
  if (g.size() != impl_->data.size()) {
    throw DimensionError("gradient size mismatch for " + shape_str(shape()));
  }
  auto& dst = impl_->grad;
  if (dst.empty()) {
    dst.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

// --- tape ------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  bool produced = std::any_of(entries_.begin(), entries_.end(),
                              [&](const Entry& e) { return e.output.same_node(loss); });
  if (!produced) throw ContractError("loss was not produced through this tape");
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
  entries_.clear();
}

TapeGuard::TapeGuard(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeGuard::~TapeGuard() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw ContractError("backward called with no active tape");
  tape->backward(loss);
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// --- serialization ---------------------------------------------------------

namespace {

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(buf, bytes);
}

std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char buf[8];
  auto offset = in.tellg();
  if (!in.read(reinterpret_cast<char*>(buf), bytes)) {
    throw FormatError("unexpected end of data at offset " + std::to_string(static_cast<long long>(offset)));
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v, 8); }
void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v, 4); }
std::uint64_t read_u64(std::istream& in) { return get_le(in, 8); }
std::uint32_t read_u32(std::istream& in) { return static_cast<std::uint32_t>(get_le(in, 4)); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  auto offset = in.tellg();
  auto n = read_u64(in);
  if (n > (std::uint64_t{1} << 30)) {
    throw FormatError("implausible string length at offset " + std::to_string(static_cast<long long>(offset)));
  }
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError("truncated string at offset " + std::to_string(static_cast<long long>(offset)));
  }
  return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, t.rank());
  for (auto e : t.shape()) write_u64(out, e);
  for (double v : t.data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
}

Tensor read_tensor(std::istream& in) {
  auto offset = static_cast<long long>(in.tellg());
  auto rank = read_u64(in);
  if (rank == 0 || rank > kMaxRank) {
    throw FormatError("bad tensor rank " + std::to_string(rank) + " at offset " + std::to_string(offset));
  }
  Shape shape(rank);
  std::uint64_t n = 1;
  for (auto& e : shape) {
    auto v = read_u64(in);
    if (v == 0 || v > kMaxElements) {
      throw FormatError("bad tensor extent at offset " + std::to_string(offset));
    }
    e = static_cast<std::size_t>(v);
    n *= v;
    if (n > kMaxElements) throw FormatError("tensor too large at offset " + std::to_string(offset));
  }
  std::vector<unsigned char> raw(n * 8);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("truncated tensor payload at offset " + std::to_string(offset));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace pirt
