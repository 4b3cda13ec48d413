#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pirt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major array of doubles. Copies are cheap handles onto the same
/// node; every op allocates fresh storage for its result, so no two results
/// ever share data.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access, for leaves (parameters, optimizer updates, buffers).
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::size_t flat) const { return impl_->data[flat]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient view; zeros of the right size when none was accumulated.
  std::span<const double> grad() const;
  void zero_grad() { impl_->grad.clear(); }
  void accumulate_grad(std::span<const double> g) const;
  /// Writable gradient buffer (allocated on demand).
  std::span<double> grad_buffer() const;

  /// Deep copy without gradient participation.
  Tensor detach() const;
  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }
  bool defined() const { return impl_ != nullptr; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Records differentiable operations in execution order. Exactly one tape is
/// active per thread; operations executed while no tape is active are not
/// recorded.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule);
  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the recorded rules in reverse.
  /// The tape is cleared afterwards.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }

  static Tape* active();

 private:
  friend class TapeGuard;
  std::vector<Entry> entries_;
};

/// Makes a tape the active one for the current thread for its lifetime.
class TapeGuard {
 public:
  explicit TapeGuard(Tape& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* previous_;
};

/// Convenience: backward on the currently active tape.
void backward(const Tensor& loss);

/// True when an op over these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

// Serialization: u64 rank, u64 extents, f64 payload, all little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void write_u64(std::ostream& out, std::uint64_t v);
void write_u32(std::ostream& out, std::uint32_t v);
std::uint64_t read_u64(std::istream& in);
std::uint32_t read_u32(std::istream& in);
void write_string(std::ostream& out, const std::string& s);
std::string read_string(std::istream& in);

}  // namespace pirt
