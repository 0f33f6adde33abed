#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace ahstn::diff {

using Shape = std::vector<std::size_t>;

// Eigen picks its vectorized peeling from the runtime address of each buffer,
// so storage alignment has to be fixed for results to be bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

struct TensorNode {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

// Shared handle to a dense row-major float64 array. Copies alias the same
// storage; use detach() or clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer data, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable view for leaf tensors (parameters, optimizer updates, tests).
  std::span<double> mutable_data() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero buffer on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();

  // Independent copy of the values, outside any tape.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of the differentiable operations executed while the tape is
// active. Entries are appended in execution order, so reverse iteration is a
// valid topological order for accumulation.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  void record(Tensor output, BackwardRule rule);

  // Seeds d(loss)/d(loss) = 1 and replays every entry in reverse. A tape can
  // be replayed only once; a new forward pass is required afterwards.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  void clear();

 private:
  struct Entry {
    Tensor output;
    BackwardRule rule;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

Tape* active_tape();

// Makes `tape` the recording target for the current thread for the scope's
// lifetime. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// True when an active tape exists and any input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

// Checks the forward-value invariant in debug builds.
void check_finite(const Tensor& t, const char* op);

// Keeps large freed activation buffers in the process heap instead of
// returning them to the OS after every batch. glibc only; no-op elsewhere.
void tune_allocator();

}  // namespace ahstn::diff
