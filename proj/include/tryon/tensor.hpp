#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tryon {

// ---------------------------------------------------------------- errors

struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ContractError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };
struct StateError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };

// ---------------------------------------------------------------- shape / dtype

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

enum class DType : uint8_t { f32 = 0, f64 = 1 };

inline size_t dtype_size(DType dt) { return dt == DType::f32 ? 4u : 8u; }
const char* dtype_name(DType dt);

// ---------------------------------------------------------------- instrumentation

// flops counts multiply-accumulates times two and is incremented by matmul
// only; everything the complexity claims care about is matmul-dominated.
// score_value_flops additionally captures matmul work issued while a
// ScoreFlopScope is active (the attention score and value products).
// Live-byte counters track tensor payload allocations.
struct Counters {
  uint64_t flops = 0;
  uint64_t score_value_flops = 0;
  uint64_t current_live_bytes = 0;
  uint64_t peak_live_bytes = 0;

  // Zeroes the flop counters and collapses peak to the currently live bytes,
  // so a measured region reports its own marginal peak.
  void reset();

  static Counters& global();
};

class ScoreFlopScope {
 public:
  ScoreFlopScope();
  ~ScoreFlopScope();
  ScoreFlopScope(const ScoreFlopScope&) = delete;
  ScoreFlopScope& operator=(const ScoreFlopScope&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------- grad mode

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------- rng

// mt19937_64 plus hand-rolled Box-Muller / bit-twiddled uniforms, so the
// generated stream is identical on every standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  double uniform();                             // [0, 1)
  double normal();                              // N(0, 1)
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive

  Rng child(uint64_t stream) const;             // derived independent stream
  static uint64_t mix(uint64_t a, uint64_t b);

 private:
  std::mt19937_64 eng_;
  uint64_t seed_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------- tensor core

class Tensor;

struct TensorImpl;

struct Node {
  std::vector<Tensor> inputs;
  // Receives the node's output; reads its grad (and value where needed) and
  // accumulates into the inputs' grads. Runs under NoGrad.
  std::function<void(TensorImpl&)> backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::vector<std::byte> buf;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;      // lazily created accumulator
  std::shared_ptr<Node> producer;        // autodiff edge, null for leaves

  TensorImpl(Shape s, DType dt);
  ~TensorImpl();
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;

  int64_t numel() const;
  size_t bytes() const { return buf.size(); }

  template <class T>
  T* ptr() { return reinterpret_cast<T*>(buf.data()); }
  template <class T>
  const T* ptr() const { return reinterpret_cast<const T*>(buf.data()); }

  double get(int64_t i) const;
  void set(int64_t i, double v);
};

// Value-semantic handle over a shared tensor payload. Ops are free functions
// in ops.hpp; every op output is a fresh tensor (no aliasing views).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, DType dt = DType::f32, bool requires_grad = false);
  static Tensor full(Shape s, double v, DType dt = DType::f32);
  static Tensor from(Shape s, const std::vector<double>& vals, DType dt = DType::f32);
  static Tensor randn(Shape s, Rng& rng, DType dt = DType::f32, double std = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int64_t dim(int i) const;  // supports negative indices
  int rank() const;
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  Tensor grad() const;   // undefined handle when no grad accumulated
  void zero_grad();      // drops the accumulator

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;
  std::vector<double> to_vector() const;

  Tensor clone() const;          // deep copy, detached from the graph
  Tensor astype(DType dt) const; // converted detached copy

  // raw typed access (leaf initialization, oracles); T must match dtype
  template <class T>
  std::span<T> data();
  template <class T>
  std::span<const T> data() const;

  TensorImpl& impl() const;
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into every
// reachable tensor that requires grad; the traversed graph is released
// afterwards unless retain_graph is set.
void backward(const Tensor& loss, bool retain_graph = false);

uint64_t fnv1a_hash(const void* data, size_t len, uint64_t seed = 1469598103934665603ull);
uint64_t hash_params(std::span<const NamedParam> params);

}  // namespace tryon
