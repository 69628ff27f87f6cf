#include "tryon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace tryon {

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

// ---------------------------------------------------------------- counters

Counters& Counters::global() {
  static Counters c;
  return c;
}

void Counters::reset() {
  flops = 0;
  score_value_flops = 0;
  peak_live_bytes = current_live_bytes;
}

namespace {
thread_local bool g_score_scope = false;
thread_local bool g_grad_enabled = true;
}  // namespace

ScoreFlopScope::ScoreFlopScope() : prev_(g_score_scope) { g_score_scope = true; }
ScoreFlopScope::~ScoreFlopScope() { g_score_scope = prev_; }

namespace detail {

void count_alloc(size_t bytes) {
  auto& c = Counters::global();
  c.current_live_bytes += bytes;
  if (c.current_live_bytes > c.peak_live_bytes) c.peak_live_bytes = c.current_live_bytes;
}

void count_free(size_t bytes) {
  auto& c = Counters::global();
  c.current_live_bytes -= std::min<uint64_t>(c.current_live_bytes, bytes);
}

void count_matmul_flops(uint64_t f) {
  auto& c = Counters::global();
  c.flops += f;
  if (g_score_scope) c.score_value_flops += f;
}

}  // namespace detail

// ---------------------------------------------------------------- grad mode

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---------------------------------------------------------------- rng

namespace {
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace

Rng::Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

double Rng::uniform() {
  // 53-bit mantissa construction, engine-stream deterministic
  return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw ContractError("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  // modulo bias is irrelevant at the ranges used here, but keep rejection
  // sampling so every range is exactly uniform
  const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % span;
  uint64_t x = 0;
  do {
    x = eng_();
  } while (x >= limit);
  return lo + static_cast<int64_t>(x % span);
}

Rng Rng::child(uint64_t stream) const { return Rng(splitmix64(seed_ ^ splitmix64(stream))); }

uint64_t Rng::mix(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// ---------------------------------------------------------------- tensor impl

TensorImpl::TensorImpl(Shape s, DType dt) : shape(std::move(s)), dtype(dt) {
  for (int64_t d : shape) {
    if (d < 1) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  buf.resize(static_cast<size_t>(numel_of(shape)) * dtype_size(dtype));
  detail::count_alloc(buf.size());
}

TensorImpl::~TensorImpl() { detail::count_free(buf.size()); }

int64_t TensorImpl::numel() const { return numel_of(shape); }

double TensorImpl::get(int64_t i) const {
  return dtype == DType::f32 ? static_cast<double>(ptr<float>()[i]) : ptr<double>()[i];
}

void TensorImpl::set(int64_t i, double v) {
  if (dtype == DType::f32)
    ptr<float>()[i] = static_cast<float>(v);
  else
    ptr<double>()[i] = v;
}

// ---------------------------------------------------------------- tensor handle

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::zeros(Shape s, DType dt, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>(std::move(s), dt);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::full(Shape s, double v, DType dt) {
  Tensor t = zeros(std::move(s), dt);
  auto& im = t.impl();
  for (int64_t i = 0; i < im.numel(); ++i) im.set(i, v);
  return t;
}

Tensor Tensor::from(Shape s, const std::vector<double>& vals, DType dt) {
  if (numel_of(s) != static_cast<int64_t>(vals.size()))
    throw ShapeError("from: value count does not match shape " + shape_str(s));
  Tensor t = zeros(std::move(s), dt);
  auto& im = t.impl();
  for (size_t i = 0; i < vals.size(); ++i) im.set(static_cast<int64_t>(i), vals[i]);
  return t;
}

Tensor Tensor::randn(Shape s, Rng& rng, DType dt, double std) {
  Tensor t = zeros(std::move(s), dt);
  auto& im = t.impl();
  for (int64_t i = 0; i < im.numel(); ++i) im.set(i, rng.normal() * std);
  return t;
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
int64_t Tensor::numel() const { return impl().numel(); }
int Tensor::rank() const { return static_cast<int>(impl().shape.size()); }
DType Tensor::dtype() const { return impl().dtype; }

int64_t Tensor::dim(int i) const {
  const auto& s = impl().shape;
  const int r = static_cast<int>(s.size());
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range");
  return s[static_cast<size_t>(i)];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  impl().requires_grad = v;
  if (!v) impl().grad.reset();
  return *this;
}

Tensor Tensor::grad() const {
  return impl().grad ? wrap(impl().grad) : Tensor();
}

void Tensor::zero_grad() { impl().grad.reset(); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
  return impl().get(0);
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const auto& s = impl().shape;
  if (idx.size() != s.size()) throw ShapeError("at(): index rank mismatch");
  int64_t flat = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[k]) throw ShapeError("at(): index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return impl().get(flat);
}

std::vector<double> Tensor::to_vector() const {
  const auto& im = impl();
  std::vector<double> v(static_cast<size_t>(im.numel()));
  for (int64_t i = 0; i < im.numel(); ++i) v[static_cast<size_t>(i)] = im.get(i);
  return v;
}

Tensor Tensor::clone() const {
  const auto& im = impl();
  Tensor t = zeros(im.shape, im.dtype);
  std::memcpy(t.impl().buf.data(), im.buf.data(), im.buf.size());
  return t;
}

Tensor Tensor::astype(DType dt) const {
  const auto& im = impl();
  if (dt == im.dtype) return clone();
  Tensor t = zeros(im.shape, dt);
  for (int64_t i = 0; i < im.numel(); ++i) t.impl().set(i, im.get(i));
  return t;
}

template <class T>
std::span<T> Tensor::data() {
  auto& im = impl();
  if ((std::is_same_v<T, float> && im.dtype != DType::f32) ||
      (std::is_same_v<T, double> && im.dtype != DType::f64))
    throw ContractError("data<T>(): dtype mismatch");
  return std::span<T>(im.ptr<T>(), static_cast<size_t>(im.numel()));
}

template <class T>
std::span<const T> Tensor::data() const {
  const auto& im = impl();
  if ((std::is_same_v<T, float> && im.dtype != DType::f32) ||
      (std::is_same_v<T, double> && im.dtype != DType::f64))
    throw ContractError("data<T>(): dtype mismatch");
  return std::span<const T>(im.ptr<T>(), static_cast<size_t>(im.numel()));
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

// ---------------------------------------------------------------- backward

void backward(const Tensor& loss, bool retain_graph) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // post-order DFS; order is structural, so accumulation is deterministic
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(&loss.impl(), 0);
  seen.insert(&loss.impl());
  while (!stack.empty()) {
    auto& [impl, next_child] = stack.back();
    Node* node = impl->producer.get();
    const size_t n_in = node ? node->inputs.size() : 0;
    if (next_child < n_in) {
      TensorImpl* child = &node->inputs[next_child].impl();
      ++next_child;
      if (child->producer && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  NoGradGuard ng;
  auto& li = loss.impl();
  li.grad = std::make_shared<TensorImpl>(li.shape, li.dtype);
  li.grad->set(0, 1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (impl->producer && impl->grad) impl->producer->backward(*impl);
  }
  if (!retain_graph) {
    for (TensorImpl* impl : order) impl->producer.reset();
  }
}

// ---------------------------------------------------------------- hashing

uint64_t fnv1a_hash(const void* data, size_t len, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t hash_params(std::span<const NamedParam> params) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    h = fnv1a_hash(p.name.data(), p.name.size(), h);
    const auto& im = p.tensor.impl();
    h = fnv1a_hash(im.buf.data(), im.buf.size(), h);
  }
  return h;
}

}  // namespace tryon
