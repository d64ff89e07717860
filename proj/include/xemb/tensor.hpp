// Dense float64 tensors with dynamic tape-based reverse-mode autodiff.
// The graph is rebuilt every step; tensors are immutable values once
// written. A non-finite value produced by any kernel aborts the step with
// the originating op named.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xemb/rng.hpp"

namespace xemb {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized on first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Distributes this node's grad into the parents' grads.
  std::function<void(TensorNode&)> backward;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double v, bool requires_grad = false);
  static Tensor from_data(const Shape& s, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(const Shape& s, Rng& rng, double stdev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(const Shape& s, Rng& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int64_t dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& mutable_data() { return node_->value; }
  double item() const;

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Gradient buffer; zeros if backprop never reached this tensor.
  std::vector<double> grad() const;
  void zero_grad() { node_->grad.clear(); }

  // A new leaf sharing no graph history (values copied).
  Tensor detach() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Runs reverse-mode accumulation from a scalar output. Every requires_grad
// leaf reachable from `output` receives d(output)/d(leaf); leaves not in the
// graph keep (or report) zero grads.
void backprop(const Tensor& output);

// When enabled (default), every kernel checks its forward output and throws
// with the op name on NaN/Inf.
void set_nan_guard(bool on);
bool nan_guard_enabled();

// Elementwise binary ops with numpy-style right-aligned broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only
Tensor transpose(const Tensor& a);                // 2-D
Tensor reshape(const Tensor& a, const Shape& s);
Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& a, const std::vector<int64_t>& sizes,
                          int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);

Tensor sum(const Tensor& a);   // -> shape {1}
Tensor mean(const Tensor& a);  // -> shape {1}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor softmax(const Tensor& x);  // over the last dimension
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);

// q,k,v: [heads, t, dh]; softmax(q k^T * scale) v per head.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 double scale);

// Row lookup: table [vocab, dim], output [indices.size(), dim].
Tensor embedding(const Tensor& table, const std::vector<int>& indices);

// out[i] = x[index_map[i]]. Set `injective` when no source repeats so the
// backward scatter can run in parallel.
Tensor permute_gather(const Tensor& x, std::shared_ptr<std::vector<int64_t>> index_map,
                      const Shape& out_shape, bool injective);

// dot(a,b) / (|a||b|), differentiable; throws on zero-norm input.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// Values passed through float32 and back; the optional 32-bit storage mode.
Tensor to_f32_storage(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace xemb
