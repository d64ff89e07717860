#include "xemb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "xemb/kernels.hpp"

namespace xemb {

namespace {

bool g_nan_guard = true;

constexpr int64_t kElemwiseCutoff = 1 << 14;

std::shared_ptr<TensorNode> make_node(Shape shape, const char* op) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->op = op;
  return n;
}

void check_finite(const TensorNode& n) {
  if (!g_nan_guard) return;
  if (!kern::all_finite(n.value.data(), n.numel()))
    throw std::runtime_error(std::string("non-finite value produced by op '") +
                             n.op + "'");
}

void accumulate(TensorNode& parent, const std::vector<double>& contrib) {
  parent.ensure_grad();
  const int64_t n = parent.numel();
  double* g = parent.grad.data();
  const double* c = contrib.data();
#pragma omp parallel for schedule(static) if (n > kElemwiseCutoff)
  for (int64_t i = 0; i < n; ++i) g[i] += c[i];
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void set_nan_guard(bool on) { g_nan_guard = on; }
bool nan_guard_enabled() { return g_nan_guard; }

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  return full(s, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& s, double v, bool requires_grad) {
  auto n = make_node(s, "leaf");
  n->value.assign(static_cast<size_t>(shape_numel(s)), v);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from_data(const Shape& s, std::vector<double> data,
                         bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != shape_numel(s))
    throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                " values for shape " + shape_str(s));
  auto n = make_node(s, "leaf");
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::randn(const Shape& s, Rng& rng, double stdev,
                     bool requires_grad) {
  auto n = make_node(s, "leaf");
  n->value.resize(static_cast<size_t>(shape_numel(s)));
  for (auto& v : n->value) v = rng.gaussian() * stdev;
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::uniform(const Shape& s, Rng& rng, double lo, double hi,
                       bool requires_grad) {
  auto n = make_node(s, "leaf");
  n->value.resize(static_cast<size_t>(shape_numel(s)));
  for (auto& v : n->value) v = rng.uniform(lo, hi);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

int64_t Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r)
    throw std::invalid_argument("dim index out of range for " +
                                shape_str(shape()));
  return node_->shape[static_cast<size_t>(i)];
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item() on tensor of shape " +
                                shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return std::vector<double>(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  auto n = make_node(node_->shape, "leaf");
  n->value = node_->value;
  n->requires_grad = false;
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Broadcasting

namespace {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<int64_t> a_strides;  // per out dim, 0 where a broadcasts
  std::vector<int64_t> b_strides;
  bool same_shape = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out_shape = a;
    plan.same_shape = true;
    return plan;
  }
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  plan.out_shape.resize(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int64_t da = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
    const int64_t db = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string(op) + ": cannot broadcast " +
                                  shape_str(a) + " with " + shape_str(b));
    plan.out_shape[static_cast<size_t>(i)] = std::max(da, db);
  }
  auto strides_for = [&](const Shape& s, int rs) {
    std::vector<int64_t> st(static_cast<size_t>(r), 0);
    int64_t stride = 1;
    for (int i = rs - 1; i >= 0; --i) {
      const int out_i = i + (r - rs);
      if (s[static_cast<size_t>(i)] != 1) st[static_cast<size_t>(out_i)] = stride;
      stride *= s[static_cast<size_t>(i)];
    }
    return st;
  };
  plan.a_strides = strides_for(a, ra);
  plan.b_strides = strides_for(b, rb);
  return plan;
}

// Walks the broadcast output space calling fn(out_idx, a_off, b_off).
template <typename Fn>
void broadcast_walk(const BroadcastPlan& plan, Fn&& fn) {
  const int r = static_cast<int>(plan.out_shape.size());
  const int64_t n = shape_numel(plan.out_shape);
  std::vector<int64_t> coord(static_cast<size_t>(r), 0);
  int64_t a_off = 0, b_off = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, a_off, b_off);
    for (int d = r - 1; d >= 0; --d) {
      const size_t du = static_cast<size_t>(d);
      ++coord[du];
      a_off += plan.a_strides[du];
      b_off += plan.b_strides[du];
      if (coord[du] < plan.out_shape[du]) break;
      a_off -= plan.a_strides[du] * plan.out_shape[du];
      b_off -= plan.b_strides[du] * plan.out_shape[du];
      coord[du] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

template <BinOp Op>
inline double bin_eval(double a, double b) {
  if constexpr (Op == BinOp::Add) return a + b;
  if constexpr (Op == BinOp::Sub) return a - b;
  if constexpr (Op == BinOp::Mul) return a * b;
  return a / b;
}

template <BinOp Op>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  auto out = make_node(plan.out_shape, name);
  out->value.resize(static_cast<size_t>(shape_numel(plan.out_shape)));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out->value.data();
  if (plan.same_shape) {
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > kElemwiseCutoff)
    for (int64_t i = 0; i < n; ++i) po[i] = bin_eval<Op>(pa[i], pb[i]);
  } else {
    broadcast_walk(plan, [&](int64_t i, int64_t ia, int64_t ib) {
      po[i] = bin_eval<Op>(pa[ia], pb[ib]);
    });
  }
  check_finite(*out);

  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backward = [plan](TensorNode& self) {
      auto& pa_node = *self.parents[0];
      auto& pb_node = *self.parents[1];
      const double* g = self.grad.data();
      const double* av = pa_node.value.data();
      const double* bv = pb_node.value.data();
      const bool need_a = pa_node.requires_grad;
      const bool need_b = pb_node.requires_grad;
      if (need_a) pa_node.ensure_grad();
      if (need_b) pb_node.ensure_grad();
      double* ga = need_a ? pa_node.grad.data() : nullptr;
      double* gb = need_b ? pb_node.grad.data() : nullptr;
      if (plan.same_shape) {
        const int64_t n = self.numel();
        for (int64_t i = 0; i < n; ++i) {
          const double gi = g[i];
          if constexpr (Op == BinOp::Add) {
            if (need_a) ga[i] += gi;
            if (need_b) gb[i] += gi;
          } else if constexpr (Op == BinOp::Sub) {
            if (need_a) ga[i] += gi;
            if (need_b) gb[i] -= gi;
          } else if constexpr (Op == BinOp::Mul) {
            if (need_a) ga[i] += gi * bv[i];
            if (need_b) gb[i] += gi * av[i];
          } else {
            if (need_a) ga[i] += gi / bv[i];
            if (need_b) gb[i] -= gi * av[i] / (bv[i] * bv[i]);
          }
        }
      } else {
        broadcast_walk(plan, [&](int64_t i, int64_t ia, int64_t ib) {
          const double gi = g[i];
          if constexpr (Op == BinOp::Add) {
            if (need_a) ga[ia] += gi;
            if (need_b) gb[ib] += gi;
          } else if constexpr (Op == BinOp::Sub) {
            if (need_a) ga[ia] += gi;
            if (need_b) gb[ib] -= gi;
          } else if constexpr (Op == BinOp::Mul) {
            if (need_a) ga[ia] += gi * bv[ib];
            if (need_b) gb[ib] += gi * av[ia];
          } else {
            if (need_a) ga[ia] += gi / bv[ib];
            if (need_b) gb[ib] -= gi * av[ia] / (bv[ib] * bv[ib]);
          }
        });
      }
    };
  }
  return Tensor(out);
}

template <typename FwdFn, typename BwdFn>
Tensor unary_op(const Tensor& a, const char* name, FwdFn fwd, BwdFn make_bwd) {
  auto out = make_node(a.shape(), name);
  out->value.resize(a.data().size());
  const double* pa = a.data().data();
  double* po = out->value.data();
  const int64_t n = a.numel();
#pragma omp parallel for schedule(static) if (n > kElemwiseCutoff)
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  check_finite(*out);
  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward = make_bwd();
  }
  return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op<BinOp::Add>(a, b, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op<BinOp::Sub>(a, b, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op<BinOp::Mul>(a, b, "mul");
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op<BinOp::Div>(a, b, "div");
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, "neg", [](double x) { return -x; },
      [] {
        return [](TensorNode& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const int64_t n = self.numel();
          for (int64_t i = 0; i < n; ++i) p.grad[i] -= self.grad[i];
        };
      });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      a, "scale", [c](double x) { return c * x; },
      [c] {
        return [c](TensorNode& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const int64_t n = self.numel();
          for (int64_t i = 0; i < n; ++i) p.grad[i] += c * self.grad[i];
        };
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      a, "add_scalar", [c](double x) { return x + c; },
      [] {
        return [](TensorNode& self) {
          accumulate(*self.parents[0], self.grad);
        };
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_node({m, n}, "matmul");
  out->value.resize(static_cast<size_t>(m * n));
  kern::matmul(a.data().data(), b.data().data(), out->value.data(), m, k, n);
  check_finite(*out);
  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backward = [m, k, n](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        kern::matmul_grad_a(self.grad.data(), pb.value.data(), pa.grad.data(),
                            m, k, n);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        kern::matmul_grad_b(pa.value.data(), self.grad.data(), pb.grad.data(),
                            m, k, n);
      }
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose: expected rank 2, got " +
                                shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  auto out = make_node({n, m}, "transpose");
  out->value.resize(a.data().size());
  const double* pa = a.data().data();
  double* po = out->value.data();
#pragma omp parallel for schedule(static) if (m * n > kElemwiseCutoff)
  for (int64_t j = 0; j < n; ++j)
    for (int64_t i = 0; i < m; ++i) po[j * m + i] = pa[i * n + j];
  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward = [m, n](TensorNode& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < m; ++i)
          p.grad[i * n + j] += self.grad[j * m + i];
    };
  }
  return Tensor(out);
}

Tensor reshape(const Tensor& a, const Shape& s) {
  if (shape_numel(s) != a.numel())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " +
                                shape_str(s) + " changes element count");
  auto out = make_node(s, "reshape");
  out->value = a.data();
  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward = [](TensorNode& self) {
      accumulate(*self.parents[0], self.grad);
    };
  }
  return Tensor(out);
}

namespace {
// outer/inner extents around `axis` for block-copy based ops.
void axis_extents(const Shape& s, int axis, int64_t* outer, int64_t* inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i)
    *inner *= s[i];
}
}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("concat: bad axis");
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
        throw std::invalid_argument("concat: shape mismatch " +
                                    shape_str(p.shape()));
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;
  auto out = make_node(out_shape, "concat");
  out->value.resize(static_cast<size_t>(shape_numel(out_shape)));
  int64_t outer, inner;
  axis_extents(out_shape, axis, &outer, &inner);

  std::vector<int64_t> offsets;  // axis offset of each part
  int64_t off = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int64_t pa = p.dim(axis);
    const double* src = p.data().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * pa * inner, src + (o + 1) * pa * inner,
                out->value.data() + (o * axis_total + off) * inner);
    off += pa;
    any_grad = any_grad || p.requires_grad();
  }
  out->requires_grad = any_grad;
  if (any_grad) {
    std::vector<int64_t> part_axis;
    for (const auto& p : parts) {
      out->parents.push_back(p.node());
      part_axis.push_back(p.dim(axis));
    }
    out->backward = [outer, inner, axis_total, offsets,
                     part_axis](TensorNode& self) {
      for (size_t pi = 0; pi < self.parents.size(); ++pi) {
        auto& p = *self.parents[pi];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        const int64_t pa = part_axis[pi];
        for (int64_t o = 0; o < outer; ++o) {
          const double* g =
              self.grad.data() + (o * axis_total + offsets[pi]) * inner;
          double* pg = p.grad.data() + o * pa * inner;
          for (int64_t i = 0; i < pa * inner; ++i) pg[i] += g[i];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("slice: bad axis");
  const int64_t extent = a.dim(axis);
  if (start < 0 || len <= 0 || start + len > extent)
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") outside extent " + std::to_string(extent));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  auto out = make_node(out_shape, "slice");
  out->value.resize(static_cast<size_t>(shape_numel(out_shape)));
  int64_t outer, inner;
  axis_extents(a.shape(), axis, &outer, &inner);
  const double* src = a.data().data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(src + (o * extent + start) * inner,
              src + (o * extent + start + len) * inner,
              out->value.data() + o * len * inner);
  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward = [outer, inner, extent, start, len](TensorNode& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const double* g = self.grad.data() + o * len * inner;
        double* pg = p.grad.data() + (o * extent + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) pg[i] += g[i];
      }
    };
  }
  return Tensor(out);
}

std::vector<Tensor> split(const Tensor& a, const std::vector<int64_t>& sizes,
                          int axis) {
  int ax = axis < 0 ? axis + a.rank() : axis;
  int64_t total = 0;
  for (int64_t s : sizes) total += s;
  if (ax < 0 || ax >= a.rank() || total != a.dim(ax))
    throw std::invalid_argument("split: sizes do not cover axis extent");
  std::vector<Tensor> out;
  int64_t start = 0;
  for (int64_t s : sizes) {
    out.push_back(slice(a, ax, start, s));
    start += s;
  }
  return out;
}

Tensor sum(const Tensor& a) {
  auto out = make_node({1}, "sum");
  out->value = {kern::reduce_sum(a.data().data(), a.numel())};
  check_finite(*out);
  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    out->backward = [](TensorNode& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const double g = self.grad[0];
      const int64_t n = p.numel();
      double* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n > kElemwiseCutoff)
      for (int64_t i = 0; i < n; ++i) pg[i] += g;
    };
  }
  return Tensor(out);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const int64_t cols = x.dim(-1);
  if (gain.numel() != cols || bias.numel() != cols)
    throw std::invalid_argument("layer_norm: gain/bias must have length " +
                                std::to_string(cols));
  const int64_t rows = x.numel() / cols;
  auto out = make_node(x.shape(), "layer_norm");
  out->value.resize(x.data().size());
  auto mu = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  kern::layer_norm(x.data().data(), gain.data().data(), bias.data().data(),
                   out->value.data(), mu->data(), rstd->data(), rows, cols,
                   eps);
  check_finite(*out);
  out->requires_grad =
      x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node(), gain.node(), bias.node()};
    out->backward = [rows, cols, mu, rstd](TensorNode& self) {
      auto& px = *self.parents[0];
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      // kernel writes all three; route unused ones into scratch
      std::vector<double> scratch_x, scratch_g, scratch_b;
      double* dx;
      double* dgain;
      double* dbias;
      if (px.requires_grad) {
        px.ensure_grad();
        dx = px.grad.data();
      } else {
        scratch_x.assign(px.value.size(), 0.0);
        dx = scratch_x.data();
      }
      if (pg.requires_grad) {
        pg.ensure_grad();
        dgain = pg.grad.data();
      } else {
        scratch_g.assign(pg.value.size(), 0.0);
        dgain = scratch_g.data();
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        dbias = pb.grad.data();
      } else {
        scratch_b.assign(pb.value.size(), 0.0);
        dbias = scratch_b.data();
      }
      kern::layer_norm_backward(px.value.data(), pg.value.data(), mu->data(),
                                rstd->data(), self.grad.data(), dx, dgain,
                                dbias, rows, cols);
    };
  }
  return Tensor(out);
}

Tensor softmax(const Tensor& x) {
  const int64_t cols = x.dim(-1);
  const int64_t rows = x.numel() / cols;
  auto out = make_node(x.shape(), "softmax");
  out->value.resize(x.data().size());
  kern::softmax_rows(x.data().data(), out->value.data(), rows, cols);
  check_finite(*out);
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward = [rows, cols](TensorNode& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      kern::softmax_rows_backward(self.value.data(), self.grad.data(),
                                  p.grad.data(), rows, cols);
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [] {
        return [](TensorNode& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const int64_t n = self.numel();
          const double* xv = p.value.data();
          for (int64_t i = 0; i < n; ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            p.grad[i] += self.grad[i] * (cdf + v * pdf);
          }
        };
      });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, "tanh", [](double v) { return std::tanh(v); },
      [] {
        return [](TensorNode& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const int64_t n = self.numel();
          for (int64_t i = 0; i < n; ++i) {
            const double y = self.value[i];
            p.grad[i] += self.grad[i] * (1.0 - y * y);
          }
        };
      });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); },
      [] {
        return [](TensorNode& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const int64_t n = self.numel();
          for (int64_t i = 0; i < n; ++i)
            p.grad[i] += self.grad[i] * self.value[i];
        };
      });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(v); },
      [] {
        return [](TensorNode& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const int64_t n = self.numel();
          for (int64_t i = 0; i < n; ++i)
            p.grad[i] += self.grad[i] / p.value[i];
        };
      });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [] {
        return [](TensorNode& self) {
          auto& p = *self.parents[0];
          p.ensure_grad();
          const int64_t n = self.numel();
          for (int64_t i = 0; i < n; ++i)
            p.grad[i] += self.grad[i] * 0.5 / self.value[i];
        };
      });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 double scale_factor) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw std::invalid_argument(
        "attention: q,k,v must share shape [heads,t,dh], got " +
        shape_str(q.shape()));
  const int64_t h = q.dim(0), t = q.dim(1), dh = q.dim(2);
  auto out = make_node(q.shape(), "attention");
  out->value.resize(q.data().size());
  auto probs =
      std::make_shared<std::vector<double>>(static_cast<size_t>(h * t * t));
  kern::attention_forward(q.data().data(), k.data().data(), v.data().data(),
                          probs->data(), out->value.data(), h, t, dh,
                          scale_factor);
  check_finite(*out);
  out->requires_grad =
      q.requires_grad() || k.requires_grad() || v.requires_grad();
  if (out->requires_grad) {
    out->parents = {q.node(), k.node(), v.node()};
    out->backward = [h, t, dh, scale_factor, probs](TensorNode& self) {
      auto& pq = *self.parents[0];
      auto& pk = *self.parents[1];
      auto& pv = *self.parents[2];
      pq.ensure_grad();
      pk.ensure_grad();
      pv.ensure_grad();
      kern::attention_backward(pq.value.data(), pk.value.data(),
                               pv.value.data(), probs->data(),
                               self.grad.data(), pq.grad.data(),
                               pk.grad.data(), pv.grad.data(), h, t, dh,
                               scale_factor);
    };
  }
  return Tensor(out);
}

Tensor embedding(const Tensor& table, const std::vector<int>& indices) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding: table must be [vocab, dim]");
  const int64_t vocab = table.dim(0), dim = table.dim(1);
  for (int idx : indices)
    if (idx < 0 || idx >= vocab)
      throw std::invalid_argument("embedding: index " + std::to_string(idx) +
                                  " outside vocabulary of " +
                                  std::to_string(vocab));
  const int64_t n = static_cast<int64_t>(indices.size());
  auto out = make_node({n, dim}, "embedding");
  out->value.resize(static_cast<size_t>(n * dim));
  const double* src = table.data().data();
  for (int64_t i = 0; i < n; ++i)
    std::copy(src + indices[static_cast<size_t>(i)] * dim,
              src + (indices[static_cast<size_t>(i)] + 1) * dim,
              out->value.data() + i * dim);
  out->requires_grad = table.requires_grad();
  if (out->requires_grad) {
    out->parents = {table.node()};
    out->backward = [indices, dim](TensorNode& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      // serial scatter-add: indices may repeat
      for (size_t i = 0; i < indices.size(); ++i) {
        const double* g = self.grad.data() + static_cast<int64_t>(i) * dim;
        double* pg = p.grad.data() + indices[i] * dim;
        for (int64_t d = 0; d < dim; ++d) pg[d] += g[d];
      }
    };
  }
  return Tensor(out);
}

Tensor permute_gather(const Tensor& x,
                      std::shared_ptr<std::vector<int64_t>> index_map,
                      const Shape& out_shape, bool injective) {
  if (static_cast<int64_t>(index_map->size()) != shape_numel(out_shape))
    throw std::invalid_argument("permute_gather: map size does not match " +
                                shape_str(out_shape));
  auto out = make_node(out_shape, "permute_gather");
  out->value.resize(index_map->size());
  const double* src = x.data().data();
  double* dst = out->value.data();
  const int64_t n = static_cast<int64_t>(index_map->size());
  const int64_t* map = index_map->data();
#pragma omp parallel for schedule(static) if (n > kElemwiseCutoff)
  for (int64_t i = 0; i < n; ++i) dst[i] = src[map[i]];
  out->requires_grad = x.requires_grad();
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward = [index_map, injective](TensorNode& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const int64_t n2 = self.numel();
      const int64_t* m = index_map->data();
      const double* g = self.grad.data();
      double* pg = p.grad.data();
      if (injective) {
#pragma omp parallel for schedule(static) if (n2 > kElemwiseCutoff)
        for (int64_t i = 0; i < n2; ++i) pg[m[i]] += g[i];
      } else {
        for (int64_t i = 0; i < n2; ++i) pg[m[i]] += g[i];
      }
    };
  }
  return Tensor(out);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw std::invalid_argument("cosine_similarity: length mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  double na2 = 0.0, nb2 = 0.0;
  for (double v : a.data()) na2 += v * v;
  for (double v : b.data()) nb2 += v * v;
  if (na2 == 0.0 || nb2 == 0.0)
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  Shape flat{a.numel()};
  Tensor af = reshape(a, flat), bf = reshape(b, flat);
  Tensor dot = sum(mul(af, bf));
  Tensor denom = sqrt(mul(sum(mul(af, af)), sum(mul(bf, bf))));
  return div(dot, denom);
}

Tensor to_f32_storage(const Tensor& a) {
  std::vector<double> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<double>(static_cast<float>(a.data()[i]));
  return Tensor::from_data(a.shape(), std::move(v), false);
}

void backprop(const Tensor& output) {
  if (!output.defined() || output.numel() != 1)
    throw std::invalid_argument(
        "backprop: output must be a scalar tensor, got " +
        (output.defined() ? shape_str(output.shape()) : std::string("null")));
  if (!std::isfinite(output.item()))
    throw std::runtime_error("backprop: non-finite output from op '" +
                             std::string(output.node()->op) + "'");

  // iterative post-order DFS -> topological order
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->ensure_grad();
  output.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward && node->grad.size() == node->value.size())
      node->backward(*node);
  }
}

}  // namespace xemb
