#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <cblas.h>

namespace pocvit {

using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (int e : s) n *= static_cast<size_t>(e);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Dense row-major tensor with a reverse-mode differentiation record.
// Values are immutable once an op has consumed the tensor; leaves marked
// trainable accumulate gradients across backward() calls until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(numel(t.node_->shape), 0.0);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    if (numel(shape) != data.size())
      throw std::invalid_argument("Tensor::from: shape/data mismatch");
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t size() const { return node_->value.size(); }
  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  double item() const {
    if (node_->value.size() != 1) throw std::logic_error("item(): tensor is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    return *this;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  std::shared_ptr<TensorNode> node() const { return node_; }

  // Reverse-mode sweep from this scalar; seed is the cotangent of the root.
  void backward(double seed = 1.0) const {
    if (node_->value.size() != 1)
      throw std::logic_error("backward(): root must be scalar");
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::function<void(TensorNode*)> dfs = [&](TensorNode* n) {
      if (!n->requires_grad || visited.count(n)) return;
      visited.insert(n);
      for (auto& p : n->parents) dfs(p.get());
      order.push_back(n);
    };
    dfs(node_.get());
    for (TensorNode* n : order)
      if (!n->parents.empty()) n->grad.assign(n->value.size(), 0.0);
    node_->ensure_grad();
    node_->grad[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }

  // Builds a result node wired to its parents; backward_fn is dropped when no
  // parent participates in differentiation.
  static Tensor make_op(Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backward_fn) {
    Tensor t = from(std::move(shape), std::move(value));
    bool req = false;
    for (const auto& p : parents) req = req || p.node_->requires_grad;
    if (req) {
      t.node_->requires_grad = true;
      for (auto& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void accumulate(TensorNode& parent, const std::vector<double>& contrib) {
  parent.ensure_grad();
  for (size_t i = 0; i < contrib.size(); ++i) parent.grad[i] += contrib[i];
}
}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return Tensor::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
    if (an->requires_grad) detail::accumulate(*an, out.grad);
    if (bn->requires_grad) detail::accumulate(*bn, out.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return Tensor::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
    if (an->requires_grad) detail::accumulate(*an, out.grad);
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] -= out.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return Tensor::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i] * an->value[i];
    }
  });
}

inline Tensor ediv(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "ediv");
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] / b.data()[i];
  auto an = a.node(), bn = b.node();
  return Tensor::make_op(a.shape(), std::move(v), {a, b}, [an, bn](TensorNode& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < out.grad.size(); ++i)
        bn->grad[i] -= out.grad[i] * out.value[i] / bn->value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * s;
  auto an = a.node();
  return Tensor::make_op(a.shape(), std::move(v), {a}, [an, s](TensorNode& out) {
    an->ensure_grad();
    for (size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i] * s;
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + s;
  auto an = a.node();
  return Tensor::make_op(a.shape(), std::move(v), {a}, [an](TensorNode& out) {
    detail::accumulate(*an, out.grad);
  });
}

// a + s broadcast over all of a; s is a single-element tensor.
inline Tensor add_bcast(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("add_bcast: s must be scalar");
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + s.data()[0];
  auto an = a.node(), sn = s.node();
  return Tensor::make_op(a.shape(), std::move(v), {a, s}, [an, sn](TensorNode& out) {
    if (an->requires_grad) detail::accumulate(*an, out.grad);
    if (sn->requires_grad) {
      sn->ensure_grad();
      for (double g : out.grad) sn->grad[0] += g;
    }
  });
}

inline Tensor square(const Tensor& a) { return mul(a, a); }

// sqrt with a guarded derivative so exactly-zero inputs stay finite.
inline Tensor sqrt_t(const Tensor& a) {
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(a.data()[i]);
  auto an = a.node();
  return Tensor::make_op(a.shape(), std::move(v), {a}, [an](TensorNode& out) {
    an->ensure_grad();
    for (size_t i = 0; i < out.grad.size(); ++i)
      an->grad[i] += out.grad[i] * 0.5 / std::max(out.value[i], 1e-150);
  });
}

// ---- shape ops ----

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) throw std::invalid_argument("reshape: numel mismatch");
  auto an = a.node();
  return Tensor::make_op(std::move(shape), a.data(), {a}, [an](TensorNode& out) {
    detail::accumulate(*an, out.grad);
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape shape = parts[0].shape();
  int rank = static_cast<int>(shape.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
  int total = 0;
  for (const auto& p : parts) {
    if (static_cast<int>(p.shape().size()) != rank)
      throw std::invalid_argument("concat: rank mismatch");
    for (int a = 0; a < rank; ++a)
      if (a != axis && p.shape()[a] != shape[a])
        throw std::invalid_argument("concat: extent mismatch off-axis");
    total += p.shape()[axis];
  }
  shape[axis] = total;

  size_t inner = 1;
  for (int a = axis + 1; a < rank; ++a) inner *= static_cast<size_t>(shape[a]);
  size_t outer = numel(shape) / (static_cast<size_t>(total) * inner);

  std::vector<double> v(numel(shape));
  size_t off = 0;
  std::vector<size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    size_t ext = static_cast<size_t>(p.shape()[axis]);
    for (size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().begin() + o * ext * inner, ext * inner,
                  v.begin() + o * total * inner + off * inner);
    off += ext;
  }

  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::vector<size_t> exts;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    exts.push_back(static_cast<size_t>(p.shape()[axis]));
  }
  size_t total_sz = static_cast<size_t>(total);
  return Tensor::make_op(
      shape, std::move(v), parts,
      [nodes, exts, offsets, outer, inner, total_sz](TensorNode& out) {
        for (size_t k = 0; k < nodes.size(); ++k) {
          if (!nodes[k]->requires_grad) continue;
          nodes[k]->ensure_grad();
          for (size_t o = 0; o < outer; ++o)
            for (size_t i = 0; i < exts[k] * inner; ++i)
              nodes[k]->grad[o * exts[k] * inner + i] +=
                  out.grad[o * total_sz * inner + offsets[k] * inner + i];
        }
      });
}

inline Tensor slice(const Tensor& a, int axis, int start, int len) {
  Shape shape = a.shape();
  int rank = static_cast<int>(shape.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("slice: bad axis");
  if (start < 0 || len <= 0 || start + len > shape[axis])
    throw std::invalid_argument("slice: out of range");
  size_t inner = 1;
  for (int x = axis + 1; x < rank; ++x) inner *= static_cast<size_t>(shape[x]);
  size_t ext = static_cast<size_t>(shape[axis]);
  size_t outer = a.size() / (ext * inner);
  Shape out_shape = shape;
  out_shape[axis] = len;
  std::vector<double> v(numel(out_shape));
  for (size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().begin() + (o * ext + start) * inner,
                static_cast<size_t>(len) * inner, v.begin() + o * len * inner);
  auto an = a.node();
  size_t len_sz = static_cast<size_t>(len), start_sz = static_cast<size_t>(start);
  return Tensor::make_op(out_shape, std::move(v), {a},
                         [an, outer, inner, ext, len_sz, start_sz](TensorNode& out) {
                           an->ensure_grad();
                           for (size_t o = 0; o < outer; ++o)
                             for (size_t i = 0; i < len_sz * inner; ++i)
                               an->grad[(o * ext + start_sz) * inner + i] +=
                                   out.grad[o * len_sz * inner + i];
                         });
}

// ---- matmul and reductions ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.data().data(),
              k, b.data().data(), n, 0.0, v.data(), n);
  auto an = a.node(), bn = b.node();
  return Tensor::make_op({m, n}, std::move(v), {a, b}, [an, bn, m, k, n](TensorNode& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      // dA += dC * B^T
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0,
                  out.grad.data(), n, bn->value.data(), n, 1.0, an->grad.data(), k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      // dB += A^T * dC
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0,
                  an->value.data(), k, out.grad.data(), n, 1.0, bn->grad.data(), n);
    }
  });
}

// x[m,n] + row vector v[n] broadcast over rows
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.shape().size() != 1 || x.shape()[1] != v.shape()[0])
    throw std::invalid_argument("add_rowvec: incompatible shapes");
  int m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(x.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = x.data()[static_cast<size_t>(i) * n + j] + v.data()[j];
  auto xn = x.node(), vn = v.node();
  return Tensor::make_op({m, n}, std::move(out), {x, v}, [xn, vn, m, n](TensorNode& o) {
    if (xn->requires_grad) detail::accumulate(*xn, o.grad);
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) vn->grad[j] += o.grad[static_cast<size_t>(i) * n + j];
    }
  });
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return Tensor::make_op({1}, {s}, {a}, [an](TensorNode& out) {
    an->ensure_grad();
    for (double& g : an->grad) g += out.grad[0];
  });
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.size()); }

// Mean over one axis; the axis is removed from the shape.
inline Tensor mean_axis(const Tensor& a, int axis) {
  Shape shape = a.shape();
  int rank = static_cast<int>(shape.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("mean_axis: bad axis");
  size_t inner = 1;
  for (int x = axis + 1; x < rank; ++x) inner *= static_cast<size_t>(shape[x]);
  size_t ext = static_cast<size_t>(shape[axis]);
  size_t outer = a.size() / (ext * inner);
  Shape out_shape;
  for (int x = 0; x < rank; ++x)
    if (x != axis) out_shape.push_back(shape[x]);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> v(outer * inner, 0.0);
  for (size_t o = 0; o < outer; ++o)
    for (size_t e = 0; e < ext; ++e)
      for (size_t i = 0; i < inner; ++i)
        v[o * inner + i] += a.data()[(o * ext + e) * inner + i];
  for (double& x : v) x /= static_cast<double>(ext);
  auto an = a.node();
  return Tensor::make_op(out_shape, std::move(v), {a},
                         [an, outer, inner, ext](TensorNode& out) {
                           an->ensure_grad();
                           double inv = 1.0 / static_cast<double>(ext);
                           for (size_t o = 0; o < outer; ++o)
                             for (size_t e = 0; e < ext; ++e)
                               for (size_t i = 0; i < inner; ++i)
                                 an->grad[(o * ext + e) * inner + i] +=
                                     out.grad[o * inner + i] * inv;
                         });
}

// ---- verification ----

// Compares reverse-mode gradients of a scalar function against central finite
// differences; returns the max relative error over all components with
// denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                         std::vector<Tensor>& inputs, double step = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f(inputs);
  if (out.size() != 1) throw std::logic_error("grad_check: f must be scalar-valued");
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());

  double max_rel = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].data();
    for (size_t i = 0; i < vals.size(); ++i) {
      double keep = vals[i];
      vals[i] = keep + step;
      double fp = f(inputs).item();
      vals[i] = keep - step;
      double fm = f(inputs).item();
      vals[i] = keep;
      double numeric = (fp - fm) / (2.0 * step);
      double a = analytic[ti][i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace pocvit
