#include "tunein/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "op_util.hpp"

namespace tunein {

using detail::AxisSplit;
using detail::CMapR;
using detail::grad_target;
using detail::make_result;
using detail::MapR;
using detail::Node;
using detail::split_axis;

namespace {

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

// How b broadcasts against a: each b element is reused for `outer` blocks.
template <typename T>
std::size_t broadcast_inner(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (b.numel() == 1) return 1;
  if (is_suffix(a.shape(), b.shape())) return b.numel();
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                   shape_str(a.shape()));
}

// True when a should be the broadcast operand (commutative ops only).
template <typename T>
bool should_swap(const Tensor<T>& a, const Tensor<T>& b) {
  return a.numel() < b.numel() && (a.numel() == 1 || is_suffix(b.shape(), a.shape()));
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd f, DA dfa, DB dfb) {
  const std::size_t inner = broadcast_inner(a, b, op);
  const std::size_t n = a.numel();
  const auto& av = a.values();
  const auto& bv = b.values();
  Buffer<T> out(n);
  if (inner == 1) {
    const T bs = bv[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bs);
  } else {
    for (std::size_t o = 0; o < n; o += inner) {
      for (std::size_t i = 0; i < inner; ++i) out[o + i] = f(av[o + i], bv[i]);
    }
  }
  return make_result<T>(op, a.shape(), std::move(out), {a, b}, [inner, dfa, dfb](Node<T>& self) {
    const auto& g = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const std::size_t n = g.size();
    if (auto* ga = grad_target(self, 0)) {
      for (std::size_t k = 0; k < n; ++k) (*ga)[k] += g[k] * dfa(av[k], bv[k % inner], self.value[k]);
    }
    if (auto* gb = grad_target(self, 1)) {
      for (std::size_t k = 0; k < n; ++k) (*gb)[k % inner] += g[k] * dfb(av[k], bv[k % inner], self.value[k]);
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd f, Deriv df) {
  const auto& av = a.values();
  Buffer<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [df](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      const auto& av = self.inputs[0]->value;
      for (std::size_t k = 0; k < self.grad.size(); ++k) (*ga)[k] += self.grad[k] * df(av[k], self.value[k]);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (should_swap(a, b)) return add(b, a);
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (should_swap(a, b)) return neg(sub(b, a));
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (should_swap(a, b)) return mul(b, a);
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary<T>(
      "add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary<T>(
      "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& a, const Tensor<T>& slope) {
  if (slope.numel() != 1) throw ShapeError("prelu: slope must have one element, got " + shape_str(slope.shape()));
  return binary<T>(
      "prelu", a, slope, [](T x, T s) { return x > T(0) ? x : s * x; },
      [](T x, T s, T) { return x > T(0) ? T(1) : s; }, [](T x, T, T) { return x > T(0) ? T(0) : x; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(
      "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>(
      "square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T floor) {
  return unary<T>(
      "clamp_min", a, [floor](T x) { return x > floor ? x : floor; },
      [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto& av = a.values();
  T total = T(0);
  for (const T v : av) total += v;
  return make_result<T>("sum", {}, {total}, {a}, [](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      const T g = self.grad[0];
      for (auto& v : *ga) v += g;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  const auto& av = a.values();
  Buffer<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      const T* src = av.data() + (o * s.n + j) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {a}, [s](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* g = self.grad.data() + o * s.inner;
        for (std::size_t j = 0; j < s.n; ++j) {
          T* dst = ga->data() + (o * s.n + j) * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const std::size_t n = a.dim(axis);
  return scale(sum(a, axis, keepdim), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result<T>("reshape", std::move(shape), a.values(), {a}, [](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      for (std::size_t k = 0; k < self.grad.size(); ++k) (*ga)[k] += self.grad[k];
    }
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const Shape& in = a.shape();
  const std::size_t r = in.size();
  if (axes.size() != r) throw ShapeError("permute: axis list rank mismatch for " + shape_str(in));
  std::vector<bool> seen(r, false);
  for (const auto ax : axes) {
    if (ax >= r || seen[ax]) throw ShapeError("permute: invalid axis list for " + shape_str(in));
    seen[ax] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // Gather index for every output element, reused by backward.
  const std::size_t n = a.numel();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  if (r > 0) {
    std::vector<std::size_t> counter(r, 0);
    std::size_t src = 0;
    for (std::size_t k = 0; k < n; ++k) {
      (*index)[k] = src;
      for (std::size_t d = r; d-- > 0;) {
        ++counter[d];
        src += src_strides[d];
        if (counter[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        counter[d] = 0;
      }
    }
  }
  const auto& av = a.values();
  Buffer<T> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = av[(*index)[k]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {a}, [index](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      for (std::size_t k = 0; k < self.grad.size(); ++k) (*ga)[(*index)[k]] += self.grad[k];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (begin >= end || end > s.n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const std::size_t m = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = m;
  const auto& av = a.values();
  Buffer<T> out(s.outer * m * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.data() + (o * s.n + begin) * s.inner, m * s.inner, out.data() + o * m * s.inner);
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {a}, [s, begin, m](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* g = self.grad.data() + o * m * s.inner;
        T* dst = ga->data() + (o * s.n + begin) * s.inner;
        for (std::size_t i = 0; i < m * s.inner; ++i) dst[i] += g[i];
      }
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(ref));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(ref));
      }
    }
    widths.push_back(s[axis]);
    total += s[axis];
  }
  const AxisSplit s0 = split_axis(ref, axis);
  Shape out_shape = ref;
  out_shape[axis] = total;
  Buffer<T> out(s0.outer * total * s0.inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& pv = parts[p].values();
    const std::size_t block = widths[p] * s0.inner;
    for (std::size_t o = 0; o < s0.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + (o * total + offset) * s0.inner);
    }
    offset += widths[p];
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts, [s0, widths, total](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t block = widths[p] * s0.inner;
      if (auto* gp = grad_target(self, p)) {
        for (std::size_t o = 0; o < s0.outer; ++o) {
          const T* g = self.grad.data() + (o * total + offset) * s0.inner;
          T* dst = gp->data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
        }
      }
      offset += widths[p];
    }
  });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& a, const std::vector<std::size_t>& rows) {
  if (a.rank() == 0) throw ShapeError("index_select: scalar input");
  if (rows.empty()) throw ShapeError("index_select: empty row list");
  const std::size_t n = a.dim(0);
  const std::size_t width = a.numel() / n;
  for (const auto r : rows) {
    if (r >= n) throw ShapeError("index_select: row " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = rows.size();
  const auto& av = a.values();
  Buffer<T> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(av.data() + rows[i] * width, width, out.data() + i * width);
  return make_result<T>("index_select", std::move(out_shape), std::move(out), {a}, [rows, width](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const T* g = self.grad.data() + i * width;
        T* dst = ga->data() + rows[i] * width;
        for (std::size_t k = 0; k < width; ++k) dst[k] += g[k];
      }
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must be at least 2-D, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t k2 = bs[bs.size() - 2];
  const std::size_t n = bs.back();
  const Shape abatch(as.begin(), as.end() - 2);
  const Shape bbatch(bs.begin(), bs.end() - 2);
  if (k != k2 || (!abatch.empty() && !bbatch.empty() && abatch != bbatch)) {
    throw ShapeError("matmul: shape mismatch " + shape_str(as) + " x " + shape_str(bs));
  }
  const Shape& batch_shape = abatch.empty() ? bbatch : abatch;
  const std::size_t batch = numel_of(batch_shape);
  const std::size_t a_step = abatch.empty() ? 0 : m * k;
  const std::size_t b_step = bbatch.empty() ? 0 : k * n;
  Shape out_shape = batch_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    CMapR<T> A(a.values().data() + i * a_step, m, k);
    CMapR<T> B(b.values().data() + i * b_step, k, n);
    MapR<T> C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                        [=](Node<T>& self) {
                          auto* ga = grad_target(self, 0);
                          auto* gb = grad_target(self, 1);
                          const auto& av = self.inputs[0]->value;
                          const auto& bv = self.inputs[1]->value;
                          for (std::size_t i = 0; i < batch; ++i) {
                            CMapR<T> G(self.grad.data() + i * m * n, m, n);
                            if (ga) {
                              MapR<T> GA(ga->data() + i * a_step, m, k);
                              CMapR<T> B(bv.data() + i * b_step, k, n);
                              GA.noalias() += G * B.transpose();
                            }
                            if (gb) {
                              MapR<T> GB(gb->data() + i * b_step, k, n);
                              CMapR<T> A(av.data() + i * a_step, m, k);
                              GB.noalias() += A.transpose() * G;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() < 1) {
    throw ShapeError("linear: bad operand ranks " + shape_str(x.shape()) + " / " + shape_str(weight.shape()));
  }
  const std::size_t out_f = weight.dim(0);
  const std::size_t in_f = weight.dim(1);
  if (x.shape().back() != in_f) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.numel() != out_f)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Buffer<T> out(rows * out_f);
  {
    CMapR<T> X(x.values().data(), rows, in_f);
    CMapR<T> W(weight.values().data(), out_f, in_f);
    MapR<T> Y(out.data(), rows, out_f);
    Y.noalias() = X * W.transpose();
    if (has_bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.values().data(), out_f);
      Y.rowwise() += b;
    }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>("linear", std::move(out_shape), std::move(out), std::move(inputs),
                        [=](Node<T>& self) {
                          CMapR<T> G(self.grad.data(), rows, out_f);
                          if (auto* gx = grad_target(self, 0)) {
                            MapR<T> GX(gx->data(), rows, in_f);
                            CMapR<T> W(self.inputs[1]->value.data(), out_f, in_f);
                            GX.noalias() += G * W;
                          }
                          if (auto* gw = grad_target(self, 1)) {
                            MapR<T> GW(gw->data(), out_f, in_f);
                            CMapR<T> X(self.inputs[0]->value.data(), rows, in_f);
                            GW.noalias() += G.transpose() * X;
                          }
                          if (has_bias) {
                            if (auto* gb = grad_target(self, 2)) {
                              Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(gb->data(), out_f);
                              GB += G.colwise().sum();
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  const auto& av = a.values();
  Buffer<T> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, av[base + j * s.inner]);
      T total = T(0);
      for (std::size_t j = 0; j < s.n; ++j) {
        const T e = std::exp(av[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] *= inv;
    }
  }
  return make_result<T>("softmax", a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      const auto& y = self.value;
      const auto& g = self.grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.n * s.inner + i;
          T dot = T(0);
          for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t p = base + j * s.inner;
            (*ga)[p] += y[p] * (g[p] - dot);
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  const auto& av = a.values();
  Buffer<T> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, av[base + j * s.inner]);
      T total = T(0);
      for (std::size_t j = 0; j < s.n; ++j) total += std::exp(av[base + j * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = av[base + j * s.inner] - lse;
    }
  }
  return make_result<T>("log_softmax", a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    if (auto* ga = grad_target(self, 0)) {
      const auto& y = self.value;
      const auto& g = self.grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.n * s.inner + i;
          T gsum = T(0);
          for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t p = base + j * s.inner;
            (*ga)[p] += g[p] - std::exp(y[p]) * gsum;
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const AxisSplit s = split_axis(x.shape(), axis);
  if (gain.numel() != s.n || bias.numel() != s.n) {
    throw ShapeError("layer_norm: gain/bias of size " + std::to_string(gain.numel()) + "/" +
                     std::to_string(bias.numel()) + " do not match axis size " + std::to_string(s.n));
  }
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  const std::size_t slices = s.outer * s.inner;
  auto xhat = std::make_shared<Buffer<T>>(xv.size());
  auto rstd = std::make_shared<Buffer<T>>(slices);
  Buffer<T> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mu = T(0);
      for (std::size_t j = 0; j < s.n; ++j) mu += xv[base + j * s.inner];
      mu /= static_cast<T>(s.n);
      T var = T(0);
      for (std::size_t j = 0; j < s.n; ++j) {
        const T d = xv[base + j * s.inner] - mu;
        var += d * d;
      }
      var /= static_cast<T>(s.n);
      const T r = T(1) / std::sqrt(var + eps);
      (*rstd)[o * s.inner + i] = r;
      for (std::size_t j = 0; j < s.n; ++j) {
        const std::size_t p = base + j * s.inner;
        const T h = (xv[p] - mu) * r;
        (*xhat)[p] = h;
        out[p] = h * gv[j] + bv[j];
      }
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [s, xhat, rstd](Node<T>& self) {
        const auto& g = self.grad;
        const auto& gv = self.inputs[1]->value;
        auto* gx = grad_target(self, 0);
        auto* gg = grad_target(self, 1);
        auto* gb = grad_target(self, 2);
        const T inv_n = T(1) / static_cast<T>(s.n);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.n * s.inner + i;
            T mean_dh = T(0);
            T mean_dh_h = T(0);
            for (std::size_t j = 0; j < s.n; ++j) {
              const std::size_t p = base + j * s.inner;
              const T dh = g[p] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[p];
              if (gg) (*gg)[j] += g[p] * (*xhat)[p];
              if (gb) (*gb)[j] += g[p];
            }
            if (!gx) continue;
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            const T r = (*rstd)[o * s.inner + i];
            for (std::size_t j = 0; j < s.n; ++j) {
              const std::size_t p = base + j * s.inner;
              (*gx)[p] += r * (g[p] * gv[j] - mean_dh - (*xhat)[p] * mean_dh_h);
            }
          }
        }
      },
      xv.size() + slices);
}

template <typename T>
Tensor<T> unfold1d(const Tensor<T>& x, std::size_t window, std::size_t stride) {
  if (x.rank() != 1) throw ShapeError("unfold1d: expected 1-D input, got " + shape_str(x.shape()));
  if (window == 0 || stride == 0) throw ShapeError("unfold1d: window and stride must be positive");
  const std::size_t len = x.numel();
  if (len < window) {
    throw ShapeError("unfold1d: input length " + std::to_string(len) + " shorter than window " + std::to_string(window));
  }
  const std::size_t frames = (len - window) / stride + 1;
  const auto& xv = x.values();
  Buffer<T> out(frames * window);
  for (std::size_t f = 0; f < frames; ++f) std::copy_n(xv.data() + f * stride, window, out.data() + f * window);
  return make_result<T>("unfold1d", {frames, window}, std::move(out), {x}, [frames, window, stride](Node<T>& self) {
    if (auto* gx = grad_target(self, 0)) {
      for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t w = 0; w < window; ++w) (*gx)[f * stride + w] += self.grad[f * window + w];
      }
    }
  });
}

template <typename T>
Tensor<T> fold1d(const Tensor<T>& frames, std::size_t stride) {
  if (frames.rank() != 2) throw ShapeError("fold1d: expected [frames, window], got " + shape_str(frames.shape()));
  if (stride == 0) throw ShapeError("fold1d: stride must be positive");
  const std::size_t nf = frames.dim(0);
  const std::size_t window = frames.dim(1);
  const std::size_t len = (nf - 1) * stride + window;
  const auto& fv = frames.values();
  Buffer<T> out(len, T(0));
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t w = 0; w < window; ++w) out[f * stride + w] += fv[f * window + w];
  }
  return make_result<T>("fold1d", {len}, std::move(out), {frames}, [nf, window, stride](Node<T>& self) {
    if (auto* gf = grad_target(self, 0)) {
      for (std::size_t f = 0; f < nf; ++f) {
        for (std::size_t w = 0; w < window; ++w) (*gf)[f * window + w] += self.grad[f * stride + w];
      }
    }
  });
}

template <typename T>
Tensor<T> frame_segments(const Tensor<T>& x, std::size_t segment) {
  if (segment < 2 || segment % 2 != 0) {
    throw ShapeError("frame_segments: segment length must be even and >= 2, got " + std::to_string(segment));
  }
  if (x.rank() < 1) throw ShapeError("frame_segments: scalar input");
  const std::size_t len = x.dim(0);
  const std::size_t width = x.numel() / len;
  const std::size_t hop = segment / 2;
  std::size_t padded = segment;
  if (len > segment) padded = segment + ((len - segment + hop - 1) / hop) * hop;
  const std::size_t count = (padded - segment) / hop + 1;
  Shape out_shape{count, segment};
  out_shape.insert(out_shape.end(), x.shape().begin() + 1, x.shape().end());
  const auto& xv = x.values();
  Buffer<T> out(count * segment * width, T(0));
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t k = 0; k < segment; ++k) {
      const std::size_t t = s * hop + k;
      if (t < len) std::copy_n(xv.data() + t * width, width, out.data() + (s * segment + k) * width);
    }
  }
  return make_result<T>("frame_segments", std::move(out_shape), std::move(out), {x},
                        [=](Node<T>& self) {
                          if (auto* gx = grad_target(self, 0)) {
                            for (std::size_t s = 0; s < count; ++s) {
                              for (std::size_t k = 0; k < segment; ++k) {
                                const std::size_t t = s * hop + k;
                                if (t >= len) continue;
                                const T* g = self.grad.data() + (s * segment + k) * width;
                                T* dst = gx->data() + t * width;
                                for (std::size_t i = 0; i < width; ++i) dst[i] += g[i];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> overlap_add_segments(const Tensor<T>& seg, std::size_t length) {
  if (seg.rank() < 2) throw ShapeError("overlap_add_segments: expected [S, K, ...], got " + shape_str(seg.shape()));
  const std::size_t count = seg.dim(0);
  const std::size_t segment = seg.dim(1);
  if (segment < 2 || segment % 2 != 0) throw ShapeError("overlap_add_segments: segment length must be even");
  const std::size_t hop = segment / 2;
  const std::size_t padded = (count - 1) * hop + segment;
  if (length == 0 || length > padded) {
    throw ShapeError("overlap_add_segments: length " + std::to_string(length) + " inconsistent with " +
                     std::to_string(count) + " segments of " + std::to_string(segment));
  }
  const std::size_t width = seg.numel() / (count * segment);
  auto coverage = std::make_shared<Buffer<T>>(length, T(0));
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t k = 0; k < segment; ++k) {
      const std::size_t t = s * hop + k;
      if (t < length) (*coverage)[t] += T(1);
    }
  }
  Shape out_shape{length};
  out_shape.insert(out_shape.end(), seg.shape().begin() + 2, seg.shape().end());
  const auto& sv = seg.values();
  Buffer<T> out(length * width, T(0));
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t k = 0; k < segment; ++k) {
      const std::size_t t = s * hop + k;
      if (t >= length) continue;
      const T* src = sv.data() + (s * segment + k) * width;
      T* dst = out.data() + t * width;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
  }
  for (std::size_t t = 0; t < length; ++t) {
    const T inv = T(1) / (*coverage)[t];
    for (std::size_t i = 0; i < width; ++i) out[t * width + i] *= inv;
  }
  return make_result<T>("overlap_add_segments", std::move(out_shape), std::move(out), {seg},
                        [=](Node<T>& self) {
                          if (auto* gs = grad_target(self, 0)) {
                            for (std::size_t s = 0; s < count; ++s) {
                              for (std::size_t k = 0; k < segment; ++k) {
                                const std::size_t t = s * hop + k;
                                if (t >= length) continue;
                                const T inv = T(1) / (*coverage)[t];
                                const T* g = self.grad.data() + t * width;
                                T* dst = gs->data() + (s * segment + k) * width;
                                for (std::size_t i = 0; i < width; ++i) dst[i] += g[i] * inv;
                              }
                            }
                          }
                        });
}

#define TUNEIN_INSTANTIATE_OPS(T)                                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                  \
  template Tensor<T> neg(const Tensor<T>&);                                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                           \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                        \
  template Tensor<T> tanh(const Tensor<T>&);                                                           \
  template Tensor<T> exp(const Tensor<T>&);                                                            \
  template Tensor<T> log(const Tensor<T>&);                                                            \
  template Tensor<T> abs(const Tensor<T>&);                                                            \
  template Tensor<T> square(const Tensor<T>&);                                                         \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                            \
  template Tensor<T> mean(const Tensor<T>&);                                                           \
  template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                                         \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                 \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                               \
  template Tensor<T> index_select(const Tensor<T>&, const std::vector<std::size_t>&);                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> layer_norm(const Tensor<T>&, std::size_t, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> unfold1d(const Tensor<T>&, std::size_t, std::size_t);                             \
  template Tensor<T> fold1d(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> frame_segments(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> overlap_add_segments(const Tensor<T>&, std::size_t);

TUNEIN_INSTANTIATE_OPS(float)
TUNEIN_INSTANTIATE_OPS(double)

}  // namespace tunein
