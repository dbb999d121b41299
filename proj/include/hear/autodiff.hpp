// Reverse-mode automatic differentiation on a per-step tape. Ops compute
// values eagerly and record index-based closures; backward walks the tape
// in reverse creation order, which is a valid topological order because
// ops only reference earlier nodes. Closures capture node indices, never
// pointers into the node vector, so tape growth is safe.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "hear/errors.hpp"
#include "hear/tensor.hpp"

namespace hear {

// Right-aligned broadcast of shape b onto shape a. b must either match a,
// be an exact suffix of a, or have the same rank with 1s on broadcast
// axes (reshape to full rank for anything more exotic).
class BroadcastMap {
public:
  BroadcastMap(const Shape& a, const Shape& b) : out_shape_(a) {
    if (b.size() > a.size()) {
      throw ShapeMismatch("broadcast: " + shape_str(b) + " onto " +
                          shape_str(a));
    }
    identity_ = (a == b);
    if (identity_) return;
    std::size_t offset = a.size() - b.size();
    bool suffix = true;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b[i] != a[offset + i]) suffix = false;
      if (b[i] != a[offset + i] && b[i] != 1) {
        throw ShapeMismatch("broadcast: " + shape_str(b) + " onto " +
                            shape_str(a));
      }
    }
    suffix_ = suffix;
    b_numel_ = shape_numel(b);
    if (suffix_) return;
    b_strides_.assign(a.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = b.size(); i-- > 0;) {
      if (b[i] != 1) b_strides_[offset + i] = stride;
      stride *= b[i];
    }
  }

  std::size_t operator()(std::size_t flat) const {
    if (identity_) return flat;
    if (suffix_) return flat % b_numel_;
    std::size_t idx = 0;
    for (std::size_t axis = out_shape_.size(); axis-- > 0;) {
      std::size_t d = out_shape_[axis];
      idx += (flat % d) * b_strides_[axis];
      flat /= d;
    }
    return idx;
  }

private:
  Shape out_shape_;
  bool identity_ = false;
  bool suffix_ = false;
  std::size_t b_numel_ = 0;
  std::vector<std::size_t> b_strides_;
};

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_acc(T* __restrict c, const T* __restrict a, const T* __restrict b,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
template <typename T>
void mm_bt_acc(T* __restrict c, const T* __restrict g, const T* __restrict b,
               std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename T>
void mm_at_acc(T* __restrict c, const T* __restrict a, const T* __restrict g,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475)));
}

template <typename T>
T gelu_deriv(T x) {
  T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
  T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

inline double wrap_to_pi(double x) {
  double w = std::fmod(x + 3.14159265358979323846,
                       2.0 * 3.14159265358979323846);
  if (w <= 0.0) w += 2.0 * 3.14159265358979323846;
  return w - 3.14159265358979323846;
}

}  // namespace detail

struct Var {
  std::size_t idx = static_cast<std::size_t>(-1);
  bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

template <typename T>
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t node_count() const { return nodes_.size(); }

  const Tensor<T>& value(Var v) const { return nodes_[v.idx].value; }

  // Gradient accumulated by the last backward(); zeros if the node never
  // received one.
  const Tensor<T>& grad(Var v) {
    return grad_ref(v.idx);
  }

  // --- leaves ---------------------------------------------------------

  Var constant(Tensor<T> v) {
    return push(std::move(v), false);
  }

  // Leaf whose gradient is wanted on the tape itself (inputs under test).
  Var input(Tensor<T> v) {
    return push(std::move(v), true);
  }

  // Leaf bound to an external parameter: the value is copied in and the
  // gradient is accumulated into *sink during backward().
  Var param(const Tensor<T>& value, Tensor<T>* sink) {
    Var v = push(Tensor<T>(value), true);
    std::size_t self = v.idx;
    nodes_[self].backward = [self, sink](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*sink)[i] += g[i];
    };
    return v;
  }

  // --- elementwise and broadcast ops ----------------------------------

  Var add(Var a, Var b) { return add_like(a, b, T(1)); }
  Var sub(Var a, Var b) { return add_like(a, b, T(-1)); }

  Var mul(Var a, Var b) {
    const Tensor<T>& av = nodes_[a.idx].value;
    const Tensor<T>& bv = nodes_[b.idx].value;
    BroadcastMap map(av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[map(i)];
    bool ng = needs(a) || needs(b);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx, bi = b.idx;
    nodes_[self].backward = [self, ai, bi, map](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& av2 = t.nodes_[ai].value;
      const Tensor<T>& bv2 = t.nodes_[bi].value;
      if (t.needs_idx(ai)) {
        Tensor<T>& da = t.grad_ref(ai);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv2[map(i)];
      }
      if (t.needs_idx(bi)) {
        Tensor<T>& db = t.grad_ref(bi);
        for (std::size_t i = 0; i < g.size(); ++i) db[map(i)] += g[i] * av2[i];
      }
    };
    return v;
  }

  Var scale(Var a, T c) {
    const Tensor<T>& av = nodes_[a.idx].value;
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai, c](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
    };
    return v;
  }

  Var add_scalar(Var a, T c) {
    const Tensor<T>& av = nodes_[a.idx].value;
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    };
    return v;
  }

  Var gelu(Var a) {
    const Tensor<T>& av = nodes_[a.idx].value;
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = detail::gelu_value(av[i]);
    }
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& x = t.nodes_[ai].value;
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] * detail::gelu_deriv(x[i]);
      }
    };
    return v;
  }

  Var square(Var a) { return mul(a, a); }

  // Wrap each element to the principal interval (-pi, pi]. The map is a
  // piecewise shift by multiples of 2*pi, so the derivative is 1 almost
  // everywhere and the gradient passes through unchanged.
  Var wrap_phase(Var a) {
    const Tensor<T>& av = nodes_[a.idx].value;
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(detail::wrap_to_pi(static_cast<double>(av[i])));
    }
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    };
    return v;
  }

  // Value copy with the gradient path severed.
  Var detach(Var a) {
    return push(Tensor<T>(nodes_[a.idx].value), false);
  }

  // --- shape ops -------------------------------------------------------

  Var reshape(Var a, Shape shape) {
    const Tensor<T>& av = nodes_[a.idx].value;
    if (shape_numel(shape) != av.size()) {
      throw ShapeMismatch("reshape " + shape_str(av.shape()) + " -> " +
                          shape_str(shape));
    }
    Tensor<T> out(std::move(shape), av.vec());
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    };
    return v;
  }

  Var broadcast_to(Var a, Shape shape) {
    const Tensor<T>& av = nodes_[a.idx].value;
    BroadcastMap map(shape, av.shape());
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[map(i)];
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai, map](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[map(i)] += g[i];
    };
    return v;
  }

  Var transpose(Var a, std::vector<std::size_t> perm) {
    const Tensor<T>& av = nodes_[a.idx].value;
    if (perm.size() != av.rank()) {
      throw ShapeMismatch("transpose perm rank mismatch");
    }
    Tensor<T> out = permute_copy(av, perm);
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai, inv](Tape& t) {
      Tensor<T> gp = permute_copy(t.grad_ref(self), inv);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < gp.size(); ++i) da[i] += gp[i];
    };
    return v;
  }

  Var concat(Var a, Var b, std::size_t axis) {
    const Tensor<T>& av = nodes_[a.idx].value;
    const Tensor<T>& bv = nodes_[b.idx].value;
    if (av.rank() != bv.rank() || axis >= av.rank()) {
      throw ShapeMismatch("concat rank mismatch");
    }
    Shape out_shape = av.shape();
    for (std::size_t i = 0; i < av.rank(); ++i) {
      if (i == axis) continue;
      if (av.shape()[i] != bv.shape()[i]) {
        throw ShapeMismatch("concat shape mismatch on axis " +
                            std::to_string(i));
      }
    }
    out_shape[axis] += bv.shape()[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= av.shape()[i];
    for (std::size_t i = axis + 1; i < av.rank(); ++i) inner *= av.shape()[i];
    std::size_t a_block = av.shape()[axis] * inner;
    std::size_t b_block = bv.shape()[axis] * inner;
    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < a_block; ++i) {
        out[o * (a_block + b_block) + i] = av[o * a_block + i];
      }
      for (std::size_t i = 0; i < b_block; ++i) {
        out[o * (a_block + b_block) + a_block + i] = bv[o * b_block + i];
      }
    }
    bool ng = needs(a) || needs(b);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx, bi = b.idx;
    nodes_[self].backward = [self, ai, bi, outer, a_block, b_block](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      if (t.needs_idx(ai)) {
        Tensor<T>& da = t.grad_ref(ai);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < a_block; ++i) {
            da[o * a_block + i] += g[o * (a_block + b_block) + i];
          }
        }
      }
      if (t.needs_idx(bi)) {
        Tensor<T>& db = t.grad_ref(bi);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < b_block; ++i) {
            db[o * b_block + i] += g[o * (a_block + b_block) + a_block + i];
          }
        }
      }
    };
    return v;
  }

  Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor<T>& av = nodes_[a.idx].value;
    if (axis >= av.rank() || start + len > av.shape()[axis]) {
      throw ShapeMismatch("slice out of range");
    }
    Shape out_shape = av.shape();
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= av.shape()[i];
    for (std::size_t i = axis + 1; i < av.rank(); ++i) inner *= av.shape()[i];
    std::size_t in_block = av.shape()[axis] * inner;
    std::size_t out_block = len * inner;
    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < out_block; ++i) {
        out[o * out_block + i] = av[o * in_block + start * inner + i];
      }
    }
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    std::size_t off = start * inner;
    nodes_[self].backward = [self, ai, outer, in_block, out_block,
                             off](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < out_block; ++i) {
          da[o * in_block + off + i] += g[o * out_block + i];
        }
      }
    };
    return v;
  }

  // Select rows of a [N, D] tensor by index; backward scatter-adds.
  Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Tensor<T>& av = nodes_[a.idx].value;
    if (av.rank() != 2) throw ShapeMismatch("gather_rows expects rank 2");
    std::size_t d = av.shape()[1];
    for (std::size_t r : idx) {
      if (r >= av.shape()[0]) throw IndexOutOfRange("gather_rows index");
    }
    Tensor<T> out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[idx[i] * d + j];
    }
    bool ng = needs(a);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx;
    nodes_[self].backward = [self, ai, idx, d](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& da = t.grad_ref(ai);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          da[idx[i] * d + j] += g[i * d + j];
        }
      }
    };
    return v;
  }

  // Replace masked rows of a [N, D] tensor with a shared [D] row vector.
  Var replace_rows(Var a, const std::vector<std::uint8_t>& mask, Var row) {
    const Tensor<T>& av = nodes_[a.idx].value;
    const Tensor<T>& rv = nodes_[row.idx].value;
    if (av.rank() != 2 || rv.size() != av.shape()[1] ||
        mask.size() != av.shape()[0]) {
      throw ShapeMismatch("replace_rows shape mismatch");
    }
    std::size_t n = av.shape()[0], d = av.shape()[1];
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        out[i * d + j] = mask[i] ? rv[j] : av[i * d + j];
      }
    }
    bool ng = needs(a) || needs(row);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx, ri = row.idx;
    nodes_[self].backward = [self, ai, ri, mask, n, d](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      if (t.needs_idx(ai)) {
        Tensor<T>& da = t.grad_ref(ai);
        for (std::size_t i = 0; i < n; ++i) {
          if (mask[i]) continue;
          for (std::size_t j = 0; j < d; ++j) da[i * d + j] += g[i * d + j];
        }
      }
      if (t.needs_idx(ri)) {
        Tensor<T>& dr = t.grad_ref(ri);
        for (std::size_t i = 0; i < n; ++i) {
          if (!mask[i]) continue;
          for (std::size_t j = 0; j < d; ++j) dr[j] += g[i * d + j];
        }
      }
    };
    return v;
  }

  // --- linear algebra --------------------------------------------------

  // a: [..., m, k]; b: [k, n] shared, or same-rank with equal leading dims.
  Var matmul(Var a, Var b) {
    const Tensor<T>& av = nodes_[a.idx].value;
    const Tensor<T>& bv = nodes_[b.idx].value;
    if (av.rank() < 2 || bv.rank() < 2) {
      throw ShapeMismatch("matmul expects rank >= 2");
    }
    std::size_t m = av.shape()[av.rank() - 2];
    std::size_t k = av.shape()[av.rank() - 1];
    bool shared_b = bv.rank() == 2;
    std::size_t kb = bv.shape()[bv.rank() - 2];
    std::size_t n = bv.shape()[bv.rank() - 1];
    if (k != kb) {
      throw ShapeMismatch("matmul inner dims: " + shape_str(av.shape()) +
                          " x " + shape_str(bv.shape()));
    }
    std::size_t batch = m * k == 0 ? 0 : av.size() / (m * k);
    if (!shared_b) {
      std::size_t b_batch = kb * n == 0 ? 0 : bv.size() / (kb * n);
      if (bv.rank() != av.rank() || b_batch != batch) {
        throw ShapeMismatch("matmul batch dims: " + shape_str(av.shape()) +
                            " x " + shape_str(bv.shape()));
      }
      for (std::size_t i = 0; i + 2 < av.rank(); ++i) {
        if (av.shape()[i] != bv.shape()[i]) {
          throw ShapeMismatch("matmul batch dims differ");
        }
      }
    }
    Shape out_shape = av.shape();
    out_shape[out_shape.size() - 1] = n;
    Tensor<T> out(out_shape);
    for (std::size_t s = 0; s < batch; ++s) {
      detail::mm_acc(out.data() + s * m * n, av.data() + s * m * k,
                     bv.data() + (shared_b ? 0 : s * k * n), m, k, n);
    }
    bool ng = needs(a) || needs(b);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx, bi = b.idx;
    nodes_[self].backward = [self, ai, bi, m, k, n, batch,
                             shared_b](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& av2 = t.nodes_[ai].value;
      const Tensor<T>& bv2 = t.nodes_[bi].value;
      if (t.needs_idx(ai)) {
        Tensor<T>& da = t.grad_ref(ai);
        for (std::size_t s = 0; s < batch; ++s) {
          detail::mm_bt_acc(da.data() + s * m * k, g.data() + s * m * n,
                            bv2.data() + (shared_b ? 0 : s * k * n), m, n, k);
        }
      }
      if (t.needs_idx(bi)) {
        Tensor<T>& db = t.grad_ref(bi);
        for (std::size_t s = 0; s < batch; ++s) {
          detail::mm_at_acc(db.data() + (shared_b ? 0 : s * k * n),
                            av2.data() + s * m * k, g.data() + s * m * n, m,
                            k, n);
        }
      }
    };
    return v;
  }

  // --- normalization and activations over the last dimension -----------

  Var layernorm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const Tensor<T>& xv = nodes_[x.idx].value;
    const Tensor<T>& gv = nodes_[gamma.idx].value;
    const Tensor<T>& bv = nodes_[beta.idx].value;
    std::size_t n = xv.last_dim();
    std::size_t rows = xv.rows();
    if (gv.size() != n || bv.size() != n) {
      throw ShapeMismatch("layernorm parameter size");
    }
    Tensor<T> out(xv.shape());
    Tensor<T> xhat(xv.shape());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * n;
      T mean = T(0);
      for (std::size_t j = 0; j < n; ++j) mean += xr[j];
      mean /= static_cast<T>(n);
      T var = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        T d = xr[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      T is = T(1) / std::sqrt(var + eps);
      inv_std[r] = is;
      for (std::size_t j = 0; j < n; ++j) {
        T xh = (xr[j] - mean) * is;
        xhat[r * n + j] = xh;
        out[r * n + j] = gv[j] * xh + bv[j];
      }
    }
    bool ng = needs(x) || needs(gamma) || needs(beta);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, xi = x.idx, gi = gamma.idx, bi = beta.idx;
    auto xhat_c = std::make_shared<Tensor<T>>(std::move(xhat));
    auto inv_c = std::make_shared<std::vector<T>>(std::move(inv_std));
    nodes_[self].backward = [self, xi, gi, bi, n, rows, xhat_c,
                             inv_c](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& gv2 = t.nodes_[gi].value;
      if (t.needs_idx(gi)) {
        Tensor<T>& dgamma = t.grad_ref(gi);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            dgamma[j] += g[r * n + j] * (*xhat_c)[r * n + j];
          }
        }
      }
      if (t.needs_idx(bi)) {
        Tensor<T>& dbeta = t.grad_ref(bi);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) dbeta[j] += g[r * n + j];
        }
      }
      if (t.needs_idx(xi)) {
        Tensor<T>& dx = t.grad_ref(xi);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            T dxh = g[r * n + j] * gv2[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * (*xhat_c)[r * n + j];
          }
          mean_dxhat /= static_cast<T>(n);
          mean_dxhat_xhat /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            T dxh = g[r * n + j] * gv2[j];
            dx[r * n + j] += (*inv_c)[r] * (dxh - mean_dxhat -
                                            (*xhat_c)[r * n + j] *
                                                mean_dxhat_xhat);
          }
        }
      }
    };
    return v;
  }

  Var softmax_lastdim(Var x) {
    const Tensor<T>& xv = nodes_[x.idx].value;
    std::size_t n = xv.last_dim();
    std::size_t rows = xv.rows();
    Tensor<T> out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * n;
      T* yr = out.data() + r * n;
      T mx = xr[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
      T sum = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        sum += yr[j];
      }
      for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
    }
    bool ng = needs(x);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, xi = x.idx;
    nodes_[self].backward = [self, xi, n, rows](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& y = t.nodes_[self].value;
      Tensor<T>& dx = t.grad_ref(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          dot += g[r * n + j] * y[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          dx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
      }
    };
    return v;
  }

  // Normalize each row (last dimension) to unit L2 norm; zero rows map to
  // zero with zero gradient.
  Var l2norm_rows(Var x) {
    const Tensor<T>& xv = nodes_[x.idx].value;
    std::size_t n = xv.last_dim();
    std::size_t rows = xv.rows();
    Tensor<T> out(xv.shape());
    std::vector<T> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * n;
      T s = T(0);
      for (std::size_t j = 0; j < n; ++j) s += xr[j] * xr[j];
      T nrm = std::sqrt(s);
      norms[r] = nrm;
      if (nrm > T(0)) {
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] / nrm;
      }
    }
    bool ng = needs(x);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, xi = x.idx;
    auto norms_c = std::make_shared<std::vector<T>>(std::move(norms));
    nodes_[self].backward = [self, xi, n, rows, norms_c](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& y = t.nodes_[self].value;
      Tensor<T>& dx = t.grad_ref(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        T nrm = (*norms_c)[r];
        if (nrm <= T(0)) continue;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          dot += g[r * n + j] * y[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          dx[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / nrm;
        }
      }
    };
    return v;
  }

  // Per-row L2 norm over the last dimension: [..., n] -> [...]. The
  // gradient at an exactly-zero row is defined as zero.
  Var norm_rows(Var x) {
    const Tensor<T>& xv = nodes_[x.idx].value;
    std::size_t n = xv.last_dim();
    std::size_t rows = xv.rows();
    Shape out_shape(xv.shape().begin(),
                    xv.shape().empty() ? xv.shape().end()
                                       : xv.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    Tensor<T> out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * n;
      T s = T(0);
      for (std::size_t j = 0; j < n; ++j) s += xr[j] * xr[j];
      out[r] = std::sqrt(s);
    }
    bool ng = needs(x);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, xi = x.idx;
    nodes_[self].backward = [self, xi, n, rows](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& r_val = t.nodes_[self].value;
      const Tensor<T>& x_val = t.nodes_[xi].value;
      Tensor<T>& dx = t.grad_ref(xi);
      for (std::size_t r = 0; r < rows; ++r) {
        T nrm = r_val[r];
        if (nrm <= T(0)) continue;
        T c = g[r] / nrm;
        for (std::size_t j = 0; j < n; ++j) {
          dx[r * n + j] += c * x_val[r * n + j];
        }
      }
    };
    return v;
  }

  Var sum(Var x) {
    const Tensor<T>& xv = nodes_[x.idx].value;
    T s = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
    bool ng = needs(x);
    Var v = push(Tensor<T>::scalar(s), ng);
    if (!ng) return v;
    std::size_t self = v.idx, xi = x.idx;
    nodes_[self].backward = [self, xi](Tape& t) {
      T g = t.grad_ref(self)[0];
      Tensor<T>& dx = t.grad_ref(xi);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    };
    return v;
  }

  // Expand a per-electrode-pair bias [H, C, C] to token resolution
  // [H, S, S] with S = C*n_t (+1 when a leading CLS row/column is
  // included; that row and column stay exactly zero). The value is
  // constant across time offsets within an electrode pair.
  Var expand_bias(Var per_head, std::size_t n_t, bool with_cls) {
    const Tensor<T>& pv = nodes_[per_head.idx].value;
    if (pv.rank() != 3 || pv.shape()[1] != pv.shape()[2]) {
      throw ShapeMismatch("expand_bias expects [H, C, C]");
    }
    std::size_t h = pv.shape()[0], c = pv.shape()[1];
    std::size_t off = with_cls ? 1 : 0;
    std::size_t s = c * n_t + off;
    Tensor<T> out({h, s, s});
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t e1 = 0; e1 < c; ++e1) {
        for (std::size_t e2 = 0; e2 < c; ++e2) {
          T b = pv[(hh * c + e1) * c + e2];
          for (std::size_t t1 = 0; t1 < n_t; ++t1) {
            std::size_t row = off + e1 * n_t + t1;
            for (std::size_t t2 = 0; t2 < n_t; ++t2) {
              out[(hh * s + row) * s + off + e2 * n_t + t2] = b;
            }
          }
        }
      }
    }
    bool ng = needs(per_head);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, pi = per_head.idx;
    nodes_[self].backward = [self, pi, h, c, n_t, off, s](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& dp = t.grad_ref(pi);
      for (std::size_t hh = 0; hh < h; ++hh) {
        for (std::size_t e1 = 0; e1 < c; ++e1) {
          for (std::size_t e2 = 0; e2 < c; ++e2) {
            T acc = T(0);
            for (std::size_t t1 = 0; t1 < n_t; ++t1) {
              std::size_t row = off + e1 * n_t + t1;
              for (std::size_t t2 = 0; t2 < n_t; ++t2) {
                acc += g[(hh * s + row) * s + off + e2 * n_t + t2];
              }
            }
            dp[(hh * c + e1) * c + e2] += acc;
          }
        }
      }
    };
    return v;
  }

  // Mean cross-entropy of row-wise logits against integer labels.
  Var cross_entropy_mean(Var logits, const std::vector<int>& labels) {
    const Tensor<T>& lv = nodes_[logits.idx].value;
    if (lv.rank() != 2 || lv.shape()[0] != labels.size()) {
      throw ShapeMismatch("cross_entropy_mean shape");
    }
    std::size_t b = lv.shape()[0], l = lv.shape()[1];
    Tensor<T> probs(lv.shape());
    T loss = T(0);
    for (std::size_t i = 0; i < b; ++i) {
      const T* row = lv.data() + i * l;
      T mx = row[0];
      for (std::size_t j = 1; j < l; ++j) mx = std::max(mx, row[j]);
      T sum = T(0);
      for (std::size_t j = 0; j < l; ++j) {
        probs[i * l + j] = std::exp(row[j] - mx);
        sum += probs[i * l + j];
      }
      for (std::size_t j = 0; j < l; ++j) probs[i * l + j] /= sum;
      int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= l) {
        throw IndexOutOfRange("label out of range");
      }
      loss += std::log(sum) + mx - row[y];
    }
    loss /= static_cast<T>(b);
    bool ng = needs(logits);
    Var v = push(Tensor<T>::scalar(loss), ng);
    if (!ng) return v;
    std::size_t self = v.idx, li = logits.idx;
    auto probs_c = std::make_shared<Tensor<T>>(std::move(probs));
    auto labels_c = std::make_shared<std::vector<int>>(labels);
    nodes_[self].backward = [self, li, b, l, probs_c, labels_c](Tape& t) {
      T g = t.grad_ref(self)[0] / static_cast<T>(b);
      Tensor<T>& dx = t.grad_ref(li);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < l; ++j) {
          T p = (*probs_c)[i * l + j];
          T target = (static_cast<std::size_t>((*labels_c)[i]) == j)
                         ? T(1)
                         : T(0);
          dx[i * l + j] += g * (p - target);
        }
      }
    };
    return v;
  }

  // --- backward ---------------------------------------------------------

  void backward(Var root) {
    if (nodes_[root.idx].value.size() != 1) {
      throw ShapeMismatch("backward expects a scalar root");
    }
    grad_ref(root.idx)[0] = T(1);
    for (std::size_t i = root.idx + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.needs_grad || !node.grad_alloc) continue;
      if (node.backward) node.backward(*this);
    }
  }

private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape&)> backward;
  };

  bool needs(Var v) const { return nodes_[v.idx].needs_grad; }
  bool needs_idx(std::size_t i) const { return nodes_[i].needs_grad; }

  // Shared implementation of add/sub: out = a + sign * broadcast(b).
  Var add_like(Var a, Var b, T sign) {
    const Tensor<T>& av = nodes_[a.idx].value;
    const Tensor<T>& bv = nodes_[b.idx].value;
    BroadcastMap map(av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = av[i] + sign * bv[map(i)];
    }
    bool ng = needs(a) || needs(b);
    Var v = push(std::move(out), ng);
    if (!ng) return v;
    std::size_t self = v.idx, ai = a.idx, bi = b.idx;
    nodes_[self].backward = [self, ai, bi, map, sign](Tape& t) {
      const Tensor<T>& g = t.grad_ref(self);
      if (t.needs_idx(ai)) {
        Tensor<T>& da = t.grad_ref(ai);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (t.needs_idx(bi)) {
        Tensor<T>& db = t.grad_ref(bi);
        for (std::size_t i = 0; i < g.size(); ++i) db[map(i)] += sign * g[i];
      }
    };
    return v;
  }

  Tensor<T>& grad_ref(std::size_t i) {
    Node& node = nodes_[i];
    if (!node.grad_alloc) {
      node.grad = Tensor<T>(node.value.shape());
      node.grad_alloc = true;
    }
    return node.grad;
  }

  Var push(Tensor<T> value, bool needs_grad) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  static Tensor<T> permute_copy(const Tensor<T>& in,
                                const std::vector<std::size_t>& perm) {
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      out_shape[i] = in.shape()[perm[i]];
    }
    Tensor<T> out(out_shape);
    std::size_t rank = perm.size();
    if (rank == 0) {
      out = in;
      return out;
    }
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i-- > 0;) {
      in_strides[i] = in_strides[i + 1] * in.shape()[i + 1];
    }
    std::vector<std::size_t> out_to_in(rank);
    for (std::size_t i = 0; i < rank; ++i) out_to_in[i] = in_strides[perm[i]];
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t o = 0; o < out.size(); ++o) {
      std::size_t in_flat = 0;
      for (std::size_t i = 0; i < rank; ++i) in_flat += idx[i] * out_to_in[i];
      out[o] = in[in_flat];
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < out_shape[i]) break;
        idx[i] = 0;
      }
    }
    return out;
  }

  std::vector<Node> nodes_;
};

}  // namespace hear
