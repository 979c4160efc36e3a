#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "toydiff/tensor.hpp"

namespace toydiff {

// Reverse-mode autodiff over a dynamic tape. Nodes are appended in forward
// order, so reverse iteration is a valid topological order for backward().
// Values are shared_ptr so parameter tensors can be attached without copies.
//
// Elementwise binary ops accept operands of equal shape, or a 1-element
// tensor on either side which broadcasts as a scalar.
template <typename T>
class Tape {
 public:
  struct Ref {
    int32_t i = -1;
    bool valid() const { return i >= 0; }
  };

  using EigenMap =
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using EigenCMap =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  // ---- leaves ------------------------------------------------------------

  Ref leaf(Tensor<T> v, bool track_grad = false) {
    return leaf(std::make_shared<const Tensor<T>>(std::move(v)), track_grad);
  }

  Ref leaf(std::shared_ptr<const Tensor<T>> v, bool track_grad = false) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = track_grad;
    nodes_.push_back(std::move(n));
    return Ref{static_cast<int32_t>(nodes_.size() - 1)};
  }

  Ref constant(Tensor<T> v) { return leaf(std::move(v), false); }
  Ref scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  const Tensor<T>& val(Ref r) const { return *nodes_[r.i].value; }
  T scalar_val(Ref r) const {
    check(val(r).is_scalar(), "scalar_val: node is not scalar");
    return val(r).data[0];
  }
  const Tensor<T>& grad(Ref r) const {
    check(nodes_[r.i].needs_grad, "grad(): node does not track gradients");
    return nodes_[r.i].grad;
  }
  bool tracked(Ref r) const { return nodes_[r.i].needs_grad; }
  size_t size() const { return nodes_.size(); }

  // ---- elementwise -------------------------------------------------------

  Ref add(Ref a, Ref b) {
    return binary(a, b, [](T x, T y) { return x + y; },
                  [](T, T, T g, T& da, T& db) {
                    da += g;
                    db += g;
                  });
  }

  Ref sub(Ref a, Ref b) {
    return binary(a, b, [](T x, T y) { return x - y; },
                  [](T, T, T g, T& da, T& db) {
                    da += g;
                    db -= g;
                  });
  }

  Ref mul(Ref a, Ref b) {
    return binary(a, b, [](T x, T y) { return x * y; },
                  [](T x, T y, T g, T& da, T& db) {
                    da += g * y;
                    db += g * x;
                  });
  }

  Ref div(Ref a, Ref b) {
    return binary(a, b, [](T x, T y) { return x / y; },
                  [](T x, T y, T g, T& da, T& db) {
                    da += g / y;
                    db -= g * x / (y * y);
                  });
  }

  Ref scale(Ref a, T c) {
    return unary(a, [c](T x) { return c * x; }, [c](T, T, T g, T& da) { da += c * g; });
  }

  Ref add_const(Ref a, T c) {
    return unary(a, [c](T x) { return x + c; }, [](T, T, T g, T& da) { da += g; });
  }

  Ref neg(Ref a) { return scale(a, T(-1)); }

  Ref log(Ref a) {
    return unary(a, [](T x) { return std::log(x); },
                 [](T x, T, T g, T& da) { da += g / x; });
  }

  // |x|, with the subgradient at 0 defined as 0
  Ref abs(Ref a) {
    return unary(a, [](T x) { return std::abs(x); },
                 [](T x, T, T g, T& da) { da += x > T(0) ? g : (x < T(0) ? -g : T(0)); });
  }

  Ref square(Ref a) {
    return unary(a, [](T x) { return x * x; }, [](T x, T, T g, T& da) { da += T(2) * x * g; });
  }

  Ref sqrt_op(Ref a) {
    return unary(a, [](T x) { return std::sqrt(x); },
                 [](T, T y, T g, T& da) { da += g / (T(2) * y); });
  }

  // exact GELU, x * Phi(x)
  Ref gelu(Ref a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary(a,
                 [](T x) {
                   double xd = static_cast<double>(x);
                   return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
                 },
                 [](T x, T, T g, T& da) {
                   double xd = static_cast<double>(x);
                   double phi = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
                   double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
                   da += g * static_cast<T>(phi + xd * pdf);
                 });
  }

  // min(x, hi); gradient 0 on the clamped side (boundary counts as clamped)
  Ref clamp_max(Ref a, T hi) {
    return unary(a, [hi](T x) { return x < hi ? x : hi; },
                 [hi](T x, T, T g, T& da) { da += x < hi ? g : T(0); });
  }

  Ref clamp_min(Ref a, T lo) {
    return unary(a, [lo](T x) { return x > lo ? x : lo; },
                 [lo](T x, T, T g, T& da) { da += x > lo ? g : T(0); });
  }

  // ---- reductions & indexing ----------------------------------------------

  // sum_i w_i * a_i -> [1]; w is plain data, not a node
  Ref weighted_sum(Ref a, Tensor<T> w) {
    check(w.numel() == val(a).numel(), "weighted_sum: size mismatch");
    const Tensor<T>& av = val(a);
    T s = 0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av.data[i] * w.data[i];
    auto wp = std::make_shared<Tensor<T>>(std::move(w));
    return make(Tensor<T>::scalar(s), {a}, [this, a, wp](const Tensor<T>& g) {
      if (!needs(a)) return;
      T gs = g.data[0];
      Tensor<T>& da = grad_buf(a);
      for (int64_t i = 0; i < da.numel(); ++i) da.data[i] += gs * wp->data[i];
    });
  }

  Ref sum(Ref a) { return weighted_sum(a, Tensor<T>::full({(int)val(a).numel()}, T(1))); }

  Ref mean(Ref a) {
    int64_t n = val(a).numel();
    return weighted_sum(a, Tensor<T>::full({(int)n}, T(1) / static_cast<T>(n)));
  }

  // out[i] = a[idx[i]]
  Ref gather(Ref a, std::vector<int> idx) {
    const Tensor<T>& av = val(a);
    Tensor<T> out({static_cast<int>(idx.size())});
    for (size_t i = 0; i < idx.size(); ++i) out.data[i] = av.data[idx[i]];
    auto ip = std::make_shared<std::vector<int>>(std::move(idx));
    return make(std::move(out), {a}, [this, a, ip](const Tensor<T>& g) {
      if (!needs(a)) return;
      Tensor<T>& da = grad_buf(a);
      for (size_t i = 0; i < ip->size(); ++i) da.data[(*ip)[i]] += g.data[i];
    });
  }

  // out[i] = a[src[i]], reshaped; src must be a permutation-like index map
  Ref permute(Ref a, std::vector<int> src, std::vector<int> out_shape) {
    check(static_cast<int64_t>(src.size()) == Tensor<T>::numel_of(out_shape),
          "permute: index map size mismatch");
    const Tensor<T>& av = val(a);
    Tensor<T> out(std::move(out_shape));
    for (size_t i = 0; i < src.size(); ++i) out.data[i] = av.data[src[i]];
    auto ip = std::make_shared<std::vector<int>>(std::move(src));
    return make(std::move(out), {a}, [this, a, ip](const Tensor<T>& g) {
      if (!needs(a)) return;
      Tensor<T>& da = grad_buf(a);
      for (size_t i = 0; i < ip->size(); ++i) da.data[(*ip)[i]] += g.data[i];
    });
  }

  // max over all elements; gradient flows to the first argmax
  Ref max_all(Ref a) {
    const Tensor<T>& av = val(a);
    int64_t arg = 0;
    for (int64_t i = 1; i < av.numel(); ++i)
      if (av.data[i] > av.data[arg]) arg = i;
    return make(Tensor<T>::scalar(av.data[arg]), {a}, [this, a, arg](const Tensor<T>& g) {
      if (needs(a)) grad_buf(a).data[arg] += g.data[0];
    });
  }

  Ref stack_scalars(const std::vector<Ref>& xs) {
    Tensor<T> out({static_cast<int>(xs.size())});
    for (size_t i = 0; i < xs.size(); ++i) out.data[i] = scalar_val(xs[i]);
    auto parents = xs;
    return make(std::move(out), parents, [this, parents](const Tensor<T>& g) {
      for (size_t i = 0; i < parents.size(); ++i)
        if (needs(parents[i])) grad_buf(parents[i]).data[0] += g.data[i];
    });
  }

  // ---- matrix ops ----------------------------------------------------------

  // [m,k] x [k,n] -> [m,n]
  Ref matmul(Ref a, Ref b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.shape.size() == 2 && bv.shape.size() == 2 && av.cols() == bv.rows(),
          "matmul: bad shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    Tensor<T> out({av.rows(), bv.cols()});
    emap(out).noalias() = cmap(av) * cmap(bv);
    return make(std::move(out), {a, b}, [this, a, b](const Tensor<T>& g) {
      const Tensor<T>& avv = val(a);
      const Tensor<T>& bvv = val(b);
      EigenCMap gm(g.data.data(), g.shape[0], g.shape[1]);
      if (needs(a)) emap2(grad_buf(a)).noalias() += gm * cmap(bvv).transpose();
      if (needs(b)) emap2(grad_buf(b)).noalias() += cmap(avv).transpose() * gm;
    });
  }

  // [m,k] x [n,k]^T -> [m,n]
  Ref matmul_nt(Ref a, Ref b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.shape.size() == 2 && bv.shape.size() == 2 && av.cols() == bv.cols(),
          "matmul_nt: bad shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    Tensor<T> out({av.rows(), bv.rows()});
    emap(out).noalias() = cmap(av) * cmap(bv).transpose();
    return make(std::move(out), {a, b}, [this, a, b](const Tensor<T>& g) {
      const Tensor<T>& avv = val(a);
      const Tensor<T>& bvv = val(b);
      EigenCMap gm(g.data.data(), g.shape[0], g.shape[1]);
      if (needs(a)) emap2(grad_buf(a)).noalias() += gm * cmap(bvv);
      if (needs(b)) emap2(grad_buf(b)).noalias() += gm.transpose() * cmap(avv);
    });
  }

  // softmax over rows of (logit_scale * a); rows of the output sum to 1
  Ref softmax_rows(Ref a, T logit_scale) {
    const Tensor<T>& av = val(a);
    check(av.shape.size() == 2, "softmax_rows: not a matrix");
    Tensor<T> out = av;
    int m = av.rows(), n = av.cols();
    for (int r = 0; r < m; ++r) {
      T* row = out.data.data() + static_cast<size_t>(r) * n;
      T mx = row[0] * logit_scale;
      for (int c = 1; c < n; ++c) mx = std::max(mx, row[c] * logit_scale);
      T s = 0;
      for (int c = 0; c < n; ++c) {
        row[c] = std::exp(row[c] * logit_scale - mx);
        s += row[c];
      }
      for (int c = 0; c < n; ++c) row[c] /= s;
    }
    Ref r = make(std::move(out), {a}, nullptr);
    nodes_[r.i].back = [this, a, r, logit_scale](const Tensor<T>& g) {
      if (!needs(a)) return;
      const Tensor<T>& p = val(r);
      Tensor<T>& da = grad_buf(a);
      int m = p.rows(), n = p.cols();
      for (int row = 0; row < m; ++row) {
        const T* pr = p.data.data() + static_cast<size_t>(row) * n;
        const T* gr = g.data.data() + static_cast<size_t>(row) * n;
        T* dr = da.data.data() + static_cast<size_t>(row) * n;
        T dot = 0;
        for (int c = 0; c < n; ++c) dot += gr[c] * pr[c];
        for (int c = 0; c < n; ++c) dr[c] += logit_scale * pr[c] * (gr[c] - dot);
      }
    };
    return r;
  }

  // rowwise layer norm with affine gain/bias ([n] each), eps 1e-5
  Ref layer_norm(Ref a, Ref gain, Ref bias) {
    constexpr double kEps = 1e-5;
    const Tensor<T>& av = val(a);
    const Tensor<T>& gv = val(gain);
    const Tensor<T>& bv = val(bias);
    check(av.shape.size() == 2, "layer_norm: not a matrix");
    int m = av.rows(), n = av.cols();
    check(gv.numel() == n && bv.numel() == n, "layer_norm: bad affine shapes");
    Tensor<T> out({m, n});
    auto inv_std = std::make_shared<std::vector<T>>(m);
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(m) * n);
    for (int r = 0; r < m; ++r) {
      const T* x = av.data.data() + static_cast<size_t>(r) * n;
      double mu = 0;
      for (int c = 0; c < n; ++c) mu += x[c];
      mu /= n;
      double var = 0;
      for (int c = 0; c < n; ++c) {
        double d = x[c] - mu;
        var += d * d;
      }
      var /= n;
      T is = static_cast<T>(1.0 / std::sqrt(var + kEps));
      (*inv_std)[r] = is;
      for (int c = 0; c < n; ++c) {
        T xh = (x[c] - static_cast<T>(mu)) * is;
        (*xhat)[static_cast<size_t>(r) * n + c] = xh;
        out.data[static_cast<size_t>(r) * n + c] = xh * gv.data[c] + bv.data[c];
      }
    }
    return make(std::move(out), {a, gain, bias},
                [this, a, gain, bias, inv_std, xhat, m, n](const Tensor<T>& g) {
                  const Tensor<T>& gv2 = val(gain);
                  for (int r = 0; r < m; ++r) {
                    const T* gr = g.data.data() + static_cast<size_t>(r) * n;
                    const T* xh = xhat->data() + static_cast<size_t>(r) * n;
                    if (needs(gain)) {
                      Tensor<T>& dg = grad_buf(gain);
                      for (int c = 0; c < n; ++c) dg.data[c] += gr[c] * xh[c];
                    }
                    if (needs(bias)) {
                      Tensor<T>& db = grad_buf(bias);
                      for (int c = 0; c < n; ++c) db.data[c] += gr[c];
                    }
                    if (needs(a)) {
                      Tensor<T>& da = grad_buf(a);
                      T* dr = da.data.data() + static_cast<size_t>(r) * n;
                      double sum_gg = 0, sum_ggx = 0;
                      for (int c = 0; c < n; ++c) {
                        double gg = static_cast<double>(gr[c]) * gv2.data[c];
                        sum_gg += gg;
                        sum_ggx += gg * xh[c];
                      }
                      sum_gg /= n;
                      sum_ggx /= n;
                      T is = (*inv_std)[r];
                      for (int c = 0; c < n; ++c) {
                        double gg = static_cast<double>(gr[c]) * gv2.data[c];
                        dr[c] += static_cast<T>((gg - sum_gg - xh[c] * sum_ggx) * is);
                      }
                    }
                  }
                });
  }

  // a[m,n] + v broadcast over rows; v has n elements
  Ref add_rowvec(Ref a, Ref v) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& vv = val(v);
    check(av.shape.size() == 2 && vv.numel() == av.cols(), "add_rowvec: bad shapes");
    Tensor<T> out = av;
    int m = av.rows(), n = av.cols();
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) out.data[static_cast<size_t>(r) * n + c] += vv.data[c];
    return make(std::move(out), {a, v}, [this, a, v, m, n](const Tensor<T>& g) {
      if (needs(a)) {
        Tensor<T>& da = grad_buf(a);
        for (int64_t i = 0; i < da.numel(); ++i) da.data[i] += g.data[i];
      }
      if (needs(v)) {
        Tensor<T>& dv = grad_buf(v);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) dv.data[c] += g.data[static_cast<size_t>(r) * n + c];
      }
    });
  }

  Ref slice_cols(Ref a, int c0, int c1) {
    const Tensor<T>& av = val(a);
    check(av.shape.size() == 2 && 0 <= c0 && c0 < c1 && c1 <= av.cols(),
          "slice_cols: bad range");
    int m = av.rows(), n = av.cols(), w = c1 - c0;
    Tensor<T> out({m, w});
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < w; ++c)
        out.data[static_cast<size_t>(r) * w + c] = av.data[static_cast<size_t>(r) * n + c0 + c];
    return make(std::move(out), {a}, [this, a, c0, w, m, n](const Tensor<T>& g) {
      if (!needs(a)) return;
      Tensor<T>& da = grad_buf(a);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < w; ++c)
          da.data[static_cast<size_t>(r) * n + c0 + c] += g.data[static_cast<size_t>(r) * w + c];
    });
  }

  Ref concat_cols(const std::vector<Ref>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    int m = val(parts[0]).rows(), total = 0;
    for (Ref p : parts) {
      check(val(p).rows() == m, "concat_cols: row mismatch");
      total += val(p).cols();
    }
    Tensor<T> out({m, total});
    int off = 0;
    for (Ref p : parts) {
      const Tensor<T>& pv = val(p);
      int w = pv.cols();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < w; ++c)
          out.data[static_cast<size_t>(r) * total + off + c] =
              pv.data[static_cast<size_t>(r) * w + c];
      off += w;
    }
    auto ps = parts;
    return make(std::move(out), ps, [this, ps, m, total](const Tensor<T>& g) {
      int off2 = 0;
      for (Ref p : ps) {
        int w = val(p).cols();
        if (needs(p)) {
          Tensor<T>& dp = grad_buf(p);
          for (int r = 0; r < m; ++r)
            for (int c = 0; c < w; ++c)
              dp.data[static_cast<size_t>(r) * w + c] +=
                  g.data[static_cast<size_t>(r) * total + off2 + c];
        }
        off2 += w;
      }
    });
  }

  // same data, new shape
  Ref reshape(Ref a, std::vector<int> new_shape) {
    const Tensor<T>& av = val(a);
    check(Tensor<T>::numel_of(new_shape) == av.numel(), "reshape: element count mismatch");
    Tensor<T> out = av;
    out.shape = std::move(new_shape);
    return make(std::move(out), {a}, [this, a](const Tensor<T>& g) {
      if (!needs(a)) return;
      Tensor<T>& da = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i];
    });
  }

  // rows of `table` selected by ids -> [ids.size(), d]
  Ref embed_rows(Ref table, std::vector<int> ids) {
    const Tensor<T>& tv = val(table);
    check(tv.shape.size() == 2, "embed_rows: table not a matrix");
    int d = tv.cols();
    Tensor<T> out({static_cast<int>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r) {
      check(ids[r] >= 0 && ids[r] < tv.rows(), "embed_rows: id out of range");
      std::copy_n(tv.data.data() + static_cast<size_t>(ids[r]) * d, d,
                  out.data.data() + r * d);
    }
    auto ip = std::make_shared<std::vector<int>>(std::move(ids));
    return make(std::move(out), {table}, [this, table, ip, d](const Tensor<T>& g) {
      if (!needs(table)) return;
      Tensor<T>& dt = grad_buf(table);
      for (size_t r = 0; r < ip->size(); ++r)
        for (int c = 0; c < d; ++c)
          dt.data[static_cast<size_t>((*ip)[r]) * d + c] += g.data[r * d + c];
    });
  }

  // ---- backward -------------------------------------------------------------

  void backward(Ref root) {
    check(val(root).is_scalar(), "backward: root must be scalar");
    check(nodes_[root.i].needs_grad, "backward: root does not depend on any tracked leaf");
    grad_buf(root).data[0] = T(1);
    for (int32_t i = root.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.back || n.grad.data.empty()) continue;
      n.back(n.grad);
    }
  }

 private:
  struct Node {
    std::shared_ptr<const Tensor<T>> value;
    Tensor<T> grad;  // allocated lazily
    bool needs_grad = false;
    std::function<void(const Tensor<T>&)> back;
  };

  bool needs(Ref r) const { return nodes_[r.i].needs_grad; }

  Tensor<T>& grad_buf(Ref r) {
    Node& n = nodes_[r.i];
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value->shape);
    return n.grad;
  }

  Ref make(Tensor<T> value, const std::vector<Ref>& parents,
           std::function<void(const Tensor<T>&)> back) {
    Node n;
    n.value = std::make_shared<const Tensor<T>>(std::move(value));
    for (Ref p : parents)
      if (nodes_[p.i].needs_grad) n.needs_grad = true;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Ref{static_cast<int32_t>(nodes_.size() - 1)};
  }

  template <typename Fwd, typename Bwd>
  Ref unary(Ref a, Fwd fwd, Bwd bwd) {
    const Tensor<T>& av = val(a);
    Tensor<T> out = av;
    for (auto& x : out.data) x = fwd(x);
    Ref r = make(std::move(out), {a}, nullptr);
    nodes_[r.i].back = [this, a, r, bwd](const Tensor<T>& g) {
      if (!needs(a)) return;
      const Tensor<T>& x = val(a);
      const Tensor<T>& y = val(r);
      Tensor<T>& da = grad_buf(a);
      for (int64_t i = 0; i < x.numel(); ++i) bwd(x.data[i], y.data[i], g.data[i], da.data[i]);
    };
    return r;
  }

  // equal shapes, or scalar on either side
  template <typename Fwd, typename Bwd>
  Ref binary(Ref a, Ref b, Fwd fwd, Bwd bwd) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    bool as = av.is_scalar(), bs = bv.is_scalar();
    check(as || bs || av.same_shape(bv),
          "binary op: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor<T> out = (as && !bs) ? bv : av;
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i)
      out.data[i] = fwd(av.data[as ? 0 : i], bv.data[bs ? 0 : i]);
    return make(std::move(out), {a, b}, [this, a, b, as, bs, bwd](const Tensor<T>& g) {
      const Tensor<T>& avv = val(a);
      const Tensor<T>& bvv = val(b);
      bool na = needs(a), nb = needs(b);
      if (!na && !nb) return;
      T dummy = 0;
      Tensor<T>* da = na ? &grad_buf(a) : nullptr;
      Tensor<T>* db = nb ? &grad_buf(b) : nullptr;
      for (int64_t i = 0; i < g.numel(); ++i) {
        T& ra = na ? da->data[as ? 0 : i] : dummy;
        T& rb = nb ? db->data[bs ? 0 : i] : dummy;
        bwd(avv.data[as ? 0 : i], bvv.data[bs ? 0 : i], g.data[i], ra, rb);
      }
    });
  }

  static EigenCMap cmap(const Tensor<T>& t) {
    return EigenCMap(t.data.data(), t.rows(), t.cols());
  }
  static EigenMap emap(Tensor<T>& t) { return EigenMap(t.data.data(), t.rows(), t.cols()); }
  static EigenMap emap2(Tensor<T>& t) { return EigenMap(t.data.data(), t.shape[0], t.shape[1]); }

  std::vector<Node> nodes_;
};

}  // namespace toydiff
