#include "gvae/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gvae::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;
using RowMap = Eigen::Map<RowMat>;
using CRowMap = Eigen::Map<const RowMat>;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

struct ConvGeom {
  long c_in, h_in, w_in;
  long c_out, h_out, w_out;
  long k, stride, pad;
};

// Per-thread scratch for the im2col buffers; conv layers run thousands of
// times per epoch and the shapes repeat.
ColMat& scratch_cols() {
  thread_local ColMat m;
  return m;
}
ColMat& scratch_cols2() {
  thread_local ColMat m;
  return m;
}

// cols is (C*k*k) x (Ho*Wo), column-major; column = one output pixel's
// receptive field, zero where it hangs over the border.
void im2col(const double* x, const ConvGeom& g, ColMat& cols) {
  cols.resize(g.c_in * g.k * g.k, g.h_out * g.w_out);
  for (long oi = 0; oi < g.h_out; ++oi) {
    for (long oj = 0; oj < g.w_out; ++oj) {
      double* col = cols.col(oi * g.w_out + oj).data();
      long r = 0;
      for (long c = 0; c < g.c_in; ++c) {
        const double* plane = x + c * g.h_in * g.w_in;
        for (long ki = 0; ki < g.k; ++ki) {
          long ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.h_in) {
            for (long kj = 0; kj < g.k; ++kj) col[r++] = 0.0;
            continue;
          }
          const double* row = plane + ii * g.w_in;
          for (long kj = 0; kj < g.k; ++kj) {
            long jj = oj * g.stride - g.pad + kj;
            col[r++] = (jj >= 0 && jj < g.w_in) ? row[jj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ColMat& cols, const ConvGeom& g, double* x) {
  for (long oi = 0; oi < g.h_out; ++oi) {
    for (long oj = 0; oj < g.w_out; ++oj) {
      const double* col = cols.col(oi * g.w_out + oj).data();
      long r = 0;
      for (long c = 0; c < g.c_in; ++c) {
        double* plane = x + c * g.h_in * g.w_in;
        for (long ki = 0; ki < g.k; ++ki) {
          long ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.h_in) {
            r += g.k;
            continue;
          }
          double* row = plane + ii * g.w_in;
          for (long kj = 0; kj < g.k; ++kj) {
            long jj = oj * g.stride - g.pad + kj;
            if (jj >= 0 && jj < g.w_in) row[jj] += col[r];
            ++r;
          }
        }
      }
    }
  }
}

}  // namespace

Var Graph::push(Tensor value, std::vector<Var> parents,
                std::function<void(Graph&, Var)> backward, bool force_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = force_grad || any_needs_grad(parents);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Graph::any_needs_grad(const std::vector<Var>& parents) const {
  for (Var p : parents)
    if (p.valid() && nodes_[static_cast<size_t>(p.id)].needs_grad) return true;
  return false;
}

Var Graph::leaf(Tensor value) { return push(std::move(value), {}, nullptr, true); }

Var Graph::constant(Tensor value) { return push(std::move(value), {}, nullptr, false); }

const Tensor& Graph::val(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).value; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<size_t>(v.id));
  static const Tensor empty;
  if (!n.grad_touched) {
    // Zero gradient of the right shape for callers that always read it.
    const_cast<Node&>(n).grad = Tensor(n.value.shape());
    const_cast<Node&>(n).grad_touched = true;
  }
  return n.grad;
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (!n.grad_touched) {
    n.grad = Tensor(n.value.shape());
    n.grad_touched = true;
  }
  return n.grad;
}

bool Graph::grad_touched(Var v) const {
  return nodes_.at(static_cast<size_t>(v.id)).grad_touched;
}

bool Graph::wants_grad(Var v) const {
  return nodes_.at(static_cast<size_t>(v.id)).needs_grad;
}

Var Graph::make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Graph&, Var)> backward) {
  return push(std::move(value), std::move(parents), std::move(backward), false);
}

void Graph::backward(Var loss) {
  Node& ln = nodes_.at(static_cast<size_t>(loss.id));
  if (ln.value.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  grad_buffer(loss)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.backward && n.grad_touched) n.backward(*this, Var{i});
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var Graph::add(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return push(std::move(out), {a, b},
              [a, b](Graph& g, Var self) {
                const Tensor& go = g.grad(self);
                if (g.wants_grad(a)) {
                  Tensor& ga = g.grad_buffer(a);
                  for (long i = 0; i < go.numel(); ++i) ga[i] += go[i];
                }
                if (g.wants_grad(b)) {
                  Tensor& gb = g.grad_buffer(b);
                  for (long i = 0; i < go.numel(); ++i) gb[i] += go[i];
                }
              },
              false);
}

Var Graph::sub(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return push(std::move(out), {a, b},
              [a, b](Graph& g, Var self) {
                const Tensor& go = g.grad(self);
                if (g.wants_grad(a)) {
                  Tensor& ga = g.grad_buffer(a);
                  for (long i = 0; i < go.numel(); ++i) ga[i] += go[i];
                }
                if (g.wants_grad(b)) {
                  Tensor& gb = g.grad_buffer(b);
                  for (long i = 0; i < go.numel(); ++i) gb[i] -= go[i];
                }
              },
              false);
}

Var Graph::mul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return push(std::move(out), {a, b},
              [a, b](Graph& g, Var self) {
                const Tensor& go = g.grad(self);
                const Tensor& av = g.val(a);
                const Tensor& bv = g.val(b);
                if (g.wants_grad(a)) {
                  Tensor& ga = g.grad_buffer(a);
                  for (long i = 0; i < go.numel(); ++i) ga[i] += go[i] * bv[i];
                }
                if (g.wants_grad(b)) {
                  Tensor& gb = g.grad_buffer(b);
                  for (long i = 0; i < go.numel(); ++i) gb[i] += go[i] * av[i];
                }
              },
              false);
}

Var Graph::scale(Var a, double k) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] * k;
  return push(std::move(out), {a},
              [a, k](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i) ga[i] += go[i] * k;
              },
              false);
}

Var Graph::add_scalar(Var a, double k) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] + k;
  return push(std::move(out), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i) ga[i] += go[i];
              },
              false);
}

Var Graph::relu(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return push(std::move(out), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                const Tensor& av = g.val(a);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i)
                  if (av[i] > 0.0) ga[i] += go[i];
              },
              false);
}

Var Graph::tanh_(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = std::tanh(av[i]);
  return push(std::move(out), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                const Tensor& ov = g.val(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i)
                  ga[i] += go[i] * (1.0 - ov[i] * ov[i]);
              },
              false);
}

Var Graph::sigmoid(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(av[i]);
  return push(std::move(out), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                const Tensor& ov = g.val(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i)
                  ga[i] += go[i] * ov[i] * (1.0 - ov[i]);
              },
              false);
}

Var Graph::silu(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  auto sig = std::make_shared<Tensor>(av.shape());
  for (long i = 0; i < out.numel(); ++i) {
    double s = stable_sigmoid(av[i]);
    (*sig)[i] = s;
    out[i] = av[i] * s;
  }
  return push(std::move(out), {a},
              [a, sig](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                const Tensor& av = g.val(a);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i) {
                  double s = (*sig)[i];
                  ga[i] += go[i] * s * (1.0 + av[i] * (1.0 - s));
                }
              },
              false);
}

Var Graph::exp_(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = std::exp(av[i]);
  return push(std::move(out), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                const Tensor& ov = g.val(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i) ga[i] += go[i] * ov[i];
              },
              false);
}

Var Graph::softplus(Var a) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i) out[i] = stable_softplus(av[i]);
  return push(std::move(out), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                const Tensor& av = g.val(a);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i)
                  ga[i] += go[i] * stable_sigmoid(av[i]);
              },
              false);
}

Var Graph::clamp(Var a, double lo, double hi) {
  const Tensor& av = val(a);
  Tensor out(av.shape());
  for (long i = 0; i < out.numel(); ++i)
    out[i] = av[i] < lo ? lo : (av[i] > hi ? hi : av[i]);
  return push(std::move(out), {a},
              [a, lo, hi](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                const Tensor& av = g.val(a);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i)
                  if (av[i] > lo && av[i] < hi) ga[i] += go[i];
              },
              false);
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Var Graph::reshape(Var a, std::vector<long> shape) {
  Tensor out = val(a).reshaped(std::move(shape));
  return push(std::move(out), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i) ga[i] += go[i];
              },
              false);
}

Var Graph::slice_cols(Var a, long c0, long c1) {
  const Tensor& av = val(a);
  if (av.rank() != 2 || c0 < 0 || c1 > av.dim(1) || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range for " + av.shape_str());
  long n = av.dim(0), d = av.dim(1), w = c1 - c0;
  Tensor out({n, w});
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < w; ++j) out.at(i, j) = av[i * d + c0 + j];
  return push(std::move(out), {a},
              [a, c0, w](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                Tensor& ga = g.grad_buffer(a);
                long d = g.val(a).dim(1);
                long n = go.dim(0);
                for (long i = 0; i < n; ++i)
                  for (long j = 0; j < w; ++j) ga[i * d + c0 + j] += go.at(i, j);
              },
              false);
}

Var Graph::detach(Var a) { return constant(val(a)); }

Var Graph::scale_grad(Var a, double factor) {
  Tensor out = val(a);
  return push(std::move(out), {a},
              [a, factor](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < go.numel(); ++i) ga[i] += factor * go[i];
              },
              false);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw std::invalid_argument("matmul: incompatible " + av.shape_str() + " x " + bv.shape_str());
  long m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  CRowMap A(av.data(), m, k), B(bv.data(), k, n);
  RowMap(out.data(), m, n).noalias() = A * B;
  return push(std::move(out), {a, b},
              [a, b, m, k, n](Graph& g, Var self) {
                const Tensor& go = g.grad(self);
                CRowMap G(go.data(), m, n);
                if (g.wants_grad(a)) {
                  CRowMap B(g.val(b).data(), k, n);
                  RowMap(g.grad_buffer(a).data(), m, k).noalias() += G * B.transpose();
                }
                if (g.wants_grad(b)) {
                  CRowMap A(g.val(a).data(), m, k);
                  RowMap(g.grad_buffer(b).data(), k, n).noalias() += A.transpose() * G;
                }
              },
              false);
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1))
    throw std::invalid_argument("matmul_nt: incompatible " + av.shape_str() + " x " + bv.shape_str());
  long m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  CRowMap A(av.data(), m, k), B(bv.data(), n, k);
  RowMap(out.data(), m, n).noalias() = A * B.transpose();
  return push(std::move(out), {a, b},
              [a, b, m, k, n](Graph& g, Var self) {
                const Tensor& go = g.grad(self);
                CRowMap G(go.data(), m, n);
                if (g.wants_grad(a)) {
                  CRowMap B(g.val(b).data(), n, k);
                  RowMap(g.grad_buffer(a).data(), m, k).noalias() += G * B;
                }
                if (g.wants_grad(b)) {
                  CRowMap A(g.val(a).data(), m, k);
                  RowMap(g.grad_buffer(b).data(), n, k).noalias() += G.transpose() * A;
                }
              },
              false);
}

Var Graph::linear(Var x, Var w, Var b) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  const Tensor& bv = val(b);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1) || bv.numel() != wv.dim(0))
    throw std::invalid_argument("linear: incompatible shapes");
  long n = xv.dim(0), in = xv.dim(1), out_d = wv.dim(0);
  Tensor out({n, out_d});
  CRowMap X(xv.data(), n, in), W(wv.data(), out_d, in);
  RowMap O(out.data(), n, out_d);
  O.noalias() = X * W.transpose();
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < out_d; ++j) out.at(i, j) += bv[j];
  return push(std::move(out), {x, w, b},
              [x, w, b, n, in, out_d](Graph& g, Var self) {
                const Tensor& go = g.grad(self);
                CRowMap G(go.data(), n, out_d);
                if (g.wants_grad(x)) {
                  CRowMap W(g.val(w).data(), out_d, in);
                  RowMap(g.grad_buffer(x).data(), n, in).noalias() += G * W;
                }
                if (g.wants_grad(w)) {
                  CRowMap X(g.val(x).data(), n, in);
                  RowMap(g.grad_buffer(w).data(), out_d, in).noalias() += G.transpose() * X;
                }
                if (g.wants_grad(b)) {
                  Tensor& gb = g.grad_buffer(b);
                  for (long i = 0; i < n; ++i)
                    for (long j = 0; j < out_d; ++j) gb[j] += go.at(i, j);
                }
              },
              false);
}

Var Graph::diag(Var a) {
  const Tensor& av = val(a);
  if (av.rank() != 2 || av.dim(0) != av.dim(1))
    throw std::invalid_argument("diag: square matrix expected");
  long k = av.dim(0);
  Tensor out({k});
  for (long i = 0; i < k; ++i) out[i] = av.at(i, i);
  return push(std::move(out), {a},
              [a, k](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                const Tensor& go = g.grad(self);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < k; ++i) ga[i * k + i] += go[i];
              },
              false);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var Graph::sum(Var a) {
  const Tensor& av = val(a);
  double s = 0.0;
  for (long i = 0; i < av.numel(); ++i) s += av[i];
  return push(Tensor::scalar(s), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                double go = g.grad(self)[0];
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < ga.numel(); ++i) ga[i] += go;
              },
              false);
}

Var Graph::sum_sq(Var a) {
  const Tensor& av = val(a);
  double s = 0.0;
  for (long i = 0; i < av.numel(); ++i) s += av[i] * av[i];
  return push(Tensor::scalar(s), {a},
              [a](Graph& g, Var self) {
                if (!g.wants_grad(a)) return;
                double go = g.grad(self)[0];
                const Tensor& av = g.val(a);
                Tensor& ga = g.grad_buffer(a);
                for (long i = 0; i < ga.numel(); ++i) ga[i] += 2.0 * go * av[i];
              },
              false);
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  const Tensor& bv = val(b);
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("conv2d: incompatible shapes");
  ConvGeom g{};
  g.c_in = xv.dim(1);
  g.h_in = xv.dim(2);
  g.w_in = xv.dim(3);
  g.c_out = wv.dim(0);
  g.k = wv.dim(2);
  g.stride = stride;
  g.pad = pad;
  g.h_out = (g.h_in + 2 * pad - g.k) / stride + 1;
  g.w_out = (g.w_in + 2 * pad - g.k) / stride + 1;
  long n = xv.dim(0);
  long ckk = g.c_in * g.k * g.k;
  long spatial = g.h_out * g.w_out;
  Tensor out({n, g.c_out, g.h_out, g.w_out});

#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    ColMat& cols = scratch_cols();
    im2col(xv.data() + i * g.c_in * g.h_in * g.w_in, g, cols);
    CRowMap W(wv.data(), g.c_out, ckk);
    RowMap O(out.data() + i * g.c_out * spatial, g.c_out, spatial);
    O.noalias() = W * cols;
    for (long c = 0; c < g.c_out; ++c) O.row(c).array() += bv[c];
  }

  // Backward runs sequentially per sample, accumulating straight into the
  // gradient buffers; item order is fixed, so results are reproducible.
  return push(std::move(out), {x, w, b},
              [x, w, b, g, n, ckk, spatial](Graph& gr, Var self) {
                const Tensor& go = gr.grad(self);
                const Tensor& xv = gr.val(x);
                const Tensor& wv = gr.val(w);
                bool need_x = gr.wants_grad(x), need_w = gr.wants_grad(w), need_b = gr.wants_grad(b);
                Tensor* gx = need_x ? &gr.grad_buffer(x) : nullptr;
                Tensor* gw = need_w ? &gr.grad_buffer(w) : nullptr;
                Tensor* gb = need_b ? &gr.grad_buffer(b) : nullptr;
                for (long i = 0; i < n; ++i) {
                  CRowMap G(go.data() + i * g.c_out * spatial, g.c_out, spatial);
                  if (need_w) {
                    ColMat& cols = scratch_cols();
                    im2col(xv.data() + i * g.c_in * g.h_in * g.w_in, g, cols);
                    RowMap GW(gw->data(), g.c_out, ckk);
                    GW.noalias() += G * cols.transpose();
                  }
                  if (need_b)
                    for (long c = 0; c < g.c_out; ++c) gb->operator[](c) += G.row(c).sum();
                  if (need_x) {
                    CRowMap W(wv.data(), g.c_out, ckk);
                    ColMat& dcols = scratch_cols2();
                    dcols.resize(ckk, spatial);
                    dcols.noalias() = W.transpose() * G;
                    col2im_add(dcols, g, gx->data() + i * g.c_in * g.h_in * g.w_in);
                  }
                }
              },
              false);
}

Var Graph::conv2d_transpose(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  const Tensor& bv = val(b);
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(0))
    throw std::invalid_argument("conv2d_transpose: incompatible shapes");
  long n = xv.dim(0);
  long c_in = xv.dim(1), h_in = xv.dim(2), w_in = xv.dim(3);
  long c_out = wv.dim(1), k = wv.dim(2);
  long h_out = (h_in - 1) * stride - 2 * pad + k;
  long w_out = (w_in - 1) * stride - 2 * pad + k;
  // Geometry mirrors conv2d with the roles of input/output swapped: the
  // "image" side of im2col/col2im is the tconv OUTPUT.
  ConvGeom g{};
  g.c_in = c_out;
  g.h_in = h_out;
  g.w_in = w_out;
  g.c_out = c_in;
  g.h_out = h_in;
  g.w_out = w_in;
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  long okk = c_out * k * k;
  long spatial_in = h_in * w_in;
  Tensor out({n, c_out, h_out, w_out});

#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    CRowMap W(wv.data(), c_in, okk);
    CRowMap X(xv.data() + i * c_in * spatial_in, c_in, spatial_in);
    ColMat& cols = scratch_cols();
    cols.resize(okk, spatial_in);
    cols.noalias() = W.transpose() * X;
    double* o = out.data() + i * c_out * h_out * w_out;
    col2im_add(cols, g, o);
    for (long c = 0; c < c_out; ++c) {
      double* plane = o + c * h_out * w_out;
      for (long p = 0; p < h_out * w_out; ++p) plane[p] += bv[c];
    }
  }

  return push(std::move(out), {x, w, b},
              [x, w, b, g, n, c_in, c_out, okk, spatial_in, h_out, w_out](Graph& gr, Var self) {
                const Tensor& go = gr.grad(self);
                const Tensor& xv = gr.val(x);
                const Tensor& wv = gr.val(w);
                bool need_x = gr.wants_grad(x), need_w = gr.wants_grad(w), need_b = gr.wants_grad(b);
                Tensor* gx = need_x ? &gr.grad_buffer(x) : nullptr;
                Tensor* gw = need_w ? &gr.grad_buffer(w) : nullptr;
                Tensor* gb = need_b ? &gr.grad_buffer(b) : nullptr;
                for (long i = 0; i < n; ++i) {
                  const double* gout = go.data() + i * c_out * h_out * w_out;
                  ColMat& dcols = scratch_cols();
                  im2col(gout, g, dcols);  // (okk x spatial_in)
                  if (need_x) {
                    CRowMap W(wv.data(), c_in, okk);
                    RowMap GX(gx->data() + i * c_in * spatial_in, c_in, spatial_in);
                    GX.noalias() += W * dcols;
                  }
                  if (need_w) {
                    CRowMap X(xv.data() + i * c_in * spatial_in, c_in, spatial_in);
                    RowMap GW(gw->data(), c_in, okk);
                    GW.noalias() += X * dcols.transpose();
                  }
                  if (need_b) {
                    for (long c = 0; c < c_out; ++c) {
                      const double* plane = gout + c * h_out * w_out;
                      double s = 0.0;
                      for (long p = 0; p < h_out * w_out; ++p) s += plane[p];
                      gb->operator[](c) += s;
                    }
                  }
                }
              },
              false);
}

// ---------------------------------------------------------------------------
// spatial transformer
// ---------------------------------------------------------------------------

Var Graph::affine_grid(Var theta, long h, long w) {
  const Tensor& tv = val(theta);
  if (tv.rank() != 3 || tv.dim(1) != 2 || tv.dim(2) != 3)
    throw std::invalid_argument("affine_grid: theta must be [N,2,3]");
  long n = tv.dim(0);
  Tensor out({n, h, w, 2});
  for (long i = 0; i < n; ++i) {
    const double* t = tv.data() + i * 6;
    double* o = out.data() + i * h * w * 2;
    for (long r = 0; r < h; ++r) {
      double y = (2.0 * r + 1.0) / static_cast<double>(h) - 1.0;
      for (long c = 0; c < w; ++c) {
        double x = (2.0 * c + 1.0) / static_cast<double>(w) - 1.0;
        long p = (r * w + c) * 2;
        o[p] = t[0] * x + t[1] * y + t[2];
        o[p + 1] = t[3] * x + t[4] * y + t[5];
      }
    }
  }
  return push(std::move(out), {theta},
              [theta, h, w, n](Graph& g, Var self) {
                if (!g.wants_grad(theta)) return;
                const Tensor& go = g.grad(self);
                Tensor& gt = g.grad_buffer(theta);
                for (long i = 0; i < n; ++i) {
                  const double* gg = go.data() + i * h * w * 2;
                  double* t = gt.data() + i * 6;
                  for (long r = 0; r < h; ++r) {
                    double y = (2.0 * r + 1.0) / static_cast<double>(h) - 1.0;
                    for (long c = 0; c < w; ++c) {
                      double x = (2.0 * c + 1.0) / static_cast<double>(w) - 1.0;
                      long p = (r * w + c) * 2;
                      t[0] += gg[p] * x;
                      t[1] += gg[p] * y;
                      t[2] += gg[p];
                      t[3] += gg[p + 1] * x;
                      t[4] += gg[p + 1] * y;
                      t[5] += gg[p + 1];
                    }
                  }
                }
              },
              false);
}

Var Graph::grid_sample(Var img, Var grid) {
  const Tensor& iv = val(img);
  const Tensor& gv = val(grid);
  if (iv.rank() != 4 || gv.rank() != 4 || gv.dim(3) != 2 || iv.dim(0) != gv.dim(0))
    throw std::invalid_argument("grid_sample: incompatible shapes");
  long n = iv.dim(0), ch = iv.dim(1), h = iv.dim(2), w = iv.dim(3);
  long ho = gv.dim(1), wo = gv.dim(2);
  Tensor out({n, ch, ho, wo});

#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const double* gp = gv.data() + i * ho * wo * 2;
    const double* ip = iv.data() + i * ch * h * w;
    double* op = out.data() + i * ch * ho * wo;
    for (long p = 0; p < ho * wo; ++p) {
      double u = (gp[p * 2] + 1.0) * 0.5 * static_cast<double>(w) - 0.5;
      double v = (gp[p * 2 + 1] + 1.0) * 0.5 * static_cast<double>(h) - 0.5;
      long x0 = static_cast<long>(std::floor(u));
      long y0 = static_cast<long>(std::floor(v));
      double du = u - static_cast<double>(x0);
      double dv = v - static_cast<double>(y0);
      bool x0in = x0 >= 0 && x0 < w, x1in = x0 + 1 >= 0 && x0 + 1 < w;
      bool y0in = y0 >= 0 && y0 < h, y1in = y0 + 1 >= 0 && y0 + 1 < h;
      for (long c = 0; c < ch; ++c) {
        const double* plane = ip + c * h * w;
        double i00 = (x0in && y0in) ? plane[y0 * w + x0] : 0.0;
        double i01 = (x1in && y0in) ? plane[y0 * w + x0 + 1] : 0.0;
        double i10 = (x0in && y1in) ? plane[(y0 + 1) * w + x0] : 0.0;
        double i11 = (x1in && y1in) ? plane[(y0 + 1) * w + x0 + 1] : 0.0;
        op[c * ho * wo + p] = (1.0 - dv) * ((1.0 - du) * i00 + du * i01) +
                              dv * ((1.0 - du) * i10 + du * i11);
      }
    }
  }

  return push(std::move(out), {img, grid},
              [img, grid, n, ch, h, w, ho, wo](Graph& g, Var self) {
                const Tensor& go = g.grad(self);
                const Tensor& iv = g.val(img);
                const Tensor& gv = g.val(grid);
                bool need_i = g.wants_grad(img), need_g = g.wants_grad(grid);
                Tensor* gi = need_i ? &g.grad_buffer(img) : nullptr;
                Tensor* gg = need_g ? &g.grad_buffer(grid) : nullptr;

#pragma omp parallel for schedule(static)
                for (long i = 0; i < n; ++i) {
                  const double* gp = gv.data() + i * ho * wo * 2;
                  const double* ip = iv.data() + i * ch * h * w;
                  const double* gop = go.data() + i * ch * ho * wo;
                  double* gip = need_i ? gi->data() + i * ch * h * w : nullptr;
                  double* ggp = need_g ? gg->data() + i * ho * wo * 2 : nullptr;
                  for (long p = 0; p < ho * wo; ++p) {
                    double u = (gp[p * 2] + 1.0) * 0.5 * static_cast<double>(w) - 0.5;
                    double v = (gp[p * 2 + 1] + 1.0) * 0.5 * static_cast<double>(h) - 0.5;
                    long x0 = static_cast<long>(std::floor(u));
                    long y0 = static_cast<long>(std::floor(v));
                    double du = u - static_cast<double>(x0);
                    double dv = v - static_cast<double>(y0);
                    bool x0in = x0 >= 0 && x0 < w, x1in = x0 + 1 >= 0 && x0 + 1 < w;
                    bool y0in = y0 >= 0 && y0 < h, y1in = y0 + 1 >= 0 && y0 + 1 < h;
                    double dgu = 0.0, dgv = 0.0;
                    for (long c = 0; c < ch; ++c) {
                      const double* plane = ip + c * h * w;
                      double i00 = (x0in && y0in) ? plane[y0 * w + x0] : 0.0;
                      double i01 = (x1in && y0in) ? plane[y0 * w + x0 + 1] : 0.0;
                      double i10 = (x0in && y1in) ? plane[(y0 + 1) * w + x0] : 0.0;
                      double i11 = (x1in && y1in) ? plane[(y0 + 1) * w + x0 + 1] : 0.0;
                      double gout = gop[c * ho * wo + p];
                      if (need_i) {
                        double* gplane = gip + c * h * w;
                        if (x0in && y0in) gplane[y0 * w + x0] += gout * (1.0 - du) * (1.0 - dv);
                        if (x1in && y0in) gplane[y0 * w + x0 + 1] += gout * du * (1.0 - dv);
                        if (x0in && y1in) gplane[(y0 + 1) * w + x0] += gout * (1.0 - du) * dv;
                        if (x1in && y1in) gplane[(y0 + 1) * w + x0 + 1] += gout * du * dv;
                      }
                      if (need_g) {
                        dgu += gout * ((1.0 - dv) * (i01 - i00) + dv * (i11 - i10));
                        dgv += gout * ((1.0 - du) * (i10 - i00) + du * (i11 - i01));
                      }
                    }
                    if (need_g) {
                      ggp[p * 2] += dgu * 0.5 * static_cast<double>(w);
                      ggp[p * 2 + 1] += dgv * 0.5 * static_cast<double>(h);
                    }
                  }
                }
              },
              false);
}

}  // namespace gvae::ad
