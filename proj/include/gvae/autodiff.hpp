#pragma once

#include <functional>
#include <vector>

#include "gvae/tensor.hpp"

namespace gvae::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense double tensors. A Graph is built for one
// loss evaluation (one training step or one value-level op call), then
// backward() accumulates gradients into every node reachable from a leaf.
//
// Determinism: every op writes outputs at fixed indices and accumulates
// parent gradients in a fixed order, so results are bit-identical across
// runs and thread counts.
class Graph {
 public:
  // Leaf that wants a gradient (parameters, probed inputs).
  Var leaf(Tensor value);
  // Leaf treated as a constant (data batches, noise draws).
  Var constant(Tensor value);

  const Tensor& val(Var v) const;
  // Gradient buffer of a node; zeros until backward() touches it.
  const Tensor& grad(Var v) const;

  // ----- elementwise -----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var relu(Var a);
  Var tanh_(Var a);
  Var sigmoid(Var a);
  Var silu(Var a);
  Var exp_(Var a);
  Var softplus(Var a);
  Var clamp(Var a, double lo, double hi);

  // ----- structure -----
  Var reshape(Var a, std::vector<long> shape);
  Var slice_cols(Var a, long c0, long c1);  // [N,D] -> [N,c1-c0]
  Var detach(Var a);
  // Identity forward; multiplies the upstream gradient by `factor`
  // (factor = -lambda gives a gradient-reversal layer).
  Var scale_grad(Var a, double factor);

  // ----- linear algebra -----
  Var matmul(Var a, Var b);     // [m,k]x[k,n] -> [m,n]
  Var matmul_nt(Var a, Var b);  // [m,k]x[n,k]^T -> [m,n]
  Var linear(Var x, Var w, Var b);  // x:[N,I], w:[O,I], b:[O] -> [N,O]
  Var diag(Var a);              // [K,K] -> [K]

  // ----- reductions -----
  Var sum(Var a);     // -> [1]
  Var sum_sq(Var a);  // -> [1], sum of squares

  // ----- convolution (x:[N,C,H,W]) -----
  Var conv2d(Var x, Var w, Var b, int stride, int pad);            // w:[O,C,k,k]
  Var conv2d_transpose(Var x, Var w, Var b, int stride, int pad);  // w:[C,O,k,k]

  // ----- spatial transformer -----
  // theta:[N,2,3] -> grid:[N,H,W,2]; for each output pixel center with
  // normalized coordinates (x, y) in [-1,1]^2 (x = (2j+1)/W - 1), the
  // source location is A_theta * (x, y, 1)^T, stored as (xs, ys).
  Var affine_grid(Var theta, long h, long w);
  // Bilinear sampling with zero padding outside [-1,1]^2; differentiable
  // w.r.t. both image and grid.
  Var grid_sample(Var img, Var grid);

  // Custom-op extension point: value plus a backward closure that reads
  // grad(self) and accumulates into parents via grad_buffer().
  Var make_node(Tensor value, std::vector<Var> parents,
                std::function<void(Graph&, Var self)> backward);

  // Accumulation target for backward closures.
  Tensor& grad_buffer(Var v);
  bool grad_touched(Var v) const;
  // True if gradients should be propagated into this node.
  bool wants_grad(Var v) const;

  void backward(Var loss_scalar);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_touched = false;
    std::function<void(Graph&, Var)> backward;
  };

  Var push(Tensor value, std::vector<Var> parents,
           std::function<void(Graph&, Var)> backward, bool force_grad);
  bool any_needs_grad(const std::vector<Var>& parents) const;

  std::vector<Node> nodes_;
};

}  // namespace gvae::ad
