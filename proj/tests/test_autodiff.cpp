#include <doctest.h>

#include <cmath>

#include "gvae/autodiff.hpp"
#include "gvae/rng.hpp"
#include "oracle_helpers.hpp"

using namespace gvae;
using namespace gvae::testing;

namespace {

// Gradient of a scalar-valued graph w.r.t. one leaf, checked against central
// differences at the probed entries.
void check_op_grad(const std::function<ad::Var(ad::Graph&, ad::Var)>& build, const Tensor& x0,
                   double tol = 1e-4) {
  ad::Graph g;
  ad::Var x = g.leaf(x0);
  ad::Var loss = build(g, x);
  g.backward(loss);
  Tensor analytic = g.grad(x);
  auto loss_of = [&](const Tensor& probe) {
    ad::Graph h;
    ad::Var xv = h.constant(probe);
    return h.val(build(h, xv))[0];
  };
  auto probes = probe_indices(analytic, 6, 4);
  FdResult r = fd_check(loss_of, x0, analytic, probes);
  CAPTURE(r.worst_index);
  CAPTURE(r.worst_analytic);
  CAPTURE(r.worst_numeric);
  CHECK(r.max_rel < tol);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  RngStream rng(11, "t");
  Tensor a = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({3, 5}, rng);

  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum_sq(g.add(x, g.constant(b))); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum_sq(g.sub(g.constant(b), x)); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum_sq(g.mul(x, g.constant(b))); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum(g.tanh_(g.scale(x, 1.7))); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum(g.sigmoid(g.add_scalar(x, 0.3))); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum(g.silu(x)); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum(g.exp_(g.scale(x, 0.5))); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum(g.softplus(x)); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum_sq(g.relu(x)); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum_sq(g.clamp(x, -0.5, 0.5)); }, a);
}

TEST_CASE("matmul family matches loop oracle and finite differences") {
  RngStream rng(12, "t");
  Tensor a = random_tensor({4, 6}, rng);
  Tensor b = random_tensor({6, 3}, rng);

  ad::Graph g;
  ad::Var out = g.matmul(g.constant(a), g.constant(b));
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 3; ++j) {
      double s = 0;
      for (long k = 0; k < 6; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(g.val(out).at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }

  check_op_grad([&](ad::Graph& h, ad::Var x) { return h.sum_sq(h.matmul(x, h.constant(b))); }, a);
  Tensor bt = random_tensor({3, 6}, rng);
  check_op_grad([&](ad::Graph& h, ad::Var x) { return h.sum_sq(h.matmul_nt(x, h.constant(bt))); },
                a);
  check_op_grad([&](ad::Graph& h, ad::Var x) { return h.sum_sq(h.matmul_nt(h.constant(a), x)); },
                bt);

  Tensor w = random_tensor({3, 6}, rng);
  Tensor bias = random_tensor({3}, rng);
  check_op_grad(
      [&](ad::Graph& h, ad::Var x) {
        return h.sum_sq(h.linear(x, h.constant(w), h.constant(bias)));
      },
      a);
  check_op_grad(
      [&](ad::Graph& h, ad::Var x) {
        return h.sum_sq(h.linear(h.constant(a), x, h.constant(bias)));
      },
      w);
  check_op_grad(
      [&](ad::Graph& h, ad::Var x) { return h.sum_sq(h.linear(h.constant(a), h.constant(w), x)); },
      bias);
}

TEST_CASE("structure ops") {
  RngStream rng(13, "t");
  Tensor a = random_tensor({3, 8}, rng);

  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum_sq(g.slice_cols(x, 2, 6)); }, a);
  check_op_grad([&](ad::Graph& g, ad::Var x) { return g.sum_sq(g.reshape(x, {6, 4})); }, a);

  // scale_grad: identity forward, scaled gradient backward
  ad::Graph g;
  ad::Var x = g.leaf(a);
  ad::Var loss = g.sum_sq(g.scale_grad(x, -2.5));
  g.backward(loss);
  for (long i = 0; i < a.numel(); ++i)
    CHECK(g.grad(x)[i] == doctest::Approx(-2.5 * 2.0 * a[i]).epsilon(1e-12));

  // detach blocks gradients entirely
  ad::Graph h;
  ad::Var y = h.leaf(a);
  ad::Var l2 = h.sum_sq(h.detach(y));
  h.backward(l2);
  CHECK_FALSE(h.grad_touched(y));

  // diag
  Tensor sq = random_tensor({4, 4}, rng);
  check_op_grad([&](ad::Graph& k, ad::Var v) { return k.sum_sq(k.diag(v)); }, sq);
}

TEST_CASE("conv2d matches naive loop oracle") {
  RngStream rng(14, "t");
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 4, 4}, rng, 0.5);
  Tensor b = random_tensor({4}, rng, 0.2);
  const int stride = 2, pad = 1;

  ad::Graph g;
  ad::Var out = g.conv2d(g.constant(x), g.constant(w), g.constant(b), stride, pad);
  const Tensor& ov = g.val(out);
  long ho = (8 + 2 * pad - 4) / stride + 1;
  REQUIRE(ov.dim(2) == ho);
  for (long n = 0; n < 2; ++n)
    for (long o = 0; o < 4; ++o)
      for (long i = 0; i < ho; ++i)
        for (long j = 0; j < ho; ++j) {
          double s = b[o];
          for (long c = 0; c < 3; ++c)
            for (long ki = 0; ki < 4; ++ki)
              for (long kj = 0; kj < 4; ++kj) {
                long ii = i * stride - pad + ki, jj = j * stride - pad + kj;
                if (ii < 0 || ii >= 8 || jj < 0 || jj >= 8) continue;
                s += x.at(n, c, ii, jj) * w.at(o, c, ki, kj);
              }
          CHECK(ov.at(n, o, i, j) == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("conv2d gradients match finite differences") {
  RngStream rng(15, "t");
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 4, 4}, rng, 0.5);
  Tensor b = random_tensor({4}, rng, 0.2);

  check_op_grad(
      [&](ad::Graph& g, ad::Var v) {
        return g.sum_sq(g.conv2d(v, g.constant(w), g.constant(b), 2, 1));
      },
      x);
  check_op_grad(
      [&](ad::Graph& g, ad::Var v) {
        return g.sum_sq(g.conv2d(g.constant(x), v, g.constant(b), 2, 1));
      },
      w);
  check_op_grad(
      [&](ad::Graph& g, ad::Var v) {
        return g.sum_sq(g.conv2d(g.constant(x), g.constant(w), v, 2, 1));
      },
      b);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d and passes finite differences") {
  RngStream rng(16, "t");
  // adjoint identity: <conv(a; w), b> == <a, conv_T(b; w)> with matching geometry
  Tensor a = random_tensor({1, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 4, 4}, rng, 0.5);  // conv weight [O,C,k,k]
  Tensor zero_o = Tensor({4});
  Tensor zero_c = Tensor({3});
  Tensor bt = random_tensor({1, 4, 4, 4}, rng);  // shape of conv output (stride 2, pad 1)

  ad::Graph g;
  ad::Var conv_a = g.conv2d(g.constant(a), g.constant(w), g.constant(zero_o), 2, 1);
  // tconv weight layout is [C_in, C_out, k, k]; conv's [O,C,k,k] transposes into it
  Tensor wt({4, 3, 4, 4});
  wt = w;  // same memory layout: conv input-grad uses the identical kernel tensor
  ad::Var tconv_b = g.conv2d_transpose(g.constant(bt), g.constant(wt), g.constant(zero_c), 2, 1);
  double lhs = 0, rhs = 0;
  for (long i = 0; i < g.val(conv_a).numel(); ++i) lhs += g.val(conv_a)[i] * bt[i];
  for (long i = 0; i < a.numel(); ++i) rhs += a[i] * g.val(tconv_b)[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

  Tensor x = random_tensor({2, 4, 4, 4}, rng);
  Tensor tw = random_tensor({4, 3, 4, 4}, rng, 0.5);
  Tensor tb = random_tensor({3}, rng, 0.2);
  check_op_grad(
      [&](ad::Graph& h, ad::Var v) {
        return h.sum_sq(h.conv2d_transpose(v, h.constant(tw), h.constant(tb), 2, 1));
      },
      x);
  check_op_grad(
      [&](ad::Graph& h, ad::Var v) {
        return h.sum_sq(h.conv2d_transpose(h.constant(x), v, h.constant(tb), 2, 1));
      },
      tw);
  check_op_grad(
      [&](ad::Graph& h, ad::Var v) {
        return h.sum_sq(h.conv2d_transpose(h.constant(x), h.constant(tw), v, 2, 1));
      },
      tb);
}

TEST_CASE("affine_grid and grid_sample gradients") {
  RngStream rng(17, "t");
  // theta near identity with a generic perturbation keeps sampling points off
  // the pixel lattice, where bilinear interpolation is differentiable
  Tensor theta({2, 2, 3});
  double base[6] = {1.05, 0.08, 0.03, -0.06, 0.93, -0.04};
  for (long n = 0; n < 2; ++n)
    for (int i = 0; i < 6; ++i) theta[n * 6 + i] = base[i] + 0.01 * rng.gaussian();

  check_op_grad([&](ad::Graph& g, ad::Var v) { return g.sum_sq(g.affine_grid(v, 7, 9)); }, theta);

  Tensor img = random_tensor({2, 1, 8, 8}, rng);
  ad::Graph g;
  Tensor grid_v = g.val(g.affine_grid(g.constant(theta), 8, 8));

  check_op_grad(
      [&](ad::Graph& h, ad::Var v) { return h.sum_sq(h.grid_sample(v, h.constant(grid_v))); },
      img);
  check_op_grad(
      [&](ad::Graph& h, ad::Var v) { return h.sum_sq(h.grid_sample(h.constant(img), v)); },
      grid_v);

  // end to end through both ops
  check_op_grad(
      [&](ad::Graph& h, ad::Var v) {
        return h.sum_sq(h.grid_sample(h.constant(img), h.affine_grid(v, 8, 8)));
      },
      theta);
}

TEST_CASE("grid_sample forward matches direct bilinear interpolation") {
  RngStream rng(18, "t");
  Tensor img = random_tensor({1, 1, 6, 6}, rng);
  Tensor grid({1, 1, 2, 2});
  grid[0] = -0.2;  // (xs, ys) pairs
  grid[1] = 0.4;
  grid[2] = 0.9;
  grid[3] = -0.7;

  ad::Graph g;
  const Tensor& out = g.val(g.grid_sample(g.constant(img), g.constant(grid)));
  for (long p = 0; p < 2; ++p) {
    double u = (grid[2 * p] + 1.0) * 3.0 - 0.5;
    double v = (grid[2 * p + 1] + 1.0) * 3.0 - 0.5;
    long x0 = static_cast<long>(std::floor(u)), y0 = static_cast<long>(std::floor(v));
    double du = u - x0, dv = v - y0;
    auto pix = [&](long y, long x) {
      return (x >= 0 && x < 6 && y >= 0 && y < 6) ? img.at(0, 0, y, x) : 0.0;
    };
    double expect = (1 - dv) * ((1 - du) * pix(y0, x0) + du * pix(y0, x0 + 1)) +
                    dv * ((1 - du) * pix(y0 + 1, x0) + du * pix(y0 + 1, x0 + 1));
    CHECK(out[p] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("graphs are pure: identical inputs give bit-identical outputs") {
  RngStream rng(19, "t");
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 4, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  auto run = [&]() {
    ad::Graph g;
    ad::Var out = g.conv2d(g.constant(x), g.constant(w), g.constant(b), 2, 1);
    return g.val(g.sum(g.silu(out)))[0];
  };
  double v1 = run(), v2 = run();
  CHECK(v1 == v2);
}
