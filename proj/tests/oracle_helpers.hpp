#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "gvae/rng.hpp"
#include "gvae/tensor.hpp"

namespace gvae::testing {

// Central finite differences against an analytic gradient on the probed
// entries. The loss callable must recompute the full loss from the probe
// tensor. Returns the worst relative error over the probes, where
// rel = |a - n| / max(|a|, |n|, floor); the floor absorbs FD noise on
// near-zero entries.
struct FdResult {
  double max_rel = 0.0;
  long worst_index = -1;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

inline FdResult fd_check(const std::function<double(const Tensor&)>& loss_of, const Tensor& at,
                         const Tensor& analytic, const std::vector<long>& probes,
                         double step = 1e-5, double floor = 1e-3) {
  FdResult r;
  for (long idx : probes) {
    Tensor plus = at, minus = at;
    plus[idx] += step;
    minus[idx] -= step;
    double numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * step);
    double a = analytic[idx];
    double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst_index = idx;
      r.worst_analytic = a;
      r.worst_numeric = numeric;
    }
  }
  return r;
}

// Probe the largest-magnitude gradient entries plus a few pseudorandom ones.
inline std::vector<long> probe_indices(const Tensor& grad, long top_k, long random_k,
                                       uint64_t seed = 99) {
  std::vector<long> order(static_cast<size_t>(grad.numel()));
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(), [&](long a, long b) {
    return std::abs(grad[a]) > std::abs(grad[b]);
  });
  std::vector<long> out;
  for (long i = 0; i < std::min(top_k, grad.numel()); ++i) out.push_back(order[static_cast<size_t>(i)]);
  RngStream rng(seed, "fd.probes");
  for (long i = 0; i < random_k; ++i) out.push_back(rng.uniform_int(0, grad.numel() - 1));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline Tensor random_tensor(std::vector<long> shape, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = scale * rng.gaussian();
  return t;
}

}  // namespace gvae::testing
