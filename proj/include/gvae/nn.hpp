#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvae/autodiff.hpp"
#include "gvae/rng.hpp"
#include "gvae/tensor.hpp"

namespace gvae::nn {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, drawn from an explicit
// stream so initialization is reproducible from the master seed.
inline void init_uniform(Tensor& t, long fan_in, RngStream& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
}

struct Linear {
  Tensor w, b;  // w: [out, in]

  Linear() = default;
  Linear(long in, long out) : w({out, in}), b({out}) {}

  void init(RngStream& rng) {
    init_uniform(w, w.dim(1), rng);
    init_uniform(b, w.dim(1), rng);
  }

  ad::Var apply(ad::Graph& g, ad::Var wv, ad::Var bv, ad::Var x) const {
    return g.linear(x, wv, bv);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

struct Conv2d {
  Tensor w, b;  // w: [out, in, k, k]
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(long in, long out, long k, int stride_, int pad_)
      : w({out, in, k, k}), b({out}), stride(stride_), pad(pad_) {}

  void init(RngStream& rng) {
    long fan_in = w.dim(1) * w.dim(2) * w.dim(3);
    init_uniform(w, fan_in, rng);
    init_uniform(b, fan_in, rng);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

struct ConvTranspose2d {
  Tensor w, b;  // w: [in, out, k, k]
  int stride = 1, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(long in, long out, long k, int stride_, int pad_)
      : w({in, out, k, k}), b({out}), stride(stride_), pad(pad_) {}

  void init(RngStream& rng) {
    long fan_in = w.dim(0) * w.dim(2) * w.dim(3);
    init_uniform(w, fan_in, rng);
    init_uniform(b, fan_in, rng);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
  }
};

// Adaptive-moment gradient descent over a fixed parameter list. Slot order
// follows the parameter list, so updates are deterministic and the state
// serializes as plain named tensors.
class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(const std::vector<NamedParam>& params) {
    params_ = params;
    m_.clear();
    v_.clear();
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor->shape());
      v_.emplace_back(p.tensor->shape());
    }
    t_ = 0;
  }

  // grads[i] must align with the attached parameter list.
  void step(const std::vector<const Tensor*>& grads) {
    if (grads.size() != params_.size())
      throw std::invalid_argument("Adam::step: gradient count does not match parameters");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i].tensor;
      const Tensor& g = *grads[i];
      if (!g.same_shape(p))
        throw std::invalid_argument("Adam::step: gradient shape mismatch for " + params_[i].name);
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (long j = 0; j < p.numel(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        double mh = m[j] / bc1;
        double vh = v[j] / bc2;
        p[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  double lr() const { return lr_; }
  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

}  // namespace gvae::nn
