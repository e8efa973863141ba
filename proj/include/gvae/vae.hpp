#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gvae/autodiff.hpp"
#include "gvae/nn.hpp"
#include "gvae/rng.hpp"
#include "gvae/tensor.hpp"

namespace gvae {

struct VaeConfig {
  long d_z = 10;
  long d_z_def = 0;         // leading latent dims driving the deformation
  double kl_weight = 1.0;   // 1 = vanilla VAE, 0 = autoencoder, >1 = beta-VAE
  long image_h = 32, image_w = 32;
  long width = 8;           // base channel count of the conv stacks
  int depth = 0;            // conv layers; 0 derives from image size
  uint64_t seed = 1;

  int resolved_depth() const;
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Per-sample mean and log-variance of q(z|x). log_variance is clamped to
// [-10, 10] by encode().
struct GaussianPosterior {
  Tensor mean;          // [N, d_z]
  Tensor log_variance;  // [N, d_z]

  long count() const { return mean.rank() == 2 ? mean.dim(0) : 1; }
  long dims() const { return mean.rank() == 2 ? mean.dim(1) : mean.numel(); }
};

// Latent vector(s) with the declared block split: dims [0, d_def) drive the
// deformation (unsupervised) or hold the attributes (supervised), the rest
// is content.
struct LatentCode {
  Tensor values;  // [N, d_z]
  long d_def = 0;

  void validate() const;
};

// Convolutional VAE backbone. Stride-2 stacks down to a small spatial map,
// linear heads for (mean, log_var), mirrored transpose-conv decoder with a
// logistic output squash.
class VaeModel {
 public:
  VaeConfig cfg;
  std::vector<nn::Conv2d> enc_convs;
  nn::Linear enc_fc;
  nn::Linear dec_fc;
  std::vector<nn::ConvTranspose2d> dec_convs;
  long mid_ch = 0, mid_h = 0, mid_w = 0;

  static VaeModel build(const VaeConfig& cfg, RngStream& init_rng);

  std::vector<nn::NamedParam> named_params();

  // Per-step registration of all parameters as graph leaves.
  struct Vars {
    std::vector<std::pair<ad::Var, ad::Var>> enc;
    std::pair<ad::Var, ad::Var> enc_fc, dec_fc;
    std::vector<std::pair<ad::Var, ad::Var>> dec;
    std::vector<ad::Var> ordered;  // aligned with named_params()
  };
  Vars bind(ad::Graph& g) const;

  struct PosteriorVars {
    ad::Var mean, log_var;
  };
  PosteriorVars encode(ad::Graph& g, const Vars& v, ad::Var x) const;
  ad::Var decode(ad::Graph& g, const Vars& v, ad::Var z) const;
};

// ---- value-level operation contracts -------------------------------------

// x: [N,1,H,W]; throws std::invalid_argument on shape mismatch.
GaussianPosterior encode(const VaeModel& model, const Tensor& x);

// values = mean + exp(0.5 * log_variance) * noise, elementwise.
Tensor reparameterize(const GaussianPosterior& q, const Tensor& noise);

// z: [N,d_z] -> [N,1,H,W] with entries in [0,1].
Tensor decode(const VaeModel& model, const Tensor& z);

// Sum of squared pixel differences.
double reconstruction_loss(const Tensor& x, const Tensor& x_rec);

// KL(q || N(0,I)) = 0.5 * sum(mean^2 + exp(lv) - 1 - lv), summed over batch.
double gaussian_kl(const GaussianPosterior& q);

// -reconstruction_loss - kl_weight * gaussian_kl.
double elbo(const Tensor& x, const GaussianPosterior& q, const Tensor& x_rec,
            const VaeConfig& cfg);

// ---- graph-level builders (single source of truth for the math) ----------

ad::Var reparameterize_g(ad::Graph& g, ad::Var mean, ad::Var log_var, ad::Var noise);
ad::Var gaussian_kl_g(ad::Graph& g, ad::Var mean, ad::Var log_var);
ad::Var reconstruction_loss_g(ad::Graph& g, ad::Var x, ad::Var x_rec);

struct ElboVars {
  ad::Var recon_loss;  // scalar
  ad::Var kl;          // scalar
  ad::Var elbo;        // scalar: -recon - kl_weight * kl
};
ElboVars elbo_g(ad::Graph& g, ad::Var x, ad::Var mean, ad::Var log_var,
                ad::Var x_rec, double kl_weight);

}  // namespace gvae
