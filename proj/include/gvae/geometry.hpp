#pragma once

#include <span>
#include <string>
#include <vector>

#include "gvae/autodiff.hpp"
#include "gvae/rng.hpp"
#include "gvae/tensor.hpp"

namespace gvae {

// 2x3 affine matrix applied to normalized output coordinates.
struct AffineParams {
  double theta[6] = {1, 0, 0, 0, 1, 0};  // row-major [t11 t12 t13; t21 t22 t23]

  double det2x2() const { return theta[0] * theta[4] - theta[1] * theta[3]; }
  // Throws if entries are non-finite or the 2x2 block is degenerate.
  void validate() const;
};

// Which transform parameter each deformation latent drives, and the tanh
// squashing amplitude. A parameter driven by several dims takes the mean of
// their amplitude*tanh(z) contributions; z = 0 always maps to the identity.
struct DeformationSpec {
  enum class Transform { Rotation, Scale, TransX, TransY, Shear };
  struct Entry {
    Transform param;
    double amplitude;
  };
  std::vector<Entry> entries;  // one per z_def dim, in dim order

  long dims() const { return static_cast<long>(entries.size()); }
  void validate() const;

  // MNIST reproduction: (rotation, scale).
  static DeformationSpec mnist_default();
  // 2D shapes: (trans-x, trans-y, scale, rotation).
  static DeformationSpec shapes_default();
  // Generic d dims: round-robin over (rotation, scale, tx, ty, shear).
  static DeformationSpec round_robin(long d);
  static DeformationSpec preset_for(const std::string& name, long d);

  static const char* transform_name(Transform t);
};

// K x D basis of flattened image vectors.
struct PcaBasis {
  Tensor basis;  // [K, D]

  long k() const { return basis.rank() == 2 ? basis.dim(0) : 0; }
  long d() const { return basis.rank() == 2 ? basis.dim(1) : 0; }
  void validate() const;

  // Random orthonormal rows (QR of a Gaussian matrix), so the penalties
  // start near zero.
  static PcaBasis orthonormal(long k, long d, RngStream& rng);
};

// ---- value-level operations -----------------------------------------------

// z_def length must match spec; z_def = 0 gives the identity matrix.
AffineParams affine_from_latent(std::span<const double> z_def, const DeformationSpec& spec);

// [H,W,2] field of source coordinates A_theta * (x, y, 1)^T over the
// normalized pixel-center mesh.
Tensor make_sampling_grid(const AffineParams& a, long h, long w);

// img: [H,W]; grid: [H,W,2]; bilinear with zero padding outside [-1,1]^2.
Tensor bilinear_sample(const Tensor& img, const Tensor& grid);

// z_cont (length K) * basis, reshaped to [H,W]; row-basis convention.
Tensor pca_reconstruct(std::span<const double> z_cont, const PcaBasis& b, long h, long w);

// sum_{k != j} (b_k . b_j)^2
double orthogonality_penalty(const PcaBasis& b);

// sum_k (b_k . b_k - 1)^2
double unit_norm_penalty(const PcaBasis& b);

struct DpcaTerms {
  double residual = 0;
  double orthogonality = 0;
  double unit_norm = 0;
  double total = 0;
};

// ||x - warp(pca_reconstruct(z_cont), affine(z_def))||^2 + penalties.
// With use_unit_norm off the unit term is reported but not totalled.
DpcaTerms dpca_loss(const Tensor& x, std::span<const double> z_def,
                    std::span<const double> z_cont, const PcaBasis& b,
                    const DeformationSpec& spec, bool use_unit_norm = true);

// ---- graph-level builders ---------------------------------------------------

// z_def: [N, dims] -> theta [N,2,3].
ad::Var deform_theta_g(ad::Graph& g, ad::Var z_def, const DeformationSpec& spec);

ad::Var pca_reconstruct_g(ad::Graph& g, ad::Var z_cont, ad::Var basis, long h, long w);
ad::Var orthogonality_penalty_g(ad::Graph& g, ad::Var basis);
ad::Var unit_norm_penalty_g(ad::Graph& g, ad::Var basis);

struct DpcaVars {
  ad::Var sub_recon;  // [N,1,H,W] secondary-decoder output (warped if geometry on)
  ad::Var residual;   // scalar, summed over batch
  ad::Var orth;       // scalar
  ad::Var unit;       // scalar (valid only when unit norm enabled)
  ad::Var total;      // residual + batch * (orth [+ unit])
};

// x: [N,1,H,W]; z: [N,d_z]; slices z into (z_def, z_cont) at d_def.
// geometry_on=false reduces the secondary decoder to plain PCA on the
// content block. Penalties are counted once per sample in `total`.
DpcaVars dpca_loss_g(ad::Graph& g, ad::Var x, ad::Var z, ad::Var basis, long d_def,
                     const DeformationSpec& spec, bool geometry_on, bool unit_norm_on);

}  // namespace gvae
