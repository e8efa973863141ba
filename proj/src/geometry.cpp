#include "gvae/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/QR>

#include <array>
#include <cmath>
#include <stdexcept>

namespace gvae {

void AffineParams::validate() const {
  for (double v : theta)
    if (!std::isfinite(v)) throw std::invalid_argument("AffineParams: non-finite entry");
  if (std::abs(det2x2()) <= 1e-6)
    throw std::invalid_argument("AffineParams: degenerate 2x2 block");
}

void DeformationSpec::validate() const {
  if (entries.empty()) throw std::invalid_argument("DeformationSpec: no entries");
  for (const Entry& e : entries) {
    if (!(e.amplitude > 0.0) || !std::isfinite(e.amplitude))
      throw std::invalid_argument("DeformationSpec: amplitude must be positive and finite");
  }
}

const char* DeformationSpec::transform_name(Transform t) {
  switch (t) {
    case Transform::Rotation: return "rotation";
    case Transform::Scale: return "scale";
    case Transform::TransX: return "tx";
    case Transform::TransY: return "ty";
    case Transform::Shear: return "shear";
  }
  return "?";
}

DeformationSpec DeformationSpec::mnist_default() {
  DeformationSpec s;
  s.entries = {{Transform::Rotation, M_PI / 4.0}, {Transform::Scale, 0.35}};
  return s;
}

DeformationSpec DeformationSpec::shapes_default() {
  DeformationSpec s;
  s.entries = {{Transform::TransX, 0.25},
               {Transform::TransY, 0.25},
               {Transform::Scale, 0.35},
               {Transform::Rotation, M_PI / 4.0}};
  return s;
}

DeformationSpec DeformationSpec::round_robin(long d) {
  static const std::array<DeformationSpec::Entry, 5> cycle = {{
      {Transform::Rotation, M_PI / 4.0},
      {Transform::Scale, 0.35},
      {Transform::TransX, 0.25},
      {Transform::TransY, 0.25},
      {Transform::Shear, 0.2},
  }};
  DeformationSpec s;
  for (long i = 0; i < d; ++i) s.entries.push_back(cycle[static_cast<size_t>(i % 5)]);
  return s;
}

DeformationSpec DeformationSpec::preset_for(const std::string& name, long d) {
  if (name == "mnist") return mnist_default();
  if (name == "shapes") return shapes_default();
  if (name == "auto" || name.empty()) {
    if (d == 2) return mnist_default();
    if (d == 4) return shapes_default();
    return round_robin(d);
  }
  throw std::invalid_argument("DeformationSpec: unknown preset '" + name + "'");
}

void PcaBasis::validate() const {
  if (basis.rank() != 2) throw std::invalid_argument("PcaBasis: rank-2 matrix expected");
  if (k() > d()) throw std::invalid_argument("PcaBasis: K must not exceed D");
  for (long i = 0; i < basis.numel(); ++i)
    if (!std::isfinite(basis[i])) throw std::invalid_argument("PcaBasis: non-finite entry");
}

PcaBasis PcaBasis::orthonormal(long k, long d, RngStream& rng) {
  if (k > d) throw std::invalid_argument("PcaBasis: K must not exceed D");
  Eigen::MatrixXd gauss(d, k);
  for (long j = 0; j < k; ++j)
    for (long i = 0; i < d; ++i) gauss(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
  PcaBasis b;
  b.basis = Tensor({k, d});
  for (long r = 0; r < k; ++r)
    for (long c = 0; c < d; ++c) b.basis.at(r, c) = q(c, r);
  return b;
}

// ---------------------------------------------------------------------------
// latent -> affine
// ---------------------------------------------------------------------------

namespace {

struct DeformValues {
  double rot = 0, log_scale = 0, tx = 0, ty = 0, shear = 0;
};

struct GroupCounts {
  std::array<long, 5> n{0, 0, 0, 0, 0};
};

GroupCounts count_groups(const DeformationSpec& spec) {
  GroupCounts c;
  for (const auto& e : spec.entries) ++c.n[static_cast<size_t>(e.param)];
  return c;
}

DeformValues eval_values(std::span<const double> z, const DeformationSpec& spec,
                         const GroupCounts& counts) {
  DeformValues v;
  std::array<double, 5> acc{0, 0, 0, 0, 0};
  for (size_t i = 0; i < spec.entries.size(); ++i) {
    const auto& e = spec.entries[i];
    acc[static_cast<size_t>(e.param)] += e.amplitude * std::tanh(z[i]);
  }
  auto mean = [&](DeformationSpec::Transform t) {
    size_t i = static_cast<size_t>(t);
    return counts.n[i] > 0 ? acc[i] / static_cast<double>(counts.n[i]) : 0.0;
  };
  v.rot = mean(DeformationSpec::Transform::Rotation);
  v.log_scale = mean(DeformationSpec::Transform::Scale);
  v.tx = mean(DeformationSpec::Transform::TransX);
  v.ty = mean(DeformationSpec::Transform::TransY);
  v.shear = mean(DeformationSpec::Transform::Shear);
  return v;
}

// theta = [ e^s*c, e^s*(c*h - s), tx ; e^s*s, e^s*(s*h + c), ty ]
// (rotation * isotropic scale * shear, plus translation column).
void theta_from_values(const DeformValues& v, double* t) {
  double es = std::exp(v.log_scale);
  double c = std::cos(v.rot), s = std::sin(v.rot);
  t[0] = es * c;
  t[1] = es * (c * v.shear - s);
  t[2] = v.tx;
  t[3] = es * s;
  t[4] = es * (s * v.shear + c);
  t[5] = v.ty;
}

// d theta / d (rot, log_scale, shear); translation derivatives are trivial.
void theta_jacobian(const DeformValues& v, double dt_rot[6], double dt_sc[6],
                    double dt_sh[6]) {
  double es = std::exp(v.log_scale);
  double c = std::cos(v.rot), s = std::sin(v.rot);
  dt_rot[0] = es * -s;
  dt_rot[1] = es * (-s * v.shear - c);
  dt_rot[2] = 0;
  dt_rot[3] = es * c;
  dt_rot[4] = es * (c * v.shear - s);
  dt_rot[5] = 0;
  dt_sc[0] = es * c;
  dt_sc[1] = es * (c * v.shear - s);
  dt_sc[2] = 0;
  dt_sc[3] = es * s;
  dt_sc[4] = es * (s * v.shear + c);
  dt_sc[5] = 0;
  dt_sh[0] = 0;
  dt_sh[1] = es * c;
  dt_sh[2] = 0;
  dt_sh[3] = 0;
  dt_sh[4] = es * s;
  dt_sh[5] = 0;
}

}  // namespace

AffineParams affine_from_latent(std::span<const double> z_def, const DeformationSpec& spec) {
  spec.validate();
  if (static_cast<long>(z_def.size()) != spec.dims())
    throw std::invalid_argument("affine_from_latent: z_def length does not match spec");
  GroupCounts counts = count_groups(spec);
  DeformValues v = eval_values(z_def, spec, counts);
  AffineParams a;
  theta_from_values(v, a.theta);
  a.validate();
  return a;
}

ad::Var deform_theta_g(ad::Graph& g, ad::Var z_def, const DeformationSpec& spec) {
  spec.validate();
  const Tensor& zv = g.val(z_def);
  if (zv.rank() != 2 || zv.dim(1) != spec.dims())
    throw std::invalid_argument("deform_theta: z_def shape does not match spec");
  long n = zv.dim(0);
  long dd = spec.dims();
  GroupCounts counts = count_groups(spec);
  Tensor out({n, 2, 3});
  for (long i = 0; i < n; ++i) {
    DeformValues v = eval_values({zv.data() + i * dd, static_cast<size_t>(dd)}, spec, counts);
    theta_from_values(v, out.data() + i * 6);
  }
  DeformationSpec spec_copy = spec;
  return g.make_node(
      std::move(out), {z_def},
      [z_def, spec_copy, counts, n, dd](ad::Graph& g, ad::Var self) {
        if (!g.wants_grad(z_def)) return;
        const Tensor& go = g.grad(self);
        const Tensor& zv = g.val(z_def);
        Tensor& gz = g.grad_buffer(z_def);
        for (long i = 0; i < n; ++i) {
          const double* zrow = zv.data() + i * dd;
          const double* grow = go.data() + i * 6;
          DeformValues v =
              eval_values({zrow, static_cast<size_t>(dd)}, spec_copy, counts);
          double dt_rot[6], dt_sc[6], dt_sh[6];
          theta_jacobian(v, dt_rot, dt_sc, dt_sh);
          // upstream gradient contracted against d theta / d value_p
          double g_rot = 0, g_sc = 0, g_sh = 0;
          for (int j = 0; j < 6; ++j) {
            g_rot += grow[j] * dt_rot[j];
            g_sc += grow[j] * dt_sc[j];
            g_sh += grow[j] * dt_sh[j];
          }
          double g_tx = grow[2], g_ty = grow[5];
          for (long e = 0; e < dd; ++e) {
            const auto& ent = spec_copy.entries[static_cast<size_t>(e)];
            double gp;
            switch (ent.param) {
              case DeformationSpec::Transform::Rotation: gp = g_rot; break;
              case DeformationSpec::Transform::Scale: gp = g_sc; break;
              case DeformationSpec::Transform::TransX: gp = g_tx; break;
              case DeformationSpec::Transform::TransY: gp = g_ty; break;
              default: gp = g_sh; break;
            }
            double th = std::tanh(zrow[e]);
            double dval_dz = ent.amplitude * (1.0 - th * th) /
                             static_cast<double>(counts.n[static_cast<size_t>(ent.param)]);
            gz[i * dd + e] += gp * dval_dz;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// sampling grid + bilinear (value wrappers around the graph kernels)
// ---------------------------------------------------------------------------

Tensor make_sampling_grid(const AffineParams& a, long h, long w) {
  a.validate();
  ad::Graph g;
  Tensor theta({1, 2, 3});
  for (int i = 0; i < 6; ++i) theta[i] = a.theta[i];
  ad::Var grid = g.affine_grid(g.constant(theta), h, w);
  return g.val(grid).reshaped({h, w, 2});
}

Tensor bilinear_sample(const Tensor& img, const Tensor& grid) {
  if (img.rank() != 2) throw std::invalid_argument("bilinear_sample: [H,W] image expected");
  if (grid.rank() != 3 || grid.dim(2) != 2)
    throw std::invalid_argument("bilinear_sample: [H,W,2] grid expected");
  long h = img.dim(0), w = img.dim(1);
  ad::Graph g;
  ad::Var out = g.grid_sample(g.constant(img.reshaped({1, 1, h, w})),
                              g.constant(grid.reshaped({1, grid.dim(0), grid.dim(1), 2})));
  return g.val(out).reshaped({grid.dim(0), grid.dim(1)});
}

// ---------------------------------------------------------------------------
// PCA reconstruction + penalties
// ---------------------------------------------------------------------------

Tensor pca_reconstruct(std::span<const double> z_cont, const PcaBasis& b, long h, long w) {
  if (static_cast<long>(z_cont.size()) != b.k())
    throw std::invalid_argument("pca_reconstruct: z_cont length does not match K");
  if (h * w != b.d()) throw std::invalid_argument("pca_reconstruct: D != H*W");
  Tensor out({h, w});
  for (long k = 0; k < b.k(); ++k) {
    const double* row = b.basis.data() + k * b.d();
    double c = z_cont[static_cast<size_t>(k)];
    for (long i = 0; i < h * w; ++i) out[i] += c * row[i];
  }
  return out;
}

double orthogonality_penalty(const PcaBasis& b) {
  b.validate();
  double s = 0.0;
  for (long k = 0; k < b.k(); ++k) {
    for (long j = 0; j < b.k(); ++j) {
      if (j == k) continue;
      double dot = 0.0;
      const double* rk = b.basis.data() + k * b.d();
      const double* rj = b.basis.data() + j * b.d();
      for (long i = 0; i < b.d(); ++i) dot += rk[i] * rj[i];
      s += dot * dot;
    }
  }
  return s;
}

double unit_norm_penalty(const PcaBasis& b) {
  b.validate();
  double s = 0.0;
  for (long k = 0; k < b.k(); ++k) {
    const double* rk = b.basis.data() + k * b.d();
    double dot = 0.0;
    for (long i = 0; i < b.d(); ++i) dot += rk[i] * rk[i];
    s += (dot - 1.0) * (dot - 1.0);
  }
  return s;
}

ad::Var pca_reconstruct_g(ad::Graph& g, ad::Var z_cont, ad::Var basis, long h, long w) {
  const Tensor& bv = g.val(basis);
  if (g.val(z_cont).dim(1) != bv.dim(0))
    throw std::invalid_argument("pca_reconstruct: z_cont length does not match K");
  if (bv.dim(1) != h * w) throw std::invalid_argument("pca_reconstruct: D != H*W");
  long n = g.val(z_cont).dim(0);
  return g.reshape(g.matmul(z_cont, basis), {n, 1, h, w});
}

ad::Var orthogonality_penalty_g(ad::Graph& g, ad::Var basis) {
  ad::Var gram = g.matmul_nt(basis, basis);
  return g.sub(g.sum_sq(gram), g.sum_sq(g.diag(gram)));
}

ad::Var unit_norm_penalty_g(ad::Graph& g, ad::Var basis) {
  ad::Var gram = g.matmul_nt(basis, basis);
  return g.sum_sq(g.add_scalar(g.diag(gram), -1.0));
}

DpcaVars dpca_loss_g(ad::Graph& g, ad::Var x, ad::Var z, ad::Var basis, long d_def,
                     const DeformationSpec& spec, bool geometry_on, bool unit_norm_on) {
  const Tensor& xv = g.val(x);
  long n = xv.dim(0), h = xv.dim(2), w = xv.dim(3);
  long d_z = g.val(z).dim(1);
  DpcaVars out;
  long content_from = geometry_on ? d_def : 0;
  ad::Var z_cont = g.slice_cols(z, content_from, d_z);
  ad::Var recon = pca_reconstruct_g(g, z_cont, basis, h, w);
  if (geometry_on && d_def > 0) {
    ad::Var z_def = g.slice_cols(z, 0, d_def);
    ad::Var theta = deform_theta_g(g, z_def, spec);
    ad::Var grid = g.affine_grid(theta, h, w);
    out.sub_recon = g.grid_sample(recon, grid);
  } else {
    out.sub_recon = recon;
  }
  out.residual = g.sum_sq(g.sub(x, out.sub_recon));
  out.orth = orthogonality_penalty_g(g, basis);
  ad::Var pen = out.orth;
  if (unit_norm_on) {
    out.unit = unit_norm_penalty_g(g, basis);
    pen = g.add(pen, out.unit);
  }
  // Penalties count once per sample (batch additivity of the total).
  out.total = g.add(out.residual, g.scale(pen, static_cast<double>(n)));
  return out;
}

DpcaTerms dpca_loss(const Tensor& x, std::span<const double> z_def,
                    std::span<const double> z_cont, const PcaBasis& b,
                    const DeformationSpec& spec, bool use_unit_norm) {
  if (x.rank() != 2) throw std::invalid_argument("dpca_loss: [H,W] image expected");
  long h = x.dim(0), w = x.dim(1);
  long dd = static_cast<long>(z_def.size());
  long dc = static_cast<long>(z_cont.size());
  ad::Graph g;
  ad::Var xv = g.constant(x.reshaped({1, 1, h, w}));
  Tensor zt({1, dd + dc});
  for (long i = 0; i < dd; ++i) zt[i] = z_def[static_cast<size_t>(i)];
  for (long i = 0; i < dc; ++i) zt[dd + i] = z_cont[static_cast<size_t>(i)];
  ad::Var zv = g.constant(zt);
  ad::Var bv = g.constant(b.basis);
  DpcaVars v = dpca_loss_g(g, xv, zv, bv, dd, spec, dd > 0, use_unit_norm);
  DpcaTerms t;
  t.residual = g.val(v.residual)[0];
  t.orthogonality = g.val(v.orth)[0];
  t.unit_norm = use_unit_norm ? g.val(v.unit)[0] : unit_norm_penalty(b);
  t.total = g.val(v.total)[0];
  return t;
}

}  // namespace gvae
