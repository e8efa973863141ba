#include "gvae/vae.hpp"

#include <cmath>
#include <stdexcept>

namespace gvae {

int VaeConfig::resolved_depth() const {
  if (depth > 0) return depth;
  long m = std::min(image_h, image_w);
  if (m >= 32) return 4;
  if (m >= 16) return 3;
  return 2;
}

void VaeConfig::validate() const {
  if (d_z < 1) throw std::invalid_argument("VaeConfig.d_z: must be >= 1");
  if (d_z_def < 0 || d_z_def > d_z)
    throw std::invalid_argument("VaeConfig.d_z_def: must be in [0, d_z]");
  if (kl_weight < 0.0) throw std::invalid_argument("VaeConfig.kl_weight: must be >= 0");
  if (image_h < 8 || image_w < 8)
    throw std::invalid_argument("VaeConfig.image_h/image_w: must be >= 8");
  if (width < 1) throw std::invalid_argument("VaeConfig.width: must be >= 1");
  long m = std::min(image_h, image_w);
  if (m >> resolved_depth() < 1)
    throw std::invalid_argument("VaeConfig.depth: too deep for the image size");
}

void LatentCode::validate() const {
  long d = values.rank() == 2 ? values.dim(1) : values.numel();
  if (d_def < 0 || d_def > d)
    throw std::invalid_argument("LatentCode.d_def: partition outside [0, d_z]");
}

VaeModel VaeModel::build(const VaeConfig& cfg, RngStream& init_rng) {
  cfg.validate();
  VaeModel m;
  m.cfg = cfg;
  int depth = cfg.resolved_depth();
  long w = cfg.width;
  std::vector<long> ch = {1};
  for (int i = 0; i < depth; ++i) {
    long mult = i < depth / 2 ? (i == 0 ? 1 : 2) : (i + 1 == depth ? 4 : 2);
    ch.push_back(w * mult);
  }
  long h = cfg.image_h, wd = cfg.image_w;
  for (int i = 0; i < depth; ++i) {
    m.enc_convs.emplace_back(ch[i], ch[i + 1], 4, 2, 1);
    h /= 2;
    wd /= 2;
  }
  m.mid_ch = ch.back();
  m.mid_h = h;
  m.mid_w = wd;
  long flat = m.mid_ch * m.mid_h * m.mid_w;
  m.enc_fc = nn::Linear(flat, 2 * cfg.d_z);
  m.dec_fc = nn::Linear(cfg.d_z, flat);
  for (int i = depth; i > 0; --i) m.dec_convs.emplace_back(ch[i], ch[i - 1], 4, 2, 1);

  for (auto& c : m.enc_convs) c.init(init_rng);
  m.enc_fc.init(init_rng);
  m.dec_fc.init(init_rng);
  for (auto& c : m.dec_convs) c.init(init_rng);
  return m;
}

std::vector<nn::NamedParam> VaeModel::named_params() {
  std::vector<nn::NamedParam> out;
  for (size_t i = 0; i < enc_convs.size(); ++i)
    enc_convs[i].collect("enc.conv" + std::to_string(i), out);
  enc_fc.collect("enc.fc", out);
  dec_fc.collect("dec.fc", out);
  for (size_t i = 0; i < dec_convs.size(); ++i)
    dec_convs[i].collect("dec.conv" + std::to_string(i), out);
  return out;
}

VaeModel::Vars VaeModel::bind(ad::Graph& g) const {
  Vars v;
  auto reg = [&](const Tensor& t) {
    ad::Var var = g.leaf(t);
    v.ordered.push_back(var);
    return var;
  };
  // Registration order must match named_params(); sequence the calls
  // explicitly (argument evaluation order is unspecified).
  auto reg_pair = [&](const Tensor& w, const Tensor& b) {
    ad::Var wv = reg(w);
    ad::Var bv = reg(b);
    return std::make_pair(wv, bv);
  };
  for (const auto& c : enc_convs) v.enc.push_back(reg_pair(c.w, c.b));
  v.enc_fc = reg_pair(enc_fc.w, enc_fc.b);
  v.dec_fc = reg_pair(dec_fc.w, dec_fc.b);
  for (const auto& c : dec_convs) v.dec.push_back(reg_pair(c.w, c.b));
  return v;
}

VaeModel::PosteriorVars VaeModel::encode(ad::Graph& g, const Vars& v, ad::Var x) const {
  const Tensor& xv = g.val(x);
  if (xv.rank() != 4 || xv.dim(1) != 1 || xv.dim(2) != cfg.image_h || xv.dim(3) != cfg.image_w)
    throw std::invalid_argument("encode: input shape " + xv.shape_str() +
                                " does not match configured image size");
  ad::Var h = x;
  for (size_t i = 0; i < enc_convs.size(); ++i) {
    h = g.conv2d(h, v.enc[i].first, v.enc[i].second, enc_convs[i].stride, enc_convs[i].pad);
    h = g.silu(h);
  }
  long n = xv.dim(0);
  h = g.reshape(h, {n, mid_ch * mid_h * mid_w});
  ad::Var both = g.linear(h, v.enc_fc.first, v.enc_fc.second);
  ad::Var mean = g.slice_cols(both, 0, cfg.d_z);
  ad::Var log_var = g.clamp(g.slice_cols(both, cfg.d_z, 2 * cfg.d_z), -10.0, 10.0);
  return {mean, log_var};
}

ad::Var VaeModel::decode(ad::Graph& g, const Vars& v, ad::Var z) const {
  const Tensor& zv = g.val(z);
  if (zv.rank() != 2 || zv.dim(1) != cfg.d_z)
    throw std::invalid_argument("decode: latent shape " + zv.shape_str() +
                                " does not match d_z=" + std::to_string(cfg.d_z));
  long n = zv.dim(0);
  ad::Var h = g.silu(g.linear(z, v.dec_fc.first, v.dec_fc.second));
  h = g.reshape(h, {n, mid_ch, mid_h, mid_w});
  for (size_t i = 0; i < dec_convs.size(); ++i) {
    h = g.conv2d_transpose(h, v.dec[i].first, v.dec[i].second, dec_convs[i].stride,
                           dec_convs[i].pad);
    h = (i + 1 == dec_convs.size()) ? g.sigmoid(h) : g.silu(h);
  }
  return h;
}

// ---- value-level wrappers -------------------------------------------------

GaussianPosterior encode(const VaeModel& model, const Tensor& x) {
  ad::Graph g;
  ad::Var xv = g.constant(x);
  VaeModel::Vars v = model.bind(g);
  // Evaluation only: rebind as constants would skip grads, but leaves are
  // cheap and backward is never called here.
  auto q = model.encode(g, v, xv);
  return {g.val(q.mean), g.val(q.log_var)};
}

Tensor reparameterize(const GaussianPosterior& q, const Tensor& noise) {
  if (!q.mean.same_shape(q.log_variance))
    throw std::invalid_argument("reparameterize: mean/log_variance shape mismatch");
  if (!noise.same_shape(q.mean))
    throw std::invalid_argument("reparameterize: noise length does not match d_z");
  Tensor out(q.mean.shape());
  for (long i = 0; i < out.numel(); ++i)
    out[i] = q.mean[i] + std::exp(0.5 * q.log_variance[i]) * noise[i];
  return out;
}

Tensor decode(const VaeModel& model, const Tensor& z) {
  ad::Graph g;
  ad::Var zv = g.constant(z.rank() == 1 ? z.reshaped({1, z.numel()}) : z);
  VaeModel::Vars v = model.bind(g);
  return g.val(model.decode(g, v, zv));
}

double reconstruction_loss(const Tensor& x, const Tensor& x_rec) {
  if (!x.same_shape(x_rec))
    throw std::invalid_argument("reconstruction_loss: shape mismatch " + x.shape_str() +
                                " vs " + x_rec.shape_str());
  double s = 0.0;
  for (long i = 0; i < x.numel(); ++i) {
    double d = x[i] - x_rec[i];
    s += d * d;
  }
  return s;
}

double gaussian_kl(const GaussianPosterior& q) {
  if (!q.mean.same_shape(q.log_variance))
    throw std::invalid_argument("gaussian_kl: mean/log_variance shape mismatch");
  double s = 0.0;
  for (long i = 0; i < q.mean.numel(); ++i) {
    double m = q.mean[i], lv = q.log_variance[i];
    s += m * m + std::exp(lv) - 1.0 - lv;
  }
  return 0.5 * s;
}

double elbo(const Tensor& x, const GaussianPosterior& q, const Tensor& x_rec,
            const VaeConfig& cfg) {
  return -reconstruction_loss(x, x_rec) - cfg.kl_weight * gaussian_kl(q);
}

// ---- graph builders -------------------------------------------------------

ad::Var reparameterize_g(ad::Graph& g, ad::Var mean, ad::Var log_var, ad::Var noise) {
  if (!g.val(noise).same_shape(g.val(mean)))
    throw std::invalid_argument("reparameterize: noise length does not match d_z");
  ad::Var std = g.exp_(g.scale(log_var, 0.5));
  return g.add(mean, g.mul(std, noise));
}

ad::Var gaussian_kl_g(ad::Graph& g, ad::Var mean, ad::Var log_var) {
  ad::Var t = g.add(g.sum_sq(mean), g.sub(g.sum(g.exp_(log_var)), g.sum(log_var)));
  return g.scale(g.add_scalar(t, -static_cast<double>(g.val(mean).numel())), 0.5);
}

ad::Var reconstruction_loss_g(ad::Graph& g, ad::Var x, ad::Var x_rec) {
  return g.sum_sq(g.sub(x, x_rec));
}

ElboVars elbo_g(ad::Graph& g, ad::Var x, ad::Var mean, ad::Var log_var, ad::Var x_rec,
                double kl_weight) {
  ElboVars e;
  e.recon_loss = reconstruction_loss_g(g, x, x_rec);
  e.kl = gaussian_kl_g(g, mean, log_var);
  e.elbo = g.sub(g.scale(e.recon_loss, -1.0), g.scale(e.kl, kl_weight));
  return e;
}

}  // namespace gvae
