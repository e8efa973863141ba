#include "gvae/adversarial.hpp"

#include <cmath>
#include <stdexcept>

namespace gvae {

namespace {

double stable_softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

void AttributeLabel::validate() const {
  if (y != -1 && y != 1) throw std::invalid_argument("AttributeLabel.y: must be -1 or +1");
  if (t < 0) throw std::invalid_argument("AttributeLabel.t: must be >= 0");
}

double bce_with_logit(double logit, int y) {
  return stable_softplus(-static_cast<double>(y) * logit);
}

double excitation_loss(double z_t, const AttributeLabel& label, const ExcitationClassifier& w) {
  label.validate();
  return bce_with_logit(w.logit(z_t), label.y);
}

InhibitionClassifier::Vars InhibitionClassifier::bind(ad::Graph& g, bool trainable) const {
  Vars v;
  auto reg = [&](const Tensor& t) {
    ad::Var var = trainable ? g.leaf(t) : g.constant(t);
    v.ordered.push_back(var);
    return var;
  };
  // sequenced so `ordered` matches inhibition_params() order
  auto reg_pair = [&](const nn::Linear& l) {
    ad::Var wv = reg(l.w);
    ad::Var bv = reg(l.b);
    return std::make_pair(wv, bv);
  };
  v.l1 = reg_pair(l1);
  v.l2 = reg_pair(l2);
  v.l3 = reg_pair(l3);
  return v;
}

ad::Var InhibitionClassifier::logits(ad::Graph& g, const Vars& v, ad::Var z_rst) const {
  if (g.val(z_rst).dim(1) != input_width())
    throw std::invalid_argument("inhibition_loss: z_rst width " +
                                std::to_string(g.val(z_rst).dim(1)) + " does not match " +
                                std::to_string(input_width()));
  ad::Var h = g.relu(g.linear(z_rst, v.l1.first, v.l1.second));
  h = g.relu(g.linear(h, v.l2.first, v.l2.second));
  return g.linear(h, v.l3.first, v.l3.second);
}

double InhibitionClassifier::logit(std::span<const double> z_rst) const {
  ad::Graph g;
  Tensor z({1, static_cast<long>(z_rst.size())});
  for (size_t i = 0; i < z_rst.size(); ++i) z[static_cast<long>(i)] = z_rst[i];
  Vars v = bind(g, false);
  return g.val(logits(g, v, g.constant(z)))[0];
}

double inhibition_loss(std::span<const double> z_rst, const AttributeLabel& label,
                       const InhibitionClassifier& c) {
  label.validate();
  if (static_cast<long>(z_rst.size()) != c.input_width())
    throw std::invalid_argument("inhibition_loss: z_rst width mismatch");
  return bce_with_logit(c.logit(z_rst), label.y);
}

ad::Var bce_sum_g(ad::Graph& g, ad::Var logits, const std::vector<int>& ys) {
  const Tensor& lv = g.val(logits);
  if (lv.numel() != static_cast<long>(ys.size()))
    throw std::invalid_argument("bce_sum: label count mismatch");
  Tensor neg_y(lv.shape());
  for (size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] != -1 && ys[i] != 1) throw std::invalid_argument("bce_sum: labels must be -1/+1");
    neg_y[static_cast<long>(i)] = -static_cast<double>(ys[i]);
  }
  return g.sum(g.softplus(g.mul(logits, g.constant(neg_y))));
}

SupervisedHead SupervisedHead::build(long num_attributes, long d_z, long hidden, RngStream& rng) {
  if (num_attributes < 1) throw std::invalid_argument("SupervisedHead: T must be >= 1");
  if (num_attributes >= d_z)
    throw std::invalid_argument("SupervisedHead: T must leave room for z_rst");
  SupervisedHead h;
  h.num_attributes = num_attributes;
  h.d_z = d_z;
  for (long t = 0; t < num_attributes; ++t) {
    ExcitationClassifier e;
    e.init(rng);
    h.excitation.push_back(e);
    InhibitionClassifier c(d_z - num_attributes, hidden);
    c.init(rng);
    h.inhibition.push_back(std::move(c));
  }
  return h;
}

std::vector<nn::NamedParam> SupervisedHead::excitation_params() {
  std::vector<nn::NamedParam> out;
  for (size_t t = 0; t < excitation.size(); ++t) {
    out.push_back({"head.exc" + std::to_string(t) + ".w", &excitation[t].w});
    out.push_back({"head.exc" + std::to_string(t) + ".b", &excitation[t].b});
  }
  return out;
}

std::vector<nn::NamedParam> SupervisedHead::inhibition_params(long t) {
  std::vector<nn::NamedParam> out;
  std::string p = "head.inh" + std::to_string(t);
  inhibition[static_cast<size_t>(t)].l1.collect(p + ".l1", out);
  inhibition[static_cast<size_t>(t)].l2.collect(p + ".l2", out);
  inhibition[static_cast<size_t>(t)].l3.collect(p + ".l3", out);
  return out;
}

std::vector<nn::NamedParam> SupervisedHead::all_params() {
  std::vector<nn::NamedParam> out = excitation_params();
  for (long t = 0; t < num_attributes; ++t) {
    auto p = inhibition_params(t);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

AdversarialStepStats adversarial_step(VaeModel& vae, SupervisedHead& head, const Tensor& x,
                                      const std::vector<std::vector<int>>& labels,
                                      const Tensor& noise, const AdversarialSchedule& sched,
                                      nn::Adam& main_opt, std::vector<nn::Adam>& c_opts) {
  long t_count = head.num_attributes;
  if (static_cast<long>(labels.size()) != t_count)
    throw std::invalid_argument("adversarial_step: labels per attribute expected");
  if (t_count >= vae.cfg.d_z)
    throw std::invalid_argument("adversarial_step: attribute dims overlap the content block");
  long n = x.dim(0);
  AdversarialStepStats stats;
  stats.excitation_loss.assign(static_cast<size_t>(t_count), 0.0);
  stats.inhibition_loss.assign(static_cast<size_t>(t_count), 0.0);
  stats.excitation_acc.assign(static_cast<size_t>(t_count), 0.0);
  stats.inhibition_acc.assign(static_cast<size_t>(t_count), 0.0);

  // (i) one step per C_t on the frozen encoder's samples.
  if (sched.inhibition_on) {
    GaussianPosterior q = encode(vae, x);
    Tensor z = reparameterize(q, noise);
    Tensor z_rst({n, head.rest_width()});
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < head.rest_width(); ++j)
        z_rst.at(i, j) = z.at(i, t_count + j);
    for (long t = 0; t < t_count; ++t) {
      ad::Graph g;
      auto cv = head.inhibition[static_cast<size_t>(t)].bind(g, true);
      ad::Var logits =
          head.inhibition[static_cast<size_t>(t)].logits(g, cv, g.constant(z_rst));
      ad::Var loss = g.scale(bce_sum_g(g, logits, labels[static_cast<size_t>(t)]),
                             1.0 / static_cast<double>(n));
      g.backward(loss);
      std::vector<const Tensor*> grads;
      for (ad::Var v : cv.ordered) grads.push_back(&g.grad(v));
      c_opts[static_cast<size_t>(t)].step(grads);
    }
  }

  // (ii) encoder/decoder/w_t step on the full objective.
  bool use_exc = sched.excitation_weight != 0.0;
  bool use_inh = sched.inhibition_on && sched.inhibition_lambda != 0.0;
  ad::Graph g;
  ad::Var xv = g.constant(x);
  ad::Var nv = g.constant(noise);
  VaeModel::Vars vv = vae.bind(g);
  auto q = vae.encode(g, vv, xv);
  ad::Var z = reparameterize_g(g, q.mean, q.log_var, nv);
  ad::Var x_rec = vae.decode(g, vv, z);
  ElboVars e = elbo_g(g, xv, q.mean, q.log_var, x_rec, vae.cfg.kl_weight);
  ad::Var loss = g.scale(e.elbo, -1.0);

  std::vector<ad::Var> exc_vars;  // aligned with excitation_params()
  if (use_exc) {
    for (long t = 0; t < t_count; ++t) {
      ad::Var wt = g.leaf(head.excitation[static_cast<size_t>(t)].w);
      ad::Var bt = g.leaf(head.excitation[static_cast<size_t>(t)].b);
      exc_vars.push_back(wt);
      exc_vars.push_back(bt);
      ad::Var z_t = g.slice_cols(z, t, t + 1);
      ad::Var logits = g.linear(z_t, wt, bt);
      ad::Var lt = bce_sum_g(g, logits, labels[static_cast<size_t>(t)]);
      stats.excitation_loss[static_cast<size_t>(t)] = g.val(lt)[0] / static_cast<double>(n);
      loss = g.add(loss, g.scale(lt, sched.excitation_weight));
      const Tensor& lg = g.val(logits);
      double acc = 0;
      for (long i = 0; i < n; ++i)
        acc += (lg[i] > 0) == (labels[static_cast<size_t>(t)][static_cast<size_t>(i)] > 0);
      stats.excitation_acc[static_cast<size_t>(t)] = acc / static_cast<double>(n);
    }
  }
  if (use_inh) {
    // Gradient reversal: C_t keeps minimizing its loss; the encoder receives
    // the negated gradient and so maximizes it.
    ad::Var z_rst = g.scale_grad(g.slice_cols(z, t_count, vae.cfg.d_z), -1.0);
    for (long t = 0; t < t_count; ++t) {
      auto cv = head.inhibition[static_cast<size_t>(t)].bind(g, false);
      ad::Var logits = head.inhibition[static_cast<size_t>(t)].logits(g, cv, z_rst);
      ad::Var lt = bce_sum_g(g, logits, labels[static_cast<size_t>(t)]);
      stats.inhibition_loss[static_cast<size_t>(t)] = g.val(lt)[0] / static_cast<double>(n);
      loss = g.add(loss, g.scale(lt, sched.inhibition_lambda));
      const Tensor& lg = g.val(logits);
      double acc = 0;
      for (long i = 0; i < n; ++i)
        acc += (lg[i] > 0) == (labels[static_cast<size_t>(t)][static_cast<size_t>(i)] > 0);
      stats.inhibition_acc[static_cast<size_t>(t)] = acc / static_cast<double>(n);
    }
  }

  // Optimize the batch mean; the summed objective only rescales gradients.
  ad::Var mean_loss = g.scale(loss, 1.0 / static_cast<double>(n));
  g.backward(mean_loss);
  // main_opt is attached over vae.named_params() followed by
  // head.excitation_params(); keep that alignment even when the excitation
  // branch is disabled.
  std::vector<Tensor> zero_store;
  std::vector<const Tensor*> grads;
  for (ad::Var v : vv.ordered) grads.push_back(&g.grad(v));
  if (use_exc) {
    for (ad::Var v : exc_vars) grads.push_back(&g.grad(v));
  } else {
    zero_store.reserve(static_cast<size_t>(2 * t_count));
    for (long t = 0; t < t_count; ++t) {
      zero_store.emplace_back(head.excitation[static_cast<size_t>(t)].w.shape());
      grads.push_back(&zero_store.back());
      zero_store.emplace_back(head.excitation[static_cast<size_t>(t)].b.shape());
      grads.push_back(&zero_store.back());
    }
  }
  main_opt.step(grads);

  stats.total_loss = g.val(loss)[0] / static_cast<double>(n);
  stats.neg_elbo = -g.val(e.elbo)[0] / static_cast<double>(n);
  stats.recon = g.val(e.recon_loss)[0] / static_cast<double>(n);
  stats.kl = g.val(e.kl)[0] / static_cast<double>(n);
  return stats;
}

}  // namespace gvae
