#pragma once

#include <span>
#include <string>
#include <vector>

#include "gvae/autodiff.hpp"
#include "gvae/nn.hpp"
#include "gvae/vae.hpp"

namespace gvae {

struct AttributeLabel {
  int t = 0;   // attribute index
  int y = 1;   // value in {-1, +1}

  void validate() const;
};

// Scalar logistic unit on the attribute's latent dim: logit = w * z_t + b.
struct ExcitationClassifier {
  Tensor w{std::vector<long>{1, 1}};
  Tensor b{std::vector<long>{1}};

  void init(RngStream& rng) {
    nn::init_uniform(w, 1, rng);
    nn::init_uniform(b, 1, rng);
  }
  double logit(double z_t) const { return w[0] * z_t + b[0]; }
};

// Two-hidden-layer rectifier network on the remaining dims.
struct InhibitionClassifier {
  nn::Linear l1, l2, l3;

  InhibitionClassifier() = default;
  InhibitionClassifier(long in, long hidden) : l1(in, hidden), l2(hidden, hidden), l3(hidden, 1) {}

  long input_width() const { return l1.w.rank() == 2 ? l1.w.dim(1) : 0; }
  void init(RngStream& rng) {
    l1.init(rng);
    l2.init(rng);
    l3.init(rng);
  }

  struct Vars {
    std::pair<ad::Var, ad::Var> l1, l2, l3;
    std::vector<ad::Var> ordered;
  };
  Vars bind(ad::Graph& g, bool trainable) const;
  ad::Var logits(ad::Graph& g, const Vars& v, ad::Var z_rst) const;
  double logit(std::span<const double> z_rst) const;
};

// Binary cross-entropy from the logit for a {-1,+1} label:
// -log p(y|logit) = softplus(-y * logit).
double bce_with_logit(double logit, int y);

// -log p_w(y = label.y | z_t); >= 0.
double excitation_loss(double z_t, const AttributeLabel& label, const ExcitationClassifier& w);

// -log p_C(y = label.y | z_rst); throws on width mismatch.
double inhibition_loss(std::span<const double> z_rst, const AttributeLabel& label,
                       const InhibitionClassifier& c);

// Sum over the batch of softplus(-y_i * logit_i); labels in {-1,+1}.
ad::Var bce_sum_g(ad::Graph& g, ad::Var logits, const std::vector<int>& ys);

// The supervised head: one excitation unit and one inhibition network per
// attribute. Attribute t owns latent dim t; the inhibition input is all
// dims except the T attribute dims.
struct SupervisedHead {
  long num_attributes = 0;
  long d_z = 0;
  std::vector<ExcitationClassifier> excitation;
  std::vector<InhibitionClassifier> inhibition;

  static SupervisedHead build(long num_attributes, long d_z, long hidden, RngStream& rng);
  long rest_width() const { return d_z - num_attributes; }
  // Excitation parameters only; these train with the encoder/decoder.
  std::vector<nn::NamedParam> excitation_params();
  // C_t parameters, per attribute; these train in their own step.
  std::vector<nn::NamedParam> inhibition_params(long t);
  std::vector<nn::NamedParam> all_params();
};

struct AdversarialSchedule {
  double excitation_weight = 1.0;
  double inhibition_lambda = 1.0;
  bool inhibition_on = true;
};

struct AdversarialStepStats {
  double total_loss = 0;
  double neg_elbo = 0, recon = 0, kl = 0;
  std::vector<double> excitation_loss;  // per attribute, batch mean
  std::vector<double> inhibition_loss;  // per attribute, batch mean
  std::vector<double> excitation_acc;   // per attribute, batch probe accuracy
  std::vector<double> inhibition_acc;
};

// One supervised training step per Eq.-8 mechanics:
//  (i)  each C_t takes one step minimizing its own classification loss on
//       z_rst (encoder frozen);
//  (ii) encoder/decoder/w_t take one step minimizing
//       -ELBO + sum_t [w_exc * excitation_t + lambda * inhibition_t], with a
//       gradient-reversal layer feeding the inhibition branch so the encoder
//       maximizes C_t's loss.
// `noise` is the shared reparameterization draw for both phases. Disabled
// guidance terms are omitted from the graph entirely, so a zero schedule
// reproduces the plain VAE step bit for bit.
AdversarialStepStats adversarial_step(VaeModel& vae, SupervisedHead& head, const Tensor& x,
                                      const std::vector<std::vector<int>>& labels,
                                      const Tensor& noise, const AdversarialSchedule& sched,
                                      nn::Adam& main_opt, std::vector<nn::Adam>& c_opts);

}  // namespace gvae
