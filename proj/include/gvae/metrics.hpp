#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gvae/data.hpp"
#include "gvae/nn.hpp"
#include "gvae/rng.hpp"
#include "gvae/tensor.hpp"
#include "gvae/vae.hpp"

namespace gvae {

// A factorized generative process whose representation the metrics probe.
// Real models encode rendered dataset images; metric oracles plug in
// simulated representations.
class LatentSource {
 public:
  virtual ~LatentSource() = default;
  virtual int factor_count() const = 0;
  virtual long cardinality(int f) const = 0;
  virtual bool discrete(int f) const = 0;
  // Numeric value of a factor index (for regression-based scores).
  virtual double factor_value(int f, long idx) const = 0;
  virtual long latent_dim() const = 0;
  // Representations for a batch of factor tuples: [n, latent_dim].
  virtual Tensor latents(const std::vector<std::vector<long>>& tuples, RngStream& rng) const = 0;
};

// Posterior-mean representation of a trained VAE over a shapes dataset.
class EncoderLatentSource : public LatentSource {
 public:
  EncoderLatentSource(const VaeModel& model, const ShapesDataset& ds);

  int factor_count() const override { return FactorGrid::kFactors; }
  long cardinality(int f) const override;
  bool discrete(int f) const override { return f == FactorGrid::kShape; }
  double factor_value(int f, long idx) const override;
  long latent_dim() const override { return model_->cfg.d_z; }
  Tensor latents(const std::vector<std::vector<long>>& tuples, RngStream& rng) const override;

 private:
  long record_for(const std::vector<long>& tuple) const;
  const VaeModel* model_;
  const ShapesDataset* ds_;
  std::vector<std::vector<long>> present_;       // per factor, sorted present values
  std::vector<long> code_to_record_;             // full-grid code -> record (-1 absent)
  std::array<long, FactorGrid::kFactors> full_cards_;
};

struct MetricConfig {
  long pairs_per_vote = 64;  // L
  long train_votes = 800;
  long test_votes = 200;
  long stats_samples = 10000;
  double prune_std = 0.05;
  long sap_samples = 5000;
  long softmax_iters = 400;
  double softmax_lr = 0.1;
  uint64_t seed = 1234;
  long encode_batch = 128;

  std::string echo() const;
};

// Per-dim empirical moments of the representation over random samples.
struct LatentStats {
  std::vector<double> mean, stddev;

  static LatentStats compute(const LatentSource& src, long samples, RngStream& rng);
};

struct MetricReport {
  std::optional<double> z_diff;  // percentage in [0,100]
  std::optional<double> sap;     // [0,1]
  std::optional<double> factor;  // [0,1]
  std::vector<double> sap_per_factor;
  std::optional<double> transfer_err_all, transfer_err_def, transfer_err_cont;  // percent
  std::vector<std::string> notes;
  std::string config_echo;

  std::string to_text() const;
  std::string to_csv() const;
};

// ---- the three disentanglement scores --------------------------------------

// Fix a factor per vote, average |z1 - z2| over L matched pairs, classify the
// fixed factor from the mean-difference vector; test accuracy x 100.
double zdiff_score(const LatentSource& src, const MetricConfig& cfg,
                   std::vector<std::string>* notes = nullptr);

// Mean over factors of the gap between the best and second-best single-latent
// predictor (R^2 for continuous factors, thresholded balanced accuracy minus
// chance for discrete ones).
double sap_score(const LatentSource& src, const MetricConfig& cfg,
                 std::vector<double>* per_factor = nullptr);

// Majority-vote map from least-normalized-variance latent dim to the fixed
// factor; test-vote accuracy. Throws if every dim is collapsed.
double factor_score(const LatentSource& src, const MetricConfig& cfg,
                    std::vector<std::string>* notes = nullptr);

// ---- linear probes ----------------------------------------------------------

// Multinomial logistic regression on standardized features; deterministic
// full-batch training.
struct SoftmaxProbe {
  Tensor w, b;              // [C,d], [C]
  Tensor feat_mean, feat_std;
  int classes = 0;

  int predict(const double* x, long d) const;
};

SoftmaxProbe softmax_fit(const Tensor& x, const std::vector<int>& y, int classes,
                         long iters, double lr);
double softmax_accuracy(const SoftmaxProbe& m, const Tensor& x, const std::vector<int>& y);

// Posterior means of a labeled image set, in batches.
Tensor encode_means(const VaeModel& model, const Tensor& images, long batch);

enum class LatentSelector { All, Def, Cont };

// Train on selected dims of the train-split posterior means, return test
// error percentage. Throws if the selector picks no dims.
double latent_transfer_classification(const VaeModel& model, const LabeledImages& train,
                                      const LabeledImages& test, LatentSelector sel,
                                      const MetricConfig& cfg);

// ---- expert classifier + confidence curve ----------------------------------

// Small convolutional binary classifier for one ground-truth attribute.
struct ExpertModel {
  long image_h = 32, image_w = 32, width = 8;
  std::vector<nn::Conv2d> convs;
  nn::Linear fc;
  long mid_ch = 0, mid_h = 0, mid_w = 0;
  double holdout_accuracy = 0.0;
  std::string attribute;

  static ExpertModel build(long h, long w, long width, RngStream& rng);
  std::vector<nn::NamedParam> named_params();

  struct Vars {
    std::vector<std::pair<ad::Var, ad::Var>> convs;
    std::pair<ad::Var, ad::Var> fc;
    std::vector<ad::Var> ordered;
  };
  Vars bind(ad::Graph& g, bool trainable) const;
  ad::Var logits(ad::Graph& g, const Vars& v, ad::Var x) const;  // [N,1]
  // P(y = +1 | x) per sample.
  std::vector<double> prob_positive(const Tensor& x) const;
};

struct CurvePoint {
  double z = 0;
  double negative_confidence = 0;  // mean expert P(y = -1 | decoded image)
};

// Sweeps z_t over [lo, hi] with the given stride; all other dims are drawn
// from the prior per sample. Throws if the expert looks untrained.
std::vector<CurvePoint> expert_confidence_curve(const VaeModel& decoder, const ExpertModel& expert,
                                                long t, double lo, double hi, double stride,
                                                long samples_per_point, RngStream& rng);

}  // namespace gvae
