#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gvae/adversarial.hpp"
#include "gvae/checkpoint.hpp"
#include "gvae/config.hpp"
#include "gvae/data.hpp"
#include "gvae/geometry.hpp"
#include "gvae/metrics.hpp"
#include "gvae/vae.hpp"

namespace gvae {

struct TraversalSpec {
  long dim = -1;  // -1 sweeps every dim, one row each
  double lo = -3.0, hi = 3.0;
  long steps = 13;
  enum class Anchor { Dataset, Prior, Zero } anchor = Anchor::Dataset;
  long anchor_index = 0;

  void validate() const;
};

struct StepLog {
  long step = 0;
  double loss = 0, neg_elbo = 0, recon = 0, kl = 0, dpca = 0;
  std::vector<double> exc_loss, inh_loss, exc_acc, inh_acc;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<StepLog> log;
  double wall_seconds = 0;
};

// Dataset behind a descriptor: "shapes:PATH" or "mnist:DIR" (DIR holding
// train-/test- images/labels IDX files).
struct LoadedData {
  bool is_shapes = false;
  ShapesDataset shapes;
  LabeledImages train, test;
  long image_h = 0, image_w = 0;
  long train_count = 0;
};

LoadedData load_data(const std::string& descriptor);

// +1/-1 labels for a named binary attribute over the dataset's train split
// (parity | lt5 for digits, square for shapes).
std::vector<int> attribute_labels(const LoadedData& data, const std::string& attribute,
                                  const std::vector<long>& records);

// Everything a checkpoint reconstructs.
struct TrainedBundle {
  ExperimentConfig exp;
  VaeModel model;
  PcaBasis basis;
  bool has_basis = false;
  SupervisedHead head;
  bool has_head = false;
  DeformationSpec deformation;
};

// Runs the configured mode for the configured epochs; writes a CSV loss log
// and checkpoints under cfg.out_dir. Aborts with a diagnostic snapshot on a
// non-finite loss.
TrainResult train(const ExperimentConfig& cfg);

TrainedBundle load_bundle(const std::string& checkpoint_path);

// Decoded sweep tiles (row-major, one row per swept dim); optionally writes
// the tiled PNG.
std::vector<Tensor> traverse(const TrainedBundle& b, const TraversalSpec& spec,
                             const std::string& png_path = "");

// Applicable metrics for the checkpoint/dataset pair; writes
// out_prefix + ".csv" / ".txt" when out_prefix is non-empty.
MetricReport run_metrics(const TrainedBundle& b, const std::string& dataset_descriptor,
                         const MetricConfig& mcfg, const std::string& out_prefix = "");

// Confidence curve for attribute t; writes CSV and a plot PNG when
// out_prefix is non-empty.
std::vector<CurvePoint> run_curve(const TrainedBundle& b, const ExpertModel& expert, long t,
                                  double lo, double hi, double stride, long samples_per_point,
                                  const std::string& out_prefix = "");

struct BasisExport {
  long k = 0;
  double gram_offdiag_max = 0;
  std::vector<Tensor> basis_tiles;
  std::vector<Tensor> warped_samples, unwarped_samples;
};

// Basis images + Gram CSV + prior samples through the secondary decoder with
// and without the warp. Throws if the checkpoint has no basis.
BasisExport export_basis(const TrainedBundle& b, const std::string& out_dir, long n_samples = 16);

// Trains the external attribute expert to >= 98% held-out accuracy (or the
// epoch cap), recording the reached accuracy.
ExpertModel train_expert(const std::string& dataset_descriptor, const std::string& attribute,
                         long max_epochs, uint64_t seed);

void save_expert(const ExpertModel& m, const std::string& path);
ExpertModel load_expert(const std::string& path);

// Spec'd batch objective: -ELBO + dpca summed over the batch (per-sample
// penalties included). Exposed for the oracle tests; train() minimizes
// total / batch_size.
struct UnsupLossParts {
  double total = 0, neg_elbo = 0, recon = 0, kl = 0, dpca = 0;
};
UnsupLossParts unsupervised_total_loss(const VaeModel& model, const PcaBasis& basis,
                                       const DeformationSpec& spec, const Tensor& x,
                                       const Tensor& noise, double dpca_weight,
                                       bool geometry_on, bool unit_norm_on);

}  // namespace gvae
