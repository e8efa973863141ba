#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "gvae/config.hpp"
#include "gvae/data.hpp"
#include "gvae/metrics.hpp"
#include "gvae/trainer.hpp"

using namespace gvae;

int main(int argc, char** argv) {
  CLI::App app{"Guided-VAE training and evaluation"};
  app.require_subcommand(1);

  // ---- build-shapes ----
  auto* cmd_build = app.add_subcommand("build-shapes", "Render the synthetic 2D-shapes dataset");
  std::string build_out = "shapes.gvds";
  std::vector<long> strides{1, 1, 1, 1, 1};
  long build_count = 0;
  uint64_t build_seed = 0;
  cmd_build->add_option("--out", build_out, "output dataset file");
  cmd_build->add_option("--strides", strides, "per-factor strides (shape,x,y,scale,rotation)")
      ->expected(5);
  cmd_build->add_option("--count", build_count, "random subsample size (0 = full lattice)");
  cmd_build->add_option("--seed", build_seed, "subsample seed");

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "Train a model from a config file");
  std::string train_config;
  long train_seed = -1;
  std::string train_out;
  cmd_train->add_option("--config", train_config, "experiment config path")->required();
  cmd_train->add_option("--seed", train_seed, "override the config seed");
  cmd_train->add_option("--out", train_out, "override the output directory");

  // ---- traverse ----
  auto* cmd_trav = app.add_subcommand("traverse", "Decode latent traversals into an image grid");
  std::string trav_ckpt, trav_dim = "all", trav_anchor = "dataset", trav_out = "traversal.png";
  std::vector<double> trav_range{-3.0, 3.0};
  long trav_steps = 13, trav_anchor_index = 0;
  cmd_trav->add_option("--ckpt", trav_ckpt, "checkpoint path")->required();
  cmd_trav->add_option("--dim", trav_dim, "latent dim index or 'all'");
  cmd_trav->add_option("--range", trav_range, "sweep range LO HI")->expected(2);
  cmd_trav->add_option("--steps", trav_steps, "sweep steps");
  cmd_trav->add_option("--anchor", trav_anchor, "anchor source: dataset|prior|zero");
  cmd_trav->add_option("--anchor-index", trav_anchor_index, "dataset anchor index");
  cmd_trav->add_option("--out", trav_out, "output PNG");

  // ---- metrics ----
  auto* cmd_met = app.add_subcommand("metrics", "Run the applicable metric suite");
  std::string met_ckpt, met_dataset, met_out = "metrics";
  uint64_t met_seed = 1234;
  cmd_met->add_option("--ckpt", met_ckpt, "checkpoint path")->required();
  cmd_met->add_option("--dataset", met_dataset, "dataset descriptor (shapes:PATH or mnist:DIR)")
      ->required();
  cmd_met->add_option("--out", met_out, "output prefix for .csv/.txt");
  cmd_met->add_option("--seed", met_seed, "metric seed");

  // ---- curve ----
  auto* cmd_curve = app.add_subcommand("curve", "Expert confidence curve over one latent dim");
  std::string curve_ckpt, curve_expert, curve_out = "curve";
  long curve_attr = 0, curve_samples = 500;
  std::vector<double> curve_range{-3.0, 3.0};
  double curve_stride = 0.1;
  cmd_curve->add_option("--ckpt", curve_ckpt, "supervised checkpoint")->required();
  cmd_curve->add_option("--expert", curve_expert, "expert checkpoint")->required();
  cmd_curve->add_option("--attr", curve_attr, "attribute index t");
  cmd_curve->add_option("--range", curve_range, "sweep range LO HI")->expected(2);
  cmd_curve->add_option("--stride", curve_stride, "sweep stride");
  cmd_curve->add_option("--samples", curve_samples, "decoded samples per grid point");
  cmd_curve->add_option("--out", curve_out, "output prefix for .csv/.png");

  // ---- export-basis ----
  auto* cmd_basis = app.add_subcommand("export-basis", "Export basis images and samples");
  std::string basis_ckpt, basis_out = "basis_export";
  long basis_samples = 16;
  cmd_basis->add_option("--ckpt", basis_ckpt, "unsupervised checkpoint")->required();
  cmd_basis->add_option("--out", basis_out, "output directory");
  cmd_basis->add_option("--samples", basis_samples, "prior samples to render");

  // ---- train-expert ----
  auto* cmd_exp = app.add_subcommand("train-expert", "Train the external attribute classifier");
  std::string exp_dataset, exp_attr = "parity", exp_out = "expert.gvck";
  long exp_epochs = 20;
  uint64_t exp_seed = 7;
  cmd_exp->add_option("--dataset", exp_dataset, "dataset descriptor")->required();
  cmd_exp->add_option("--attribute", exp_attr, "attribute: parity|lt5|square");
  cmd_exp->add_option("--epochs", exp_epochs, "epoch cap");
  cmd_exp->add_option("--seed", exp_seed, "training seed");
  cmd_exp->add_option("--out", exp_out, "expert checkpoint path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_build) {
      FactorGrid grid;
      BuildOptions opt;
      for (int f = 0; f < FactorGrid::kFactors; ++f)
        opt.strides[static_cast<size_t>(f)] = strides[static_cast<size_t>(f)];
      opt.random_count = build_count;
      opt.seed = build_seed;
      build_shapes_dataset(grid, opt, build_out);
      ShapesDataset ds = load_shapes_dataset(build_out);
      std::cout << "wrote " << build_out << " with " << ds.count() << " records\n";
    } else if (*cmd_train) {
      ExperimentConfig cfg = ExperimentConfig::from_config(ConfigMap::parse_file(train_config));
      if (train_seed >= 0) cfg.seed = static_cast<uint64_t>(train_seed);
      if (!train_out.empty()) cfg.out_dir = train_out;
      cfg.validate();
      TrainResult res = train(cfg);
      std::cout << "checkpoint: " << res.checkpoint_path << "\n"
                << "steps: " << res.log.size() << "\n"
                << "final loss: " << (res.log.empty() ? 0.0 : res.log.back().loss) << "\n"
                << "wall seconds: " << res.wall_seconds << "\n";
    } else if (*cmd_trav) {
      TrainedBundle b = load_bundle(trav_ckpt);
      TraversalSpec spec;
      spec.dim = trav_dim == "all" ? -1 : std::stol(trav_dim);
      spec.lo = trav_range[0];
      spec.hi = trav_range[1];
      spec.steps = trav_steps;
      spec.anchor_index = trav_anchor_index;
      if (trav_anchor == "dataset")
        spec.anchor = TraversalSpec::Anchor::Dataset;
      else if (trav_anchor == "prior")
        spec.anchor = TraversalSpec::Anchor::Prior;
      else if (trav_anchor == "zero")
        spec.anchor = TraversalSpec::Anchor::Zero;
      else
        throw std::invalid_argument("traverse.anchor: expected dataset|prior|zero");
      auto tiles = traverse(b, spec, trav_out);
      std::cout << "wrote " << trav_out << " (" << tiles.size() << " tiles)\n";
    } else if (*cmd_met) {
      TrainedBundle b = load_bundle(met_ckpt);
      MetricConfig mcfg;
      mcfg.seed = met_seed;
      MetricReport rep = run_metrics(b, met_dataset, mcfg, met_out);
      std::cout << rep.to_text();
    } else if (*cmd_curve) {
      TrainedBundle b = load_bundle(curve_ckpt);
      ExpertModel expert = load_expert(curve_expert);
      auto curve = run_curve(b, expert, curve_attr, curve_range[0], curve_range[1], curve_stride,
                             curve_samples, curve_out);
      std::cout << "wrote " << curve_out << ".csv with " << curve.size() << " rows\n";
    } else if (*cmd_basis) {
      TrainedBundle b = load_bundle(basis_ckpt);
      BasisExport ex = export_basis(b, basis_out, basis_samples);
      std::cout << "exported " << ex.k << " basis tiles; gram off-diagonal max "
                << ex.gram_offdiag_max << "\n";
    } else if (*cmd_exp) {
      ExpertModel m = train_expert(exp_dataset, exp_attr, exp_epochs, exp_seed);
      save_expert(m, exp_out);
      std::cout << "expert held-out accuracy: " << m.holdout_accuracy << "\n"
                << "wrote " << exp_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
