#include "gvae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "gvae/image_io.hpp"

namespace gvae {

namespace fs = std::filesystem;

void TraversalSpec::validate() const {
  if (!(lo < hi)) throw std::invalid_argument("TraversalSpec.range: lo must be < hi");
  if (steps < 2) throw std::invalid_argument("TraversalSpec.steps: must be >= 2");
}

// ---------------------------------------------------------------------------
// data loading
// ---------------------------------------------------------------------------

LoadedData load_data(const std::string& descriptor) {
  LoadedData d;
  if (descriptor.rfind("shapes:", 0) == 0) {
    d.is_shapes = true;
    d.shapes = load_shapes_dataset(descriptor.substr(7));
    d.image_h = d.shapes.h;
    d.image_w = d.shapes.w;
    d.train_count = d.shapes.count();
    return d;
  }
  if (descriptor.rfind("mnist:", 0) == 0) {
    std::string dir = descriptor.substr(6);
    d.train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    std::string ti = dir + "/test-images-idx3-ubyte";
    if (!fs::exists(ti)) ti = dir + "/t10k-images-idx3-ubyte";
    std::string tl = dir + "/test-labels-idx1-ubyte";
    if (!fs::exists(tl)) tl = dir + "/t10k-labels-idx1-ubyte";
    d.test = load_idx(ti, tl);
    d.image_h = d.train.images.dim(2);
    d.image_w = d.train.images.dim(3);
    d.train_count = d.train.images.dim(0);
    return d;
  }
  throw std::invalid_argument("dataset descriptor must start with 'shapes:' or 'mnist:'");
}

std::vector<int> attribute_labels(const LoadedData& data, const std::string& attribute,
                                  const std::vector<long>& records) {
  std::vector<int> out;
  out.reserve(records.size());
  if (attribute == "parity" || attribute == "lt5") {
    if (data.is_shapes)
      throw std::invalid_argument("attribute '" + attribute + "' needs a digit dataset");
    for (long r : records) {
      int digit = data.train.labels[static_cast<size_t>(r)];
      bool pos = attribute == "parity" ? (digit % 2 == 1) : (digit < 5);
      out.push_back(pos ? 1 : -1);
    }
    return out;
  }
  if (attribute == "square") {
    if (!data.is_shapes) throw std::invalid_argument("attribute 'square' needs the shapes dataset");
    for (long r : records)
      out.push_back(data.shapes.factor_index(r, FactorGrid::kShape) == 2 ? 1 : -1);
    return out;
  }
  throw std::invalid_argument("unknown attribute '" + attribute + "'");
}

namespace {

Tensor make_batch(const LoadedData& data, const std::vector<long>& idx) {
  if (data.is_shapes) return data.shapes.batch(idx);
  long hw = data.image_h * data.image_w;
  Tensor out({static_cast<long>(idx.size()), 1, data.image_h, data.image_w});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(data.train.images.data() + idx[i] * hw,
              data.train.images.data() + (idx[i] + 1) * hw,
              out.data() + static_cast<long>(i) * hw);
  return out;
}

VaeConfig vae_config_of(const ExperimentConfig& e, long h, long w) {
  VaeConfig vc;
  vc.d_z = e.d_z;
  vc.d_z_def = e.mode == TrainMode::SupervisedGuided
                   ? static_cast<long>(e.attributes.size())
                   : e.d_z_def;
  vc.kl_weight = e.effective_kl_weight();
  vc.image_h = h;
  vc.image_w = w;
  vc.width = e.width;
  vc.depth = e.depth;
  vc.seed = e.seed;
  return vc;
}

struct UnsupStepOut {
  double loss, neg_elbo, recon, kl, dpca;
};

// One optimizer step of the vanilla / unsupervised-guided objective.
UnsupStepOut unsupervised_step(VaeModel& model, PcaBasis* basis, const DeformationSpec& spec,
                               const ExperimentConfig& cfg, const Tensor& x, const Tensor& noise,
                               nn::Adam& opt) {
  long n = x.dim(0);
  bool guided = cfg.mode == TrainMode::UnsupervisedGuided && cfg.dpca_weight != 0.0;
  ad::Graph g;
  ad::Var xv = g.constant(x);
  ad::Var nv = g.constant(noise);
  VaeModel::Vars vv = model.bind(g);
  ad::Var basis_var{};
  if (guided) basis_var = g.leaf(basis->basis);
  auto q = model.encode(g, vv, xv);
  ad::Var z = reparameterize_g(g, q.mean, q.log_var, nv);
  ad::Var x_rec = model.decode(g, vv, z);
  ElboVars e = elbo_g(g, xv, q.mean, q.log_var, x_rec, model.cfg.kl_weight);
  ad::Var loss = g.scale(e.elbo, -1.0);
  UnsupStepOut out{};
  if (guided) {
    DpcaVars dp = dpca_loss_g(g, xv, z, basis_var, model.cfg.d_z_def, spec, cfg.geometry_on,
                              cfg.unit_norm_on);
    loss = g.add(loss, g.scale(dp.total, cfg.dpca_weight));
    out.dpca = g.val(dp.total)[0] / static_cast<double>(n);
  }
  ad::Var mean_loss = g.scale(loss, 1.0 / static_cast<double>(n));
  g.backward(mean_loss);
  std::vector<const Tensor*> grads;
  for (ad::Var v : vv.ordered) grads.push_back(&g.grad(v));
  if (guided) grads.push_back(&g.grad(basis_var));
  opt.step(grads);
  out.loss = g.val(loss)[0] / static_cast<double>(n);
  out.neg_elbo = -g.val(e.elbo)[0] / static_cast<double>(n);
  out.recon = g.val(e.recon_loss)[0] / static_cast<double>(n);
  out.kl = g.val(e.kl)[0] / static_cast<double>(n);
  return out;
}

void add_adam_state(Checkpoint& ck, const std::string& group, nn::Adam& opt) {
  const auto& params = opt.params();
  for (size_t i = 0; i < params.size(); ++i) {
    ck.add("adam." + group + "." + params[i].name + ".m", opt.moment1()[i]);
    ck.add("adam." + group + "." + params[i].name + ".v", opt.moment2()[i]);
  }
  ck.add("adam." + group + ".t", Tensor::scalar(static_cast<double>(opt.step_count())));
}

void write_log_csv(const std::string& path, const std::vector<StepLog>& log, long t_count) {
  std::ofstream out(path);
  out << "step,loss,neg_elbo,recon,kl,dpca";
  for (long t = 0; t < t_count; ++t)
    out << ",exc_loss_" << t << ",inh_loss_" << t << ",exc_acc_" << t << ",inh_acc_" << t;
  out << "\n";
  for (const auto& s : log) {
    out << s.step << "," << s.loss << "," << s.neg_elbo << "," << s.recon << "," << s.kl << ","
        << s.dpca;
    for (long t = 0; t < t_count; ++t) {
      auto at = [&](const std::vector<double>& v) {
        return static_cast<size_t>(t) < v.size() ? v[static_cast<size_t>(t)] : 0.0;
      };
      out << "," << at(s.exc_loss) << "," << at(s.inh_loss) << "," << at(s.exc_acc) << ","
          << at(s.inh_acc);
    }
    out << "\n";
  }
}

[[noreturn]] void abort_non_finite(const ExperimentConfig& cfg, long step,
                                   const std::vector<long>& batch, const StepLog& s) {
  fs::create_directories(cfg.out_dir);
  std::string path = cfg.out_dir + "/diagnostic_step_" + std::to_string(step) + ".txt";
  std::ofstream out(path);
  out << "non-finite loss at step " << step << "\n"
      << "loss=" << s.loss << " neg_elbo=" << s.neg_elbo << " recon=" << s.recon
      << " kl=" << s.kl << " dpca=" << s.dpca << "\nbatch records:";
  for (long r : batch) out << " " << r;
  out << "\n";
  throw std::runtime_error("training aborted: non-finite loss at step " + std::to_string(step) +
                           " (diagnostic: " + path + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

TrainResult train(const ExperimentConfig& cfg) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  LoadedData data = load_data(cfg.dataset);
  VaeConfig vc = vae_config_of(cfg, data.image_h, data.image_w);
  vc.validate();

  RngStream init_rng(cfg.seed, "init");
  RngStream data_rng(cfg.seed, "data");
  RngStream noise_rng(cfg.seed, "noise");

  VaeModel model = VaeModel::build(vc, init_rng);
  bool guided = cfg.mode == TrainMode::UnsupervisedGuided;
  bool supervised = cfg.mode == TrainMode::SupervisedGuided;

  PcaBasis basis;
  DeformationSpec spec = DeformationSpec::mnist_default();  // placeholder when unused
  if (guided) {
    long k = vc.d_z - (cfg.geometry_on ? vc.d_z_def : 0);
    basis = PcaBasis::orthonormal(k, data.image_h * data.image_w, init_rng);
    if (cfg.geometry_on) spec = DeformationSpec::preset_for(cfg.deformation_preset, vc.d_z_def);
  }
  SupervisedHead head;
  long t_count = 0;
  if (supervised) {
    t_count = static_cast<long>(cfg.attributes.size());
    head = SupervisedHead::build(t_count, vc.d_z, cfg.inhibition_hidden, init_rng);
  }

  std::vector<nn::NamedParam> main_params = model.named_params();
  if (guided) main_params.push_back({"guidance.basis", &basis.basis});
  if (supervised) {
    auto e = head.excitation_params();
    main_params.insert(main_params.end(), e.begin(), e.end());
  }
  nn::Adam main_opt(cfg.lr);
  main_opt.attach(main_params);
  std::vector<nn::Adam> c_opts;
  if (supervised) {
    for (long t = 0; t < t_count; ++t) {
      nn::Adam o(cfg.lr);
      o.attach(head.inhibition_params(t));
      c_opts.push_back(std::move(o));
    }
  }

  std::vector<std::vector<int>> all_labels;  // [T][train_count]
  if (supervised) {
    std::vector<long> everyone(static_cast<size_t>(data.train_count));
    std::iota(everyone.begin(), everyone.end(), 0L);
    for (const auto& a : cfg.attributes) all_labels.push_back(attribute_labels(data, a, everyone));
  }

  fs::create_directories(cfg.out_dir);
  std::vector<StepLog> log;
  std::vector<long> order(static_cast<size_t>(data.train_count));
  std::iota(order.begin(), order.end(), 0L);
  long step = 0;

  ConfigMap cfg_echo = cfg.to_config();
  cfg_echo.set_long("runtime.image_h", data.image_h);
  cfg_echo.set_long("runtime.image_w", data.image_w);
  auto save_checkpoint = [&](const std::string& path) {
    Checkpoint ck;
    ck.kind = "vae";
    ck.config_text = cfg_echo.serialize();
    ck.rng_seed = cfg.seed;
    for (const auto& p : model.named_params()) ck.add(p.name, *p.tensor);
    if (guided) ck.add("guidance.basis", basis.basis);
    if (supervised)
      for (const auto& p : head.all_params()) ck.add(p.name, *p.tensor);
    add_adam_state(ck, "main", main_opt);
    for (long t = 0; t < t_count; ++t)
      add_adam_state(ck, "c" + std::to_string(t), c_opts[static_cast<size_t>(t)]);
    ck.save(path);
  };

  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    data_rng.shuffle(order);
    for (long base = 0; base < data.train_count; base += cfg.batch) {
      long m = std::min(cfg.batch, data.train_count - base);
      std::vector<long> idx(order.begin() + base, order.begin() + base + m);
      Tensor x = make_batch(data, idx);
      Tensor noise({m, vc.d_z});
      noise_rng.fill_gaussian(noise);
      StepLog s;
      s.step = step;
      if (supervised) {
        AdversarialSchedule sched;
        sched.excitation_weight = cfg.excitation_weight;
        sched.inhibition_lambda = cfg.inhibition_lambda;
        sched.inhibition_on = cfg.inhibition_on;
        std::vector<std::vector<int>> batch_labels(static_cast<size_t>(t_count));
        for (long t = 0; t < t_count; ++t) {
          batch_labels[static_cast<size_t>(t)].reserve(idx.size());
          for (long r : idx)
            batch_labels[static_cast<size_t>(t)].push_back(
                all_labels[static_cast<size_t>(t)][static_cast<size_t>(r)]);
        }
        AdversarialStepStats st =
            adversarial_step(model, head, x, batch_labels, noise, sched, main_opt, c_opts);
        s.loss = st.total_loss;
        s.neg_elbo = st.neg_elbo;
        s.recon = st.recon;
        s.kl = st.kl;
        s.exc_loss = st.excitation_loss;
        s.inh_loss = st.inhibition_loss;
        s.exc_acc = st.excitation_acc;
        s.inh_acc = st.inhibition_acc;
      } else {
        UnsupStepOut o =
            unsupervised_step(model, guided ? &basis : nullptr, spec, cfg, x, noise, main_opt);
        s.loss = o.loss;
        s.neg_elbo = o.neg_elbo;
        s.recon = o.recon;
        s.kl = o.kl;
        s.dpca = o.dpca;
      }
      if (!std::isfinite(s.loss)) abort_non_finite(cfg, step, idx, s);
      log.push_back(s);
      ++step;
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs)
      save_checkpoint(cfg.out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".gvck");
  }

  TrainResult res;
  res.checkpoint_path = cfg.out_dir + "/checkpoint.gvck";
  save_checkpoint(res.checkpoint_path);
  write_log_csv(cfg.out_dir + "/train_log.csv", log, t_count);
  res.log = std::move(log);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// bundle loading
// ---------------------------------------------------------------------------

TrainedBundle load_bundle(const std::string& checkpoint_path) {
  Checkpoint ck = Checkpoint::load(checkpoint_path);
  if (ck.kind != "vae")
    throw std::runtime_error("expected a vae checkpoint, found kind '" + ck.kind + "'");
  TrainedBundle b;
  ConfigMap cm = ConfigMap::parse_text(ck.config_text);
  b.exp = ExperimentConfig::from_config(cm);
  // Rebuild model skeletons, then overwrite every parameter from the file.
  // The image size is carried in the config echo under runtime.*.
  long h = cm.get_long("runtime.image_h", 0), w = cm.get_long("runtime.image_w", 0);
  if (h == 0 || w == 0)
    throw std::runtime_error("checkpoint config lacks runtime.image_h/image_w");
  VaeConfig vc = vae_config_of(b.exp, h, w);
  RngStream dummy(0, "load");
  b.model = VaeModel::build(vc, dummy);
  for (auto& p : b.model.named_params()) {
    const Tensor& src = ck.require(p.name);
    if (!src.same_shape(*p.tensor))
      throw std::runtime_error("checkpoint tensor shape mismatch for " + p.name);
    *p.tensor = src;
  }
  if (const Tensor* bt = ck.find("guidance.basis")) {
    b.basis.basis = *bt;
    b.has_basis = true;
    if (b.exp.geometry_on && vc.d_z_def > 0)
      b.deformation = DeformationSpec::preset_for(b.exp.deformation_preset, vc.d_z_def);
  }
  if (b.exp.mode == TrainMode::SupervisedGuided) {
    b.head = SupervisedHead::build(static_cast<long>(b.exp.attributes.size()), vc.d_z,
                                   b.exp.inhibition_hidden, dummy);
    for (auto& p : b.head.all_params()) {
      const Tensor& src = ck.require(p.name);
      *p.tensor = src;
    }
    b.has_head = true;
  }
  return b;
}

// ---------------------------------------------------------------------------
// traversal
// ---------------------------------------------------------------------------

std::vector<Tensor> traverse(const TrainedBundle& b, const TraversalSpec& spec,
                             const std::string& png_path) {
  spec.validate();
  const VaeConfig& vc = b.model.cfg;
  if (spec.dim >= vc.d_z)
    throw std::invalid_argument("traverse: dim " + std::to_string(spec.dim) +
                                " out of range for d_z=" + std::to_string(vc.d_z));
  Tensor anchor({1, vc.d_z});
  switch (spec.anchor) {
    case TraversalSpec::Anchor::Zero:
      break;
    case TraversalSpec::Anchor::Prior: {
      RngStream rng(b.exp.seed, "traverse.prior");
      rng.fill_gaussian(anchor);
      break;
    }
    case TraversalSpec::Anchor::Dataset: {
      LoadedData data = load_data(b.exp.dataset);
      Tensor img;
      if (data.is_shapes) {
        img = data.shapes.one(spec.anchor_index);
      } else {
        long hw = data.image_h * data.image_w;
        const Tensor& pool = data.test.images.numel() > 0 ? data.test.images : data.train.images;
        img = Tensor({1, 1, data.image_h, data.image_w});
        std::copy(pool.data() + spec.anchor_index * hw, pool.data() + (spec.anchor_index + 1) * hw,
                  img.data());
      }
      GaussianPosterior q = encode(b.model, img);
      for (long j = 0; j < vc.d_z; ++j) anchor[j] = q.mean.at(0, j);
      break;
    }
  }
  std::vector<long> dims;
  if (spec.dim < 0)
    for (long d = 0; d < vc.d_z; ++d) dims.push_back(d);
  else
    dims.push_back(spec.dim);

  std::vector<Tensor> tiles;
  for (long d : dims) {
    for (long s = 0; s < spec.steps; ++s) {
      Tensor z = anchor;
      z[d] = spec.lo + (spec.hi - spec.lo) * static_cast<double>(s) /
                           static_cast<double>(spec.steps - 1);
      Tensor img = decode(b.model, z);
      tiles.push_back(img.reshaped({vc.image_h, vc.image_w}));
    }
  }
  if (!png_path.empty()) write_image_grid(png_path, tiles, spec.steps);
  return tiles;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

MetricReport run_metrics(const TrainedBundle& b, const std::string& dataset_descriptor,
                         const MetricConfig& mcfg, const std::string& out_prefix) {
  MetricReport rep;
  rep.config_echo = mcfg.echo();
  LoadedData data = load_data(dataset_descriptor);
  if (data.is_shapes) {
    EncoderLatentSource src(b.model, data.shapes);
    rep.z_diff = zdiff_score(src, mcfg, &rep.notes);
    rep.sap = sap_score(src, mcfg, &rep.sap_per_factor);
    rep.factor = factor_score(src, mcfg, &rep.notes);
  } else {
    rep.notes.push_back("digit dataset without ground-truth factors: factor-based metrics "
                        "(z-diff, sap, factor) skipped");
    rep.transfer_err_all = latent_transfer_classification(b.model, data.train, data.test,
                                                          LatentSelector::All, mcfg);
    if (b.model.cfg.d_z_def > 0) {
      rep.transfer_err_def = latent_transfer_classification(b.model, data.train, data.test,
                                                            LatentSelector::Def, mcfg);
      rep.transfer_err_cont = latent_transfer_classification(b.model, data.train, data.test,
                                                             LatentSelector::Cont, mcfg);
    } else {
      rep.notes.push_back("d_z_def = 0: z_def/z_cont probes skipped");
    }
  }
  if (!out_prefix.empty()) {
    std::ofstream(out_prefix + ".csv") << rep.to_csv();
    std::ofstream(out_prefix + ".txt") << rep.to_text();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// confidence curve
// ---------------------------------------------------------------------------

std::vector<CurvePoint> run_curve(const TrainedBundle& b, const ExpertModel& expert, long t,
                                  double lo, double hi, double stride, long samples_per_point,
                                  const std::string& out_prefix) {
  RngStream rng(b.exp.seed, "curve");
  auto curve = expert_confidence_curve(b.model, expert, t, lo, hi, stride, samples_per_point, rng);
  if (!out_prefix.empty()) {
    std::ofstream csv(out_prefix + ".csv");
    csv << "z,negative_confidence\n";
    std::vector<double> xs, ys;
    for (const auto& p : curve) {
      csv << p.z << "," << p.negative_confidence << "\n";
      xs.push_back(p.z);
      ys.push_back(p.negative_confidence);
    }
    write_line_plot(out_prefix + ".png", xs, ys, 0.0, 1.0);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// basis export
// ---------------------------------------------------------------------------

BasisExport export_basis(const TrainedBundle& b, const std::string& out_dir, long n_samples) {
  if (!b.has_basis)
    throw std::runtime_error("export_basis: checkpoint has no secondary-decoder basis");
  fs::create_directories(out_dir);
  const VaeConfig& vc = b.model.cfg;
  long k = b.basis.k();
  BasisExport ex;
  ex.k = k;
  for (long r = 0; r < k; ++r) {
    Tensor tile({vc.image_h, vc.image_w});
    std::copy(b.basis.basis.data() + r * b.basis.d(), b.basis.basis.data() + (r + 1) * b.basis.d(),
              tile.data());
    ex.basis_tiles.push_back(normalize_for_display(tile));
  }
  write_image_grid(out_dir + "/basis.png", ex.basis_tiles,
                   static_cast<long>(std::ceil(std::sqrt(static_cast<double>(k)))));

  // Gram matrix CSV + max off-diagonal magnitude.
  std::ofstream gram(out_dir + "/basis_gram.csv");
  for (long i = 0; i < k; ++i) {
    for (long j = 0; j < k; ++j) {
      double dot = 0;
      for (long c = 0; c < b.basis.d(); ++c)
        dot += b.basis.basis.at(i, c) * b.basis.basis.at(j, c);
      gram << (j ? "," : "") << dot;
      if (i != j) ex.gram_offdiag_max = std::max(ex.gram_offdiag_max, std::abs(dot));
    }
    gram << "\n";
  }

  // Prior samples through the secondary decoder, with and without the warp.
  RngStream rng(b.exp.seed, "basis.export");
  bool warping = b.exp.geometry_on && vc.d_z_def > 0;
  for (long s = 0; s < n_samples; ++s) {
    Tensor z({1, vc.d_z});
    rng.fill_gaussian(z);
    std::vector<double> z_cont(static_cast<size_t>(k));
    for (long j = 0; j < k; ++j) z_cont[static_cast<size_t>(j)] = z[(warping ? vc.d_z_def : 0) + j];
    Tensor flat = pca_reconstruct(z_cont, b.basis, vc.image_h, vc.image_w);
    ex.unwarped_samples.push_back(normalize_for_display(flat));
    if (warping) {
      std::vector<double> z_def(static_cast<size_t>(vc.d_z_def));
      for (long j = 0; j < vc.d_z_def; ++j) z_def[static_cast<size_t>(j)] = z[j];
      AffineParams a = affine_from_latent(z_def, b.deformation);
      Tensor grid = make_sampling_grid(a, vc.image_h, vc.image_w);
      ex.warped_samples.push_back(normalize_for_display(bilinear_sample(flat, grid)));
    } else {
      ex.warped_samples.push_back(ex.unwarped_samples.back());
    }
  }
  long cols = static_cast<long>(std::ceil(std::sqrt(static_cast<double>(n_samples))));
  write_image_grid(out_dir + "/samples_pca.png", ex.unwarped_samples, cols);
  write_image_grid(out_dir + "/samples_deformable_pca.png", ex.warped_samples, cols);
  return ex;
}

// ---------------------------------------------------------------------------
// expert
// ---------------------------------------------------------------------------

ExpertModel train_expert(const std::string& dataset_descriptor, const std::string& attribute,
                         long max_epochs, uint64_t seed) {
  LoadedData data = load_data(dataset_descriptor);
  if (data.is_shapes)
    throw std::invalid_argument("train_expert: digit dataset expected");
  RngStream init_rng(seed, "expert.init");
  RngStream data_rng(seed, "expert.data");
  ExpertModel m = ExpertModel::build(data.image_h, data.image_w, 8, init_rng);
  m.attribute = attribute;
  std::vector<long> everyone(static_cast<size_t>(data.train_count));
  std::iota(everyone.begin(), everyone.end(), 0L);
  std::vector<int> y_train = attribute_labels(data, attribute, everyone);
  // held-out labels from the test split
  LoadedData test_view = data;
  std::swap(test_view.train, test_view.test);
  std::vector<long> test_idx(static_cast<size_t>(data.test.images.dim(0)));
  std::iota(test_idx.begin(), test_idx.end(), 0L);
  std::vector<int> y_test = attribute_labels(test_view, attribute, test_idx);

  nn::Adam opt(1e-3);
  opt.attach(m.named_params());
  const long batch = 128;
  std::vector<long> order = everyone;
  long hw = data.image_h * data.image_w;
  auto eval_accuracy = [&]() {
    long ok = 0, n = data.test.images.dim(0);
    const long bs = 256;
    for (long base = 0; base < n; base += bs) {
      long cnt = std::min(bs, n - base);
      Tensor x({cnt, 1, data.image_h, data.image_w});
      std::copy(data.test.images.data() + base * hw, data.test.images.data() + (base + cnt) * hw,
                x.data());
      std::vector<double> p = m.prob_positive(x);
      for (long i = 0; i < cnt; ++i)
        ok += (p[static_cast<size_t>(i)] > 0.5) ==
              (y_test[static_cast<size_t>(base + i)] > 0);
    }
    return static_cast<double>(ok) / static_cast<double>(n);
  };

  for (long epoch = 0; epoch < max_epochs; ++epoch) {
    data_rng.shuffle(order);
    for (long base = 0; base < data.train_count; base += batch) {
      long cnt = std::min(batch, data.train_count - base);
      std::vector<long> idx(order.begin() + base, order.begin() + base + cnt);
      Tensor x = make_batch(data, idx);
      std::vector<int> ys;
      ys.reserve(idx.size());
      for (long r : idx) ys.push_back(y_train[static_cast<size_t>(r)]);
      ad::Graph g;
      auto v = m.bind(g, true);
      ad::Var logits = m.logits(g, v, g.constant(x));
      ad::Var loss = g.scale(bce_sum_g(g, logits, ys), 1.0 / static_cast<double>(cnt));
      g.backward(loss);
      std::vector<const Tensor*> grads;
      for (ad::Var pv : v.ordered) grads.push_back(&g.grad(pv));
      opt.step(grads);
    }
    m.holdout_accuracy = eval_accuracy();
    if (m.holdout_accuracy >= 0.98) break;
  }
  return m;
}

void save_expert(const ExpertModel& m, const std::string& path) {
  Checkpoint ck;
  ck.kind = "expert";
  ConfigMap c;
  c.set("expert.attribute", m.attribute);
  c.set_double("expert.holdout_accuracy", m.holdout_accuracy);
  c.set_long("expert.image_h", m.image_h);
  c.set_long("expert.image_w", m.image_w);
  c.set_long("expert.width", m.width);
  ck.config_text = c.serialize();
  ExpertModel& mm = const_cast<ExpertModel&>(m);
  for (const auto& p : mm.named_params()) ck.add(p.name, *p.tensor);
  ck.save(path);
}

ExpertModel load_expert(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != "expert")
    throw std::runtime_error("expected an expert checkpoint, found kind '" + ck.kind + "'");
  ConfigMap c = ConfigMap::parse_text(ck.config_text);
  RngStream dummy(0, "load");
  ExpertModel m = ExpertModel::build(c.get_long("expert.image_h", 32),
                                     c.get_long("expert.image_w", 32),
                                     c.get_long("expert.width", 8), dummy);
  m.attribute = c.get("expert.attribute");
  m.holdout_accuracy = c.get_double("expert.holdout_accuracy", 0.0);
  for (auto& p : m.named_params()) *p.tensor = ck.require(p.name);
  return m;
}

// ---------------------------------------------------------------------------
// spec'd batch objective (oracle surface)
// ---------------------------------------------------------------------------

UnsupLossParts unsupervised_total_loss(const VaeModel& model, const PcaBasis& basis,
                                       const DeformationSpec& spec, const Tensor& x,
                                       const Tensor& noise, double dpca_weight, bool geometry_on,
                                       bool unit_norm_on) {
  ad::Graph g;
  ad::Var xv = g.constant(x);
  ad::Var nv = g.constant(noise);
  VaeModel::Vars vv = model.bind(g);
  auto q = model.encode(g, vv, xv);
  ad::Var z = reparameterize_g(g, q.mean, q.log_var, nv);
  ad::Var x_rec = model.decode(g, vv, z);
  ElboVars e = elbo_g(g, xv, q.mean, q.log_var, x_rec, model.cfg.kl_weight);
  UnsupLossParts out;
  out.neg_elbo = -g.val(e.elbo)[0];
  out.recon = g.val(e.recon_loss)[0];
  out.kl = g.val(e.kl)[0];
  out.total = out.neg_elbo;
  if (dpca_weight != 0.0) {
    ad::Var bv = g.constant(basis.basis);
    DpcaVars dp =
        dpca_loss_g(g, xv, z, bv, model.cfg.d_z_def, spec, geometry_on, unit_norm_on);
    out.dpca = g.val(dp.total)[0];
    out.total += dpca_weight * out.dpca;
  }
  return out;
}

}  // namespace gvae
