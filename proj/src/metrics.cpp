#include "gvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gvae {

// ---------------------------------------------------------------------------
// EncoderLatentSource
// ---------------------------------------------------------------------------

EncoderLatentSource::EncoderLatentSource(const VaeModel& model, const ShapesDataset& ds)
    : model_(&model), ds_(&ds) {
  for (int f = 0; f < FactorGrid::kFactors; ++f)
    full_cards_[static_cast<size_t>(f)] = ds.cards[static_cast<size_t>(f)];
  std::array<std::vector<bool>, FactorGrid::kFactors> seen;
  for (int f = 0; f < FactorGrid::kFactors; ++f)
    seen[static_cast<size_t>(f)].assign(static_cast<size_t>(full_cards_[static_cast<size_t>(f)]),
                                        false);
  long total_code = 1;
  for (long c : full_cards_) total_code *= c;
  code_to_record_.assign(static_cast<size_t>(total_code), -1);
  for (long r = 0; r < ds.count(); ++r) {
    long code = 0;
    for (int f = 0; f < FactorGrid::kFactors; ++f) {
      long v = ds.factor_index(r, f);
      seen[static_cast<size_t>(f)][static_cast<size_t>(v)] = true;
      code = code * full_cards_[static_cast<size_t>(f)] + v;
    }
    code_to_record_[static_cast<size_t>(code)] = r;
  }
  present_.resize(FactorGrid::kFactors);
  for (int f = 0; f < FactorGrid::kFactors; ++f)
    for (long v = 0; v < full_cards_[static_cast<size_t>(f)]; ++v)
      if (seen[static_cast<size_t>(f)][static_cast<size_t>(v)])
        present_[static_cast<size_t>(f)].push_back(v);
}

long EncoderLatentSource::cardinality(int f) const {
  return static_cast<long>(present_[static_cast<size_t>(f)].size());
}

double EncoderLatentSource::factor_value(int f, long idx) const {
  long v = present_[static_cast<size_t>(f)][static_cast<size_t>(idx)];
  FactorGrid grid;  // value definitions live on the grid
  return grid.factor_value(f, v);
}

long EncoderLatentSource::record_for(const std::vector<long>& tuple) const {
  long code = 0;
  for (int f = 0; f < FactorGrid::kFactors; ++f) {
    long v = present_[static_cast<size_t>(f)][static_cast<size_t>(tuple[static_cast<size_t>(f)])];
    code = code * full_cards_[static_cast<size_t>(f)] + v;
  }
  long rec = code_to_record_[static_cast<size_t>(code)];
  if (rec < 0) throw std::logic_error("EncoderLatentSource: tuple not present in dataset");
  return rec;
}

Tensor EncoderLatentSource::latents(const std::vector<std::vector<long>>& tuples,
                                    RngStream&) const {
  long n = static_cast<long>(tuples.size());
  Tensor out({n, model_->cfg.d_z});
  const long bs = 128;
  for (long base = 0; base < n; base += bs) {
    long m = std::min(bs, n - base);
    std::vector<long> recs;
    recs.reserve(static_cast<size_t>(m));
    for (long i = 0; i < m; ++i) recs.push_back(record_for(tuples[static_cast<size_t>(base + i)]));
    Tensor batch = ds_->batch(recs);
    GaussianPosterior q = encode(*model_, batch);
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < model_->cfg.d_z; ++j)
        out.at(base + i, j) = q.mean.at(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// shared sampling helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<long> random_tuple(const LatentSource& src, RngStream& rng) {
  std::vector<long> t(static_cast<size_t>(src.factor_count()));
  for (int f = 0; f < src.factor_count(); ++f)
    t[static_cast<size_t>(f)] = rng.uniform_int(0, src.cardinality(f) - 1);
  return t;
}

std::vector<int> usable_factors(const LatentSource& src, std::vector<std::string>* notes) {
  std::vector<int> out;
  for (int f = 0; f < src.factor_count(); ++f) {
    if (src.cardinality(f) >= 2) {
      out.push_back(f);
    } else if (notes) {
      notes->push_back("factor " + std::to_string(f) +
                       " has a single value and was excluded");
    }
  }
  return out;
}

}  // namespace

std::string MetricConfig::echo() const {
  std::ostringstream os;
  os << "L=" << pairs_per_vote << " train_votes=" << train_votes
     << " test_votes=" << test_votes << " stats_samples=" << stats_samples
     << " prune_std=" << prune_std << " sap_samples=" << sap_samples
     << " softmax_iters=" << softmax_iters << " seed=" << seed;
  return os.str();
}

LatentStats LatentStats::compute(const LatentSource& src, long samples, RngStream& rng) {
  std::vector<std::vector<long>> tuples;
  tuples.reserve(static_cast<size_t>(samples));
  for (long i = 0; i < samples; ++i) tuples.push_back(random_tuple(src, rng));
  Tensor z = src.latents(tuples, rng);
  long d = z.dim(1);
  LatentStats st;
  st.mean.assign(static_cast<size_t>(d), 0.0);
  st.stddev.assign(static_cast<size_t>(d), 0.0);
  for (long j = 0; j < d; ++j) {
    double m = 0;
    for (long i = 0; i < samples; ++i) m += z.at(i, j);
    m /= static_cast<double>(samples);
    double v = 0;
    for (long i = 0; i < samples; ++i) {
      double dlt = z.at(i, j) - m;
      v += dlt * dlt;
    }
    st.mean[static_cast<size_t>(j)] = m;
    st.stddev[static_cast<size_t>(j)] = std::sqrt(v / static_cast<double>(samples));
  }
  return st;
}

// ---------------------------------------------------------------------------
// softmax probe
// ---------------------------------------------------------------------------

SoftmaxProbe softmax_fit(const Tensor& x, const std::vector<int>& y, int classes, long iters,
                         double lr) {
  long n = x.dim(0), d = x.dim(1);
  if (n != static_cast<long>(y.size())) throw std::invalid_argument("softmax_fit: label count");
  SoftmaxProbe m;
  m.classes = classes;
  m.feat_mean = Tensor({d});
  m.feat_std = Tensor({d});
  for (long j = 0; j < d; ++j) {
    double mu = 0;
    for (long i = 0; i < n; ++i) mu += x.at(i, j);
    mu /= static_cast<double>(n);
    double v = 0;
    for (long i = 0; i < n; ++i) {
      double dl = x.at(i, j) - mu;
      v += dl * dl;
    }
    m.feat_mean[j] = mu;
    m.feat_std[j] = std::max(std::sqrt(v / static_cast<double>(n)), 1e-8);
  }
  Tensor xs({n, d});
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) xs.at(i, j) = (x.at(i, j) - m.feat_mean[j]) / m.feat_std[j];

  m.w = Tensor({static_cast<long>(classes), d});
  m.b = Tensor({static_cast<long>(classes)});
  Tensor mw(m.w.shape()), vw(m.w.shape()), mb(m.b.shape()), vb(m.b.shape());
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> logits(static_cast<size_t>(classes));
  Tensor gw(m.w.shape()), gb(m.b.shape());
  for (long it = 1; it <= iters; ++it) {
    gw.fill(0.0);
    gb.fill(0.0);
    for (long i = 0; i < n; ++i) {
      const double* xi = xs.data() + i * d;
      double mx = -1e300;
      for (int c = 0; c < classes; ++c) {
        double s = m.b[c];
        const double* wc = m.w.data() + c * d;
        for (long j = 0; j < d; ++j) s += wc[j] * xi[j];
        logits[static_cast<size_t>(c)] = s;
        mx = std::max(mx, s);
      }
      double z = 0;
      for (int c = 0; c < classes; ++c) {
        logits[static_cast<size_t>(c)] = std::exp(logits[static_cast<size_t>(c)] - mx);
        z += logits[static_cast<size_t>(c)];
      }
      for (int c = 0; c < classes; ++c) {
        double p = logits[static_cast<size_t>(c)] / z;
        double g = p - (y[static_cast<size_t>(i)] == c ? 1.0 : 0.0);
        double* gwc = gw.data() + c * d;
        for (long j = 0; j < d; ++j) gwc[j] += g * xi[j];
        gb[c] += g;
      }
    }
    double inv_n = 1.0 / static_cast<double>(n);
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(it));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(it));
    for (long j = 0; j < m.w.numel(); ++j) {
      double g = gw[j] * inv_n;
      mw[j] = b1 * mw[j] + (1 - b1) * g;
      vw[j] = b2 * vw[j] + (1 - b2) * g * g;
      m.w[j] -= lr * (mw[j] / bc1) / (std::sqrt(vw[j] / bc2) + eps);
    }
    for (long j = 0; j < m.b.numel(); ++j) {
      double g = gb[j] * inv_n;
      mb[j] = b1 * mb[j] + (1 - b1) * g;
      vb[j] = b2 * vb[j] + (1 - b2) * g * g;
      m.b[j] -= lr * (mb[j] / bc1) / (std::sqrt(vb[j] / bc2) + eps);
    }
  }
  return m;
}

int SoftmaxProbe::predict(const double* x, long d) const {
  int best = 0;
  double best_s = -1e300;
  for (int c = 0; c < classes; ++c) {
    double s = b[c];
    const double* wc = w.data() + c * d;
    for (long j = 0; j < d; ++j) s += wc[j] * (x[j] - feat_mean[j]) / feat_std[j];
    if (s > best_s) {
      best_s = s;
      best = c;
    }
  }
  return best;
}

double softmax_accuracy(const SoftmaxProbe& m, const Tensor& x, const std::vector<int>& y) {
  long n = x.dim(0), d = x.dim(1);
  long ok = 0;
  for (long i = 0; i < n; ++i)
    if (m.predict(x.data() + i * d, d) == y[static_cast<size_t>(i)]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Z-Diff
// ---------------------------------------------------------------------------

double zdiff_score(const LatentSource& src, const MetricConfig& cfg,
                   std::vector<std::string>* notes) {
  RngStream rng(cfg.seed, "metric.zdiff");
  std::vector<int> usable = usable_factors(src, notes);
  if (usable.size() < 2)
    throw std::invalid_argument("zdiff_score: need at least two usable factors");
  long votes = cfg.train_votes + cfg.test_votes;
  long d = src.latent_dim();
  Tensor features({votes, d});
  std::vector<int> labels(static_cast<size_t>(votes));
  for (long v = 0; v < votes; ++v) {
    int ki = static_cast<int>(rng.uniform_int(0, static_cast<long>(usable.size()) - 1));
    int k = usable[static_cast<size_t>(ki)];
    std::vector<std::vector<long>> tuples;
    tuples.reserve(static_cast<size_t>(2 * cfg.pairs_per_vote));
    for (long p = 0; p < cfg.pairs_per_vote; ++p) {
      long shared = rng.uniform_int(0, src.cardinality(k) - 1);
      std::vector<long> t1 = random_tuple(src, rng);
      std::vector<long> t2 = random_tuple(src, rng);
      t1[static_cast<size_t>(k)] = shared;
      t2[static_cast<size_t>(k)] = shared;
      tuples.push_back(std::move(t1));
      tuples.push_back(std::move(t2));
    }
    Tensor z = src.latents(tuples, rng);
    for (long j = 0; j < d; ++j) {
      double acc = 0;
      for (long p = 0; p < cfg.pairs_per_vote; ++p)
        acc += std::abs(z.at(2 * p, j) - z.at(2 * p + 1, j));
      features.at(v, j) = acc / static_cast<double>(cfg.pairs_per_vote);
    }
    labels[static_cast<size_t>(v)] = ki;
  }
  Tensor train_x({cfg.train_votes, d}), test_x({cfg.test_votes, d});
  std::vector<int> train_y, test_y;
  for (long v = 0; v < cfg.train_votes; ++v) {
    for (long j = 0; j < d; ++j) train_x.at(v, j) = features.at(v, j);
    train_y.push_back(labels[static_cast<size_t>(v)]);
  }
  for (long v = 0; v < cfg.test_votes; ++v) {
    for (long j = 0; j < d; ++j) test_x.at(v, j) = features.at(cfg.train_votes + v, j);
    test_y.push_back(labels[static_cast<size_t>(cfg.train_votes + v)]);
  }
  SoftmaxProbe probe = softmax_fit(train_x, train_y, static_cast<int>(usable.size()),
                                   cfg.softmax_iters, cfg.softmax_lr);
  return 100.0 * softmax_accuracy(probe, test_x, test_y);
}

// ---------------------------------------------------------------------------
// SAP
// ---------------------------------------------------------------------------

namespace {

double r_squared(const std::vector<double>& z, const std::vector<double>& v) {
  long n = static_cast<long>(z.size());
  double mz = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
  double mv = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double szz = 0, svv = 0, szv = 0;
  for (long i = 0; i < n; ++i) {
    double a = z[static_cast<size_t>(i)] - mz;
    double b = v[static_cast<size_t>(i)] - mv;
    szz += a * a;
    svv += b * b;
    szv += a * b;
  }
  if (szz <= 0.0 || svv <= 0.0) return 0.0;
  double r = szv / std::sqrt(szz * svv);
  return r * r;
}

// Best single-threshold rule on z predicting a discrete label: each side of
// the threshold predicts its majority class; score is balanced accuracy.
double best_threshold_balanced_acc(const std::vector<double>& z, const std::vector<long>& lab,
                                   long classes) {
  long n = static_cast<long>(z.size());
  std::vector<long> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](long a, long b) { return z[static_cast<size_t>(a)] < z[static_cast<size_t>(b)]; });
  std::vector<long> total(static_cast<size_t>(classes), 0);
  for (long l : lab) ++total[static_cast<size_t>(l)];
  std::vector<long> left(static_cast<size_t>(classes), 0);
  double best = 0.0;
  for (long i = 0; i + 1 < n; ++i) {
    ++left[static_cast<size_t>(lab[static_cast<size_t>(order[static_cast<size_t>(i)])])];
    if (z[static_cast<size_t>(order[static_cast<size_t>(i)])] ==
        z[static_cast<size_t>(order[static_cast<size_t>(i + 1)])])
      continue;  // threshold must separate distinct values
    long lc = 0, rc = 0;
    double lbest = -1, rbest = -1;
    for (long c = 0; c < classes; ++c) {
      if (total[static_cast<size_t>(c)] == 0) continue;
      double lrec = static_cast<double>(left[static_cast<size_t>(c)]) /
                    static_cast<double>(total[static_cast<size_t>(c)]);
      double rrec = 1.0 - lrec;
      if (lrec > lbest) {
        lbest = lrec;
        lc = c;
      }
      if (rrec > rbest) {
        rbest = rrec;
        rc = c;
      }
    }
    if (lc == rc) continue;
    double bal = 0.0;
    long active = 0;
    for (long c = 0; c < classes; ++c) {
      if (total[static_cast<size_t>(c)] == 0) continue;
      ++active;
      double lrec = static_cast<double>(left[static_cast<size_t>(c)]) /
                    static_cast<double>(total[static_cast<size_t>(c)]);
      if (c == lc)
        bal += lrec;
      else if (c == rc)
        bal += 1.0 - lrec;
    }
    if (active > 0) best = std::max(best, bal / static_cast<double>(active));
  }
  return best;
}

}  // namespace

double sap_score(const LatentSource& src, const MetricConfig& cfg,
                 std::vector<double>* per_factor) {
  RngStream rng(cfg.seed, "metric.sap");
  std::vector<std::string> notes;
  std::vector<int> usable = usable_factors(src, &notes);
  if (usable.empty()) throw std::invalid_argument("sap_score: no usable factors");
  long n = cfg.sap_samples;
  std::vector<std::vector<long>> tuples;
  tuples.reserve(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) tuples.push_back(random_tuple(src, rng));
  Tensor z = src.latents(tuples, rng);
  long d = z.dim(1);

  double total_gap = 0.0;
  if (per_factor) per_factor->clear();
  for (int k : usable) {
    std::vector<double> col(static_cast<size_t>(d), 0.0);
    std::vector<double> zz(static_cast<size_t>(n));
    if (src.discrete(k)) {
      std::vector<long> lab(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i)
        lab[static_cast<size_t>(i)] = tuples[static_cast<size_t>(i)][static_cast<size_t>(k)];
      long classes = src.cardinality(k);
      double chance = 1.0 / static_cast<double>(classes);
      for (long j = 0; j < d; ++j) {
        for (long i = 0; i < n; ++i) zz[static_cast<size_t>(i)] = z.at(i, j);
        double mn = *std::min_element(zz.begin(), zz.end());
        double mx = *std::max_element(zz.begin(), zz.end());
        if (mx - mn <= 0.0) {
          col[static_cast<size_t>(j)] = 0.0;  // zero-variance dim
          continue;
        }
        double bal = best_threshold_balanced_acc(zz, lab, classes);
        col[static_cast<size_t>(j)] = std::clamp(bal - chance, 0.0, 1.0);
      }
    } else {
      std::vector<double> vals(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i)
        vals[static_cast<size_t>(i)] =
            src.factor_value(k, tuples[static_cast<size_t>(i)][static_cast<size_t>(k)]);
      for (long j = 0; j < d; ++j) {
        for (long i = 0; i < n; ++i) zz[static_cast<size_t>(i)] = z.at(i, j);
        col[static_cast<size_t>(j)] = r_squared(zz, vals);
      }
    }
    double gap;
    if (d < 2) {
      gap = col[0];
    } else {
      std::nth_element(col.begin(), col.begin() + 1, col.end(), std::greater<double>());
      gap = std::max(col[0], col[1]) - std::min(col[0], col[1]);
    }
    total_gap += gap;
    if (per_factor) per_factor->push_back(gap);
  }
  return total_gap / static_cast<double>(usable.size());
}

// ---------------------------------------------------------------------------
// Factor score
// ---------------------------------------------------------------------------

double factor_score(const LatentSource& src, const MetricConfig& cfg,
                    std::vector<std::string>* notes) {
  RngStream rng(cfg.seed, "metric.factor");
  std::vector<int> usable = usable_factors(src, notes);
  if (usable.empty()) throw std::invalid_argument("factor_score: no usable factors");
  LatentStats stats = LatentStats::compute(src, cfg.stats_samples, rng);
  long d = src.latent_dim();
  std::vector<long> active;
  for (long j = 0; j < d; ++j)
    if (stats.stddev[static_cast<size_t>(j)] >= cfg.prune_std) active.push_back(j);
  if (active.empty())
    throw std::invalid_argument("factor_score: all latent dims collapsed");
  if (notes && active.size() < static_cast<size_t>(d))
    notes->push_back(std::to_string(d - static_cast<long>(active.size())) +
                     " collapsed dim(s) pruned");

  long votes = cfg.train_votes + cfg.test_votes;
  std::vector<long> vote_dim(static_cast<size_t>(votes));
  std::vector<int> vote_factor(static_cast<size_t>(votes));
  for (long v = 0; v < votes; ++v) {
    int ki = static_cast<int>(rng.uniform_int(0, static_cast<long>(usable.size()) - 1));
    int k = usable[static_cast<size_t>(ki)];
    long fixed = rng.uniform_int(0, src.cardinality(k) - 1);
    std::vector<std::vector<long>> tuples;
    tuples.reserve(static_cast<size_t>(cfg.pairs_per_vote));
    for (long p = 0; p < cfg.pairs_per_vote; ++p) {
      std::vector<long> t = random_tuple(src, rng);
      t[static_cast<size_t>(k)] = fixed;
      tuples.push_back(std::move(t));
    }
    Tensor z = src.latents(tuples, rng);
    long arg = active[0];
    double best = 1e300;
    for (long j : active) {
      double mu = 0;
      for (long p = 0; p < cfg.pairs_per_vote; ++p) mu += z.at(p, j);
      mu /= static_cast<double>(cfg.pairs_per_vote);
      double var = 0;
      for (long p = 0; p < cfg.pairs_per_vote; ++p) {
        double dl = z.at(p, j) - mu;
        var += dl * dl;
      }
      var /= static_cast<double>(cfg.pairs_per_vote);
      double sd = stats.stddev[static_cast<size_t>(j)];
      double norm_var = var / (sd * sd);
      if (norm_var < best) {  // ties keep the lowest dim index
        best = norm_var;
        arg = j;
      }
    }
    vote_dim[static_cast<size_t>(v)] = arg;
    vote_factor[static_cast<size_t>(v)] = ki;
  }
  // majority-vote map dim -> factor, fitted on the training votes
  std::vector<std::vector<long>> counts(static_cast<size_t>(d),
                                        std::vector<long>(usable.size(), 0));
  for (long v = 0; v < cfg.train_votes; ++v)
    ++counts[static_cast<size_t>(vote_dim[static_cast<size_t>(v)])]
            [static_cast<size_t>(vote_factor[static_cast<size_t>(v)])];
  std::vector<int> dim_to_factor(static_cast<size_t>(d), 0);
  for (long j = 0; j < d; ++j) {
    long best_c = -1;
    int best_f = 0;
    for (size_t f = 0; f < usable.size(); ++f)
      if (counts[static_cast<size_t>(j)][f] > best_c) {
        best_c = counts[static_cast<size_t>(j)][f];
        best_f = static_cast<int>(f);
      }
    dim_to_factor[static_cast<size_t>(j)] = best_f;
  }
  long ok = 0;
  for (long v = cfg.train_votes; v < votes; ++v)
    if (dim_to_factor[static_cast<size_t>(vote_dim[static_cast<size_t>(v)])] ==
        vote_factor[static_cast<size_t>(v)])
      ++ok;
  return static_cast<double>(ok) / static_cast<double>(cfg.test_votes);
}

// ---------------------------------------------------------------------------
// latent transfer classification
// ---------------------------------------------------------------------------

Tensor encode_means(const VaeModel& model, const Tensor& images, long batch) {
  long n = images.dim(0);
  long hw = images.dim(2) * images.dim(3);
  Tensor out({n, model.cfg.d_z});
  for (long base = 0; base < n; base += batch) {
    long m = std::min(batch, n - base);
    Tensor x({m, 1, images.dim(2), images.dim(3)});
    std::copy(images.data() + base * hw, images.data() + (base + m) * hw, x.data());
    GaussianPosterior q = encode(model, x);
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < model.cfg.d_z; ++j) out.at(base + i, j) = q.mean.at(i, j);
  }
  return out;
}

double latent_transfer_classification(const VaeModel& model, const LabeledImages& train,
                                      const LabeledImages& test, LatentSelector sel,
                                      const MetricConfig& cfg) {
  long d = model.cfg.d_z;
  long lo = 0, hi = d;
  if (sel == LatentSelector::Def) {
    lo = 0;
    hi = model.cfg.d_z_def;
  } else if (sel == LatentSelector::Cont) {
    lo = model.cfg.d_z_def;
    hi = d;
  }
  if (hi - lo <= 0)
    throw std::invalid_argument("latent_transfer_classification: selector picks no dims");
  Tensor ztr = encode_means(model, train.images, cfg.encode_batch);
  Tensor zte = encode_means(model, test.images, cfg.encode_batch);
  long w = hi - lo;
  Tensor xtr({ztr.dim(0), w}), xte({zte.dim(0), w});
  for (long i = 0; i < ztr.dim(0); ++i)
    for (long j = 0; j < w; ++j) xtr.at(i, j) = ztr.at(i, lo + j);
  for (long i = 0; i < zte.dim(0); ++i)
    for (long j = 0; j < w; ++j) xte.at(i, j) = zte.at(i, lo + j);
  int classes = 0;
  for (int y : train.labels) classes = std::max(classes, y + 1);
  for (int y : test.labels) classes = std::max(classes, y + 1);
  SoftmaxProbe probe =
      softmax_fit(xtr, train.labels, classes, cfg.softmax_iters, cfg.softmax_lr);
  return 100.0 * (1.0 - softmax_accuracy(probe, xte, test.labels));
}

// ---------------------------------------------------------------------------
// expert + confidence curve
// ---------------------------------------------------------------------------

ExpertModel ExpertModel::build(long h, long w, long width, RngStream& rng) {
  ExpertModel m;
  m.image_h = h;
  m.image_w = w;
  m.width = width;
  long ch_in = 1, hh = h, ww = w;
  int depth = std::min(h, w) >= 32 ? 3 : 2;
  for (int i = 0; i < depth; ++i) {
    long ch_out = width << i;
    m.convs.emplace_back(ch_in, ch_out, 4, 2, 1);
    ch_in = ch_out;
    hh /= 2;
    ww /= 2;
  }
  m.mid_ch = ch_in;
  m.mid_h = hh;
  m.mid_w = ww;
  m.fc = nn::Linear(ch_in * hh * ww, 1);
  for (auto& c : m.convs) c.init(rng);
  m.fc.init(rng);
  return m;
}

std::vector<nn::NamedParam> ExpertModel::named_params() {
  std::vector<nn::NamedParam> out;
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].collect("expert.conv" + std::to_string(i), out);
  fc.collect("expert.fc", out);
  return out;
}

ExpertModel::Vars ExpertModel::bind(ad::Graph& g, bool trainable) const {
  Vars v;
  auto reg = [&](const Tensor& t) {
    ad::Var var = trainable ? g.leaf(t) : g.constant(t);
    v.ordered.push_back(var);
    return var;
  };
  // sequenced so `ordered` matches named_params() order
  for (const auto& c : convs) {
    ad::Var wv = reg(c.w);
    ad::Var bv = reg(c.b);
    v.convs.emplace_back(wv, bv);
  }
  ad::Var fwv = reg(fc.w);
  ad::Var fbv = reg(fc.b);
  v.fc = {fwv, fbv};
  return v;
}

ad::Var ExpertModel::logits(ad::Graph& g, const Vars& v, ad::Var x) const {
  ad::Var h = x;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = g.conv2d(h, v.convs[i].first, v.convs[i].second, convs[i].stride, convs[i].pad);
    h = g.relu(h);
  }
  long n = g.val(x).dim(0);
  h = g.reshape(h, {n, mid_ch * mid_h * mid_w});
  return g.linear(h, v.fc.first, v.fc.second);
}

std::vector<double> ExpertModel::prob_positive(const Tensor& x) const {
  ad::Graph g;
  Vars v = bind(g, false);
  ad::Var l = logits(g, v, g.constant(x));
  const Tensor& lv = g.val(l);
  std::vector<double> out(static_cast<size_t>(lv.numel()));
  for (long i = 0; i < lv.numel(); ++i) {
    double z = lv[i];
    out[static_cast<size_t>(i)] = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                         : std::exp(z) / (1.0 + std::exp(z));
  }
  return out;
}

std::vector<CurvePoint> expert_confidence_curve(const VaeModel& decoder, const ExpertModel& expert,
                                                long t, double lo, double hi, double stride,
                                                long samples_per_point, RngStream& rng) {
  if (expert.holdout_accuracy < 0.9)
    throw std::invalid_argument("expert_confidence_curve: expert looks untrained (held-out "
                                "accuracy " + std::to_string(expert.holdout_accuracy) + ")");
  if (t < 0 || t >= decoder.cfg.d_z)
    throw std::invalid_argument("expert_confidence_curve: attribute dim out of range");
  long steps = static_cast<long>(std::floor((hi - lo) / stride + 1e-9)) + 1;
  std::vector<CurvePoint> curve;
  curve.reserve(static_cast<size_t>(steps));
  // One prior draw set shared across grid points: the sweep isolates z_t.
  Tensor base({samples_per_point, decoder.cfg.d_z});
  rng.fill_gaussian(base);
  const long bs = 256;
  for (long s = 0; s < steps; ++s) {
    double zt = lo + static_cast<double>(s) * stride;
    double acc = 0;
    for (long off = 0; off < samples_per_point; off += bs) {
      long m = std::min(bs, samples_per_point - off);
      Tensor z({m, decoder.cfg.d_z});
      for (long i = 0; i < m; ++i) {
        for (long j = 0; j < decoder.cfg.d_z; ++j) z.at(i, j) = base.at(off + i, j);
        z.at(i, t) = zt;
      }
      Tensor imgs = decode(decoder, z);
      std::vector<double> p = expert.prob_positive(imgs);
      for (double v : p) acc += 1.0 - v;
    }
    curve.push_back({zt, acc / static_cast<double>(samples_per_point)});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << "metric report\n";
  auto line = [&](const char* name, const std::optional<double>& v, const char* unit) {
    os << "  " << name << ": ";
    if (v)
      os << *v << unit << "\n";
    else
      os << "skipped\n";
  };
  line("z-diff", z_diff, "");
  line("sap", sap, "");
  line("factor", factor, "");
  line("transfer error (z)", transfer_err_all, "%");
  line("transfer error (z_def)", transfer_err_def, "%");
  line("transfer error (z_cont)", transfer_err_cont, "%");
  if (!sap_per_factor.empty()) {
    os << "  sap per factor:";
    for (double v : sap_per_factor) os << " " << v;
    os << "\n";
  }
  for (const auto& n : notes) os << "  note: " << n << "\n";
  os << "  config: " << config_echo << "\n";
  return os.str();
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "metric,value\n";
  auto row = [&](const char* name, const std::optional<double>& v) {
    if (v) os << name << "," << *v << "\n";
  };
  row("z_diff", z_diff);
  row("sap", sap);
  row("factor", factor);
  row("transfer_err_all", transfer_err_all);
  row("transfer_err_def", transfer_err_def);
  row("transfer_err_cont", transfer_err_cont);
  for (size_t i = 0; i < sap_per_factor.size(); ++i)
    os << "sap_factor_" << i << "," << sap_per_factor[i] << "\n";
  return os.str();
}

}  // namespace gvae
