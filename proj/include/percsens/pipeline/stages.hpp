#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "percsens/core/error.hpp"
#include "percsens/core/manifest.hpp"
#include "percsens/core/parallel.hpp"
#include "percsens/core/records.hpp"
#include "percsens/core/synthetic.hpp"
#include "percsens/density/density.hpp"
#include "percsens/density/descriptors.hpp"
#include "percsens/distortion/distortion.hpp"
#include "percsens/info/histogram.hpp"
#include "percsens/info/mi.hpp"
#include "percsens/metrics/metrics.hpp"
#include "percsens/pipeline/config.hpp"
#include "percsens/regression/ablation.hpp"
#include "percsens/regression/features.hpp"
#include "percsens/regression/forest.hpp"
#include "percsens/regression/functional_form.hpp"
#include "percsens/regression/lasso.hpp"
#include "percsens/regression/ols.hpp"
#include "percsens/regression/split.hpp"

namespace percsens {

/// A pipeline stage failed; carries the stage name. Exit code 3.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline std::string distorted_id(const std::string& id) { return id + ".noisy"; }

inline fs::path portable_relative(const fs::path& target, const fs::path& base) {
  const auto rel = fs::absolute(target).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal());
  return rel.empty() ? fs::absolute(target) : rel;
}

// ---------------------------------------------------------------------------
// Dataset and distortion
// ---------------------------------------------------------------------------

/// Writes `count` synthetic images and their manifest under `dir`.
inline DatasetManifest write_synthetic_dataset(const SyntheticDataset& s, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir / "images");
  DatasetManifest m;
  m.base_dir = dir;
  for (std::size_t i = 0; i < s.count; ++i) {
    const auto id = synthetic_id(i);
    const auto img = round_to_payload(synthetic_image(s.shape, derive_seed(seed, id)));
    const fs::path rel = fs::path("images") / (id + ".f32");
    write_image_payload(dir / rel, img);
    m.images.push_back({id, rel, s.shape, Range::Symmetric});
  }
  m.provenance = {{"generator", "synthetic"}, {"count", s.count}, {"seed", seed}};
  m.rebuild_index();
  save_manifest(dir / "manifest.json", m);
  return m;
}

struct DistortResult {
  DatasetManifest manifest;
  FilterSummary summary;
};

// Copies every reference (in the canonical range) and its distorted version
// into out_dir/images and returns the extended manifest (not yet saved).
// Payloads are float32, so the stored rmse is measured on the rounded values.
inline DistortResult distort_stage(const DatasetManifest& in, const DistortionConfig& cfg, const fs::path& out_dir,
                                   std::size_t threads = 0) {
  cfg.validate();
  if (!in.pairs.empty()) throw ValidationError("distort expects a manifest of reference images, but it already lists pairs");
  if (in.images.empty()) throw ValidationError("manifest has no images");
  std::set<std::string> ids;
  for (const auto& e : in.images) ids.insert(e.id);
  for (const auto& e : in.images)
    if (ids.count(distorted_id(e.id))) throw ValidationError("image id '" + distorted_id(e.id) + "' collides with a distorted id");
  fs::create_directories(out_dir / "images");

  const std::size_t n = in.images.size();
  std::vector<double> rmse(n);
  std::vector<char> keep(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto& e = in.images[i];
    const auto ref = round_to_payload(convert_range(in.load_image(e.id), Range::Symmetric));
    auto pair = distort(ref, cfg, pair_seed(cfg.seed, e.id), e.id);
    pair.distorted = round_to_payload(pair.distorted);
    rmse[i] = rmse_unit(pair.reference, pair.distorted);
    keep[i] = rmse[i] > cfg.rmse_min && (!cfg.rmse_max || rmse[i] < *cfg.rmse_max);
    if (keep[i]) {
      write_image_payload(out_dir / "images" / (e.id + ".f32"), pair.reference);
      write_image_payload(out_dir / "images" / (distorted_id(e.id) + ".f32"), pair.distorted);
    }
  });

  DistortResult r;
  auto& m = r.manifest;
  m.base_dir = out_dir;
  r.summary.input = n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = in.images[i];
    if (!keep[i]) {
      (rmse[i] > cfg.rmse_min ? r.summary.above_max : r.summary.below_min)++;
      continue;
    }
    ++r.summary.kept;
    m.images.push_back({e.id, fs::path("images") / (e.id + ".f32"), e.shape, Range::Symmetric});
    m.images.push_back({distorted_id(e.id), fs::path("images") / (distorted_id(e.id) + ".f32"), e.shape, Range::Symmetric});
    m.pairs.push_back({e.id, e.id, distorted_id(e.id), cfg.epsilon, rmse[i]});
  }
  if (in.external.logprob) m.external.logprob = portable_relative(in.resolve(*in.external.logprob), out_dir);
  for (const auto& [k, v] : in.external.distances) m.external.distances[k] = portable_relative(in.resolve(v), out_dir);
  for (const auto& [k, v] : in.external.gradients) m.external.gradients[k] = portable_relative(in.resolve(v), out_dir);
  m.provenance = {{"distortion",
                   {{"epsilon", cfg.epsilon},
                    {"seed", cfg.seed},
                    {"rmse_min", cfg.rmse_min},
                    {"rmse_max", cfg.rmse_max ? nlohmann::json(*cfg.rmse_max) : nlohmann::json(nullptr)},
                    {"noise", "uniform on the L2 sphere of radius epsilon in the [-1,1] range, then clipped to [-1,1]"},
                    {"pair_seed", "derive_seed(seed, image_id)"}}},
                  {"filter", {{"input", r.summary.input}, {"kept", r.summary.kept}, {"below_min", r.summary.below_min}, {"above_max", r.summary.above_max}}}};
  m.rebuild_index();
  return r;
}

inline ImagePair load_pair(const DatasetManifest& m, const PairEntry& p) {
  ImagePair out;
  out.pair_id = p.pair_id;
  out.reference = convert_range(m.load_image(p.reference), Range::Symmetric);
  out.distorted = convert_range(m.load_image(p.distorted), Range::Symmetric);
  if (out.reference.shape() != out.distorted.shape()) throw ValidationError("pair '" + p.pair_id + "': shape mismatch");
  out.epsilon = p.epsilon;
  out.rmse = rmse_unit(out.reference, out.distorted);
  return out;
}

inline std::vector<std::string> pair_ids(const DatasetManifest& m) {
  std::vector<std::string> ids;
  for (const auto& p : m.pairs) ids.push_back(p.pair_id);
  return ids;
}

// ---------------------------------------------------------------------------
// Distances and sensitivities
// ---------------------------------------------------------------------------

struct MetricsStageResult {
  std::vector<SensitivityRow> rows;  // metric-major, pairs in manifest order
  std::vector<std::string> warnings;
};

inline MetricsStageResult metrics_stage(const DatasetManifest& m, const std::vector<MetricSpec>& metrics, std::size_t threads = 0) {
  if (m.pairs.empty()) throw ValidationError("manifest has no pairs; run distort first");
  if (metrics.empty()) throw ValidationError("no metrics requested");
  const std::size_t n = m.pairs.size();
  std::vector<std::vector<double>> dist(metrics.size(), std::vector<double>(n, missing_value()));
  std::vector<double> norm(n), rmse(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto pair = load_pair(m, m.pairs[i]);
    rmse[i] = pair.rmse;
    norm[i] = std::sqrt(squared_distance(pair.reference, pair.distorted));
    for (std::size_t k = 0; k < metrics.size(); ++k)
      if (metrics[k].builtin()) dist[k][i] = metrics[k].evaluate(pair.reference, pair.distorted);
  });
  MetricsStageResult r;
  const auto ids = pair_ids(m);
  for (std::size_t k = 0; k < metrics.size(); ++k) {
    if (!metrics[k].builtin()) {
      const auto ext = ingest_external_distances(metrics[k].external_file, metrics[k].name, ids);
      for (std::size_t i = 0; i < n; ++i)
        if (auto it = ext.distance.find(ids[i]); it != ext.distance.end()) dist[k][i] = it->second;
      if (!ext.missing.empty())
        r.warnings.push_back("metric '" + metrics[k].name + "': no distance for " + std::to_string(ext.missing.size()) +
                             " pair(s), first '" + ext.missing.front() + "'");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (is_missing(dist[k][i])) continue;
      if (norm[i] == 0.0) {
        r.warnings.push_back("pair '" + ids[i] + "': identical images, sensitivity undefined");
        continue;
      }
      r.rows.push_back({ids[i], metrics[k].name, dist[k][i], rmse[i], dist[k][i] / norm[i]});
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Density model and surrogates
// ---------------------------------------------------------------------------

struct DensityStageResult {
  std::unique_ptr<DensityModel> model;
  nlohmann::json info = nlohmann::json::object();
  std::vector<std::string> warnings;
};

// "gaussian" fits on the pair references and, when save_dir is given, writes
// the fit to save_dir/gaussian.bin.
inline DensityStageResult make_density(const DensitySpec& spec, const DatasetManifest& m, const fs::path& save_dir = {}) {
  if (m.pairs.empty()) throw ValidationError("manifest has no pairs; run distort first");
  DensityStageResult r;
  const auto dim = m.image(m.pairs.front().reference).shape.size();
  if (spec.kind == "gaussian") {
    std::vector<ImageTensor> refs;
    for (const auto& p : m.pairs) refs.push_back(convert_range(m.load_image(p.reference), Range::Symmetric));
    auto g = fit_gaussian(refs, spec.fit);
    if (!save_dir.empty()) {
      fs::create_directories(save_dir);
      g.save(save_dir / "gaussian.bin");
    }
    r.info = {{"kind", "gaussian"}, {"fit_on", "pair references"}, {"n_fit", refs.size()}, {"dimension", dim},
              {"alpha", spec.fit.alpha}, {"variance_floor", spec.fit.variance_floor},
              {"covariance", "(1-alpha) S + alpha max(tr(S)/d, variance_floor) I, S the MLE covariance"}};
    r.model = std::make_unique<GaussianDensity>(std::move(g));
  } else if (spec.kind == "gaussian-file") {
    auto g = GaussianDensity::load(spec.file);
    if (g.dimension() != dim)
      throw ValidationError("gaussian fit '" + spec.file.string() + "' has dimension " + std::to_string(g.dimension()) +
                            ", images have " + std::to_string(dim));
    r.info = {{"kind", "gaussian-file"}, {"file", spec.file.filename().string()}, {"dimension", dim}};
    r.model = std::make_unique<GaussianDensity>(std::move(g));
  } else if (spec.kind == "external") {
    std::vector<std::string> want;
    for (const auto& p : m.pairs) {
      want.push_back(p.reference);
      want.push_back(p.distorted);
    }
    auto ing = read_logprob_csv(spec.file, want);
    r.warnings = ing.warnings;
    std::map<std::string, fs::path> grads;
    for (const auto& [id, path] : m.external.gradients) grads[id] = m.resolve(path);
    r.info = {{"kind", "external"}, {"file", spec.file.filename().string()}, {"units", "nats"},
              {"gradients", grads.size()}, {"off_sample", false}};
    r.model = std::make_unique<ExternalLogProbTable>(std::move(ing.logp), std::move(grads), dim);
  } else {
    throw ValidationError("unknown density kind '" + spec.kind + "'");
  }
  return r;
}

inline std::vector<DescriptorRecord> surrogates_stage(const DatasetManifest& m, const DensityModel& model,
                                                      const DescriptorOptions& opt, std::size_t threads = 0) {
  if (m.pairs.empty()) throw ValidationError("manifest has no pairs; run distort first");
  std::vector<DescriptorRecord> out(m.pairs.size());
  parallel_for(m.pairs.size(), threads, [&](std::size_t i) {
    const auto& p = m.pairs[i];
    out[i] = descriptor_record(model, load_pair(m, p), opt, p.reference, p.distorted);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Analyses on the joined table
// ---------------------------------------------------------------------------

inline std::vector<std::string> table_metrics(const DataTable& t) {
  std::vector<std::string> out;
  for (const auto& c : t.columns_with_prefix("sens_")) out.push_back(c.substr(5));
  return out;
}

/// Descriptor columns with at least two distinct present values.
inline std::vector<std::string> usable_descriptors(const DataTable& t, std::vector<std::string>* dropped = nullptr) {
  std::vector<std::string> out;
  for (const auto& f : DescriptorRecord::kFields) {
    const std::string name(f);
    if (!t.has(name)) continue;
    std::set<double> distinct;
    for (double v : t.column(name)) {
      if (!is_missing(v)) distinct.insert(v);
      if (distinct.size() > 1) break;
    }
    if (distinct.size() > 1)
      out.push_back(name);
    else if (dropped)
      dropped->push_back(name);
  }
  return out;
}

// Free text destined for an unquoted CSV cell.
inline std::string csv_text(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '"' || c == '\n' || c == '\r') c = c == ',' ? ';' : ' ';
  return s;
}

inline std::string join_names(const std::vector<std::string>& v, const char* sep = "+") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

struct MiStageOptions {
  RbigConfig rbig;
  int max_factors = 6;
  std::size_t threads = 0;
};

// mi/<metric>_sweep.csv (every candidate set), mi/<metric>_table3.csv (best
// set per size), mi/<metric>_pairs.csv (pairwise matrix, upper triangle).
inline nlohmann::json mi_stage(const DataTable& t, const std::vector<std::string>& metrics, const MiStageOptions& opt,
                               const fs::path& dir, std::vector<std::string>& warnings) {
  fs::create_directories(dir);
  nlohmann::json info = nlohmann::json::object();
  std::vector<std::string> dropped;
  const auto cols = usable_descriptors(t, &dropped);
  for (const auto& d : dropped) warnings.push_back("mi: descriptor '" + d + "' has no variation and is skipped");
  for (const auto& metric : metrics) {
    SweepOptions so;
    so.descriptors = cols;
    so.max_factors = std::min<int>(opt.max_factors, static_cast<int>(cols.size()));
    so.threads = opt.threads;
    const auto sweep = factor_sweep(t, metric, opt.rbig, so);
    {
      CsvWriter w(dir / (metric + "_sweep.csv"));
      w.header({"metric", "size", "factors", "icc", "mi_nats", "mi_bits", "mi_raw_nats", "selected"});
      for (const auto& c : sweep.evaluated)
        w.row_strings({metric, std::to_string(c.size), join_names(c.factors), format_number(c.icc), format_number(c.mi_nats),
                       format_number(c.mi_nats / std::numbers::ln2), format_number(c.mi_raw), c.selected ? "1" : "0"});
    }
    {
      CsvWriter w(dir / (metric + "_table3.csv"));
      w.header({"metric", "size", "added", "factors", "icc", "mi_nats", "mi_bits"});
      for (const auto& c : sweep.best)
        w.row_strings({metric, std::to_string(c.size), c.factors.back(), join_names(c.factors), format_number(c.icc),
                       format_number(c.mi_nats), format_number(c.mi_nats / std::numbers::ln2)});
    }
    const auto pairs = pairwise_icc(t, metric, opt.rbig, cols, opt.threads);
    {
      CsvWriter w(dir / (metric + "_pairs.csv"));
      w.header({"metric", "factor_i", "factor_j", "icc", "mi_nats", "mi_bits"});
      for (const auto& p : pairs)
        w.row_strings({metric, p.factor_i, p.factor_j, format_number(p.icc), format_number(p.mi_nats),
                       format_number(p.mi_nats / std::numbers::ln2)});
    }
    info[metric] = {{"n_samples", sweep.n_samples}, {"candidates", sweep.candidates}};
  }
  return info;
}

// hist/<metric>__<descriptor>.csv plus hist/correlations.csv.
inline nlohmann::json hist_stage(const DataTable& t, const std::vector<std::string>& metrics, int bins, const fs::path& dir,
                                 std::vector<std::string>& warnings) {
  fs::create_directories(dir);
  CsvWriter corr(dir / "correlations.csv");
  corr.header({"metric", "descriptor", "n", "pearson", "spearman", "empty_columns"});
  for (const auto& metric : metrics) {
    for (const auto& d : usable_descriptors(t)) {
      const auto sub = t.complete_rows({d, sensitivity_column(metric)});
      try {
        const auto h = conditional_histogram(sub.column(d), sub.column(sensitivity_column(metric)), bins);
        write_conditional_histogram_csv(dir / (metric + "__" + d + ".csv"), h, d, metric);
        const auto empty = std::count(h.empty_column.begin(), h.empty_column.end(), true);
        corr.row_strings({metric, d, std::to_string(h.n_samples), format_number(h.corr.pearson), format_number(h.corr.spearman),
                          std::to_string(empty)});
      } catch (const NumericalError& e) {
        warnings.push_back("hist " + metric + "/" + d + ": " + e.what());
      }
    }
  }
  return {{"bins", bins}, {"x_binning", "equal population (quantile edges)"}, {"s_binning", "equal width over [P1, P99], outliers clipped into end bins"}};
}

struct RegressionStageOptions {
  std::vector<FitSpec> fits;
  ForestParams forest;
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
  bool ablation = true;
  std::size_t threads = 0;
};

inline void write_coefficients_csv(const fs::path& path, const std::vector<std::string>& names, const Eigen::VectorXd& coef) {
  CsvWriter w(path);
  w.header({"term", "coefficient"});
  for (std::size_t j = 0; j < names.size(); ++j) w.row_strings({names[j], format_number(coef(static_cast<Eigen::Index>(j)))});
}

inline void write_importances_csv(const fs::path& path, const std::vector<std::string>& names, const std::vector<double>& imp) {
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
  CsvWriter w(path);
  w.header({"rank", "feature", "importance"});
  for (std::size_t k = 0; k < order.size(); ++k)
    w.row_strings({std::to_string(k + 1), names[order[k]], format_number(imp[order[k]])});
}

struct FitOutcome {
  std::string metric, fit, model;
  std::size_t n_train = 0, n_test = 0;
  Correlations test{std::nan(""), std::nan("")};
  std::vector<std::string> notes;
};

// Fits one model for one metric on a seeded split and writes its
// coefficients or importances under dir.
inline FitOutcome run_fit(const DataTable& t, const std::string& metric, const FitSpec& fit, const RegressionStageOptions& opt,
                          const fs::path& dir) {
  FitOutcome o;
  o.metric = metric;
  o.fit = fit.name;
  o.model = fit.model;
  FeatureSpec spec = fit.spec;
  if (fit.spec_source == "poly2") spec = polynomial_spec(usable_descriptors(t));
  auto required = spec.columns();
  required.push_back(sensitivity_column(metric));
  const auto data = t.complete_rows(required);
  const auto design = expand_features(data, spec);
  const auto& ycol = data.column(sensitivity_column(metric));
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ycol.data(), static_cast<Eigen::Index>(ycol.size()));
  const auto split = train_test_split(data.rows(), opt.test_fraction, derive_seed(opt.seed, "split"));
  o.n_train = split.train.size();
  o.n_test = split.test.size();
  const auto xtr = select_rows(design.x, split.train), xte = select_rows(design.x, split.test);
  const auto ytr = select_rows(y, split.train), yte = select_rows(y, split.test);
  if (fit.model == "rf" && xtr.rows() < kForestMinRows) {
    o.notes.push_back("skipped: forest needs at least " + std::to_string(kForestMinRows) + " training rows, got " +
                      std::to_string(xtr.rows()));
    return o;
  }
  Eigen::VectorXd pred;
  const auto stem = dir / (metric + "_" + fit.name);
  if (fit.model == "ols") {
    const auto r = fit_ols(xtr, ytr, {fit.allow_rank_deficient});
    o.notes = r.warnings;
    pred = r.predict(xte);
    write_coefficients_csv(stem.string() + "_coef.csv", design.names, r.coef);
  } else if (fit.model == "lasso") {
    // The bias term, if listed, is the unpenalized intercept.
    std::vector<Eigen::Index> pen;
    std::vector<std::string> pen_names;
    for (std::size_t j = 0; j < spec.terms.size(); ++j)
      if (spec.terms[j].kind != TermKind::Bias) {
        pen.push_back(static_cast<Eigen::Index>(j));
        pen_names.push_back(design.names[j]);
      }
    Eigen::MatrixXd ptr(xtr.rows(), static_cast<Eigen::Index>(pen.size())), pte(xte.rows(), static_cast<Eigen::Index>(pen.size()));
    for (std::size_t k = 0; k < pen.size(); ++k) {
      ptr.col(static_cast<Eigen::Index>(k)) = xtr.col(pen[k]);
      pte.col(static_cast<Eigen::Index>(k)) = xte.col(pen[k]);
    }
    const auto r = fit_lasso(ptr, ytr, fit.lambda);
    o.notes = r.warnings;
    pred = r.predict(pte);
    Eigen::VectorXd coef(static_cast<Eigen::Index>(pen.size()) + 1);
    coef << r.intercept, r.coef;
    std::vector<std::string> names{"intercept"};
    names.insert(names.end(), pen_names.begin(), pen_names.end());
    write_coefficients_csv(stem.string() + "_coef.csv", names, coef);
    o.notes.push_back("lambda_max " + format_number(r.lambda_max) + "; active " + std::to_string(r.active.size()));
  } else {
    const auto m = fit_random_forest(xtr, ytr, opt.forest, derive_seed(opt.seed, "forest:" + metric + ":" + fit.name));
    pred = m.predict(xte);
    write_importances_csv(stem.string() + "_importances.csv", design.names, m.importances);
    if (m.importances_degenerate) o.notes.push_back("all importances are zero (constant response)");
  }
  try {
    o.test = correlations(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                          std::span<const double>(yte.data(), static_cast<std::size_t>(yte.size())));
  } catch (const NumericalError& e) {
    o.notes.push_back(std::string("held-out correlation undefined: ") + e.what());
  }
  return o;
}

inline void write_fit_summary(const fs::path& path, const std::vector<FitOutcome>& outcomes, std::vector<std::string>& warnings) {
  CsvWriter w(path);
  w.header({"metric", "fit", "model", "n_train", "n_test", "pearson", "spearman", "notes"});
  for (const auto& o : outcomes) {
    w.row_strings({o.metric, o.fit, o.model, std::to_string(o.n_train), std::to_string(o.n_test), format_number(o.test.pearson),
                   format_number(o.test.spearman), csv_text(join_names(o.notes, "; "))});
    for (const auto& n : o.notes) warnings.push_back("fit " + o.metric + "/" + o.fit + ": " + n);
  }
}

inline std::optional<std::string> registry_name_for(const std::string& metric) {
  try {
    return canonical_iqm(metric);
  } catch (const ValidationError&) {
    return std::nullopt;
  }
}

// regression/summary.csv, per-fit coefficient / importance files, the
// ablation tables and the published functional forms scored on the
// held-out split.
inline nlohmann::json regression_stage(const DataTable& t, const std::vector<std::string>& metrics, const RegressionStageOptions& opt,
                                       const fs::path& dir, std::vector<std::string>& warnings) {
  fs::create_directories(dir);
  std::vector<FitOutcome> outcomes;
  for (const auto& fit : opt.fits) {
    const auto targets = fit.metrics.empty() ? metrics : fit.metrics;
    for (const auto& metric : targets) outcomes.push_back(run_fit(t, metric, fit, opt, dir));
  }
  write_fit_summary(dir / "summary.csv", outcomes, warnings);

  nlohmann::json info = {{"fits", outcomes.size()}, {"split_seed", "derive_seed(seed, \"split\")"}};
  const bool have_ps = t.has("logp_xt") && t.has("sigma_x");
  {
    CsvWriter w(dir / "functional_forms.csv");
    w.header({"metric", "iqm", "form", "provenance", "b", "w1", "w2", "w3", "n_test", "pearson", "spearman"});
    for (const auto& metric : metrics) {
      const auto iqm = registry_name_for(metric);
      if (!iqm || !have_ps) continue;
      const auto data = t.complete_rows({"logp_xt", "sigma_x", sensitivity_column(metric)});
      const auto split = train_test_split(data.rows(), opt.test_fraction, derive_seed(opt.seed, "split"));
      for (Form form : {Form::Eq3, Form::Eq4}) {
        const auto m = functional_form_registry(*iqm, form);
        std::vector<double> pred, truth;
        for (auto i : split.test) {
          const double p = data.column("logp_xt")[i];
          pred.push_back(form == Form::Eq3 ? predict_sensitivity(m, p) : predict_sensitivity(m, p, data.column("sigma_x")[i]));
          truth.push_back(data.column(sensitivity_column(metric))[i]);
        }
        Correlations c{std::nan(""), std::nan("")};
        try {
          c = correlations(pred, truth);
        } catch (const NumericalError&) {
        }
        w.row_strings({metric, *iqm, to_string(form), m.provenance, format_number(m.coef[0]), format_number(m.coef[1]),
                       format_number(m.coef[2]), m.coef.size() > 3 ? format_number(m.coef[3]) : "NA",
                       std::to_string(split.test.size()), format_number(c.pearson), format_number(c.spearman)});
      }
    }
  }

  if (opt.ablation && have_ps) {
    AblationOptions ao;
    ao.metrics = metrics;
    ao.test_fraction = opt.test_fraction;
    ao.seed = opt.seed;
    ao.threads = opt.threads;
    const auto rep = ablation_study(t, ao);
    write_ablation_csv(dir / "ablation.csv", rep, rep.rows);
    write_ablation_csv(dir / "ablation_candidates.csv", rep, rep.candidates);
    for (const auto& wmsg : rep.warnings) warnings.push_back("ablation: " + wmsg);
    std::vector<int> missing = rep.lasso_sizes_missing;
    info["ablation"] = {{"n_train", rep.n_train}, {"n_test", rep.n_test}, {"lasso_sizes_missing", missing},
                        {"tie_tolerance", ao.tie_tolerance}, {"lasso_rows", "bias implicit (b=0), count = active penalized terms"}};
  } else if (opt.ablation) {
    warnings.push_back("ablation skipped: logp_xt or sigma_x missing");
  }
  return info;
}

}  // namespace percsens
