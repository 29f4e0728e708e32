#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "percsens/core/error.hpp"
#include "percsens/core/io.hpp"
#include "percsens/density/descriptors.hpp"
#include "percsens/distortion/distortion.hpp"
#include "percsens/info/rbig.hpp"
#include "percsens/metrics/metrics.hpp"
#include "percsens/regression/features.hpp"
#include "percsens/regression/forest.hpp"

namespace percsens {

struct SyntheticDataset {
  std::size_t count = 50;
  Shape shape{32, 32, 3};
};

struct DensitySpec {
  std::string kind = "gaussian";  // gaussian (fit on the references), gaussian-file, external
  fs::path file;                  // gaussian-file / external
  GaussianFitOptions fit;
};

struct FitSpec {
  std::string name;
  std::string model = "ols";      // ols | lasso | rf
  FeatureSpec spec;
  std::string spec_source;        // text form recorded in metadata
  std::vector<std::string> metrics;  // empty: every metric
  double lambda = 0.0;
  bool allow_rank_deficient = false;
};

// Whole-run configuration (JSON). Every field has a default; the effective
// values are written back into run_metadata.json.
//
//   {
//     "seed": 1,
//     "output_dir": "out",
//     "dataset": {"manifest": "data/manifest.json"}
//                | {"synthetic": {"count": 50, "shape": [32, 32, 3]}},
//     "distortion": {"epsilon": 0.2, "rmse_min": 0, "rmse_max": null},
//     "metrics": ["msssim", "nlpd", "rmse", "lpips=external:lpips.csv"],
//     "metric_params": {"msssim": {"scales": 3}},
//     "density": {"model": "gaussian", "alpha": 0.1, "variance_floor": 1e-6}
//              | {"model": "gaussian:fit.bin"} | {"model": "external:logp.csv"},
//     "descriptors": {"path_steps": 64},
//     "rbig": {"n_layers": 100, "marginal_bins": 100, "tc_tolerance": 1e-3,
//              "patience": 5, "min_samples": 100, "null_correction": true,
//              "noise_z": 2},
//     "mi": {"enabled": true, "max_factors": 6},
//     "histogram": {"enabled": true, "bins": 30},
//     "regression": {"test_fraction": 0.3,
//                    "forest": {"n_trees": 200, ...},
//                    "fits": [{"name": "eq3", "model": "ols", "terms": ["b", "p", "p^2"]}],
//                    "ablation": {"enabled": true}}
//   }
//
// Relative paths resolve against the config file's directory.
struct RunConfig {
  std::uint64_t seed = 0;
  fs::path output_dir;
  std::optional<fs::path> manifest;
  std::optional<SyntheticDataset> synthetic;
  DistortionConfig distortion;
  std::vector<MetricSpec> metrics;
  std::vector<std::string> metric_texts;
  nlohmann::json metric_params = nlohmann::json::object();
  DensitySpec density;
  DescriptorOptions descriptors;
  RbigConfig rbig;
  bool mi_enabled = true;
  int max_factors = 6;
  bool hist_enabled = true;
  int hist_bins = 30;
  double test_fraction = 0.3;
  ForestParams forest;
  std::vector<FitSpec> fits;
  bool ablation_enabled = true;

  nlohmann::json to_json() const;
};

inline std::vector<FitSpec> default_fits() {
  auto make = [](std::string name, std::string model, std::string text) {
    FitSpec f;
    f.name = std::move(name);
    f.model = std::move(model);
    f.spec_source = std::move(text);
    if (f.spec_source != "poly2") f.spec = parse_feature_spec(f.spec_source, f.name);
    return f;
  };
  return {make("rf_poly2", "rf", "poly2"), make("eq3", "ols", "b\np\np^2\n"), make("eq4", "ols", "b\np\np^2\ns\n")};
}

/// Descriptors, their squares and pairwise products (order-2 polynomial).
inline FeatureSpec polynomial_spec(const std::vector<std::string>& cols) {
  FeatureSpec s;
  for (const auto& c : cols) s.terms.push_back(FeatureTerm::identity(c));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    s.terms.push_back(FeatureTerm::pow(cols[i], 2));
    for (std::size_t j = i + 1; j < cols.size(); ++j) s.terms.push_back(FeatureTerm::product(cols[i], cols[j]));
  }
  return s;
}

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ValidationError("config: " + where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) throw ValidationError("config: unknown key " + where + "." + it.key());
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T def, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("config: " + where + "." + key + " has the wrong type");
  }
}

inline fs::path resolve_path(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ValidationError("config: " + what + " '" + p.string() + "' does not exist");
}

}  // namespace detail

// Parses and validates everything (including that referenced files exist)
// before any computation starts.
inline RunConfig parse_run_config(const nlohmann::json& doc, const fs::path& base_dir) {
  using detail::get_or;
  detail::check_keys(doc, "config", {"seed", "output_dir", "dataset", "distortion", "metrics", "metric_params", "density",
                                     "descriptors", "rbig", "mi", "histogram", "regression"});
  RunConfig c;
  if (!doc.contains("seed")) throw ValidationError("config: seed must be set");
  c.seed = get_or<std::uint64_t>(doc, "seed", 0, "config");
  if (doc.contains("output_dir")) c.output_dir = detail::resolve_path(base_dir, get_or<std::string>(doc, "output_dir", "", "config"));

  const auto ds = doc.value("dataset", nlohmann::json::object());
  detail::check_keys(ds, "dataset", {"manifest", "synthetic"});
  if (ds.contains("manifest") == ds.contains("synthetic"))
    throw ValidationError("config: dataset needs exactly one of 'manifest' or 'synthetic'");
  if (ds.contains("manifest")) {
    c.manifest = detail::resolve_path(base_dir, get_or<std::string>(ds, "manifest", "", "dataset"));
    detail::require_file(*c.manifest, "manifest");
  } else {
    const auto& sy = ds.at("synthetic");
    detail::check_keys(sy, "dataset.synthetic", {"count", "shape"});
    SyntheticDataset s;
    s.count = get_or<std::size_t>(sy, "count", s.count, "dataset.synthetic");
    const auto sh = get_or<std::vector<int>>(sy, "shape", {32, 32, 3}, "dataset.synthetic");
    if (sh.size() != 3 || sh[0] < 1 || sh[1] < 1 || sh[2] < 1) throw ValidationError("config: dataset.synthetic.shape must be [h,w,c]");
    s.shape = {sh[0], sh[1], sh[2]};
    if (s.count < 2) throw ValidationError("config: dataset.synthetic.count must be >= 2");
    c.synthetic = s;
  }

  const auto dc = doc.value("distortion", nlohmann::json::object());
  detail::check_keys(dc, "distortion", {"epsilon", "rmse_min", "rmse_max"});
  c.distortion.epsilon = get_or<double>(dc, "epsilon", c.distortion.epsilon, "distortion");
  c.distortion.rmse_min = get_or<double>(dc, "rmse_min", c.distortion.rmse_min, "distortion");
  if (dc.contains("rmse_max") && !dc.at("rmse_max").is_null()) c.distortion.rmse_max = get_or<double>(dc, "rmse_max", 0.0, "distortion");
  c.distortion.seed = c.seed;
  c.distortion.validate();

  c.metric_texts = get_or<std::vector<std::string>>(doc, "metrics", {"msssim", "nlpd"}, "config");
  if (c.metric_texts.empty()) throw ValidationError("config: metrics must not be empty");
  c.metric_params = doc.value("metric_params", nlohmann::json::object());
  if (!c.metric_params.is_object()) throw ValidationError("config: metric_params must be an object");
  std::set<std::string> names;
  for (const auto& t : c.metric_texts) {
    auto probe = parse_metric_spec(t);
    auto spec = parse_metric_spec(t, c.metric_params.value(probe.name, nlohmann::json::object()));
    if (spec.kind == MetricKind::External) {
      spec.external_file = detail::resolve_path(base_dir, spec.external_file);
      detail::require_file(spec.external_file, "external distance file");
    }
    if (!names.insert(spec.name).second) throw ValidationError("config: duplicate metric name '" + spec.name + "'");
    c.metrics.push_back(std::move(spec));
  }
  for (auto it = c.metric_params.begin(); it != c.metric_params.end(); ++it)
    if (!names.count(it.key())) throw ValidationError("config: metric_params for unknown metric '" + it.key() + "'");

  const auto dn = doc.value("density", nlohmann::json::object());
  detail::check_keys(dn, "density", {"model", "alpha", "variance_floor"});
  const auto model = get_or<std::string>(dn, "model", "gaussian", "density");
  if (model == "gaussian") {
    c.density.kind = "gaussian";
  } else if (model.rfind("gaussian:", 0) == 0) {
    c.density.kind = "gaussian-file";
    c.density.file = detail::resolve_path(base_dir, model.substr(9));
    detail::require_file(c.density.file, "gaussian fit");
  } else if (model.rfind("external:", 0) == 0) {
    c.density.kind = "external";
    c.density.file = detail::resolve_path(base_dir, model.substr(9));
    detail::require_file(c.density.file, "log-probability table");
  } else {
    throw ValidationError("config: unknown density model '" + model + "' (expected gaussian, gaussian:FILE or external:FILE)");
  }
  c.density.fit.alpha = get_or<double>(dn, "alpha", c.density.fit.alpha, "density");
  c.density.fit.variance_floor = get_or<double>(dn, "variance_floor", c.density.fit.variance_floor, "density");
  if (!(c.density.fit.alpha >= 0.0 && c.density.fit.alpha <= 1.0)) throw ValidationError("config: density.alpha must be in [0,1]");
  if (!(c.density.fit.variance_floor > 0.0)) throw ValidationError("config: density.variance_floor must be > 0");

  const auto de = doc.value("descriptors", nlohmann::json::object());
  detail::check_keys(de, "descriptors", {"path_steps"});
  c.descriptors.path_steps = get_or<int>(de, "path_steps", c.descriptors.path_steps, "descriptors");
  if (c.descriptors.path_steps < 1) throw ValidationError("config: descriptors.path_steps must be >= 1");

  const auto rb = doc.value("rbig", nlohmann::json::object());
  detail::check_keys(rb, "rbig", {"n_layers", "marginal_bins", "tc_tolerance", "patience", "min_samples", "null_correction", "noise_z"});
  c.rbig.n_layers = get_or<int>(rb, "n_layers", c.rbig.n_layers, "rbig");
  c.rbig.marginal_bins = get_or<int>(rb, "marginal_bins", c.rbig.marginal_bins, "rbig");
  c.rbig.tc_tolerance = get_or<double>(rb, "tc_tolerance", c.rbig.tc_tolerance, "rbig");
  c.rbig.patience = get_or<int>(rb, "patience", c.rbig.patience, "rbig");
  c.rbig.min_samples = get_or<std::size_t>(rb, "min_samples", c.rbig.min_samples, "rbig");
  c.rbig.null_correction = get_or<bool>(rb, "null_correction", c.rbig.null_correction, "rbig");
  c.rbig.noise_z = get_or<double>(rb, "noise_z", c.rbig.noise_z, "rbig");
  c.rbig.rotation_seed = derive_seed(c.seed, "rbig");
  c.rbig.validate();

  const auto mi = doc.value("mi", nlohmann::json::object());
  detail::check_keys(mi, "mi", {"enabled", "max_factors"});
  c.mi_enabled = get_or<bool>(mi, "enabled", c.mi_enabled, "mi");
  c.max_factors = get_or<int>(mi, "max_factors", c.max_factors, "mi");
  if (c.max_factors < 1) throw ValidationError("config: mi.max_factors must be >= 1");

  const auto hi = doc.value("histogram", nlohmann::json::object());
  detail::check_keys(hi, "histogram", {"enabled", "bins"});
  c.hist_enabled = get_or<bool>(hi, "enabled", c.hist_enabled, "histogram");
  c.hist_bins = get_or<int>(hi, "bins", c.hist_bins, "histogram");
  if (c.hist_bins < 2) throw ValidationError("config: histogram.bins must be >= 2");

  const auto rg = doc.value("regression", nlohmann::json::object());
  detail::check_keys(rg, "regression", {"test_fraction", "forest", "fits", "ablation"});
  c.test_fraction = get_or<double>(rg, "test_fraction", c.test_fraction, "regression");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ValidationError("config: regression.test_fraction must be in (0,1)");
  const auto fo = rg.value("forest", nlohmann::json::object());
  detail::check_keys(fo, "regression.forest", {"n_trees", "max_depth", "min_samples_leaf", "bootstrap", "bootstrap_fraction", "max_features"});
  c.forest.n_trees = get_or<int>(fo, "n_trees", c.forest.n_trees, "regression.forest");
  c.forest.max_depth = get_or<int>(fo, "max_depth", c.forest.max_depth, "regression.forest");
  c.forest.min_samples_leaf = get_or<int>(fo, "min_samples_leaf", c.forest.min_samples_leaf, "regression.forest");
  c.forest.bootstrap = get_or<bool>(fo, "bootstrap", c.forest.bootstrap, "regression.forest");
  c.forest.bootstrap_fraction = get_or<double>(fo, "bootstrap_fraction", c.forest.bootstrap_fraction, "regression.forest");
  c.forest.max_features = get_or<int>(fo, "max_features", c.forest.max_features, "regression.forest");
  c.forest.test_fraction = c.test_fraction;
  c.forest.validate();

  if (rg.contains("fits")) {
    const auto& fits = rg.at("fits");
    if (!fits.is_array()) throw ValidationError("config: regression.fits must be an array");
    std::set<std::string> fit_names;
    for (std::size_t i = 0; i < fits.size(); ++i) {
      const std::string where = "regression.fits[" + std::to_string(i) + "]";
      detail::check_keys(fits[i], where, {"name", "model", "terms", "spec_file", "metrics", "lambda", "allow_rank_deficient"});
      FitSpec f;
      f.model = get_or<std::string>(fits[i], "model", "ols", where);
      if (f.model != "ols" && f.model != "lasso" && f.model != "rf")
        throw ValidationError("config: " + where + ".model must be ols, lasso or rf");
      f.name = get_or<std::string>(fits[i], "name", f.model + "_" + std::to_string(i), where);
      validate_field(f.name, where + ".name");
      if (!fit_names.insert(f.name).second) throw ValidationError("config: duplicate fit name '" + f.name + "'");
      if (fits[i].contains("terms") == fits[i].contains("spec_file"))
        throw ValidationError("config: " + where + " needs exactly one of 'terms' or 'spec_file'");
      if (fits[i].contains("terms")) {
        const auto terms = get_or<std::vector<std::string>>(fits[i], "terms", {}, where);
        if (terms.size() == 1 && terms[0] == "poly2") {
          f.spec_source = "poly2";
        } else {
          for (const auto& t : terms) f.spec_source += t + "\n";
          f.spec = parse_feature_spec(f.spec_source, where);
        }
      } else {
        const auto path = detail::resolve_path(base_dir, get_or<std::string>(fits[i], "spec_file", "", where));
        detail::require_file(path, "feature spec");
        f.spec_source = read_text_file(path);
        f.spec = parse_feature_spec(f.spec_source, path.string());
      }
      f.metrics = get_or<std::vector<std::string>>(fits[i], "metrics", {}, where);
      for (const auto& m : f.metrics)
        if (!names.count(m)) throw ValidationError("config: " + where + " references unknown metric '" + m + "'");
      f.lambda = get_or<double>(fits[i], "lambda", 0.0, where);
      if (!(f.lambda >= 0.0)) throw ValidationError("config: " + where + ".lambda must be >= 0");
      f.allow_rank_deficient = get_or<bool>(fits[i], "allow_rank_deficient", false, where);
      c.fits.push_back(std::move(f));
    }
  } else {
    c.fits = default_fits();
  }
  const auto ab = rg.value("ablation", nlohmann::json::object());
  detail::check_keys(ab, "regression.ablation", {"enabled"});
  c.ablation_enabled = get_or<bool>(ab, "enabled", c.ablation_enabled, "regression.ablation");
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config '" + path.string() + "': " + e.what());
  }
  return parse_run_config(doc, fs::absolute(path).parent_path());
}

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  if (manifest) j["dataset"] = {{"manifest", manifest->filename().string()}};
  if (synthetic) j["dataset"] = {{"synthetic", {{"count", synthetic->count}, {"shape", {synthetic->shape.height, synthetic->shape.width, synthetic->shape.channels}}}}};
  j["distortion"] = {{"epsilon", distortion.epsilon}, {"rmse_min", distortion.rmse_min}, {"rmse_max", distortion.rmse_max ? nlohmann::json(*distortion.rmse_max) : nlohmann::json(nullptr)}};
  j["metrics"] = nlohmann::json::array();
  for (const auto& m : metrics) {
    nlohmann::json e = {{"name", m.name}, {"params", m.params_json()}};
    if (m.kind == MetricKind::External) e["params"]["file"] = m.external_file.filename().string();
    j["metrics"].push_back(e);
  }
  j["density"] = {{"kind", density.kind}, {"alpha", density.fit.alpha}, {"variance_floor", density.fit.variance_floor}};
  if (!density.file.empty()) j["density"]["file"] = density.file.filename().string();
  j["descriptors"] = {{"path_steps", descriptors.path_steps}};
  j["rbig"] = {{"n_layers", rbig.n_layers}, {"marginal_bins", rbig.marginal_bins}, {"tc_tolerance", rbig.tc_tolerance},
               {"patience", rbig.patience}, {"min_samples", rbig.min_samples}, {"null_correction", rbig.null_correction},
               {"noise_z", rbig.noise_z}, {"rotation_seed", rbig.rotation_seed}};
  j["mi"] = {{"enabled", mi_enabled}, {"max_factors", max_factors}};
  j["histogram"] = {{"enabled", hist_enabled}, {"bins", hist_bins}};
  j["regression"]["test_fraction"] = test_fraction;
  j["regression"]["forest"] = forest.to_json();
  j["regression"]["fits"] = nlohmann::json::array();
  for (const auto& f : fits)
    j["regression"]["fits"].push_back({{"name", f.name}, {"model", f.model}, {"terms", f.spec_source == "poly2" ? nlohmann::json("poly2") : nlohmann::json(f.spec.names())},
                                       {"metrics", f.metrics}, {"lambda", f.lambda}, {"allow_rank_deficient", f.allow_rank_deficient}});
  j["regression"]["ablation"] = {{"enabled", ablation_enabled}};
  return j;
}

}  // namespace percsens
