// percsens: command-line front end for the perceptual-sensitivity pipeline.
//
// Exit codes: 0 success, 2 invalid input or arguments, 3 stage failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "percsens/pipeline/config.hpp"
#include "percsens/pipeline/plots.hpp"
#include "percsens/pipeline/run.hpp"
#include "percsens/pipeline/stages.hpp"

namespace ps = percsens;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

// Defaults come from --config when one is given, otherwise from a config
// with a synthetic placeholder dataset that is never materialized.
ps::RunConfig base_config(const Globals& g) {
  ps::RunConfig c;
  if (!g.config.empty()) {
    c = ps::load_run_config(g.config);
  } else {
    c = ps::parse_run_config({{"seed", 0}, {"dataset", {{"synthetic", nlohmann::json::object()}}}}, fs::current_path());
  }
  if (g.seed) ps::set_run_seed(c, *g.seed);
  return c;
}

fs::path require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw ps::ValidationError(std::string("--out ") + what + " is required");
  return g.out;
}

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& s : w) std::cerr << "warning: " << s << "\n";
}

std::vector<std::string> pick_metrics(const ps::DataTable& t, const std::vector<std::string>& wanted) {
  const auto have = ps::table_metrics(t);
  if (wanted.empty()) return have;
  for (const auto& m : wanted)
    if (std::find(have.begin(), have.end(), m) == have.end()) throw ps::ValidationError("table has no column 'sens_" + m + "'");
  return wanted;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perceptual sensitivity analysis: distortion, metrics, probability surrogates, MI and regression"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--config", g.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output file or directory");
  app.add_option("--seed", g.seed, "global seed (overrides the config)");
  app.add_option("--threads", g.threads, "worker cap; results do not depend on it (default: all cores)");

  // distort
  auto* distort = app.add_subcommand("distort", "add sphere noise to every image of a manifest");
  std::string d_manifest;
  std::optional<double> d_eps, d_rmin, d_rmax;
  distort->add_option("--manifest", d_manifest, "reference manifest")->required()->check(CLI::ExistingFile);
  distort->add_option("--epsilon", d_eps, "L2 radius in the [-1,1] range");
  distort->add_option("--rmse-min", d_rmin, "drop pairs with rmse <= this ([0,1] units)");
  distort->add_option("--rmse-max", d_rmax, "drop pairs with rmse >= this ([0,1] units)");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "score every pair with perceptual metrics");
  std::string m_manifest;
  std::vector<std::string> m_metrics;
  metrics->add_option("--manifest", m_manifest, "extended manifest from distort")->required()->check(CLI::ExistingFile);
  metrics->add_option("--metric", m_metrics, "msssim, nlpd, rmse or NAME=external:FILE (repeatable)");

  // surrogates
  auto* surr = app.add_subcommand("surrogates", "compute the probability surrogates of every pair");
  std::string s_manifest, s_density = "gaussian", s_save;
  std::optional<double> s_alpha, s_floor;
  std::optional<int> s_steps;
  surr->add_option("--manifest", s_manifest, "extended manifest from distort")->required()->check(CLI::ExistingFile);
  surr->add_option("--model,--density", s_density, "gaussian (fit on the references), gaussian:FILE or external:FILE");
  surr->add_option("--alpha", s_alpha, "shrinkage weight of the fitted Gaussian");
  surr->add_option("--variance-floor", s_floor, "floor on the spherical target variance");
  surr->add_option("--save", s_save, "directory for gaussian.bin when fitting");
  surr->add_option("--steps,--path-steps", s_steps, "trapezoid steps of the path integral");

  // join
  auto* join = app.add_subcommand("join", "join descriptors and distances on pair_id");
  std::string j_desc, j_dist;
  join->add_option("--descriptors", j_desc)->required()->check(CLI::ExistingFile);
  join->add_option("--distances", j_dist)->required()->check(CLI::ExistingFile);

  // mi, hist, fit, ablate share the joined table
  std::string table;
  std::vector<std::string> a_metrics;
  auto add_table = [&](CLI::App* sc) {
    sc->add_option("--table", table, "joined table")->required()->check(CLI::ExistingFile);
    sc->add_option("--metric", a_metrics, "metrics to analyse (default: every sens_ column)");
  };
  auto* mi = app.add_subcommand("mi", "greedy ICC factor sweep and pairwise ICC matrix");
  add_table(mi);
  std::optional<int> mi_max, mi_bins;
  std::optional<std::size_t> mi_min;
  mi->add_option("--max-factors", mi_max);
  mi->add_option("--marginal-bins", mi_bins);
  mi->add_option("--min-samples", mi_min);

  auto* hist = app.add_subcommand("hist", "conditional histograms of sensitivity given each descriptor");
  add_table(hist);
  std::optional<int> h_bins;
  std::string h_desc;
  hist->add_option("--bins", h_bins);
  hist->add_option("--descriptor", h_desc, "single descriptor; --out is then a CSV file");

  auto* fit = app.add_subcommand("fit", "fit one regression model per metric on a seeded split");
  add_table(fit);
  std::string f_model = "ols", f_spec, f_name;
  std::vector<std::string> f_terms;
  double f_lambda = 0.0;
  bool f_rank = false;
  std::optional<double> f_test;
  std::optional<int> f_trees;
  fit->add_option("--model", f_model)->check(CLI::IsMember({"ols", "lasso", "rf"}));
  auto* spec_opt = fit->add_option("--spec", f_spec, "feature spec file, one term per line")->check(CLI::ExistingFile);
  fit->add_option("--terms", f_terms, "feature terms, e.g. b p p^2 s, or poly2")->excludes(spec_opt);
  fit->add_option("--name", f_name, "fit name used in file names");
  fit->add_option("--lambda", f_lambda, "lasso penalty");
  fit->add_flag("--allow-rank-deficient", f_rank);
  fit->add_option("--test-fraction", f_test);
  fit->add_option("--n-trees", f_trees);

  auto* ablate = app.add_subcommand("ablate", "sequential and lasso ablation over the nine candidate terms");
  add_table(ablate);
  std::optional<double> ab_test;
  ablate->add_option("--test-fraction", ab_test);

  auto* predict = app.add_subcommand("predict", "sensitivity from the published functional forms");
  std::string p_iqm, p_form = "eq3";
  double p_logp = 0.0;
  std::optional<double> p_sigma;
  predict->add_option("--iqm", p_iqm, "MSSIM, NLPD, PIM, LPIPS or DISTS")->required();
  predict->add_option("--form", p_form, "eq3 or eq4");
  predict->add_option("--logp", p_logp, "log p(x~) in nats")->required();
  predict->add_option("--sigma", p_sigma, "std of the reference image (eq4)");

  auto* run = app.add_subcommand("run", "run the whole pipeline from --config");

  auto* plots = app.add_subcommand("emit-plots", "reshape bundle tables into plot-ready CSV");
  std::string pl_bundle, pl_figure;
  ps::PlotOptions pl;
  plots->add_option("--bundle", pl_bundle, "run output directory")->required()->check(CLI::ExistingDirectory);
  plots->add_option("--figure", pl_figure, "cond-hist, icc-bars, icc-pairs or importances")->required();
  plots->add_option("--metric", pl.metric)->required();
  plots->add_option("--descriptor", pl.descriptor);
  plots->add_option("--fit", pl.fit);
  plots->add_option("--top-k", pl.top_k);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  ps::set_default_threads(g.threads ? g.threads : std::max(1u, std::thread::hardware_concurrency()));

  try {
    if (*distort) {
      auto c = base_config(g);
      if (d_eps) c.distortion.epsilon = *d_eps;
      if (d_rmin) c.distortion.rmse_min = *d_rmin;
      if (d_rmax) c.distortion.rmse_max = *d_rmax;
      const auto out = require_out(g, "DIR");
      const auto src = ps::load_manifest(d_manifest);
      auto r = ps::distort_stage(src, c.distortion, out);
      ps::save_manifest(out / "manifest.json", r.manifest);
      std::cerr << "kept " << r.summary.kept << " of " << r.summary.input << " pairs\n";
    } else if (*metrics) {
      auto c = base_config(g);
      std::vector<ps::MetricSpec> specs = c.metrics;
      if (!m_metrics.empty()) {
        specs.clear();
        for (const auto& t : m_metrics) specs.push_back(ps::parse_metric_spec(t, c.metric_params.value(ps::parse_metric_spec(t).name, nlohmann::json::object())));
      }
      const auto m = ps::load_manifest(m_manifest);
      const auto r = ps::metrics_stage(m, specs);
      print_warnings(r.warnings);
      ps::write_distances_csv(require_out(g, "FILE"), r.rows);
    } else if (*surr) {
      auto c = base_config(g);
      ps::DensitySpec spec = c.density;
      if (surr->count("--model")) {
        if (s_density == "gaussian") {
          spec.kind = "gaussian";
        } else if (s_density.rfind("gaussian:", 0) == 0) {
          spec = {"gaussian-file", s_density.substr(9), spec.fit};
        } else if (s_density.rfind("external:", 0) == 0) {
          spec = {"external", s_density.substr(9), spec.fit};
        } else {
          throw ps::ValidationError("unknown density '" + s_density + "'");
        }
      }
      if (s_alpha) spec.fit.alpha = *s_alpha;
      if (s_floor) spec.fit.variance_floor = *s_floor;
      if (s_steps) c.descriptors.path_steps = *s_steps;
      const auto out = require_out(g, "FILE");
      const auto m = ps::load_manifest(s_manifest);
      auto d = ps::make_density(spec, m, s_save);
      print_warnings(d.warnings);
      ps::write_descriptors_csv(out, ps::surrogates_stage(m, *d.model, c.descriptors));
    } else if (*join) {
      ps::join_tables(ps::read_descriptors_csv(j_desc), ps::read_distances_csv(j_dist)).write_csv(require_out(g, "FILE"));
    } else if (*mi) {
      auto c = base_config(g);
      ps::MiStageOptions o;
      o.rbig = c.rbig;
      o.max_factors = mi_max.value_or(c.max_factors);
      if (mi_bins) o.rbig.marginal_bins = *mi_bins;
      if (mi_min) o.rbig.min_samples = *mi_min;
      o.rbig.validate();
      const auto t = ps::DataTable::read_csv_file(table);
      std::vector<std::string> w;
      ps::mi_stage(t, pick_metrics(t, a_metrics), o, require_out(g, "DIR"), w);
      print_warnings(w);
    } else if (*hist) {
      auto c = base_config(g);
      const auto t = ps::DataTable::read_csv_file(table);
      const int bins = h_bins.value_or(c.hist_bins);
      if (!h_desc.empty()) {
        const auto ms = pick_metrics(t, a_metrics);
        if (ms.size() != 1) throw ps::ValidationError("hist --descriptor needs exactly one --metric");
        const auto sub = t.complete_rows({h_desc, ps::sensitivity_column(ms[0])});
        const auto h = ps::conditional_histogram(sub.column(h_desc), sub.column(ps::sensitivity_column(ms[0])), bins);
        ps::write_conditional_histogram_csv(require_out(g, "FILE"), h, h_desc, ms[0]);
        std::cout << "pearson " << ps::format_number(h.corr.pearson) << " spearman " << ps::format_number(h.corr.spearman) << "\n";
      } else {
        std::vector<std::string> w;
        ps::hist_stage(t, pick_metrics(t, a_metrics), bins, require_out(g, "DIR"), w);
        print_warnings(w);
      }
    } else if (*fit) {
      auto c = base_config(g);
      ps::FitSpec f;
      f.model = f_model;
      f.name = f_name.empty() ? f_model : f_name;
      ps::validate_field(f.name, "fit name");
      if (!f_spec.empty()) {
        f.spec_source = ps::read_text_file(f_spec);
        f.spec = ps::parse_feature_spec(f.spec_source, f_spec);
      } else if (f_terms.size() == 1 && f_terms[0] == "poly2") {
        f.spec_source = "poly2";
      } else {
        if (f_terms.empty()) throw ps::ValidationError("fit needs --spec or --terms");
        for (const auto& t : f_terms) f.spec_source += t + "\n";
        f.spec = ps::parse_feature_spec(f.spec_source, "--terms");
      }
      if (!(f_lambda >= 0.0)) throw ps::ValidationError("--lambda must be >= 0");
      f.lambda = f_lambda;
      f.allow_rank_deficient = f_rank;
      ps::RegressionStageOptions o;
      o.forest = c.forest;
      if (f_trees) o.forest.n_trees = *f_trees;
      o.test_fraction = f_test.value_or(c.test_fraction);
      if (!(o.test_fraction > 0.0 && o.test_fraction < 1.0)) throw ps::ValidationError("--test-fraction must be in (0,1)");
      o.forest.validate();
      o.seed = c.seed;
      const auto t = ps::DataTable::read_csv_file(table);
      const auto out = require_out(g, "DIR");
      fs::create_directories(out);
      std::vector<ps::FitOutcome> outcomes;
      for (const auto& m : pick_metrics(t, a_metrics)) outcomes.push_back(ps::run_fit(t, m, f, o, out));
      std::vector<std::string> w;
      ps::write_fit_summary(out / "summary.csv", outcomes, w);
      print_warnings(w);
      for (const auto& oc : outcomes)
        std::cout << oc.metric << " " << oc.fit << " pearson " << ps::format_number(oc.test.pearson) << " spearman "
                  << ps::format_number(oc.test.spearman) << "\n";
    } else if (*ablate) {
      auto c = base_config(g);
      ps::AblationOptions o;
      const auto t = ps::DataTable::read_csv_file(table);
      o.metrics = pick_metrics(t, a_metrics);
      o.test_fraction = ab_test.value_or(c.test_fraction);
      if (!(o.test_fraction > 0.0 && o.test_fraction < 1.0)) throw ps::ValidationError("--test-fraction must be in (0,1)");
      o.seed = c.seed;
      const auto rep = ps::ablation_study(t, o);
      const auto out = require_out(g, "FILE");
      ps::write_ablation_csv(out, rep, rep.rows);
      auto cand = out;
      cand.replace_filename(out.stem().string() + "_candidates" + out.extension().string());
      ps::write_ablation_csv(cand, rep, rep.candidates);
      print_warnings(rep.warnings);
    } else if (*predict) {
      const auto m = ps::functional_form_registry(p_iqm, ps::parse_form(p_form));
      std::cout << ps::format_number(ps::predict_sensitivity(m, p_logp, p_sigma)) << "\n";
    } else if (*run) {
      if (g.config.empty()) throw ps::ValidationError("run needs --config");
      auto c = ps::load_run_config(g.config);
      if (g.seed) ps::set_run_seed(c, *g.seed);
      const fs::path out = g.out.empty() ? c.output_dir : fs::path(g.out);
      const auto s = ps::run_pipeline(c, out);
      print_warnings(s.warnings);
      std::cerr << "wrote " << out.string() << " (" << s.pairs << " pairs)\n";
    } else if (*plots) {
      ps::emit_plot_data(pl_bundle, ps::parse_figure(pl_figure), pl, require_out(g, "FILE"));
    }
  } catch (const ps::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
