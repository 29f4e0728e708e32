#pragma once

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "percsens/core/error.hpp"
#include "percsens/core/io.hpp"
#include "percsens/core/manifest.hpp"
#include "percsens/core/records.hpp"
#include "percsens/pipeline/config.hpp"
#include "percsens/pipeline/stages.hpp"

namespace percsens {

/// Replaces the run seed and every seed derived from it.
inline void set_run_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.distortion.seed = seed;
  cfg.rbig.rotation_seed = derive_seed(seed, "rbig");
}

// ISO-8601 UTC; SOURCE_DATE_EPOCH wins over the clock so that reruns can be
// made fully identical.
inline std::string generation_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) {
    try {
      t = static_cast<std::time_t>(std::stoll(e));
    } catch (const std::exception&) {
      throw ValidationError(std::string("SOURCE_DATE_EPOCH '") + e + "' is not an integer");
    }
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json run_conventions() {
  return {{"canonical_range", "[-1,1]; unit-range inputs are mapped by 2x-1 before any computation"},
          {"payload", "float32 little-endian, row-major HWC"},
          {"rmse_units", "[0,1] intensity units"},
          {"euclidean_distance", "L2 norm in the canonical range, so ||x - x~|| = 2 sqrt(d) rmse"},
          {"sensitivity", "metric distance / ||x - x~||_2"},
          {"path_integral", "segment average of log p over [x, x~] (length-normalized), trapezoid rule"},
          {"pairs", "one distorted sample per reference image"},
          {"log_probability", "nats"},
          {"pair_id", "reference image id; the distorted image id is '<id>.noisy'"},
          {"mi_units", "nats (bits columns divide by ln 2)"},
          {"icc", "sqrt(1 - exp(-2 I))"}};
}

/// Lists every regular file under dir, relative and sorted.
inline std::vector<std::string> bundle_files(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path().lexically_relative(dir).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

struct RunSummary {
  fs::path out_dir;
  std::size_t pairs = 0;
  std::vector<std::string> metrics;
  std::vector<std::string> warnings;
};

// Layout under out_dir:
//   source/               synthetic references (synthetic datasets only)
//   images/, manifest.json  references and distorted images, extended manifest
//   distances.csv, descriptors.csv, joined.csv
//   density/gaussian.bin  when the Gaussian is fitted here
//   mi/, hist/, regression/
//   run_metadata.json     effective config, conventions, seeds, warnings, file list
// A failing stage raises StageError after writing run_metadata.json with the
// failed stage; files already written stay in place.
inline RunSummary run_pipeline(const RunConfig& cfg, const fs::path& out_dir, std::size_t threads = 0) {
  if (out_dir.empty()) throw ValidationError("no output directory given");
  fs::create_directories(out_dir);
  RunSummary sum;
  sum.out_dir = out_dir;
  auto& warnings = sum.warnings;
  nlohmann::json meta;
  meta["config"] = cfg.to_json();
  meta["conventions"] = run_conventions();
  meta["seeds"] = {{"run", cfg.seed},
                   {"synthetic_image", "derive_seed(run, image_id)"},
                   {"distortion_pair", "derive_seed(run, image_id)"},
                   {"rbig_rotation", cfg.rbig.rotation_seed},
                   {"regression_split", derive_seed(cfg.seed, "split")},
                   {"ablation_split", derive_seed(cfg.seed, "ablation-split")},
                   {"forest", "derive_seed(run, \"forest:<metric>:<fit>\")"}};
  meta["stages"] = nlohmann::json::object();

  auto finish = [&](const std::string& failed_stage, const std::string& error) {
    meta["status"] = failed_stage.empty() ? "complete" : "failed";
    if (!failed_stage.empty()) meta["failed_stage"] = {{"stage", failed_stage}, {"error", error}};
    meta["warnings"] = warnings;
    auto files = bundle_files(out_dir);
    files.erase(std::remove(files.begin(), files.end(), "run_metadata.json"), files.end());
    meta["outputs"] = files;
    meta["generated_at"] = generation_timestamp();
    write_text_file(out_dir / "run_metadata.json", meta.dump(2) + "\n");
  };
  auto stage = [&](const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      finish(name, e.what());
      throw StageError(name, e.what());
    }
  };

  DatasetManifest source;
  stage("dataset", [&] {
    if (cfg.synthetic) {
      source = write_synthetic_dataset(*cfg.synthetic, cfg.seed, out_dir / "source");
      meta["stages"]["dataset"] = {{"kind", "synthetic"}, {"count", cfg.synthetic->count}, {"manifest", "source/manifest.json"}};
    } else {
      source = load_manifest(*cfg.manifest);
      meta["stages"]["dataset"] = {{"kind", "manifest"}, {"images", source.images.size()}};
    }
  });

  DatasetManifest m;
  stage("distort", [&] {
    auto r = distort_stage(source, cfg.distortion, out_dir, threads);
    if (r.manifest.pairs.empty()) throw NumericalError("the rmse filter removed every pair");
    save_manifest(out_dir / "manifest.json", r.manifest);
    meta["stages"]["distort"] = {{"input", r.summary.input}, {"kept", r.summary.kept}, {"below_min", r.summary.below_min},
                                 {"above_max", r.summary.above_max}};
    m = std::move(r.manifest);
  });
  sum.pairs = m.pairs.size();

  std::vector<SensitivityRow> rows;
  stage("metrics", [&] {
    auto r = metrics_stage(m, cfg.metrics, threads);
    warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
    write_distances_csv(out_dir / "distances.csv", r.rows);
    meta["stages"]["metrics"] = {{"rows", r.rows.size()}};
    rows = std::move(r.rows);
  });

  std::vector<DescriptorRecord> desc;
  stage("surrogates", [&] {
    auto d = make_density(cfg.density, m, cfg.density.kind == "gaussian" ? out_dir / "density" : fs::path{});
    warnings.insert(warnings.end(), d.warnings.begin(), d.warnings.end());
    desc = surrogates_stage(m, *d.model, cfg.descriptors, threads);
    write_descriptors_csv(out_dir / "descriptors.csv", desc);
    meta["stages"]["surrogates"] = {{"density", d.info}, {"path_steps", cfg.descriptors.path_steps}, {"rows", desc.size()}};
  });

  DataTable table;
  stage("join", [&] {
    table = join_tables(desc, rows);
    table.write_csv(out_dir / "joined.csv");
    sum.metrics = table_metrics(table);
    meta["stages"]["join"] = {{"rows", table.rows()}, {"metrics", sum.metrics}};
  });

  if (cfg.mi_enabled) {
    stage("mi", [&] {
      if (table.rows() < cfg.rbig.min_samples) {
        warnings.push_back("mi skipped: " + std::to_string(table.rows()) + " pairs, rbig.min_samples is " + std::to_string(cfg.rbig.min_samples));
        meta["stages"]["mi"] = {{"skipped", true}};
        return;
      }
      MiStageOptions o;
      o.rbig = cfg.rbig;
      o.max_factors = cfg.max_factors;
      o.threads = threads;
      meta["stages"]["mi"] = mi_stage(table, sum.metrics, o, out_dir / "mi", warnings);
    });
  }
  if (cfg.hist_enabled)
    stage("hist", [&] { meta["stages"]["hist"] = hist_stage(table, sum.metrics, cfg.hist_bins, out_dir / "hist", warnings); });

  stage("regression", [&] {
    RegressionStageOptions o;
    o.fits = cfg.fits;
    o.forest = cfg.forest;
    o.test_fraction = cfg.test_fraction;
    o.seed = cfg.seed;
    o.ablation = cfg.ablation_enabled;
    o.threads = threads;
    meta["stages"]["regression"] = regression_stage(table, sum.metrics, o, out_dir / "regression", warnings);
  });

  finish("", "");
  return sum;
}

}  // namespace percsens
