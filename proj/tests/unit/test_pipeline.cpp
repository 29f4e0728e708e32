#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "percsens/metrics/metrics.hpp"
#include "percsens/pipeline/plots.hpp"
#include "percsens/pipeline/run.hpp"
#include "test_util.hpp"

using namespace percsens;
using testutil::TempDir;

namespace {

nlohmann::json small_config(std::size_t count) {
  auto doc = nlohmann::json::parse(R"({
    "seed": 7,
    "dataset": {"synthetic": {"shape": [32, 32, 3]}},
    "distortion": {"epsilon": 0.2},
    "metrics": ["msssim", "nlpd", "rmse"],
    "descriptors": {"path_steps": 16},
    "rbig": {"min_samples": 20, "marginal_bins": 16},
    "mi": {"max_factors": 2},
    "histogram": {"bins": 3},
    "regression": {"forest": {"n_trees": 10}}
  })");
  doc["dataset"]["synthetic"]["count"] = count;
  return doc;
}

std::map<std::string, std::string> bundle_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& f : bundle_files(dir))
    if (f != "run_metadata.json") out[f] = read_text_file(dir / f);
  return out;
}

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const auto cfg = parse_run_config(small_config(10), "/tmp");
  EXPECT_EQ(cfg.seed, 7u);
  ASSERT_TRUE(cfg.synthetic);
  EXPECT_EQ(cfg.synthetic->count, 10u);
  EXPECT_EQ(cfg.metrics.size(), 3u);
  EXPECT_EQ(cfg.density.kind, "gaussian");
  EXPECT_EQ(cfg.density.fit.alpha, 0.1);
  EXPECT_EQ(cfg.rbig.rotation_seed, derive_seed(7, "rbig"));
  EXPECT_FALSE(cfg.fits.empty());
  // The effective config record lists every resolved setting and is stable.
  const auto j = cfg.to_json();
  EXPECT_EQ(j, parse_run_config(small_config(10), "/tmp").to_json());
  EXPECT_EQ(j.at("seed"), 7);
  ASSERT_EQ(j.at("metrics").size(), 3u);
  EXPECT_EQ(j.at("metrics")[0].at("name"), "msssim");
  EXPECT_EQ(j.at("density").at("kind"), "gaussian");
}

TEST(Config, RejectsInvalidInputBeforeAnyWork) {
  auto bad_metric = small_config(10);
  bad_metric["metrics"] = {"msssim", "ssim"};
  EXPECT_THROW(parse_run_config(bad_metric, "/tmp"), ValidationError);

  auto unknown_key = small_config(10);
  unknown_key["distortion"]["sigma"] = 1;
  EXPECT_THROW(parse_run_config(unknown_key, "/tmp"), ValidationError);

  auto no_seed = small_config(10);
  no_seed.erase("seed");
  EXPECT_THROW(parse_run_config(no_seed, "/tmp"), ValidationError);

  auto both = small_config(10);
  both["dataset"]["manifest"] = "m.json";
  EXPECT_THROW(parse_run_config(both, "/tmp"), ValidationError);

  auto bad_density = small_config(10);
  bad_density["density"] = {{"model", "flow"}};
  EXPECT_THROW(parse_run_config(bad_density, "/tmp"), ValidationError);

  auto missing_file = small_config(10);
  missing_file["density"] = {{"model", "external:/nonexistent/logp.csv"}};
  EXPECT_THROW(parse_run_config(missing_file, "/tmp"), ValidationError);

  auto bad_eps = small_config(10);
  bad_eps["distortion"]["epsilon"] = 0;
  EXPECT_THROW(parse_run_config(bad_eps, "/tmp"), ValidationError);
}

TEST(Config, SeedOverrideReseedsEverything) {
  auto cfg = parse_run_config(small_config(10), "/tmp");
  set_run_seed(cfg, 99);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.distortion.seed, 99u);
  EXPECT_EQ(cfg.rbig.rotation_seed, derive_seed(99, "rbig"));
}

TEST(Run, SmokeBundleIsCompleteAndConsistent) {
  TempDir dir("smoke");
  const auto cfg = parse_run_config(small_config(10), dir.path());
  const auto sum = run_pipeline(cfg, dir / "out", 2);
  const auto out = dir / "out";
  EXPECT_EQ(sum.pairs, 10u);
  for (const char* f : {"manifest.json", "distances.csv", "descriptors.csv", "joined.csv", "density/gaussian.bin", "run_metadata.json",
                        "source/manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  const auto meta = nlohmann::json::parse(read_text_file(out / "run_metadata.json"));
  EXPECT_EQ(meta["status"], "complete");
  EXPECT_EQ(meta["seeds"]["run"], 7);
  // 10 pairs are below rbig.min_samples, so MI is skipped with a warning.
  EXPECT_TRUE(meta["stages"]["mi"]["skipped"].get<bool>());
  for (const auto& f : meta["outputs"]) EXPECT_TRUE(fs::exists(out / f.get<std::string>())) << f;

  // Sensitivities are recomputable from the stored images.
  const auto m = load_manifest(out / "manifest.json");
  const auto rows = read_distances_csv(out / "distances.csv");
  ASSERT_EQ(rows.size(), 30u);
  for (const auto& r : rows) {
    const auto pe = std::find_if(m.pairs.begin(), m.pairs.end(), [&](const PairEntry& p) { return p.pair_id == r.pair_id; });
    ASSERT_NE(pe, m.pairs.end());
    const auto x = m.load_image(pe->reference), xt = m.load_image(pe->distorted);
    const auto spec = parse_metric_spec(r.metric);
    const double d = spec.evaluate(x, xt);
    EXPECT_EQ(d, r.distance);
    EXPECT_NEAR(r.sensitivity, sensitivity(d, x, xt), 1e-12 * std::abs(r.sensitivity));
    EXPECT_EQ(pe->distorted, pe->reference + ".noisy");
  }

  const auto joined = DataTable::read_csv_file(out / "joined.csv");
  EXPECT_EQ(joined.rows(), 10u);
  EXPECT_TRUE(joined.has("sens_msssim"));
  EXPECT_TRUE(joined.has("path_integral"));
}

TEST(Run, ThreadCountDoesNotChangeBundle) {
  TempDir dir("threads");
  const auto cfg = parse_run_config(small_config(24), dir.path());
  run_pipeline(cfg, dir / "t1", 1);
  run_pipeline(cfg, dir / "t8", 8);
  const auto a = bundle_contents(dir / "t1"), b = bundle_contents(dir / "t8");
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [k, v] : a) EXPECT_TRUE(b.count(k) && b.at(k) == v) << k;
  auto ma = nlohmann::json::parse(read_text_file(dir / "t1/run_metadata.json"));
  auto mb = nlohmann::json::parse(read_text_file(dir / "t8/run_metadata.json"));
  ma.erase("generated_at");
  mb.erase("generated_at");
  EXPECT_EQ(ma, mb);
}

TEST(Run, FailingStageWritesMetadata) {
  TempDir dir("fail");
  auto doc = small_config(10);
  doc["distortion"]["rmse_min"] = 1.0;  // filters every pair
  const auto cfg = parse_run_config(doc, dir.path());
  try {
    run_pipeline(cfg, dir / "out", 1);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "distort");
  }
  const auto meta = nlohmann::json::parse(read_text_file(dir / "out/run_metadata.json"));
  EXPECT_EQ(meta["status"], "failed");
  EXPECT_EQ(meta["failed_stage"]["stage"], "distort");
  EXPECT_TRUE(fs::exists(dir / "out/source/manifest.json"));
}

TEST(Plots, ReshapeBundleTables) {
  TempDir dir("plots");
  const auto cfg = parse_run_config(small_config(24), dir.path());
  run_pipeline(cfg, dir / "out", 2);
  const auto out = dir / "out";

  PlotOptions opt;
  opt.metric = "nlpd";
  emit_plot_data(out, Figure::CondHist, opt, dir / "h.csv");
  const auto h = read_csv(dir / "h.csv");
  EXPECT_EQ(h.header, (std::vector<std::string>{"x_bin", "s_bin", "mass"}));
  EXPECT_EQ(h.rows.size(), 9u);

  emit_plot_data(out, Figure::IccBars, opt, dir / "bars.csv");
  const auto bars = read_csv(dir / "bars.csv");
  EXPECT_EQ(bars.rows.size(), 2u);

  emit_plot_data(out, Figure::IccPairs, opt, dir / "pairs.csv");
  const auto pairs = read_csv(dir / "pairs.csv");
  EXPECT_EQ(pairs.header, (std::vector<std::string>{"factor_i", "factor_j", "icc"}));
  EXPECT_FALSE(pairs.rows.empty());

  opt.top_k = 3;
  emit_plot_data(out, Figure::Importances, opt, dir / "imp.csv");
  const auto imp = read_csv(dir / "imp.csv");
  ASSERT_EQ(imp.rows.size(), 3u);
  for (std::size_t i = 1; i < imp.rows.size(); ++i)
    EXPECT_GE(parse_number(imp.rows[i - 1][2], "t"), parse_number(imp.rows[i][2], "t"));

  opt.metric = "nope";
  EXPECT_THROW(emit_plot_data(out, Figure::IccBars, opt, dir / "x.csv"), ValidationError);
  EXPECT_FALSE(fs::exists(dir / "x.csv"));
  EXPECT_THROW(parse_figure("scatter"), ValidationError);
}

#ifdef PERCSENS_CLI

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(PERCSENS_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir("cli");
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("predict --iqm MSSIM --form eq3 --logp -5000"), 0);
  EXPECT_EQ(cli("predict --iqm SSIM --form eq3 --logp -5000"), 2);

  auto doc = small_config(10);
  write_text_file(dir / "ok.json", doc.dump());
  EXPECT_EQ(cli("run --config " + (dir / "ok.json").string() + " --out " + (dir / "ok").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok/run_metadata.json"));

  doc["metrics"] = {"ssim"};
  write_text_file(dir / "bad.json", doc.dump());
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string()), 2);
  EXPECT_FALSE(fs::exists(dir / "bad"));

  doc["metrics"] = {"msssim"};
  doc["distortion"]["rmse_min"] = 1.0;
  write_text_file(dir / "fail.json", doc.dump());
  EXPECT_EQ(cli("run --config " + (dir / "fail.json").string() + " --out " + (dir / "fail").string()), 3);
  EXPECT_TRUE(fs::exists(dir / "fail/run_metadata.json"));
}

TEST(Cli, StepwiseMatchesRun) {
  TempDir dir("cli_steps");
  write_text_file(dir / "cfg.json", small_config(10).dump());
  ASSERT_EQ(cli("run --config " + (dir / "cfg.json").string() + " --out " + (dir / "run").string()), 0);
  const auto src = (dir / "run/source/manifest.json").string();
  ASSERT_EQ(cli("distort --manifest " + src + " --epsilon 0.2 --seed 7 --out " + (dir / "d").string()), 0);
  ASSERT_EQ(cli("metrics --manifest " + (dir / "d/manifest.json").string() + " --metric msssim --metric nlpd --metric rmse --out " +
                (dir / "dist.csv").string()),
            0);
  EXPECT_EQ(read_text_file(dir / "dist.csv"), read_text_file(dir / "run/distances.csv"));
  ASSERT_EQ(cli("surrogates --manifest " + (dir / "d/manifest.json").string() + " --model gaussian --steps 16 --out " +
                (dir / "desc.csv").string()),
            0);
  EXPECT_EQ(read_text_file(dir / "desc.csv"), read_text_file(dir / "run/descriptors.csv"));
  ASSERT_EQ(cli("join --descriptors " + (dir / "desc.csv").string() + " --distances " + (dir / "dist.csv").string() + " --out " +
                (dir / "joined.csv").string()),
            0);
  EXPECT_EQ(read_text_file(dir / "joined.csv"), read_text_file(dir / "run/joined.csv"));
  EXPECT_EQ(cli("fit --table " + (dir / "joined.csv").string() + " --model ols --terms b nope --out " + (dir / "fit").string()), 2);
}

#endif
