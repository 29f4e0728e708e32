#include <gtest/gtest.h>

#include "percsens/core/io.hpp"
#include "percsens/distortion/distortion.hpp"
#include "percsens/metrics/metrics.hpp"
#include "test_util.hpp"

using namespace percsens;
using testutil::random_image;
using testutil::TempDir;

namespace {

double norm_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ImagePair noisy_pair(std::uint64_t seed, double eps = 0.2, Shape shape = {32, 32, 3}) {
  const auto x = random_image(shape, seed, -0.7, 0.7);
  DistortionConfig cfg;
  cfg.epsilon = eps;
  return distort(x, cfg, derive_seed(seed, "noise"), "p" + std::to_string(seed));
}

}  // namespace

TEST(Sphere, NormIsExact) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto n = sample_sphere_noise(3072, 0.2, s);
    EXPECT_NEAR(norm_of(n), 0.2, 1e-12);
  }
  EXPECT_THROW(sample_sphere_noise(0, 0.2, 1), ValidationError);
  EXPECT_THROW(sample_sphere_noise(10, 0.0, 1), ValidationError);
}

TEST(Sphere, DirectionIsIsotropic) {
  // Each coordinate of a uniform sphere point has mean 0 and variance eps^2/d.
  const std::size_t d = 16;
  const int n = 20000;
  std::vector<double> mean(d, 0.0), sq(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto v = sample_sphere_noise(d, 1.0, derive_seed(77, static_cast<std::uint64_t>(i)));
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] += v[j] / n;
      sq[j] += v[j] * v[j] / n;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    EXPECT_NEAR(mean[j], 0.0, 0.01);
    EXPECT_NEAR(sq[j], 1.0 / d, 0.005);
  }
}

TEST(Distort, NoClipGeometry) {
  const auto p = noisy_pair(3);
  const double d = static_cast<double>(p.reference.size());
  EXPECT_NEAR(std::sqrt(squared_distance(p.reference, p.distorted)), 0.2, 1e-12);
  EXPECT_NEAR(p.rmse, 0.2 / (2.0 * std::sqrt(d)), 1e-15);
  EXPECT_EQ(p.pair_id, "p3");
}

TEST(Distort, ClipsToCanonicalRange) {
  ImageTensor x(Shape{8, 8, 1}, Range::Symmetric, 1.0);
  DistortionConfig cfg;
  cfg.epsilon = 2.0;
  const auto p = distort(x, cfg, 1);
  EXPECT_TRUE(p.distorted.within_range());
  EXPECT_LT(std::sqrt(squared_distance(p.reference, p.distorted)), 2.0);
  EXPECT_NEAR(p.rmse, rmse_unit(p.reference, p.distorted), 0.0);
}

TEST(Distort, SameSeedSameNoise) {
  const auto x = random_image({8, 8, 3}, 1, -0.5, 0.5);
  DistortionConfig cfg;
  EXPECT_EQ(distort(x, cfg, 9).distorted.values(), distort(x, cfg, 9).distorted.values());
  EXPECT_NE(distort(x, cfg, 9).distorted.values(), distort(x, cfg, 10).distorted.values());
}

TEST(Distort, RejectsUnitRangeAndBadConfig) {
  ImageTensor u(Shape{4, 4, 1}, Range::Unit, 0.5);
  EXPECT_THROW(distort(u, {}, 1), ValidationError);
  DistortionConfig bad;
  bad.epsilon = -1;
  EXPECT_THROW(distort(random_image({4, 4, 1}, 1), bad, 1), ValidationError);
  DistortionConfig inverted;
  inverted.rmse_min = 0.1;
  inverted.rmse_max = 0.05;
  EXPECT_THROW(inverted.validate(), ValidationError);
}

TEST(Distort, FilterCountsAndOrder) {
  std::vector<ImagePair> pairs(5);
  const double r[5] = {0.0, 0.01, 0.02, 0.03, 0.5};
  for (int i = 0; i < 5; ++i) {
    pairs[i].pair_id = "p" + std::to_string(i);
    pairs[i].rmse = r[i];
  }
  DistortionConfig cfg;
  cfg.rmse_min = 0.0;
  cfg.rmse_max = 0.1;
  FilterSummary s;
  const auto kept = filter_pairs(pairs, cfg, &s);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].pair_id, "p1");
  EXPECT_EQ(kept[2].pair_id, "p3");
  EXPECT_EQ(s.below_min, 1u);
  EXPECT_EQ(s.above_max, 1u);
  EXPECT_EQ(s.input, 5u);
}

TEST(MsSsim, ConstantImagesMatchLuminanceTerm) {
  // Flat images have unit contrast-structure at every scale, so only the
  // coarsest luminance term survives.
  const double a = 0.3, b = 0.6;
  ImageTensor x(Shape{32, 32, 1}, Range::Unit, a), y(Shape{32, 32, 1}, Range::Unit, b);
  MsSsimParams p;
  const int scales = msssim_scale_count(32, 32, p);
  EXPECT_EQ(scales, 3);
  const double c1 = (p.k1) * (p.k1);
  const double l = (2 * a * b + c1) / (a * a + b * b + c1);
  const double w = msssim_weights(scales, p).back();
  EXPECT_NEAR(ms_ssim(x, y, p), 1.0 - std::pow(l, w), 1e-12);
}

TEST(MsSsim, Axioms) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = noisy_pair(s);
    const double dxy = ms_ssim(p.reference, p.distorted), dyx = ms_ssim(p.distorted, p.reference);
    EXPECT_GE(dxy, 0.0);
    EXPECT_NEAR(dxy, dyx, 1e-12);
    EXPECT_NEAR(ms_ssim(p.reference, p.reference), 0.0, 1e-9);
  }
}

TEST(MsSsim, GrowsWithNoise) {
  const auto x = random_image({32, 32, 3}, 4, -0.6, 0.6);
  DistortionConfig small, large;
  small.epsilon = 0.5;
  large.epsilon = 5.0;
  EXPECT_LT(ms_ssim(x, distort(x, small, 1).distorted), ms_ssim(x, distort(x, large, 1).distorted));
}

TEST(MsSsim, TooSmallImageThrows) {
  const auto x = random_image({4, 4, 1}, 1);
  EXPECT_THROW(ms_ssim(x, x), ValidationError);
}

TEST(Nlpd, Axioms) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = noisy_pair(s);
    const double dxy = nlpd(p.reference, p.distorted), dyx = nlpd(p.distorted, p.reference);
    EXPECT_GT(dxy, 0.0);
    EXPECT_NEAR(dxy, dyx, 1e-12);
    EXPECT_NEAR(nlpd(p.reference, p.reference), 0.0, 1e-9);
  }
}

TEST(Nlpd, GrowsWithNoise) {
  const auto x = random_image({32, 32, 3}, 4, -0.6, 0.6);
  DistortionConfig small, large;
  small.epsilon = 0.5;
  large.epsilon = 5.0;
  EXPECT_LT(nlpd(x, distort(x, small, 1).distorted), nlpd(x, distort(x, large, 1).distorted));
}

TEST(Nlpd, UnitRangeInputIsConverted) {
  const auto p = noisy_pair(8);
  EXPECT_NEAR(nlpd(convert_range(p.reference, Range::Unit), convert_range(p.distorted, Range::Unit)), nlpd(p.reference, p.distorted),
              1e-12);
}

TEST(Sensitivity, RatioAndDegenerateCase) {
  const auto p = noisy_pair(2);
  const double dist = nlpd(p.reference, p.distorted);
  const double s = sensitivity(dist, p.reference, p.distorted);
  EXPECT_NEAR(s * std::sqrt(squared_distance(p.reference, p.distorted)), dist, 1e-12 * dist);
  EXPECT_NEAR(sensitivity_from_rmse(dist, p.rmse, p.reference.size()), s, 1e-9 * s);
  EXPECT_THROW(sensitivity(1.0, p.reference, p.reference), UndefinedSensitivity);
  EXPECT_THROW(sensitivity_from_rmse(1.0, 0.0, 10), UndefinedSensitivity);
}

TEST(Sensitivity, RmseMetricGivesConstant) {
  // rmse / ||x - x~|| = 1 / (2 sqrt(d)) for every pair.
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto p = noisy_pair(s, 0.1 * (s + 1));
    const double sens = sensitivity(euclidean_rmse(p.reference, p.distorted), p.reference, p.distorted);
    EXPECT_NEAR(sens, 1.0 / (2.0 * std::sqrt(3072.0)), 1e-15);
  }
}

TEST(MetricSpec, Parsing) {
  EXPECT_EQ(parse_metric_spec("msssim").kind, MetricKind::MsSsim);
  EXPECT_EQ(parse_metric_spec("nlpd").name, "nlpd");
  const auto ext = parse_metric_spec("lpips=external:scores/lp.csv");
  EXPECT_EQ(ext.kind, MetricKind::External);
  EXPECT_EQ(ext.name, "lpips");
  EXPECT_EQ(parse_metric_spec("external:dists.csv").name, "dists");
  EXPECT_THROW(parse_metric_spec("ssim"), ValidationError);
  EXPECT_THROW(parse_metric_spec("msssim", {{"window", 10}}), ValidationError);
  EXPECT_EQ(parse_metric_spec("msssim", {{"scales", 2}}).msssim.scales, 2);
  EXPECT_THROW(parse_metric_spec("nlpd", {{"levels", "x"}}), ValidationError);
}

TEST(ExternalDistances, Ingest) {
  TempDir dir("extdist");
  write_text_file(dir / "d.csv", "pair_id,distance\na,0.5\nb,1.25\n");
  const auto r = ingest_external_distances(dir / "d.csv", "lp", {"a", "b", "c"});
  EXPECT_EQ(r.distance.at("b"), 1.25);
  ASSERT_EQ(r.missing.size(), 1u);
  EXPECT_EQ(r.missing[0], "c");

  write_text_file(dir / "neg.csv", "pair_id,distance\na,-1\n");
  EXPECT_THROW(ingest_external_distances(dir / "neg.csv", "lp", {"a"}), ValidationError);
  write_text_file(dir / "unk.csv", "pair_id,distance\nq,1\n");
  EXPECT_THROW(ingest_external_distances(dir / "unk.csv", "lp", {"a"}), ValidationError);
  write_text_file(dir / "dup.csv", "pair_id,distance\na,1\na,2\n");
  EXPECT_THROW(ingest_external_distances(dir / "dup.csv", "lp", {"a"}), ValidationError);
  write_text_file(dir / "hdr.csv", "id,distance\na,1\n");
  EXPECT_THROW(ingest_external_distances(dir / "hdr.csv", "lp", {"a"}), ValidationError);
}
