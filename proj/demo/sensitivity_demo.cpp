// Distorts a few synthetic images, scores them with MS-SSIM and NLPD, fits a
// Gaussian image density and prints the sensitivity next to two surrogates.

#include <cstdio>
#include <vector>

#include "percsens/core/synthetic.hpp"
#include "percsens/density/density.hpp"
#include "percsens/density/descriptors.hpp"
#include "percsens/distortion/distortion.hpp"
#include "percsens/metrics/metrics.hpp"
#include "percsens/regression/functional_form.hpp"

int main() {
  namespace ps = percsens;
  const ps::Shape shape{32, 32, 3};
  ps::DistortionConfig cfg;
  cfg.epsilon = 0.2;
  cfg.seed = 7;

  std::vector<ps::ImagePair> pairs;
  std::vector<ps::ImageTensor> refs;
  for (std::size_t i = 0; i < 40; ++i) {
    const auto id = ps::synthetic_id(i);
    const auto x = ps::synthetic_image(shape, ps::derive_seed(cfg.seed, id));
    refs.push_back(x);
    pairs.push_back(ps::distort(x, cfg, ps::pair_seed(cfg.seed, id), id));
  }
  const auto density = ps::fit_gaussian(refs);
  const auto msssim = ps::parse_metric_spec("msssim");
  const auto nlpd = ps::parse_metric_spec("nlpd");

  std::printf("%-10s %12s %12s %14s %10s\n", "pair", "S_msssim", "S_nlpd", "logp(x~)", "sigma_x");
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& p = pairs[i];
    const auto d = ps::descriptor_record(density, p, {});
    std::printf("%-10s %12.5f %12.5f %14.2f %10.4f\n", p.pair_id.c_str(),
                ps::sensitivity(msssim.evaluate(p.reference, p.distorted), p.reference, p.distorted),
                ps::sensitivity(nlpd.evaluate(p.reference, p.distorted), p.reference, p.distorted), d.logp_xt, d.sigma_x);
  }

  const auto eq3 = ps::functional_form_registry("MSSIM", ps::Form::Eq3);
  std::printf("\npublished MSSIM eq3 at log p = -5000: %.6f\n", ps::predict_sensitivity(eq3, -5000.0));
}
