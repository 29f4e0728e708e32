#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "percsens/core/error.hpp"

namespace percsens {

enum class Form { Eq3, Eq4 };

inline std::string to_string(Form f) { return f == Form::Eq3 ? "eq3" : "eq4"; }

inline Form parse_form(const std::string& s) {
  if (s == "eq3") return Form::Eq3;
  if (s == "eq4") return Form::Eq4;
  throw ValidationError("unknown functional form '" + s + "' (expected eq3 or eq4)");
}

// S = w0 + w1 log p(x~) + w2 log p(x~)^2 [+ w3 sigma(x)]
struct FunctionalFormModel {
  std::string iqm;
  Form form = Form::Eq3;
  std::vector<std::string> terms;  // bias first
  std::vector<double> coef;
  std::string provenance;          // "published" or "fitted"
};

inline const std::array<std::string, 5>& registry_iqms() {
  static const std::array<std::string, 5> names{"MSSIM", "NLPD", "PIM", "LPIPS", "DISTS"};
  return names;
}

/// Canonical IQM name; accepts any case and "msssim"/"ms-ssim" for MSSIM.
inline std::string canonical_iqm(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (name == "MSSSIM" || name == "MS-SSIM" || name == "MS_SSIM") name = "MSSIM";
  for (const auto& n : registry_iqms())
    if (n == name) return n;
  throw ValidationError("unknown IQM '" + name + "' (expected one of MSSIM, NLPD, PIM, LPIPS, DISTS)");
}

// Published coefficients, one row per IQM in registry_iqms() order.
inline FunctionalFormModel functional_form_registry(const std::string& iqm, Form form) {
  static constexpr double kEq3[5][3] = {
      {29.5, 4.9e-3, 2.05e-7},
      {65, 9.5e-3, 3.62e-7},
      {15400, 2.62, 1.11e-4},
      {198, 3.33e-2, 1.41e-6},
      {161, 2.58e-2, 1.05e-6},
  };
  static constexpr double kEq4[5][4] = {
      {28, 4.69e-3, 1.96e-7, -0.597},
      {58, 8.19e-3, 3.09e-7, -3.74},
      {15100, 2.57, 1.09e-4, -141},
      {194, 3.26e-2, 1.37e-6, -1.93},
      {156, 2.49e-2, 1.00e-6, -2.54},
  };
  const std::string name = canonical_iqm(iqm);
  const auto& names = registry_iqms();
  const auto row = static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
  FunctionalFormModel m;
  m.iqm = name;
  m.form = form;
  m.provenance = "published";
  m.terms = {"bias", "logp_xt", "logp_xt^2"};
  if (form == Form::Eq3) {
    m.coef.assign(std::begin(kEq3[row]), std::end(kEq3[row]));
  } else {
    m.coef.assign(std::begin(kEq4[row]), std::end(kEq4[row]));
    m.terms.push_back("sigma_x");
  }
  return m;
}

inline double predict_sensitivity(const FunctionalFormModel& m, double logp_xt, std::optional<double> sigma_x = std::nullopt) {
  const std::size_t need = m.form == Form::Eq4 ? 4 : 3;
  if (m.coef.size() != need) throw ValidationError("functional form " + to_string(m.form) + " needs " + std::to_string(need) + " coefficients");
  if (m.form == Form::Eq4 && !sigma_x) throw ValidationError("eq4 needs sigma_x");
  if (m.form == Form::Eq3 && sigma_x) throw ValidationError("eq3 takes no sigma_x");
  double s = m.coef[0] + m.coef[1] * logp_xt + m.coef[2] * logp_xt * logp_xt;
  if (m.form == Form::Eq4) s += m.coef[3] * *sigma_x;
  return s;
}

}  // namespace percsens
