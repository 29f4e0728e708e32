#pragma once

#include <cctype>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percsens/core/error.hpp"
#include "percsens/core/io.hpp"
#include "percsens/core/records.hpp"

namespace percsens {

enum class TermKind { Bias, Identity, Power, Frac, Reciprocal, Product, Ratio };

struct FeatureTerm {
  TermKind kind = TermKind::Bias;
  std::string a, b;   // column names
  int power = 1;      // Power
  double gamma = 1.0; // Frac
  std::string label;  // optional display name; defaults to name()

  std::string name() const {
    if (!label.empty()) return label;
    switch (kind) {
      case TermKind::Bias: return "bias";
      case TermKind::Identity: return a;
      case TermKind::Power: return a + "^" + std::to_string(power);
      case TermKind::Frac: return "frac(" + a + "," + format_number(gamma) + ")";
      case TermKind::Reciprocal: return "1/" + a;
      case TermKind::Product: return a + "*" + b;
      case TermKind::Ratio: return a + "/" + b;
    }
    return "?";
  }

  std::vector<std::string> columns() const {
    switch (kind) {
      case TermKind::Bias: return {};
      case TermKind::Product:
      case TermKind::Ratio: return {a, b};
      default: return {a};
    }
  }

  static FeatureTerm make(TermKind k, std::string a, std::string b = {}, int power = 1, double gamma = 1.0) {
    FeatureTerm t;
    t.kind = k;
    t.a = std::move(a);
    t.b = std::move(b);
    t.power = power;
    t.gamma = gamma;
    return t;
  }
  static FeatureTerm bias() { return {}; }
  static FeatureTerm identity(std::string c) { return make(TermKind::Identity, std::move(c)); }
  static FeatureTerm pow(std::string c, int k) { return make(TermKind::Power, std::move(c), {}, k); }
  static FeatureTerm frac(std::string c, double g) { return make(TermKind::Frac, std::move(c), {}, 1, g); }
  static FeatureTerm reciprocal(std::string c) { return make(TermKind::Reciprocal, std::move(c)); }
  static FeatureTerm product(std::string x, std::string y) { return make(TermKind::Product, std::move(x), std::move(y)); }
  static FeatureTerm ratio(std::string x, std::string y) { return make(TermKind::Ratio, std::move(x), std::move(y)); }
};

/// Log-probability style columns: fractional powers act on -value.
inline bool is_logprob_column(std::string_view c) {
  return c.rfind("logp_", 0) == 0 || c == "path_integral";
}

inline double frac_power(std::string_view column, double v, double gamma) {
  const double base = is_logprob_column(column) ? -v : v;
  const double mag = std::pow(std::abs(base), gamma);
  return base < 0.0 ? -mag : mag;
}

struct FeatureSpec {
  std::vector<FeatureTerm> terms;

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (const auto& t : terms) n.push_back(t.name());
    return n;
  }
  std::vector<std::string> columns() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& t : terms)
      for (auto& c : t.columns())
        if (seen.insert(c).second) out.push_back(c);
    return out;
  }
  bool has_bias() const {
    for (const auto& t : terms)
      if (t.kind == TermKind::Bias) return true;
    return false;
  }
  void validate() const {
    if (terms.empty()) throw ValidationError("feature spec has no terms");
    std::set<std::string> seen;
    for (const auto& t : terms) {
      if (!seen.insert(t.name()).second) throw ValidationError("duplicate feature term '" + t.name() + "'");
      if (t.kind == TermKind::Power && t.power < 2) throw ValidationError("power term needs exponent >= 2");
      if (t.kind == TermKind::Frac && !(t.gamma > 0.0 && std::isfinite(t.gamma)))
        throw ValidationError("fractional power needs a positive exponent");
    }
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Short names used by the ablation tables.
inline std::string expand_alias(const std::string& c) {
  if (c == "p") return "logp_xt";
  if (c == "s") return "sigma_x";
  return c;
}

inline double parse_exponent(const std::string& t, const std::string& where) {
  const auto slash = t.find('/');
  if (slash != std::string::npos)
    return parse_number(trim(t.substr(0, slash)), where) / parse_number(trim(t.substr(slash + 1)), where);
  return parse_number(t, where);
}

}  // namespace detail

// One term per line; blank lines and '#' comments ignored.
//   bias | COL | COL^K | frac(COL,G) | 1/COL | A*B | A/B
// G may be written as a fraction (1/3). "p" and "s" abbreviate logp_xt and
// sigma_x.
inline FeatureTerm parse_feature_term(std::string line, const std::string& where = "term") {
  using detail::expand_alias;
  using detail::trim;
  line = trim(line);
  if (line.empty()) throw ValidationError(where + ": empty term");
  if (line == "bias" || line == "b") return FeatureTerm::bias();
  if (line.rfind("frac(", 0) == 0) {
    if (line.back() != ')') throw ValidationError(where + ": malformed frac term '" + line + "'");
    const auto inner = line.substr(5, line.size() - 6);
    const auto comma = inner.find(',');
    if (comma == std::string::npos) throw ValidationError(where + ": frac term needs (column,exponent)");
    return FeatureTerm::frac(expand_alias(trim(inner.substr(0, comma))), detail::parse_exponent(trim(inner.substr(comma + 1)), where));
  }
  if (line.rfind("1/", 0) == 0) return FeatureTerm::reciprocal(expand_alias(trim(line.substr(2))));
  if (auto p = line.find('^'); p != std::string::npos) {
    const double k = parse_number(trim(line.substr(p + 1)), where);
    if (k != std::floor(k)) throw ValidationError(where + ": integer power expected in '" + line + "'");
    return FeatureTerm::pow(expand_alias(trim(line.substr(0, p))), static_cast<int>(k));
  }
  if (auto p = line.find('*'); p != std::string::npos)
    return FeatureTerm::product(expand_alias(trim(line.substr(0, p))), expand_alias(trim(line.substr(p + 1))));
  if (auto p = line.find('/'); p != std::string::npos)
    return FeatureTerm::ratio(expand_alias(trim(line.substr(0, p))), expand_alias(trim(line.substr(p + 1))));
  for (char c : line)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
      throw ValidationError(where + ": cannot parse term '" + line + "'");
  return FeatureTerm::identity(expand_alias(line));
}

inline FeatureSpec parse_feature_spec(const std::string& text, const std::string& source = "spec") {
  FeatureSpec spec;
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++lineno;
    auto line = text.substr(start, end - start);
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (!detail::trim(line).empty()) spec.terms.push_back(parse_feature_term(line, source + ":" + std::to_string(lineno)));
    start = end + 1;
  }
  spec.validate();
  return spec;
}

inline FeatureSpec load_feature_spec(const fs::path& path) { return parse_feature_spec(read_text_file(path), path.string()); }

struct DesignMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd x;
};

inline double term_value(const FeatureTerm& t, const std::vector<const std::vector<double>*>& cols, std::size_t r) {
  auto get = [&](std::size_t k) { return (*cols[k])[r]; };
  auto nonzero = [&](double v, const std::string& c) {
    if (std::abs(v) < 1e-12)
      throw NumericalError("feature '" + t.name() + "': |" + c + "| < 1e-12 at row " + std::to_string(r));
    return v;
  };
  switch (t.kind) {
    case TermKind::Bias: return 1.0;
    case TermKind::Identity: return get(0);
    case TermKind::Power: return std::pow(get(0), t.power);
    case TermKind::Frac: return frac_power(t.a, get(0), t.gamma);
    case TermKind::Reciprocal: return 1.0 / nonzero(get(0), t.a);
    case TermKind::Product: return get(0) * get(1);
    case TermKind::Ratio: return get(0) / nonzero(get(1), t.b);
  }
  return 0.0;
}

inline DesignMatrix expand_features(const DataTable& table, const FeatureSpec& spec) {
  spec.validate();
  DesignMatrix d;
  d.names = spec.names();
  const auto n = static_cast<Eigen::Index>(table.rows());
  d.x.resize(n, static_cast<Eigen::Index>(spec.terms.size()));
  for (std::size_t j = 0; j < spec.terms.size(); ++j) {
    const auto& t = spec.terms[j];
    std::vector<const std::vector<double>*> cols;
    for (const auto& c : t.columns()) {
      if (!table.has(c)) throw ValidationError("feature '" + t.name() + "' references unknown column '" + c + "'");
      cols.push_back(&table.column(c));
      for (std::size_t r = 0; r < table.rows(); ++r)
        if (!std::isfinite((*cols.back())[r]))
          throw ValidationError("feature '" + t.name() + "': column '" + c + "' is not finite at row " + std::to_string(r));
    }
    for (Eigen::Index r = 0; r < n; ++r)
      d.x(r, static_cast<Eigen::Index>(j)) = term_value(t, cols, static_cast<std::size_t>(r));
  }
  return d;
}

}  // namespace percsens
