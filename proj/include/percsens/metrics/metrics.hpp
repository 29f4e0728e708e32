#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"
#include "percsens/core/io.hpp"
#include "percsens/core/records.hpp"
#include "percsens/metrics/msssim.hpp"
#include "percsens/metrics/nlpd.hpp"

namespace percsens {

/// RMSE in [0,1]-range units.
inline double euclidean_rmse(const ImageTensor& x, const ImageTensor& y) {
  if (x.shape() != y.shape()) throw ValidationError("RMSE: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  return rmse_unit(x, y);
}

/// Raised when the sensitivity ratio has a zero denominator.
class UndefinedSensitivity : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// S = D / ||x - x~||_2 with the norm taken in the canonical [-1,1] range.
inline double sensitivity(double distance, const ImageTensor& x, const ImageTensor& xt) {
  const auto cx = convert_range(x, Range::Symmetric), ct = convert_range(xt, Range::Symmetric);
  const double norm = std::sqrt(squared_distance(cx, ct));
  if (norm == 0.0) throw UndefinedSensitivity("undefined sensitivity: reference and distorted images are identical");
  return distance / norm;
}

/// Same ratio from a stored [0,1]-unit RMSE over `dim` elements.
inline double sensitivity_from_rmse(double distance, double rmse, std::size_t dim) {
  const double norm = l2_from_unit_rmse(rmse, dim);
  if (norm == 0.0) throw UndefinedSensitivity("undefined sensitivity: zero distortion");
  return distance / norm;
}

enum class MetricKind { MsSsim, Nlpd, Rmse, External };

struct MetricSpec {
  std::string name;
  MetricKind kind = MetricKind::Rmse;
  MsSsimParams msssim;
  NlpdParams nlpd;
  fs::path external_file;  // kind == External

  bool builtin() const { return kind != MetricKind::External; }

  double evaluate(const ImageTensor& x, const ImageTensor& y) const {
    switch (kind) {
      case MetricKind::MsSsim: return ms_ssim(x, y, msssim);
      case MetricKind::Nlpd: return percsens::nlpd(x, y, nlpd);
      case MetricKind::Rmse: return euclidean_rmse(x, y);
      case MetricKind::External: break;
    }
    throw UnsupportedError("metric '" + name + "' is external; its distances come from " + external_file.string());
  }

  nlohmann::json params_json() const {
    switch (kind) {
      case MetricKind::MsSsim:
        return {{"kind", "builtin-msssim"},
                {"window", msssim.window},
                {"sigma", msssim.sigma},
                {"k1", msssim.k1},
                {"k2", msssim.k2},
                {"scales", msssim.scales},
                {"weights", msssim.weights},
                {"input_range", "[0,1]"},
                {"color", "per-channel mean"}};
      case MetricKind::Nlpd:
        return {{"kind", "builtin-nlpd"},
                {"levels", nlpd.levels},
                {"c_factor", nlpd.c_factor},
                {"c_floor", nlpd.c_floor},
                {"pyramid_filter", "binomial-5 + 2x2 mean"},
                {"normalization", "c + 3x3 box mean of |band|, c pooled over both images"},
                {"input_range", "[-1,1]"},
                {"color", "per-channel mean"}};
      case MetricKind::Rmse: return {{"kind", "builtin-rmse"}, {"units", "[0,1]"}};
      case MetricKind::External: return {{"kind", "external-file"}, {"file", external_file.generic_string()}};
    }
    return {};
  }
};

/// Parses "msssim", "nlpd", "rmse", "external:FILE" or "NAME=external:FILE".
/// Optional JSON params override builtin defaults.
inline MetricSpec parse_metric_spec(const std::string& text, const nlohmann::json& params = nlohmann::json::object()) {
  MetricSpec s;
  std::string body = text;
  std::string name;
  if (auto eq = text.find('='); eq != std::string::npos) {
    name = text.substr(0, eq);
    body = text.substr(eq + 1);
  }
  if (body == "msssim") {
    s.kind = MetricKind::MsSsim;
  } else if (body == "nlpd") {
    s.kind = MetricKind::Nlpd;
  } else if (body == "rmse") {
    s.kind = MetricKind::Rmse;
  } else if (body.rfind("external:", 0) == 0) {
    s.kind = MetricKind::External;
    s.external_file = body.substr(9);
    if (s.external_file.empty()) throw ValidationError("metric '" + text + "': external file path is empty");
    if (name.empty()) name = s.external_file.stem().string();
  } else {
    throw ValidationError("unknown metric '" + text + "' (expected msssim, nlpd, rmse or external:FILE)");
  }
  s.name = name.empty() ? body : name;
  validate_field(s.name, "metric name");
  if (!params.is_object()) throw ValidationError("metric '" + s.name + "': params must be an object");
  try {
    if (s.kind == MetricKind::MsSsim) {
      auto& p = s.msssim;
      p.window = params.value("window", p.window);
      p.sigma = params.value("sigma", p.sigma);
      p.k1 = params.value("k1", p.k1);
      p.k2 = params.value("k2", p.k2);
      p.scales = params.value("scales", p.scales);
      if (params.contains("weights")) p.weights = params.at("weights").get<std::vector<double>>();
      if (p.window < 1 || p.window % 2 == 0) throw ValidationError("MS-SSIM window must be odd and positive");
    } else if (s.kind == MetricKind::Nlpd) {
      auto& p = s.nlpd;
      p.levels = params.value("levels", p.levels);
      p.c_factor = params.value("c_factor", p.c_factor);
      p.c_floor = params.value("c_floor", p.c_floor);
      if (p.c_floor <= 0.0) throw ValidationError("NLPD c_floor must be > 0");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("metric '" + s.name + "': bad params: " + e.what());
  }
  return s;
}

struct ExternalDistances {
  std::string metric;
  std::map<std::string, double> distance;  // pair_id -> distance
  std::vector<std::string> missing;        // known pairs absent from the file
};

/// Reads a `pair_id,distance` file. Unknown ids, negative values and duplicate
/// rows are errors; known pairs absent from the file are reported in
/// `missing`.
inline ExternalDistances ingest_external_distances(const fs::path& file, const std::string& metric,
                                                   const std::vector<std::string>& known_pairs) {
  const auto doc = read_csv(file);
  if (doc.header.size() != 2 || doc.header[0] != "pair_id" || doc.header[1] != "distance")
    throw ValidationError(file.string() + ": expected header 'pair_id,distance'");
  std::set<std::string> known(known_pairs.begin(), known_pairs.end());
  ExternalDistances out;
  out.metric = metric;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto where = file.string() + ":" + std::to_string(doc.line_numbers[r]);
    const auto& id = doc.rows[r][0];
    const double d = parse_number(doc.rows[r][1], where);
    if (!known.count(id)) throw ValidationError(where + ": unknown pair_id '" + id + "'");
    if (!std::isfinite(d)) throw ValidationError(where + ": distance for '" + id + "' is not finite");
    if (d < 0.0) throw ValidationError(where + ": negative distance " + format_number(d) + " for '" + id + "'");
    if (!out.distance.emplace(id, d).second) throw ValidationError(where + ": duplicate row for '" + id + "'");
  }
  for (const auto& id : known_pairs)
    if (!out.distance.count(id)) out.missing.push_back(id);
  return out;
}

}  // namespace percsens
