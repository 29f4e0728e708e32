#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "percsens/core/error.hpp"
#include "percsens/core/image.hpp"
#include "percsens/core/io.hpp"

namespace percsens {

inline constexpr int kManifestSchemaVersion = 1;

struct ImageEntry {
  std::string id;
  fs::path path;  // relative paths are resolved against the manifest directory
  Shape shape;
  Range range = Range::Symmetric;
};

struct PairEntry {
  std::string pair_id;
  std::string reference;
  std::string distorted;
  double epsilon = 0.0;
  double rmse = 0.0;
};

struct ExternalScores {
  std::optional<fs::path> logprob;              // image_id,logp_nats
  std::map<std::string, fs::path> distances;    // metric name -> pair_id,distance
  std::map<std::string, fs::path> gradients;    // image id -> raw float vector
};

// Dataset manifest (JSON). Layout:
//
//   {
//     "schema_version": 1,
//     "images":   [{"id": "img_0001", "path": "images/img_0001.f32",
//                   "shape": [32, 32, 3], "range": "[-1,1]"}, ...],
//     "pairs":    [{"pair_id": "img_0001", "reference": "img_0001",
//                   "distorted": "img_0001.noisy", "epsilon": 0.2,
//                   "rmse": 0.0018}, ...],                       (optional)
//     "external": {"logprob": "logp.csv",
//                  "distances": {"lpips": "lpips.csv"},
//                  "gradients": {"img_0001": "grad/img_0001.f32"}}, (optional)
//     "provenance": {...}                                         (optional, free-form)
//   }
//
// Objects are immutable after load_manifest returns and safe to share.
struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  fs::path base_dir;
  std::vector<ImageEntry> images;
  std::vector<PairEntry> pairs;
  ExternalScores external;
  nlohmann::json provenance = nlohmann::json::object();

  const ImageEntry& image(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown image id '" + id + "'");
    return images[it->second];
  }
  bool has_image(const std::string& id) const { return index_.count(id) != 0; }

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

  ImageTensor load_image(const std::string& id) const {
    const auto& e = image(id);
    return read_image_payload(resolve(e.path), e.shape, e.range);
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!index_.emplace(images[i].id, i).second)
        throw ValidationError("duplicate image id '" + images[i].id + "'");
    }
  }

 private:
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ValidationError("schema: missing field " + where + "." + key);
  return obj.at(key);
}

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw ValidationError("schema: " + where + "." + key + " must be a string");
  return v.get<std::string>();
}

inline double require_number(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number()) throw ValidationError("schema: " + where + "." + key + " must be a number");
  return v.get<double>();
}

}  // namespace detail

/// Parses and validates a manifest document. `base_dir` anchors relative
/// paths. Payload sizes are checked against declared shapes when
/// `check_payloads` is set.
inline DatasetManifest parse_manifest(const nlohmann::json& doc, const fs::path& base_dir, bool check_payloads = true) {
  using detail::require;
  DatasetManifest m;
  m.base_dir = base_dir;
  if (!doc.is_object()) throw ValidationError("schema: manifest root must be an object");
  const auto& ver = require(doc, "schema_version", "manifest");
  if (!ver.is_number_integer()) throw ValidationError("schema: manifest.schema_version must be an integer");
  m.schema_version = ver.get<int>();
  if (m.schema_version != kManifestSchemaVersion)
    throw ValidationError("schema: unsupported schema_version " + std::to_string(m.schema_version));

  const auto& imgs = require(doc, "images", "manifest");
  if (!imgs.is_array()) throw ValidationError("schema: manifest.images must be an array");
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const auto& e = imgs[i];
    ImageEntry entry;
    entry.id = detail::require_string(e, "id", where);
    if (entry.id.empty()) throw ValidationError("schema: " + where + ".id is empty");
    validate_field(entry.id, where + ".id");
    entry.path = detail::require_string(e, "path", where);
    const auto& shape = require(e, "shape", where);
    if (!shape.is_array() || shape.size() != 3 || !std::all_of(shape.begin(), shape.end(), [](const auto& v) {
          return v.is_number_integer() && v.template get<long long>() >= 1;
        }))
      throw ValidationError("schema: " + where + ".shape must be [height, width, channels] of positive integers");
    entry.shape = Shape{shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>()};
    try {
      entry.range = parse_range(detail::require_string(e, "range", where));
    } catch (const ValidationError& err) {
      throw ValidationError("schema: " + where + ".range: " + err.what());
    }
    m.images.push_back(std::move(entry));
  }
  m.rebuild_index();

  if (doc.contains("pairs")) {
    const auto& pairs = doc.at("pairs");
    if (!pairs.is_array()) throw ValidationError("schema: manifest.pairs must be an array");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string where = "pairs[" + std::to_string(i) + "]";
      PairEntry p;
      p.pair_id = detail::require_string(pairs[i], "pair_id", where);
      validate_field(p.pair_id, where + ".pair_id");
      p.reference = detail::require_string(pairs[i], "reference", where);
      p.distorted = detail::require_string(pairs[i], "distorted", where);
      p.epsilon = detail::require_number(pairs[i], "epsilon", where);
      p.rmse = detail::require_number(pairs[i], "rmse", where);
      if (!seen.insert(p.pair_id).second) throw ValidationError("duplicate pair id '" + p.pair_id + "'");
      for (const auto* ref : {&p.reference, &p.distorted})
        if (!m.has_image(*ref)) throw ValidationError("schema: " + where + " references unknown image '" + *ref + "'");
      if (m.image(p.reference).shape != m.image(p.distorted).shape ||
          m.image(p.reference).range != m.image(p.distorted).range)
        throw ValidationError("schema: " + where + " reference and distorted differ in shape or range");
      m.pairs.push_back(std::move(p));
    }
  }

  if (doc.contains("external")) {
    const auto& ext = doc.at("external");
    if (!ext.is_object()) throw ValidationError("schema: manifest.external must be an object");
    if (ext.contains("logprob")) m.external.logprob = detail::require_string(ext, "logprob", "external");
    if (ext.contains("distances")) {
      const auto& d = ext.at("distances");
      if (!d.is_object()) throw ValidationError("schema: external.distances must be an object");
      for (auto it = d.begin(); it != d.end(); ++it) {
        if (!it.value().is_string()) throw ValidationError("schema: external.distances." + it.key() + " must be a string");
        m.external.distances[it.key()] = it.value().get<std::string>();
      }
    }
    if (ext.contains("gradients")) {
      const auto& g = ext.at("gradients");
      if (!g.is_object()) throw ValidationError("schema: external.gradients must be an object");
      for (auto it = g.begin(); it != g.end(); ++it) {
        if (!it.value().is_string()) throw ValidationError("schema: external.gradients." + it.key() + " must be a string");
        m.external.gradients[it.key()] = it.value().get<std::string>();
      }
    }
  }
  if (doc.contains("provenance")) m.provenance = doc.at("provenance");

  if (check_payloads) {
    for (const auto& e : m.images) {
      const auto p = m.resolve(e.path);
      std::error_code ec;
      const auto bytes = fs::file_size(p, ec);
      if (ec) throw ValidationError("image '" + e.id + "': payload " + p.string() + " not found");
      if (bytes != e.shape.size() * 4)
        throw ValidationError("shape mismatch for image '" + e.id + "': payload holds " + std::to_string(bytes / 4) +
                              " floats, declared " + e.shape.str() + " needs " + std::to_string(e.shape.size()));
    }
  }
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("manifest not found: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_manifest(doc, path.parent_path());
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json doc;
  doc["schema_version"] = m.schema_version;
  auto& imgs = doc["images"] = nlohmann::json::array();
  for (const auto& e : m.images)
    imgs.push_back({{"id", e.id},
                    {"path", e.path.generic_string()},
                    {"shape", {e.shape.height, e.shape.width, e.shape.channels}},
                    {"range", std::string(to_string(e.range))}});
  if (!m.pairs.empty()) {
    auto& pairs = doc["pairs"] = nlohmann::json::array();
    for (const auto& p : m.pairs)
      pairs.push_back({{"pair_id", p.pair_id},
                       {"reference", p.reference},
                       {"distorted", p.distorted},
                       {"epsilon", p.epsilon},
                       {"rmse", p.rmse}});
  }
  if (m.external.logprob || !m.external.distances.empty() || !m.external.gradients.empty()) {
    auto& ext = doc["external"] = nlohmann::json::object();
    if (m.external.logprob) ext["logprob"] = m.external.logprob->generic_string();
    for (const auto& [k, v] : m.external.distances) ext["distances"][k] = v.generic_string();
    for (const auto& [k, v] : m.external.gradients) ext["gradients"][k] = v.generic_string();
  }
  if (!m.provenance.empty()) doc["provenance"] = m.provenance;
  return doc;
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
  write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

}  // namespace percsens
