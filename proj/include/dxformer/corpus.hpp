// Structured consultation records, vocabulary, co-occurrence statistics and
// dataset splits.
//
// On disk a dataset split is a JSON array of
//   {"id": str, "disease": str, "explicit": [[symptom, "POS"|"NEG"], ...],
//    "implicit": [[symptom, "POS"|"NEG"], ...]}
// a vocabulary is {"symptoms": [...], "diseases": [...]}, and a split manifest
// maps split names ("train", "dev", "test", optionally "vocab") to file paths
// relative to the manifest.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dxformer/error.hpp"

namespace dxformer {

using json = nlohmann::ordered_json;

using SymptomId = std::size_t;
using DiseaseId = std::size_t;

enum class Attribute : std::uint8_t { pos = 0, neg = 1, unk = 2 };

inline constexpr std::size_t kAttributeCount = 3;

inline std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::pos: return "POS";
    case Attribute::neg: return "NEG";
    case Attribute::unk: return "UNK";
  }
  return "UNK";
}

inline std::optional<Attribute> parse_attribute(std::string_view s) {
  if (s == "POS") return Attribute::pos;
  if (s == "NEG") return Attribute::neg;
  if (s == "UNK") return Attribute::unk;
  return std::nullopt;
}

struct Observation {
  SymptomId symptom = 0;
  Attribute attribute = Attribute::pos;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// A record as it appears on disk, with names instead of ids.
struct RawRecord {
  using Pair = std::pair<std::string, Attribute>;

  std::string id;
  std::string disease;
  std::vector<Pair> explicit_symptoms;
  std::vector<Pair> implicit_symptoms;

  friend bool operator==(const RawRecord&, const RawRecord&) = default;
};

/// One annotated consultation resolved against a Vocabulary.
struct StructuredMCR {
  std::string id;
  std::vector<Observation> explicit_symptoms;
  std::vector<Observation> implicit_symptoms;
  DiseaseId disease = 0;

  std::size_t explicit_count() const noexcept { return explicit_symptoms.size(); }
  std::size_t symptom_count() const noexcept {
    return explicit_symptoms.size() + implicit_symptoms.size();
  }

  bool is_implicit(SymptomId s) const {
    return std::any_of(implicit_symptoms.begin(), implicit_symptoms.end(),
                       [s](const Observation& o) { return o.symptom == s; });
  }

  friend bool operator==(const StructuredMCR&, const StructuredMCR&) = default;
};

/// Bijections between names and dense ids. Ids follow lexicographic name order.
class Vocabulary {
 public:
  Vocabulary() = default;

  Vocabulary(std::vector<std::string> symptoms, std::vector<std::string> diseases)
      : symptoms_(std::move(symptoms)), diseases_(std::move(diseases)) {
    index(symptoms_, symptom_ids_, "symptom");
    index(diseases_, disease_ids_, "disease");
  }

  std::size_t symptom_count() const noexcept { return symptoms_.size(); }
  std::size_t disease_count() const noexcept { return diseases_.size(); }
  const std::vector<std::string>& symptoms() const noexcept { return symptoms_; }
  const std::vector<std::string>& diseases() const noexcept { return diseases_; }

  SymptomId symptom_id(std::string_view name) const {
    auto it = symptom_ids_.find(std::string(name));
    if (it == symptom_ids_.end())
      throw Error(ErrorCategory::vocabulary, "unknown symptom '" + std::string(name) + "'");
    return it->second;
  }

  DiseaseId disease_id(std::string_view name) const {
    auto it = disease_ids_.find(std::string(name));
    if (it == disease_ids_.end())
      throw Error(ErrorCategory::vocabulary, "unknown disease '" + std::string(name) + "'");
    return it->second;
  }

  bool has_symptom(std::string_view name) const {
    return symptom_ids_.count(std::string(name)) != 0;
  }

  const std::string& symptom_name(SymptomId id) const {
    if (id >= symptoms_.size())
      throw Error(ErrorCategory::vocabulary, "symptom id " + std::to_string(id) + " out of range");
    return symptoms_[id];
  }

  const std::string& disease_name(DiseaseId id) const {
    if (id >= diseases_.size())
      throw Error(ErrorCategory::vocabulary, "disease id " + std::to_string(id) + " out of range");
    return diseases_[id];
  }

  json to_json() const { return json{{"symptoms", symptoms_}, {"diseases", diseases_}}; }

  static Vocabulary from_json(const json& j) {
    try {
      return Vocabulary(j.at("symptoms").get<std::vector<std::string>>(),
                        j.at("diseases").get<std::vector<std::string>>());
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::parse, std::string("vocabulary: ") + e.what());
    }
  }

  /// 64-bit FNV-1a over the canonical serialization.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : to_json().dump()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.symptoms_ == b.symptoms_ && a.diseases_ == b.diseases_;
  }

 private:
  static void index(const std::vector<std::string>& names,
                    std::unordered_map<std::string, std::size_t>& ids, const char* what) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!ids.emplace(names[i], i).second)
        throw Error(ErrorCategory::invariant,
                    std::string("duplicate ") + what + " name '" + names[i] + "'");
    }
  }

  std::vector<std::string> symptoms_;
  std::vector<std::string> diseases_;
  std::unordered_map<std::string, std::size_t> symptom_ids_;
  std::unordered_map<std::string, std::size_t> disease_ids_;
};

/// Mention-based counts over a training split; attribute polarity is ignored.
struct CoOccurrence {
  std::size_t symptoms = 0;
  std::size_t diseases = 0;
  std::vector<std::uint32_t> disease_symptom;  // diseases x symptoms
  std::vector<std::uint32_t> symptom_symptom;  // symptoms x symptoms
  std::vector<std::uint32_t> symptom_marginal;

  CoOccurrence() = default;
  CoOccurrence(std::size_t n_symptoms, std::size_t n_diseases)
      : symptoms(n_symptoms),
        diseases(n_diseases),
        disease_symptom(n_diseases * n_symptoms, 0),
        symptom_symptom(n_symptoms * n_symptoms, 0),
        symptom_marginal(n_symptoms, 0) {}

  std::uint32_t disease_symptom_count(DiseaseId d, SymptomId s) const {
    return disease_symptom.at(d * symptoms + s);
  }
  std::uint32_t pair_count(SymptomId a, SymptomId b) const {
    return symptom_symptom.at(a * symptoms + b);
  }
  std::uint32_t marginal(SymptomId s) const { return symptom_marginal.at(s); }

  friend bool operator==(const CoOccurrence&, const CoOccurrence&) = default;
};

namespace detail {

inline std::vector<RawRecord::Pair> parse_pairs(const json& arr, const std::string& record_id,
                                                const char* field) {
  if (!arr.is_array())
    throw Error(ErrorCategory::parse, "record '" + record_id + "': '" + field + "' is not an array");
  std::vector<RawRecord::Pair> out;
  for (const auto& item : arr) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_string() || !item[1].is_string())
      throw Error(ErrorCategory::parse,
                  "record '" + record_id + "': malformed " + field + " entry " + item.dump());
    auto attr = parse_attribute(item[1].get<std::string>());
    if (!attr || *attr == Attribute::unk)
      throw Error(ErrorCategory::invariant, "record '" + record_id + "': attribute must be POS or NEG, got " +
                                                item[1].dump());
    out.emplace_back(item[0].get<std::string>(), *attr);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json_file(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCategory::parse, path.string() + ": " + e.what());
  }
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::io, "cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace detail

/// Checks the structural invariants that do not need a vocabulary.
inline void validate(const RawRecord& r) {
  if (r.explicit_symptoms.empty())
    throw Error(ErrorCategory::invariant, "record '" + r.id + "': explicit symptom list is empty");
  std::set<std::string> seen;
  for (const auto* list : {&r.explicit_symptoms, &r.implicit_symptoms}) {
    for (const auto& [name, attr] : *list) {
      if (attr == Attribute::unk)
        throw Error(ErrorCategory::invariant, "record '" + r.id + "': UNK attribute on disk");
      if (!seen.insert(name).second)
        throw Error(ErrorCategory::invariant,
                    "record '" + r.id + "': symptom '" + name + "' appears twice");
    }
  }
}

inline std::vector<RawRecord> parse_raw_records(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorCategory::parse, "dataset file must be a JSON array");
  std::vector<RawRecord> out;
  out.reserve(doc.size());
  for (const auto& item : doc) {
    if (!item.is_object()) throw Error(ErrorCategory::parse, "dataset element is not an object");
    RawRecord r;
    try {
      r.id = item.at("id").get<std::string>();
      r.disease = item.at("disease").get<std::string>();
      r.explicit_symptoms = detail::parse_pairs(item.at("explicit"), r.id, "explicit");
      r.implicit_symptoms = detail::parse_pairs(item.at("implicit"), r.id, "implicit");
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::parse, std::string("dataset element: ") + e.what());
    }
    validate(r);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<RawRecord> read_raw_records(const std::filesystem::path& path) {
  return parse_raw_records(detail::parse_json_file(path));
}

inline json to_json(const RawRecord& r) {
  auto pairs = [](const std::vector<RawRecord::Pair>& list) {
    json arr = json::array();
    for (const auto& [name, attr] : list) arr.push_back(json::array({name, std::string(to_string(attr))}));
    return arr;
  };
  return json{{"id", r.id},
              {"disease", r.disease},
              {"explicit", pairs(r.explicit_symptoms)},
              {"implicit", pairs(r.implicit_symptoms)}};
}

inline std::string serialize_records(const std::vector<RawRecord>& records) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back(to_json(r));
  return arr.dump(1) + "\n";
}

inline void write_raw_records(const std::vector<RawRecord>& records, const std::filesystem::path& path) {
  detail::write_file(path, serialize_records(records));
}

/// Vocabulary from training records only; ids in lexicographic name order.
inline Vocabulary build_vocabulary(const std::vector<RawRecord>& records) {
  if (records.empty()) throw Error(ErrorCategory::invariant, "cannot build a vocabulary from an empty corpus");
  std::set<std::string> symptoms, diseases;
  for (const auto& r : records) {
    diseases.insert(r.disease);
    for (const auto& p : r.explicit_symptoms) symptoms.insert(p.first);
    for (const auto& p : r.implicit_symptoms) symptoms.insert(p.first);
  }
  return Vocabulary({symptoms.begin(), symptoms.end()}, {diseases.begin(), diseases.end()});
}

inline StructuredMCR resolve(const RawRecord& r, const Vocabulary& vocab) {
  validate(r);
  StructuredMCR out;
  out.id = r.id;
  out.disease = vocab.disease_id(r.disease);
  for (const auto& [name, attr] : r.explicit_symptoms) out.explicit_symptoms.push_back({vocab.symptom_id(name), attr});
  for (const auto& [name, attr] : r.implicit_symptoms) out.implicit_symptoms.push_back({vocab.symptom_id(name), attr});
  return out;
}

inline std::vector<StructuredMCR> resolve(const std::vector<RawRecord>& raw, const Vocabulary& vocab) {
  std::vector<StructuredMCR> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(resolve(r, vocab));
  return out;
}

inline RawRecord to_raw(const StructuredMCR& r, const Vocabulary& vocab) {
  RawRecord out;
  out.id = r.id;
  out.disease = vocab.disease_name(r.disease);
  for (const auto& o : r.explicit_symptoms) out.explicit_symptoms.emplace_back(vocab.symptom_name(o.symptom), o.attribute);
  for (const auto& o : r.implicit_symptoms) out.implicit_symptoms.emplace_back(vocab.symptom_name(o.symptom), o.attribute);
  return out;
}

inline CoOccurrence build_cooccurrence(const std::vector<StructuredMCR>& records, const Vocabulary& vocab) {
  const std::size_t ns = vocab.symptom_count();
  CoOccurrence c(ns, vocab.disease_count());
  std::vector<SymptomId> present;
  for (const auto& r : records) {
    if (r.disease >= c.diseases)
      throw Error(ErrorCategory::vocabulary, "record '" + r.id + "': disease id out of range");
    present.clear();
    for (const auto* list : {&r.explicit_symptoms, &r.implicit_symptoms})
      for (const auto& o : *list) {
        if (o.symptom >= ns)
          throw Error(ErrorCategory::vocabulary, "record '" + r.id + "': symptom id out of range");
        present.push_back(o.symptom);
      }
    for (std::size_t i = 0; i < present.size(); ++i) {
      const auto s = present[i];
      ++c.disease_symptom[r.disease * ns + s];
      ++c.symptom_marginal[s];
      for (std::size_t j = i + 1; j < present.size(); ++j) {
        ++c.symptom_symptom[s * ns + present[j]];
        ++c.symptom_symptom[present[j] * ns + s];
      }
    }
  }
  return c;
}

struct SplitManifest {
  std::map<std::string, std::filesystem::path> splits;
  std::optional<std::filesystem::path> vocabulary;

  const std::filesystem::path& path_for(const std::string& split) const {
    auto it = splits.find(split);
    if (it == splits.end()) throw Error(ErrorCategory::config, "split '" + split + "' not in manifest");
    return it->second;
  }
  bool has(const std::string& split) const { return splits.count(split) != 0; }
};

inline SplitManifest load_manifest(const std::filesystem::path& manifest_path) {
  const auto doc = detail::parse_json_file(manifest_path);
  if (!doc.is_object()) throw Error(ErrorCategory::parse, "split manifest must be a JSON object");
  const auto base = manifest_path.parent_path();
  SplitManifest m;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_string()) throw Error(ErrorCategory::parse, "manifest entry '" + key + "' is not a path");
    std::filesystem::path p = value.get<std::string>();
    if (p.is_relative()) p = base / p;
    if (key == "vocab") {
      m.vocabulary = p;
    } else {
      m.splits.emplace(key, p);
    }
  }
  return m;
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  return Vocabulary::from_json(detail::parse_json_file(path));
}

inline void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  detail::write_file(path, vocab.to_json().dump(1) + "\n");
}

/// Records of one split resolved against an existing vocabulary.
inline std::vector<StructuredMCR> load_corpus(const std::filesystem::path& manifest_path,
                                              const std::string& split, const Vocabulary& vocab) {
  const auto manifest = load_manifest(manifest_path);
  return resolve(read_raw_records(manifest.path_for(split)), vocab);
}

struct Dataset {
  Vocabulary vocab;
  std::vector<StructuredMCR> train;
  std::vector<StructuredMCR> dev;
  std::vector<StructuredMCR> test;
};

/// Loads every split named in the manifest. The vocabulary comes from the
/// manifest's "vocab" entry when present, otherwise from the train split.
inline Dataset open_dataset(const std::filesystem::path& manifest_path) {
  const auto manifest = load_manifest(manifest_path);
  const auto train_raw = read_raw_records(manifest.path_for("train"));
  Dataset ds;
  ds.vocab = manifest.vocabulary ? load_vocabulary(*manifest.vocabulary) : build_vocabulary(train_raw);
  ds.train = resolve(train_raw, ds.vocab);
  if (manifest.has("dev")) ds.dev = resolve(read_raw_records(manifest.path_for("dev")), ds.vocab);
  if (manifest.has("test")) ds.test = resolve(read_raw_records(manifest.path_for("test")), ds.vocab);
  return ds;
}

}  // namespace dxformer
