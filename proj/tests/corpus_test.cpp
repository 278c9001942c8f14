#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "dxformer/corpus.hpp"
#include "dxformer/synthetic.hpp"

namespace {

using namespace dxformer;
namespace fs = std::filesystem;

RawRecord raw(std::string id, std::string disease, std::vector<RawRecord::Pair> exp,
              std::vector<RawRecord::Pair> imp = {}) {
  return {std::move(id), std::move(disease), std::move(exp), std::move(imp)};
}

constexpr Attribute P = Attribute::pos;
constexpr Attribute N = Attribute::neg;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("dxformer_corpus_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

TEST(Attribute, ParsesAndPrints) {
  EXPECT_EQ(parse_attribute("POS"), Attribute::pos);
  EXPECT_EQ(parse_attribute("NEG"), Attribute::neg);
  EXPECT_EQ(parse_attribute("UNK"), Attribute::unk);
  EXPECT_FALSE(parse_attribute("pos").has_value());
  for (auto a : {Attribute::pos, Attribute::neg, Attribute::unk}) EXPECT_EQ(parse_attribute(to_string(a)), a);
}

TEST(Records, ParseMapsFieldsDirectly) {
  const auto doc = json::parse(R"([{"id": "r1", "disease": "URI", "explicit": [["cough", "POS"]],
      "implicit": [["fever", "POS"], ["runny nose", "NEG"]]}])");
  const auto records = parse_raw_records(doc);
  ASSERT_EQ(records.size(), 1u);
  const auto vocab = build_vocabulary(records);
  const auto mcr = resolve(records[0], vocab);
  EXPECT_EQ(mcr.explicit_count(), 1u);
  EXPECT_EQ(mcr.symptom_count(), 3u);
  EXPECT_EQ(vocab.symptom_name(mcr.implicit_symptoms[1].symptom), "runny nose");
  EXPECT_EQ(mcr.implicit_symptoms[1].attribute, N);
  EXPECT_EQ(vocab.disease_name(mcr.disease), "URI");
}

TEST(Records, RejectsInvariantViolations) {
  auto expect_category = [](const char* text, ErrorCategory c) {
    try {
      parse_raw_records(json::parse(text));
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.category(), c) << text;
    }
  };
  expect_category(R"([{"id":"a","disease":"d","explicit":[["x","POS"]],"implicit":[["x","NEG"]]}])",
                  ErrorCategory::invariant);
  expect_category(R"([{"id":"a","disease":"d","explicit":[],"implicit":[["x","NEG"]]}])", ErrorCategory::invariant);
  expect_category(R"([{"id":"a","disease":"d","explicit":[["x","UNK"]],"implicit":[]}])", ErrorCategory::invariant);
  expect_category(R"([{"id":"a","disease":"d","explicit":[["x"]],"implicit":[]}])", ErrorCategory::parse);
  expect_category(R"([{"id":"a","explicit":[["x","POS"]],"implicit":[]}])", ErrorCategory::parse);
  expect_category(R"({"id":"a"})", ErrorCategory::parse);
}

TEST(Records, UnknownNamesNeverExtendVocabulary) {
  const Vocabulary vocab({"cough", "fever"}, {"URI"});
  EXPECT_THROW(resolve(raw("a", "URI", {{"rash", P}}), vocab), Error);
  EXPECT_THROW(resolve(raw("a", "flu", {{"cough", P}}), vocab), Error);
  EXPECT_EQ(vocab.symptom_count(), 2u);
}

TEST(Records, EmptyImplicitListIsKept) {
  const auto r = parse_raw_records(json::parse(R"([{"id":"a","disease":"d","explicit":[["x","NEG"]],"implicit":[]}])"));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_TRUE(r[0].implicit_symptoms.empty());
}

TEST(Vocabulary, LexicographicAndDeterministic) {
  const std::vector<RawRecord> records{raw("1", "b", {{"fever", P}, {"cough", P}}),
                                       raw("2", "a", {{"nausea", P}}, {{"fever", N}})};
  const auto v = build_vocabulary(records);
  EXPECT_EQ(v.symptoms(), (std::vector<std::string>{"cough", "fever", "nausea"}));
  EXPECT_EQ(v.diseases(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(build_vocabulary(records), v);
  EXPECT_EQ(build_vocabulary(records).hash(), v.hash());
}

TEST(Vocabulary, EmptyCorpusIsAnError) { EXPECT_THROW(build_vocabulary({}), Error); }

TEST(Vocabulary, IdsAreABijection) {
  SyntheticSpec spec;
  const auto v = build_vocabulary(synthetic_records(spec));
  for (std::size_t i = 0; i < v.symptom_count(); ++i) EXPECT_EQ(v.symptom_id(v.symptom_name(i)), i);
  for (const auto& name : v.diseases()) EXPECT_EQ(v.disease_name(v.disease_id(name)), name);
  EXPECT_THROW(v.symptom_name(v.symptom_count()), Error);
}

TEST(Vocabulary, JsonRoundTripPreservesHash) {
  const Vocabulary v({"b", "a", "c"}, {"x"});
  const auto back = Vocabulary::from_json(json::parse(v.to_json().dump()));
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.hash(), v.hash());
  EXPECT_NE(Vocabulary({"a", "b", "c"}, {"x"}).hash(), v.hash());
  EXPECT_THROW(Vocabulary({"a", "a"}, {"x"}), Error);
}

TEST(CoOccurrence, SingleRecord) {
  const Vocabulary v({"cough", "fever"}, {"URI"});
  const auto c = build_cooccurrence({resolve(raw("1", "URI", {{"cough", P}}, {{"fever", N}}), v)}, v);
  EXPECT_EQ(c.disease_symptom_count(0, 0), 1u);
  EXPECT_EQ(c.disease_symptom_count(0, 1), 1u);
  EXPECT_EQ(c.pair_count(0, 1), 1u);
  EXPECT_EQ(c.pair_count(1, 0), 1u);
  EXPECT_EQ(c.pair_count(0, 0), 0u);
  EXPECT_EQ(c.marginal(1), 1u);
}

TEST(CoOccurrence, EmptyRecordListIsAllZero) {
  const Vocabulary v({"a", "b", "c"}, {"x", "y"});
  const auto c = build_cooccurrence({}, v);
  for (auto n : c.disease_symptom) EXPECT_EQ(n, 0u);
  for (auto n : c.symptom_symptom) EXPECT_EQ(n, 0u);
  for (auto n : c.symptom_marginal) EXPECT_EQ(n, 0u);
}

/// Naive counter: for every record and every (s, s') pair of vocabulary ids,
/// test membership directly.
CoOccurrence naive_cooccurrence(const std::vector<StructuredMCR>& records, std::size_t ns, std::size_t nd) {
  CoOccurrence c(ns, nd);
  for (const auto& r : records) {
    std::set<SymptomId> present;
    for (const auto& o : r.explicit_symptoms) present.insert(o.symptom);
    for (const auto& o : r.implicit_symptoms) present.insert(o.symptom);
    for (SymptomId s = 0; s < ns; ++s) {
      if (!present.count(s)) continue;
      c.disease_symptom[r.disease * ns + s] += 1;
      c.symptom_marginal[s] += 1;
      for (SymptomId t = 0; t < ns; ++t)
        if (t != s && present.count(t)) c.symptom_symptom[s * ns + t] += 1;
    }
  }
  return c;
}

TEST(CoOccurrence, HandBuiltCorpusMatchesBruteForce) {
  const std::vector<RawRecord> records{raw("1", "URI", {{"cough", P}}, {{"fever", P}, {"sneeze", N}}),
                                       raw("2", "flu", {{"fever", P}}, {{"ache", P}}),
                                       raw("3", "URI", {{"sneeze", P}, {"cough", N}})};
  const auto v = build_vocabulary(records);
  const auto s = resolve(records, v);
  const auto c = build_cooccurrence(s, v);
  EXPECT_EQ(c, naive_cooccurrence(s, v.symptom_count(), v.disease_count()));
  EXPECT_EQ(c.pair_count(v.symptom_id("cough"), v.symptom_id("sneeze")), 2u);
  EXPECT_EQ(c.disease_symptom_count(v.disease_id("URI"), v.symptom_id("cough")), 2u);
}

TEST(CoOccurrence, PropertyMatchesNaiveOracleOnRandomCorpora) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t ns = 3 + rng() % 10, nd = 1 + rng() % 4, n = rng() % 51;
    std::vector<StructuredMCR> records;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<SymptomId> ids(ns);
      for (std::size_t k = 0; k < ns; ++k) ids[k] = k;
      std::shuffle(ids.begin(), ids.end(), rng);
      const std::size_t total = 1 + rng() % ns, exp = 1 + rng() % total;
      StructuredMCR r;
      r.id = std::to_string(i);
      r.disease = rng() % nd;
      for (std::size_t k = 0; k < total; ++k)
        (k < exp ? r.explicit_symptoms : r.implicit_symptoms).push_back({ids[k], rng() % 2 ? P : N});
      records.push_back(r);
    }
    std::vector<std::string> sn, dn;
    for (std::size_t k = 0; k < ns; ++k) sn.push_back("s" + std::to_string(100 + k));
    for (std::size_t k = 0; k < nd; ++k) dn.push_back("d" + std::to_string(k));
    const auto c = build_cooccurrence(records, Vocabulary(sn, dn));
    ASSERT_EQ(c, naive_cooccurrence(records, ns, nd)) << "trial " << trial;
    for (std::size_t a = 0; a < ns; ++a)
      for (std::size_t b = 0; b < ns; ++b) EXPECT_EQ(c.pair_count(a, b), c.pair_count(b, a));
    for (std::size_t d = 0; d < nd; ++d) {
      std::size_t row = 0, mentions = 0;
      for (std::size_t s = 0; s < ns; ++s) row += c.disease_symptom_count(d, s);
      for (const auto& r : records)
        if (r.disease == d) mentions += r.symptom_count();
      EXPECT_EQ(row, mentions);
    }
  }
}

TEST(Files, SaveLoadRoundTripIsByteIdentical) {
  TempDir dir;
  SyntheticSpec spec;
  spec.negative_rate = 0.3;
  const auto records = synthetic_records(spec);
  write_raw_records(records, dir.path() / "a.json");
  const auto loaded = read_raw_records(dir.path() / "a.json");
  EXPECT_EQ(loaded, records);
  write_raw_records(loaded, dir.path() / "b.json");
  EXPECT_EQ(detail::read_file(dir.path() / "a.json"), detail::read_file(dir.path() / "b.json"));
}

TEST(Files, ManifestSplitsAndVocabulary) {
  TempDir dir;
  write_raw_records({raw("1", "URI", {{"cough", P}}, {{"fever", P}})}, dir.path() / "train.json");
  write_raw_records({raw("2", "URI", {{"fever", N}}, {{"rash", P}})}, dir.path() / "test.json");
  detail::write_file(dir.path() / "manifest.json", R"({"train": "train.json", "test": "test.json"})");

  // Without a vocabulary entry the test split may not introduce new names.
  EXPECT_THROW(open_dataset(dir.path() / "manifest.json"), Error);

  save_vocabulary(Vocabulary({"cough", "fever", "rash"}, {"URI"}), dir.path() / "vocab.json");
  detail::write_file(dir.path() / "manifest.json",
                     R"({"train": "train.json", "test": "test.json", "vocab": "vocab.json"})");
  const auto ds = open_dataset(dir.path() / "manifest.json");
  EXPECT_EQ(ds.vocab.symptom_count(), 3u);
  EXPECT_EQ(ds.train.size(), 1u);
  EXPECT_EQ(ds.test.size(), 1u);
  EXPECT_TRUE(ds.dev.empty());
  EXPECT_EQ(load_corpus(dir.path() / "manifest.json", "test", ds.vocab), ds.test);
  EXPECT_THROW(load_corpus(dir.path() / "manifest.json", "dev", ds.vocab), Error);
}

TEST(Files, MissingFileIsIoError) {
  try {
    read_raw_records("/nonexistent/records.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
  }
}

TEST(Synthetic, ClustersAreDisjointAndDeterministic) {
  SyntheticSpec spec;
  spec.records = 60;
  const auto a = synthetic_records(spec);
  EXPECT_EQ(a, synthetic_records(spec));
  const auto v = build_vocabulary(a);
  EXPECT_EQ(v.disease_count(), spec.diseases);
  EXPECT_EQ(v.symptom_count(), spec.diseases * spec.symptoms_per_disease);
  const auto s = resolve(a, v);
  const auto c = build_cooccurrence(s, v);
  for (std::size_t d = 0; d < v.disease_count(); ++d) {
    std::size_t touched = 0;
    for (std::size_t k = 0; k < v.symptom_count(); ++k) touched += c.disease_symptom_count(d, k) > 0;
    EXPECT_LE(touched, spec.symptoms_per_disease);
  }
}

}  // namespace
