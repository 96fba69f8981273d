#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "specagent/kb.hpp"
#include "specagent/synthetic.hpp"

using namespace specagent;
namespace fs = std::filesystem;

namespace {

KbRecord record(const std::string& id, const std::string& focus,
                const std::string& technique = "", const std::string& bands = "") {
  KbRecord r;
  r.id = id;
  r.material_focus = focus;
  r.technique = technique;
  r.wavelength_bands = bands;
  r.best_preprocessing = {"SNV"};
  r.best_feature = "PCA";
  return r;
}

}  // namespace

TEST_CASE("tokenizer lowercases, splits on non-alphanumerics and drops singles") {
  CHECK(tokenize("Pu'er Tea (NIR)") == std::vector<std::string>{"pu", "er", "tea", "nir"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("COD COD cod") == std::vector<std::string>{"cod", "cod", "cod"});
  CHECK(tokenize("a b c") == std::vector<std::string>{});  // all length-1
  CHECK(tokenize("400-1700 nm") == std::vector<std::string>{"400", "1700", "nm"});
}

TEST_CASE("index vocabulary is the union of document tokens") {
  const std::vector<KbRecord> records = {record("d1", "ink analysis"),
                                         record("d2", "tea analysis"),
                                         record("d3", "water quality")};
  const KbIndex index = build_index(records, RetrievalEngine::Bow);
  CHECK(index.vocabulary.size() == 5);  // ink, analysis, tea, water, quality
  CHECK(index.doc_freq[static_cast<std::size_t>(index.term_ids.at("analysis"))] == 2);
  CHECK(index.avg_doc_length == doctest::Approx(2.0));
}

TEST_CASE("an empty corpus cannot be indexed") {
  try {
    build_index({}, RetrievalEngine::Bm25);
    FAIL("expected EmptyCorpus");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyCorpus);
  }
}

TEST_CASE("rebuilding an index from identical records is byte-identical") {
  const RetrievalFixture fixture = synthetic_retrieval_corpus(11);
  const fs::path dir = fs::temp_directory_path() / "specagent_kb_test";
  fs::create_directories(dir);
  save_index(build_index(fixture.records, RetrievalEngine::Bm25), (dir / "a.idx").string());
  save_index(build_index(fixture.records, RetrievalEngine::Bm25), (dir / "b.idx").string());

  std::ifstream fa(dir / "a.idx", std::ios::binary), fb(dir / "b.idx", std::ios::binary);
  const std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(a == b);
  CHECK(a.substr(0, 4) == "SKB1");
}

TEST_CASE("the 200-document corpus indexes under every engine") {
  const RetrievalFixture fixture = synthetic_retrieval_corpus(11);
  REQUIRE(fixture.records.size() == 200);
  REQUIRE(fixture.queries.size() == 100);
  for (RetrievalEngine engine :
       {RetrievalEngine::Bow, RetrievalEngine::Bm25, RetrievalEngine::Tfidf}) {
    const KbIndex index = build_index(fixture.records, engine);
    CHECK(index.record_ids.size() == 200);
  }
}

TEST_CASE("a document's own text ranks it first under all engines") {
  const std::vector<KbRecord> records = {
      record("d1", "stamp pad ink", "near infrared spectroscopy", "400-1700 nm"),
      record("d2", "pu er tea", "raman spectroscopy", "900-1700 nm"),
      record("d3", "waste water cod", "uv vis spectroscopy", "190-1100 nm")};
  for (RetrievalEngine engine :
       {RetrievalEngine::Bow, RetrievalEngine::Bm25, RetrievalEngine::Tfidf}) {
    const KbIndex index = build_index(records, engine);
    for (const KbRecord& r : records) {
      const QueryResult result =
          query(index, r.material_focus + " " + r.technique + " " + r.wavelength_bands, 3);
      REQUIRE_FALSE(result.hits.empty());
      CHECK(result.hits[0].record_id == r.id);
    }
  }
}

TEST_CASE("a unique term retrieves its sole document") {
  const std::vector<KbRecord> records = {record("d1", "ink analysis"),
                                         record("d2", "tea analysis")};
  for (RetrievalEngine engine :
       {RetrievalEngine::Bow, RetrievalEngine::Bm25, RetrievalEngine::Tfidf}) {
    const QueryResult result = query(build_index(records, engine), "ink", 3);
    REQUIRE(result.hits.size() == 1);
    CHECK(result.hits[0].record_id == "d1");
    CHECK(result.hits[0].rank == 1);
  }
}

TEST_CASE("bm25 scores match a hand evaluation of the okapi formula") {
  // d1: [ink, spectra, analysis], d2: [tea, spectra], d3: [water, quality, analysis, water]
  const std::vector<KbRecord> records = {record("d1", "ink spectra analysis"),
                                         record("d2", "tea spectra"),
                                         record("d3", "water quality analysis water")};
  const KbIndex index = build_index(records, RetrievalEngine::Bm25);
  const QueryResult result = query(index, "water analysis", 3);

  // hand evaluation with k1 = 1.5, b = 0.75, N = 3, avgdl = 3:
  const double k1 = 1.5, b = 0.75, avgdl = 3.0;
  const double idf_water = std::log((3 - 1 + 0.5) / (1 + 0.5) + 1.0);
  const double idf_analysis = std::log((3 - 2 + 0.5) / (2 + 0.5) + 1.0);
  auto term = [&](double tf, double idf, double dl) {
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
  };
  const double d3_expected = term(2, idf_water, 4) + term(1, idf_analysis, 4);
  const double d1_expected = term(1, idf_analysis, 3);

  REQUIRE(result.hits.size() == 2);  // d2 scores zero and is dropped
  CHECK(result.hits[0].record_id == "d3");
  CHECK(result.hits[0].score == doctest::Approx(d3_expected).epsilon(1e-9));
  CHECK(result.hits[1].record_id == "d1");
  CHECK(result.hits[1].score == doctest::Approx(d1_expected).epsilon(1e-9));
}

TEST_CASE("bow cosine matches a hand evaluation") {
  const std::vector<KbRecord> records = {record("d1", "ink ink spectra"),
                                         record("d2", "ink tea")};
  const KbIndex index = build_index(records, RetrievalEngine::Bow);
  const QueryResult result = query(index, "ink spectra", 2);
  // d1 counts (ink 2, spectra 1), query (ink 1, spectra 1):
  const double d1_expected = (2.0 + 1.0) / (std::sqrt(5.0) * std::sqrt(2.0));
  const double d2_expected = 1.0 / (std::sqrt(2.0) * std::sqrt(2.0));
  REQUIRE(result.hits.size() == 2);
  CHECK(result.hits[0].score == doctest::Approx(d1_expected).epsilon(1e-12));
  CHECK(result.hits[1].score == doctest::Approx(d2_expected).epsilon(1e-12));
}

TEST_CASE("queries with no vocabulary overlap return an empty flagged result") {
  const std::vector<KbRecord> records = {record("d1", "ink analysis")};
  const QueryResult result = query(build_index(records, RetrievalEngine::Bm25), "zzz qqq", 3);
  CHECK(result.hits.empty());
  CHECK(result.empty_query);
}

TEST_CASE("ties break on ascending record id and ranks stay contiguous") {
  const std::vector<KbRecord> records = {record("dz", "ink analysis"),
                                         record("da", "ink analysis"),
                                         record("dm", "ink analysis")};
  const QueryResult result = query(build_index(records, RetrievalEngine::Bm25), "ink", 3);
  REQUIRE(result.hits.size() == 3);
  CHECK(result.hits[0].record_id == "da");
  CHECK(result.hits[1].record_id == "dm");
  CHECK(result.hits[2].record_id == "dz");
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(result.hits[i].rank == static_cast<int>(i + 1));
    if (i > 0) CHECK(result.hits[i].score <= result.hits[i - 1].score);
  }
}

TEST_CASE("adding an irrelevant document leaves cosine scores unchanged") {
  const std::vector<KbRecord> base = {record("d1", "stamp pad ink"),
                                      record("d2", "pu er tea")};
  std::vector<KbRecord> extended = base;
  extended.push_back(record("d3", "unrelated polymer blend"));

  for (RetrievalEngine engine : {RetrievalEngine::Bow, RetrievalEngine::Tfidf}) {
    const QueryResult before = query(build_index(base, engine), "stamp pad ink", 1);
    const QueryResult after = query(build_index(extended, engine), "stamp pad ink", 1);
    REQUIRE(!before.hits.empty());
    REQUIRE(!after.hits.empty());
    CHECK(before.hits[0].record_id == after.hits[0].record_id);
    if (engine == RetrievalEngine::Bow)
      CHECK(before.hits[0].score == doctest::Approx(after.hits[0].score).epsilon(1e-12));
  }
  // bm25 scores may shift with idf/avgdl, but the exact match stays on top
  const QueryResult bm25 = query(build_index(extended, RetrievalEngine::Bm25), "stamp pad ink", 1);
  CHECK(bm25.hits[0].record_id == "d1");
}

TEST_CASE("index serialization round-trips to identical query results") {
  const RetrievalFixture fixture = synthetic_retrieval_corpus(11);
  const KbIndex index = build_index(fixture.records, RetrievalEngine::Tfidf);
  const fs::path dir = fs::temp_directory_path() / "specagent_kb_test";
  fs::create_directories(dir);
  save_index(index, (dir / "rt.idx").string());
  const KbIndex loaded = load_index((dir / "rt.idx").string());

  for (const LabeledQuery& q : fixture.queries) {
    const QueryResult a = query(index, q.text, 3);
    const QueryResult b = query(loaded, q.text, 3);
    REQUIRE(a.hits.size() == b.hits.size());
    for (std::size_t i = 0; i < a.hits.size(); ++i) {
      CHECK(a.hits[i].record_id == b.hits[i].record_id);
      CHECK(a.hits[i].score == b.hits[i].score);
    }
  }
}

TEST_CASE("corrupted index caches are rejected by magic and length checks") {
  const fs::path dir = fs::temp_directory_path() / "specagent_kb_test";
  fs::create_directories(dir);
  {
    std::ofstream bad(dir / "bad.idx", std::ios::binary);
    bad << "NOPE then some bytes";
  }
  try {
    load_index((dir / "bad.idx").string());
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
  }

  // truncating a valid cache mid-stream also fails cleanly
  save_index(build_index(table_kb_records(), RetrievalEngine::Bm25),
             (dir / "full.idx").string());
  const std::string full = [&] {
    std::ifstream in(dir / "full.idx", std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }();
  {
    std::ofstream cut(dir / "cut.idx", std::ios::binary);
    cut << full.substr(0, full.size() / 2);
  }
  CHECK_THROWS_AS(load_index((dir / "cut.idx").string()), Error);
}

TEST_CASE("retrieval precision spans [0,1] with the documented endpoints") {
  const std::vector<KbRecord> records = {record("d1", "ink analysis"),
                                         record("d2", "tea analysis"),
                                         record("d3", "water analysis")};
  const KbIndex index = build_index(records, RetrievalEngine::Bm25);

  const std::vector<LabeledQuery> perfect = {{"ink", {"d1", "d2", "d3"}}};
  CHECK(evaluate_retrieval(index, perfect, 3) == doctest::Approx(1.0 / 3.0));

  const std::vector<LabeledQuery> disjoint = {{"ink", {"missing"}}};
  CHECK(evaluate_retrieval(index, disjoint, 3) == doctest::Approx(0.0));

  const RetrievalFixture fixture = synthetic_retrieval_corpus(11);
  for (RetrievalEngine engine :
       {RetrievalEngine::Bow, RetrievalEngine::Bm25, RetrievalEngine::Tfidf}) {
    const double p = evaluate_retrieval(build_index(fixture.records, engine), fixture.queries, 3);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("weighted engines beat bag-of-words on the bundled corpus") {
  const RetrievalFixture fixture = synthetic_retrieval_corpus(11);
  const double bow =
      evaluate_retrieval(build_index(fixture.records, RetrievalEngine::Bow), fixture.queries, 3);
  const double bm25 =
      evaluate_retrieval(build_index(fixture.records, RetrievalEngine::Bm25), fixture.queries, 3);
  const double tfidf =
      evaluate_retrieval(build_index(fixture.records, RetrievalEngine::Tfidf), fixture.queries, 3);
  CHECK(bow < bm25);
  CHECK(bow < tfidf);
  CHECK(bm25 - bow >= 0.10);
  CHECK(tfidf - bow >= 0.10);
}

TEST_CASE("table fixtures resolve to the published method plans") {
  const std::vector<KbRecord> records = table_kb_records();
  const KbIndex index = build_index(records, RetrievalEngine::Bm25);

  struct Expectation {
    std::string query_text;
    std::string chain;
    FeatureKind feature;
  };
  const std::vector<Expectation> expectations = {
      {"stamp pad ink", "SavitzkyGolay+SNV", FeatureKind::Pca},
      {"chinese medicine", "SNV+FirstDerivative", FeatureKind::Pca},
      {"citri reticulatae pericarpium", "SGFD+SNV", FeatureKind::Pca},
      {"pu er tea", "SNV", FeatureKind::Pca},
      {"waste water cod", "AsLS", FeatureKind::LambertBeerPearson},
  };
  for (const Expectation& e : expectations) {
    const QueryResult result = query(index, e.query_text, 3);
    REQUIRE_FALSE(result.hits.empty());
    const std::vector<MethodPlan> plans = plan_from_records(result.hits, records);
    REQUIRE_FALSE(plans.empty());
    CHECK(chain_to_string(plans[0].steps) == e.chain);
    CHECK(plans[0].feature.kind == e.feature);
    CHECK_FALSE(plans[0].provenance.empty());
  }
}

TEST_CASE("duplicate plans collapse into one candidate with merged provenance") {
  const std::vector<KbRecord> records = table_kb_records();
  const KbIndex index = build_index(records, RetrievalEngine::Bm25);
  const QueryResult result = query(index, "pu er tea yunnan", 3);
  const std::vector<MethodPlan> plans = plan_from_records(result.hits, records);
  // kb_tea_01 and kb_tea_02 share one plan
  int tea_candidates = 0;
  for (const MethodPlan& p : plans)
    if (chain_to_string(p.steps) == "SNV") ++tea_candidates;
  CHECK(tea_candidates == 1);
  for (const MethodPlan& p : plans)
    if (chain_to_string(p.steps) == "SNV") CHECK(p.provenance.size() == 2);
}

TEST_CASE("unresolvable hit records raise NoResolvablePlan") {
  KbRecord bad = record("dbad", "mystery material");
  bad.best_preprocessing = {"UNOBTAINIUM"};
  const std::vector<KbRecord> records = {bad};
  const std::vector<RetrievalHit> hits = {{"dbad", 1.0, 1}};
  try {
    plan_from_records(hits, records);
    FAIL("expected NoResolvablePlan");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoResolvablePlan);
  }
}

TEST_CASE("kb records persist as one-line json records") {
  const fs::path dir = fs::temp_directory_path() / "specagent_kb_test";
  fs::create_directories(dir);
  const std::vector<KbRecord> records = table_kb_records();
  save_kb_records(records, (dir / "kb.jsonl").string());
  const std::vector<KbRecord> back = load_kb_records((dir / "kb.jsonl").string());
  REQUIRE(back.size() == records.size());
  CHECK(back[0].id == records[0].id);
  CHECK(back[0].material_focus == records[0].material_focus);
  CHECK(back[0].best_preprocessing == records[0].best_preprocessing);
  CHECK(back[8].best_feature == "LambertBeerPearson");
}
