#pragma once

#include <map>
#include <string>
#include <vector>

#include "specagent/preprocess.hpp"

namespace specagent {

// One structured literature record. `best_preprocessing` entries must resolve
// to preprocessing step kinds (shorthand like "SG" or "BC" is accepted).
struct KbRecord {
  std::string id;
  std::string material_focus;
  std::string technique;
  std::string wavelength_bands;
  std::vector<std::string> best_preprocessing;
  std::string best_feature;  // feature kind name
  std::map<std::string, double> best_feature_params;
  std::string model_architecture;
  std::string citation;
};

std::vector<KbRecord> load_kb_records(const std::string& jsonl_path);
void save_kb_records(const std::vector<KbRecord>& records, const std::string& jsonl_path);

enum class RetrievalEngine { Bow, Bm25, Tfidf };

const char* to_string(RetrievalEngine engine);
RetrievalEngine engine_from_string(const std::string& name);

// lowercase, split on non-alphanumeric, drop tokens shorter than 2 chars;
// no stemming, no stop words
std::vector<std::string> tokenize(const std::string& text);

struct KbIndex {
  RetrievalEngine engine = RetrievalEngine::Bm25;
  std::vector<std::string> vocabulary;             // term id -> term
  std::map<std::string, int> term_ids;             // term -> term id
  std::vector<std::map<int, int>> term_counts;     // per document
  std::vector<int> doc_freq;                       // per term
  std::vector<int> doc_length;                     // tokens per document
  double avg_doc_length = 0.0;
  std::vector<std::string> record_ids;
};

// Indexed text per record = material_focus + technique + wavelength_bands.
// Method vocabulary stays out so retrieval matches on subject.
KbIndex build_index(const std::vector<KbRecord>& records, RetrievalEngine engine);

void save_index(const KbIndex& index, const std::string& path);  // `SKB1` cache
KbIndex load_index(const std::string& path);

struct RetrievalHit {
  std::string record_id;
  double score = 0.0;
  int rank = 0;
};

struct QueryResult {
  std::vector<RetrievalHit> hits;
  bool empty_query = false;  // no in-vocabulary token in the query
};

// BoW: cosine between raw count vectors. TF-IDF: cosine with
// idf = ln((N+1)/(df+1)) + 1. BM25: Okapi with k1 = 1.5, b = 0.75 and
// idf = ln((N - df + 0.5)/(df + 0.5) + 1); query term multiplicity scales each
// term's contribution. Zero-score documents are dropped; ties break on
// ascending record id.
QueryResult query(const KbIndex& index, const std::string& text, int top_k);

struct LabeledQuery {
  std::string text;
  std::vector<std::string> relevant_ids;
};

std::vector<LabeledQuery> load_labeled_queries(const std::string& jsonl_path);
void save_labeled_queries(const std::vector<LabeledQuery>& queries, const std::string& path);

// mean over queries of |top_k hits ∩ relevant| / top_k
double evaluate_retrieval(const KbIndex& index, const std::vector<LabeledQuery>& queries,
                          int top_k = 3);

// Deduplicated (chain, feature) pairs from the hit records, ordered by best
// hit rank, one MethodPlan per pair with provenance ids.
std::vector<MethodPlan> plan_from_records(const std::vector<RetrievalHit>& hits,
                                          const std::vector<KbRecord>& records);

}  // namespace specagent
