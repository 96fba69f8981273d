#include "specagent/kb.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

const char* to_string(RetrievalEngine engine) {
  switch (engine) {
    case RetrievalEngine::Bow: return "bow";
    case RetrievalEngine::Bm25: return "bm25";
    case RetrievalEngine::Tfidf: return "tfidf";
  }
  return "unknown";
}

RetrievalEngine engine_from_string(const std::string& name) {
  const std::string key = to_lower(trim(name));
  if (key == "bow") return RetrievalEngine::Bow;
  if (key == "bm25") return RetrievalEngine::Bm25;
  if (key == "tfidf" || key == "tf-idf") return RetrievalEngine::Tfidf;
  raise(ErrorCode::ConfigError, "unknown retrieval engine '" + name + "'");
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (current.size() >= 2) tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) current.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return tokens;
}

namespace {

json record_to_json(const KbRecord& r) {
  json j;
  j["id"] = r.id;
  j["material_focus"] = r.material_focus;
  j["technique"] = r.technique;
  j["wavelength_bands"] = r.wavelength_bands;
  j["best_preprocessing"] = r.best_preprocessing;
  j["best_feature"] = r.best_feature;
  if (!r.best_feature_params.empty()) j["best_feature_params"] = r.best_feature_params;
  j["model_architecture"] = r.model_architecture;
  j["citation"] = r.citation;
  return j;
}

KbRecord record_from_json(const json& j) {
  KbRecord r;
  r.id = j.at("id").get<std::string>();
  r.material_focus = j.at("material_focus").get<std::string>();
  r.technique = j.value("technique", std::string{});
  r.wavelength_bands = j.value("wavelength_bands", std::string{});
  if (j.contains("best_preprocessing"))
    r.best_preprocessing = j.at("best_preprocessing").get<std::vector<std::string>>();
  r.best_feature = j.value("best_feature", std::string{});
  if (j.contains("best_feature_params"))
    r.best_feature_params = j.at("best_feature_params").get<std::map<std::string, double>>();
  r.model_architecture = j.value("model_architecture", std::string{});
  r.citation = j.value("citation", std::string{});
  return r;
}

}  // namespace

std::vector<KbRecord> load_kb_records(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) raise(ErrorCode::ParseError, "cannot open '" + jsonl_path + "'");
  std::vector<KbRecord> records;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      raise(ErrorCode::ParseError,
            jsonl_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(records.back().id).second)
      raise(ErrorCode::ParseError, "duplicate record id '" + records.back().id + "'");
  }
  return records;
}

void save_kb_records(const std::vector<KbRecord>& records, const std::string& jsonl_path) {
  std::ofstream out(jsonl_path);
  if (!out) raise(ErrorCode::ParseError, "cannot write '" + jsonl_path + "'");
  for (const KbRecord& r : records) out << record_to_json(r).dump() << '\n';
}

KbIndex build_index(const std::vector<KbRecord>& records, RetrievalEngine engine) {
  if (records.empty()) raise(ErrorCode::EmptyCorpus, "cannot index an empty corpus");
  KbIndex index;
  index.engine = engine;
  long total_length = 0;
  for (const KbRecord& r : records) {
    const std::vector<std::string> tokens =
        tokenize(r.material_focus + " " + r.technique + " " + r.wavelength_bands);
    std::map<int, int> counts;
    for (const std::string& t : tokens) {
      auto it = index.term_ids.find(t);
      int id;
      if (it == index.term_ids.end()) {
        id = static_cast<int>(index.vocabulary.size());
        index.term_ids.emplace(t, id);
        index.vocabulary.push_back(t);
        index.doc_freq.push_back(0);
      } else {
        id = it->second;
      }
      counts[id] += 1;
    }
    for (const auto& [term, _] : counts) index.doc_freq[static_cast<std::size_t>(term)] += 1;
    index.term_counts.push_back(std::move(counts));
    index.doc_length.push_back(static_cast<int>(tokens.size()));
    total_length += static_cast<long>(tokens.size());
    index.record_ids.push_back(r.id);
  }
  index.avg_doc_length = static_cast<double>(total_length) / static_cast<double>(records.size());
  if (index.avg_doc_length <= 0)
    raise(ErrorCode::EmptyCorpus, "corpus contains no indexable tokens");
  return index;
}

namespace {

constexpr double kBm25K1 = 1.5;
constexpr double kBm25B = 0.75;

double tfidf_idf(int n_docs, int df) {
  return std::log((n_docs + 1.0) / (df + 1.0)) + 1.0;
}

double bm25_idf(int n_docs, int df) {
  return std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
}

double doc_score(const KbIndex& index, std::size_t doc, const std::map<int, int>& query_counts) {
  const int n_docs = static_cast<int>(index.record_ids.size());
  const std::map<int, int>& doc_counts = index.term_counts[doc];

  switch (index.engine) {
    case RetrievalEngine::Bow: {
      double dot = 0.0, dnorm = 0.0, qnorm = 0.0;
      for (const auto& [t, c] : doc_counts) dnorm += double(c) * c;
      for (const auto& [t, c] : query_counts) {
        qnorm += double(c) * c;
        auto it = doc_counts.find(t);
        if (it != doc_counts.end()) dot += double(c) * it->second;
      }
      return dot == 0.0 ? 0.0 : dot / std::sqrt(dnorm * qnorm);
    }
    case RetrievalEngine::Tfidf: {
      double dot = 0.0, dnorm = 0.0, qnorm = 0.0;
      for (const auto& [t, c] : doc_counts) {
        const double w = c * tfidf_idf(n_docs, index.doc_freq[static_cast<std::size_t>(t)]);
        dnorm += w * w;
      }
      for (const auto& [t, c] : query_counts) {
        const double idf = tfidf_idf(n_docs, index.doc_freq[static_cast<std::size_t>(t)]);
        const double qw = c * idf;
        qnorm += qw * qw;
        auto it = doc_counts.find(t);
        if (it != doc_counts.end()) dot += qw * (it->second * idf);
      }
      return dot == 0.0 ? 0.0 : dot / std::sqrt(dnorm * qnorm);
    }
    case RetrievalEngine::Bm25: {
      const double len_norm =
          1.0 - kBm25B + kBm25B * index.doc_length[doc] / index.avg_doc_length;
      double score = 0.0;
      for (const auto& [t, qtf] : query_counts) {
        auto it = doc_counts.find(t);
        if (it == doc_counts.end()) continue;
        const double tf = it->second;
        const double idf = bm25_idf(n_docs, index.doc_freq[static_cast<std::size_t>(t)]);
        score += qtf * idf * tf * (kBm25K1 + 1.0) / (tf + kBm25K1 * len_norm);
      }
      return score;
    }
  }
  return 0.0;
}

}  // namespace

QueryResult query(const KbIndex& index, const std::string& text, int top_k) {
  if (top_k < 1) raise(ErrorCode::ConfigError, "top_k must be >= 1");
  QueryResult result;
  std::map<int, int> query_counts;
  for (const std::string& token : tokenize(text)) {
    auto it = index.term_ids.find(token);
    if (it != index.term_ids.end()) query_counts[it->second] += 1;
  }
  if (query_counts.empty()) {
    result.empty_query = true;
    return result;
  }

  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t doc = 0; doc < index.record_ids.size(); ++doc) {
    const double s = doc_score(index, doc, query_counts);
    if (s > 0.0) scored.emplace_back(s, index.record_ids[doc]);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const std::size_t keep = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(top_k));
  for (std::size_t k = 0; k < keep; ++k)
    result.hits.push_back({scored[k].second, scored[k].first, static_cast<int>(k + 1)});
  return result;
}

std::vector<LabeledQuery> load_labeled_queries(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) raise(ErrorCode::ParseError, "cannot open '" + jsonl_path + "'");
  std::vector<LabeledQuery> queries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      queries.push_back({j.at("query").get<std::string>(),
                         j.at("relevant_ids").get<std::vector<std::string>>()});
    } catch (const json::exception& e) {
      raise(ErrorCode::ParseError, jsonl_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return queries;
}

void save_labeled_queries(const std::vector<LabeledQuery>& queries, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::ParseError, "cannot write '" + path + "'");
  for (const LabeledQuery& q : queries) {
    json j;
    j["query"] = q.text;
    j["relevant_ids"] = q.relevant_ids;
    out << j.dump() << '\n';
  }
}

double evaluate_retrieval(const KbIndex& index, const std::vector<LabeledQuery>& queries,
                          int top_k) {
  if (queries.empty()) raise(ErrorCode::ConfigError, "no queries to evaluate");
  double total = 0.0;
  for (const LabeledQuery& q : queries) {
    if (q.relevant_ids.empty())
      raise(ErrorCode::ConfigError, "query '" + q.text + "' has no relevant documents");
    const QueryResult r = query(index, q.text, top_k);
    const std::set<std::string> relevant(q.relevant_ids.begin(), q.relevant_ids.end());
    int correct = 0;
    for (const RetrievalHit& hit : r.hits)
      if (relevant.count(hit.record_id)) ++correct;
    total += static_cast<double>(correct) / static_cast<double>(top_k);
  }
  return total / static_cast<double>(queries.size());
}

std::vector<MethodPlan> plan_from_records(const std::vector<RetrievalHit>& hits,
                                          const std::vector<KbRecord>& records) {
  if (hits.empty()) raise(ErrorCode::NoResolvablePlan, "no retrieval hits");
  std::map<std::string, const KbRecord*> by_id;
  for (const KbRecord& r : records) by_id[r.id] = &r;

  std::vector<MethodPlan> plans;
  std::set<std::string> seen_signatures;
  std::vector<std::string> failures;

  for (const RetrievalHit& hit : hits) {
    auto rec_it = by_id.find(hit.record_id);
    if (rec_it == by_id.end()) {
      failures.push_back(hit.record_id + ": not in record set");
      continue;
    }
    const KbRecord& rec = *rec_it->second;
    MethodPlan plan;
    try {
      for (const std::string& name : rec.best_preprocessing)
        plan.steps.push_back(step_from_name(name));
      plan.feature.kind = feature_kind_from_string(rec.best_feature);
    } catch (const Error& e) {
      failures.push_back(rec.id + ": " + e.what());
      continue;
    }
    for (const auto& [key, value] : rec.best_feature_params) {
      if (key == "n_components") plan.feature.n_components = static_cast<int>(value);
      else if (key == "n_latent") plan.feature.n_latent = static_cast<int>(value);
      else if (key == "n_top") plan.feature.n_top = static_cast<int>(value);
      else if (key == "bins") plan.feature.lbp_bins = static_cast<int>(value);
      else if (key == "rank") plan.feature.rank = static_cast<int>(value);
    }

    const std::string signature =
        chain_to_string(plan.steps) + "->" + std::string(to_string(plan.feature.kind));
    if (seen_signatures.count(signature)) {
      // already a candidate; extend provenance of the existing plan
      for (MethodPlan& existing : plans) {
        const std::string sig = chain_to_string(existing.steps) + "->" +
                                std::string(to_string(existing.feature.kind));
        if (sig == signature &&
            std::find(existing.provenance.begin(), existing.provenance.end(), rec.id) ==
                existing.provenance.end())
          existing.provenance.push_back(rec.id);
      }
      continue;
    }
    seen_signatures.insert(signature);
    plan.provenance.push_back(rec.id);
    plans.push_back(std::move(plan));
  }

  if (plans.empty()) {
    std::string detail;
    for (const std::string& f : failures) detail += (detail.empty() ? "" : "; ") + f;
    raise(ErrorCode::NoResolvablePlan, detail.empty() ? "no resolvable hit records" : detail);
  }
  return plans;
}

// --- binary index cache -------------------------------------------------------

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) raise(ErrorCode::ParseError, "truncated index file");
  return std::uint32_t(buf[0]) | (std::uint32_t(buf[1]) << 8) | (std::uint32_t(buf[2]) << 16) |
         (std::uint32_t(buf[3]) << 24);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) raise(ErrorCode::ParseError, "truncated index file");
  return s;
}

}  // namespace

void save_index(const KbIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::ParseError, "cannot write '" + path + "'");
  out.write("SKB1", 4);
  out.put(1);  // format version
  out.put(static_cast<char>(index.engine));
  write_u32(out, static_cast<std::uint32_t>(index.vocabulary.size()));
  for (const std::string& term : index.vocabulary) write_string(out, term);
  for (int df : index.doc_freq) write_u32(out, static_cast<std::uint32_t>(df));
  write_u32(out, static_cast<std::uint32_t>(index.record_ids.size()));
  for (std::size_t d = 0; d < index.record_ids.size(); ++d) {
    write_string(out, index.record_ids[d]);
    write_u32(out, static_cast<std::uint32_t>(index.doc_length[d]));
    write_u32(out, static_cast<std::uint32_t>(index.term_counts[d].size()));
    for (const auto& [term, count] : index.term_counts[d]) {
      write_u32(out, static_cast<std::uint32_t>(term));
      write_u32(out, static_cast<std::uint32_t>(count));
    }
  }
}

KbIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::ParseError, "cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SKB1", 4) != 0)
    raise(ErrorCode::ParseError, "'" + path + "' is not an index cache (bad magic)");
  const int version = in.get();
  if (version != 1)
    raise(ErrorCode::ParseError, "unsupported index version " + std::to_string(version));

  KbIndex index;
  index.engine = static_cast<RetrievalEngine>(in.get());
  const std::uint32_t vocab_size = read_u32(in);
  for (std::uint32_t t = 0; t < vocab_size; ++t) {
    index.vocabulary.push_back(read_string(in));
    index.term_ids.emplace(index.vocabulary.back(), static_cast<int>(t));
  }
  index.doc_freq.resize(vocab_size);
  for (std::uint32_t t = 0; t < vocab_size; ++t)
    index.doc_freq[t] = static_cast<int>(read_u32(in));
  const std::uint32_t n_docs = read_u32(in);
  long total_length = 0;
  for (std::uint32_t d = 0; d < n_docs; ++d) {
    index.record_ids.push_back(read_string(in));
    index.doc_length.push_back(static_cast<int>(read_u32(in)));
    total_length += index.doc_length.back();
    const std::uint32_t n_terms = read_u32(in);
    std::map<int, int> counts;
    for (std::uint32_t k = 0; k < n_terms; ++k) {
      const int term = static_cast<int>(read_u32(in));
      counts[term] = static_cast<int>(read_u32(in));
    }
    index.term_counts.push_back(std::move(counts));
  }
  index.avg_doc_length = n_docs == 0 ? 0.0 : static_cast<double>(total_length) / n_docs;
  return index;
}

}  // namespace specagent
