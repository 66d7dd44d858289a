#pragma once

#include <cstddef>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attrgap/citex.hpp"
#include "attrgap/corpus.hpp"
#include "attrgap/gapmetrics.hpp"
#include "attrgap/urlnorm.hpp"

namespace attrgap::telemetry {

inline constexpr const char* kIdsKey = "llm.retrieval.ids";
inline constexpr const char* kScoresKey = "llm.retrieval.scores";

class TelemetryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SpanKind { query, retrieval, rerank, generation };

std::string_view to_string(SpanKind k);
SpanKind parse_span_kind(std::string_view s);

struct SearchSpan {
  std::string span_id;
  std::optional<std::string> parent_id;
  SpanKind kind = SpanKind::retrieval;
  std::vector<std::string> retrieval_ids;                // 64-char lowercase hex
  std::optional<std::vector<double>> retrieval_scores;   // aligned with retrieval_ids
  std::string start;                                     // ISO-8601
  std::string end;

  bool operator==(const SearchSpan&) const = default;
};

struct TraceBundle {
  std::string bundle_id;
  std::vector<SearchSpan> spans;  // parents precede children
  std::vector<std::string> answer_citation_digests;

  bool operator==(const TraceBundle&) const = default;
};

struct ScoreStats {
  std::size_t n = 0;  // pages with a score
  std::optional<double> mean;
  std::optional<double> min;
  std::optional<double> max;
};

struct AuditReport {
  std::set<std::string> pages_seen;
  std::set<std::string> pages_cited;    // cited and seen
  std::set<std::string> uncited;        // seen minus cited
  std::set<std::string> unknown_cited;  // cited but never retrieved
  ScoreStats cited_scores;
  ScoreStats uncited_scores;
};

bool is_digest(std::string_view s);

/// SHA-256 of the rendered canonical form.
std::string hash_source(const urlnorm::CanonicalUrl& url);

/// Returns a copy with the span appended. Throws on a duplicate span_id, a
/// parent that is not already in the bundle, malformed digests, or
/// ids/scores of different lengths.
TraceBundle record(const TraceBundle& bundle, SearchSpan span);

/// Seen pages are the union of retrieval_ids over all spans. A page scored
/// in several spans keeps its highest score. Throws naming the span when
/// ids and scores differ in length.
AuditReport verify(const TraceBundle& bundle);

/// One retrieval span holding the digests of the canonical search results
/// (no scores) and the digests of grounded cited pages.
TraceBundle from_audit(const ConversationRecord& rec, const gapmetrics::AnswerAudit& audit,
                       const citex::Options& opts = {});

nlohmann::ordered_json to_json(const TraceBundle& bundle);
TraceBundle from_json(const nlohmann::json& j);
std::string encode(const TraceBundle& bundle);
TraceBundle decode(std::string_view text);

/// Serializes appends from several threads; each append is validated
/// against the bundle as it stands at that moment.
class TraceRecorder {
 public:
  explicit TraceRecorder(std::string bundle_id);

  void append(SearchSpan span);
  void cite(const std::string& digest);
  TraceBundle snapshot() const;

 private:
  mutable std::mutex mu_;
  TraceBundle bundle_;
};

}  // namespace attrgap::telemetry
