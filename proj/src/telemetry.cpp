#include "attrgap/telemetry.hpp"

#include <algorithm>
#include <map>

#include "attrgap/digest.hpp"

namespace attrgap::telemetry {

namespace {

constexpr std::string_view kKindNames[] = {"query", "retrieval", "rerank", "generation"};

void check_digest(const std::string& d, const std::string& where) {
  if (!is_digest(d)) throw TelemetryError(where + ": not a 64-char lowercase hex digest: " + d);
}

void check_span(const SearchSpan& s) {
  if (s.span_id.empty()) throw TelemetryError("span with empty span_id");
  for (const auto& d : s.retrieval_ids) check_digest(d, "span " + s.span_id);
  if (s.retrieval_scores && s.retrieval_scores->size() != s.retrieval_ids.size()) {
    throw TelemetryError("span " + s.span_id + ": " + std::to_string(s.retrieval_ids.size()) + " ids but " +
                         std::to_string(s.retrieval_scores->size()) + " scores");
  }
}

ScoreStats stats_for(const std::set<std::string>& pages, const std::map<std::string, double>& best) {
  ScoreStats st;
  double sum = 0;
  for (const auto& p : pages) {
    auto it = best.find(p);
    if (it == best.end()) continue;
    const double v = it->second;
    ++st.n;
    sum += v;
    st.min = st.min ? std::min(*st.min, v) : v;
    st.max = st.max ? std::max(*st.max, v) : v;
  }
  if (st.n) st.mean = sum / static_cast<double>(st.n);
  return st;
}

}  // namespace

std::string_view to_string(SpanKind k) { return kKindNames[static_cast<int>(k)]; }

SpanKind parse_span_kind(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (kKindNames[i] == s) return static_cast<SpanKind>(i);
  }
  throw TelemetryError("unknown span kind: " + std::string(s));
}

bool is_digest(std::string_view s) {
  return s.size() == 64 &&
         std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

std::string hash_source(const urlnorm::CanonicalUrl& url) { return sha256_hex(url.render()); }

TraceBundle record(const TraceBundle& bundle, SearchSpan span) {
  check_span(span);
  bool parent_found = !span.parent_id.has_value();
  for (const auto& s : bundle.spans) {
    if (s.span_id == span.span_id) throw TelemetryError("duplicate span_id: " + span.span_id);
    if (span.parent_id && s.span_id == *span.parent_id) parent_found = true;
  }
  if (!parent_found) {
    throw TelemetryError("span " + span.span_id + " references unknown parent " + *span.parent_id);
  }
  TraceBundle out = bundle;
  out.spans.push_back(std::move(span));
  return out;
}

AuditReport verify(const TraceBundle& bundle) {
  AuditReport r;
  std::map<std::string, double> best;
  for (const auto& s : bundle.spans) {
    check_span(s);
    for (std::size_t i = 0; i < s.retrieval_ids.size(); ++i) {
      const auto& id = s.retrieval_ids[i];
      r.pages_seen.insert(id);
      if (s.retrieval_scores) {
        const double v = (*s.retrieval_scores)[i];
        auto [it, inserted] = best.emplace(id, v);
        if (!inserted) it->second = std::max(it->second, v);
      }
    }
  }
  for (const auto& d : bundle.answer_citation_digests) {
    if (r.pages_seen.contains(d)) {
      r.pages_cited.insert(d);
    } else {
      r.unknown_cited.insert(d);
    }
  }
  std::set_difference(r.pages_seen.begin(), r.pages_seen.end(), r.pages_cited.begin(), r.pages_cited.end(),
                      std::inserter(r.uncited, r.uncited.end()));
  r.cited_scores = stats_for(r.pages_cited, best);
  r.uncited_scores = stats_for(r.uncited, best);
  return r;
}

TraceBundle from_audit(const ConversationRecord& rec, const gapmetrics::AnswerAudit& audit,
                       const citex::Options& opts) {
  TraceBundle b;
  b.bundle_id = audit.record_id;

  SearchSpan span;
  span.span_id = audit.record_id + "/retrieval";
  span.kind = SpanKind::retrieval;
  span.start = rec.timestamp;
  span.end = rec.timestamp;
  std::set<std::string> seen;
  for (const auto& raw : rec.search_results) {
    try {
      auto h = hash_source(urlnorm::canonicalize(raw, opts.granularity));
      if (seen.insert(h).second) span.retrieval_ids.push_back(h);
    } catch (const urlnorm::UrlError&) {
      // Unparseable log entries are not pages.
    }
  }
  b = record(b, std::move(span));

  auto summary = citex::summarize(citex::extract(rec.response_text, rec.search_results, opts));
  for (const auto& c : summary.cited_canonical_set) b.answer_citation_digests.push_back(hash_source(c));
  return b;
}

nlohmann::ordered_json to_json(const TraceBundle& bundle) {
  nlohmann::ordered_json j;
  j["bundle_id"] = bundle.bundle_id;
  j["spans"] = nlohmann::ordered_json::array();
  for (const auto& s : bundle.spans) {
    nlohmann::ordered_json js;
    js["span_id"] = s.span_id;
    js["parent_id"] = s.parent_id ? nlohmann::ordered_json(*s.parent_id) : nlohmann::ordered_json(nullptr);
    js["kind"] = to_string(s.kind);
    js[kIdsKey] = s.retrieval_ids;
    if (s.retrieval_scores) js[kScoresKey] = *s.retrieval_scores;
    js["start"] = s.start;
    js["end"] = s.end;
    j["spans"].push_back(std::move(js));
  }
  j["answer_citation_digests"] = bundle.answer_citation_digests;
  return j;
}

TraceBundle from_json(const nlohmann::json& j) {
  TraceBundle b;
  try {
    b.bundle_id = j.at("bundle_id").get<std::string>();
    for (const auto& js : j.at("spans")) {
      SearchSpan s;
      s.span_id = js.at("span_id").get<std::string>();
      if (js.contains("parent_id") && !js["parent_id"].is_null()) s.parent_id = js["parent_id"].get<std::string>();
      s.kind = parse_span_kind(js.at("kind").get<std::string>());
      if (js.contains(kIdsKey)) s.retrieval_ids = js[kIdsKey].get<std::vector<std::string>>();
      if (js.contains(kScoresKey)) s.retrieval_scores = js[kScoresKey].get<std::vector<double>>();
      s.start = js.value("start", "");
      s.end = js.value("end", "");
      b = record(b, std::move(s));
    }
    b.answer_citation_digests = j.at("answer_citation_digests").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw TelemetryError(std::string("malformed trace bundle: ") + e.what());
  }
  for (const auto& d : b.answer_citation_digests) check_digest(d, "answer_citation_digests");
  return b;
}

std::string encode(const TraceBundle& bundle) { return to_json(bundle).dump(); }

TraceBundle decode(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw TelemetryError(std::string("trace bundle is not JSON: ") + e.what());
  }
  return from_json(j);
}

TraceRecorder::TraceRecorder(std::string bundle_id) { bundle_.bundle_id = std::move(bundle_id); }

void TraceRecorder::append(SearchSpan span) {
  std::lock_guard lock(mu_);
  bundle_ = record(bundle_, std::move(span));
}

void TraceRecorder::cite(const std::string& digest) {
  check_digest(digest, "cite");
  std::lock_guard lock(mu_);
  bundle_.answer_citation_digests.push_back(digest);
}

TraceBundle TraceRecorder::snapshot() const {
  std::lock_guard lock(mu_);
  return bundle_;
}

}  // namespace attrgap::telemetry
