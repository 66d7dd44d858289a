#include "attrgap/gapmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "attrgap/log.hpp"
#include "attrgap/statfit.hpp"

namespace attrgap::gapmetrics {

AnswerAudit audit_record(const ConversationRecord& rec, const citex::Options& opts) {
  AnswerAudit a;
  a.record_id = rec.record_id;
  a.model_id = rec.model.id;
  a.family = rec.model.family;
  a.topic = rec.topic;
  a.response_char_count = rec.response_char_count;
  a.turns = rec.turns;

  a.visited_unique = urlnorm::unique_count(rec.search_results, opts.granularity).unique;
  auto cites = citex::extract(rec.response_text, rec.search_results, opts);
  auto summary = citex::summarize(cites);
  a.cited_unique_grounded = summary.grounded_unique;
  a.ungrounded_unique = summary.ungrounded_unique;
  a.hallucinated_count = summary.hallucinated_count;
  a.gap = a.visited_unique - a.cited_unique_grounded;
  a.no_search = a.visited_unique == 0;
  a.zero_citation = a.cited_unique_grounded == 0;
  return a;
}

std::vector<AnswerAudit> audit_all(std::span<const ConversationRecord> records,
                                   const citex::Options& opts, unsigned threads) {
  std::vector<AnswerAudit> out(records.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(records.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = audit_record(records[i], opts);
    return out;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (records.size() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    std::size_t lo = t * chunk, hi = std::min(records.size(), lo + chunk);
    pool.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) out[i] = audit_record(records[i], opts);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

double lower_median(std::vector<double> values) {
  if (values.empty()) return 0;
  auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

FamilySummary family_summary(std::span<const AnswerAudit> audits) {
  FamilySummary out;
  std::size_t perfect = 0;
  for (Family f : kFamilies) {
    std::vector<double> gaps, cites, sites;
    FamilyRow row;
    row.family = f;
    for (const auto& a : audits) {
      if (a.family != f) continue;
      gaps.push_back(static_cast<double>(a.gap));
      cites.push_back(static_cast<double>(a.cited_unique_grounded));
      sites.push_back(static_cast<double>(a.visited_unique));
      row.zero_citation += a.zero_citation;
      row.zero_visit += a.no_search;
      perfect += a.gap == 0;
    }
    row.n = gaps.size();
    if (row.n == 0) {
      warn("family " + std::string(to_string(f)) + " has no audited answers; omitted");
      continue;
    }
    row.median_gap = lower_median(std::move(gaps));
    row.median_citations = lower_median(std::move(cites));
    row.median_sites = lower_median(std::move(sites));
    out.total_n += row.n;
    out.rows.push_back(row);
  }
  if (out.total_n > 0) {
    out.perfect_attribution_share = static_cast<double>(perfect) / static_cast<double>(out.total_n);
    out.positive_gap_share = static_cast<double>(out.total_n - perfect) / static_cast<double>(out.total_n);
  }
  return out;
}

std::vector<TopicRate> topic_zero_rates(std::span<const AnswerAudit> audits,
                                        std::optional<Family> family) {
  std::vector<TopicRate> out;
  for (Topic t : kTopics) {
    TopicRate r;
    r.topic = t;
    for (const auto& a : audits) {
      if (a.topic != t || (family && a.family != *family)) continue;
      ++r.n;
      r.zero_citation += a.zero_citation;
    }
    if (r.n == 0) continue;
    r.percent = 100.0 * static_cast<double>(r.zero_citation) / static_cast<double>(r.n);
    out.push_back(r);
  }
  return out;
}

std::vector<HistogramBin> gap_histogram(std::span<const AnswerAudit> audits,
                                        std::optional<Family> family,
                                        std::optional<NbOverlay> overlay) {
  std::vector<HistogramBin> bins;
  std::size_t n = 0;
  for (const auto& a : audits) {
    if (family && a.family != *family) continue;
    if (a.gap >= bins.size()) bins.resize(a.gap + 1);
    ++bins[a.gap].frequency;
    ++n;
  }
  for (std::size_t g = 0; g < bins.size(); ++g) {
    bins[g].gap = g;
    if (overlay) {
      double lp = statfit::nb_logpmf(static_cast<long>(g), overlay->mean, 1.0 / overlay->theta);
      bins[g].overlay = static_cast<double>(n) * std::exp(lp);
    }
  }
  return bins;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s = buf;
  if (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

}  // namespace attrgap::gapmetrics
