#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrgap/citex.hpp"
#include "attrgap/corpus.hpp"

namespace attrgap::gapmetrics {

struct AnswerAudit {
  std::string record_id;
  std::string model_id;
  Family family = Family::GPT;
  std::optional<Topic> topic;
  std::size_t visited_unique = 0;        // s
  std::size_t cited_unique_grounded = 0; // c
  std::size_t gap = 0;                   // s - c
  std::size_t ungrounded_unique = 0;
  std::size_t hallucinated_count = 0;
  bool no_search = false;
  bool zero_citation = false;
  std::size_t response_char_count = 0;
  int turns = 1;

  bool operator==(const AnswerAudit&) const = default;
};

AnswerAudit audit_record(const ConversationRecord& rec, const citex::Options& opts = {});

std::vector<AnswerAudit> audit_all(std::span<const ConversationRecord> records,
                                   const citex::Options& opts = {}, unsigned threads = 1);

/// Lower median of the sorted values (element (n-1)/2).
double lower_median(std::vector<double> values);

struct FamilyRow {
  Family family = Family::GPT;
  double median_gap = 0;
  double median_citations = 0;
  double median_sites = 0;
  std::size_t zero_citation = 0;
  std::size_t zero_visit = 0;
  std::size_t n = 0;
};

struct FamilySummary {
  std::vector<FamilyRow> rows;  // GPT, Gemini, Sonar order; empty families omitted
  std::size_t total_n = 0;
  double perfect_attribution_share = 0;  // share with gap == 0
  double positive_gap_share = 0;
};

FamilySummary family_summary(std::span<const AnswerAudit> audits);

struct TopicRate {
  Topic topic = Topic::Other;
  std::size_t zero_citation = 0;
  std::size_t n = 0;
  double percent = 0;
};

/// Zero-citation percentage per topic, in label order. Audits without a
/// topic are skipped.
std::vector<TopicRate> topic_zero_rates(std::span<const AnswerAudit> audits,
                                        std::optional<Family> family = std::nullopt);

struct HistogramBin {
  std::size_t gap = 0;
  std::size_t frequency = 0;
  std::optional<double> overlay;  // n * NB pmf at this gap
};

struct NbOverlay {
  double mean = 1;   // lambda
  double theta = 1;  // 1 / alpha
};

/// Dense bins 0..max(gap). With an overlay, each bin also carries the
/// expected frequency under NB(mean, theta).
std::vector<HistogramBin> gap_histogram(std::span<const AnswerAudit> audits,
                                        std::optional<Family> family = std::nullopt,
                                        std::optional<NbOverlay> overlay = std::nullopt);

std::string format_fixed(double value, int decimals);

}  // namespace attrgap::gapmetrics
