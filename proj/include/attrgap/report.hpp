#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "attrgap/citex.hpp"
#include "attrgap/corpus.hpp"

namespace attrgap::report {

inline constexpr const char* kVersion = "attrgap 0.1.0";

struct ReportOptions {
  std::filesystem::path input;
  std::optional<std::filesystem::path> topics;
  std::filesystem::path out_dir;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::size_t bootstrap_reps = 1000;
  LoadOptions load;
  citex::Options cite;
  bool log_length = false;  // head-to-head length difference in log characters
  double median_s = 5;
  double median_chars = 2089;
};

/// Stage names, in pipeline order. MANIFEST.json records the last one that
/// completed.
inline constexpr const char* kStages[] = {"ingest", "clean", "audit", "summarize", "fit",
                                          "predict", "bootstrap", "h2h", "anova", "emit"};

struct ReportResult {
  std::string completed_stage;
  std::map<std::string, std::size_t> rows;  // file name -> data rows
};

class ReportError : public std::runtime_error {
 public:
  ReportError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// ingest -> clean -> audit -> summarize -> fit (main effects and
/// interactions) -> prediction grid -> bootstrap -> head-to-head -> ANOVA.
/// Every table is written as soon as its stage completes. On failure the
/// tables already written stay in place, MANIFEST.json names the last
/// completed stage, and ReportError is thrown.
///
/// Precision: medians and percentages 1 decimal; probabilities, expected
/// gaps and intervals 4 decimals; coefficients, standard errors and test
/// statistics 6 decimals.
ReportResult run_full(const ReportOptions& opts);

}  // namespace attrgap::report
