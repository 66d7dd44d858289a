#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attrgap/corpus.hpp"
#include "attrgap/gapmetrics.hpp"

namespace attrgap::headtohead {

class RegressionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PairRow {
  std::string battle_id;
  std::string focal;
  std::string opponent;
  Family focal_family = Family::GPT;
  Topic topic = Topic::CurrentAffairs;
  double d = 0;          // focal grounded citations minus opponent's
  double delta_s = 0;    // focal unique pages visited minus opponent's
  double delta_len = 0;  // response length difference (characters, or log characters)
};

struct PairOptions {
  bool log_length = false;
};

struct PairBuild {
  std::vector<PairRow> rows;  // two rows per usable battle, battle order
  std::size_t skipped = 0;    // battles without an audit for both sides
};

/// One row per focal perspective. Audits are matched to records by
/// record_id; battles with a missing audit are skipped and counted.
PairBuild build_pairs(const Pairing& pairing, std::span<const gapmetrics::AnswerAudit> audits,
                      const PairOptions& opts = {});

/// The same with audits computed on the fly.
PairBuild build_pairs(const Pairing& pairing, const PairOptions& opts = {});

struct OlsOptions {
  bool robust_se = false;  // HC1 sandwich instead of classical standard errors
};

struct OlsFit {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  Eigen::VectorXd t;
  Eigen::VectorXd p;
  Eigen::VectorXd residuals;
  std::size_t n = 0;
  double r2 = 0;
  double sigma2 = 0;
  std::vector<std::string> dropped;  // empty indicator columns

  std::optional<std::size_t> index_of(const std::string& name) const;
  double coefficient(const std::string& name) const;
  double std_error(const std::string& name) const;
};

/// Column names used for the focal regression.
inline constexpr const char* kIntercept = "(Intercept)";
inline constexpr const char* kDeltaS = "focal_search_diff";
inline constexpr const char* kDeltaLen = "focal_length_diff";

/// Design matrix for one focal model's rows: intercept, delta_s, delta_len,
/// topic indicators (reference Current Affairs) and opponent indicators
/// (reference: byte-wise first opponent id).
struct OlsDesign {
  std::vector<std::string> names;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};
OlsDesign ols_design(std::span<const PairRow> rows);

/// Least squares by column-pivoted QR. Indicator columns that are all zero
/// are dropped with a warning; any remaining rank deficiency throws,
/// naming the aliased columns.
OlsFit ols(std::span<const PairRow> rows, const OlsOptions& opts = {});
OlsFit ols(const OlsDesign& design, const OlsOptions& opts = {});

struct FocalResult {
  std::string variant;
  Family family = Family::GPT;
  OlsFit fit;
};

/// Runs ols() for every focal model, ordered by model id.
std::vector<FocalResult> ols_by_focal(std::span<const PairRow> rows, const OlsOptions& opts = {},
                                      unsigned threads = 1);

struct Anova {
  double ss_between = 0;
  double ss_within = 0;
  double ss_total = 0;
  double df_between = 0;
  double df_within = 0;
  double ms_between = 0;
  double ms_within = 0;
  double f = 0;
  double p = 1;
};

/// One-way ANOVA of coefficient values grouped by family. MS_within = 0
/// gives F = 0, p = 1 when MS_between is also 0, else F = inf, p = 0.
Anova anova_beta1(const std::map<Family, std::vector<double>>& groups);

}  // namespace attrgap::headtohead
