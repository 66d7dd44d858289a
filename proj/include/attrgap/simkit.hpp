#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "attrgap/corpus.hpp"
#include "attrgap/headtohead.hpp"
#include "attrgap/statfit.hpp"

namespace attrgap::simkit {

struct SimConfig {
  std::size_t n = 1000;  // records; two per battle
  std::array<double, 3> family_weights{0.38, 0.17, 0.45};  // GPT, Gemini, Sonar
  std::array<double, kTopicCount> topic_weights{};         // zero -> uniform
  statfit::DesignSpec design = statfit::DesignSpec::main_effects();
  statfit::CountFamily count_family = statfit::CountFamily::negbin;
  Eigen::VectorXd gate_coef;   // statfit::gate_columns(design) order
  Eigen::VectorXd count_coef;  // statfit::count_columns(design) order, without log(theta)
  double theta = 5.69;

  int s_min = 0;
  int s_max = 15;
  double log_chars_mean = 7.644;  // log(2089)
  double log_chars_sd = 0.6;

  double unclassified_rate = 0;
  double misaligned_rate = 0;
  double duplicate_rate = 0.2;    // extra raw variants of logged pages
  double ungrounded_rate = 0.15;  // extra inline link to an unlogged page
  double hallucinated_rate = 0.15;

  std::uint64_t seed = 1;

  /// Gate and count coefficients of the published main-effects fit,
  /// re-expressed with Current Affairs as the topic reference.
  static SimConfig published_like(std::size_t n, std::uint64_t seed);

  void validate() const;
};

SimConfig config_from_json(const nlohmann::json& j);

struct SimDataset {
  Dataset dataset;
  // Covariates and gap exactly as drawn, aligned with dataset.records.
  // A record's search log holds max(s, gap) pages, so the audited s differs
  // from the drawn s only when gap > s.
  std::vector<statfit::Observation> truth;
  std::vector<bool> classified;
};

/// Hurdle draws rendered as complete records: a search log with tracking
/// parameters, www/case variants and duplicates, and an answer text that
/// cites (s - gap) of the logged pages.
SimDataset gen_hurdle(const SimConfig& cfg);

/// Only the classified truth observations.
std::vector<statfit::Observation> truth_observations(const SimDataset& sim);

/// truth_observations(gen_hurdle(cfg)) without rendering any text.
std::vector<statfit::Observation> gen_observations(const SimConfig& cfg);

/// Zero-truncated NB draw (Poisson when theta is infinite); rejection
/// sampling, switching to inverse CDF when f(0) > 0.99.
long draw_zero_truncated(std::mt19937_64& rng, double lambda, double theta);

/// The hurdle log-likelihood evaluated term by term straight from the pmf
/// definitions, independent of statfit's objective code.
double brute_loglik(std::span<const statfit::Observation> obs, const statfit::HurdleFit& params);

struct PairwiseConfig {
  std::size_t n = 1200;
  std::string focal = "ppl-sonar-reasoning";
  Family focal_family = Family::Sonar;
  std::vector<std::string> opponents = {"api-gpt-4o-search", "gemini-2.0-flash-grounding",
                                        "ppl-sonar-pro"};
  double beta0 = 0.3;
  double beta1 = 0.4;
  double beta2 = 2e-4;
  std::array<double, kTopicCount> topic_effect{};  // indexed by Topic; reference ignored
  std::vector<double> opponent_effect;             // aligned with sorted opponents; first ignored
  double sigma = 1.0;
  int delta_s_range = 10;
  double delta_len_sd = 800;
  bool constant_delta_s = false;  // degenerate design: delta_s == 0
  std::uint64_t seed = 7;
};

std::vector<headtohead::PairRow> gen_pairwise(const PairwiseConfig& cfg);

}  // namespace attrgap::simkit
