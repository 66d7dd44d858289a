#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "attrgap/corpus.hpp"
#include "attrgap/gapmetrics.hpp"
#include "attrgap/optim.hpp"

namespace attrgap::statfit {

class StatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SeparationError : public StatError {
 public:
  SeparationError(std::string covariate);
  const std::string& covariate() const noexcept { return covariate_; }

 private:
  std::string covariate_;
};

class ConvergenceError : public StatError {
 public:
  using StatError::StatError;
};

class CovarianceError : public StatError {
 public:
  using StatError::StatError;
};

// ---------------------------------------------------------------------------
// Distribution kernels

/// log f_nb(y; lambda, alpha) for the mean-parameterized negative binomial,
/// Var = lambda + alpha * lambda^2. Throws StatError outside lambda > 0,
/// alpha > 0, y >= 0.
double nb_logpmf(long y, double lambda, double alpha);

/// f_nb(0; lambda, alpha); alpha == 0 gives the Poisson limit exp(-lambda).
double nb_zero_prob(double lambda, double alpha);

/// Mean of the zero-truncated NB: lambda / (1 - f_nb(0)). alpha == 0 is the
/// zero-truncated Poisson.
double ztnb_mean(double lambda, double alpha);

// ---------------------------------------------------------------------------
// Design

struct Observation {
  Family family = Family::Gemini;
  Topic topic = Topic::CurrentAffairs;
  double s = 0;      // unique search results
  double chars = 1;  // response characters, >= 1
  long y = 0;        // attribution gap
};

/// Audits without a topic are skipped; zero-length responses are floored at
/// one character so that log(length) is defined.
std::vector<Observation> observations_from_audits(std::span<const gapmetrics::AnswerAudit> audits);

struct DesignSpec {
  bool family_topic = false;   // count part: family x topic
  bool family_search = false;  // count part: family x search results
  Family reference_family = kReferenceFamily;
  Topic reference_topic = kReferenceTopic;

  static DesignSpec main_effects() { return {}; }
  static DesignSpec with_interactions() { return {true, true}; }

  bool operator==(const DesignSpec&) const = default;
};

enum class TermKind { intercept, family, topic, search, log_chars, family_topic, family_search };

struct Column {
  TermKind kind = TermKind::intercept;
  Family family = Family::Gemini;
  Topic topic = Topic::CurrentAffairs;

  std::string name() const;
  double value(const Observation& o) const;
  bool is_indicator() const {
    return kind == TermKind::family || kind == TermKind::topic || kind == TermKind::family_topic;
  }
  bool operator==(const Column&) const = default;
};

std::vector<Column> gate_columns(const DesignSpec& spec);
std::vector<Column> count_columns(const DesignSpec& spec);

Eigen::MatrixXd design_matrix(std::span<const Column> cols, std::span<const Observation> obs);

// ---------------------------------------------------------------------------
// Log-likelihoods (gradients with respect to the parameters)

enum class CountFamily { negbin, poisson };

/// Logistic log-likelihood of the event gap > 0 with linear predictor X*gamma.
double gate_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& positive,
                   const Eigen::VectorXd& gamma, Eigen::VectorXd* grad = nullptr);

/// Zero-truncated count log-likelihood over positive observations. For
/// negbin, params = (beta, log theta); for poisson, params = beta.
double count_loglik(const Eigen::MatrixXd& x, std::span<const long> y,
                    const Eigen::VectorXd& params, CountFamily family,
                    Eigen::VectorXd* grad = nullptr);

// ---------------------------------------------------------------------------
// Fits

struct Part {
  std::vector<Column> columns;
  std::vector<std::string> names;  // columns, plus "log(theta)" for negbin count parts
  Eigen::VectorXd estimate;
  Eigen::MatrixXd covariance;
  double loglik = 0;
  int iterations = 0;
  bool converged = false;
  double grad_inf_norm = 0;
  std::size_t n = 0;
  // Columns dropped as linear combinations of earlier ones, and a basis of
  // the aliased directions over (columns, aliased). Empty when full rank.
  std::vector<Column> aliased;
  Eigen::MatrixXd null_space;

  double se(std::size_t i) const;
};

struct HurdleFit {
  DesignSpec spec;
  CountFamily count_family = CountFamily::negbin;
  Part gate;
  Part count;

  double theta() const;  // +inf for poisson
  double alpha() const { return count_family == CountFamily::poisson ? 0.0 : 1.0 / theta(); }
  double loglik() const { return gate.loglik + count.loglik; }
  bool converged() const { return gate.converged && count.converged; }
};

struct FitOptions {
  optim::Options optimizer{};
  double gate_grad_tol = 1e-8;
  double count_grad_tol = 1e-8;
};

/// Logistic regression of 1{gap > 0} by Newton-Raphson. Indicator columns
/// with no observations are dropped with a warning. Throws SeparationError
/// when a coefficient diverges.
Part fit_gate(std::span<const Observation> obs, const DesignSpec& spec, const FitOptions& opts = {});

/// Zero-truncated NB (or Poisson) regression on positive gaps by BFGS with a
/// Newton polish. Throws ConvergenceError when the gradient tolerance is not
/// reached.
Part fit_count(std::span<const Observation> obs, const DesignSpec& spec,
               CountFamily family = CountFamily::negbin, const FitOptions& opts = {});

/// The hurdle likelihood separates, so the two parts are fitted independently.
HurdleFit fit_hurdle(std::span<const Observation> obs, const DesignSpec& spec,
                     CountFamily family = CountFamily::negbin, const FitOptions& opts = {});

/// Total log-likelihood of the hurdle model at the fit's parameters.
double hurdle_loglik(const HurdleFit& fit, std::span<const Observation> obs);

// ---------------------------------------------------------------------------
// Prediction

struct PredictionRequest {
  Family family = Family::Gemini;
  Topic topic = Topic::CurrentAffairs;
  double s = 5;
  double chars = 2089;
};

struct Prediction {
  double p_gap = 0;
  double lambda = 0;
  double mean_given_gap = 0;
  double expected_gap = 0;
};

/// Throws StatError when the request names a level the fit cannot estimate,
/// including cells that are not estimable because columns were aliased.
Prediction predict(const HurdleFit& fit, const PredictionRequest& req);

/// Same computation at arbitrary parameter vectors (used by the bootstrap).
Prediction predict_at(const HurdleFit& fit, const PredictionRequest& req,
                      const Eigen::VectorXd& gamma, const Eigen::VectorXd& count_params);

struct BootstrapResult {
  double point = 0;
  double mean = 0;
  double lo95 = 0;
  double hi95 = 0;
  double se = 0;
  double p_gap = 0;
};

/// Parametric bootstrap: gate and count parameters are drawn independently
/// from normals at their estimates and covariances; percentile interval.
/// Replicate r uses a seed derived from (seed, r), so results do not depend
/// on the thread count.
BootstrapResult bootstrap_ci(const HurdleFit& fit, const PredictionRequest& req,
                             std::size_t n_rep = 1000, std::uint64_t seed = 42,
                             unsigned threads = 1);

/// Draws from N(mean, cov). Throws CovarianceError when cov is not PSD.
class MvnSampler {
 public:
  MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov);
  template <class Rng>
  Eigen::VectorXd draw(Rng& rng) const;
  const Eigen::MatrixXd& factor() const { return factor_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd factor_;
};

struct LrTest {
  double statistic = 0;
  double p = 1;
};

/// Likelihood-ratio test of H0: alpha = 0. The null sits on the boundary, so
/// the reference distribution is a 50:50 mixture of a point mass at zero and
/// chi-square(1).
LrTest lr_test_poisson(const HurdleFit& fit_nb, const HurdleFit& fit_poisson);

// ---------------------------------------------------------------------------
// Readouts

struct CoefficientRow {
  std::string name;
  double estimate = 0;
  double se = 0;
  double z = 0;
  double p = 1;
};

std::vector<CoefficientRow> coefficient_table(const Part& part);

struct IrrReadout {
  double ratio = 1;
  std::string text;  // e.g. "+13% per extra page"
};

/// exp(coef * change) with a rounded percentage phrase.
IrrReadout irr_readout(double coef, double change, const std::string& unit);

/// Intercept-only NB fit over raw counts (zeros included): the MLE of the
/// mean is the sample mean, theta by one-dimensional maximization.
gapmetrics::NbOverlay fit_nb_marginal(std::span<const long> counts);

/// Coefficients of the published main-effects fit (Gemini reference; topic
/// reference Computer Science & Software Engineering, as printed). The
/// covariances are diagonal from the printed standard errors.
HurdleFit published_main_effects_fit();

nlohmann::ordered_json fit_to_json(const HurdleFit& fit);
HurdleFit fit_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------

template <class Rng>
Eigen::VectorXd MvnSampler::draw(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  return mean_ + factor_ * z;
}

}  // namespace attrgap::statfit
