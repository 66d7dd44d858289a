#include "attrgap/statfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include "attrgap/log.hpp"

namespace attrgap::statfit {

SeparationError::SeparationError(std::string covariate)
    : StatError("separation: coefficient of \"" + covariate +
                "\" diverges (outcome perfectly predicted)"),
      covariate_(std::move(covariate)) {}

namespace {

// Below this count the gamma-ratio terms are summed exactly; above it the
// log-gamma route is used.
constexpr long kSmallCount = 64;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------

double nb_logpmf(long y, double lambda, double alpha) {
  if (!(lambda > 0) || !(alpha > 0) || y < 0 || !std::isfinite(lambda) || !std::isfinite(alpha)) {
    throw StatError("nb_logpmf: requires lambda > 0, alpha > 0, y >= 0");
  }
  const double theta = 1.0 / alpha;
  const double yd = static_cast<double>(y);
  if (y <= kSmallCount) {
    double acc = 0;
    for (long k = 0; k < y; ++k) acc += std::log1p((static_cast<double>(k) - lambda) / (theta + lambda));
    return acc + yd * std::log(lambda) - std::lgamma(yd + 1) - theta * std::log1p(lambda / theta);
  }
  return std::lgamma(yd + theta) - std::lgamma(theta) - std::lgamma(yd + 1) +
         yd * std::log(alpha * lambda) - (yd + theta) * std::log1p(alpha * lambda);
}

double nb_zero_prob(double lambda, double alpha) {
  if (alpha == 0) return std::exp(-lambda);
  return std::exp(-std::log1p(alpha * lambda) / alpha);
}

double ztnb_mean(double lambda, double alpha) {
  if (!(lambda > 0) || alpha < 0) throw StatError("ztnb_mean: requires lambda > 0, alpha >= 0");
  double log_f0 = alpha == 0 ? -lambda : -std::log1p(alpha * lambda) / alpha;
  return lambda / -std::expm1(log_f0);
}

// ---------------------------------------------------------------------------

std::vector<Observation> observations_from_audits(std::span<const gapmetrics::AnswerAudit> audits) {
  std::vector<Observation> out;
  out.reserve(audits.size());
  for (const auto& a : audits) {
    if (!a.topic) continue;
    Observation o;
    o.family = a.family;
    o.topic = *a.topic;
    o.s = static_cast<double>(a.visited_unique);
    o.chars = static_cast<double>(std::max<std::size_t>(1, a.response_char_count));
    o.y = static_cast<long>(a.gap);
    out.push_back(o);
  }
  return out;
}

std::string Column::name() const {
  const std::string fam = "modelfamily" + std::string(to_string(family));
  const std::string cls = "classification" + std::string(to_string(topic));
  switch (kind) {
    case TermKind::intercept: return "(Intercept)";
    case TermKind::family: return fam;
    case TermKind::topic: return cls;
    case TermKind::search: return "search results count";
    case TermKind::log_chars: return "log(response length)";
    case TermKind::family_topic: return fam + ":" + cls;
    case TermKind::family_search: return fam + ":search results count";
  }
  return "?";
}

double Column::value(const Observation& o) const {
  switch (kind) {
    case TermKind::intercept: return 1.0;
    case TermKind::family: return o.family == family ? 1.0 : 0.0;
    case TermKind::topic: return o.topic == topic ? 1.0 : 0.0;
    case TermKind::search: return o.s;
    case TermKind::log_chars: return std::log(o.chars);
    case TermKind::family_topic: return (o.family == family && o.topic == topic) ? 1.0 : 0.0;
    case TermKind::family_search: return o.family == family ? o.s : 0.0;
  }
  return 0.0;
}

namespace {

void main_effect_columns(const DesignSpec& spec, std::vector<Column>& cols) {
  cols.push_back({TermKind::intercept});
  for (Family f : kFamilies) {
    if (f != spec.reference_family) cols.push_back({TermKind::family, f});
  }
  for (Topic t : kTopics) {
    if (t != spec.reference_topic) cols.push_back({TermKind::topic, Family::Gemini, t});
  }
}

}  // namespace

std::vector<Column> gate_columns(const DesignSpec& spec) {
  std::vector<Column> cols;
  main_effect_columns(spec, cols);
  cols.push_back({TermKind::log_chars});
  return cols;
}

std::vector<Column> count_columns(const DesignSpec& spec) {
  std::vector<Column> cols;
  main_effect_columns(spec, cols);
  cols.push_back({TermKind::search});
  cols.push_back({TermKind::log_chars});
  if (spec.family_topic) {
    for (Family f : kFamilies) {
      if (f == spec.reference_family) continue;
      for (Topic t : kTopics) {
        if (t != spec.reference_topic) cols.push_back({TermKind::family_topic, f, t});
      }
    }
  }
  if (spec.family_search) {
    for (Family f : kFamilies) {
      if (f != spec.reference_family) cols.push_back({TermKind::family_search, f});
    }
  }
  return cols;
}

Eigen::MatrixXd design_matrix(std::span<const Column> cols, std::span<const Observation> obs) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(obs.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j].value(obs[i]);
    }
  }
  return x;
}

// ---------------------------------------------------------------------------

double gate_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& positive,
                   const Eigen::VectorXd& gamma, Eigen::VectorXd* grad) {
  Eigen::VectorXd eta = x * gamma;
  double ll = 0;
  Eigen::VectorXd resid(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    ll += positive[i] * eta[i] - softplus(eta[i]);
    resid[i] = positive[i] - logistic(eta[i]);
  }
  if (grad) *grad = x.transpose() * resid;
  return ll;
}

double count_loglik(const Eigen::MatrixXd& x, std::span<const long> y,
                    const Eigen::VectorXd& params, CountFamily family, Eigen::VectorXd* grad) {
  const Eigen::Index k = x.cols();
  Eigen::VectorXd eta = x * params.head(k);
  Eigen::VectorXd d_eta(eta.size());
  double ll = 0;

  if (family == CountFamily::poisson) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double lambda = std::exp(eta[i]);
      const double yd = static_cast<double>(y[static_cast<std::size_t>(i)]);
      const double one_minus_f0 = -std::expm1(-lambda);
      ll += yd * eta[i] - lambda - std::lgamma(yd + 1) - std::log(one_minus_f0);
      d_eta[i] = yd - lambda / one_minus_f0;
    }
    if (grad) *grad = x.transpose() * d_eta;
    return ll;
  }

  const double log_theta = params[k];
  const double theta = std::exp(log_theta);
  double d_theta = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const long yi = y[static_cast<std::size_t>(i)];
    const double yd = static_cast<double>(yi);
    const double lambda = std::exp(eta[i]);
    const double l1p = std::log1p(lambda / theta);
    const double log_f0 = -theta * l1p;
    const double one_minus_f0 = -std::expm1(log_f0);
    const double odds0 = std::exp(log_f0) / one_minus_f0;
    const double tl = theta + lambda;

    double gamma_ratio = 0;  // log Gamma(y+theta)/Gamma(theta) - y log(theta+lambda)
    double digamma_diff = 0; // psi(y+theta) - psi(theta)
    if (yi <= kSmallCount) {
      for (long j = 0; j < yi; ++j) {
        const double jd = static_cast<double>(j);
        gamma_ratio += std::log1p((jd - lambda) / tl);
        digamma_diff += 1.0 / (theta + jd);
      }
    } else {
      gamma_ratio = std::lgamma(yd + theta) - std::lgamma(theta) - yd * std::log(tl);
      digamma_diff = boost::math::digamma(yd + theta) - boost::math::digamma(theta);
    }
    ll += gamma_ratio + yd * eta[i] - std::lgamma(yd + 1) - theta * l1p - std::log(one_minus_f0);

    d_eta[i] = theta * (yd - lambda) / tl - odds0 * theta * lambda / tl;
    d_theta += digamma_diff - l1p + (lambda - yd) / tl + odds0 * (-l1p + lambda / tl);
  }
  if (grad) {
    grad->resize(k + 1);
    grad->head(k) = x.transpose() * d_eta;
    (*grad)[k] = theta * d_theta;
  }
  return ll;
}

// ---------------------------------------------------------------------------

double Part::se(std::size_t i) const {
  auto idx = static_cast<Eigen::Index>(i);
  if (idx >= covariance.rows()) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(std::max(0.0, covariance(idx, idx)));
}

double HurdleFit::theta() const {
  if (count_family == CountFamily::poisson) return std::numeric_limits<double>::infinity();
  return std::exp(count.estimate[count.estimate.size() - 1]);
}

namespace {

// Drops indicator columns that are identically zero over the given rows.
std::vector<Column> drop_empty_cells(std::vector<Column> cols, std::span<const Observation> obs,
                                     const char* part) {
  std::vector<Column> kept;
  for (const auto& c : cols) {
    bool any = !c.is_indicator() ||
               std::any_of(obs.begin(), obs.end(), [&](const Observation& o) { return c.value(o) != 0; });
    if (any) {
      kept.push_back(c);
    } else {
      warn(std::string(part) + ": no observations for \"" + c.name() + "\"; column dropped");
    }
  }
  return kept;
}

// Greedy in column order: a column is kept when it raises the rank of the
// columns kept so far. The null space is taken over (kept, aliased).
struct Pruned {
  std::vector<Column> kept;
  std::vector<Column> aliased;
  Eigen::MatrixXd null_space;
};

Pruned drop_aliased(const std::vector<Column>& cols, std::span<const Observation> obs, const char* part) {
  constexpr double kRankTol = 1e-9;
  Pruned out;
  const Eigen::MatrixXd full = design_matrix(cols, obs);
  Eigen::MatrixXd trial(full.rows(), 0);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    Eigen::MatrixXd next(full.rows(), trial.cols() + 1);
    next << trial, full.col(static_cast<Eigen::Index>(j));
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(next.rows(), next.cols());
    qr.setThreshold(kRankTol);
    qr.compute(next);
    if (qr.rank() == next.cols()) {
      trial = std::move(next);
      out.kept.push_back(cols[j]);
    } else {
      out.aliased.push_back(cols[j]);
    }
  }
  if (out.aliased.empty()) return out;

  std::string msg = std::string(part) + ": column(s) aliased with earlier columns, dropped:";
  for (const auto& c : out.aliased) msg += " \"" + c.name() + "\"";
  warn(msg);

  std::vector<Column> ordered = out.kept;
  ordered.insert(ordered.end(), out.aliased.begin(), out.aliased.end());
  Eigen::FullPivLU<Eigen::MatrixXd> lu(design_matrix(ordered, obs));
  lu.setThreshold(kRankTol);
  const Eigen::MatrixXd kernel = lu.kernel();
  Eigen::HouseholderQR<Eigen::MatrixXd> q(kernel);
  out.null_space = q.householderQ() * Eigen::MatrixXd::Identity(kernel.rows(), kernel.cols());
  return out;
}

std::vector<std::string> names_of(const std::vector<Column>& cols) {
  std::vector<std::string> out;
  for (const auto& c : cols) out.push_back(c.name());
  return out;
}

// Inverse of a symmetric positive definite information matrix. Directions
// with non-positive curvature get zero variance and a warning.
Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info, const char* part) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd inv(ev.size());
  bool singular = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > tol) {
      inv[i] = 1.0 / ev[i];
    } else {
      inv[i] = 0;
      singular = true;
    }
  }
  if (singular) warn(std::string(part) + ": information matrix is singular; covariance is a pseudo-inverse");
  Eigen::MatrixXd cov = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (cov + cov.transpose());
}

}  // namespace

Part fit_gate(std::span<const Observation> obs, const DesignSpec& spec, const FitOptions& opts) {
  if (obs.empty()) throw StatError("fit_gate: no observations");
  Part part;
  {
    auto pruned = drop_aliased(drop_empty_cells(gate_columns(spec), obs, "gate"), obs, "gate");
    part.columns = std::move(pruned.kept);
    part.aliased = std::move(pruned.aliased);
    part.null_space = std::move(pruned.null_space);
  }
  part.names = names_of(part.columns);
  part.n = obs.size();

  Eigen::MatrixXd x = design_matrix(part.columns, obs);
  Eigen::VectorXd z(x.rows());
  for (std::size_t i = 0; i < obs.size(); ++i) z[static_cast<Eigen::Index>(i)] = obs[i].y > 0 ? 1.0 : 0.0;

  const double zbar = z.mean();
  if (zbar == 0.0 || zbar == 1.0) throw SeparationError("(Intercept)");
  for (std::size_t j = 0; j < part.columns.size(); ++j) {
    if (!part.columns[j].is_indicator()) continue;
    double ones = 0, pos = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (x(i, static_cast<Eigen::Index>(j)) != 0) {
        ones += 1;
        pos += z[i];
      }
    }
    if (pos == 0 || pos == ones) throw SeparationError(part.names[j]);
  }

  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(x.cols());
  gamma[0] = std::log(zbar / (1 - zbar));
  Eigen::VectorXd grad;
  double ll = gate_loglik(x, z, gamma, &grad);
  Eigen::MatrixXd info;
  int it = 0;
  for (; it < opts.optimizer.max_iterations; ++it) {
    Eigen::VectorXd w(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double p = logistic(x.row(i).dot(gamma));
      w[i] = p * (1 - p);
    }
    info = x.transpose() * w.asDiagonal() * x;
    if (inf_norm(grad) < opts.gate_grad_tol) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd step = ldlt.solve(grad);
    double t = 1.0;
    Eigen::VectorXd cand, cand_grad;
    double cand_ll = -std::numeric_limits<double>::infinity();
    for (int b = 0; b < 40; ++b) {
      cand = gamma + t * step;
      cand_ll = gate_loglik(x, z, cand, &cand_grad);
      if (cand_ll >= ll - 1e-12 * std::abs(ll)) break;
      t *= 0.5;
    }
    gamma = cand;
    ll = cand_ll;
    grad = cand_grad;
    Eigen::Index worst = 0;
    if (gamma.cwiseAbs().maxCoeff(&worst) > 50) throw SeparationError(part.names[static_cast<std::size_t>(worst)]);
  }
  part.estimate = gamma;
  part.loglik = ll;
  part.iterations = it;
  part.grad_inf_norm = inf_norm(grad);
  part.converged = part.grad_inf_norm < opts.gate_grad_tol;
  if (!part.converged) {
    throw ConvergenceError("gate: gradient norm " + std::to_string(part.grad_inf_norm) + " after " +
                           std::to_string(it) + " Newton iterations");
  }
  part.covariance = invert_information(info, "gate");
  return part;
}

Part fit_count(std::span<const Observation> obs, const DesignSpec& spec, CountFamily family,
               const FitOptions& opts) {
  std::vector<Observation> positive;
  for (const auto& o : obs) {
    if (o.y > 0) positive.push_back(o);
  }
  if (positive.empty()) throw StatError("fit_count: no positive-gap observations");

  Part part;
  {
    auto pruned = drop_aliased(drop_empty_cells(count_columns(spec), positive, "count"), positive, "count");
    part.columns = std::move(pruned.kept);
    part.aliased = std::move(pruned.aliased);
    part.null_space = std::move(pruned.null_space);
  }
  part.names = names_of(part.columns);
  if (family == CountFamily::negbin) part.names.push_back("log(theta)");
  part.n = positive.size();

  Eigen::MatrixXd x = design_matrix(part.columns, positive);
  std::vector<long> y;
  y.reserve(positive.size());
  double mean = 0, sq = 0;
  for (const auto& o : positive) {
    y.push_back(o.y);
    mean += static_cast<double>(o.y);
    sq += static_cast<double>(o.y) * static_cast<double>(o.y);
  }
  mean /= static_cast<double>(y.size());
  const double var = sq / static_cast<double>(y.size()) - mean * mean;

  const Eigen::Index k = x.cols();
  Eigen::VectorXd start = Eigen::VectorXd::Zero(family == CountFamily::negbin ? k + 1 : k);
  start[0] = std::log(std::max(mean - 0.5, 0.5));
  if (family == CountFamily::negbin) {
    double theta0 = var > mean ? mean * mean / (var - mean) : 10.0;
    start[k] = std::log(std::clamp(theta0, 0.1, 100.0));
  }

  optim::Objective objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
    double ll = count_loglik(x, y, p, family, g);
    if (g) *g = -*g;
    return -ll;
  };
  optim::Options o = opts.optimizer;
  o.grad_tol = opts.count_grad_tol;
  optim::Result res = optim::minimize_bfgs(objective, start, o);
  if (!res.converged) res = optim::newton_polish(objective, res, o);

  const bool at_boundary = family == CountFamily::negbin && res.x[k] > 15.0;
  if (!res.converged) {
    // A cell whose positive gaps are all 1 drives lambda to 0: the
    // zero-truncated analogue of separation.
    Eigen::Index worst = 0;
    if (res.x.head(k).cwiseAbs().maxCoeff(&worst) > 15.0) {
      throw SeparationError(part.names[static_cast<std::size_t>(worst)]);
    }
  }
  if (!res.converged && !at_boundary) {
    throw ConvergenceError("count: " + res.message + "; gradient norm " +
                           std::to_string(inf_norm(res.grad)) + " after " +
                           std::to_string(res.iterations) + " iterations");
  }
  if (at_boundary && !res.converged) {
    warn("count: dispersion estimate at the Poisson boundary (log theta > 15)");
  }
  part.estimate = res.x;
  part.loglik = -res.f;
  part.iterations = res.iterations;
  part.grad_inf_norm = inf_norm(res.grad);
  part.converged = res.converged || at_boundary;
  part.covariance = invert_information(optim::fd_hessian(objective, res.x), "count");
  return part;
}

HurdleFit fit_hurdle(std::span<const Observation> obs, const DesignSpec& spec, CountFamily family,
                     const FitOptions& opts) {
  HurdleFit fit;
  fit.spec = spec;
  fit.count_family = family;
  fit.gate = fit_gate(obs, spec, opts);
  fit.count = fit_count(obs, spec, family, opts);
  return fit;
}

double hurdle_loglik(const HurdleFit& fit, std::span<const Observation> obs) {
  Eigen::MatrixXd xg = design_matrix(fit.gate.columns, obs);
  Eigen::VectorXd z(xg.rows());
  std::vector<Observation> positive;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    z[static_cast<Eigen::Index>(i)] = obs[i].y > 0 ? 1.0 : 0.0;
    if (obs[i].y > 0) positive.push_back(obs[i]);
  }
  double ll = gate_loglik(xg, z, fit.gate.estimate);
  if (!positive.empty()) {
    Eigen::MatrixXd xc = design_matrix(fit.count.columns, positive);
    std::vector<long> y;
    for (const auto& o : positive) y.push_back(o.y);
    ll += count_loglik(xc, y, fit.count.estimate, fit.count_family);
  }
  return ll;
}

// ---------------------------------------------------------------------------

namespace {

bool has_column(const Part& part, TermKind kind, Family f, Topic t) {
  return std::any_of(part.columns.begin(), part.columns.end(), [&](const Column& c) {
    if (c.kind != kind) return false;
    if (kind == TermKind::family) return c.family == f;
    if (kind == TermKind::topic) return c.topic == t;
    return false;
  });
}

void check_levels(const HurdleFit& fit, const PredictionRequest& req) {
  if (!(req.s >= 0) || !(req.chars >= 1)) throw StatError("prediction requires s >= 0 and chars >= 1");
  for (const Part* part : {&fit.gate, &fit.count}) {
    if (req.family != fit.spec.reference_family &&
        !has_column(*part, TermKind::family, req.family, req.topic)) {
      throw StatError("family level not present in fit: " + std::string(to_string(req.family)));
    }
    if (req.topic != fit.spec.reference_topic &&
        !has_column(*part, TermKind::topic, req.family, req.topic)) {
      throw StatError("topic level not present in fit: " + std::string(to_string(req.topic)));
    }
    if (part->null_space.cols() > 0) {
      const Observation o{req.family, req.topic, req.s, req.chars, 0};
      std::vector<Column> ordered = part->columns;
      ordered.insert(ordered.end(), part->aliased.begin(), part->aliased.end());
      Eigen::VectorXd r(static_cast<Eigen::Index>(ordered.size()));
      for (std::size_t j = 0; j < ordered.size(); ++j) r[static_cast<Eigen::Index>(j)] = ordered[j].value(o);
      const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
      if ((part->null_space.transpose() * r).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw StatError("cell not estimable (aliased design): " + std::string(to_string(req.family)) + " / " +
                        std::string(to_string(req.topic)));
      }
    }
  }
}

Eigen::RowVectorXd row_for(const std::vector<Column>& cols, const Observation& o) {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) r[static_cast<Eigen::Index>(j)] = cols[j].value(o);
  return r;
}

}  // namespace

Prediction predict_at(const HurdleFit& fit, const PredictionRequest& req,
                      const Eigen::VectorXd& gamma, const Eigen::VectorXd& count_params) {
  Observation o{req.family, req.topic, req.s, req.chars, 0};
  // Interaction cells absent from the fit contribute nothing.
  Eigen::RowVectorXd xg = row_for(fit.gate.columns, o);
  Eigen::RowVectorXd xc = row_for(fit.count.columns, o);
  Prediction p;
  p.p_gap = logistic(xg.dot(gamma));
  p.lambda = std::exp(xc.dot(count_params.head(xc.size())));
  double alpha = 0;
  if (fit.count_family == CountFamily::negbin) alpha = std::exp(-count_params[xc.size()]);
  p.mean_given_gap = ztnb_mean(p.lambda, alpha);
  p.expected_gap = p.p_gap * p.mean_given_gap;
  return p;
}

Prediction predict(const HurdleFit& fit, const PredictionRequest& req) {
  check_levels(fit, req);
  return predict_at(fit, req, fit.gate.estimate, fit.count.estimate);
}

MvnSampler::MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov) : mean_(std::move(mean)) {
  if (cov.rows() != mean_.size() || cov.cols() != mean_.size()) {
    throw CovarianceError("covariance dimension does not match the estimate");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10 * scale) {
      throw CovarianceError("covariance is not positive semi-definite (eigenvalue " +
                            std::to_string(ev[i]) + "); consider adding ridge jitter to the diagonal");
    }
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  factor_ = es.eigenvectors() * ev.asDiagonal();
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Linear interpolation between order statistics (type 7).
double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  double h = (static_cast<double>(sorted.size()) - 1) * q;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

BootstrapResult bootstrap_ci(const HurdleFit& fit, const PredictionRequest& req, std::size_t n_rep,
                             std::uint64_t seed, unsigned threads) {
  if (n_rep == 0) throw StatError("bootstrap requires at least one replicate");
  Prediction point = predict(fit, req);
  MvnSampler gate_sampler(fit.gate.estimate, fit.gate.covariance);
  MvnSampler count_sampler(fit.count.estimate, fit.count.covariance);

  std::vector<double> draws(n_rep);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      std::mt19937_64 rng(splitmix64(seed ^ splitmix64(r)));
      Eigen::VectorXd g = gate_sampler.draw(rng);
      Eigen::VectorXd c = count_sampler.draw(rng);
      draws[r] = predict_at(fit, req, g, c).expected_gap;
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_rep)));
  if (threads == 1) {
    work(0, n_rep);
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (n_rep + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      std::size_t lo = t * chunk, hi = std::min(n_rep, lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  BootstrapResult out;
  out.point = point.expected_gap;
  out.p_gap = point.p_gap;
  double sum = 0;
  for (double d : draws) sum += d;
  out.mean = sum / static_cast<double>(n_rep);
  double ss = 0;
  for (double d : draws) ss += (d - out.mean) * (d - out.mean);
  out.se = n_rep > 1 ? std::sqrt(ss / static_cast<double>(n_rep - 1)) : 0.0;
  std::sort(draws.begin(), draws.end());
  out.lo95 = quantile(draws, 0.025);
  out.hi95 = quantile(draws, 0.975);
  return out;
}

LrTest lr_test_poisson(const HurdleFit& fit_nb, const HurdleFit& fit_poisson) {
  if (fit_nb.count_family != CountFamily::negbin || fit_poisson.count_family != CountFamily::poisson) {
    throw StatError("lr_test_poisson: expects a negbin fit and a poisson fit");
  }
  if (fit_nb.count.columns != fit_poisson.count.columns || fit_nb.count.n != fit_poisson.count.n ||
      !(fit_nb.spec == fit_poisson.spec)) {
    throw StatError("lr_test_poisson: fits use different designs or data");
  }
  LrTest out;
  out.statistic = std::max(0.0, 2.0 * (fit_nb.count.loglik - fit_poisson.count.loglik));
  boost::math::chi_squared chi1(1.0);
  out.p = 0.5 * (out.statistic > 0 ? boost::math::cdf(boost::math::complement(chi1, out.statistic)) : 1.0);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<CoefficientRow> coefficient_table(const Part& part) {
  std::vector<CoefficientRow> rows;
  boost::math::normal std_normal;
  for (std::size_t i = 0; i < part.names.size(); ++i) {
    CoefficientRow r;
    r.name = part.names[i];
    r.estimate = part.estimate[static_cast<Eigen::Index>(i)];
    r.se = part.se(i);
    r.z = r.se > 0 ? r.estimate / r.se : std::numeric_limits<double>::infinity();
    r.p = r.se > 0 ? 2 * boost::math::cdf(boost::math::complement(std_normal, std::abs(r.z))) : 0.0;
    rows.push_back(r);
  }
  return rows;
}

IrrReadout irr_readout(double coef, double change, const std::string& unit) {
  IrrReadout out;
  out.ratio = std::exp(coef * change);
  long pct = std::lround((out.ratio - 1.0) * 100.0);
  out.text = (pct >= 0 ? "+" : "-") + std::to_string(std::labs(pct)) + "% per " + unit;
  return out;
}

gapmetrics::NbOverlay fit_nb_marginal(std::span<const long> counts) {
  if (counts.empty()) throw StatError("fit_nb_marginal: no counts");
  double mean = 0;
  for (long c : counts) mean += static_cast<double>(c);
  mean /= static_cast<double>(counts.size());
  if (mean <= 0) return {1e-12, 1e8};

  std::vector<double> freq;
  for (long c : counts) {
    if (static_cast<std::size_t>(c) >= freq.size()) freq.resize(static_cast<std::size_t>(c) + 1, 0.0);
    freq[static_cast<std::size_t>(c)] += 1;
  }
  const double n = static_cast<double>(counts.size());
  optim::Objective objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd* g) {
    const double theta = std::exp(p[0]);
    const double l1p = std::log1p(mean / theta);
    const double tl = theta + mean;
    double ll = 0, d_theta = 0, digamma_diff = 0, gamma_ratio = 0;
    for (std::size_t y = 0; y < freq.size(); ++y) {
      const double yd = static_cast<double>(y);
      if (y > 0) {
        digamma_diff += 1.0 / (theta + yd - 1);
        gamma_ratio += std::log1p((yd - 1 - mean) / tl);
      }
      if (freq[y] == 0) continue;
      ll += freq[y] * (gamma_ratio + yd * std::log(mean) - std::lgamma(yd + 1) - theta * l1p);
      d_theta += freq[y] * (digamma_diff - l1p + (mean - yd) / tl);
    }
    if (g) {
      g->resize(1);
      (*g)[0] = -theta * d_theta;
    }
    return -ll;
  };
  optim::Options o;
  o.grad_tol = 1e-8 * n;
  auto res = optim::minimize_bfgs(objective, Eigen::VectorXd::Constant(1, std::log(5.0)), o);
  return {mean, std::exp(std::min(res.x[0], 30.0))};
}

HurdleFit published_main_effects_fit() {
  HurdleFit fit;
  fit.spec = DesignSpec::main_effects();
  fit.spec.reference_topic = Topic::ComputerScience;
  fit.count_family = CountFamily::negbin;

  fit.gate.columns = gate_columns(fit.spec);
  fit.count.columns = count_columns(fit.spec);
  fit.gate.names = names_of(fit.gate.columns);
  fit.count.names = names_of(fit.count.columns);
  fit.count.names.push_back("log(theta)");

  // Hurdle component: intercept, GPT, Sonar, 11 topics, log(response length).
  const std::vector<std::pair<double, double>> gate = {
      {-0.729, 0.207}, {-3.140, 0.069}, {1.601, 0.061}, {0.195, 0.096}, {0.268, 0.117},
      {-0.245, 0.144}, {0.341, 0.121},  {-0.265, 0.108}, {0.398, 0.169}, {0.177, 0.111},
      {0.189, 0.144},  {-0.529, 0.098}, {0.567, 0.115}, {0.577, 0.151}, {0.165, 0.024},
  };
  // Count component: intercept, GPT, Sonar, 11 topics, search results,
  // log(response length), log(theta).
  const std::vector<std::pair<double, double>> count = {
      {2.163, 0.078},  {-1.099, 0.156}, {0.207, 0.054},  {-0.021, 0.053}, {0.057, 0.064},
      {-0.115, 0.091}, {0.034, 0.068},  {-0.053, 0.074}, {-0.008, 0.087}, {-0.028, 0.064},
      {0.050, 0.077},  {-0.093, 0.065}, {0.021, 0.061},  {-0.033, 0.091}, {0.125, 0.003},
      {-0.171, 0.008}, {1.740, 0.031},
  };
  auto load = [](Part& part, const std::vector<std::pair<double, double>>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    part.estimate.resize(n);
    part.covariance = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      part.estimate[i] = rows[static_cast<std::size_t>(i)].first;
      part.covariance(i, i) = rows[static_cast<std::size_t>(i)].second * rows[static_cast<std::size_t>(i)].second;
    }
    part.converged = true;
  };
  load(fit.gate, gate);
  load(fit.count, count);
  return fit;
}

// ---------------------------------------------------------------------------

namespace {

std::string_view kind_name(TermKind k) {
  switch (k) {
    case TermKind::intercept: return "intercept";
    case TermKind::family: return "family";
    case TermKind::topic: return "topic";
    case TermKind::search: return "search";
    case TermKind::log_chars: return "log_chars";
    case TermKind::family_topic: return "family_topic";
    case TermKind::family_search: return "family_search";
  }
  return "?";
}

TermKind parse_kind(const std::string& s) {
  for (TermKind k : {TermKind::intercept, TermKind::family, TermKind::topic, TermKind::search,
                     TermKind::log_chars, TermKind::family_topic, TermKind::family_search}) {
    if (kind_name(k) == s) return k;
  }
  throw StatError("fit file: unknown term kind " + s);
}

Family family_of(const nlohmann::json& j) {
  auto f = parse_family(j.get<std::string>());
  if (!f) throw StatError("fit file: unknown family " + j.dump());
  return *f;
}

Topic topic_of(const nlohmann::json& j) {
  auto t = parse_topic(j.get<std::string>());
  if (!t) throw StatError("fit file: unknown topic " + j.dump());
  return *t;
}

nlohmann::ordered_json column_to_json(const Column& c) {
  nlohmann::ordered_json cj;
  cj["kind"] = kind_name(c.kind);
  if (c.kind == TermKind::family || c.kind == TermKind::family_topic || c.kind == TermKind::family_search) {
    cj["family"] = to_string(c.family);
  }
  if (c.kind == TermKind::topic || c.kind == TermKind::family_topic) cj["topic"] = to_string(c.topic);
  return cj;
}

Column column_from_json(const nlohmann::json& cj) {
  Column c;
  c.kind = parse_kind(cj.at("kind").get<std::string>());
  if (cj.contains("family")) c.family = family_of(cj["family"]);
  if (cj.contains("topic")) c.topic = topic_of(cj["topic"]);
  return c;
}

nlohmann::ordered_json part_to_json(const Part& p) {
  nlohmann::ordered_json j;
  auto cols = nlohmann::ordered_json::array();
  for (const auto& c : p.columns) cols.push_back(column_to_json(c));
  j["columns"] = cols;
  if (!p.aliased.empty()) {
    auto al = nlohmann::ordered_json::array();
    for (const auto& c : p.aliased) al.push_back(column_to_json(c));
    j["aliased"] = al;
    auto ns = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < p.null_space.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(p.null_space.cols()));
      for (Eigen::Index c = 0; c < p.null_space.cols(); ++c) row[static_cast<std::size_t>(c)] = p.null_space(r, c);
      ns.push_back(row);
    }
    j["null_space"] = ns;
  }
  j["names"] = p.names;
  j["estimate"] = std::vector<double>(p.estimate.data(), p.estimate.data() + p.estimate.size());
  auto cov = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < p.covariance.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(p.covariance.cols()));
    for (Eigen::Index c = 0; c < p.covariance.cols(); ++c) row[static_cast<std::size_t>(c)] = p.covariance(r, c);
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["loglik"] = p.loglik;
  j["iterations"] = p.iterations;
  j["converged"] = p.converged;
  j["grad_inf_norm"] = p.grad_inf_norm;
  j["n"] = p.n;
  return j;
}

Part part_from_json(const nlohmann::json& j) {
  Part p;
  for (const auto& cj : j.at("columns")) p.columns.push_back(column_from_json(cj));
  if (j.contains("aliased")) {
    for (const auto& cj : j.at("aliased")) p.aliased.push_back(column_from_json(cj));
    const auto& ns = j.at("null_space");
    const auto rows = static_cast<Eigen::Index>(ns.size());
    const auto expected = static_cast<Eigen::Index>(p.columns.size() + p.aliased.size());
    if (rows != expected) throw StatError("fit file: null space has the wrong dimension");
    const auto cols = rows ? static_cast<Eigen::Index>(ns[0].size()) : 0;
    p.null_space.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      auto row = ns[static_cast<std::size_t>(r)].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != cols) throw StatError("fit file: ragged null space");
      for (Eigen::Index c = 0; c < cols; ++c) p.null_space(r, c) = row[static_cast<std::size_t>(c)];
    }
  }
  p.names = j.at("names").get<std::vector<std::string>>();
  auto est = j.at("estimate").get<std::vector<double>>();
  p.estimate = Eigen::Map<Eigen::VectorXd>(est.data(), static_cast<Eigen::Index>(est.size()));
  const auto& cov = j.at("covariance");
  const auto n = static_cast<Eigen::Index>(cov.size());
  p.covariance.resize(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    auto row = cov[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != n) throw StatError("fit file: covariance is not square");
    for (Eigen::Index c = 0; c < n; ++c) p.covariance(r, c) = row[static_cast<std::size_t>(c)];
  }
  if (p.names.size() != est.size() || static_cast<std::size_t>(n) != est.size()) {
    throw StatError("fit file: estimate, names and covariance sizes disagree");
  }
  p.loglik = j.value("loglik", 0.0);
  p.iterations = j.value("iterations", 0);
  p.converged = j.value("converged", false);
  p.grad_inf_norm = j.value("grad_inf_norm", 0.0);
  p.n = j.value("n", std::size_t{0});
  return p;
}

}  // namespace

nlohmann::ordered_json fit_to_json(const HurdleFit& fit) {
  nlohmann::ordered_json j;
  j["format"] = "attrgap-hurdle-fit/1";
  j["spec"] = {{"family_topic", fit.spec.family_topic},
               {"family_search", fit.spec.family_search},
               {"reference_family", to_string(fit.spec.reference_family)},
               {"reference_topic", to_string(fit.spec.reference_topic)}};
  j["count_family"] = fit.count_family == CountFamily::negbin ? "negbin" : "poisson";
  if (fit.count_family == CountFamily::negbin) {
    j["theta"] = fit.theta();
  } else {
    j["theta"] = nullptr;
  }
  j["loglik"] = fit.loglik();
  j["converged"] = fit.converged();
  j["gate"] = part_to_json(fit.gate);
  j["count"] = part_to_json(fit.count);
  return j;
}

HurdleFit fit_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "attrgap-hurdle-fit/1") throw StatError("not a hurdle fit file");
  HurdleFit fit;
  const auto& s = j.at("spec");
  fit.spec.family_topic = s.at("family_topic").get<bool>();
  fit.spec.family_search = s.at("family_search").get<bool>();
  fit.spec.reference_family = family_of(s.at("reference_family"));
  fit.spec.reference_topic = topic_of(s.at("reference_topic"));
  fit.count_family = j.at("count_family").get<std::string>() == "poisson" ? CountFamily::poisson
                                                                          : CountFamily::negbin;
  fit.gate = part_from_json(j.at("gate"));
  fit.count = part_from_json(j.at("count"));
  return fit;
}

}  // namespace attrgap::statfit
