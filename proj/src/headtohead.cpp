#include "attrgap/headtohead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <thread>
#include <unordered_map>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "attrgap/log.hpp"

namespace attrgap::headtohead {

namespace {

double length_value(std::size_t chars, bool log_length) {
  return log_length ? std::log(static_cast<double>(std::max<std::size_t>(1, chars)))
                    : static_cast<double>(chars);
}

PairRow make_row(const ConversationRecord& focal, const gapmetrics::AnswerAudit& fa,
                 const ConversationRecord& opp, const gapmetrics::AnswerAudit& oa, const PairOptions& opts) {
  PairRow r;
  r.battle_id = focal.battle_id;
  r.focal = focal.model.id;
  r.opponent = opp.model.id;
  r.focal_family = focal.model.family;
  r.topic = focal.topic.value_or(kReferenceTopic);
  r.d = static_cast<double>(fa.cited_unique_grounded) - static_cast<double>(oa.cited_unique_grounded);
  r.delta_s = static_cast<double>(fa.visited_unique) - static_cast<double>(oa.visited_unique);
  r.delta_len = length_value(fa.response_char_count, opts.log_length) -
                length_value(oa.response_char_count, opts.log_length);
  return r;
}

}  // namespace

PairBuild build_pairs(const Pairing& pairing, std::span<const gapmetrics::AnswerAudit> audits,
                      const PairOptions& opts) {
  std::unordered_map<std::string, const gapmetrics::AnswerAudit*> by_id;
  for (const auto& a : audits) by_id.emplace(a.record_id, &a);
  PairBuild out;
  for (const auto& [a, b] : pairing.pairs) {
    auto ia = by_id.find(a.record_id);
    auto ib = by_id.find(b.record_id);
    if (ia == by_id.end() || ib == by_id.end() || !a.topic) {
      ++out.skipped;
      continue;
    }
    out.rows.push_back(make_row(a, *ia->second, b, *ib->second, opts));
    out.rows.push_back(make_row(b, *ib->second, a, *ia->second, opts));
  }
  if (out.skipped) warn(std::to_string(out.skipped) + " battle(s) skipped: missing audit or topic");
  return out;
}

PairBuild build_pairs(const Pairing& pairing, const PairOptions& opts) {
  std::vector<gapmetrics::AnswerAudit> audits;
  for (const auto& [a, b] : pairing.pairs) {
    audits.push_back(gapmetrics::audit_record(a));
    audits.push_back(gapmetrics::audit_record(b));
  }
  return build_pairs(pairing, audits, opts);
}

std::optional<std::size_t> OlsFit::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

double OlsFit::coefficient(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw RegressionError("no coefficient named " + name);
  return coef[static_cast<Eigen::Index>(*i)];
}

double OlsFit::std_error(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw RegressionError("no coefficient named " + name);
  return se[static_cast<Eigen::Index>(*i)];
}

OlsDesign ols_design(std::span<const PairRow> rows) {
  std::set<std::string> opponents;
  for (const auto& r : rows) opponents.insert(r.opponent);  // byte-wise ordering

  OlsDesign d;
  d.names = {kIntercept, kDeltaS, kDeltaLen};
  std::vector<Topic> topics;
  for (Topic t : kTopics) {
    if (t == kReferenceTopic) continue;
    topics.push_back(t);
    d.names.push_back("topic:" + std::string(to_string(t)));
  }
  std::vector<std::string> opp_cols;
  for (auto it = opponents.begin(); it != opponents.end(); ++it) {
    if (it == opponents.begin()) continue;
    opp_cols.push_back(*it);
    d.names.push_back("opponent:" + *it);
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  d.x = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(d.names.size()));
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    d.y[i] = r.d;
    d.x(i, 0) = 1.0;
    d.x(i, 1) = r.delta_s;
    d.x(i, 2) = r.delta_len;
    for (std::size_t k = 0; k < topics.size(); ++k) {
      if (r.topic == topics[k]) d.x(i, 3 + static_cast<Eigen::Index>(k)) = 1.0;
    }
    const auto off = 3 + static_cast<Eigen::Index>(topics.size());
    for (std::size_t k = 0; k < opp_cols.size(); ++k) {
      if (r.opponent == opp_cols[k]) d.x(i, off + static_cast<Eigen::Index>(k)) = 1.0;
    }
  }
  return d;
}

OlsFit ols(const OlsDesign& design, const OlsOptions& opts) {
  OlsFit fit;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < design.x.cols(); ++j) {
    const auto& name = design.names[static_cast<std::size_t>(j)];
    bool indicator = name.starts_with("topic:") || name.starts_with("opponent:");
    if (indicator && design.x.col(j).cwiseAbs().maxCoeff() == 0.0) {
      fit.dropped.push_back(name);
      continue;
    }
    keep.push_back(j);
    fit.names.push_back(name);
  }
  if (!fit.dropped.empty()) {
    std::string msg = "ols: dropped empty indicator column(s):";
    for (const auto& d : fit.dropped) msg += " " + d;
    warn(msg);
  }

  const Eigen::Index n = design.x.rows();
  const auto k = static_cast<Eigen::Index>(keep.size());
  if (n <= k) {
    throw RegressionError("ols: " + std::to_string(n) + " observations for " + std::to_string(k) +
                          " parameters");
  }
  Eigen::MatrixXd x(n, k);
  for (Eigen::Index j = 0; j < k; ++j) x.col(j) = design.x.col(keep[static_cast<std::size_t>(j)]);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < k) {
    std::string msg = "ols: design is rank deficient; aliased column(s):";
    for (Eigen::Index j = qr.rank(); j < k; ++j) {
      msg += " " + fit.names[static_cast<std::size_t>(qr.colsPermutation().indices()[j])];
    }
    throw RegressionError(msg);
  }

  fit.n = static_cast<std::size_t>(n);
  fit.coef = qr.solve(design.y);
  fit.residuals = design.y - x * fit.coef;
  const double rss = fit.residuals.squaredNorm();
  const double df = static_cast<double>(n - k);
  fit.sigma2 = rss / df;
  const double tss = (design.y.array() - design.y.mean()).square().sum();
  fit.r2 = tss > 0 ? 1.0 - rss / tss : (rss == 0 ? 1.0 : 0.0);

  // (X'X)^-1 = P R^-1 R^-T P'
  Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  Eigen::MatrixXd xtx_inv_perm = rinv * rinv.transpose();
  Eigen::MatrixXd xtx_inv = qr.colsPermutation() * xtx_inv_perm * qr.colsPermutation().transpose();

  Eigen::MatrixXd cov;
  if (opts.robust_se) {
    Eigen::MatrixXd meat = x.transpose() * fit.residuals.array().square().matrix().asDiagonal() * x;
    cov = xtx_inv * meat * xtx_inv * (static_cast<double>(n) / df);
  } else {
    cov = fit.sigma2 * xtx_inv;
  }

  boost::math::students_t tdist(df);
  fit.se.resize(k);
  fit.t.resize(k);
  fit.p.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    fit.se[j] = std::sqrt(std::max(0.0, cov(j, j)));
    if (fit.se[j] > 0) {
      fit.t[j] = fit.coef[j] / fit.se[j];
      fit.p[j] = 2 * boost::math::cdf(boost::math::complement(tdist, std::abs(fit.t[j])));
    } else {
      fit.t[j] = fit.coef[j] == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), fit.coef[j]);
      fit.p[j] = fit.coef[j] == 0 ? 1.0 : 0.0;
    }
  }
  return fit;
}

OlsFit ols(std::span<const PairRow> rows, const OlsOptions& opts) { return ols(ols_design(rows), opts); }

std::vector<FocalResult> ols_by_focal(std::span<const PairRow> rows, const OlsOptions& opts,
                                      unsigned threads) {
  std::map<std::string, std::vector<PairRow>> by_focal;
  for (const auto& r : rows) by_focal[r.focal].push_back(r);

  std::vector<FocalResult> out;
  for (const auto& [id, rs] : by_focal) out.push_back({id, rs.front().focal_family, {}});

  std::vector<std::string> errors(out.size());
  auto work = [&](std::size_t i) {
    try {
      out[i].fit = ols(by_focal.at(out[i].variant), opts);
    } catch (const RegressionError& e) {
      errors[i] = out[i].variant + ": " + e.what();
    }
  };
  threads = std::max(1u, threads);
  for (std::size_t base = 0; base < out.size(); base += threads) {
    std::vector<std::thread> pool;
    for (std::size_t i = base; i < std::min(out.size(), base + threads); ++i) {
      if (threads == 1) {
        work(i);
      } else {
        pool.emplace_back(work, i);
      }
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw RegressionError(e);
  }
  return out;
}

Anova anova_beta1(const std::map<Family, std::vector<double>>& groups) {
  std::size_t k = 0, n = 0;
  double grand = 0;
  for (const auto& [f, values] : groups) {
    if (values.empty()) continue;
    ++k;
    n += values.size();
    for (double v : values) grand += v;
  }
  if (k < 2) throw std::invalid_argument("anova_beta1: needs at least two non-empty groups");
  grand /= static_cast<double>(n);

  Anova a;
  for (const auto& [f, values] : groups) {
    if (values.empty()) continue;
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    a.ss_between += static_cast<double>(values.size()) * (mean - grand) * (mean - grand);
    for (double v : values) {
      a.ss_within += (v - mean) * (v - mean);
      a.ss_total += (v - grand) * (v - grand);
    }
  }
  a.df_between = static_cast<double>(k - 1);
  a.df_within = static_cast<double>(n - k);
  a.ms_between = a.ss_between / a.df_between;
  a.ms_within = a.df_within > 0 ? a.ss_within / a.df_within : 0.0;

  // Tolerance for "numerically zero" relative to the spread of the data.
  const double eps = 1e-14 * std::max(1.0, a.ss_total);
  if (a.ms_within <= eps) {
    if (a.ms_between <= eps) {
      a.f = 0;
      a.p = 1;
    } else {
      a.f = std::numeric_limits<double>::infinity();
      a.p = 0;
    }
    return a;
  }
  a.f = a.ms_between / a.ms_within;
  boost::math::fisher_f fdist(a.df_between, a.df_within);
  a.p = boost::math::cdf(boost::math::complement(fdist, a.f));
  return a;
}

}  // namespace attrgap::headtohead
