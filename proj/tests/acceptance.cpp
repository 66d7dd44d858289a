// Acceptance checks 1-9. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Criterion 10 needs the public arena dataset and is
// not run here.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attrgap/citex.hpp"
#include "attrgap/digest.hpp"
#include "attrgap/gapmetrics.hpp"
#include "attrgap/headtohead.hpp"
#include "attrgap/log.hpp"
#include "attrgap/simkit.hpp"
#include "attrgap/statfit.hpp"
#include "attrgap/telemetry.hpp"
#include "attrgap/urlnorm.hpp"

using namespace attrgap;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel_gap(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

std::vector<std::string> dedup(const std::vector<std::string>& v) {
  std::vector<std::string> out;
  for (const auto& s : v) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

// Gap by linear search over plain vectors.
std::size_t oracle_gap(const ConversationRecord& rec) {
  std::vector<std::string> sources;
  for (const auto& u : rec.search_results) {
    try {
      sources.push_back(urlnorm::canonicalize(u).render());
    } catch (const urlnorm::UrlError&) {
    }
  }
  sources = dedup(sources);
  std::vector<std::string> cited;
  for (const auto& c : citex::extract(rec.response_text, rec.search_results)) {
    if (!c.resolved) continue;
    const auto s = c.resolved->render();
    if (std::find(sources.begin(), sources.end(), s) != sources.end()) cited.push_back(s);
  }
  return sources.size() - dedup(cited).size();
}

statfit::HurdleFit truth_fit(const simkit::SimConfig& cfg, Eigen::VectorXd* count_params) {
  statfit::HurdleFit t;
  t.spec = cfg.design;
  t.gate.columns = statfit::gate_columns(cfg.design);
  t.count.columns = statfit::count_columns(cfg.design);
  count_params->resize(cfg.count_coef.size() + 1);
  *count_params << cfg.count_coef, std::log(cfg.theta);
  return t;
}

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  auto sim = simkit::gen_hurdle(simkit::SimConfig::published_like(10000, 101));
  std::size_t mismatches = 0, truth_mismatches = 0;
  for (std::size_t i = 0; i < sim.dataset.records.size(); ++i) {
    const auto& rec = sim.dataset.records[i];
    const auto a = gapmetrics::audit_record(rec);
    mismatches += a.gap != oracle_gap(rec);
    truth_mismatches += static_cast<long>(a.gap) != sim.truth[i].y;
  }
  const double secs = seconds_since(t0);
  o.expect(mismatches == 0, "set-oracle mismatches");
  o.expect(truth_mismatches == 0, "drawn-gap mismatches");
  o.expect(secs < 10, "runtime");
  o.detail << "records=" << sim.dataset.records.size() << " mismatches=" << mismatches
           << " vs_drawn=" << truth_mismatches << " seconds=" << secs;
  return o;
}

std::string random_url(std::mt19937_64& rng) {
  static const std::vector<std::string> schemes = {"", "http://", "https://", "HTTP://", "//"};
  static const std::vector<std::string> hosts = {"a.com", "www.a.com", "WWW.A.COM", "b.org", "news.example.co.uk",
                                                 "x-y.net"};
  static const std::vector<std::string> paths = {"", "/", "/p", "/p/", "/p/q/", "/Q"};
  static const std::vector<std::string> tails = {"", "?tracking_id=1", "?a=b&c=d", "#f", "?x#y"};
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  return pick(schemes) + pick(hosts) + (rng() % 6 == 0 ? ":443" : "") + pick(paths) + pick(tails);
}

Outcome criterion2() {
  Outcome o;
  const auto c = urlnorm::canonicalize("example.com/?tracking_id=23222").render();
  o.expect(c == "example.com", "tracking example");
  std::mt19937_64 rng(8080);
  std::size_t failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> list(1 + rng() % 10);
    for (auto& u : list) u = random_url(rng);
    bool ok = true;
    std::vector<std::string> rendered;
    for (const auto& u : list) {
      const auto x = urlnorm::canonicalize(u);
      ok = ok && urlnorm::canonicalize(x.render()) == x;
      rendered.push_back(x.render());
    }
    const auto n = urlnorm::unique_count(list).unique;
    ok = ok && n == dedup(rendered).size();
    auto shuffled = list;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    ok = ok && urlnorm::unique_count(shuffled).unique == n;
    failures += !ok;
  }
  o.expect(failures == 0, "property cases");
  o.detail << "example.com/?tracking_id=23222 -> " << c << "; property failures=" << failures << "/200";
  return o;
}

Outcome criterion3() {
  Outcome o;
  double worst_norm = 0;
  for (double lambda : {0.3, 1.0, 4.3, 12.0}) {
    for (double alpha : {0.05, 0.176, 1.0, 3.0}) {
      // Sum until the tail is negligible; Kahan summation.
      double sum = 0, comp = 0;
      for (long y = 0; y < 200000; ++y) {
        const double p = std::exp(statfit::nb_logpmf(y, lambda, alpha));
        const double t = sum + (p - comp);
        comp = (t - sum) - (p - comp);
        sum = t;
        if (y > 10 * lambda + 100 && p < 1e-18) break;
      }
      worst_norm = std::max(worst_norm, std::abs(sum - 1));
    }
  }
  o.expect(worst_norm <= 1e-9, "pmf normalization");

  auto cfg = simkit::SimConfig::published_like(600, 303);
  const auto obs = simkit::gen_observations(cfg);
  const auto spec = statfit::DesignSpec::main_effects();
  const auto gcols = statfit::gate_columns(spec);
  const auto ccols = statfit::count_columns(spec);
  const Eigen::MatrixXd xg = statfit::design_matrix(gcols, obs);
  Eigen::VectorXd pos(static_cast<Eigen::Index>(obs.size()));
  std::vector<statfit::Observation> positive;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    pos[static_cast<Eigen::Index>(i)] = obs[i].y > 0;
    if (obs[i].y > 0) positive.push_back(obs[i]);
  }
  const Eigen::MatrixXd xc = statfit::design_matrix(ccols, positive);
  std::vector<long> y;
  for (const auto& p : positive) y.push_back(p.y);

  std::mt19937_64 rng(33);
  std::normal_distribution<double> z(0, 1);
  double worst_grad = 0;
  auto check = [&](const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>& f,
                   const Eigen::VectorXd& at) {
    Eigen::VectorXd grad;
    f(at, &grad);
    for (Eigen::Index j = 0; j < at.size(); ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(at[j]));
      Eigen::VectorXd up = at, dn = at;
      up[j] += h;
      dn[j] -= h;
      const double fd = (f(up, nullptr) - f(dn, nullptr)) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(grad[j] - fd) / std::max({std::abs(grad[j]), std::abs(fd), 1.0}));
    }
  };
  for (int point = 0; point < 100; ++point) {
    Eigen::VectorXd g(xg.cols());
    for (Eigen::Index j = 0; j < g.size(); ++j) g[j] = 0.3 * z(rng);
    Eigen::VectorXd cp(xc.cols() + 1);
    for (Eigen::Index j = 0; j < cp.size(); ++j) cp[j] = 0.1 * z(rng);
    cp[0] += 1.0;
    cp[cp.size() - 1] = 0.5 + z(rng);
    check([&](const Eigen::VectorXd& p, Eigen::VectorXd* gr) { return statfit::gate_loglik(xg, pos, p, gr); }, g);
    check([&](const Eigen::VectorXd& p, Eigen::VectorXd* gr) {
      return statfit::count_loglik(xc, y, p, statfit::CountFamily::negbin, gr);
    }, cp);
  }
  o.expect(worst_grad <= 1e-6, "gradients");

  double worst_ll = 0;
  auto fit = statfit::fit_hurdle(obs, spec);
  std::normal_distribution<double> jitter(0, 0.2);
  for (int k = 0; k < 20; ++k) {
    auto moved = fit;
    if (k > 0) {
      for (Eigen::Index j = 0; j < moved.gate.estimate.size(); ++j) moved.gate.estimate[j] += jitter(rng);
      for (Eigen::Index j = 0; j < moved.count.estimate.size(); ++j) moved.count.estimate[j] += jitter(rng);
    }
    const double a = simkit::brute_loglik(obs, moved);
    const double b = statfit::hurdle_loglik(moved, obs);
    worst_ll = std::max(worst_ll, std::abs(a - b) / std::abs(b));
  }
  worst_ll = std::max(worst_ll, rel_gap(statfit::hurdle_loglik(fit, obs), fit.loglik()));
  o.expect(worst_ll <= 1e-10, "brute likelihood");
  o.detail << "max|sum pmf-1|=" << worst_norm << " max grad rel err=" << worst_grad
           << " max loglik rel diff=" << worst_ll;
  return o;
}

Outcome criterion4() {
  Outcome o;
  const auto t0 = Clock::now();
  // Recovery at n = 50000.
  {
    auto cfg = simkit::SimConfig::published_like(50000, 5690);
    auto fit = statfit::fit_hurdle(simkit::gen_observations(cfg), cfg.design);
    const double theta_err = std::abs(fit.theta() - cfg.theta) / cfg.theta;
    double worst_z = 0;
    for (Eigen::Index j = 0; j < cfg.gate_coef.size(); ++j) {
      worst_z = std::max(worst_z, std::abs(fit.gate.estimate[j] - cfg.gate_coef[j]) / fit.gate.se(j));
    }
    for (Eigen::Index j = 0; j < cfg.count_coef.size(); ++j) {
      worst_z = std::max(worst_z, std::abs(fit.count.estimate[j] - cfg.count_coef[j]) / fit.count.se(j));
    }
    o.expect(theta_err < 0.05, "theta within 5%");
    o.expect(worst_z < 3, "coefficients within 3 SE");
    o.detail << "theta_hat=" << fit.theta() << " max|z|=" << worst_z;
  }
  // Bootstrap coverage of the expected gap at Gemini / Current Affairs.
  {
    const std::size_t runs = 500, n = 5000, reps = 1000;
    const statfit::PredictionRequest req{Family::Gemini, kReferenceTopic, 5, 2089};
    std::size_t covered = 0, failed = 0;
    for (std::size_t r = 0; r < runs; ++r) {
      auto cfg = simkit::SimConfig::published_like(n, 1000000 + r);
      Eigen::VectorXd cp;
      const auto truth = truth_fit(cfg, &cp);
      const double target = statfit::predict_at(truth, req, cfg.gate_coef, cp).expected_gap;
      try {
        auto fit = statfit::fit_hurdle(simkit::gen_observations(cfg), cfg.design);
        auto ci = statfit::bootstrap_ci(fit, req, reps, r);
        covered += ci.lo95 <= target && target <= ci.hi95;
      } catch (const statfit::StatError&) {
        ++failed;
      }
    }
    const double rate = static_cast<double>(covered) / static_cast<double>(runs);
    o.expect(rate >= 0.93 && rate <= 0.97, "coverage in [93%, 97%]");
    o.detail << " coverage=" << covered << "/" << runs << " (fit failures " << failed << ")";
  }
  o.detail << " seconds=" << seconds_since(t0);
  return o;
}

Outcome criterion5() {
  Outcome o;
  const auto fit = statfit::published_main_effects_fit();
  const auto p = statfit::predict(fit, {Family::Gemini, Topic::CurrentAffairs, 5, 2089});
  o.expect(std::abs(p.p_gap - 0.674) <= 0.005, "P(gap>0)");
  o.expect(std::abs(p.expected_gap - 3.02) <= 0.03, "expected gap");
  o.expect(std::abs(p.p_gap - 0.703) <= 0.05, "within 5 pp of interaction model");
  o.expect(std::abs(p.expected_gap - 3.04) <= 0.05 * 3.04, "within 5% of interaction model");
  o.detail << "P(gap>0)=" << p.p_gap << " E[gap]=" << p.expected_gap;
  return o;
}

Outcome criterion6() {
  Outcome o;
  const auto page = statfit::irr_readout(0.125, 1, "extra page");
  const auto dbl = statfit::irr_readout(-0.171, std::log(2.0), "doubling");
  o.expect(std::abs(page.ratio - 1.133) < 5e-4 && page.text == "+13% per extra page", "search readout");
  o.expect(std::abs(dbl.ratio - 0.888) < 5e-4 && dbl.text == "-11% per doubling", "length readout");
  o.detail << page.ratio << " \"" << page.text << "\"; " << dbl.ratio << " \"" << dbl.text << "\"";
  return o;
}

Outcome criterion7() {
  Outcome o;
  std::ifstream in(std::string(ATTRGAP_TEST_DATA) + "/table5_published.csv");
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  const auto fcol = col("family"), bcol = col("beta1");
  std::map<Family, std::vector<double>> groups;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    groups[*parse_family(cells.at(fcol))].push_back(std::stod(cells.at(bcol)));
    ++rows;
  }
  const auto a = headtohead::anova_beta1(groups);
  o.expect(rows == 11, "11 slopes");
  o.expect(std::abs(a.ms_within - 0.0116) <= 1e-4, "MS_within");
  o.expect(std::abs(a.ms_between - 0.0015) <= 1e-4, "MS_between");
  o.expect(std::abs(a.f - 0.13) <= 0.01, "F");
  o.detail << "MS_between=" << a.ms_between << " MS_within=" << a.ms_within << " F(" << a.df_between << ","
           << a.df_within << ")=" << a.f << " p=" << a.p;
  return o;
}

Outcome criterion8() {
  Outcome o;
  simkit::PairwiseConfig cfg;
  cfg.opponent_effect = {0.0, -0.25, 0.4};
  for (std::size_t t = 0; t < kTopicCount; ++t) cfg.topic_effect[t] = 0.07 * static_cast<double>(t) - 0.3;

  cfg.sigma = 0;
  const auto exact = headtohead::ols(simkit::gen_pairwise(cfg));
  double worst = std::max({std::abs(exact.coefficient(headtohead::kIntercept) - cfg.beta0),
                           std::abs(exact.coefficient(headtohead::kDeltaS) - cfg.beta1),
                           std::abs(exact.coefficient(headtohead::kDeltaLen) - cfg.beta2)});
  for (Topic t : kTopics) {
    if (t == kReferenceTopic) continue;
    worst = std::max(worst, std::abs(exact.coefficient("topic:" + std::string(to_string(t))) -
                                     cfg.topic_effect[static_cast<std::size_t>(t)]));
  }
  auto sorted = cfg.opponents;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t j = 1; j < sorted.size(); ++j) {
    worst = std::max(worst, std::abs(exact.coefficient("opponent:" + sorted[j]) - cfg.opponent_effect[j]));
  }
  o.expect(worst < 1e-9, "noiseless recovery");

  cfg.sigma = 1;
  cfg.seed = 808;
  const auto rows = simkit::gen_pairwise(cfg);
  const auto design = headtohead::ols_design(rows);
  const auto noisy = headtohead::ols(design);
  const double z = std::abs(noisy.coefficient(headtohead::kDeltaS) - cfg.beta1) /
                   noisy.std_error(headtohead::kDeltaS);
  const Eigen::VectorXd xte = design.x.transpose() * noisy.residuals;
  const double ortho = xte.cwiseAbs().maxCoeff();
  o.expect(z < 3, "beta1 within 3 SE");
  o.expect(ortho < 1e-8, "orthogonality");
  o.detail << "noiseless max err=" << worst << " noisy beta1=" << noisy.coefficient(headtohead::kDeltaS)
           << " |z|=" << z << " max|X'e|=" << ortho;
  return o;
}

Outcome criterion9() {
  Outcome o;
  auto sim = simkit::gen_hurdle(simkit::SimConfig::published_like(1000, 909));
  std::size_t mismatches = 0, codec = 0;
  for (const auto& rec : sim.dataset.records) {
    const auto a = gapmetrics::audit_record(rec);
    const auto bundle = telemetry::from_audit(rec, a);
    mismatches += telemetry::verify(bundle).uncited.size() != a.gap;
    const auto wire = telemetry::encode(bundle);
    const auto back = telemetry::decode(wire);
    codec += !(back == bundle) || telemetry::encode(back) != wire;
  }
  std::ifstream in(std::string(ATTRGAP_TEST_DATA) + "/sha256_vectors.tsv");
  std::size_t vectors = 0, bad = 0;
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    ++vectors;
    bad += tab == std::string::npos || sha256_hex(line.substr(0, tab)) != line.substr(tab + 1);
  }
  o.expect(sim.dataset.records.size() == 1000, "1000 records");
  o.expect(mismatches == 0, "uncited vs gap");
  o.expect(codec == 0, "codec round trip");
  o.expect(vectors == 100 && bad == 0, "SHA-256 vectors");
  o.detail << "records=" << sim.dataset.records.size() << " mismatches=" << mismatches << " codec=" << codec
           << " sha vectors=" << vectors - bad << "/" << vectors;
  return o;
}

}  // namespace

int main() {
  std::size_t warnings = 0;
  set_warning_sink([&](std::string_view) { ++warnings; });
  const std::vector<std::function<Outcome()>> criteria = {criterion1, criterion2, criterion3,
                                                           criterion4, criterion5, criterion6,
                                                           criterion7, criterion8, criterion9};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failures += !o.pass;
    std::printf("criterion %zu: %s %s\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("criterion 10: not run (requires the public arena dataset)\n");
  return failures == 0 ? 0 : 1;
}
