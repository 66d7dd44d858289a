#include "attrgap/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace attrgap::simkit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t draw_index(std::mt19937_64& rng, std::span<const double> weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::vector<ModelVariant> variants_of(Family f) {
  std::vector<ModelVariant> out;
  for (const auto& m : known_models()) {
    if (m.family == f) out.push_back(m);
  }
  return out;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Raw log entry for a canonical page, with cosmetic variation that
// canonicalization must undo.
std::string raw_variant(std::mt19937_64& rng, const std::string& host, const std::string& path) {
  std::string h = host;
  if (uniform01(rng) < 0.3) h = "www." + h;
  if (uniform01(rng) < 0.2) {
    for (auto& c : h) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  std::string url;
  double u = uniform01(rng);
  url = (u < 0.6 ? "https://" : (u < 0.9 ? "http://" : "")) + h + path;
  if (uniform01(rng) < 0.2) url += "/";
  if (uniform01(rng) < 0.35) url += "?utm_source=arena&id=" + std::to_string(rng() % 100000);
  if (uniform01(rng) < 0.1) url += "#section-" + std::to_string(rng() % 10);
  return url;
}

std::string timestamp_for(std::size_t battle) {
  // Battles spread over March-April 2025, one per minute.
  const std::size_t minutes = battle % (61 * 24 * 60);
  const std::size_t day = minutes / (24 * 60);
  const std::size_t hh = (minutes / 60) % 24, mm = minutes % 60;
  const int month = day < 31 ? 3 : 4;
  const std::size_t dom = (day < 31 ? day : day - 31) + 1;
  char buf[32];
  std::snprintf(buf, sizeof buf, "2025-%02d-%02zuT%02zu:%02zu:00Z", month, dom, hh, mm);
  return buf;
}

struct SideDraw {
  ModelVariant model;
  statfit::Observation obs;
  bool classified = true;
  ConversationRecord record;
};

constexpr std::size_t kInlineCiteBudget = 110;  // upper bound on one "[source](url) " token
constexpr std::size_t kNumberedCiteBudget = 8;
constexpr std::size_t kFixedBudget = 240;

void render_record(std::mt19937_64& rng, const SimConfig& cfg, std::size_t battle, int side,
                   bool misaligned, SideDraw& d) {
  auto& rec = d.record;
  rec.record_id = "r" + std::to_string(battle) + (side == 0 ? "a" : "b");
  rec.battle_id = "b" + std::to_string(battle);
  rec.model = d.model;
  rec.turns = 1 + static_cast<int>(rng() % 3);
  rec.timestamp = timestamp_for(battle);
  if (d.classified) rec.topic = d.obs.topic;

  const bool numbered_style = d.model.family != Family::GPT;
  std::string text = "Synthetic answer " + rec.record_id + ".";

  if (misaligned) {
    // Numbered marker plus an inline link, with nothing in the log.
    text += " As reported [1] and at https://mirror.example.net/" + rec.record_id + " too.";
  } else {
    const auto y = static_cast<std::size_t>(d.obs.y);
    const std::size_t pages = std::max(static_cast<std::size_t>(d.obs.s), y);
    std::vector<std::pair<std::string, std::string>> canon;  // host, path
    for (std::size_t p = 0; p < pages; ++p) {
      canon.emplace_back("site" + std::to_string(rng() % 40) + ".example.org",
                         "/b" + std::to_string(battle) + "/s" + std::to_string(side) + "/p" + std::to_string(p));
    }
    std::vector<std::size_t> owner;  // log entry -> page
    for (std::size_t p = 0; p < pages; ++p) {
      rec.search_results.push_back(raw_variant(rng, canon[p].first, canon[p].second));
      owner.push_back(p);
      if (uniform01(rng) < cfg.duplicate_rate) {
        rec.search_results.push_back(raw_variant(rng, canon[p].first, canon[p].second));
        owner.push_back(p);
      }
    }
    std::vector<std::size_t> perm(rec.search_results.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> shuffled;
    std::vector<std::size_t> shuffled_owner;
    for (auto i : perm) {
      shuffled.push_back(rec.search_results[i]);
      shuffled_owner.push_back(owner[i]);
    }
    rec.search_results = std::move(shuffled);

    std::vector<std::size_t> page_order(pages);
    std::iota(page_order.begin(), page_order.end(), 0);
    std::shuffle(page_order.begin(), page_order.end(), rng);
    const std::size_t cited = pages - y;
    for (std::size_t k = 0; k < cited; ++k) {
      const std::size_t page = page_order[k];
      // Any log entry of this page; cite it once or twice.
      std::vector<std::size_t> entries;
      for (std::size_t e = 0; e < shuffled_owner.size(); ++e) {
        if (shuffled_owner[e] == page) entries.push_back(e);
      }
      const std::size_t entry = entries[rng() % entries.size()];
      if (numbered_style) {
        text += " Point [" + std::to_string(entry + 1) + "].";
      } else {
        text += " [source](" + rec.search_results[entry] + ").";
      }
    }
    if (uniform01(rng) < cfg.ungrounded_rate) {
      text += " See https://unlisted-ref.example.net/" + rec.record_id + ".";
    }
    if (numbered_style && uniform01(rng) < cfg.hallucinated_rate) {
      text += " Also [" + std::to_string(rec.search_results.size() + 1 + rng() % 5) + "].";
    }
  }

  const auto target = static_cast<std::size_t>(d.obs.chars);
  static const std::string filler = " lorem ipsum dolor sit amet";
  std::size_t f = 0;
  while (text.size() < target) text.push_back(filler[f++ % filler.size()]);
  rec.response_text = std::move(text);
  rec.response_char_count = utf8_length(rec.response_text);
  d.obs.chars = static_cast<double>(rec.response_char_count);
}

}  // namespace

SimConfig SimConfig::published_like(std::size_t n, std::uint64_t seed) {
  SimConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  const auto published = statfit::published_main_effects_fit();
  // Published topic reference is Computer Science; shift to Current Affairs.
  auto rebase = [&](const statfit::Part& part, std::size_t k) {
    const auto cols = part.columns;
    double ca = 0;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j].kind == statfit::TermKind::topic && cols[j].topic == Topic::CurrentAffairs) {
        ca = part.estimate[static_cast<Eigen::Index>(j)];
      }
    }
    auto target = k == 0 ? statfit::gate_columns(cfg.design) : statfit::count_columns(cfg.design);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(target.size()));
    for (std::size_t t = 0; t < target.size(); ++t) {
      const auto& col = target[t];
      double v = 0;
      if (col.kind == statfit::TermKind::topic && col.topic == Topic::ComputerScience) {
        v = -ca;
      } else {
        for (std::size_t j = 0; j < cols.size(); ++j) {
          if (cols[j] == col) v = part.estimate[static_cast<Eigen::Index>(j)];
        }
        if (col.kind == statfit::TermKind::intercept) v += ca;
        if (col.kind == statfit::TermKind::topic) v -= ca;
      }
      out[static_cast<Eigen::Index>(t)] = v;
    }
    return out;
  };
  cfg.gate_coef = rebase(published.gate, 0);
  cfg.count_coef = rebase(published.count, 1);
  cfg.theta = 5.69;
  return cfg;
}

void SimConfig::validate() const {
  auto sum = std::accumulate(family_weights.begin(), family_weights.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("family weights must sum to 1");
  auto tsum = std::accumulate(topic_weights.begin(), topic_weights.end(), 0.0);
  if (tsum != 0.0 && std::abs(tsum - 1.0) > 1e-9) throw std::invalid_argument("topic weights must sum to 1");
  if (count_family == statfit::CountFamily::negbin && !(theta > 0)) {
    throw std::invalid_argument("theta must be positive");
  }
  if (static_cast<std::size_t>(gate_coef.size()) != statfit::gate_columns(design).size() ||
      static_cast<std::size_t>(count_coef.size()) != statfit::count_columns(design).size()) {
    throw std::invalid_argument("coefficient vectors do not match the design");
  }
  if (s_min < 0 || s_max < s_min) throw std::invalid_argument("invalid search-result range");
  for (double r : {unclassified_rate, misaligned_rate, duplicate_rate, ungrounded_rate, hallucinated_rate}) {
    if (!(r >= 0 && r <= 1)) throw std::invalid_argument("rates must lie in [0, 1]");
  }
}

long draw_zero_truncated(std::mt19937_64& rng, double lambda, double theta) {
  const bool poisson = !std::isfinite(theta);
  const double f0 = poisson ? std::exp(-lambda) : statfit::nb_zero_prob(lambda, 1.0 / theta);
  if (f0 <= 0.99) {
    for (;;) {
      double rate = lambda;
      if (!poisson) rate = std::gamma_distribution<double>(theta, lambda / theta)(rng);
      long y = std::poisson_distribution<long>(rate)(rng);
      if (y >= 1) return y;
    }
  }
  // Inverse CDF over y >= 1.
  const double u = f0 + (1.0 - f0) * uniform01(rng);
  double cdf = f0;
  for (long y = 1;; ++y) {
    const double yd = static_cast<double>(y);
    double lp = poisson ? yd * std::log(lambda) - lambda - std::lgamma(yd + 1)
                        : statfit::nb_logpmf(y, lambda, 1.0 / theta);
    cdf += std::exp(lp);
    if (cdf >= u || y >= 1000000) return y;
  }
}

namespace {

// Covariates and gap for every record; rendering draws from a separate
// stream so that the observations do not depend on it.
SimDataset generate(const SimConfig& cfg, bool render) {
  cfg.validate();
  const auto gate_cols = statfit::gate_columns(cfg.design);
  const auto count_cols = statfit::count_columns(cfg.design);
  std::array<double, kTopicCount> topic_w = cfg.topic_weights;
  if (std::accumulate(topic_w.begin(), topic_w.end(), 0.0) == 0.0) topic_w.fill(1.0 / kTopicCount);

  const std::size_t battles = (cfg.n + 1) / 2;
  SimDataset sim;
  sim.truth.reserve(cfg.n);
  if (render) sim.dataset.records.reserve(cfg.n);
  const double theta = cfg.count_family == statfit::CountFamily::poisson
                           ? std::numeric_limits<double>::infinity()
                           : cfg.theta;

  for (std::size_t b = 0; b < battles; ++b) {
    const std::uint64_t battle_seed = splitmix64(cfg.seed ^ splitmix64(b + 1));
    std::mt19937_64 rng(battle_seed);
    std::mt19937_64 text_rng(splitmix64(battle_seed ^ 0x7465787473ULL));
    const Topic topic = kTopics[draw_index(rng, topic_w)];
    const bool classified = uniform01(rng) >= cfg.unclassified_rate;

    std::array<SideDraw, 2> sides;
    for (int side = 0; side < 2; ++side) {
      if (sim.truth.size() >= cfg.n) break;
      auto& d = sides[static_cast<std::size_t>(side)];
      for (;;) {
        const Family fam = kFamilies[draw_index(rng, cfg.family_weights)];
        auto vs = variants_of(fam);
        d.model = vs[rng() % vs.size()];
        if (side == 0 || d.model.id != sides[0].model.id) break;
      }
      d.classified = classified;
      d.obs.family = d.model.family;
      d.obs.topic = topic;
      d.obs.s = static_cast<double>(cfg.s_min +
                                    static_cast<int>(rng() % static_cast<unsigned>(cfg.s_max - cfg.s_min + 1)));
      const bool misaligned = uniform01(rng) < cfg.misaligned_rate;
      if (misaligned) d.obs.s = 0;

      // Length is fixed before the gap is drawn, with room for every citation.
      const std::size_t per_cite = d.model.family == Family::GPT ? kInlineCiteBudget : kNumberedCiteBudget;
      const double min_chars = static_cast<double>(kFixedBudget + per_cite * static_cast<std::size_t>(d.obs.s));
      const double chars =
          std::round(std::exp(std::normal_distribution<double>(cfg.log_chars_mean, cfg.log_chars_sd)(rng)));
      d.obs.chars = std::max(chars, min_chars);

      const double p_gap =
          logistic(statfit::design_matrix(gate_cols, std::span(&d.obs, 1)).row(0).dot(cfg.gate_coef));
      d.obs.y = 0;
      if (!misaligned && uniform01(rng) < p_gap) {
        const double lambda =
            std::exp(statfit::design_matrix(count_cols, std::span(&d.obs, 1)).row(0).dot(cfg.count_coef));
        d.obs.y = draw_zero_truncated(rng, lambda, theta);
      }
      if (render) {
        const double drawn_chars = d.obs.chars;
        render_record(text_rng, cfg, b, side, misaligned, d);
        if (d.obs.chars != drawn_chars) {
          throw std::logic_error("simkit: rendered text overran its length budget");
        }
        sim.dataset.records.push_back(d.record);
      }
      sim.truth.push_back(d.obs);
      sim.classified.push_back(d.classified);
    }
  }
  return sim;
}

}  // namespace

SimDataset gen_hurdle(const SimConfig& cfg) { return generate(cfg, true); }

std::vector<statfit::Observation> gen_observations(const SimConfig& cfg) {
  return truth_observations(generate(cfg, false));
}

std::vector<statfit::Observation> truth_observations(const SimDataset& sim) {
  std::vector<statfit::Observation> out;
  for (std::size_t i = 0; i < sim.truth.size(); ++i) {
    if (sim.classified[i]) out.push_back(sim.truth[i]);
  }
  return out;
}

namespace {

// Linear predictor written out per term kind, without the design-matrix code.
double brute_predictor(const statfit::Part& part, const statfit::Observation& o) {
  double eta = 0;
  for (std::size_t j = 0; j < part.columns.size(); ++j) {
    const auto& c = part.columns[j];
    const double coef = part.estimate[static_cast<Eigen::Index>(j)];
    double v = 0;
    switch (c.kind) {
      case statfit::TermKind::intercept: v = 1; break;
      case statfit::TermKind::family: v = (o.family == c.family); break;
      case statfit::TermKind::topic: v = (o.topic == c.topic); break;
      case statfit::TermKind::search: v = o.s; break;
      case statfit::TermKind::log_chars: v = std::log(o.chars); break;
      case statfit::TermKind::family_topic: v = (o.family == c.family && o.topic == c.topic); break;
      case statfit::TermKind::family_search: v = (o.family == c.family) ? o.s : 0.0; break;
    }
    eta += coef * v;
  }
  return eta;
}

}  // namespace

double brute_loglik(std::span<const statfit::Observation> obs, const statfit::HurdleFit& params) {
  const bool poisson = params.count_family == statfit::CountFamily::poisson;
  const double alpha = poisson ? 0.0 : std::exp(-params.count.estimate[params.count.estimate.size() - 1]);
  double total = 0;
  for (const auto& o : obs) {
    // pi = Pr(Y = 0); the gate's linear predictor is the logit of Pr(Y > 0).
    const double pi = 1.0 - 1.0 / (1.0 + std::exp(-brute_predictor(params.gate, o)));
    if (o.y == 0) {
      total += std::log(pi);
      continue;
    }
    const double lambda = std::exp(brute_predictor(params.count, o));
    const double y = static_cast<double>(o.y);
    double log_f, f0;
    if (poisson) {
      log_f = y * std::log(lambda) - lambda - std::lgamma(y + 1);
      f0 = std::exp(-lambda);
    } else {
      const double inv_a = 1.0 / alpha;
      log_f = std::lgamma(y + inv_a) - std::lgamma(inv_a) - std::lgamma(y + 1) +
              y * std::log(alpha * lambda) - (y + inv_a) * std::log(1.0 + alpha * lambda);
      f0 = std::pow(1.0 + alpha * lambda, -inv_a);
    }
    total += std::log(1.0 - pi) + log_f - std::log(1.0 - f0);
  }
  return total;
}

std::vector<headtohead::PairRow> gen_pairwise(const PairwiseConfig& cfg) {
  std::vector<std::string> opps = cfg.opponents;
  std::sort(opps.begin(), opps.end());
  if (opps.empty()) throw std::invalid_argument("gen_pairwise: no opponents");

  std::mt19937_64 rng(splitmix64(cfg.seed));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<headtohead::PairRow> rows;
  rows.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    headtohead::PairRow r;
    r.battle_id = "pb" + std::to_string(i);
    r.focal = cfg.focal;
    r.focal_family = cfg.focal_family;
    const std::size_t oi = rng() % opps.size();
    r.opponent = opps[oi];
    r.topic = kTopics[rng() % kTopicCount];
    r.delta_s = cfg.constant_delta_s
                    ? 0.0
                    : static_cast<double>(static_cast<int>(rng() % static_cast<unsigned>(2 * cfg.delta_s_range + 1)) -
                                          cfg.delta_s_range);
    r.delta_len = std::round(cfg.delta_len_sd * noise(rng));
    double d = cfg.beta0 + cfg.beta1 * r.delta_s + cfg.beta2 * r.delta_len;
    if (r.topic != kReferenceTopic) d += cfg.topic_effect[static_cast<std::size_t>(r.topic)];
    if (oi > 0 && oi < cfg.opponent_effect.size()) d += cfg.opponent_effect[oi];
    r.d = d + cfg.sigma * noise(rng);
    rows.push_back(std::move(r));
  }
  return rows;
}

SimConfig config_from_json(const nlohmann::json& j) {
  SimConfig cfg = SimConfig::published_like(j.value("n", std::size_t{1000}), j.value("seed", std::uint64_t{1}));
  if (j.contains("interactions") && j["interactions"].get<bool>()) {
    cfg.design = statfit::DesignSpec::with_interactions();
    Eigen::VectorXd main = cfg.count_coef;
    auto cols = statfit::count_columns(cfg.design);
    cfg.count_coef = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols.size()));
    cfg.count_coef.head(main.size()) = main;
  }
  if (j.contains("count_family")) {
    cfg.count_family = j["count_family"].get<std::string>() == "poisson" ? statfit::CountFamily::poisson
                                                                         : statfit::CountFamily::negbin;
  }
  cfg.theta = j.value("theta", cfg.theta);
  cfg.s_min = j.value("s_min", cfg.s_min);
  cfg.s_max = j.value("s_max", cfg.s_max);
  cfg.log_chars_mean = j.value("log_chars_mean", cfg.log_chars_mean);
  cfg.log_chars_sd = j.value("log_chars_sd", cfg.log_chars_sd);
  cfg.unclassified_rate = j.value("unclassified_rate", cfg.unclassified_rate);
  cfg.misaligned_rate = j.value("misaligned_rate", cfg.misaligned_rate);
  cfg.duplicate_rate = j.value("duplicate_rate", cfg.duplicate_rate);
  cfg.ungrounded_rate = j.value("ungrounded_rate", cfg.ungrounded_rate);
  cfg.hallucinated_rate = j.value("hallucinated_rate", cfg.hallucinated_rate);
  if (j.contains("family_weights")) {
    for (Family f : kFamilies) {
      cfg.family_weights[static_cast<std::size_t>(f)] = j["family_weights"].value(std::string(to_string(f)), 0.0);
    }
  }
  if (j.contains("topic_weights")) {
    for (Topic t : kTopics) {
      cfg.topic_weights[static_cast<std::size_t>(t)] = j["topic_weights"].value(std::string(to_string(t)), 0.0);
    }
  }
  auto override_coefs = [](const nlohmann::json& src, const std::vector<statfit::Column>& cols, Eigen::VectorXd& v) {
    for (auto it = src.begin(); it != src.end(); ++it) {
      bool found = false;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (cols[c].name() == it.key()) {
          v[static_cast<Eigen::Index>(c)] = it.value().get<double>();
          found = true;
        }
      }
      if (!found) throw std::invalid_argument("unknown coefficient name: " + it.key());
    }
  };
  if (j.contains("gate")) override_coefs(j["gate"], statfit::gate_columns(cfg.design), cfg.gate_coef);
  if (j.contains("count")) override_coefs(j["count"], statfit::count_columns(cfg.design), cfg.count_coef);
  cfg.validate();
  return cfg;
}

}  // namespace attrgap::simkit
