#include <doctest.h>

#include <sstream>

#include "attrgap/gapmetrics.hpp"
#include "attrgap/simkit.hpp"

using namespace attrgap;
using namespace attrgap::simkit;

namespace {

std::string serialize(const Dataset& ds) {
  std::ostringstream out;
  for (const auto& r : ds.records) out << record_to_json(r).dump() << '\n';
  return out.str();
}

}  // namespace

TEST_SUITE("simkit") {
  TEST_CASE("same seed, byte-identical dataset; different seed differs") {
    auto a = gen_hurdle(SimConfig::published_like(500, 1));
    auto b = gen_hurdle(SimConfig::published_like(500, 1));
    auto c = gen_hurdle(SimConfig::published_like(500, 2));
    CHECK(serialize(a.dataset) == serialize(b.dataset));
    CHECK(serialize(a.dataset) != serialize(c.dataset));
    CHECK(a.dataset.records.size() == 500);
    CHECK(gen_hurdle(SimConfig::published_like(501, 1)).dataset.records.size() == 501);
  }

  TEST_CASE("observation-only generation matches the rendered truth") {
    auto cfg = SimConfig::published_like(800, 5);
    cfg.unclassified_rate = 0.1;
    auto sim = gen_hurdle(cfg);
    auto obs = gen_observations(cfg);
    auto truth = truth_observations(sim);
    REQUIRE(obs.size() == truth.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      CHECK(obs[i].y == truth[i].y);
      CHECK(obs[i].s == truth[i].s);
      CHECK(obs[i].chars == truth[i].chars);
    }
  }

  TEST_CASE("rendered records audit back to the drawn gap") {
    auto cfg = SimConfig::published_like(3000, 6);
    cfg.misaligned_rate = 0.03;
    auto sim = gen_hurdle(cfg);
    for (std::size_t i = 0; i < sim.truth.size(); ++i) {
      const auto a = gapmetrics::audit_record(sim.dataset.records[i]);
      const auto& t = sim.truth[i];
      CHECK(a.gap == static_cast<std::size_t>(t.y));
      CHECK(a.visited_unique == static_cast<std::size_t>(std::max<double>(t.s, static_cast<double>(t.y))));
      CHECK(a.response_char_count == static_cast<std::size_t>(t.chars));
      CHECK(a.family == t.family);
    }
  }

  TEST_CASE("gate probability zero gives no gaps") {
    auto cfg = SimConfig::published_like(2000, 7);
    cfg.gate_coef.setZero();
    cfg.gate_coef[0] = -1e3;
    for (const auto& o : gen_observations(cfg)) CHECK(o.y == 0);
  }

  TEST_CASE("empirical gap mean matches p times the truncated mean") {
    auto cfg = SimConfig::published_like(1000000, 8);
    cfg.family_weights = {0, 1, 0};
    cfg.topic_weights.fill(0);
    cfg.topic_weights[static_cast<std::size_t>(kReferenceTopic)] = 1;
    cfg.s_min = cfg.s_max = 5;
    cfg.log_chars_sd = 0;
    auto obs = gen_observations(cfg);
    double sum = 0;
    for (const auto& o : obs) sum += static_cast<double>(o.y);
    statfit::HurdleFit truth;
    truth.spec = cfg.design;
    truth.gate.columns = statfit::gate_columns(cfg.design);
    truth.count.columns = statfit::count_columns(cfg.design);
    Eigen::VectorXd cp(cfg.count_coef.size() + 1);
    cp << cfg.count_coef, std::log(cfg.theta);
    const double chars = obs.front().chars;
    const auto p = statfit::predict_at(truth, {Family::Gemini, kReferenceTopic, 5, chars}, cfg.gate_coef, cp);
    CHECK(sum / static_cast<double>(obs.size()) == doctest::Approx(p.expected_gap).epsilon(0.005));
  }

  TEST_CASE("config validation and JSON overrides") {
    auto cfg = SimConfig::published_like(10, 1);
    cfg.theta = -1;
    CHECK_THROWS(cfg.validate());
    cfg = SimConfig::published_like(10, 1);
    cfg.family_weights = {0.5, 0.5, 0.5};
    CHECK_THROWS(cfg.validate());

    auto j = nlohmann::json::parse(R"({"n": 40, "seed": 3, "theta": 2.5,
        "count": {"search results count": 0.2}, "gate": {"modelfamilyGPT": -1.0}})");
    auto c = config_from_json(j);
    CHECK(c.n == 40);
    CHECK(c.theta == 2.5);
    CHECK(c.count_coef[14] == 0.2);
    CHECK(c.gate_coef[1] == -1.0);
    CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"count": {"nonsense": 1}})")));
  }

  TEST_CASE("pairwise generator is deterministic") {
    PairwiseConfig cfg;
    auto a = gen_pairwise(cfg);
    auto b = gen_pairwise(cfg);
    REQUIRE(a.size() == cfg.n);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].d == b[i].d);
      CHECK(a[i].focal == cfg.focal);
      CHECK(std::abs(a[i].delta_s) <= cfg.delta_s_range);
    }
  }
}
