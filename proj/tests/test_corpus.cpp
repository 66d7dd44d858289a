#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "attrgap/corpus.hpp"
#include "attrgap/log.hpp"
#include "attrgap/simkit.hpp"

using namespace attrgap;
using nlohmann::json;

namespace {

json record(const std::string& id, const std::string& battle, const std::string& model = "ppl-sonar",
            json topic = "Sports") {
  return {{"record_id", id},
          {"battle_id", battle},
          {"model", model},
          {"turns", 1},
          {"response_text", "Answer [1]."},
          {"search_results", {"https://a.com/x"}},
          {"topic", topic},
          {"timestamp", "2025-03-01T00:00:00Z"}};
}

struct QuietWarnings {
  std::vector<std::string> seen;
  QuietWarnings() {
    set_warning_sink([this](std::string_view m) { seen.emplace_back(m); });
  }
  ~QuietWarnings() { set_warning_sink(nullptr); }
};

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("eleven known variants in three families") {
    CHECK(known_models().size() == 11);
    std::map<Family, int> per;
    for (const auto& m : known_models()) {
      per[m.family]++;
      CHECK(resolve_model(m.id) == m);
    }
    CHECK(per[Family::GPT] == 4);
    CHECK(per[Family::Gemini] == 2);
    CHECK(per[Family::Sonar] == 5);
  }

  TEST_CASE("unknown model ids: rejected by default, prefix-mapped when allowed") {
    CHECK_THROWS_AS(resolve_model("gpt-5-search"), CorpusError);
    CHECK(resolve_model("api-gpt-5-search", true).family == Family::GPT);
    CHECK(resolve_model("gemini-3-grounding", true).family == Family::Gemini);
    CHECK(resolve_model("ppl-sonar-deep", true).family == Family::Sonar);
    CHECK_THROWS_AS(resolve_model("claude-x", true), CorpusError);
  }

  TEST_CASE("topic labels round-trip and the set is closed") {
    for (Topic t : kTopics) CHECK(parse_topic(to_string(t)) == t);
    CHECK(to_string(Topic::CurrentAffairs) == "Current Affairs & Factual Information");
    CHECK(to_string(Topic::Games) == "Games, Fantasy & Creative Writing");
    CHECK_FALSE(parse_topic("Cooking").has_value());
  }

  TEST_CASE("empty input gives an empty dataset") {
    auto ds = parse_records("");
    CHECK(ds.records.empty());
    CHECK(ds.n_dropped.empty());
  }

  TEST_CASE("truncated line is counted, never fatal") {
    QuietWarnings q;
    std::string text = record("r1", "b1").dump() + "\n" + record("r2", "b1").dump() + "\n" +
                       record("r3", "b2").dump() + "\n" + record("r4", "b2").dump().substr(0, 40) + "\n";
    auto ds = parse_records(text);
    CHECK(ds.records.size() == 3);
    CHECK(ds.dropped(drop_reason::kMalformed) == 1);
    CHECK(ds.records[0].record_id == "r1");
    CHECK(ds.records[2].record_id == "r3");
    CHECK(q.seen.size() == 1);
  }

  TEST_CASE("unknown model is a per-line drop") {
    QuietWarnings q;
    auto ds = parse_records(record("r1", "b1", "mystery-model").dump() + "\n");
    CHECK(ds.records.empty());
    CHECK(ds.dropped(drop_reason::kUnknownModel) == 1);
  }

  TEST_CASE("unreadable file is fatal") {
    CHECK_THROWS_AS(load_records("/nonexistent/records.jsonl"), CorpusError);
  }

  TEST_CASE("multi-turn text is joined and search logs are unioned") {
    auto j = record("r1", "b1");
    j["turns"] = 2;
    j["response_text"] = {"first", "second"};
    j["search_results"] = nlohmann::json::array({nlohmann::json::array({"a.com", "b.com"}),
                                                nlohmann::json::array({"b.com", "c.com"})});
    auto rec = record_from_json(j);
    CHECK(rec.response_text == "first\n\nsecond");
    CHECK(rec.search_results == std::vector<std::string>{"a.com", "b.com", "c.com"});
    auto last = record_from_json(j, {false, true});
    CHECK(last.search_results == std::vector<std::string>{"b.com", "c.com"});
  }

  TEST_CASE("character count is in code points") {
    auto j = record("r1", "b1");
    j["response_text"] = "caf\xc3\xa9 \xe2\x9c\x93";
    CHECK(record_from_json(j).response_char_count == 6);
  }

  TEST_CASE("write and load preserve records and record the input digest") {
    auto path = std::filesystem::temp_directory_path() / "attrgap_corpus_roundtrip.jsonl";
    Dataset ds;
    ds.records.push_back(record_from_json(record("r1", "b1")));
    ds.records.push_back(record_from_json(record("r2", "b1", "api-gpt-4o-search", nullptr)));
    write_records(path, ds);
    auto back = load_records(path);
    CHECK(back.records == ds.records);
    REQUIRE(back.provenance.size() == 1);
    CHECK(back.provenance[0].sha256.size() == 64);
    std::filesystem::remove(path);
  }

  TEST_CASE("attach_topics") {
    QuietWarnings q;
    Dataset ds;
    for (int i = 0; i < 3; ++i) {
      ds.records.push_back(record_from_json(record("r" + std::to_string(i), "b", "ppl-sonar", nullptr)));
    }
    SUBCASE("full coverage flags nothing") {
      auto out = attach_topics(ds, {{"r0", "Sports"}, {"r1", "History"}, {"r2", "Other"}});
      for (const auto& r : out.records) CHECK(r.topic.has_value());
    }
    SUBCASE("a missing id flags exactly that record") {
      auto out = attach_topics(ds, {{"r0", "Sports"}, {"r2", "Other"}});
      CHECK(out.records[0].topic.has_value());
      CHECK_FALSE(out.records[1].topic.has_value());
      CHECK(out.records[2].topic.has_value());
    }
    SUBCASE("label outside the closed set names the label") {
      try {
        attach_topics(ds, {{"r0", "Cooking"}});
        FAIL("expected CorpusError");
      } catch (const CorpusError& e) {
        CHECK(std::string(e.what()).find("Cooking") != std::string::npos);
      }
    }
  }

  TEST_CASE("topic sidecar in both layouts") {
    auto dir = std::filesystem::temp_directory_path();
    std::ofstream(dir / "attrgap_side_obj.json") << R"({"r1": "Sports", "r2": "History"})";
    std::ofstream(dir / "attrgap_side_lines.jsonl") << "{\"record_id\":\"r1\",\"topic\":\"Sports\"}\n"
                                                       "{\"record_id\":\"r2\",\"topic\":\"History\"}\n";
    auto a = load_topic_sidecar(dir / "attrgap_side_obj.json");
    auto b = load_topic_sidecar(dir / "attrgap_side_lines.jsonl");
    CHECK(a == b);
    CHECK(a.at("r2") == "History");
  }

  TEST_CASE("pairing") {
    Dataset ds;
    for (auto [id, b] : std::vector<std::pair<std::string, std::string>>{{"a", "1"}, {"b", "2"}, {"c", "1"}, {"d", "2"}}) {
      ds.records.push_back(record_from_json(record(id, b)));
    }
    auto p = pair_battles(ds);
    CHECK(p.pairs.size() == 2);
    CHECK(p.excluded == 0);
    CHECK(p.pairs[0].first.record_id == "a");
    CHECK(p.pairs[0].second.record_id == "c");

    ds.records.resize(3);
    p = pair_battles(ds);
    CHECK(p.pairs.size() == 1);
    CHECK(p.excluded == 1);
  }

  TEST_CASE("pairing a 14,000-record fixture of 7,000 battles") {
    auto cfg = simkit::SimConfig::published_like(14000, 3);
    auto sim = simkit::gen_hurdle(cfg);
    auto p = pair_battles(sim.dataset);
    CHECK(p.pairs.size() == 7000);
    CHECK(p.pairs.size() * 2 + p.excluded == sim.dataset.records.size());
    for (const auto& [a, b] : p.pairs) CHECK(a.battle_id == b.battle_id);
  }

  TEST_CASE("clean drops unclassified and misaligned records and is idempotent") {
    QuietWarnings q;
    Dataset ds;
    ds.records.push_back(record_from_json(record("ok", "b1")));
    ds.records.push_back(record_from_json(record("untopiced", "b1", "ppl-sonar", nullptr)));
    auto mis = record("mis", "b2");
    mis["search_results"] = json::array();
    mis["response_text"] = "Claimed [2] and https://x.org/y";
    ds.records.push_back(record_from_json(mis));
    auto hallucinated = record("hall", "b2");
    hallucinated["search_results"] = json::array();
    hallucinated["response_text"] = "Only [2].";
    ds.records.push_back(record_from_json(hallucinated));

    auto once = clean(ds);
    CHECK(once.records.size() == 2);
    CHECK(once.records[0].record_id == "ok");
    CHECK(once.records[1].record_id == "hall");
    CHECK(once.dropped(drop_reason::kUnclassified) == 1);
    CHECK(once.dropped(drop_reason::kMisaligned) == 1);
    auto twice = clean(once);
    CHECK(twice.records == once.records);
    CHECK(twice.n_dropped == once.n_dropped);

    Dataset all_clean;
    all_clean.records.push_back(ds.records[0]);
    CHECK(clean(all_clean).records == all_clean.records);
  }

  TEST_CASE("unclassified drop count equals a direct scan of the fixture") {
    QuietWarnings q;
    auto cfg = simkit::SimConfig::published_like(3000, 17);
    cfg.unclassified_rate = 0.1;
    cfg.misaligned_rate = 0.02;
    auto sim = simkit::gen_hurdle(cfg);
    std::size_t missing = 0;
    for (const auto& r : sim.dataset.records) missing += !r.topic.has_value();
    CHECK(missing > 0);
    auto out = clean(sim.dataset);
    CHECK(out.dropped(drop_reason::kUnclassified) == missing);
  }
}
