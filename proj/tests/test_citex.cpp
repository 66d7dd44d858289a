#include <doctest.h>

#include <random>
#include <set>

#include "attrgap/citex.hpp"
#include "attrgap/simkit.hpp"

using namespace attrgap;
using namespace attrgap::citex;

namespace {

std::vector<std::string> src(std::initializer_list<const char*> l) { return {l.begin(), l.end()}; }

}  // namespace

TEST_SUITE("citex") {
  TEST_CASE("numbered citation resolves positionally") {
    auto s = src({"a.com"});
    auto c = extract("see [1]", s);
    REQUIRE(c.size() == 1);
    CHECK(c[0].kind == Kind::numbered);
    CHECK(c[0].number == 1);
    CHECK(c[0].status == Status::grounded);
    CHECK(c[0].resolved->render() == "a.com");
    CHECK(c[0].surface == "[1]");
    CHECK(c[0].start == 4);
    CHECK(c[0].end == 7);
  }

  TEST_CASE("number past the log is hallucinated") {
    auto s = src({"a.com", "b.com"});
    auto c = extract("see [3]", s);
    REQUIRE(c.size() == 1);
    CHECK(c[0].status == Status::hallucinated);
    CHECK_FALSE(c[0].resolved.has_value());
  }

  TEST_CASE("bare URL outside the log is ungrounded") {
    auto s = src({"a.com"});
    auto c = extract("per https://b.com/x?u=1", s);
    REQUIRE(c.size() == 1);
    CHECK(c[0].kind == Kind::inline_url);
    CHECK(c[0].status == Status::ungrounded);
    CHECK(c[0].resolved->render() == "b.com/x");
  }

  TEST_CASE("markdown links, superscripts, punctuation and images") {
    auto s = src({"https://www.a.com/p/", "b.org"});
    auto c = extract("Intro [A](https://a.com/p?ref=1). Then^[2], see https://c.net/q). ![img](https://a.com/p)", s);
    REQUIRE(c.size() == 3);
    CHECK(c[0].kind == Kind::inline_url);
    CHECK(c[0].status == Status::grounded);
    CHECK(c[0].surface == "[A](https://a.com/p?ref=1)");
    CHECK(c[1].kind == Kind::numbered);
    CHECK(c[1].surface == "^[2]");
    CHECK(c[1].resolved->render() == "b.org");
    CHECK(c[2].surface == "https://c.net/q");
    CHECK(c[2].status == Status::ungrounded);
  }

  TEST_CASE("markers in fenced code are ignored") {
    auto s = src({"a.com", "b.com"});
    auto c = extract("Use arr[1]?\n```\nx = arr[2]\n```\nReal [2].", s);
    REQUIRE(c.size() == 2);
    CHECK(c[0].number == 1);
    CHECK(c[1].number == 2);
    CHECK(c[1].start > 20);
  }

  TEST_CASE("[0] and non-numeric brackets are not citations") {
    auto s = src({"a.com"});
    CHECK(extract("[0] [x] [] [1a]", s).empty());
  }

  TEST_CASE("empty and pathological input") {
    std::vector<std::string> none;
    CHECK(extract("", none).empty());
    CHECK(extract("[[[[(((( ]]]] https:// [", none).empty());
    CHECK(extract(std::string(10000, '['), none).empty());
  }

  TEST_CASE("summarize") {
    CHECK(summarize({}).grounded_unique == 0);
    auto s = src({"a.com/x"});
    auto c = extract("[one](a.com/x?1) and https://a.com/x?2 and [5] [6]", s);
    auto sum = summarize(c);
    CHECK(sum.grounded_unique == 1);
    CHECK(sum.hallucinated_count == 2);
    CHECK(sum.cited_canonical_set.size() == sum.grounded_unique);
  }

  TEST_CASE("misaligned predicate") {
    std::vector<std::string> none;
    auto some = src({"a.com"});
    CHECK_FALSE(misaligned("no markers at all https://a.com", none));
    CHECK_FALSE(misaligned("[2]", none));
    CHECK(misaligned("[2] and https://a.com/x", none));
    CHECK_FALSE(misaligned("[2] and https://a.com/x", some));
    // Direct evaluation of the predicate on random marker mixes.
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
      std::string text;
      bool has_num = false, has_inline = false;
      for (int k = 0; k < 3; ++k) {
        switch (rng() % 3) {
          case 0: text += " [" + std::to_string(1 + rng() % 3) + "]"; has_num = true; break;
          case 1: text += " https://z" + std::to_string(rng() % 3) + ".com/p"; has_inline = true; break;
          default: text += " words";
        }
      }
      const bool empty = rng() % 2;
      std::vector<std::string> sources = empty ? none : some;
      CHECK(misaligned(text, sources) == (empty && has_num && has_inline));
    }
  }

  TEST_CASE("GPT-styled synthetic answers never hallucinate; grounded set within sources") {
    auto cfg = simkit::SimConfig::published_like(2000, 8);
    auto sim = simkit::gen_hurdle(cfg);
    for (const auto& rec : sim.dataset.records) {
      auto sum = summarize(extract(rec.response_text, rec.search_results));
      if (rec.model.family == Family::GPT) CHECK(sum.hallucinated_count == 0);
      std::set<urlnorm::CanonicalUrl> sources;
      for (const auto& u : rec.search_results) sources.insert(urlnorm::canonicalize(u));
      for (const auto& c : sum.cited_canonical_set) CHECK(sources.contains(c));
    }
  }

  TEST_CASE("extract is offset-sorted and deterministic") {
    auto s = src({"a.com", "b.com"});
    std::string text = "x [2] https://q.com [1](https://b.com) ^[1] [9]";
    auto a = extract(text, s);
    auto b = extract(text, s);
    CHECK(a == b);
    for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].end <= a[i].start);
  }
}
