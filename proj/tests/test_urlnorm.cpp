#include <doctest.h>

#include <algorithm>
#include <random>

#include "attrgap/urlnorm.hpp"

using namespace attrgap::urlnorm;

namespace {

// Independent oracle: pairwise comparison, no ordered container.
std::size_t brute_unique(const std::vector<std::string>& raws) {
  std::vector<CanonicalUrl> seen;
  for (const auto& r : raws) {
    try {
      auto c = canonicalize(r);
      bool dup = false;
      for (const auto& s : seen) dup = dup || (s.host == c.host && s.path == c.path);
      if (!dup) seen.push_back(c);
    } catch (const UrlError&) {
    }
  }
  return seen.size();
}

std::string random_url(std::mt19937_64& rng) {
  static const std::vector<std::string> schemes = {"", "http://", "https://", "HTTPS://", "//"};
  static const std::vector<std::string> hosts = {"a.com", "www.a.com", "B.org", "news.example.co.uk",
                                                 "WWW.Shop.io", "x-y.net"};
  static const std::vector<std::string> paths = {"", "/", "/p", "/p/", "/p/q", "/P", "/%7Euser/"};
  static const std::vector<std::string> tails = {"", "?utm=1", "?a=b&c=d", "#frag", "?x#y"};
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  std::string port = rng() % 5 == 0 ? ":8080" : "";
  return pick(schemes) + pick(hosts) + port + pick(paths) + pick(tails);
}

}  // namespace

TEST_SUITE("urlnorm") {
  TEST_CASE("tracking parameter is stripped to the bare host") {
    auto c = canonicalize("example.com/?tracking_id=23222");
    CHECK(c.host == "example.com");
    CHECK(c.path == "");
    CHECK(c.render() == "example.com");
  }

  TEST_CASE("case, scheme and www are normalized") {
    auto c = canonicalize("HTTPS://WWW.Example.com/a/");
    CHECK(c.host == "example.com");
    CHECK(c.path == "/a");
  }

  TEST_CASE("query, fragment and scheme do not affect identity") {
    CHECK(canonicalize("https://a.com/p?x=1#f") == canonicalize("http://a.com/p"));
  }

  TEST_CASE("userinfo and port are dropped, percent escapes kept") {
    auto c = canonicalize("ftp://user:pw@Host.example:21/%7Ea/b/");
    CHECK(c.host == "host.example");
    CHECK(c.path == "/%7Ea/b");
  }

  TEST_CASE("host granularity drops the path") {
    CHECK(canonicalize("https://a.com/x/y", Granularity::host).render() == "a.com");
  }

  TEST_CASE("unparseable input carries the raw string") {
    for (std::string bad : {"", "   ", "https://", "/just/a/path", "http://:80/x", "a.com:port/x"}) {
      try {
        canonicalize(bad);
        FAIL("expected UrlError for '" << bad << "'");
      } catch (const UrlError& e) {
        CHECK(e.raw() == bad);
      }
    }
  }

  TEST_CASE("unique_count examples") {
    CHECK(unique_count(std::vector<std::string>{}).unique == 0);
    CHECK(unique_count(std::vector<std::string>{"a.com/x?1", "a.com/x?2", "a.com/y"}).unique == 2);
    auto u = unique_count(std::vector<std::string>{"a.com", "", "https://"});
    CHECK(u.unique == 1);
    CHECK(u.unparseable == 2);
  }

  TEST_CASE("property suite: idempotence, permutation invariance, brute-force agreement") {
    std::mt19937_64 rng(20250616);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::string> list(rng() % 12);
      for (auto& u : list) u = random_url(rng);
      for (const auto& u : list) {
        auto c = canonicalize(u);
        CHECK(canonicalize(c.render()) == c);
        CHECK(c.host.find_first_of("ABCDEFGHIJKLMNOPQRSTUVWXYZ") == std::string::npos);
        CHECK_FALSE(c.path.ends_with("/"));
      }
      const auto n = unique_count(list).unique;
      CHECK(n == brute_unique(list));
      CHECK(n <= list.size());
      auto shuffled = list;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      CHECK(unique_count(shuffled).unique == n);
      auto doubled = list;
      doubled.insert(doubled.end(), list.begin(), list.end());
      CHECK(unique_count(doubled).unique == n);
    }
  }
}
