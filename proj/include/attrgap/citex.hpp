#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attrgap/urlnorm.hpp"

namespace attrgap::citex {

// Bump whenever the token grammar below changes; reports carry it so runs
// under different grammars can be told apart.
inline constexpr std::string_view kGrammarVersion = "citex-grammar/1";

enum class Kind { inline_url, numbered };
enum class Status { grounded, ungrounded, hallucinated };

std::string_view to_string(Kind k);
std::string_view to_string(Status s);

struct Citation {
  Kind kind = Kind::inline_url;
  std::string surface;
  std::size_t start = 0;  // byte offsets into the answer text, [start, end)
  std::size_t end = 0;
  std::optional<int> number;
  std::optional<urlnorm::CanonicalUrl> resolved;
  Status status = Status::ungrounded;

  bool operator==(const Citation&) const = default;
};

struct Options {
  urlnorm::Granularity granularity = urlnorm::Granularity::page;
};

/// Grammar:
///   markdown link   [label](url)         -> inline_url (images ![..](..) are skipped)
///   bare URL        http(s)://...        -> inline_url, trailing punctuation trimmed
///   numbered        [n] or ^[n], n >= 1  -> numbered, resolves to sources[n-1]
/// Overlapping matches are resolved longest-first; numbered markers inside
/// fenced code blocks are ignored. Result is sorted by start offset.
std::vector<Citation> extract(std::string_view text, std::span<const std::string> sources,
                              const Options& opts = {});

struct CitationSummary {
  std::size_t grounded_unique = 0;
  std::size_t ungrounded_unique = 0;
  std::size_t hallucinated_count = 0;
  std::set<urlnorm::CanonicalUrl> cited_canonical_set;  // grounded only
};

CitationSummary summarize(std::span<const Citation> citations);

/// A numbered marker with an empty search log is ordinary hallucination. The
/// trace is only considered misaligned when the same answer also carries
/// inline URL citations: the text then shows retrieved sources that the
/// disclosed log cannot account for.
bool misaligned(std::string_view text, std::span<const std::string> sources,
                const Options& opts = {});

}  // namespace attrgap::citex
