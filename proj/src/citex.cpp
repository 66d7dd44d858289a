#include "attrgap/citex.hpp"

#include <algorithm>
#include <cctype>
#include <map>

namespace attrgap::citex {

std::string_view to_string(Kind k) {
  return k == Kind::numbered ? "numbered" : "inline_url";
}

std::string_view to_string(Status s) {
  switch (s) {
    case Status::grounded: return "grounded";
    case Status::ungrounded: return "ungrounded";
    case Status::hallucinated: return "hallucinated";
  }
  return "?";
}

namespace {

struct Candidate {
  std::size_t start = 0;
  std::size_t end = 0;
  Kind kind = Kind::inline_url;
  std::string_view url;   // inline kinds
  int number = 0;         // numbered kind
  bool emit = true;       // images consume their span but are not citations
};

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Byte ranges [start, end) covered by fenced code blocks (``` or ~~~).
std::vector<std::pair<std::size_t, std::size_t>> fenced_ranges(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0;
  constexpr auto kClosed = std::string_view::npos;
  std::size_t open = kClosed;
  char fence_char = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    std::size_t indent = 0;
    while (indent < line.size() && indent < 3 && line[indent] == ' ') ++indent;
    std::string_view body = line.substr(indent);
    bool is_fence = body.starts_with("```") || body.starts_with("~~~");
    if (is_fence) {
      if (open == kClosed) {
        open = pos;
        fence_char = body[0];
      } else if (body[0] == fence_char) {
        out.emplace_back(open, eol);
        open = kClosed;
      }
    }
    if (eol == text.size()) break;
    pos = eol + 1;
  }
  if (open != kClosed) out.emplace_back(open, text.size());
  return out;
}

bool url_stop(char c) {
  return std::isspace(static_cast<unsigned char>(c)) || c == '<' || c == '>' || c == '"' ||
         c == '\'' || c == ']' || c == ')' || c == '`' || c == '[';
}

void find_markdown_links(std::string_view text, std::vector<Candidate>& out) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '[') continue;
    std::size_t close = i + 1;
    while (close < text.size() && text[close] != ']' && text[close] != '[' && text[close] != '\n') {
      ++close;
    }
    if (close + 1 >= text.size() || text[close] != ']' || text[close + 1] != '(') continue;
    std::size_t url_begin = close + 2;
    while (url_begin < text.size() && text[url_begin] == ' ') ++url_begin;
    bool angle = url_begin < text.size() && text[url_begin] == '<';
    if (angle) ++url_begin;
    // One level of balanced parentheses inside the URL is allowed.
    int depth = 0;
    std::size_t j = url_begin;
    for (; j < text.size(); ++j) {
      char c = text[j];
      if (c == '\n') break;
      if (angle ? c == '>' : std::isspace(static_cast<unsigned char>(c))) break;
      if (c == '(') {
        ++depth;
      } else if (c == ')') {
        if (depth == 0) break;
        --depth;
      }
    }
    std::size_t url_end = j;
    if (angle && j < text.size() && text[j] == '>') ++j;
    while (j < text.size() && text[j] != ')' && text[j] != '\n') ++j;  // optional title
    if (j >= text.size() || text[j] != ')' || url_end == url_begin) continue;

    Candidate c;
    c.start = (i > 0 && text[i - 1] == '!') ? i - 1 : i;
    c.end = j + 1;
    c.kind = Kind::inline_url;
    c.url = text.substr(url_begin, url_end - url_begin);
    c.emit = c.start == i;
    out.push_back(c);
  }
}

void find_bare_urls(std::string_view text, std::vector<Candidate>& out) {
  for (std::string_view scheme : {"http://", "https://"}) {
    std::size_t pos = 0;
    while ((pos = text.find(scheme, pos)) != std::string_view::npos) {
      bool word_before = pos > 0 && std::isalnum(static_cast<unsigned char>(text[pos - 1]));
      std::size_t end = pos + scheme.size();
      while (end < text.size() && !url_stop(text[end])) ++end;
      while (end > pos + scheme.size() && std::string_view(".,;:!?*_").find(text[end - 1]) !=
                                              std::string_view::npos) {
        --end;
      }
      if (!word_before && end > pos + scheme.size()) {
        Candidate c;
        c.start = pos;
        c.end = end;
        c.kind = Kind::inline_url;
        c.url = text.substr(pos, end - pos);
        out.push_back(c);
      }
      pos += scheme.size();
    }
  }
}

void find_numbered(std::string_view text,
                   const std::vector<std::pair<std::size_t, std::size_t>>& fences,
                   std::vector<Candidate>& out) {
  auto in_fence = [&](std::size_t p) {
    return std::any_of(fences.begin(), fences.end(),
                       [p](const auto& r) { return p >= r.first && p < r.second; });
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '[') continue;
    std::size_t j = i + 1;
    while (j < text.size() && is_digit(text[j]) && j - i <= 6) ++j;
    if (j == i + 1 || j >= text.size() || text[j] != ']') continue;
    if (in_fence(i)) continue;
    int n = std::stoi(std::string(text.substr(i + 1, j - i - 1)));
    if (n < 1) continue;
    Candidate c;
    c.start = (i > 0 && text[i - 1] == '^') ? i - 1 : i;
    c.end = j + 1;
    c.kind = Kind::numbered;
    c.number = n;
    out.push_back(c);
  }
}

}  // namespace

std::vector<Citation> extract(std::string_view text, std::span<const std::string> sources,
                              const Options& opts) {
  std::vector<Candidate> cands;
  find_markdown_links(text, cands);
  find_bare_urls(text, cands);
  find_numbered(text, fenced_ranges(text), cands);

  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    std::size_t la = a.end - a.start, lb = b.end - b.start;
    return la != lb ? la > lb : a.start < b.start;
  });
  std::map<std::size_t, std::size_t> taken;  // start -> end
  std::vector<Candidate> accepted;
  for (const auto& c : cands) {
    auto next = taken.lower_bound(c.start);
    if (next != taken.end() && next->first < c.end) continue;
    if (next != taken.begin() && std::prev(next)->second > c.start) continue;
    taken.emplace(c.start, c.end);
    accepted.push_back(c);
  }
  std::sort(accepted.begin(), accepted.end(),
            [](const Candidate& a, const Candidate& b) { return a.start < b.start; });

  std::vector<std::optional<urlnorm::CanonicalUrl>> source_canon;
  std::set<urlnorm::CanonicalUrl> source_set;
  source_canon.reserve(sources.size());
  for (const auto& s : sources) {
    try {
      auto cu = urlnorm::canonicalize(s, opts.granularity);
      source_set.insert(cu);
      source_canon.emplace_back(std::move(cu));
    } catch (const urlnorm::UrlError&) {
      source_canon.emplace_back(std::nullopt);
    }
  }

  std::vector<Citation> out;
  for (const auto& c : accepted) {
    if (!c.emit) continue;
    Citation cit;
    cit.kind = c.kind;
    cit.start = c.start;
    cit.end = c.end;
    cit.surface = std::string(text.substr(c.start, c.end - c.start));
    if (c.kind == Kind::numbered) {
      cit.number = c.number;
      auto idx = static_cast<std::size_t>(c.number - 1);
      if (idx < source_canon.size() && source_canon[idx]) {
        cit.resolved = source_canon[idx];
        cit.status = Status::grounded;
      } else {
        cit.status = Status::hallucinated;
      }
    } else {
      try {
        cit.resolved = urlnorm::canonicalize(c.url, opts.granularity);
      } catch (const urlnorm::UrlError&) {
        continue;  // relative or anchor-only links are not citations
      }
      cit.status = source_set.contains(*cit.resolved) ? Status::grounded : Status::ungrounded;
    }
    out.push_back(std::move(cit));
  }
  return out;
}

CitationSummary summarize(std::span<const Citation> citations) {
  CitationSummary out;
  std::set<urlnorm::CanonicalUrl> ungrounded;
  for (const auto& c : citations) {
    switch (c.status) {
      case Status::grounded: out.cited_canonical_set.insert(*c.resolved); break;
      case Status::ungrounded: ungrounded.insert(*c.resolved); break;
      case Status::hallucinated: ++out.hallucinated_count; break;
    }
  }
  out.grounded_unique = out.cited_canonical_set.size();
  out.ungrounded_unique = ungrounded.size();
  return out;
}

bool misaligned(std::string_view text, std::span<const std::string> sources,
                const Options& opts) {
  if (!sources.empty()) return false;
  auto cites = extract(text, sources, opts);
  bool numbered = std::any_of(cites.begin(), cites.end(),
                              [](const Citation& c) { return c.kind == Kind::numbered; });
  bool inline_cite = std::any_of(cites.begin(), cites.end(),
                                 [](const Citation& c) { return c.kind == Kind::inline_url; });
  return numbered && inline_cite;
}

}  // namespace attrgap::citex
