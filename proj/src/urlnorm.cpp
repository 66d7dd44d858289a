#include "attrgap/urlnorm.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace attrgap::urlnorm {

UrlError::UrlError(std::string raw)
    : std::runtime_error("unparseable URL: \"" + raw + "\""), raw_(std::move(raw)) {}

namespace {

bool is_scheme_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.';
}

bool is_host_char(char c) {
  auto u = static_cast<unsigned char>(c);
  // Non-ASCII bytes are accepted untouched (no IDN folding).
  return std::isalnum(u) || c == '-' || c == '.' || c == '_' || c == '%' || u >= 0x80;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

CanonicalUrl canonicalize(std::string_view raw, Granularity granularity) {
  std::string_view rest = trim(raw);

  if (auto pos = rest.find_first_of("?#"); pos != std::string_view::npos) {
    rest = rest.substr(0, pos);
  }

  // scheme: "xxx://" or a leading "//"
  if (auto pos = rest.find("://"); pos != std::string_view::npos &&
                                   pos > 0 &&
                                   std::all_of(rest.begin(), rest.begin() + pos, is_scheme_char)) {
    rest.remove_prefix(pos + 3);
  } else if (rest.starts_with("//")) {
    rest.remove_prefix(2);
  }

  std::string_view authority = rest;
  std::string_view path;
  if (auto slash = rest.find('/'); slash != std::string_view::npos) {
    authority = rest.substr(0, slash);
    path = rest.substr(slash);
  }

  if (auto at = authority.rfind('@'); at != std::string_view::npos) {
    authority.remove_prefix(at + 1);
  }
  if (auto colon = authority.find(':'); colon != std::string_view::npos) {
    std::string_view port = authority.substr(colon + 1);
    if (!std::all_of(port.begin(), port.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw UrlError(std::string(raw));
    }
    authority = authority.substr(0, colon);
  }
  while (!authority.empty() && authority.back() == '.') authority.remove_suffix(1);

  if (authority.empty() || !std::all_of(authority.begin(), authority.end(), is_host_char) ||
      authority.front() == '.') {
    throw UrlError(std::string(raw));
  }

  CanonicalUrl out;
  out.host.reserve(authority.size());
  for (char c : authority) out.host.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  // Repeated so that rendering and re-canonicalizing is a fixed point.
  while (out.host.starts_with("www.") && out.host.size() > 4 && out.host[4] != '.') {
    out.host.erase(0, 4);
  }

  if (granularity == Granularity::page) {
    while (!path.empty() && path.back() == '/') path.remove_suffix(1);
    if (std::any_of(path.begin(), path.end(),
                    [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
      throw UrlError(std::string(raw));
    }
    out.path = std::string(path);
  }
  return out;
}

UniqueCount unique_count(std::span<const std::string> raws, Granularity granularity) {
  std::set<CanonicalUrl> seen;
  UniqueCount out;
  for (const auto& raw : raws) {
    try {
      seen.insert(canonicalize(raw, granularity));
    } catch (const UrlError&) {
      ++out.unparseable;
    }
  }
  out.unique = seen.size();
  return out;
}

}  // namespace attrgap::urlnorm
