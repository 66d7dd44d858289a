#pragma once

#include <cstddef>
#include <compare>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace attrgap::urlnorm {

// Page identity keeps the path; host identity collapses every page of a site.
enum class Granularity { page, host };

struct CanonicalUrl {
  std::string host;  // lowercase, no leading "www."
  std::string path;  // "" or "/..." without trailing slash

  std::string render() const { return host + path; }

  auto operator<=>(const CanonicalUrl&) const = default;
  bool operator==(const CanonicalUrl&) const = default;
};

class UrlError : public std::runtime_error {
 public:
  explicit UrlError(std::string raw);
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// Strips scheme, userinfo, port, query and fragment, lowercases the host,
/// drops a leading "www." and a trailing "/" from the path. Percent escapes
/// are left as-is. Throws UrlError when no host can be recognized.
CanonicalUrl canonicalize(std::string_view raw,
                          Granularity granularity = Granularity::page);

struct UniqueCount {
  std::size_t unique = 0;
  std::size_t unparseable = 0;
};

UniqueCount unique_count(std::span<const std::string> raws,
                         Granularity granularity = Granularity::page);

}  // namespace attrgap::urlnorm
