#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "httplib.h"

namespace aqmon {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // at least "/"
};

/// Splits "http://host:port/path" into origin and path. Only http is
/// supported; nullopt for anything else.
inline std::optional<Url> parse_url(std::string_view url) {
  constexpr std::string_view scheme = "http://";
  if (url.substr(0, scheme.size()) != scheme) return std::nullopt;
  const auto slash = url.find('/', scheme.size());
  Url u;
  u.origin = std::string(url.substr(0, slash));
  u.path = slash == std::string_view::npos ? "/" : std::string(url.substr(slash));
  if (u.origin.size() == scheme.size()) return std::nullopt;
  return u;
}

inline std::unique_ptr<httplib::Client> make_client(const std::string& origin,
                                                    std::chrono::milliseconds timeout) {
  auto cli = std::make_unique<httplib::Client>(origin);
  cli->set_connection_timeout(timeout);
  cli->set_read_timeout(timeout);
  cli->set_write_timeout(timeout);
  cli->set_tcp_nodelay(true);
  return cli;
}

}  // namespace aqmon
