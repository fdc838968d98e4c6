#pragma once

// Sinks that need the network, plus construction of sinks from rule config.

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include "aqmon/http_util.hpp"
#include "aqmon/rules.hpp"

namespace aqmon {

/// POSTs each event as a JSON body.
class WebhookSink final : public AlertSink {
 public:
  WebhookSink(std::string id, const std::string& url,
              std::chrono::milliseconds timeout = std::chrono::milliseconds(2000))
      : id_(std::move(id)), url_(url), timeout_(timeout) {
    auto u = parse_url(url);
    if (!u) throw std::invalid_argument("unsupported webhook url: " + url);
    parsed_ = *u;
  }

  const std::string& id() const override { return id_; }

  SinkResult deliver(const AlertEvent& e) override {
    std::lock_guard lk(mu_);
    auto cli = make_client(parsed_.origin, timeout_);
    auto res = cli->Post(parsed_.path, to_json(e).dump(), "application/json");
    if (!res) return {false, "webhook " + url_ + ": " + httplib::to_string(res.error())};
    if (res->status < 200 || res->status >= 300)
      return {false, "webhook " + url_ + ": HTTP " + std::to_string(res->status)};
    return {};
  }

 private:
  std::string id_;
  std::string url_;
  Url parsed_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
};

/// Relative file-sink paths resolve against `base_dir`.
inline std::unique_ptr<AlertSink> make_sink(const SinkConfig& cfg, const std::filesystem::path& base_dir) {
  if (cfg.type == "file") {
    std::filesystem::path p = cfg.target;
    if (p.is_relative()) p = base_dir / p;
    return std::make_unique<FileSink>(cfg.id, p);
  }
  return std::make_unique<WebhookSink>(cfg.id, cfg.target);
}

}  // namespace aqmon
