#pragma once

// Transports that connect simulated stations to a service.

#include <chrono>
#include <memory>
#include <string>

#include "aqmon/http_util.hpp"
#include "aqmon/node_sim.hpp"
#include "aqmon/service.hpp"

namespace aqmon {

/// Calls the service directly, skipping the network.
class ServiceTransport final : public Transport {
 public:
  explicit ServiceTransport(Service& svc) : svc_(svc) {}
  SendOutcome send(const std::string& frame_text, std::int64_t) override {
    auto r = svc_.submit(frame_text);
    return outcome_from_http(r.status, r.body.dump());
  }

 private:
  Service& svc_;
};

/// POSTs frames to a running server's /v1/telemetry.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const std::string& server_url,
                         std::chrono::milliseconds timeout = std::chrono::milliseconds(3000)) {
    auto u = parse_url(server_url);
    if (!u) throw std::invalid_argument("unsupported server url: " + server_url);
    client_ = make_client(u->origin, timeout);
    client_->set_keep_alive(true);
    path_ = (u->path == "/" ? std::string() : u->path) + "/v1/telemetry";
  }

  SendOutcome send(const std::string& frame_text, std::int64_t) override {
    auto res = client_->Post(path_, frame_text, "application/json");
    if (!res) return {SendStatus::Failed, 0, httplib::to_string(res.error())};
    return outcome_from_http(res->status, res->body);
  }

 private:
  std::unique_ptr<httplib::Client> client_;
  std::string path_;
};

}  // namespace aqmon
