#pragma once

// HTTP front for Service.
//
//   POST /v1/telemetry                      -> 202 | 401 | 404 | 409 | 422 | 500
//   GET  /v1/stations
//   GET  /v1/stations/{id}/latest
//   GET  /v1/stations/{id}/history?from=&to=
//   GET  /v1/stations/{id}/icca[?window=<s>&at=<ts>]
//   GET  /v1/overview

#include <chrono>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "httplib.h"

#include "aqmon/service.hpp"

namespace aqmon {

/// One JSON line per request.
class RequestLog {
 public:
  RequestLog() = default;
  explicit RequestLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
    if (!out_) throw ConfigError("cannot open request log " + path.string());
  }

  void write(const httplib::Request& req, int status) {
    if (!out_.is_open()) return;
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    ojson j{{"time_ms", now},   {"remote", req.remote_addr}, {"method", req.method},
            {"path", req.path}, {"status", status}};
    std::lock_guard lk(mu_);
    out_ << j.dump() << '\n';
    out_.flush();
  }

  void flush() {
    std::lock_guard lk(mu_);
    if (out_.is_open()) out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

inline std::optional<std::int64_t> parse_int(const std::string& s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

class HttpServer {
 public:
  explicit HttpServer(Service& svc) : svc_(svc) {
    if (svc_.config().request_log) log_ = std::make_unique<RequestLog>(*svc_.config().request_log);
    else log_ = std::make_unique<RequestLog>();
    routes();
  }

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Blocks until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  /// Binds an ephemeral port; call listen_after_bind() to serve.
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }

  void wait_until_ready() { server_.wait_until_ready(); }
  void stop() {
    server_.stop();
    log_->flush();
  }

 private:
  static void reply(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  static std::optional<std::int64_t> int_param(const httplib::Request& req, const char* key, bool& bad) {
    if (!req.has_param(key)) return std::nullopt;
    auto v = parse_int(req.get_param_value(key));
    if (!v) bad = true;
    return v;
  }

  void routes() {
    server_.set_tcp_nodelay(true);
    server_.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
      log_->write(req, res.status);
    });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      res.status = 500;
      res.set_content(ojson{{"error", "Internal"}, {"detail", what}}.dump(), "application/json");
    });

    server_.Post("/v1/telemetry", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, svc_.submit(req.body));
    });
    server_.Get("/v1/stations", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, svc_.stations());
    });
    server_.Get("/v1/overview", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, svc_.overview());
    });
    server_.Get(R"(/v1/stations/([^/]+)/latest)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, svc_.latest(req.matches[1]));
    });
    server_.Get(R"(/v1/stations/([^/]+)/history)", [this](const httplib::Request& req, httplib::Response& res) {
      bool bad = false;
      auto from = int_param(req, "from", bad);
      auto to = int_param(req, "to", bad);
      if (bad) return reply(res, {400, ojson{{"error", "InvalidRange"}, {"detail", "from/to must be integers"}}});
      reply(res, svc_.history(req.matches[1], from.value_or(std::numeric_limits<std::int64_t>::min()),
                              to.value_or(std::numeric_limits<std::int64_t>::max())));
    });
    server_.Get(R"(/v1/stations/([^/]+)/icca)", [this](const httplib::Request& req, httplib::Response& res) {
      bool bad = false;
      auto window = int_param(req, "window", bad);
      auto at = int_param(req, "at", bad);
      if (bad) return reply(res, {400, ojson{{"error", "InvalidWindow"}}});
      reply(res, svc_.icca(req.matches[1], window, at));
    });
  }

  Service& svc_;
  httplib::Server server_;
  std::unique_ptr<RequestLog> log_;
};

}  // namespace aqmon
