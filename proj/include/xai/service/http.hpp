#pragma once

#include "xai/service/service.hpp"

#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace xai::service {

struct HttpConfig {
  /// Required in X-Admin-Key for study creation, status, export and analysis.
  /// Admin endpoints answer 403 while it is empty.
  std::string admin_key;
  int threads = 8;
};

/// JSON API over a StudyService:
///
///   POST /studies                                 admin   create a study
///   GET  /studies, /studies/{id}                  admin   list, status
///   POST /studies/{id}/participants                       assign -> {token, condition}
///   GET  /participants/{token}                            phase, progress, completion code
///   GET  /participants/{token}/next-trial                 trial payload
///   POST /participants/{token}/responses                  {trial_id, choice, rt_ms} -> ack
///   GET  /studies/{id}/export?format=csv|jsonl    admin
///   GET  /studies/{id}/analysis?aggregator=mean   admin
///   GET  /assets/...                                      PNG images and overlays
///
/// Errors are {"v", "error": {"kind", "message"}} with 400 (bad input), 401/403
/// (admin key), 404, 409 (conflict, duplicate, full) or 500.
class HttpServer {
 public:
  HttpServer(StudyService& service, HttpConfig config);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Returns the bound port, or -1.
  int bind_to_any_port(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Blocks until stop().
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  StudyService& service_;
  HttpConfig config_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace xai::service
