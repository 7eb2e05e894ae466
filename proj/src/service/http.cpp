#include "xai/service/http.hpp"

#include "xai/error.hpp"

#include <httplib.h>

namespace xai::service {
namespace {

constexpr const char* kJson = "application/json";

struct HttpError {
  int status;
  std::string kind;
  std::string message;
};

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, {{"v", kApiVersion}, {"error", {{"kind", kind}, {"message", message}}}});
}

bool same_key(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

nlohmann::json parse_body(const httplib::Request& req) {
  nlohmann::json body;
  try {
    body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw HttpError{400, "format", std::string("request body is not JSON: ") + e.what()};
  }
  if (!body.is_object()) throw HttpError{400, "format", "request body must be a JSON object"};
  if (body.contains("v") && body.at("v") != kApiVersion) {
    throw HttpError{400, "version", "unsupported request version " + body.at("v").dump()};
  }
  return body;
}

// Maps the library's exception types onto HTTP statuses.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const HttpError& e) {
      send_error(res, e.status, e.kind, e.message);
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const VersionError& e) {
      send_error(res, 400, "version", e.what());
    } catch (const FormatError& e) {
      send_error(res, 400, "format", e.what());
    } catch (const DataError& e) {
      send_error(res, 400, "data", e.what());
    } catch (const ProtocolError& e) {
      send_error(res, 403, "protocol", e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "format", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

HttpServer::HttpServer(StudyService& service, HttpConfig config)
    : service_(service), config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  const int threads = std::max(1, config_.threads);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  s.set_payload_max_length(1 << 20);

  auto admin = [this](const httplib::Request& req) {
    if (config_.admin_key.empty()) throw HttpError{403, "forbidden", "admin endpoints are disabled: no admin key configured"};
    if (!req.has_header("X-Admin-Key")) throw HttpError{401, "unauthorized", "missing X-Admin-Key header"};
    if (!same_key(req.get_header_value("X-Admin-Key"), config_.admin_key)) {
      throw HttpError{403, "forbidden", "invalid admin key"};
    }
  };

  s.Post("/studies", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
    admin(req);
    const auto request = StudyRequest::from_json(parse_body(req));
    send_json(res, 201, service_.create_study(request));
  }));

  s.Get("/studies", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
    admin(req);
    send_json(res, 200, {{"v", kApiVersion}, {"studies", service_.study_ids()}});
  }));

  s.Get(R"(/studies/([A-Za-z0-9_-]+))", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
    admin(req);
    send_json(res, 200, service_.study_status(req.matches[1]));
  }));

  s.Post(R"(/studies/([A-Za-z0-9_-]+)/participants)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const Assignment a = service_.assign_participant(req.matches[1]);
           send_json(res, 201, {{"v", kApiVersion}, {"token", a.token}, {"participant", a.participant}, {"condition", a.condition}});
         }));

  s.Get(R"(/participants/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, service_.participant_status(req.matches[1]));
  }));

  s.Get(R"(/participants/([A-Za-z0-9_-]+)/next-trial)",
        guarded([this](const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, service_.next_trial(req.matches[1]));
        }));

  s.Post(R"(/participants/([A-Za-z0-9_-]+)/responses)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto body = parse_body(req);
           if (!body.contains("trial_id") || !body.contains("choice") || !body.contains("rt_ms")) {
             throw HttpError{400, "data", "response needs trial_id, choice and rt_ms"};
           }
           if (!body.at("choice").is_number_integer() || !body.at("rt_ms").is_number()) {
             throw HttpError{400, "data", "choice must be an integer and rt_ms a number"};
           }
           const auto result = service_.submit_response(req.matches[1], body.at("trial_id").get<std::string>(),
                                                        body.at("choice").get<Index>(), body.at("rt_ms").get<double>());
           if (result.duplicate) {
             send_json(res, 409,
                       {{"v", kApiVersion},
                        {"error", {{"kind", "duplicate"}, {"message", "response already recorded"}}},
                        {"ack", result.ack}});
           } else {
             send_json(res, 200, result.ack);
           }
         }));

  s.Get(R"(/studies/([A-Za-z0-9_-]+)/export)", guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
    admin(req);
    const std::string format = req.has_param("format") ? req.get_param_value("format") : "csv";
    const std::string body = service_.export_study(req.matches[1], format);
    res.status = 200;
    res.set_content(body, format == "csv" ? "text/csv" : "application/x-ndjson");
  }));

  s.Get(R"(/studies/([A-Za-z0-9_-]+)/analysis)",
        guarded([this, admin](const httplib::Request& req, httplib::Response& res) {
          admin(req);
          const Aggregator agg =
              parse_aggregator(req.has_param("aggregator") ? req.get_param_value("aggregator") : "mean");
          send_json(res, 200, service_.analyze(req.matches[1], agg).to_json());
        }));

  s.Get(R"(/assets/.+)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto png = service_.asset(req.path);
    if (!png) throw NotFoundError("no asset at " + req.path);
    res.status = 200;
    res.set_content(*png, "image/png");
  }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind_to_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool HttpServer::bind(const std::string& host, int port) { return server_->bind_to_port(host, port); }
bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }
void HttpServer::stop() {
  if (server_->is_running()) server_->stop();
}
void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace xai::service
