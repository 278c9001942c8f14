// JSON-over-HTTP consultation API:
//   POST /api/sessions                {explicit: [[symptom, "POS"|"NEG"], ...]}
//   POST /api/sessions/{id}/answer    {attribute: "POS"|"NEG"|"UNK", turn?: int}
//   GET  /api/sessions/{id}
//   GET  /api/vocab
//   GET  /api/health

#pragma once

#include <string>

#include <httplib.h>

#include "dxformer/corpus.hpp"
#include "dxformer/error.hpp"
#include "dxformer/session.hpp"

namespace dxformer {

inline constexpr const char* kVersion = "0.1.0";

struct ServiceInfo {
  std::string checkpoint_hash;
  std::uint64_t vocab_hash = 0;
  std::string cors_origin;
};

inline int http_status(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::not_found: return 404;
    case ErrorCategory::state: return 409;
    case ErrorCategory::capacity: return 429;
    case ErrorCategory::parse:
    case ErrorCategory::vocabulary:
    case ErrorCategory::invariant:
    case ErrorCategory::config: return 400;
    default: return 500;
  }
}

inline void install_routes(httplib::Server& server, SessionManager& sessions, ServiceInfo info) {
  auto send_json = [cors = info.cors_origin](httplib::Response& res, int status, const json& body) {
    res.status = status;
    if (!cors.empty()) res.set_header("Access-Control-Allow-Origin", cors);
    res.set_content(body.dump(), "application/json");
  };
  auto guarded = [send_json](auto handler) {
    return [send_json, handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const Error& e) {
        send_json(res, http_status(e.category()),
                  json{{"error", std::string(category_name(e.category()))}, {"message", e.what()}});
      } catch (const json::exception& e) {
        send_json(res, 400, json{{"error", "parse-error"}, {"message", e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, json{{"error", "internal"}, {"message", e.what()}});
      }
    };
  };
  auto parse_body = [](const httplib::Request& req) {
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCategory::parse, std::string("request body: ") + e.what());
    }
  };

  server.Post("/api/sessions", guarded([&sessions, send_json, parse_body](const httplib::Request& req,
                                                                          httplib::Response& res) {
                const auto body = parse_body(req);
                if (!body.is_object() || !body.contains("explicit"))
                  throw Error(ErrorCategory::parse, "body must be an object with 'explicit'");
                auto session = sessions.create(sessions.parse_explicit(body.at("explicit")));
                send_json(res, 200, sessions.response(*session));
              }));

  server.Post(R"(/api/sessions/([0-9a-f]+)/answer)",
              guarded([&sessions, send_json, parse_body](const httplib::Request& req, httplib::Response& res) {
                auto session = sessions.find(req.matches[1]);
                const auto body = parse_body(req);
                if (!body.is_object() || !body.contains("attribute") || !body.at("attribute").is_string())
                  throw Error(ErrorCategory::parse, "body must be an object with a string 'attribute'");
                const auto attr = parse_attribute(body.at("attribute").get<std::string>());
                if (!attr) throw Error(ErrorCategory::parse, "attribute must be POS, NEG or UNK");
                std::optional<std::size_t> turn;
                if (body.contains("turn")) turn = body.at("turn").get<std::size_t>();
                sessions.answer(*session, *attr, turn);
                send_json(res, 200, sessions.response(*session));
              }));

  server.Get(R"(/api/sessions/([0-9a-f]+))",
             guarded([&sessions, send_json](const httplib::Request& req, httplib::Response& res) {
               auto session = sessions.find(req.matches[1]);
               send_json(res, 200, sessions.snapshot(*session));
             }));

  server.Get("/api/vocab", guarded([&sessions, send_json](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, sessions.vocab().to_json());
             }));

  server.Get("/api/health", guarded([&sessions, send_json, info](const httplib::Request&, httplib::Response& res) {
               std::ostringstream vh;
               vh << std::hex << info.vocab_hash;
               send_json(res, 200,
                         json{{"status", "ok"},
                              {"version", kVersion},
                              {"checkpoint_hash", info.checkpoint_hash},
                              {"vocab_hash", vh.str()},
                              {"epsilon", sessions.settings().epsilon},
                              {"max_turns", sessions.settings().max_turns},
                              {"sessions", sessions.size()}});
             }));

  if (!info.cors_origin.empty()) {
    server.Options(R"(/api/.*)", [origin = info.cors_origin](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
  }
}

}  // namespace dxformer
