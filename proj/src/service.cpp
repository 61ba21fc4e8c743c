#include "qscore/service.hpp"

#include "httplib.h"
#include "qscore/corpus.hpp"

namespace qscore {

ScoringService::ScoringService(ModelWeights<float> weights, Vocabulary vocab, std::size_t max_len,
                               std::string fingerprint)
    : model_(Model{std::move(weights), std::move(vocab), max_len, std::move(fingerprint)}) {
  audit_shapes(model_->weights);
}

nlohmann::json ScoringService::score(std::string_view title, std::string_view body) const {
  const auto input = encode_pair(title, body, model_->vocab, model_->max_len);
  const auto scores = forward(model_->weights, input, ForwardOptions{Mode::kEval, 0});
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t t = 0; t < kNumTargets; ++t) out[std::string(kTargetNames[t])] = static_cast<double>(scores[t]);
  return out;
}

namespace {
ScoringService::Response error_response(int status, const std::string& message) {
  return {status, nlohmann::json{{"error", message}}.dump()};
}
}  // namespace

ScoringService::Response ScoringService::handle_score(std::string_view request_body) const {
  if (!loaded()) return error_response(503, "weights not loaded");
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(request_body);
  } catch (const nlohmann::json::exception&) {
    return error_response(400, "request body is not valid JSON");
  }
  if (!req.is_object()) return error_response(400, "request body must be a JSON object");
  for (const char* field : {"title", "body"}) {
    if (!req.contains(field)) return error_response(422, std::string("missing field '") + field + "'");
    if (!req.at(field).is_string()) return error_response(422, std::string("field '") + field + "' must be a string");
  }
  const nlohmann::json resp{{"scores", score(req.at("title").get<std::string>(), req.at("body").get<std::string>())},
                            {"model", model_->fingerprint}};
  return {200, resp.dump()};
}

ScoringService::Response ScoringService::handle_health() const {
  return {200, nlohmann::json{{"status", "ok"}, {"model_loaded", loaded()}}.dump()};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const ScoringService& service) : impl_(std::make_unique<Impl>()) {
  auto reply = [](httplib::Response& res, const ScoringService::Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  impl_->server.Post("/v1/score", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.handle_score(req.body));
  });
  impl_->server.Get("/v1/health", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.handle_health());
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace qscore
