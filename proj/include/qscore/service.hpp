#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "qscore/model.hpp"
#include "qscore/tokenizer.hpp"

namespace qscore {

/// Read-only scorer shared by `predict` and the HTTP endpoint. A
/// default-constructed service has no model and answers 503.
class ScoringService {
 public:
  ScoringService() = default;
  ScoringService(ModelWeights<float> weights, Vocabulary vocab, std::size_t max_len, std::string fingerprint);

  bool loaded() const { return model_.has_value(); }

  /// {target name: score}, eval mode.
  nlohmann::json score(std::string_view title, std::string_view body) const;

  struct Response {
    int status = 200;
    std::string body;
  };

  /// POST /v1/score: 400 malformed JSON, 422 missing/invalid fields,
  /// 503 no model.
  Response handle_score(std::string_view request_body) const;
  /// GET /v1/health.
  Response handle_health() const;

 private:
  struct Model {
    ModelWeights<float> weights;
    Vocabulary vocab;
    std::size_t max_len;
    std::string fingerprint;
  };
  std::optional<Model> model_;
};

/// Thin wrapper around cpp-httplib routing /v1/score and /v1/health to a
/// ScoringService. The service must outlive the server.
class HttpServer {
 public:
  explicit HttpServer(const ScoringService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace qscore
