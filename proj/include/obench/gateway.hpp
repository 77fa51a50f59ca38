#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "obench/errors.hpp"
#include "obench/harness.hpp"
#include "obench/ngram.hpp"

namespace obench {

struct EndpointConfig {
  enum class Kind { local, remote };
  Kind kind = Kind::local;
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model_name = "toy-ngram";
  int max_tokens = 64;
  double temperature = 0.0;
  double timeout_s = 30.0;
  int retries = 2;            // transient-failure retries, capped at 5
  double backoff_base_s = 0.5;
  std::string api_key_env = "OVERRIDE_BENCH_API_KEY";

  void validate() const {
    if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (retries < 0 || retries > 5) throw ConfigError("retries must be in [0,5]");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (kind == Kind::remote && base_url.empty()) {
      throw ConfigError("remote endpoint needs a base_url");
    }
  }
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct GenerationResult {
  std::string text;
  std::optional<TokenUsage> usage;
  double latency_s = 0.0;
  std::optional<double> tokens_per_second;
};

class GatewayError : public Error {
 public:
  enum class Kind { auth_missing, timeout, remote_error, retries_exhausted };

  GatewayError(Kind kind, std::string message, int status = 0)
      : Error(std::move(message)), kind_(kind), status_(status) {}

  Kind kind() const { return kind_; }
  int status() const { return status_; }

  const char* kind_name() const {
    switch (kind_) {
      case Kind::auth_missing: return "AuthMissing";
      case Kind::timeout: return "Timeout";
      case Kind::remote_error: return "RemoteError";
      case Kind::retries_exhausted: return "RetriesExhausted";
    }
    return "GatewayError";
  }

 private:
  Kind kind_;
  int status_;
};

// Uniform text-generation interface so the same harness drives a remote
// chat-completions server and the local toy model.
class Gateway {
 public:
  virtual ~Gateway() = default;
  virtual GenerationResult generate(const PromptInstance& prompt, std::uint64_t seed) = 0;
  virtual std::string name() const = 0;
};

class LocalGateway final : public Gateway {
 public:
  LocalGateway(NGramLM model, EndpointConfig cfg)
      : model_(std::move(model)), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  GenerationResult generate(const PromptInstance& prompt, std::uint64_t seed) override {
    auto started = std::chrono::steady_clock::now();
    const Tokenizer& tok = *model_.tokenizer;
    TokenSeq seq = tok.tokenize(prompt.full_prompt);
    std::vector<std::int32_t> ids;
    if (cfg_.temperature <= 0.0) {
      ids = generate_greedy(model_, seq.ids, cfg_.max_tokens);
    } else {
      std::mt19937_64 rng(seed);
      std::vector<std::int32_t> prefix = seq.ids;
      for (int i = 0; i < cfg_.max_tokens; ++i) {
        std::int32_t t =
            sample_token(model_.next_token_distribution(prefix), cfg_.temperature, rng);
        prefix.push_back(t);
        ids.push_back(t);
      }
    }
    GenerationResult result;
    result.text = tok.join(ids);
    result.latency_s = std::max(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(),
        1e-9);
    result.usage = TokenUsage{static_cast<int>(seq.ids.size()), static_cast<int>(ids.size())};
    result.tokens_per_second = static_cast<double>(ids.size()) / result.latency_s;
    return result;
  }

  std::string name() const override { return cfg_.model_name; }

  const NGramLM& model() const { return model_; }

 private:
  NGramLM model_;
  EndpointConfig cfg_;
};

// Chat-completions-compatible client. The preamble maps to the system role,
// context plus question to one user message. Transient failures (connection
// errors, 408/429/5xx) retry with exponential backoff up to cfg.retries.
class RemoteGateway final : public Gateway {
 public:
  explicit RemoteGateway(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    split_url(cfg_.base_url, origin_, path_prefix_);
  }

  GenerationResult generate(const PromptInstance& prompt, std::uint64_t /*seed*/) override {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw GatewayError(GatewayError::Kind::auth_missing,
                         "credential env var " + cfg_.api_key_env + " is not set");
    }

    nlohmann::json body;
    body["model"] = cfg_.model_name;
    body["max_tokens"] = cfg_.max_tokens;
    body["temperature"] = cfg_.temperature;
    nlohmann::json messages = nlohmann::json::array();
    if (prompt.test_case.preamble && !prompt.test_case.preamble->empty()) {
      messages.push_back({{"role", "system"}, {"content", *prompt.test_case.preamble}});
    }
    messages.push_back(
        {{"role", "user"}, {"content", prompt.context + "\n\n" + prompt.test_case.question}});
    body["messages"] = std::move(messages);
    std::string payload = body.dump();

    auto started = std::chrono::steady_clock::now();
    bool last_was_timeout = false;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        auto delay = std::chrono::duration<double>(cfg_.backoff_base_s *
                                                   static_cast<double>(1 << (attempt - 1)));
        std::this_thread::sleep_for(
            std::chrono::duration_cast<std::chrono::milliseconds>(delay));
      }

      httplib::Client client(origin_);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::duration<double>(cfg_.timeout_s)));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::duration<double>(cfg_.timeout_s)));
      httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};

      auto res = client.Post(path_prefix_ + "/chat/completions", headers, payload,
                             "application/json");
      if (!res) {
        last_was_timeout = res.error() == httplib::Error::ConnectionTimeout ||
                           res.error() == httplib::Error::Read ||
                           res.error() == httplib::Error::Write;
        continue;
      }
      if (res->status == 401 || res->status == 403) {
        throw GatewayError(GatewayError::Kind::auth_missing,
                           "endpoint rejected credentials (HTTP " +
                               std::to_string(res->status) + ")",
                           res->status);
      }
      if (res->status == 429 || res->status == 408 || res->status >= 500) {
        last_was_timeout = false;
        continue;  // transient
      }
      if (res->status != 200) {
        throw GatewayError(GatewayError::Kind::remote_error,
                           "endpoint returned HTTP " + std::to_string(res->status),
                           res->status);
      }
      return parse_response(res->body, started);
    }
    if (last_was_timeout) {
      throw GatewayError(GatewayError::Kind::timeout,
                         "request timed out after " + std::to_string(cfg_.retries + 1) +
                             " attempts");
    }
    throw GatewayError(GatewayError::Kind::retries_exhausted,
                       "transient failures persisted through " +
                           std::to_string(cfg_.retries + 1) + " attempts");
  }

  std::string name() const override { return cfg_.model_name; }

 private:
  static void split_url(const std::string& url, std::string& origin, std::string& path) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      origin = url;
      path.clear();
    } else {
      origin = url.substr(0, path_start);
      path = url.substr(path_start);
      while (!path.empty() && path.back() == '/') path.pop_back();
    }
  }

  GenerationResult parse_response(const std::string& body,
                                  std::chrono::steady_clock::time_point started) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw GatewayError(GatewayError::Kind::remote_error,
                         "unparseable response body: " + std::string(e.what()));
    }
    GenerationResult result;
    try {
      result.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw GatewayError(GatewayError::Kind::remote_error,
                         "response missing choices[0].message.content");
    }
    if (j.contains("usage")) {
      TokenUsage usage;
      usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      usage.completion_tokens = j["usage"].value("completion_tokens", 0);
      result.usage = usage;
    }
    result.latency_s = std::max(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(),
        1e-9);
    if (result.usage && result.usage->completion_tokens > 0) {
      result.tokens_per_second = result.usage->completion_tokens / result.latency_s;
    }
    return result;
  }

  EndpointConfig cfg_;
  std::string origin_;
  std::string path_prefix_;
};

}  // namespace obench
