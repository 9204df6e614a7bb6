#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "amricl/prompting.hpp"

namespace amricl {

/// Chat-completions-style HTTP backend. Endpoint and credentials come from
/// the environment (LLM_ENDPOINT, LLM_API_KEY, LLM_MODEL), never from config
/// files.
class HttpClient : public LlmClient {
 public:
  HttpClient(std::string endpoint, std::string api_key, std::string model)
      : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), model_(std::move(model)) {
    auto scheme = endpoint_.find("://");
    if (scheme == std::string::npos) throw error("HttpClient: endpoint must include a scheme");
    auto path_at = endpoint_.find('/', scheme + 3);
    base_ = path_at == std::string::npos ? endpoint_ : endpoint_.substr(0, path_at);
    path_ = path_at == std::string::npos ? "/v1/chat/completions" : endpoint_.substr(path_at);
  }

  static HttpClient from_environment() {
    const char* endpoint = std::getenv("LLM_ENDPOINT");
    if (!endpoint || !*endpoint) throw error("HttpClient: LLM_ENDPOINT is not set");
    const char* key = std::getenv("LLM_API_KEY");
    const char* model = std::getenv("LLM_MODEL");
    return HttpClient(endpoint, key ? key : "", model && *model ? model : "gpt-4");
  }

  LlmResponse send(const LlmRequest& request) override {
    nlohmann::json body{{"model", model_},
                        {"messages", nlohmann::json::array({nlohmann::json{
                                         {"role", "user"}, {"content", request.prompt}}})},
                        {"temperature", request.params.temperature},
                        {"top_p", request.params.top_p},
                        {"frequency_penalty", request.params.frequency_penalty},
                        {"presence_penalty", request.params.presence_penalty}};
    httplib::Client client(base_);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    auto elapsed = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - started)
                       .count();
    if (!res) throw error("HttpClient: request to " + base_ + path_ + " failed");
    if (res->status != 200)
      throw error("HttpClient: status " + std::to_string(res->status) + ": " + res->body);
    nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty())
      throw error("HttpClient: malformed completion response");
    const auto& choice = parsed["choices"][0];
    std::string text;
    if (choice.contains("message") && choice["message"].contains("content"))
      text = choice["message"]["content"].get<std::string>();
    else if (choice.contains("text"))
      text = choice["text"].get<std::string>();
    else
      throw error("HttpClient: completion carries no content");
    return {text, elapsed, "http:" + model_};
  }

 private:
  std::string endpoint_, api_key_, model_, base_, path_;
};

}  // namespace amricl
