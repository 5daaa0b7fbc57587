#pragma once

// Wire clients for the remote services the pipeline depends on: a
// chat-completions endpoint (translation, MC answering, judging) and a
// reference-free quality-estimation scorer.

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmforge/errors.hpp"

namespace vlmforge {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds backoff{200};  // doubled after each failed attempt
};

// Calls fn until it succeeds or the policy is exhausted; rethrows the last
// ServiceError.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto delay = policy.backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const ServiceError&) {
      if (attempt >= policy.attempts) throw;
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string text;
  std::optional<std::string> image_url;  // http(s) URL or data: URL
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  nlohmann::json extra = nlohmann::json::object();  // merged into the body

  nlohmann::json to_json() const;
};

// Returns the content of the first choice's message.
std::string parse_chat_response(const nlohmann::json& body);

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

// POSTs to a full endpoint URL such as http://host:8000/v1/chat/completions.
// A bearer token is read from the named environment variable when set.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(std::string url, std::string api_key_env = "VLMFORGE_API_KEY",
                          std::chrono::seconds timeout = std::chrono::seconds(120));
  std::string complete(const ChatRequest& request) override;

 private:
  std::string url_;
  std::string api_key_env_;
  std::chrono::seconds timeout_;
};

class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string translate(const std::string& text, const std::string& source_language,
                                const std::string& target_language) = 0;
};

// Translation over a chat-completions endpoint. The request carries the
// source text as the user message and the language pair both in the system
// instruction and in a "translation" object in the body.
class ChatTranslator : public Translator {
 public:
  ChatTranslator(ChatClient& client, std::string model) : client_(client), model_(std::move(model)) {}
  std::string translate(const std::string& text, const std::string& source_language,
                        const std::string& target_language) override;

  static ChatRequest make_request(const std::string& model, const std::string& text,
                                  const std::string& source_language,
                                  const std::string& target_language);

 private:
  ChatClient& client_;
  std::string model_;
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  // Quality of `hypothesis` as a translation of `source`; no reference.
  virtual double score(const std::string& source, const std::string& hypothesis) = 0;
};

// POST {"source","hypothesis"} -> {"score": float}.
class HttpScorer : public Scorer {
 public:
  explicit HttpScorer(std::string url, std::string api_key_env = "VLMFORGE_QE_API_KEY");
  double score(const std::string& source, const std::string& hypothesis) override;

 private:
  std::string url_;
  std::string api_key_env_;
};

// URL form of an image reference for a message content block: URLs and
// data: URLs pass through, existing files are inlined as base64, anything
// else is taken to be raw base64 image bytes.
std::string image_content_url(const std::string& image_ref, const std::filesystem::path& base_dir = {});

// POSTs a JSON body to `url` and returns the parsed JSON reply. Connection
// failures raise EndpointUnavailable; non-2xx or non-JSON replies raise
// ServiceError.
nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                         const std::string& bearer_token, std::chrono::seconds timeout);

}  // namespace vlmforge
