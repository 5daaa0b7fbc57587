#include "vlmforge/client.hpp"

#include <cstdlib>

#include <httplib.h>

#include "vlmforge/digest.hpp"
#include "vlmforge/io.hpp"

namespace vlmforge {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? v : "";
}

std::string mime_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "image/jpeg";
}

}  // namespace

json ChatRequest::to_json() const {
  json msgs = json::array();
  for (const auto& m : messages) {
    if (m.image_url) {
      msgs.push_back({{"role", m.role},
                      {"content", json::array({json{{"type", "text"}, {"text", m.text}},
                                               json{{"type", "image_url"},
                                                    {"image_url", {{"url", *m.image_url}}}}})}});
    } else {
      msgs.push_back({{"role", m.role}, {"content", m.text}});
    }
  }
  json body{{"model", model}, {"messages", std::move(msgs)}, {"temperature", temperature}};
  for (const auto& [k, v] : extra.items()) body[k] = v;
  return body;
}

std::string parse_chat_response(const json& body) {
  try {
    const json& content = body.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
      std::string out;
      for (const auto& part : content) {
        if (part.value("type", "") == "text") out += part.value("text", "");
      }
      return out;
    }
  } catch (const json::exception&) {
  }
  throw ServiceError("chat response has no choices[0].message.content");
}

json post_json(const std::string& url, const json& body, const std::string& bearer_token,
               std::chrono::seconds timeout) {
  const auto [origin, path] = split_url(url);
  httplib::Client cli(origin);
  cli.set_connection_timeout(std::chrono::seconds(10));
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
  auto res = cli.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw EndpointUnavailable(url + ": " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ServiceError(url + ": HTTP " + std::to_string(res->status));
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw ServiceError(url + ": response is not JSON: " + e.what());
  }
}

HttpChatClient::HttpChatClient(std::string url, std::string api_key_env, std::chrono::seconds timeout)
    : url_(std::move(url)), api_key_env_(std::move(api_key_env)), timeout_(timeout) {}

std::string HttpChatClient::complete(const ChatRequest& request) {
  return parse_chat_response(post_json(url_, request.to_json(), env_or_empty(api_key_env_), timeout_));
}

ChatRequest ChatTranslator::make_request(const std::string& model, const std::string& text,
                                         const std::string& source_language,
                                         const std::string& target_language) {
  ChatRequest req;
  req.model = model;
  req.messages.push_back(
      {"system",
       "Translate the user's text from " + source_language + " to " + target_language +
           ". Reply with the translation only. Keep the literal token <image> unchanged and in place.",
       std::nullopt});
  req.messages.push_back({"user", text, std::nullopt});
  req.extra["translation"] = {
      {"source_language", source_language}, {"target_language", target_language}, {"text", text}};
  return req;
}

std::string ChatTranslator::translate(const std::string& text, const std::string& source_language,
                                      const std::string& target_language) {
  return client_.complete(make_request(model_, text, source_language, target_language));
}

HttpScorer::HttpScorer(std::string url, std::string api_key_env)
    : url_(std::move(url)), api_key_env_(std::move(api_key_env)) {}

double HttpScorer::score(const std::string& source, const std::string& hypothesis) {
  const json reply = post_json(url_, json{{"source", source}, {"hypothesis", hypothesis}},
                               env_or_empty(api_key_env_), std::chrono::seconds(60));
  auto it = reply.find("score");
  if (it == reply.end() || !it->is_number()) throw ServiceError(url_ + ": reply has no numeric score");
  return it->get<double>();
}

std::string image_content_url(const std::string& image_ref, const std::filesystem::path& base_dir) {
  if (image_ref.rfind("http://", 0) == 0 || image_ref.rfind("https://", 0) == 0 ||
      image_ref.rfind("data:", 0) == 0) {
    return image_ref;
  }
  std::filesystem::path p(image_ref);
  if (!p.is_absolute() && !base_dir.empty()) p = base_dir / p;
  std::error_code ec;
  if (image_ref.size() < 4096 && std::filesystem::is_regular_file(p, ec)) {
    return "data:" + mime_for(p) + ";base64," + base64_encode(read_file(p));
  }
  return "data:image/jpeg;base64," + image_ref;
}

}  // namespace vlmforge
