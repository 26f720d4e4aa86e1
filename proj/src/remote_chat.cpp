#include <cstdlib>
#include <regex>

#include <fmt/format.h>

#include "walle/errors.hpp"
#include "walle/llm.hpp"
// after Eigen: resolv.h defines _res, which Eigen uses as an identifier
#include "httplib.h"

namespace walle {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw PreconditionError("invalid base_url '" + url + "'");
  SplitUrl out{m[1].str(), m[2].matched ? m[2].str() : std::string{}};
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

}  // namespace

RemoteChat::RemoteChat(RemoteChatConfig config) : config_(std::move(config)) { split_url(config_.base_url); }

json RemoteChat::request_body(const RemoteChatConfig& config, const Transcript& transcript) {
  json messages = json::array();
  for (const auto& m : transcript.messages()) {
    messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  }
  return {{"model", config.model_id}, {"temperature", config.temperature}, {"messages", std::move(messages)}};
}

ChatMessage RemoteChat::parse_response(std::string_view body) {
  try {
    const auto doc = json::parse(body);
    const auto& msg = doc.at("choices").at(0).at("message");
    ChatMessage out{Role::assistant, msg.at("content").get<std::string>()};
    if (msg.contains("role") && msg["role"] != "assistant") {
      throw BackendError("response message role is not assistant");
    }
    if (out.content.empty()) throw BackendError("response message content is empty");
    return out;
  } catch (const json::exception& ex) {
    throw BackendError(std::string("malformed chat-completions response: ") + ex.what());
  }
}

ChatMessage RemoteChat::complete(const Transcript& transcript) const {
  require_valid_transcript(transcript);
  const auto url = split_url(config_.base_url);

  httplib::Client client(url.origin);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const std::string body = request_body(config_, transcript).dump();
  const std::string path = url.path + "/chat/completions";

  std::string last_error;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status != 200) throw BackendError(fmt::format("HTTP {}: {}", res->status, res->body));
    return parse_response(res->body);
  }
  throw BackendError("chat backend unavailable: " + last_error);
}

}  // namespace walle
