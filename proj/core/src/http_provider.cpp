#include <fmt/format.h>
#include <httplib.h>

#include <cstdlib>

#include "http_util.hpp"
#include "webedit/digest.hpp"
#include "webedit/llm_gateway.hpp"

namespace webedit {

using detail::split_url;
using detail::ParsedUrl;

std::string HttpProvider::encode_request(const ProviderConfig& config, const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    if (m.images.empty()) {
      messages.push_back({{"role", m.author}, {"content", m.text}});
      continue;
    }
    json parts = json::array();
    parts.push_back({{"type", "text"}, {"text", m.text}});
    for (const auto& img : m.images) {
      parts.push_back({{"type", "image_url"},
                       {"image_url", {{"url", fmt::format("data:{};base64,{}", img.media_type,
                                                          base64_encode(img.bytes))}}}});
    }
    messages.push_back({{"role", m.author}, {"content", std::move(parts)}});
  }
  json body = {{"model", config.model_name}, {"temperature", config.temperature}, {"messages", std::move(messages)}};
  return body.dump();
}

ChatResponse HttpProvider::decode_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(fmt::format("provider reply is not JSON: {}", e.what()));
  }
  const json* content = nullptr;
  if (j.is_object() && j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const json& choice = j["choices"][0];
    if (choice.contains("message") && choice["message"].contains("content")) content = &choice["message"]["content"];
  }
  if (content == nullptr || !content->is_string()) {
    throw ProtocolError("provider reply lacks choices[0].message.content");
  }
  ChatResponse out;
  out.text = content->get<std::string>();
  if (j.contains("usage") && j["usage"].is_object()) {
    out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
    out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
  }
  return out;
}

ProviderReply HttpProvider::send(const ProviderConfig& config, const ChatRequest& request) {
  const ParsedUrl url = split_url(config.endpoint);
  httplib::Client client(url.origin);
  const auto timeout_us = static_cast<long long>(config.timeout_s * 1e6);
  client.set_connection_timeout(std::chrono::microseconds(std::min<long long>(timeout_us, 10'000'000)));
  client.set_read_timeout(std::chrono::microseconds(timeout_us));
  client.set_write_timeout(std::chrono::microseconds(timeout_us));
  httplib::Headers headers;
  if (!config.api_key_env.empty()) {
    if (const char* key = std::getenv(config.api_key_env.c_str())) {
      headers.emplace("Authorization", fmt::format("Bearer {}", key));
    }
  }
  auto res = client.Post(url.path, headers, encode_request(config, request), "application/json");
  if (!res) return {kStatusTransportError, {}, {}, httplib::to_string(res.error())};
  if (res->status != 200) return {res->status, res->body, {}, fmt::format("HTTP {}", res->status)};
  try {
    ChatResponse decoded = decode_response(res->body);
    return {200, std::move(decoded.text), decoded.usage, {}};
  } catch (const ProtocolError& e) {
    return {kStatusProtocolError, res->body, {}, e.what()};
  }
}

}  // namespace webedit
