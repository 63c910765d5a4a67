#include "artikit/provider.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace artikit {

using nlohmann::json;

MockProvider::MockProvider(const std::string& fixture_path) {
  std::ifstream in(fixture_path);
  if (!in) throw IoError("cannot open provider fixture '" + fixture_path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("provider fixture '" + fixture_path + "': " + e.what());
  }
  if (!doc.is_object() || !doc.contains("responses") || !doc["responses"].is_array() ||
      doc["responses"].empty())
    throw ParseError("provider fixture '" + fixture_path +
                     "' needs a nonempty responses array");
  for (const auto& r : doc["responses"]) {
    if (!r.is_string())
      throw ParseError("provider fixture responses must be strings");
    responses_.push_back(r.get<std::string>());
  }
  if (doc.contains("capabilities")) {
    const auto& caps = doc["capabilities"];
    caps_.accepts_text = caps.value("text", true);
    caps_.accepts_image = caps.value("image", false);
  }
}

std::string MockProvider::complete(const std::vector<ChatMessage>& messages) {
  if (messages.empty() || messages.back().role != "user")
    throw ProviderError("mock provider expects a transcript ending in a user turn");
  // Transcript grows user / assistant / user / ...; the pending step index
  // is the number of assistant turns so far.
  std::size_t step = messages.size() / 2;
  if (step >= responses_.size()) step = responses_.size() - 1;
  return responses_[step];
}

// ---- HTTP client ------------------------------------------------------------

namespace {

struct ParsedUrl {
  bool https = false;
  std::string host;
  int port = 80;
  std::string path = "/";
};

ParsedUrl parse_url(const std::string& url) {
  ParsedUrl out;
  std::string rest;
  if (url.rfind("https://", 0) == 0) {
    out.https = true;
    out.port = 443;
    rest = url.substr(8);
  } else if (url.rfind("http://", 0) == 0) {
    rest = url.substr(7);
  } else {
    throw ParameterError("provider endpoint must start with http:// or https://: '" +
                         url + "'");
  }
  std::size_t slash = rest.find('/');
  std::string authority = rest.substr(0, slash);
  if (slash != std::string::npos) out.path = rest.substr(slash);
  std::size_t colon = authority.find(':');
  if (colon != std::string::npos) {
    out.host = authority.substr(0, colon);
    out.port = std::stoi(authority.substr(colon + 1));
  } else {
    out.host = authority;
  }
  if (out.host.empty())
    throw ParameterError("provider endpoint '" + url + "' has no host");
  return out;
}

}  // namespace

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
  parse_url(config_.endpoint_url);  // fail fast on malformed endpoints
}

ProviderCapabilities HttpProvider::capabilities() const {
  return {true, config_.accepts_image};
}

std::string HttpProvider::complete(const std::vector<ChatMessage>& messages) {
  const char* token = std::getenv(config_.token_env.c_str());
  if (!token || !*token)
    throw ProviderError("environment variable " + config_.token_env +
                        " is not set; cannot authenticate");

  json body;
  body["model"] = config_.model;
  body["messages"] = json::array();
  for (const auto& m : messages)
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  const std::string payload = body.dump();

  ParsedUrl url = parse_url(config_.endpoint_url);
  httplib::Headers headers = {{"Authorization", std::string("Bearer ") + token}};

  std::string last_failure;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    httplib::Result res;
    if (url.https) {
      httplib::SSLClient client(url.host, url.port);
      client.set_connection_timeout(config_.timeout_seconds);
      client.set_read_timeout(config_.timeout_seconds);
      res = client.Post(url.path, headers, payload, "application/json");
    } else {
      httplib::Client client(url.host, url.port);
      client.set_connection_timeout(config_.timeout_seconds);
      client.set_read_timeout(config_.timeout_seconds);
      res = client.Post(url.path, headers, payload, "application/json");
    }

    if (!res) {
      last_failure = "transport failure: " + httplib::to_string(res.error());
      continue;  // retriable
    }
    if (res->status >= 500) {
      last_failure = "server returned status " + std::to_string(res->status);
      continue;  // retriable
    }
    if (res->status != 200)
      throw ProviderError("provider request failed with status " +
                          std::to_string(res->status) + ": " + res->body);

    json doc;
    try {
      doc = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProviderError(std::string("provider returned a non-JSON envelope (") +
                          e.what() + "); payload: " + res->body);
    }
    try {
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw ProviderError("provider envelope missing choices[0].message.content; payload: " +
                          res->body);
    }
  }
  throw ProviderError("provider unreachable after " +
                      std::to_string(config_.max_retries + 1) + " attempts (" +
                      last_failure + ")");
}

// ---- prompts and protocol -----------------------------------------------------

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open prompt file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string substitute(std::string text, const std::string& key,
                       const std::string& value) {
  const std::string tag = "{{" + key + "}}";
  for (std::size_t at = text.find(tag); at != std::string::npos;
       at = text.find(tag, at + value.size()))
    text.replace(at, tag.size(), value);
  return text;
}

}  // namespace

PromptSet load_prompt_set(const std::string& dir) {
  PromptSet set;
  set.step1 = read_text_file(dir + "/cot_step1.txt");
  set.step2 = read_text_file(dir + "/cot_step2.txt");
  set.step3 = read_text_file(dir + "/cot_step3.txt");
  return set;
}

ConnectivityGraph infer_structure(StructurePriorProvider& provider,
                                  const ConditionInput& condition,
                                  const PromptSet& prompts) {
  ProviderCapabilities caps = provider.capabilities();
  if (condition.kind == ConditionInput::Kind::Text && !caps.accepts_text)
    throw ParameterError("provider does not accept text conditions");
  if (condition.kind == ConditionInput::Kind::ImagePath && !caps.accepts_image)
    throw ParameterError("provider does not accept image conditions");

  std::string rendered = condition.kind == ConditionInput::Kind::Text
                             ? condition.value
                             : "image file: " + condition.value;

  std::vector<ChatMessage> transcript;
  transcript.push_back({"user", substitute(prompts.step1, "CONDITION", rendered)});
  transcript.push_back({"assistant", provider.complete(transcript)});
  transcript.push_back({"user", prompts.step2});
  transcript.push_back({"assistant", provider.complete(transcript)});
  transcript.push_back({"user", prompts.step3});
  std::string payload = provider.complete(transcript);

  // Trim whitespace only; anything else must already be strict schema JSON.
  std::size_t begin = payload.find_first_not_of(" \t\r\n");
  std::size_t end = payload.find_last_not_of(" \t\r\n");
  if (begin == std::string::npos)
    throw ParseError("structure response is empty");
  return parse_structure_response(payload.substr(begin, end - begin + 1));
}

}  // namespace artikit
