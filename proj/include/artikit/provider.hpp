#pragma once

#include <memory>
#include <string>
#include <vector>

#include "artikit/graph.hpp"

namespace artikit {

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string content;
};

struct ProviderCapabilities {
  bool accepts_text = true;
  bool accepts_image = false;
};

// Backend that completes a chat transcript with one assistant message.
// Two implementations ship: a file-based mock for tests and a generic HTTP
// chat-completion client for live use.
class StructurePriorProvider {
 public:
  virtual ~StructurePriorProvider() = default;
  virtual ProviderCapabilities capabilities() const = 0;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

// Replays responses recorded in a JSON file:
//   {"capabilities": {"text": true, "image": false},
//    "responses": ["step 1 reply", "step 2 reply", "step 3 reply"]}
// The reply index is derived from the transcript length, so repeated
// inference runs are stateless and deterministic.
class MockProvider : public StructurePriorProvider {
 public:
  explicit MockProvider(const std::string& fixture_path);
  ProviderCapabilities capabilities() const override { return caps_; }
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  ProviderCapabilities caps_;
  std::vector<std::string> responses_;
};

struct HttpProviderConfig {
  std::string endpoint_url;  // e.g. http://host:port/v1/chat/completions
  std::string model;
  std::string token_env = "ARTIKIT_VLM_TOKEN";
  int timeout_seconds = 30;
  int max_retries = 2;  // retries after the first attempt
  bool accepts_image = false;
};

// Minimal chat-completion client: POSTs {model, messages} with a bearer
// token from the configured environment variable and reads
// choices[0].message.content. Transport failures and 5xx are retried up to
// max_retries, then raised as provider errors; malformed envelopes raise a
// provider error carrying the payload.
class HttpProvider : public StructurePriorProvider {
 public:
  explicit HttpProvider(HttpProviderConfig config);
  ProviderCapabilities capabilities() const override;
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  HttpProviderConfig config_;
};

// The three staged prompt templates (part census, interaction inference,
// graph emission). {{CONDITION}} in step1 is replaced with the condition.
struct PromptSet {
  std::string step1;
  std::string step2;
  std::string step3;
};

// Loads cot_step1.txt / cot_step2.txt / cot_step3.txt from a directory.
PromptSet load_prompt_set(const std::string& dir);

struct ConditionInput {
  enum class Kind { Text, ImagePath } kind = Kind::Text;
  std::string value;
};

// Runs the three-step protocol against the provider and parses the final
// reply as a structure-response payload. The provider must accept the
// condition's modality (parameter error otherwise); the step-3 reply must
// be strict schema JSON (parse error otherwise, carrying the payload).
ConnectivityGraph infer_structure(StructurePriorProvider& provider,
                                  const ConditionInput& condition,
                                  const PromptSet& prompts);

}  // namespace artikit
