#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scanlearn/backend.hpp"
#include "scanlearn/rng.hpp"

namespace scanlearn {

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// Minimal POST transport so the chat client can run against a recorded
/// fixture as well as a real socket. Throws TransportError when no response
/// arrives at all.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& url, const HttpHeaders& headers, const std::string& body) = 0;
};

/// cpp-httplib client. https URLs need the library built with TLS support.
std::shared_ptr<HttpTransport> make_httplib_transport(std::chrono::seconds timeout = std::chrono::seconds(120));

/// Exponential backoff with multiplicative jitter: attempt i (0-based retry
/// index) waits min(cap, base * 2^i) * (1 - jitter * u) for u in [0, 1).
struct RetryPolicy {
  std::size_t max_attempts = 5;
  std::chrono::milliseconds base{1000};
  std::chrono::milliseconds cap{60000};
  double jitter = 0.25;

  std::chrono::milliseconds delay_for(std::size_t retry_index, double unit) const;
};

struct ChatBackendConfig {
  // Requests go to {base_url}/chat/completions.
  std::string base_url = "https://api.together.xyz/v1";
  std::string model = "deepseek-ai/DeepSeek-V3.1";
  std::string api_key_env = "SCANLEARN_API_KEY";
  double temperature = 0.0;
  RetryPolicy retry;
  std::uint64_t jitter_seed = 0;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Versioned prompt templates. Each names the reply schema it expects.
struct PromptTemplates {
  static constexpr std::string_view kVersion = "v1";
  static std::string system_prompt(std::string_view role);
  static std::string execute(const TaskSample& task, const Playbook& playbook);
  static std::string reflect(const TaskSample& task, const Trajectory& trajectory, const Playbook& playbook);
  static std::string curate(std::span<const Reflection> inputs, const Playbook& playbook);
  static std::string repair(std::string_view problem);
};

// Reply parsers; each throws MalformedReply on schema violations.
Trajectory parse_execute_reply(std::string_view content, const TaskSample& task);
Reflection parse_reflect_reply(std::string_view content, const TaskSample& task);
/// "add" ops get fresh ids from playbook.next_serial(); other ops must name
/// existing entries.
ContextDelta parse_curate_reply(std::string_view content, const Playbook& playbook, std::uint64_t iteration);

/// Live OpenAI-compatible chat backend. One request per call (plus at most
/// one repair request); delays are wall-clock seconds.
class ChatBackend final : public LearnerBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  /// Reads the bearer token from config.api_key_env unless `api_key` is given.
  ChatBackend(ChatBackendConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper = {},
              std::optional<std::string> api_key = std::nullopt);

  Timed<Trajectory> execute(const TaskSample& task, const Playbook& playbook,
                            const CallContext& ctx) override;
  Timed<Reflection> reflect(const TaskSample& task, const Trajectory& trajectory,
                            const Playbook& playbook, const CallContext& ctx) override;
  Timed<ContextDelta> curate(std::span<const Reflection> inputs, const Playbook& playbook,
                             const CallContext& ctx) override;
  bool provides_insight_tags() const noexcept override { return false; }

  nlohmann::json build_request(const std::vector<ChatMessage>& messages) const;
  std::string endpoint() const;

 private:
  /// Sends one chat request with retry; returns choices[0].message.content.
  std::string complete(const std::vector<ChatMessage>& messages);

  /// complete() + parse, with a single repair round trip on MalformedReply.
  template <typename Parse>
  auto complete_parsed(std::vector<ChatMessage> messages, Parse&& parse);

  double next_jitter_unit();

  ChatBackendConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleeper_;
  std::string api_key_;
  std::mutex jitter_mutex_;
  Rng jitter_rng_;
};

}  // namespace scanlearn
