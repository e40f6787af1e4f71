#include "scanlearn/chat_backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "scanlearn/errors.hpp"

namespace scanlearn {

using json = nlohmann::json;

namespace {

constexpr std::string_view kExecuteSchema =
    R"({"steps": ["<action or observation>", ...], "outcome": "success" | "failure"})";
constexpr std::string_view kReflectSchema =
    R"({"items": [{"text": "<one concrete lesson>", "polarity": "helpful" | "harmful", "entry_id": "<optional existing id>"}, ...]})";
constexpr std::string_view kCurateSchema =
    R"({"ops": [{"op": "add", "section": "strategies|formulas|mistakes|context_clues|others", "text": "..."}, {"op": "increment_helpful", "id": "..."}, {"op": "increment_harmful", "id": "..."}, {"op": "amend_text", "id": "...", "text": "..."}, {"op": "remove", "id": "..."}]})";

// Models often wrap JSON in a fenced block; accept that, nothing else.
std::string_view strip_fences(std::string_view content) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  content = trim(content);
  if (content.starts_with("```")) {
    const auto newline = content.find('\n');
    const auto closing = content.rfind("```");
    if (newline != std::string_view::npos && closing > newline) {
      content = trim(content.substr(newline + 1, closing - newline - 1));
    }
  }
  return content;
}

json parse_object(std::string_view content) {
  json doc = json::parse(strip_fences(content), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw MalformedReply("reply is not a JSON object");
  }
  return doc;
}

const json& require(const json& doc, const char* key, json::value_t type) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->type() != type) {
    throw MalformedReply(std::string("reply field '") + key + "' missing or of the wrong type");
  }
  return *it;
}

std::string require_string(const json& doc, const char* key) {
  const auto& value = require(doc, key, json::value_t::string);
  auto text = value.get<std::string>();
  if (text.empty()) {
    throw MalformedReply(std::string("reply field '") + key + "' is empty");
  }
  return text;
}

std::string render_playbook(const Playbook& playbook) {
  return playbook.empty() ? std::string("(empty playbook)\n") : export_markdown(playbook);
}

bool retryable(int status) { return status == 429 || status == 408 || status >= 500; }

}  // namespace

std::chrono::milliseconds RetryPolicy::delay_for(std::size_t retry_index, double unit) const {
  const double exponential = static_cast<double>(base.count()) * std::pow(2.0, static_cast<double>(retry_index));
  const double capped = std::min(exponential, static_cast<double>(cap.count()));
  const double jittered = capped * (1.0 - jitter * std::clamp(unit, 0.0, 1.0));
  return std::chrono::milliseconds(static_cast<long long>(std::llround(jittered)));
}

std::string PromptTemplates::system_prompt(std::string_view role) {
  std::string out = "You are the ";
  out += role;
  out += " in a prompt-learning loop (templates ";
  out += kVersion;
  out += "). Reply with a single JSON object and nothing else.";
  return out;
}

std::string PromptTemplates::execute(const TaskSample& task, const Playbook& playbook) {
  std::ostringstream out;
  out << "Current playbook:\n" << render_playbook(playbook) << "\n";
  out << "Task " << task.task_id << ":\n" << task.payload << "\n\n";
  out << "Solve the task using the playbook where it applies. Report each step you take and whether you "
         "believe the task succeeded.\nReply schema: "
      << kExecuteSchema << "\n";
  return out.str();
}

std::string PromptTemplates::reflect(const TaskSample& task, const Trajectory& trajectory,
                                     const Playbook& playbook) {
  std::ostringstream out;
  out << "Current playbook:\n" << render_playbook(playbook) << "\n";
  out << "Task " << task.task_id << ":\n" << task.payload << "\n\n";
  out << "Trajectory (outcome: " << outcome_key(trajectory.outcome) << "):\n";
  for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
    out << i + 1 << ". " << trajectory.steps[i] << "\n";
  }
  out << "\nExtract specific, reusable lessons from this trajectory. Mark playbook entries that misled the "
         "agent as harmful by id.\nReply schema: "
      << kReflectSchema << "\n";
  return out.str();
}

std::string PromptTemplates::curate(std::span<const Reflection> inputs, const Playbook& playbook) {
  std::ostringstream out;
  out << "Current playbook:\n" << render_playbook(playbook) << "\n";
  out << "Reflections to fold into the playbook (" << inputs.size() << "):\n";
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out << "\n### Reflection " << i + 1 << " (" << inputs[i].source_task_id << ")\n";
    for (const auto& item : inputs[i].items) {
      out << "- [" << polarity_key(item.polarity) << "] " << item.text << "\n";
    }
  }
  out << "\nEmit the smallest set of playbook operations that captures every specific, non-redundant "
         "lesson. Reference existing entries by id.\nReply schema: "
      << kCurateSchema << "\n";
  return out.str();
}

std::string PromptTemplates::repair(std::string_view problem) {
  std::string out = "Your previous reply could not be used: ";
  out += problem;
  out += ". Reply again with only a JSON object that matches the requested schema.";
  return out;
}

Trajectory parse_execute_reply(std::string_view content, const TaskSample& task) {
  const auto doc = parse_object(content);
  Trajectory trajectory;
  trajectory.task_id = task.task_id;
  for (const auto& step : require(doc, "steps", json::value_t::array)) {
    if (!step.is_string()) {
      throw MalformedReply("steps must be strings");
    }
    trajectory.steps.push_back(step.get<std::string>());
  }
  if (trajectory.steps.empty()) {
    throw MalformedReply("trajectory has no steps");
  }
  const auto outcome = require_string(doc, "outcome");
  if (outcome == "success") {
    trajectory.outcome = Outcome::kSuccess;
  } else if (outcome == "failure") {
    trajectory.outcome = Outcome::kFailure;
  } else {
    throw MalformedReply("unknown outcome: " + outcome);
  }
  return trajectory;
}

Reflection parse_reflect_reply(std::string_view content, const TaskSample& task) {
  const auto doc = parse_object(content);
  Reflection reflection;
  reflection.source_task_id = task.task_id;
  for (const auto& row : require(doc, "items", json::value_t::array)) {
    if (!row.is_object()) {
      throw MalformedReply("reflection items must be objects");
    }
    ReflectionItem item;
    item.text = require_string(row, "text");
    const auto polarity = row.value("polarity", std::string{"helpful"});
    if (polarity == "helpful") {
      item.polarity = Polarity::kHelpful;
    } else if (polarity == "harmful") {
      item.polarity = Polarity::kHarmful;
    } else {
      throw MalformedReply("unknown polarity: " + polarity);
    }
    if (const auto it = row.find("entry_id"); it != row.end() && it->is_string() && !it->get<std::string>().empty()) {
      item.text = "[" + it->get<std::string>() + "] " + item.text;
    }
    reflection.items.push_back(std::move(item));
  }
  if (reflection.items.empty()) {
    throw MalformedReply("reflection has no items");
  }
  return reflection;
}

ContextDelta parse_curate_reply(std::string_view content, const Playbook& playbook, std::uint64_t iteration) {
  const auto doc = parse_object(content);
  ContextDelta delta;
  auto serial = playbook.next_serial();
  const auto existing = [&](const json& row) {
    auto id = require_string(row, "id");
    if (playbook.find(id) == nullptr) {
      throw MalformedReply("op references unknown entry id " + id);
    }
    return id;
  };
  for (const auto& row : require(doc, "ops", json::value_t::array)) {
    if (!row.is_object()) {
      throw MalformedReply("ops must be objects");
    }
    const auto op = require_string(row, "op");
    if (op == "add") {
      PlaybookEntry entry;
      entry.section = parse_section(row.value("section", std::string{"others"}));
      entry.id = Playbook::make_id(entry.section, serial++);
      entry.text = require_string(row, "text");
      entry.created_iter = iteration;
      delta.ops.emplace_back(AddOp{std::move(entry)});
    } else if (op == "increment_helpful") {
      delta.ops.emplace_back(IncrementHelpfulOp{existing(row)});
    } else if (op == "increment_harmful") {
      delta.ops.emplace_back(IncrementHarmfulOp{existing(row)});
    } else if (op == "amend_text") {
      auto id = existing(row);
      delta.ops.emplace_back(AmendTextOp{std::move(id), require_string(row, "text")});
    } else if (op == "remove") {
      delta.ops.emplace_back(RemoveOp{existing(row)});
    } else {
      throw MalformedReply("unknown op: " + op);
    }
  }
  return delta;
}

ChatBackend::ChatBackend(ChatBackendConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper,
                         std::optional<std::string> api_key)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      jitter_rng_(config_.jitter_seed) {
  if (!transport_) {
    throw InvalidConfig("chat backend needs a transport");
  }
  if (config_.base_url.empty()) {
    throw InvalidConfig("chat backend needs a base_url");
  }
  if (config_.retry.max_attempts == 0) {
    throw InvalidConfig("retry.max_attempts must be at least 1");
  }
  if (api_key) {
    api_key_ = *api_key;
  } else if (const char* env = std::getenv(config_.api_key_env.c_str())) {
    api_key_ = env;
  }
  if (api_key_.empty()) {
    throw InvalidConfig("no API key: set " + config_.api_key_env);
  }
  if (!sleeper_) {
    sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

std::string ChatBackend::endpoint() const {
  auto base = config_.base_url;
  while (!base.empty() && base.back() == '/') {
    base.pop_back();
  }
  return base + "/chat/completions";
}

json ChatBackend::build_request(const std::vector<ChatMessage>& messages) const {
  json request;
  request["model"] = config_.model;
  request["messages"] = json::array();
  for (const auto& message : messages) {
    request["messages"].push_back({{"role", message.role}, {"content", message.content}});
  }
  request["temperature"] = config_.temperature;
  request["response_format"] = {{"type", "json_object"}};
  return request;
}

double ChatBackend::next_jitter_unit() {
  std::lock_guard lock(jitter_mutex_);
  return jitter_rng_.uniform01();
}

std::string ChatBackend::complete(const std::vector<ChatMessage>& messages) {
  const auto body = build_request(messages).dump();
  const HttpHeaders headers{{"Authorization", "Bearer " + api_key_}, {"Content-Type", "application/json"}};
  const auto& retry = config_.retry;

  for (std::size_t attempt = 0;; ++attempt) {
    const bool last = attempt + 1 >= retry.max_attempts;
    HttpResponse response;
    try {
      response = transport_->post(endpoint(), headers, body);
    } catch (const TransportError& e) {
      if (last) {
        throw;
      }
      sleeper_(retry.delay_for(attempt, next_jitter_unit()));
      continue;
    }

    if (response.status == 200) {
      const auto doc = json::parse(response.body, nullptr, false);
      if (doc.is_discarded()) {
        throw MalformedReply("response body is not JSON");
      }
      try {
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception&) {
        throw MalformedReply("response lacks choices[0].message.content");
      }
    }
    if (!retryable(response.status)) {
      throw TransportError("chat endpoint returned HTTP " + std::to_string(response.status));
    }
    if (last) {
      if (response.status == 429) {
        throw RateLimited("rate limited after " + std::to_string(attempt + 1) + " attempts");
      }
      throw TransportError("chat endpoint returned HTTP " + std::to_string(response.status) + " after " +
                           std::to_string(attempt + 1) + " attempts");
    }
    sleeper_(retry.delay_for(attempt, next_jitter_unit()));
  }
}

template <typename Parse>
auto ChatBackend::complete_parsed(std::vector<ChatMessage> messages, Parse&& parse) {
  const auto content = complete(messages);
  try {
    return parse(content);
  } catch (const MalformedReply& first) {
    messages.push_back({"assistant", content});
    messages.push_back({"user", PromptTemplates::repair(first.what())});
    return parse(complete(messages));
  }
}

namespace {
template <typename T>
double seconds_since(T start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}
}  // namespace

Timed<Trajectory> ChatBackend::execute(const TaskSample& task, const Playbook& playbook, const CallContext&) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<ChatMessage> messages{{"system", PromptTemplates::system_prompt("agent")},
                                    {"user", PromptTemplates::execute(task, playbook)}};
  auto trajectory = complete_parsed(std::move(messages),
                                    [&](const std::string& content) { return parse_execute_reply(content, task); });
  const double elapsed = seconds_since(start);
  trajectory.latency_s = elapsed;
  return {std::move(trajectory), elapsed};
}

Timed<Reflection> ChatBackend::reflect(const TaskSample& task, const Trajectory& trajectory,
                                       const Playbook& playbook, const CallContext& ctx) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<ChatMessage> messages{{"system", PromptTemplates::system_prompt("reflector")},
                                    {"user", PromptTemplates::reflect(task, trajectory, playbook)}};
  auto reflection = complete_parsed(std::move(messages),
                                    [&](const std::string& content) { return parse_reflect_reply(content, task); });
  reflection.origin_index = static_cast<std::size_t>(ctx.index);
  return {std::move(reflection), seconds_since(start)};
}

Timed<ContextDelta> ChatBackend::curate(std::span<const Reflection> inputs, const Playbook& playbook,
                                        const CallContext& ctx) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<ChatMessage> messages{{"system", PromptTemplates::system_prompt("curator")},
                                    {"user", PromptTemplates::curate(inputs, playbook)}};
  auto delta = complete_parsed(std::move(messages), [&](const std::string& content) {
    return parse_curate_reply(content, playbook, ctx.iteration);
  });
  return {std::move(delta), seconds_since(start)};
}

}  // namespace scanlearn
