#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "walle/scene.hpp"

namespace walle {

enum class Role { system, user, assistant };

std::string_view to_string(Role r);
std::optional<Role> role_from_string(std::string_view text);

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Append-only message log. The first message must be the system prompt.
class Transcript {
 public:
  Transcript() = default;
  explicit Transcript(std::string system_prompt);

  void append(ChatMessage message);
  const std::vector<ChatMessage>& messages() const { return messages_; }
  std::size_t size() const { return messages_.size(); }
  bool empty() const { return messages_.empty(); }

 private:
  std::vector<ChatMessage> messages_;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// One assistant reply for the transcript. Does not modify the transcript.
  virtual ChatMessage complete(const Transcript& transcript) const = 0;
  virtual std::string_view kind() const = 0;
};

/// Throws PreconditionError for an empty transcript or one that does not open with a system message.
void require_valid_transcript(const Transcript& transcript);

// ---------------------------------------------------------------------------
// Target command grammar:  TARGET: <object> - <color> <category> FOR <user>

struct TargetCommand {
  std::string object_name;
  std::string color;
  Category category = Category::bottle;
  std::string requesting_user;

  bool operator==(const TargetCommand&) const = default;
};

enum class ParseFailure { no_command, unknown_color, unknown_category, malformed };

std::string_view to_string(ParseFailure f);

struct ParseResult {
  std::optional<TargetCommand> command;
  std::optional<ParseFailure> failure;  // set iff command is absent

  explicit operator bool() const { return command.has_value(); }
};

/// Never throws. The last line carrying a TARGET keyword decides the result.
ParseResult parse_target_command(std::string_view text) noexcept;

/// Lowercases colour and object name and collapses whitespace in the name.
TargetCommand normalized(TargetCommand cmd);

/// Canonical single-line form. Throws InvariantError for commands outside the vocabulary.
std::string format_target_command(const TargetCommand& cmd);

bool is_valid_object_name(std::string_view name);
bool is_valid_user_id(std::string_view user);

// ---------------------------------------------------------------------------
// Remote chat-completions backend.

struct RemoteChatConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_id = "gpt-3.5-turbo";
  double temperature = 0.0;
  std::string api_key_env = "OPENAI_API_KEY";
  std::chrono::seconds timeout{60};
  int retries = 1;
};

class RemoteChat final : public ChatBackend {
 public:
  explicit RemoteChat(RemoteChatConfig config);

  ChatMessage complete(const Transcript& transcript) const override;
  std::string_view kind() const override { return "remote"; }

  const RemoteChatConfig& config() const { return config_; }

  static nlohmann::json request_body(const RemoteChatConfig& config, const Transcript& transcript);
  /// Throws BackendError when the body is not a chat-completions response.
  static ChatMessage parse_response(std::string_view body);

 private:
  RemoteChatConfig config_;
};

// ---------------------------------------------------------------------------
// Deterministic rule-engine backend.

enum class FailureMode { none, memory_confusion, understanding_confusion, no_command };

std::string_view to_string(FailureMode m);
std::optional<FailureMode> failure_mode_from_string(std::string_view text);

struct FailureInjection {
  FailureMode mode = FailureMode::none;
  double probability = 0.0;
  std::uint64_t seed = 0;
};

struct ScriptedUser {
  std::string id;
  std::vector<std::string> utterances;
  struct Target {
    std::string object;
    std::string color;
    Category category = Category::bottle;
  };
  std::optional<Target> true_target;
};

struct MockScript {
  std::vector<ScriptedUser> users;
  FailureInjection failure_injection;

  static MockScript from_json(const nlohmann::json& doc);
  static MockScript load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Answers inventory questions, matches stated preferences against the latest environment
/// dictionary, proposes TARGET lines and acknowledges confirmation and feedback messages.
/// Replies are a pure function of (transcript, script, injection seed).
class ScriptedMock final : public ChatBackend {
 public:
  explicit ScriptedMock(MockScript script);

  ChatMessage complete(const Transcript& transcript) const override;
  std::string_view kind() const override { return "mock"; }

  /// The failure that would be injected into a TARGET proposal for this transcript.
  FailureMode injection_for(const Transcript& transcript) const;

  const MockScript& script() const { return script_; }

 private:
  MockScript script_;
};

}  // namespace walle
