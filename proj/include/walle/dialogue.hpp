#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "walle/llm.hpp"
#include "walle/scene.hpp"

namespace walle {

/// The five prompt parts. Templates use {slot} placeholders.
struct PromptBundle {
  std::string part1_role;
  std::string part2_env_rules;     // {environment_dict} {task_rules} {output_format}
  std::string part3_interaction;   // {user} {text}
  std::string part4_confirmation;  // {user} {verdict} {target}
  std::string part5_feedback;      // {target} {outcome}
  std::string task_rules;
  std::string output_format;

  static PromptBundle defaults();
  /// Reads part1_role.txt ... part5_feedback.txt, task_rules.txt and output_format.txt.
  static PromptBundle load(const std::filesystem::path& dir);

  std::string render_part2(const Scene& scene) const;
};

/// Part 1 followed by part 2 for the current scene.
std::string build_system_prompt(const Scene& scene, std::string_view rules, const PromptBundle& bundle = PromptBundle::defaults());

enum class Phase { init, briefed, interacting, target_proposed, confirmed, executing, awaiting_feedback, closed };

inline constexpr Phase kPhases[] = {Phase::init,      Phase::briefed,   Phase::interacting,       Phase::target_proposed,
                                    Phase::confirmed, Phase::executing, Phase::awaiting_feedback, Phase::closed};

std::string_view to_string(Phase p);

enum class Trigger {
  brief,
  utterance_with_target,
  utterance_without_target,
  accept,
  reject,
  begin_execution,
  finish_execution,
  feedback_continue,  // feedback leaving at least one user unserved
  feedback_close,     // success feedback that serves the last user
};

inline constexpr Trigger kTriggers[] = {Trigger::brief,           Trigger::utterance_with_target,
                                        Trigger::utterance_without_target, Trigger::accept,
                                        Trigger::reject,          Trigger::begin_execution,
                                        Trigger::finish_execution, Trigger::feedback_continue,
                                        Trigger::feedback_close};

std::string_view to_string(Trigger t);

/// The declared transition relation. Absent means the trigger is illegal in `from`.
std::optional<Phase> next_phase(Phase from, Trigger trigger);

enum class FeedbackOutcome { success, failure };

std::string_view to_string(FeedbackOutcome o);
std::optional<FeedbackOutcome> feedback_from_string(std::string_view text);

struct TransitionRecord {
  std::chrono::system_clock::time_point timestamp;
  Phase from = Phase::init;
  Phase to = Phase::init;
  Trigger trigger = Trigger::brief;
};

/// What the orchestrator learns from one execution.
struct ExecutionReport {
  std::optional<std::string> object_id;  // object the robot acted on, if any
  Scene scene_after;
  std::string summary;
};

/// One dialogue session: shared transcript for up to three users plus its scene lineage.
/// Not thread-safe; callers serialize access.
class Session {
 public:
  static constexpr std::size_t kMaxUsers = 3;

  /// Leaves the session in Phase::init. Throws PreconditionError for 0 or more than 3 users.
  Session(std::shared_ptr<const ChatBackend> backend, Scene scene, std::vector<std::string> users,
          PromptBundle prompts = PromptBundle::defaults());

  /// Init -> Briefed: seeds the transcript with parts 1 and 2.
  void brief();

  /// Wraps the utterance with the speaker tag, posts it and returns the reply.
  /// Backend errors propagate with the session unchanged.
  ChatMessage post_user_utterance(const std::string& user, const std::string& text);

  /// Only the user named in the proposed command may confirm it.
  ChatMessage confirm_target(const std::string& user, bool accept);

  /// Confirmed -> Executing. Saves the pre-execution environment dictionary.
  const TargetCommand& begin_execution();

  /// Executing -> AwaitingFeedback with the scene produced by the execution.
  void finish_execution(ExecutionReport report);

  /// Success keeps the delivery, failure backs off to the saved environment. Both post
  /// part 5 and a regenerated part 2.
  ChatMessage report_feedback(FeedbackOutcome outcome);

  Phase phase() const { return phase_; }
  const std::optional<std::string>& active_user() const { return active_user_; }
  const std::optional<TargetCommand>& command() const { return command_; }
  const Transcript& transcript() const { return transcript_; }
  const Scene& scene() const { return scene_; }
  const std::vector<std::string>& users() const { return users_; }
  const std::set<std::string>& served_users() const { return served_; }
  const std::optional<std::string>& saved_environment() const { return saved_environment_; }
  const std::vector<TransitionRecord>& transitions() const { return transitions_; }
  const std::optional<ParseResult>& last_parse() const { return last_parse_; }
  const ChatBackend& backend() const { return *backend_; }

  /// JSON lines {timestamp, state_from, state_to, trigger}.
  std::string export_event_log() const;

 private:
  void require(Trigger trigger) const;
  void transition(Trigger trigger);
  ChatMessage exchange(ChatMessage message);

  std::shared_ptr<const ChatBackend> backend_;
  Scene scene_;
  std::vector<std::string> users_;
  PromptBundle prompts_;
  Transcript transcript_;
  Phase phase_ = Phase::init;
  std::optional<std::string> active_user_;
  std::optional<TargetCommand> command_;
  std::optional<std::string> executed_object_;
  std::optional<std::string> saved_environment_;
  std::optional<Scene> saved_scene_;
  std::optional<ParseResult> last_parse_;
  std::set<std::string> served_;
  std::vector<TransitionRecord> transitions_;
};

/// Constructs and briefs a session.
Session start_session(std::shared_ptr<const ChatBackend> backend, Scene scene, std::vector<std::string> users,
                      PromptBundle prompts = PromptBundle::defaults());

enum class MissClass { ok, memory_confusion, understanding_confusion, no_command };

std::string_view to_string(MissClass m);

struct TargetMissReport {
  MissClass miss = MissClass::ok;
  TargetCommand expected;
  std::optional<TargetCommand> produced;
};

TargetMissReport classify_target_miss(const TargetCommand& expected, const std::optional<TargetCommand>& produced);

}  // namespace walle
