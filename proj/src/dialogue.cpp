#include "walle/dialogue.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "walle/errors.hpp"
#include "walle/prompt_protocol.hpp"

namespace walle {

// ---------------------------------------------------------------------------
// Prompts

namespace {

constexpr std::string_view kPart1 =
    "You are the dialogue module of a robot waiter. The robot stands at a table and can grasp bottles, bowls "
    "and mugs and hand them to the people it serves. Up to three users talk to you in one shared conversation. "
    "Your job is to find out, through open conversation, which object on the table each user wants, and to "
    "turn that into a precise command for the robot's vision and grasping system.\n"
    "Before you talk to anyone, study the environment and the task rules below. Do not start serving until a "
    "user asks for something.";

constexpr std::string_view kPart2 =
    "ENVIRONMENT:\n"
    "{environment_dict}\n"
    "END ENVIRONMENT\n"
    "\n"
    "TASK RULES:\n"
    "{task_rules}\n"
    "\n"
    "OUTPUT FORMAT:\n"
    "{output_format}";

constexpr std::string_view kPart3 = "[{user}]: {text}";

constexpr std::string_view kPart4 = "[confirmation] {user} {verdict} the target \"{target}\".";

constexpr std::string_view kPart5 =
    "[feedback] The robot execution for \"{target}\" reported {outcome}. On success the object has been "
    "delivered and is no longer on the table. On failure, back off: the object is back in its place and the "
    "environment is the same as before the execution.";

constexpr std::string_view kRules =
    "1. Only objects listed in the environment can be served. Never invent objects.\n"
    "2. Every user message starts with the speaker id, for example [user1]: ... Keep track of what each user "
    "wants and never mix up users.\n"
    "3. Answer questions about what is available using the environment.\n"
    "4. Propose one target at a time and wait for the user to confirm it.\n"
    "5. When the environment is updated, delivered objects are gone; do not offer them again.";

constexpr std::string_view kOutputFormat =
    "Keep your reasoning short. When you have identified what a user wants, end your reply with exactly one "
    "line of the form\n"
    "TARGET: <object> - <color> <category> FOR <user>\n"
    "where <object> is the object name from the environment, <color> is one of white, black, red, green, blue, "
    "yellow, purple, orange, pink, brown, gray, transparent, <category> is one of bottle, bowl, mug, and <user> "
    "is the id of the user who wants it. Do not write a TARGET line in any other reply.";

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open prompt template " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

}  // namespace

PromptBundle PromptBundle::defaults() {
  return {std::string(kPart1), std::string(kPart2),  std::string(kPart3),       std::string(kPart4),
          std::string(kPart5), std::string(kRules), std::string(kOutputFormat)};
}

PromptBundle PromptBundle::load(const std::filesystem::path& dir) {
  PromptBundle b;
  b.part1_role = read_text(dir / "part1_role.txt");
  b.part2_env_rules = read_text(dir / "part2_env_rules.txt");
  b.part3_interaction = read_text(dir / "part3_interaction.txt");
  b.part4_confirmation = read_text(dir / "part4_confirmation.txt");
  b.part5_feedback = read_text(dir / "part5_feedback.txt");
  b.task_rules = read_text(dir / "task_rules.txt");
  b.output_format = read_text(dir / "output_format.txt");
  return b;
}

std::string PromptBundle::render_part2(const Scene& scene) const {
  return protocol::render(part2_env_rules, {{"environment_dict", to_environment_dict(scene).text()},
                                            {"task_rules", task_rules},
                                            {"output_format", output_format}});
}

std::string build_system_prompt(const Scene& scene, std::string_view rules, const PromptBundle& bundle) {
  PromptBundle b = bundle;
  b.task_rules = std::string(rules);
  return b.part1_role + "\n\n" + b.render_part2(scene);
}

// ---------------------------------------------------------------------------
// State machine

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::init:
      return "Init";
    case Phase::briefed:
      return "Briefed";
    case Phase::interacting:
      return "Interacting";
    case Phase::target_proposed:
      return "TargetProposed";
    case Phase::confirmed:
      return "Confirmed";
    case Phase::executing:
      return "Executing";
    case Phase::awaiting_feedback:
      return "AwaitingFeedback";
    case Phase::closed:
      return "Closed";
  }
  return "Unknown";
}

std::string_view to_string(Trigger t) {
  switch (t) {
    case Trigger::brief:
      return "brief";
    case Trigger::utterance_with_target:
      return "utterance_with_target";
    case Trigger::utterance_without_target:
      return "utterance_without_target";
    case Trigger::accept:
      return "accept";
    case Trigger::reject:
      return "reject";
    case Trigger::begin_execution:
      return "begin_execution";
    case Trigger::finish_execution:
      return "finish_execution";
    case Trigger::feedback_continue:
      return "feedback_continue";
    case Trigger::feedback_close:
      return "feedback_close";
  }
  return "unknown";
}

std::optional<Phase> next_phase(Phase from, Trigger trigger) {
  switch (from) {
    case Phase::init:
      if (trigger == Trigger::brief) return Phase::briefed;
      break;
    case Phase::briefed:
    case Phase::interacting:
    case Phase::target_proposed:
      if (trigger == Trigger::utterance_with_target) return Phase::target_proposed;
      if (trigger == Trigger::utterance_without_target) return Phase::interacting;
      if (from == Phase::target_proposed) {
        if (trigger == Trigger::accept) return Phase::confirmed;
        if (trigger == Trigger::reject) return Phase::interacting;
      }
      break;
    case Phase::confirmed:
      if (trigger == Trigger::begin_execution) return Phase::executing;
      break;
    case Phase::executing:
      if (trigger == Trigger::finish_execution) return Phase::awaiting_feedback;
      break;
    case Phase::awaiting_feedback:
      if (trigger == Trigger::feedback_continue) return Phase::interacting;
      if (trigger == Trigger::feedback_close) return Phase::closed;
      break;
    case Phase::closed:
      break;
  }
  return std::nullopt;
}

std::string_view to_string(FeedbackOutcome o) { return o == FeedbackOutcome::success ? "success" : "failure"; }

std::optional<FeedbackOutcome> feedback_from_string(std::string_view text) {
  if (text == "success") return FeedbackOutcome::success;
  if (text == "failure") return FeedbackOutcome::failure;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Session

Session::Session(std::shared_ptr<const ChatBackend> backend, Scene scene, std::vector<std::string> users,
                 PromptBundle prompts)
    : backend_(std::move(backend)), scene_(std::move(scene)), users_(std::move(users)), prompts_(std::move(prompts)) {
  if (!backend_) throw PreconditionError("session needs a chat backend");
  if (users_.empty() || users_.size() > kMaxUsers) {
    throw PreconditionError(fmt::format("a session serves 1 to {} users, got {}", kMaxUsers, users_.size()));
  }
  std::set<std::string> unique;
  for (const auto& u : users_) {
    if (!is_valid_user_id(u)) throw PreconditionError("invalid user id '" + u + "'");
    if (!unique.insert(u).second) throw PreconditionError("duplicate user id '" + u + "'");
  }
}

void Session::require(Trigger trigger) const {
  if (!next_phase(phase_, trigger)) {
    throw PreconditionError(fmt::format("'{}' is not allowed in state {}", to_string(trigger), to_string(phase_)));
  }
}

void Session::transition(Trigger trigger) {
  const auto to = next_phase(phase_, trigger);
  if (!to) throw PreconditionError(fmt::format("'{}' is not allowed in state {}", to_string(trigger), to_string(phase_)));
  transitions_.push_back({std::chrono::system_clock::now(), phase_, *to, trigger});
  phase_ = *to;
}

ChatMessage Session::exchange(ChatMessage message) {
  Transcript next = transcript_;
  next.append(std::move(message));
  ChatMessage reply = backend_->complete(next);
  if (reply.role != Role::assistant) throw BackendError("backend reply is not an assistant message");
  next.append(reply);
  transcript_ = std::move(next);
  return reply;
}

void Session::brief() {
  require(Trigger::brief);
  transcript_ = Transcript(build_system_prompt(scene_, prompts_.task_rules, prompts_));
  transition(Trigger::brief);
}

ChatMessage Session::post_user_utterance(const std::string& user, const std::string& text) {
  // Either trigger is legal in exactly the same states.
  require(Trigger::utterance_without_target);
  if (std::find(users_.begin(), users_.end(), user) == users_.end()) {
    throw PreconditionError("'" + user + "' is not a user of this session");
  }
  if (text.empty()) throw PreconditionError("empty utterance");
  auto reply = exchange({Role::user, protocol::render(prompts_.part3_interaction, {{"user", user}, {"text", text}})});
  auto parsed = parse_target_command(reply.content);
  last_parse_ = parsed;
  active_user_ = user;
  if (parsed.command) {
    command_ = parsed.command;
    transition(Trigger::utterance_with_target);
  } else {
    command_.reset();
    transition(Trigger::utterance_without_target);
  }
  return reply;
}

ChatMessage Session::confirm_target(const std::string& user, bool accept) {
  require(accept ? Trigger::accept : Trigger::reject);
  if (std::find(users_.begin(), users_.end(), user) == users_.end()) {
    throw PreconditionError("'" + user + "' is not a user of this session");
  }
  if (user != command_->requesting_user) {
    throw PreconditionError("only " + command_->requesting_user + " may confirm this target");
  }
  std::string target = format_target_command(*command_).substr(std::string_view("TARGET: ").size());
  const auto message = protocol::render(
      prompts_.part4_confirmation,
      {{"user", user}, {"verdict", std::string(accept ? protocol::kAccepts : protocol::kRejects)}, {"target", target}});
  auto reply = exchange({Role::user, message});
  if (!accept) command_.reset();
  transition(accept ? Trigger::accept : Trigger::reject);
  return reply;
}

const TargetCommand& Session::begin_execution() {
  require(Trigger::begin_execution);
  saved_environment_ = to_environment_dict(scene_).text();
  saved_scene_ = scene_;
  executed_object_.reset();
  transition(Trigger::begin_execution);
  return *command_;
}

void Session::finish_execution(ExecutionReport report) {
  require(Trigger::finish_execution);
  executed_object_ = std::move(report.object_id);
  scene_ = std::move(report.scene_after);
  transition(Trigger::finish_execution);
}

ChatMessage Session::report_feedback(FeedbackOutcome outcome) {
  if (phase_ != Phase::awaiting_feedback) {
    throw PreconditionError(fmt::format("feedback is not allowed in state {}", to_string(phase_)));
  }
  Scene next = scene_;
  std::set<std::string> served = served_;
  if (outcome == FeedbackOutcome::success) {
    if (executed_object_) {
      if (const auto* o = next.find(*executed_object_); o && o->state != ObjectState::delivered) {
        next = apply_event(next, SceneEvent::delivered(*executed_object_));
      }
    }
    served.insert(command_->requesting_user);
  } else {
    for (const auto& before : saved_scene_->objects) {
      const auto* now = next.find(before.id);
      if (!now || before.state != ObjectState::on_table || now->state == ObjectState::on_table) continue;
      if (next.saved_records.count(before.id)) {
        next = apply_event(next, SceneEvent::restored(before.id));
      } else {
        auto it = std::find_if(next.objects.begin(), next.objects.end(),
                               [&](const ObjectInstance& o) { return o.id == before.id; });
        *it = before;
      }
    }
    if (to_environment_dict(next).text() != *saved_environment_) {
      throw InvariantError("backoff did not restore the pre-execution environment");
    }
  }

  std::string target = format_target_command(*command_).substr(std::string_view("TARGET: ").size());
  auto reply = exchange({Role::user, protocol::render(prompts_.part5_feedback,
                                                      {{"target", target}, {"outcome", std::string(to_string(outcome))}})});
  scene_ = std::move(next);
  served_ = std::move(served);
  transcript_.append({Role::system, prompts_.render_part2(scene_)});

  const bool all_served = std::all_of(users_.begin(), users_.end(), [&](const auto& u) { return served_.count(u); });
  const bool close = outcome == FeedbackOutcome::success && all_served;
  command_.reset();
  active_user_.reset();
  transition(close ? Trigger::feedback_close : Trigger::feedback_continue);
  return reply;
}

std::string Session::export_event_log() const {
  std::string out;
  for (const auto& t : transitions_) {
    nlohmann::json line = {{"timestamp", fmt::format("{:%Y-%m-%dT%H:%M:%S}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(t.timestamp)))},
                           {"state_from", std::string(to_string(t.from))},
                           {"state_to", std::string(to_string(t.to))},
                           {"trigger", std::string(to_string(t.trigger))}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

Session start_session(std::shared_ptr<const ChatBackend> backend, Scene scene, std::vector<std::string> users,
                      PromptBundle prompts) {
  Session s(std::move(backend), std::move(scene), std::move(users), std::move(prompts));
  s.brief();
  return s;
}

// ---------------------------------------------------------------------------
// Target miss taxonomy

std::string_view to_string(MissClass m) {
  switch (m) {
    case MissClass::ok:
      return "ok";
    case MissClass::memory_confusion:
      return "memory_confusion";
    case MissClass::understanding_confusion:
      return "understanding_confusion";
    case MissClass::no_command:
      return "no_command";
  }
  return "unknown";
}

TargetMissReport classify_target_miss(const TargetCommand& expected, const std::optional<TargetCommand>& produced) {
  TargetMissReport report{MissClass::ok, expected, produced};
  if (!produced) {
    report.miss = MissClass::no_command;
  } else if (produced->color != expected.color || produced->category != expected.category) {
    report.miss = MissClass::memory_confusion;
  } else if (produced->requesting_user != expected.requesting_user) {
    report.miss = MissClass::understanding_confusion;
  }
  return report;
}

}  // namespace walle
