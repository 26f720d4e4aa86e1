#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "walle/errors.hpp"
#include "walle/llm.hpp"
#include "walle/prompt_protocol.hpp"
#include "walle/rng.hpp"

namespace walle {

using nlohmann::json;

std::string_view to_string(FailureMode m) {
  switch (m) {
    case FailureMode::none:
      return "none";
    case FailureMode::memory_confusion:
      return "memory_confusion";
    case FailureMode::understanding_confusion:
      return "understanding_confusion";
    case FailureMode::no_command:
      return "no_command";
  }
  return "unknown";
}

std::optional<FailureMode> failure_mode_from_string(std::string_view text) {
  for (auto m : {FailureMode::none, FailureMode::memory_confusion, FailureMode::understanding_confusion,
                 FailureMode::no_command}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Script file

MockScript MockScript::from_json(const json& doc) {
  MockScript script;
  try {
    for (const auto& u : doc.at("users")) {
      ScriptedUser user;
      user.id = u.at("id").get<std::string>();
      if (u.contains("utterances")) user.utterances = u["utterances"].get<std::vector<std::string>>();
      if (u.contains("true_target") && !u["true_target"].is_null()) {
        const auto& t = u["true_target"];
        ScriptedUser::Target target;
        target.object = t.at("object").get<std::string>();
        target.color = t.at("color").get<std::string>();
        const auto cat = category_from_string(t.at("category").get<std::string>());
        if (!cat) throw ParseError("mock script: unknown category");
        target.category = *cat;
        user.true_target = target;
      }
      script.users.push_back(std::move(user));
    }
    if (doc.contains("failure_injection")) {
      const auto& f = doc["failure_injection"];
      const auto mode = failure_mode_from_string(f.value("mode", "none"));
      if (!mode) throw ParseError("mock script: unknown failure mode");
      script.failure_injection.mode = *mode;
      script.failure_injection.probability = f.value("probability", 0.0);
      script.failure_injection.seed = f.value("seed", std::uint64_t{0});
    }
  } catch (const json::exception& ex) {
    throw ParseError(std::string("mock script: ") + ex.what());
  }
  const double p = script.failure_injection.probability;
  if (!(p >= 0.0 && p <= 1.0)) throw InvariantError("mock script: failure probability outside [0,1]");
  return script;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open mock script " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("mock script: ") + ex.what());
  }
}

json MockScript::to_json() const {
  json users = json::array();
  for (const auto& u : this->users) {
    json entry = {{"id", u.id}, {"utterances", u.utterances}};
    if (u.true_target) {
      entry["true_target"] = {{"object", u.true_target->object},
                              {"color", u.true_target->color},
                              {"category", std::string(to_string(u.true_target->category))}};
    }
    users.push_back(std::move(entry));
  }
  return {{"users", std::move(users)},
          {"failure_injection",
           {{"mode", std::string(to_string(failure_injection.mode))},
            {"probability", failure_injection.probability},
            {"seed", failure_injection.seed}}}};
}

// ---------------------------------------------------------------------------
// Rule engine

namespace {

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "i",     "d",    "m",     "ll",   "like",   "want",  "would", "something", "some",  "the",   "a",
      "an",    "please", "me",  "can",  "could",  "you",   "have",  "to",        "for",   "of",    "and",
      "is",    "it",   "my",    "in",   "on",     "with",  "today", "feel",      "mood",  "bring", "get",
      "give",  "need", "really", "just", "im",    "am",    "be",    "that",      "this",  "what",  "do",
      "there", "any",  "let",   "which", "hi",    "hello", "thank", "thanks",    "think", "maybe", "now",
      "one",   "some", "bit",   "little", "how",  "about", "are",   "we",        "so",    "very",  "too",
      "having", "drink", "thing", "pick", "choose", "will", "go",   "prefer",    "fancy", "craving", "kind"};
  return words;
}

std::string singular(std::string w) {
  if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') w.pop_back();
  return w;
}

std::vector<std::string> raw_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::set<std::string> content_tokens(std::string_view text) {
  std::set<std::string> out;
  for (auto& t : raw_tokens(text)) {
    if (stopwords().count(t) == 0) out.insert(singular(t));
  }
  return out;
}

std::string joined(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

bool contains_phrase(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

int score(const EnvironmentEntry& e, std::string_view utterance) {
  const auto words = raw_tokens(utterance);
  const auto tokens = content_tokens(utterance);
  int s = 0;
  if (contains_phrase(words, raw_tokens(e.name))) s += 10;
  for (const auto& t : content_tokens(e.name)) s += 3 * static_cast<int>(tokens.count(t));
  if (tokens.count(e.color)) s += 2;
  if (tokens.count(std::string(to_string(e.category)))) s += 2;
  for (const auto& t : content_tokens(e.semantic)) s += static_cast<int>(tokens.count(t));
  return s;
}

bool asks_inventory(std::string_view utterance) {
  const auto words = raw_tokens(utterance);
  auto has = [&](std::string_view w) { return std::find(words.begin(), words.end(), w) != words.end(); };
  if (has("inventory") || has("menu") || has("list") || has("options")) return true;
  return has("what") && (has("have") || has("available") || has("table") || has("there") || has("offer"));
}

struct Context {
  std::vector<EnvironmentEntry> environment;
  std::vector<EnvironmentEntry> forgotten;  // entries of earlier environments no longer present
};

Context read_context(const Transcript& transcript) {
  Context ctx;
  std::vector<std::vector<EnvironmentEntry>> history;
  for (const auto& m : transcript.messages()) {
    if (m.role != Role::system) continue;
    if (auto env = protocol::extract_environment(m.content)) {
      try {
        history.push_back(parse_environment_dict(*env));
      } catch (const ParseError&) {
        // A garbled environment block is ignored; the previous one stays current.
      }
    }
  }
  if (history.empty()) return ctx;
  ctx.environment = history.back();
  for (const auto& env : history) {
    for (const auto& e : env) {
      const bool current = std::find(ctx.environment.begin(), ctx.environment.end(), e) != ctx.environment.end();
      const bool seen = std::find(ctx.forgotten.begin(), ctx.forgotten.end(), e) != ctx.forgotten.end();
      if (!current && !seen) ctx.forgotten.push_back(e);
    }
  }
  return ctx;
}

/// Earlier utterances from `user` since the last feedback message.
std::vector<std::string> user_history(const Transcript& transcript, const std::string& user) {
  std::vector<std::string> out;
  const auto& msgs = transcript.messages();
  for (std::size_t i = 0; i + 1 < msgs.size(); ++i) {
    const auto& m = msgs[i];
    if (m.role != Role::user) continue;
    if (m.content.starts_with(protocol::kFeedbackTag)) {
      out.clear();
      continue;
    }
    if (auto turn = protocol::parse_user_turn(m.content); turn && turn->user == user) out.push_back(turn->text);
  }
  return out;
}

std::string describe(const EnvironmentEntry& e) {
  return fmt::format("the {} ({} {})", e.name, e.color, to_string(e.category));
}

std::string inventory_reply(const std::vector<EnvironmentEntry>& env) {
  if (env.empty()) return "There is nothing left on the table right now.";
  std::string out = "On the table there are: ";
  for (std::size_t i = 0; i < env.size(); ++i) {
    if (i > 0) out += (i + 1 == env.size()) ? ", and " : ", ";
    out += fmt::format("{} ({} {}, {})", env[i].name, env[i].color, to_string(env[i].category), env[i].semantic);
  }
  out += ". What would you like?";
  return out;
}

std::uint64_t transcript_digest(const Transcript& transcript) {
  std::uint64_t h = transcript.size();
  for (const auto& m : transcript.messages()) {
    h = mix64(h ^ static_cast<std::uint64_t>(m.role));
    h = mix64(h ^ hash_text(m.content));
  }
  return h;
}

}  // namespace

ScriptedMock::ScriptedMock(MockScript script) : script_(std::move(script)) {}

FailureMode ScriptedMock::injection_for(const Transcript& transcript) const {
  const auto& f = script_.failure_injection;
  if (f.mode == FailureMode::none || f.probability <= 0.0) return FailureMode::none;
  Rng rng(derive_seed(f.seed, transcript_digest(transcript)));
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < f.probability ? f.mode : FailureMode::none;
}

ChatMessage ScriptedMock::complete(const Transcript& transcript) const {
  require_valid_transcript(transcript);
  const auto& last = transcript.messages().back();
  auto reply = [](std::string text) { return ChatMessage{Role::assistant, std::move(text)}; };

  if (last.role != Role::user) {
    return reply("Understood. I have studied the environment and the task rules, and I am ready to help.");
  }
  const std::string& content = last.content;

  if (content.starts_with(protocol::kConfirmationTag)) {
    if (content.find(protocol::kRejects) != std::string::npos) {
      return reply("I am sorry for the misunderstanding. Could you tell me more about what you would like?");
    }
    return reply("Thank you for confirming. The command has been sent to the robot.");
  }
  if (content.starts_with(protocol::kFeedbackTag)) {
    if (content.find(protocol::kReportedFailure) != std::string::npos) {
      return reply(
          "I am sorry the grasp did not succeed. I have backed off the environment to its state before the "
          "execution, so the object is still on the table. Would you like me to try again?");
    }
    return reply("The delivery succeeded and I have updated the environment. Can I get anything else for anyone?");
  }

  const auto turn = protocol::parse_user_turn(content);
  if (!turn) return reply("Could you tell me who is speaking? Please prefix your message with your user id.");

  const Context ctx = read_context(transcript);
  if (ctx.environment.empty()) return reply("There is nothing left on the table right now.");

  std::vector<int> scores;
  for (const auto& e : ctx.environment) scores.push_back(score(e, turn->text));
  int best = *std::max_element(scores.begin(), scores.end());

  std::vector<std::size_t> candidates;
  if (best > 0) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] == best) candidates.push_back(i);
    }
    if (candidates.size() > 1) {
      // Fall back on what this user said earlier.
      const auto earlier = joined(user_history(transcript, turn->user));
      std::vector<int> memory;
      for (auto i : candidates) memory.push_back(score(ctx.environment[i], earlier));
      const int mbest = *std::max_element(memory.begin(), memory.end());
      std::vector<std::size_t> narrowed;
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (memory[k] == mbest) narrowed.push_back(candidates[k]);
      }
      candidates = std::move(narrowed);
    }
  }

  if (candidates.empty()) {
    if (asks_inventory(turn->text)) return reply(inventory_reply(ctx.environment));
    return reply(fmt::format("Happy to help, {}. Could you tell me a bit more about what you would like?", turn->user));
  }
  if (candidates.size() > 1) {
    std::string options;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (k > 0) options += (k + 1 == candidates.size()) ? " or " : ", ";
      options += describe(ctx.environment[candidates[k]]);
    }
    return reply(fmt::format("Do you mean {}?", options));
  }

  const EnvironmentEntry& intended = ctx.environment[candidates.front()];
  TargetCommand cmd{intended.name, intended.color, intended.category, turn->user};
  std::string preface =
      fmt::format("Based on what you told me, {} should suit you, {}. Please confirm.", describe(intended), turn->user);

  Rng rng(derive_seed(script_.failure_injection.seed ^ 0x5bd1e995ull, transcript_digest(transcript)));
  switch (injection_for(transcript)) {
    case FailureMode::none:
      break;
    case FailureMode::no_command:
      return reply(fmt::format("I think {} would be a good choice for you, {}.", describe(intended), turn->user));
    case FailureMode::memory_confusion: {
      auto differs = [&](const EnvironmentEntry& e) {
        return e.color != intended.color || e.category != intended.category;
      };
      std::vector<EnvironmentEntry> pool;
      std::copy_if(ctx.environment.begin(), ctx.environment.end(), std::back_inserter(pool), differs);
      if (pool.empty()) std::copy_if(ctx.forgotten.begin(), ctx.forgotten.end(), std::back_inserter(pool), differs);
      if (!pool.empty()) {
        const auto& wrong = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        cmd = {wrong.name, wrong.color, wrong.category, turn->user};
      } else {
        const auto* it = std::find(std::begin(kColors), std::end(kColors), intended.color);
        const std::size_t idx = (it == std::end(kColors)) ? 0 : static_cast<std::size_t>(it - std::begin(kColors));
        const std::string other(kColors[(idx + 1) % std::size(kColors)]);
        cmd = {other + " " + std::string(to_string(intended.category)), other, intended.category, turn->user};
      }
      break;
    }
    case FailureMode::understanding_confusion: {
      std::string other;
      for (const auto& u : script_.users) {
        if (u.id != turn->user) {
          other = u.id;
          break;
        }
      }
      if (other.empty()) other = (turn->user == "guest") ? "guest2" : "guest";
      cmd.requesting_user = other;
      break;
    }
  }
  return reply(preface + "\n" + format_target_command(cmd));
}

}  // namespace walle
