#include "walle/llm.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

#include "walle/errors.hpp"
#include "walle/prompt_protocol.hpp"

namespace walle {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  return "unknown";
}

std::optional<Role> role_from_string(std::string_view text) {
  for (auto r : {Role::system, Role::user, Role::assistant}) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

Transcript::Transcript(std::string system_prompt) { append({Role::system, std::move(system_prompt)}); }

void Transcript::append(ChatMessage message) {
  if (message.content.empty()) throw InvariantError("chat message content must be non-empty");
  if (messages_.empty() && message.role != Role::system) {
    throw InvariantError("transcript must open with a system message");
  }
  messages_.push_back(std::move(message));
}

void require_valid_transcript(const Transcript& transcript) {
  if (transcript.empty()) throw PreconditionError("transcript is empty");
  if (transcript.messages().front().role != Role::system) {
    throw PreconditionError("transcript must begin with a system message");
  }
}

// ---------------------------------------------------------------------------
// Command grammar

std::string_view to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::no_command:
      return "no_command";
    case ParseFailure::unknown_color:
      return "unknown_color";
    case ParseFailure::unknown_category:
      return "unknown_category";
    case ParseFailure::malformed:
      return "malformed";
  }
  return "unknown";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

const std::regex& keyword_regex() {
  static const std::regex re(R"(\btarget\s*:)", std::regex::icase);
  return re;
}

const std::regex& body_regex() {
  static const std::regex re(R"(^\s*(.+?)\s*-\s*(\S+)\s+(\S+)\s+for\s+(\w[\w-]*)\s*[.!]?\s*$)", std::regex::icase);
  return re;
}

ParseResult parse_line(const std::string& line) {
  // Use the last keyword occurrence on the line.
  std::size_t offset = 0;
  std::optional<std::size_t> body_start;
  for (auto it = std::sregex_iterator(line.begin(), line.end(), keyword_regex()); it != std::sregex_iterator(); ++it) {
    body_start = static_cast<std::size_t>(it->position() + it->length());
    offset = *body_start;
  }
  if (!body_start) return {std::nullopt, ParseFailure::no_command};
  const std::string body = line.substr(offset);
  std::smatch m;
  if (!std::regex_match(body, m, body_regex())) return {std::nullopt, ParseFailure::malformed};

  TargetCommand cmd;
  cmd.object_name = collapse_whitespace(lower(m[1].str()));
  cmd.color = lower(m[2].str());
  const auto cat = category_from_string(lower(m[3].str()));
  cmd.requesting_user = lower(m[4].str());
  if (cmd.object_name.empty()) return {std::nullopt, ParseFailure::malformed};
  if (!is_known_color(cmd.color)) return {std::nullopt, ParseFailure::unknown_color};
  if (!cat) return {std::nullopt, ParseFailure::unknown_category};
  cmd.category = *cat;
  return {std::move(cmd), std::nullopt};
}

}  // namespace

ParseResult parse_target_command(std::string_view text) noexcept {
  try {
    std::optional<std::string> last;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      if (std::regex_search(line, keyword_regex())) last = line;
    }
    if (!last) return {std::nullopt, ParseFailure::no_command};
    return parse_line(*last);
  } catch (...) {
    return {std::nullopt, ParseFailure::malformed};
  }
}

TargetCommand normalized(TargetCommand cmd) {
  cmd.object_name = collapse_whitespace(lower(cmd.object_name));
  cmd.color = lower(cmd.color);
  cmd.requesting_user = lower(cmd.requesting_user);
  return cmd;
}

bool is_valid_object_name(std::string_view name) {
  if (name.empty() || name.front() == ' ' || name.back() == ' ' || name.front() == '-' || name.back() == '-') {
    return false;
  }
  for (std::size_t i = 0; i < name.size(); ++i) {
    const unsigned char c = name[i];
    const bool ok = std::islower(c) || std::isdigit(c) || c == ' ' || c == '-' || c == '\'';
    if (!ok) return false;
    if (c == ' ' && i + 1 < name.size() && (name[i + 1] == ' ' || name[i + 1] == '-')) return false;
    if (c == '-' && i + 1 < name.size() && name[i + 1] == ' ') return false;
  }
  return true;
}

bool is_valid_user_id(std::string_view user) {
  if (user.empty() || user.front() == '-') return false;
  return std::all_of(user.begin(), user.end(), [](unsigned char c) {
    return std::islower(c) || std::isdigit(c) || c == '_' || c == '-';
  });
}

std::string format_target_command(const TargetCommand& raw) {
  const TargetCommand cmd = normalized(raw);
  if (!is_valid_object_name(cmd.object_name)) throw InvariantError("invalid object name '" + cmd.object_name + "'");
  if (!is_known_color(cmd.color)) throw InvariantError("unknown color '" + cmd.color + "'");
  if (!is_valid_user_id(cmd.requesting_user)) throw InvariantError("invalid user id '" + cmd.requesting_user + "'");
  std::string out = "TARGET: ";
  out += cmd.object_name;
  out += " - ";
  out += cmd.color;
  out += ' ';
  out += to_string(cmd.category);
  out += " FOR ";
  out += cmd.requesting_user;
  return out;
}

// ---------------------------------------------------------------------------
// Prompt protocol helpers

namespace protocol {

std::string render(std::string_view tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const auto close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string key(tpl.substr(i + 1, close - i - 1));
        const bool is_slot = !key.empty() && std::all_of(key.begin(), key.end(), [](unsigned char c) {
          return std::islower(c) || std::isdigit(c) || c == '_';
        });
        if (is_slot) {
          auto it = values.find(key);
          if (it == values.end()) throw InvariantError("template slot {" + key + "} has no value");
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tpl[i++]);
  }
  return out;
}

std::optional<std::string> extract_environment(std::string_view text) {
  const auto begin = text.find(kEnvironmentBegin);
  if (begin == std::string_view::npos) return std::nullopt;
  const auto start = begin + kEnvironmentBegin.size();
  const auto end = text.find(kEnvironmentEnd, start);
  if (end == std::string_view::npos) return std::nullopt;
  std::string body(text.substr(start, end - start));
  const auto first = body.find_first_not_of(" \t\r\n");
  const auto last = body.find_last_not_of(" \t\r\n");
  if (first == std::string::npos) return std::string{};
  return body.substr(first, last - first + 1);
}

std::optional<UserTurn> parse_user_turn(std::string_view text) {
  static const std::regex re(R"(^\[([A-Za-z0-9_-]+)\]:\s*([\s\S]*)$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(text.begin(), text.end(), m, re)) return std::nullopt;
  return UserTurn{m[1].str(), m[2].str()};
}

}  // namespace protocol

}  // namespace walle
