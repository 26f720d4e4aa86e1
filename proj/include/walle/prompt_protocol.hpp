#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace walle::protocol {

// Markers shared by the prompt templates and the scripted backend that reads them.
inline constexpr std::string_view kEnvironmentBegin = "ENVIRONMENT:";
inline constexpr std::string_view kEnvironmentEnd = "END ENVIRONMENT";
inline constexpr std::string_view kConfirmationTag = "[confirmation]";
inline constexpr std::string_view kFeedbackTag = "[feedback]";
inline constexpr std::string_view kAccepts = "accepts";
inline constexpr std::string_view kRejects = "rejects";
inline constexpr std::string_view kReportedFailure = "reported failure";

/// Replaces every {slot} in one pass. Substituted text is not rescanned.
/// Throws InvariantError when the template names a slot missing from `values`.
std::string render(std::string_view tpl, const std::map<std::string, std::string>& values);

/// JSON text between the environment markers, if present.
std::optional<std::string> extract_environment(std::string_view text);

struct UserTurn {
  std::string user;
  std::string text;
};

/// Parses "[user]: text" as produced by the interaction template.
std::optional<UserTurn> parse_user_turn(std::string_view text);

}  // namespace walle::protocol
