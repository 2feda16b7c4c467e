#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

// Tag-command protocol: agents embed exactly one command tag in free text.
//
//   test phase        <test/>   <cheat/>
//   discussion phase  <punish>NAME</punish>   <next>NAME</next>
//
// Tag names are case-insensitive, NAME is trimmed and matched
// case-insensitively against the roster, surrounding prose is ignored.
namespace normsgame::protocol {

enum class Phase { Test, Discussion };

enum class CommandKind { Test, Cheat, Punish, Next };

struct Command {
  CommandKind kind = CommandKind::Test;
  std::string target;  // canonical roster spelling; empty for Test/Cheat

  static Command test() { return {CommandKind::Test, {}}; }
  static Command cheat() { return {CommandKind::Cheat, {}}; }
  static Command punish(std::string target) { return {CommandKind::Punish, std::move(target)}; }
  static Command next(std::string target) { return {CommandKind::Next, std::move(target)}; }

  bool has_target() const { return kind == CommandKind::Punish || kind == CommandKind::Next; }

  friend bool operator==(const Command&, const Command&) = default;
};

enum class ParseErrorKind {
  NoCommand,
  MultipleCommands,
  UnknownTarget,
  SelfTarget,
  PhaseViolation,
  MalformedTag,
};

struct ParseError {
  ParseErrorKind kind;
  std::string detail;

  friend bool operator==(const ParseError&, const ParseError&) = default;
};

using ParseResult = std::variant<Command, ParseError>;

// Thrown by roster validation.
class RosterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string_view to_string(Phase phase);
std::string_view to_string(CommandKind kind);
std::string_view to_string(ParseErrorKind kind);

// Phase a command is legal in.
Phase phase_of(CommandKind kind);

// Rejects empty rosters, empty or untrimmed names, names containing '<', '>',
// control characters or line breaks, and names equal up to ASCII case.
void validate_roster(std::span<const std::string> roster);

// Total over all byte strings; a single linear scan.
ParseResult parse_utterance(std::string_view text, std::span<const std::string> roster,
                            std::string_view speaker, Phase phase);

// Canonical tag text; parse_utterance(render_command(c)) == c for valid c.
std::string render_command(const Command& command);

// Prompt-facing description of the legal commands for a phase.
std::string protocol_instructions(Phase phase, std::span<const std::string> roster,
                                  std::string_view speaker);

// Deterministic correction text sent back to an agent after a parse failure.
std::string reprompt_message(const ParseError& error, std::span<const std::string> roster,
                             Phase phase);

// ASCII case-insensitive equality.
bool iequals(std::string_view a, std::string_view b);

}  // namespace normsgame::protocol
