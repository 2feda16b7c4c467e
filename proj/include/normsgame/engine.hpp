#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "normsgame/agents.hpp"
#include "normsgame/protocol.hpp"
#include "normsgame/rng.hpp"
#include "normsgame/runlog.hpp"

// One round of the Norms Game: test phase, announcement, discussion, payoff
// settlement. Given the config, the seed and the agents' replies, the round
// and its log are fully determined.
namespace normsgame::engine {

struct GameConfig {
  int n_agents = 7;
  int max_discussion_turns = 21;
  double base_mean = 50.0;
  double base_variance = 10.0;
  long cheat_bonus = 30;
  long punish_damage = 90;
  long punish_cost = 20;
  // Treat base_variance as a standard deviation instead of a variance.
  bool variance_is_stddev = false;
  std::uint64_t rng_seed = 0;

  // Throws std::invalid_argument.
  void validate() const;
  double stddev() const;
  agents::GameRules rules() const;
};

nlohmann::ordered_json to_json(const GameConfig& config);
// Fields missing from `j` keep their defaults; unknown keys are rejected.
GameConfig game_config_from_json(const nlohmann::json& j, GameConfig base = {});

// Re-prompts after a parse failure before the fallback command is used.
inline constexpr int kMaxReprompts = 3;

enum class Choice { Test, Cheat };

struct TestPhaseEntry {
  std::string agent;
  Choice choice = Choice::Test;
  double base_draw = 0.0;
  double announced_score = 0.0;
  bool cheated = false;
  bool fallback = false;
};

struct TestPhaseRecord {
  std::vector<TestPhaseEntry> entries;  // roster order
};

struct PunishApplied {
  std::string target;
  long damage = 0;
  long cost = 0;

  friend bool operator==(const PunishApplied&, const PunishApplied&) = default;
};

struct DiscussionEvent {
  int turn_index = 0;
  std::string speaker;
  std::string utterance;
  protocol::Command command;
  std::optional<PunishApplied> punish_applied;
  std::string next_speaker;
  bool fallback = false;
};

struct LedgerEntry {
  std::string agent;
  double base = 0.0;
  long cheat_bonus_total = 0;
  long punished_total = 0;    // <= 0
  long punish_cost_total = 0; // <= 0
  double score = 0.0;

  long fixed_total() const { return cheat_bonus_total + punished_total + punish_cost_total; }
};

struct RoundLedger {
  std::vector<LedgerEntry> entries;  // roster order

  const LedgerEntry& at(const std::string& agent) const;
};

struct Participant {
  std::string name;
  agents::Persona persona;
  agents::AgentBackend* backend = nullptr;
};

// Normal sample with mean base_mean and variance base_variance (or standard
// deviation base_variance when variance_is_stddev). Consumes exactly one
// Rng::normal() draw, i.e. two raw words.
double draw_test_score(Rng& rng, const GameConfig& config);

// Asks every agent for TEST or CHEAT in roster order, drawing each base score
// right after the agent's choice, then emits the announcement.
TestPhaseRecord run_test_phase(std::span<Participant> agents, const GameConfig& config, Rng& rng,
                               EventSink& sink);

// Turn-taking: the first speaker is uniform; NEXT hands the turn to its
// target; PUNISH applies damage and cost, and the next speaker is uniform
// over everyone except the punisher.
std::vector<DiscussionEvent> run_discussion_phase(std::span<Participant> agents,
                                                  const TestPhaseRecord& test_record,
                                                  const GameConfig& config, Rng& rng,
                                                  EventSink& sink);

// score = base + cheat bonus + punishments received + punishment costs. The
// three fixed components are summed as integers before adding the base.
RoundLedger settle_payoffs(const GameConfig& config, const TestPhaseRecord& test_record,
                           std::span<const DiscussionEvent> events);

struct RoundResult {
  TestPhaseRecord test;
  std::vector<DiscussionEvent> events;
  RoundLedger ledger;
  int fallbacks = 0;
};

// Full round with an engine generator seeded from config.rng_seed.
RoundResult play_round(std::span<Participant> agents, const GameConfig& config, EventSink& sink);

nlohmann::ordered_json to_json(const protocol::Command& command);
protocol::Command command_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const TestPhaseRecord& record);
nlohmann::ordered_json to_json(const RoundLedger& ledger);

}  // namespace normsgame::engine
