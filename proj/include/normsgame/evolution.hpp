#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "normsgame/agents.hpp"
#include "normsgame/engine.hpp"
#include "normsgame/gateway.hpp"
#include "normsgame/rng.hpp"
#include "normsgame/runlog.hpp"

// Generational selection over a fixed population of seven: the two best
// payoffs are doubled, the middle three kept, the bottom two dropped. In the
// trait regime one offspring then gets one trait redrawn; in the persona
// regime every doubled copy is rephrased by the language model.
namespace normsgame::evolution {

inline constexpr std::size_t kPopulationSize = 7;
inline constexpr int kRephraseMinWords = 5;
inline constexpr int kRephraseMaxWords = 20;

// Roster names by offspring slot.
inline constexpr std::array<const char*, kPopulationSize> kSlotNames{
    "Alice", "Bob", "Carol", "Dave", "Eve", "Frank", "Grace"};

class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class WrongRegime : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Regime { Traits, Personas };

std::string_view to_string(Regime regime);

using Payoff = std::pair<std::uint64_t, double>;  // agent id, payoff

struct Selection {
  std::vector<std::uint64_t> ranking;  // best first
  std::array<std::uint64_t, 2> doubled{};
  std::array<std::uint64_t, 3> kept{};
  std::array<std::uint64_t, 2> eliminated{};
};

// Sorts by payoff descending, ties by ascending id. Needs exactly seven
// entries with distinct ids and finite payoffs.
Selection rank_and_select(std::span<const Payoff> payoffs);

struct MutationRecord {
  std::uint64_t target_id = 0;
  std::size_t slot = 0;
  std::string trait;  // "vengefulness" | "boldness"
  int old_value = 0;
  int new_value = 0;
};

struct Mutated {
  std::vector<agents::AgentProfile> population;
  MutationRecord mutation;
};

// One uniform slot, one uniform trait, and a new value drawn uniformly from
// the six values in 1..7 other than the current one, so exactly one scalar
// changes. Draws: slot, trait, value.
Mutated mutate_trait(std::vector<agents::AgentProfile> population, Rng& rng);

struct RephraseResult {
  std::string text;
  int attempts = 0;
  std::optional<std::string> fallback;  // reason when the parent text was kept
};

gateway::ModelRequest rephrase_request(std::string_view persona, std::string_view model,
                                       std::string_view correction = {});

// Asks for a rephrasing of 5-20 words, re-prompting up to three times; any
// gateway failure or persistent out-of-range length keeps the parent text.
RephraseResult rephrase_persona(const agents::TextPersona& persona, gateway::Gateway& gateway);

// Asks for `size` fresh personas, request k carrying its index so each
// request is distinct at temperature 0.
std::vector<std::string> generate_persona_pool(gateway::Gateway& gateway, std::size_t size);

struct RephraseRecord {
  std::uint64_t parent_id = 0;
  std::uint64_t child_id = 0;
  std::string before;
  std::string after;
  int attempts = 0;
  std::optional<std::string> fallback;
};

struct EpochRecord {
  int epoch = 0;
  Regime regime = Regime::Traits;
  std::vector<agents::AgentProfile> population;  // the generation that played
  std::vector<Payoff> payoffs;                   // summed over the epoch's rounds
  Selection selection;
  std::optional<MutationRecord> mutation;
  std::vector<RephraseRecord> rephrases;
  std::vector<agents::AgentProfile> offspring;
  int rounds = 0;
  int cheat_count = 0;
  int punish_count = 0;
  int turn_count = 0;
  int fallback_count = 0;
  std::string embedding_model;
  std::vector<std::vector<double>> embeddings;  // persona regime, one per population member
};

nlohmann::ordered_json to_json(const EpochRecord& record);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

// Creates the backend for one agent in one round; `seed` is the agent's
// private stream for that round.
using BackendFactory =
    std::function<std::unique_ptr<agents::AgentBackend>(const agents::AgentProfile&, std::uint64_t seed)>;

// Monotone id source for offspring.
struct IdAllocator {
  std::uint64_t next = 1;
  std::uint64_t allocate() { return next++; }
};

struct EpochContext {
  engine::GameConfig game;
  int rounds_per_epoch = 1;
  Regime regime = Regime::Traits;
  std::uint64_t epoch_seed = 0;
  BackendFactory factory;
  gateway::Gateway* gateway = nullptr;  // required for the persona regime
  RunLog* log = nullptr;
  std::int64_t* round_counter = nullptr;  // global round index in the log
  IdAllocator* ids = nullptr;
  std::string round_label;  // copied into round_start payloads when non-empty
};

// Derived stream labels under an epoch seed.
inline constexpr std::uint64_t kMutationStream = 1'000'000;

// Plays the epoch's rounds, selects, varies and logs an epoch_end event.
// Round r of the epoch uses derive_seed(epoch_seed, r); agent seat s in that
// round uses derive_seed(round_seed, s + 1).
EpochRecord run_epoch(int epoch_index, const std::vector<agents::AgentProfile>& population,
                      EpochContext& ctx);

// Seven-agent roster with the slot names.
void assign_slot_names(std::vector<agents::AgentProfile>& population);

}  // namespace normsgame::evolution
