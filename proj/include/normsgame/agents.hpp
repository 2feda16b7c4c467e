#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "normsgame/gateway.hpp"
#include "normsgame/protocol.hpp"
#include "normsgame/rng.hpp"

namespace normsgame::agents {

// Integer trait on the 1-7 scale.
class TraitScore {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 7;

  explicit TraitScore(int value);
  int value() const { return value_; }

  friend bool operator==(TraitScore, TraitScore) = default;
  friend auto operator<=>(TraitScore, TraitScore) = default;

 private:
  int value_;
};

struct Traits {
  TraitScore vengefulness{4};
  TraitScore boldness{4};

  friend bool operator==(const Traits&, const Traits&) = default;
};

// Free-text personality, about ten words.
struct TextPersona {
  std::string description;

  friend bool operator==(const TextPersona&, const TextPersona&) = default;
};

using Persona = std::variant<Traits, TextPersona>;

// Descriptions above this many words are accepted but flagged.
inline constexpr std::size_t kPersonaSoftWordCap = 40;

std::size_t word_count(std::string_view text);

enum class BackendKind { Parametric, Scripted, Replay, Model };

std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view text);

struct AgentProfile {
  std::uint64_t id = 0;
  std::string name;
  Persona persona;
  BackendKind backend = BackendKind::Parametric;
  std::optional<std::uint64_t> parent_id;

  friend bool operator==(const AgentProfile&, const AgentProfile&) = default;
};

// Throws std::invalid_argument for an invalid roster (see
// protocol::validate_roster) or an empty text persona. Returns warnings for
// text personas over the soft word cap.
std::vector<std::string> validate_profiles(std::span<const AgentProfile> profiles);

nlohmann::ordered_json persona_to_json(const Persona& persona);
Persona persona_from_json(const nlohmann::json& j);
nlohmann::ordered_json profile_to_json(const AgentProfile& profile);
AgentProfile profile_from_json(const nlohmann::json& j);

// Payoff parameters shown to agents in their rules text.
struct GameRules {
  int n_agents = 7;
  double base_mean = 50.0;
  long cheat_bonus = 30;
  long punish_damage = 90;
  long punish_cost = 20;
};

struct AnnouncementEntry {
  std::string name;
  double score = 0.0;
  bool cheated = false;
};

struct TranscriptEntry {
  std::string speaker;
  std::string utterance;
  protocol::Command command;
};

struct PunishmentRecord {
  std::string actor;
  std::string target;
};

// What one agent sees when asked to act. It holds the agent's own persona
// and nothing private about any other agent.
struct AgentContext {
  protocol::Phase phase = protocol::Phase::Test;
  std::string self_name;
  Persona self_persona;
  GameRules rules;
  std::vector<std::string> roster;
  std::vector<AnnouncementEntry> announcement;
  std::vector<TranscriptEntry> transcript;
  std::vector<PunishmentRecord> punishments;
  // Set on re-prompts after a parse failure.
  std::optional<std::string> correction;
  int attempt = 0;
};

// Deterministic user-message text for a context. Scores are shown with one
// decimal. The persona is not included; it belongs to the system prompt.
std::string serialize_context(const AgentContext& context);

// SHA-256 of serialize_context().
std::string context_hash(const AgentContext& context);

// A backend could not produce an utterance at all (transport failure,
// exhausted script, missing fixture). The engine substitutes a fallback.
class BackendFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AgentBackend {
 public:
  virtual ~AgentBackend() = default;
  virtual std::string respond(const AgentContext& context) = 0;
  virtual BackendKind kind() const = 0;
};

// Parametric decision rules. Each draw is a single uniform_index call.

// CHEAT with probability boldness/7.
protocol::Command parametric_test_decision(TraitScore boldness, Rng& rng);

// Cheaters from the announcement other than self that self has not punished
// this round, in roster order.
std::vector<std::string> unpunished_cheaters(const AgentContext& context);

// Agents who spoke this round, issued no punish command, are not self and are
// not cheaters self already punished, in roster order. Empty when nobody
// cheated.
std::vector<std::string> non_punishers(const AgentContext& context);

// With probability vengefulness/7 punish a random unpunished cheater; if no
// cheater is left and metanorm is on, with probability vengefulness/7 punish
// a random non-punisher; otherwise name a random other agent next.
protocol::Command parametric_discussion_decision(TraitScore vengefulness,
                                                 const AgentContext& context,
                                                 bool metanorm, Rng& rng);

class ParametricAgent final : public AgentBackend {
 public:
  ParametricAgent(Traits traits, bool metanorm, std::uint64_t seed)
      : traits_(traits), metanorm_(metanorm), rng_(seed) {}

  std::string respond(const AgentContext& context) override;
  BackendKind kind() const override { return BackendKind::Parametric; }

 private:
  Traits traits_;
  bool metanorm_;
  Rng rng_;
};

// Replies from a fixed list (in call order) or from a callback.
class ScriptedAgent final : public AgentBackend {
 public:
  using Script = std::function<std::string(const AgentContext&)>;

  explicit ScriptedAgent(std::vector<std::string> lines) : lines_(std::move(lines)) {}
  explicit ScriptedAgent(Script script) : script_(std::move(script)) {}

  std::string respond(const AgentContext& context) override;
  BackendKind kind() const override { return BackendKind::Scripted; }

 private:
  std::vector<std::string> lines_;
  std::size_t cursor_ = 0;
  Script script_;
};

// context hash -> utterance
using UtteranceFixtures = std::map<std::string, std::string>;

// Collects every (context_hash, utterance) pair recorded in a RunLog file.
UtteranceFixtures load_utterance_fixtures(const std::string& runlog_path);

// Serves recorded utterances by context hash; never performs I/O.
class ReplayAgent final : public AgentBackend {
 public:
  explicit ReplayAgent(std::shared_ptr<const UtteranceFixtures> fixtures)
      : fixtures_(std::move(fixtures)) {}

  std::string respond(const AgentContext& context) override;
  BackendKind kind() const override { return BackendKind::Replay; }

 private:
  std::shared_ptr<const UtteranceFixtures> fixtures_;
};

std::string system_prompt(const AgentContext& context);

gateway::ModelRequest build_model_request(const AgentContext& context, std::string model,
                                          double temperature);

// Asks the chat model; the raw reply is returned unparsed.
class ModelAgent final : public AgentBackend {
 public:
  explicit ModelAgent(gateway::Gateway& gateway) : gateway_(gateway) {}

  std::string respond(const AgentContext& context) override;
  BackendKind kind() const override { return BackendKind::Model; }

 private:
  gateway::Gateway& gateway_;
};

// Trait-group sampling: Low draws from {1,2,3}, High from {5,6,7},
// Uniform from {1..7}.
enum class TraitLevel { Low, High, Uniform };

std::string_view to_string(TraitLevel level);
TraitScore sample_trait(TraitLevel level, Rng& rng);

// Deterministic offline stand-in for the chat model, used with a STUB
// gateway. Game contexts get a legal command chosen from the request hash,
// rephrase requests get a light word substitution, persona generation
// requests get a description assembled from a fixed vocabulary.
std::string offline_responder(const gateway::ModelRequest& request);

}  // namespace normsgame::agents
