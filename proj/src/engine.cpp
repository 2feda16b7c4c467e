#include "normsgame/engine.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace normsgame::engine {

using nlohmann::json;
using nlohmann::ordered_json;
using protocol::Command;
using protocol::CommandKind;
using protocol::Phase;

void GameConfig::validate() const {
  if (n_agents < 2) throw std::invalid_argument("n_agents must be at least 2");
  if (max_discussion_turns < 0) throw std::invalid_argument("max_discussion_turns must be >= 0");
  if (!(base_variance >= 0.0) || !std::isfinite(base_variance)) {
    throw std::invalid_argument("base_variance must be a finite value >= 0");
  }
  if (!std::isfinite(base_mean)) throw std::invalid_argument("base_mean must be finite");
  if (cheat_bonus < 0 || punish_damage < 0 || punish_cost < 0) {
    throw std::invalid_argument("payoff magnitudes must be >= 0");
  }
}

double GameConfig::stddev() const {
  return variance_is_stddev ? base_variance : std::sqrt(base_variance);
}

agents::GameRules GameConfig::rules() const {
  return agents::GameRules{n_agents, base_mean, cheat_bonus, punish_damage, punish_cost};
}

ordered_json to_json(const GameConfig& c) {
  return ordered_json{{"n_agents", c.n_agents},
                      {"max_discussion_turns", c.max_discussion_turns},
                      {"base_mean", c.base_mean},
                      {"base_variance", c.base_variance},
                      {"cheat_bonus", c.cheat_bonus},
                      {"punish_damage", c.punish_damage},
                      {"punish_cost", c.punish_cost},
                      {"variance_is_stddev", c.variance_is_stddev},
                      {"rng_seed", c.rng_seed}};
}

GameConfig game_config_from_json(const json& j, GameConfig c) {
  static const std::set<std::string> known{"n_agents",      "max_discussion_turns", "base_mean",
                                           "base_variance", "cheat_bonus",          "punish_damage",
                                           "punish_cost",   "variance_is_stddev",   "rng_seed"};
  if (!j.is_object()) throw std::invalid_argument("game config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown game config key '" + key + "'");
  }
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("n_agents", c.n_agents);
  read("max_discussion_turns", c.max_discussion_turns);
  read("base_mean", c.base_mean);
  read("base_variance", c.base_variance);
  read("cheat_bonus", c.cheat_bonus);
  read("punish_damage", c.punish_damage);
  read("punish_cost", c.punish_cost);
  read("variance_is_stddev", c.variance_is_stddev);
  read("rng_seed", c.rng_seed);
  return c;
}

const LedgerEntry& RoundLedger::at(const std::string& agent) const {
  for (const auto& e : entries) {
    if (e.agent == agent) return e;
  }
  throw std::out_of_range("no ledger entry for " + agent);
}

ordered_json to_json(const Command& command) {
  ordered_json j{{"kind", protocol::to_string(command.kind)}};
  if (command.has_target()) j["target"] = command.target;
  return j;
}

Command command_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "test") return Command::test();
  if (kind == "cheat") return Command::cheat();
  if (kind == "punish") return Command::punish(j.at("target").get<std::string>());
  if (kind == "next") return Command::next(j.at("target").get<std::string>());
  throw std::invalid_argument("unknown command kind '" + kind + "'");
}

ordered_json to_json(const TestPhaseRecord& record) {
  ordered_json entries = ordered_json::array();
  for (const auto& e : record.entries) {
    entries.push_back(ordered_json{{"agent", e.agent},
                                   {"choice", e.choice == Choice::Cheat ? "cheat" : "test"},
                                   {"base_draw", e.base_draw},
                                   {"announced_score", e.announced_score},
                                   {"cheated", e.cheated}});
  }
  return ordered_json{{"entries", std::move(entries)}};
}

ordered_json to_json(const RoundLedger& ledger) {
  ordered_json entries = ordered_json::array();
  for (const auto& e : ledger.entries) {
    entries.push_back(ordered_json{{"agent", e.agent},
                                   {"base", e.base},
                                   {"cheat_bonus_total", e.cheat_bonus_total},
                                   {"punished_total", e.punished_total},
                                   {"punish_cost_total", e.punish_cost_total},
                                   {"score", e.score}});
  }
  return ordered_json{{"entries", std::move(entries)}};
}

double draw_test_score(Rng& rng, const GameConfig& config) {
  const double z = rng.normal();
  const double sd = config.stddev();
  return sd == 0.0 ? config.base_mean : config.base_mean + sd * z;
}

namespace {

std::vector<std::string> roster_of(std::span<Participant> agents) {
  std::vector<std::string> names;
  names.reserve(agents.size());
  for (const auto& a : agents) names.push_back(a.name);
  return names;
}

void check_participants(std::span<Participant> agents, const GameConfig& config) {
  config.validate();
  if (static_cast<int>(agents.size()) != config.n_agents) {
    throw std::invalid_argument("expected " + std::to_string(config.n_agents) + " agents, got " +
                                std::to_string(agents.size()));
  }
  for (const auto& a : agents) {
    if (a.backend == nullptr) throw std::invalid_argument("agent " + a.name + " has no backend");
  }
  protocol::validate_roster(roster_of(agents));
}

struct Obtained {
  Command command;
  std::string utterance;
  std::string context_hash;
  int attempts = 0;
  bool fallback = false;
};

// Asks a backend for one command, re-prompting on parse failures. The
// fallback command is produced by `fallback` only when every attempt failed.
template <typename Fallback>
Obtained obtain_command(Participant& agent, agents::AgentContext ctx, Rng& rng, EventSink& sink,
                        Fallback fallback) {
  Obtained out;
  std::string reason;
  std::string detail;
  for (int attempt = 0; attempt <= kMaxReprompts; ++attempt) {
    ctx.attempt = attempt;
    out.attempts = attempt + 1;
    out.context_hash = agents::context_hash(ctx);
    try {
      out.utterance = agent.backend->respond(ctx);
    } catch (const agents::BackendFailure& e) {
      reason = "backend_failure";
      detail = e.what();
      break;
    }
    auto parsed = protocol::parse_utterance(out.utterance, ctx.roster, ctx.self_name, ctx.phase);
    if (auto* command = std::get_if<Command>(&parsed)) {
      out.command = *command;
      return out;
    }
    const auto& error = std::get<protocol::ParseError>(parsed);
    sink.emit(protocol::to_string(ctx.phase), "parse_failure",
              ordered_json{{"agent", agent.name},
                           {"attempt", attempt + 1},
                           {"error", protocol::to_string(error.kind)},
                           {"detail", error.detail},
                           {"utterance", out.utterance},
                           {"context_hash", out.context_hash}},
              rng.cursor());
    ctx.correction = protocol::reprompt_message(error, ctx.roster, ctx.phase);
    reason = "parse_failure";
    detail = std::string(protocol::to_string(error.kind));
  }
  out.command = fallback();
  out.fallback = true;
  sink.emit(protocol::to_string(ctx.phase), "fallback",
            ordered_json{{"agent", agent.name},
                         {"reason", reason},
                         {"detail", detail},
                         {"attempts", out.attempts},
                         {"command", to_json(out.command)}},
            rng.cursor());
  return out;
}

std::size_t index_of(const std::vector<std::string>& roster, const std::string& name) {
  for (std::size_t i = 0; i < roster.size(); ++i) {
    if (roster[i] == name) return i;
  }
  throw std::logic_error("name not in roster: " + name);
}

}  // namespace

TestPhaseRecord run_test_phase(std::span<Participant> agents, const GameConfig& config, Rng& rng,
                               EventSink& sink) {
  check_participants(agents, config);
  const auto roster = roster_of(agents);
  TestPhaseRecord record;
  for (auto& agent : agents) {
    agents::AgentContext ctx;
    ctx.phase = Phase::Test;
    ctx.self_name = agent.name;
    ctx.self_persona = agent.persona;
    ctx.rules = config.rules();
    ctx.roster = roster;
    const auto obtained = obtain_command(agent, ctx, rng, sink, [] { return Command::test(); });

    TestPhaseEntry entry;
    entry.agent = agent.name;
    entry.choice = obtained.command.kind == CommandKind::Cheat ? Choice::Cheat : Choice::Test;
    entry.cheated = entry.choice == Choice::Cheat;
    entry.fallback = obtained.fallback;
    entry.base_draw = draw_test_score(rng, config);
    entry.announced_score =
        entry.cheated ? entry.base_draw + static_cast<double>(config.cheat_bonus) : entry.base_draw;
    sink.emit("test", "choice",
              ordered_json{{"agent", agent.name},
                           {"utterance", obtained.utterance},
                           {"command", to_json(obtained.command)},
                           {"attempts", obtained.attempts},
                           {"fallback", obtained.fallback},
                           {"context_hash", obtained.context_hash}},
              rng.cursor());
    record.entries.push_back(std::move(entry));
  }
  sink.emit("test", "announcement", to_json(record), rng.cursor());
  return record;
}

std::vector<DiscussionEvent> run_discussion_phase(std::span<Participant> agents,
                                                  const TestPhaseRecord& test_record,
                                                  const GameConfig& config, Rng& rng,
                                                  EventSink& sink) {
  check_participants(agents, config);
  const auto roster = roster_of(agents);
  const auto n = roster.size();
  std::vector<DiscussionEvent> events;
  if (config.max_discussion_turns == 0) return events;

  std::vector<agents::AnnouncementEntry> announcement;
  for (const auto& e : test_record.entries) {
    announcement.push_back({e.agent, e.announced_score, e.cheated});
  }
  std::vector<agents::TranscriptEntry> transcript;
  std::vector<agents::PunishmentRecord> punishments;

  auto uniform_other = [&](std::size_t excluded) {
    std::size_t pick = rng.uniform_index(n - 1);
    return pick >= excluded ? pick + 1 : pick;
  };

  std::size_t speaker = rng.uniform_index(n);
  for (int turn = 0; turn < config.max_discussion_turns; ++turn) {
    auto& agent = agents[speaker];
    agents::AgentContext ctx;
    ctx.phase = Phase::Discussion;
    ctx.self_name = agent.name;
    ctx.self_persona = agent.persona;
    ctx.rules = config.rules();
    ctx.roster = roster;
    ctx.announcement = announcement;
    ctx.transcript = transcript;
    ctx.punishments = punishments;
    const auto obtained = obtain_command(agent, std::move(ctx), rng, sink, [&] {
      return Command::next(roster[uniform_other(speaker)]);
    });

    DiscussionEvent event;
    event.turn_index = turn;
    event.speaker = agent.name;
    event.utterance = obtained.utterance;
    event.command = obtained.command;
    event.fallback = obtained.fallback;
    std::size_t next = 0;
    if (obtained.command.kind == CommandKind::Punish) {
      event.punish_applied = PunishApplied{obtained.command.target, config.punish_damage, config.punish_cost};
      punishments.push_back({agent.name, obtained.command.target});
      next = uniform_other(speaker);
    } else {
      next = index_of(roster, obtained.command.target);
    }
    event.next_speaker = roster[next];

    ordered_json punish = nullptr;
    if (event.punish_applied) {
      punish = ordered_json{{"target", event.punish_applied->target},
                            {"damage", event.punish_applied->damage},
                            {"cost", event.punish_applied->cost}};
    }
    sink.emit("discussion", "turn",
              ordered_json{{"turn_index", turn},
                           {"speaker", agent.name},
                           {"utterance", event.utterance},
                           {"command", to_json(event.command)},
                           {"punish_applied", std::move(punish)},
                           {"next_speaker", event.next_speaker},
                           {"attempts", obtained.attempts},
                           {"fallback", obtained.fallback},
                           {"context_hash", obtained.context_hash}},
              rng.cursor());
    transcript.push_back({agent.name, event.utterance, event.command});
    events.push_back(std::move(event));
    speaker = next;
  }
  return events;
}

RoundLedger settle_payoffs(const GameConfig& config, const TestPhaseRecord& test_record,
                           std::span<const DiscussionEvent> events) {
  RoundLedger ledger;
  for (const auto& t : test_record.entries) {
    LedgerEntry e;
    e.agent = t.agent;
    e.base = t.base_draw;
    e.cheat_bonus_total = t.cheated ? config.cheat_bonus : 0;
    ledger.entries.push_back(std::move(e));
  }
  auto find = [&](const std::string& name) -> LedgerEntry& {
    for (auto& e : ledger.entries) {
      if (e.agent == name) return e;
    }
    throw std::invalid_argument("event names unknown agent " + name);
  };
  for (const auto& ev : events) {
    if (!ev.punish_applied) continue;
    find(ev.punish_applied->target).punished_total -= ev.punish_applied->damage;
    find(ev.speaker).punish_cost_total -= ev.punish_applied->cost;
  }
  for (auto& e : ledger.entries) e.score = e.base + static_cast<double>(e.fixed_total());
  return ledger;
}

RoundResult play_round(std::span<Participant> agents, const GameConfig& config, EventSink& sink) {
  Rng rng(config.rng_seed);
  RoundResult result;
  result.test = run_test_phase(agents, config, rng, sink);
  result.events = run_discussion_phase(agents, result.test, config, rng, sink);
  result.ledger = settle_payoffs(config, result.test, result.events);
  for (const auto& t : result.test.entries) result.fallbacks += t.fallback ? 1 : 0;
  for (const auto& e : result.events) result.fallbacks += e.fallback ? 1 : 0;
  sink.emit("settle", "ledger", to_json(result.ledger), rng.cursor());
  return result;
}

}  // namespace normsgame::engine
