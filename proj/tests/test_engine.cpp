#include <doctest.h>

#include <algorithm>
#include <map>
#include <memory>
#include <sstream>

#include "normsgame/engine.hpp"

using namespace normsgame;
using namespace normsgame::engine;
using agents::AgentContext;
using agents::ScriptedAgent;
using protocol::Command;

namespace {

// Owns backends and the participant view over them.
struct Table {
  std::vector<std::unique_ptr<agents::AgentBackend>> backends;
  std::vector<Participant> seats;

  void add(const std::string& name, std::unique_ptr<agents::AgentBackend> backend) {
    backends.push_back(std::move(backend));
    seats.push_back({name, agents::Traits{}, backends.back().get()});
  }
};

// Records every event for inspection.
struct CaptureSink final : EventSink {
  struct Event {
    std::string phase, type;
    nlohmann::json payload;
    std::uint64_t cursor;
  };
  std::vector<Event> events;
  void emit(std::string_view phase, std::string_view type, nlohmann::ordered_json payload,
            std::uint64_t cursor) override {
    events.push_back({std::string(phase), std::string(type), nlohmann::json::parse(payload.dump()), cursor});
  }
  int count(const std::string& type) const {
    return static_cast<int>(std::count_if(events.begin(), events.end(), [&](const Event& e) { return e.type == type; }));
  }
};

GameConfig small_config(int n, int turns, std::uint64_t seed) {
  GameConfig c;
  c.n_agents = n;
  c.max_discussion_turns = turns;
  c.rng_seed = seed;
  return c;
}

// Independent recount of the fixed payoff components from the event list.
std::map<std::string, long> recount_fixed(const GameConfig& c, const TestPhaseRecord& test,
                                          const std::vector<DiscussionEvent>& events) {
  std::map<std::string, long> fixed;
  for (const auto& t : test.entries) fixed[t.agent] = t.cheated ? c.cheat_bonus : 0;
  for (const auto& e : events) {
    if (e.command.kind != protocol::CommandKind::Punish) continue;
    fixed[e.command.target] -= c.punish_damage;
    fixed[e.speaker] -= c.punish_cost;
  }
  return fixed;
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("cheater punished once who punishes twice scores exactly -50") {
  GameConfig c = small_config(4, 0, 0);
  TestPhaseRecord test;
  test.entries = {{"Alice", Choice::Cheat, 50.0, 80.0, true, false},
                  {"Bob", Choice::Test, 48.0, 48.0, false, false},
                  {"Carol", Choice::Test, 51.0, 51.0, false, false},
                  {"Dave", Choice::Test, 50.5, 50.5, false, false}};
  std::vector<DiscussionEvent> events(3);
  events[0].speaker = "Alice";
  events[0].command = Command::punish("Bob");
  events[0].punish_applied = PunishApplied{"Bob", 90, 20};
  events[1].speaker = "Bob";
  events[1].command = Command::punish("Alice");
  events[1].punish_applied = PunishApplied{"Alice", 90, 20};
  events[2].speaker = "Alice";
  events[2].command = Command::punish("Carol");
  events[2].punish_applied = PunishApplied{"Carol", 90, 20};
  const auto ledger = settle_payoffs(c, test, events);
  const auto& a = ledger.at("Alice");
  CHECK(a.cheat_bonus_total == 30);
  CHECK(a.punished_total == -90);
  CHECK(a.punish_cost_total == -40);
  CHECK(a.score == -50.0);
  CHECK(ledger.at("Bob").score == 48.0 - 90 - 20);
  CHECK(ledger.at("Dave").score == 50.5);
}

TEST_CASE("score draws: one normal per agent, mean and variance") {
  GameConfig c;
  Rng rng(17);
  constexpr int n = 20000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = draw_test_score(rng, c);
    sum += x;
    sq += x * x;
  }
  CHECK(rng.cursor() == 2u * n);
  const double mean = sum / n;
  const double var = (sq - n * mean * mean) / (n - 1);
  CHECK(mean == doctest::Approx(50.0).epsilon(0.002));
  CHECK(var == doctest::Approx(10.0).epsilon(0.05));

  c.variance_is_stddev = true;
  CHECK(c.stddev() == 10.0);
  c.base_variance = 0.0;
  CHECK(draw_test_score(rng, c) == 50.0);
}

TEST_CASE("scripted round end to end with a recount oracle") {
  Table t;
  t.add("Alice", std::make_unique<ScriptedAgent>([](const AgentContext& ctx) -> std::string {
    if (ctx.phase == protocol::Phase::Test) return "Risky. <cheat/>";
    return "<punish>Bob</punish>";
  }));
  t.add("Bob", std::make_unique<ScriptedAgent>([](const AgentContext& ctx) -> std::string {
    if (ctx.phase == protocol::Phase::Test) return "<test/>";
    return "Alice cheated! <punish>Alice</punish>";
  }));
  t.add("Carol", std::make_unique<ScriptedAgent>([](const AgentContext& ctx) -> std::string {
    if (ctx.phase == protocol::Phase::Test) return "<test/>";
    return "<next>Alice</next>";
  }));
  const GameConfig c = small_config(3, 12, 5);
  CaptureSink sink;
  const auto result = play_round(t.seats, c, sink);

  CHECK(result.test.entries[0].cheated);
  CHECK(result.test.entries[0].announced_score == result.test.entries[0].base_draw + 30);
  CHECK(result.events.size() == 12);
  const auto fixed = recount_fixed(c, result.test, result.events);
  for (const auto& e : result.ledger.entries) {
    CHECK(e.fixed_total() == fixed.at(e.agent));
    CHECK(e.score == e.base + static_cast<double>(fixed.at(e.agent)));
  }
  for (std::size_t i = 0; i < result.events.size(); ++i) {
    const auto& e = result.events[i];
    if (e.punish_applied) {
      CHECK(e.next_speaker != e.speaker);
    } else {
      CHECK(e.next_speaker == e.command.target);
    }
    if (i + 1 < result.events.size()) CHECK(result.events[i + 1].speaker == e.next_speaker);
  }
  CHECK(sink.count("choice") == 3);
  CHECK(sink.count("announcement") == 1);
  CHECK(sink.count("turn") == 12);
  CHECK(sink.events.back().type == "ledger");
}

TEST_CASE("test phase consumes two engine words per agent") {
  Table t;
  for (const char* name : {"A", "B", "C", "D", "E"}) {
    t.add(name, std::make_unique<agents::ParametricAgent>(agents::Traits{agents::TraitScore(3), agents::TraitScore(5)},
                                                          false, 77));
  }
  const GameConfig c = small_config(5, 0, 9);
  Rng rng(c.rng_seed);
  NullSink sink;
  run_test_phase(t.seats, c, rng, sink);
  CHECK(rng.cursor() == 10);
}

TEST_CASE("re-prompts then falls back to TEST") {
  Table t;
  t.add("Alice", std::make_unique<ScriptedAgent>(std::vector<std::string>{"hmm", "<test> oops", "<cheat/><test/>", "no"}));
  t.add("Bob", std::make_unique<ScriptedAgent>(std::vector<std::string>{"nope", "<cheat/>"}));
  const GameConfig c = small_config(2, 0, 1);
  Rng rng(1);
  CaptureSink sink;
  const auto record = run_test_phase(t.seats, c, rng, sink);
  CHECK(record.entries[0].fallback);
  CHECK(record.entries[0].choice == Choice::Test);
  CHECK_FALSE(record.entries[1].fallback);
  CHECK(record.entries[1].cheated);
  CHECK(sink.count("parse_failure") == 5);
  CHECK(sink.count("fallback") == 1);
  const auto choice = std::find_if(sink.events.begin(), sink.events.end(),
                                   [](const auto& e) { return e.type == "choice"; });
  CHECK(choice->payload.at("attempts") == 1 + kMaxReprompts);
}

TEST_CASE("backend failure falls back at once") {
  Table t;
  t.add("Alice", std::make_unique<ScriptedAgent>(std::vector<std::string>{}));
  t.add("Bob", std::make_unique<ScriptedAgent>(std::vector<std::string>{"<test/>"}));
  const GameConfig c = small_config(2, 3, 4);
  CaptureSink sink;
  const auto result = play_round(t.seats, c, sink);
  CHECK(result.test.entries[0].fallback);
  CHECK(sink.events[0].type == "fallback");
  CHECK(sink.events[0].payload.at("reason") == "backend_failure");
  CHECK(sink.events[0].payload.at("attempts") == 1);
  // Everyone is out of script in discussion: every turn is a NEXT fallback to someone else.
  for (const auto& e : result.events) {
    CHECK(e.fallback);
    CHECK(e.command.kind == protocol::CommandKind::Next);
    CHECK(e.command.target != e.speaker);
  }
}

TEST_CASE("equal seeds and replies give equal log bytes") {
  auto run = [](std::uint64_t seed) {
    Table t;
    for (int i = 0; i < 7; ++i) {
      t.add(std::string(1, static_cast<char>('A' + i)),
            std::make_unique<agents::ParametricAgent>(agents::Traits{agents::TraitScore(1 + i), agents::TraitScore(7 - i)},
                                                      true, derive_seed(seed, i + 1)));
    }
    std::ostringstream out;
    RunLog log("r", out);
    play_round(t.seats, small_config(7, 21, seed), log);
    return out.str();
  };
  CHECK(run(3) == run(3));
  CHECK(run(3) != run(4));
}

TEST_CASE("config validation and JSON") {
  GameConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_agents = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = GameConfig{};
  c.base_variance = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  GameConfig d;
  d.max_discussion_turns = 7;
  d.cheat_bonus = 31;
  const auto back = game_config_from_json(nlohmann::json::parse(to_json(d).dump()));
  CHECK(back.max_discussion_turns == 7);
  CHECK(back.cheat_bonus == 31);
  CHECK_THROWS_AS(game_config_from_json(nlohmann::json{{"bogus", 1}}), std::invalid_argument);
}

TEST_CASE("participant count must match the config") {
  Table t;
  t.add("A", std::make_unique<ScriptedAgent>(std::vector<std::string>{}));
  NullSink sink;
  CHECK_THROWS_AS(play_round(t.seats, small_config(2, 0, 0), sink), std::invalid_argument);
}

}
