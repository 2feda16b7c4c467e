#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "normsgame/agents.hpp"

using namespace normsgame;
using namespace normsgame::agents;
using protocol::Command;
using protocol::CommandKind;
using protocol::Phase;

namespace {

AgentContext discussion_context(std::vector<std::string> roster, std::string self,
                                std::vector<std::string> cheaters) {
  AgentContext ctx;
  ctx.phase = Phase::Discussion;
  ctx.self_name = std::move(self);
  ctx.roster = std::move(roster);
  for (const auto& name : ctx.roster) {
    const bool cheated = std::find(cheaters.begin(), cheaters.end(), name) != cheaters.end();
    ctx.announcement.push_back({name, cheated ? 80.0 : 50.0, cheated});
  }
  return ctx;
}

void say(AgentContext& ctx, const std::string& speaker, const Command& c) {
  ctx.transcript.push_back({speaker, protocol::render_command(c), c});
  if (c.kind == CommandKind::Punish) ctx.punishments.push_back({speaker, c.target});
}

// Non-punishers straight from the definition: spoke after the announcement,
// issued no punish, is not self, is not a cheater self already targeted, and
// someone cheated this round.
std::vector<std::string> non_punishers_oracle(const AgentContext& ctx) {
  std::vector<std::string> out;
  bool anyone_cheated = false;
  for (const auto& a : ctx.announcement) anyone_cheated = anyone_cheated || a.cheated;
  if (!anyone_cheated) return out;
  for (const auto& name : ctx.roster) {
    if (name == ctx.self_name) continue;
    bool spoke = false;
    bool punished = false;
    for (const auto& t : ctx.transcript) {
      if (t.speaker != name) continue;
      spoke = true;
      punished = punished || t.command.kind == CommandKind::Punish;
    }
    bool cheater = false;
    for (const auto& a : ctx.announcement) cheater = cheater || (a.name == name && a.cheated);
    bool targeted = false;
    for (const auto& p : ctx.punishments) targeted = targeted || (p.actor == ctx.self_name && p.target == name);
    if (spoke && !punished && !(cheater && targeted)) out.push_back(name);
  }
  return out;
}

}  // namespace

TEST_SUITE("agents") {

TEST_CASE("trait scores live on 1..7") {
  CHECK_NOTHROW(TraitScore(1));
  CHECK_NOTHROW(TraitScore(7));
  CHECK_THROWS_AS(TraitScore(0), std::invalid_argument);
  CHECK_THROWS_AS(TraitScore(8), std::invalid_argument);
}

TEST_CASE("parametric cheating follows boldness/7") {
  for (int b = 1; b <= 7; ++b) {
    Rng rng(500 + b);
    constexpr int n = 14000;
    int cheats = 0;
    for (int i = 0; i < n; ++i) cheats += parametric_test_decision(TraitScore(b), rng) == Command::cheat() ? 1 : 0;
    const double p = b / 7.0;
    CHECK(std::abs(cheats - n * p) <= 5 * std::sqrt(n * p * (1 - p)) + 1e-9);
  }
}

TEST_CASE("no cheaters, metanorm off: always NEXT to someone else") {
  const auto ctx = discussion_context({"A", "B", "C"}, "A", {});
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto c = parametric_discussion_decision(TraitScore(7), ctx, false, rng);
    CHECK(c.kind == CommandKind::Next);
    CHECK(c.target != "A");
  }
}

TEST_CASE("metanorm: lone eligible non-punisher is punished at V=7") {
  // A and B cheated; self (D) already punished both. C spoke without punishing.
  auto ctx = discussion_context({"A", "B", "C", "D"}, "D", {"A", "B"});
  say(ctx, "D", Command::punish("A"));
  say(ctx, "C", Command::next("D"));
  say(ctx, "D", Command::punish("B"));
  say(ctx, "A", Command::next("D"));
  // A spoke without punishing but is a cheater D already targeted, so only C qualifies.
  CHECK(unpunished_cheaters(ctx).empty());
  CHECK(non_punishers(ctx) == std::vector<std::string>{"C"});
  Rng rng(3);
  for (int i = 0; i < 50; ++i) CHECK(parametric_discussion_decision(TraitScore(7), ctx, true, rng) == Command::punish("C"));
  for (int i = 0; i < 50; ++i) CHECK(parametric_discussion_decision(TraitScore(7), ctx, false, rng).kind == CommandKind::Next);
}

TEST_CASE("non-punisher set equals a brute-force recomputation") {
  Rng rng(8);
  const std::vector<std::string> roster{"A", "B", "C", "D", "E", "F", "G"};
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::string> cheaters;
    for (const auto& n : roster) {
      if (rng.bernoulli_ratio(2, 7)) cheaters.push_back(n);
    }
    auto ctx = discussion_context(roster, roster[rng.uniform_index(7)], cheaters);
    const auto turns = rng.uniform_index(15);
    for (std::uint64_t t = 0; t < turns; ++t) {
      const auto& speaker = roster[rng.uniform_index(7)];
      std::string target = roster[rng.uniform_index(7)];
      if (target == speaker) continue;
      say(ctx, speaker, rng.bernoulli_ratio(1, 3) ? Command::punish(target) : Command::next(target));
    }
    REQUIRE(non_punishers(ctx) == non_punishers_oracle(ctx));
    for (const auto& c : unpunished_cheaters(ctx)) CHECK(c != ctx.self_name);
  }
}

TEST_CASE("parametric replies always parse") {
  Rng rng(21);
  const std::vector<std::string> roster{"Alice", "Bob", "Carol", "Dave"};
  for (int i = 0; i < 500; ++i) {
    ParametricAgent agent(Traits{TraitScore(1 + int(rng.uniform_index(7))), TraitScore(1 + int(rng.uniform_index(7)))},
                          rng.bernoulli_ratio(1, 2), rng.next_u64());
    AgentContext test;
    test.phase = Phase::Test;
    test.self_name = roster[i % 4];
    test.roster = roster;
    CHECK(std::holds_alternative<Command>(protocol::parse_utterance(agent.respond(test), roster, test.self_name, Phase::Test)));
    auto disc = discussion_context(roster, roster[i % 4], {roster[(i + 1) % 4]});
    CHECK(std::holds_alternative<Command>(
        protocol::parse_utterance(agent.respond(disc), roster, disc.self_name, Phase::Discussion)));
  }
}

TEST_CASE("context text holds only the agent's own view") {
  auto ctx = discussion_context({"Alice", "Bob"}, "Alice", {"Bob"});
  ctx.self_persona = TextPersona{"A secret persona sentence"};
  say(ctx, "Bob", Command::next("Alice"));
  const auto text = serialize_context(ctx);
  CHECK(text.find("secret") == std::string::npos);
  CHECK(text.find("- Bob: 80.0 (cheated)") != std::string::npos);
  CHECK(text.find("[1] Bob: <next>Alice</next>") != std::string::npos);
  CHECK(context_hash(ctx) == context_hash(ctx));
  ctx.correction = "fix it";
  CHECK(serialize_context(ctx).find("could not be used") != std::string::npos);

  const auto request = build_model_request(ctx, "m", 0.0);
  REQUIRE(request.messages.size() == 2);
  CHECK(request.messages[0].role == "system");
  CHECK(request.messages[0].content.find("secret persona") != std::string::npos);
}

TEST_CASE("trait system prompt carries the 1-7 scores") {
  AgentContext ctx;
  ctx.self_name = "Alice";
  ctx.self_persona = Traits{TraitScore(6), TraitScore(2)};
  const auto sys = system_prompt(ctx);
  CHECK(sys.find("Vengefulness: 6 out of 7") != std::string::npos);
  CHECK(sys.find("Boldness: 2 out of 7") != std::string::npos);
}

TEST_CASE("scripted and replay backends") {
  ScriptedAgent s(std::vector<std::string>{"one"});
  AgentContext ctx;
  CHECK(s.respond(ctx) == "one");
  CHECK_THROWS_AS(s.respond(ctx), BackendFailure);

  auto fixtures = std::make_shared<UtteranceFixtures>();
  (*fixtures)[context_hash(ctx)] = "<test/>";
  ReplayAgent r(fixtures);
  CHECK(r.respond(ctx) == "<test/>");
  ctx.self_name = "someone else";
  CHECK_THROWS_AS(r.respond(ctx), BackendFailure);
}

TEST_CASE("model backend maps gateway failures to backend failures") {
  gateway::GatewayConfig cfg;
  cfg.mode = gateway::Mode::Replay;
  cfg.fixture_dir = "/nonexistent-fixture-dir";
  gateway::Gateway gw(cfg);
  ModelAgent agent(gw);
  AgentContext ctx;
  ctx.self_name = "Alice";
  ctx.roster = {"Alice", "Bob"};
  CHECK_THROWS_AS(agent.respond(ctx), BackendFailure);
}

TEST_CASE("trait sampling by level") {
  Rng rng(4);
  std::set<int> low, high, any;
  for (int i = 0; i < 3000; ++i) {
    low.insert(sample_trait(TraitLevel::Low, rng).value());
    high.insert(sample_trait(TraitLevel::High, rng).value());
    any.insert(sample_trait(TraitLevel::Uniform, rng).value());
  }
  CHECK(low == std::set<int>{1, 2, 3});
  CHECK(high == std::set<int>{5, 6, 7});
  CHECK(any.size() == 7);
}

TEST_CASE("profiles round-trip through JSON and validate") {
  AgentProfile a{3, "Alice", Traits{TraitScore(2), TraitScore(6)}, BackendKind::Parametric, 1};
  AgentProfile b{4, "Bob", TextPersona{"A calm player who avoids conflict and trusts others."}, BackendKind::Model, {}};
  for (const auto& p : {a, b}) CHECK(profile_from_json(nlohmann::json::parse(profile_to_json(p).dump())) == p);

  std::vector<AgentProfile> ok{a, b};
  CHECK(validate_profiles(ok).empty());
  std::string wordy;
  for (int i = 0; i < 50; ++i) wordy += "word ";
  std::vector<AgentProfile> long_one{AgentProfile{1, "Carol", TextPersona{wordy}, BackendKind::Model, {}}};
  CHECK(validate_profiles(long_one).size() == 1);
  std::vector<AgentProfile> empty{AgentProfile{1, "Carol", TextPersona{""}, BackendKind::Model, {}}};
  CHECK_THROWS_AS(validate_profiles(empty), std::invalid_argument);
  std::vector<AgentProfile> dup{a, AgentProfile{5, "ALICE", Traits{}, BackendKind::Parametric, {}}};
  CHECK_THROWS(validate_profiles(dup));
}

TEST_CASE("offline responder gives legal game replies") {
  Rng rng(12);
  const std::vector<std::string> roster{"Alice", "Bob", "Carol"};
  for (int i = 0; i < 300; ++i) {
    auto ctx = discussion_context(roster, roster[i % 3], {roster[(i + 1) % 3]});
    if (i % 2 == 0) {
      ctx.phase = Phase::Test;
      ctx.announcement.clear();
    }
    const auto reply = offline_responder(build_model_request(ctx, "m", 0.0));
    CHECK(std::holds_alternative<Command>(protocol::parse_utterance(reply, roster, ctx.self_name, ctx.phase)));
  }
}

}
