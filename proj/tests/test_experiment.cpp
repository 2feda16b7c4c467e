#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "normsgame/analysis.hpp"
#include "normsgame/experiment.hpp"
#include "temp_dir.hpp"

using namespace normsgame;
using namespace normsgame::experiment;
using nlohmann::json;

namespace {

RunConfig short_evolution(const testsupport::TempDir& dir, const std::string& sub, int epochs = 6) {
  auto c = defaults_for(Experiment::TraitEvolution);
  c.epochs = epochs;
  c.rounds_per_epoch = 2;
  c.metanorm = true;
  c.out = dir.str(sub);
  return c;
}

RunConfig stub_personas(const testsupport::TempDir& dir, const std::string& sub) {
  auto c = defaults_for(Experiment::PersonaEvolution);
  c.trials = 1;
  c.epochs = 2;
  c.rounds_per_epoch = 1;
  c.persona_pool_size = 7;
  c.out = dir.str(sub);
  return c;
}

int count_type(const std::string& text, const std::string& type) {
  int n = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) n += json::parse(line).at("type") == type;
  return n;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("defaults per experiment") {
  const auto g = defaults_for(Experiment::TraitGroups);
  CHECK(g.game.max_discussion_turns == 21);
  CHECK(g.repetitions == 10);
  const auto t = defaults_for(Experiment::TraitEvolution);
  CHECK(t.epochs == 40);
  CHECK(t.rounds_per_epoch == 21);
  CHECK(t.game.max_discussion_turns == 7);
  const auto p = defaults_for(Experiment::PersonaEvolution);
  CHECK(p.trials == 5);
  CHECK(p.backend == agents::BackendKind::Model);
  CHECK(p.gateway.mode == gateway::Mode::Stub);
  for (auto e : {Experiment::TraitGroups, Experiment::TraitEvolution, Experiment::PersonaEvolution}) {
    CHECK(parse_experiment(to_string(e)) == e);
    CHECK_NOTHROW(defaults_for(e).validate());
  }
}

TEST_CASE("config JSON round-trips and rejects unknown keys") {
  auto c = defaults_for(Experiment::TraitEvolution);
  c.seed = 42;
  c.epochs = 3;
  c.gateway.chat_model = "some-model";
  const auto j = json::parse(to_json(c).dump());
  CHECK_FALSE(j.contains("out"));
  const auto back = apply_json(j, defaults_for(Experiment::TraitGroups));
  CHECK(to_json(back).dump() == to_json(c).dump());

  CHECK_THROWS_AS(apply_json(json{{"epochz", 3}}, c), ConfigError);
  CHECK_THROWS_AS(apply_json(json{{"gateway", {{"api_key", "sk-x"}}}}, c), ConfigError);
  CHECK_THROWS_AS(apply_json(json{{"game", {{"rng_seed", 1}}}}, c), ConfigError);
}

TEST_CASE("validation") {
  auto c = defaults_for(Experiment::TraitEvolution);
  c.game.n_agents = 6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = defaults_for(Experiment::TraitGroups);
  c.backend = agents::BackendKind::Replay;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = defaults_for(Experiment::PersonaEvolution);
  c.backend = agents::BackendKind::Parametric;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = defaults_for(Experiment::PersonaEvolution);
  c.persona_pool_size = 6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("units, run ids and seeds") {
  auto g = defaults_for(Experiment::TraitGroups);
  g.trials = 2;
  const auto units = units_of(g);
  REQUIRE(units.size() == 8);
  CHECK(units[0].relative_log.generic_string() == "trial_0/lowV-lowB/runlog.jsonl");
  CHECK(run_id_of(g, units[7]) == "trait-groups-s1-t1-highV-highB");
  auto e = defaults_for(Experiment::TraitEvolution);
  CHECK(units_of(e).front().relative_log.generic_string() == "trial_0/runlog.jsonl");
  CHECK_FALSE(needs_gateway(e));
  CHECK(needs_gateway(defaults_for(Experiment::PersonaEvolution)));
}

TEST_CASE("same config twice gives identical trees, in any output directory") {
  testsupport::TempDir dir;
  auto a = defaults_for(Experiment::TraitGroups);
  a.repetitions = 2;
  a.out = dir.str("a");
  auto b = a;
  b.out = dir.str("b");
  execute(a);
  execute(b);
  CHECK(testsupport::tree_of(dir.path() / "a") == testsupport::tree_of(dir.path() / "b"));
  auto c = a;
  c.seed = 2;
  c.out = dir.str("c");
  execute(c);
  CHECK(testsupport::tree_of(dir.path() / "a") != testsupport::tree_of(dir.path() / "c"));
}

TEST_CASE("a default-length trait evolution emits forty epoch records") {
  testsupport::TempDir dir;
  auto c = defaults_for(Experiment::TraitEvolution);
  c.rounds_per_epoch = 1;
  c.out = dir.str();
  execute(c);
  const auto text = testsupport::slurp(dir.path() / "trial_0/runlog.jsonl");
  CHECK(count_type(text, "epoch_end") == 40);
  CHECK(count_type(text, "run_end") == 1);
  const auto parsed = analysis::parse_runlog(text, "evo");
  for (const auto& e : parsed.epochs) {
    CHECK(e.population.size() == 7);
    CHECK(e.offspring.size() == 7);
    REQUIRE(e.mutation);
  }
  // Each generation is the previous epoch's offspring.
  for (std::size_t i = 1; i < parsed.epochs.size(); ++i) CHECK(parsed.epochs[i].population == parsed.epochs[i - 1].offspring);
  const auto csv = testsupport::slurp(dir.path() / "trial_0/epoch_metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
  const auto cp = json::parse(testsupport::slurp(dir.path() / "trial_0/checkpoint.json"));
  CHECK(cp.at("complete") == true);
  CHECK(cp.at("next_epoch") == 40);
}

TEST_CASE("an interrupted run resumes to the uninterrupted bytes") {
  testsupport::TempDir dir;
  const auto whole = short_evolution(dir, "whole");
  execute(whole);

  const auto part = short_evolution(dir, "part");
  ExecuteOptions halt;
  halt.halt_after_epochs = 2;
  execute(part, halt);
  const auto cp = json::parse(testsupport::slurp(dir.path() / "part/trial_0/checkpoint.json"));
  CHECK(cp.at("complete") == false);
  CHECK(cp.at("next_epoch") == 2);
  // Garbage past the checkpoint, as a crash mid-epoch would leave.
  {
    std::ofstream log(dir.path() / "part/trial_0/runlog.jsonl", std::ios::app);
    log << "{\"v\":1,\"run_id\":\"half a line";
  }
  ExecuteOptions resume;
  resume.resume = true;
  execute(part, resume);
  CHECK(testsupport::tree_of(dir.path() / "whole") == testsupport::tree_of(dir.path() / "part"));
}

TEST_CASE("resume refuses a different config") {
  testsupport::TempDir dir;
  auto c = short_evolution(dir, "r");
  ExecuteOptions halt;
  halt.halt_after_epochs = 1;
  execute(c, halt);
  c.seed = 99;
  ExecuteOptions resume;
  resume.resume = true;
  CHECK_THROWS(execute(c, resume));
}

TEST_CASE("persona evolution completes offline in stub mode") {
  testsupport::TempDir dir;
  const auto c = stub_personas(dir, "p");
  execute(c);
  const auto text = testsupport::slurp(dir.path() / "p/trial_0/runlog.jsonl");
  CHECK(count_type(text, "persona_pool") == 1);
  CHECK(count_type(text, "epoch_end") == 2);
  const auto parsed = analysis::parse_runlog(text, "p");
  for (const auto& e : parsed.epochs) {
    CHECK(e.rephrases.size() == 4);
    CHECK(e.embeddings.size() == 7);
  }
  CHECK_FALSE(std::filesystem::exists(dir.path() / "p/gateway_calls.jsonl"));
}

TEST_CASE("replay: identical, then a one-byte edit diverges at its line") {
  testsupport::TempDir dir;
  const auto c = short_evolution(dir, "r", 2);
  execute(c);
  const auto log = dir.path() / "r/trial_0/runlog.jsonl";
  const auto ok = replay_log(log);
  CHECK(ok.identical);
  CHECK(ok.first_divergent_line == 0);

  auto text = testsupport::slurp(log);
  // Flip one digit inside line 5.
  std::size_t pos = 0;
  for (int line = 1; line < 5; ++line) pos = text.find('\n', pos) + 1;
  pos = text.find("\"rng_cursor\":", pos) + 13;
  text[pos] = text[pos] == '9' ? '8' : static_cast<char>(text[pos] + 1);
  testsupport::spit(log, text);
  const auto bad = replay_log(log);
  CHECK_FALSE(bad.identical);
  CHECK(bad.first_divergent_line == 5);
}

TEST_CASE("replay of a stub persona run and of the shipped recorded session") {
  testsupport::TempDir dir;
  execute(stub_personas(dir, "p"));
  CHECK(replay_log(dir.path() / "p/trial_0/runlog.jsonl").identical);
  CHECK(replay_log(std::filesystem::path(NORMSGAME_FIXTURES) / "live_session/trial_0/runlog.jsonl").identical);
}

TEST_CASE("transcript printing") {
  testsupport::TempDir dir;
  auto g = defaults_for(Experiment::TraitGroups);
  g.repetitions = 1;
  g.out = dir.str();
  execute(g);
  std::ostringstream out;
  print_transcript(testsupport::slurp(dir.path() / "trial_0/highV-highB/runlog.jsonl"), out);
  CHECK(out.str().find("Alice") != std::string::npos);
}

}
