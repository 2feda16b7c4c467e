#include "normsgame/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "normsgame/analysis.hpp"
#include "normsgame/evolution.hpp"
#include "normsgame/rng.hpp"
#include "normsgame/runlog.hpp"

namespace normsgame::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using agents::AgentProfile;
using agents::BackendKind;
using agents::TraitLevel;
using agents::Traits;

namespace {

constexpr int kCheckpointVersion = 1;
// Under a trial seed: stream 0 builds the initial population, epoch e uses e + 1.
constexpr std::uint64_t kInitialPopulationStream = 0;

const char* const kExperimentNames[] = {"trait-groups", "trait-evolution", "persona-evolution"};

bool is_evolution(Experiment e) { return e != Experiment::TraitGroups; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string seat_name(std::size_t seat) {
  if (seat < evolution::kSlotNames.size()) return evolution::kSlotNames[seat];
  return "Agent" + std::to_string(seat + 1);
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ConfigError("unknown config key " + where + key);
    }
  }
}

ordered_json gateway_to_json(const gateway::GatewayConfig& g) {
  return ordered_json{{"mode", gateway::to_string(g.mode)},
                      {"endpoint", g.endpoint},
                      {"chat_model", g.chat_model},
                      {"embedding_model", g.embedding_model},
                      {"temperature", g.temperature},
                      {"fixture_dir", g.fixture_dir.generic_string()},
                      {"embedding_dim", g.stub_embedding_dim},
                      {"api_key_env", g.api_key_env},
                      {"timeout_s", g.timeout.count()}};
}

gateway::GatewayConfig gateway_from_json(const json& j, gateway::GatewayConfig g) {
  reject_unknown(j,
                 {"mode", "endpoint", "chat_model", "embedding_model", "temperature", "fixture_dir",
                  "embedding_dim", "api_key_env", "timeout_s"},
                 "gateway.");
  if (j.contains("mode")) g.mode = gateway::parse_mode(j.at("mode").get<std::string>());
  take(j, "endpoint", g.endpoint);
  take(j, "chat_model", g.chat_model);
  take(j, "embedding_model", g.embedding_model);
  take(j, "temperature", g.temperature);
  if (j.contains("fixture_dir")) g.fixture_dir = j.at("fixture_dir").get<std::string>();
  take(j, "embedding_dim", g.stub_embedding_dim);
  take(j, "api_key_env", g.api_key_env);
  if (j.contains("timeout_s")) g.timeout = std::chrono::seconds(j.at("timeout_s").get<long>());
  return g;
}

ordered_json roster_json(const std::vector<AgentProfile>& roster) {
  ordered_json out = ordered_json::array();
  for (const auto& p : roster) out.push_back(agents::profile_to_json(p));
  return out;
}

// Everything one unit needs besides the log stream.
struct UnitEnv {
  const RunConfig& config;
  gateway::Gateway* gateway;
  std::shared_ptr<const agents::UtteranceFixtures> replay_fixtures;
};

evolution::BackendFactory make_factory(const UnitEnv& env) {
  return [&env](const AgentProfile& profile, std::uint64_t seed) -> std::unique_ptr<agents::AgentBackend> {
    switch (env.config.backend) {
      case BackendKind::Parametric: {
        const auto* traits = std::get_if<Traits>(&profile.persona);
        if (traits == nullptr) throw ConfigError("the parametric backend needs trait personas");
        return std::make_unique<agents::ParametricAgent>(*traits, env.config.metanorm, seed);
      }
      case BackendKind::Model:
        return std::make_unique<agents::ModelAgent>(*env.gateway);
      case BackendKind::Replay:
        return std::make_unique<agents::ReplayAgent>(env.replay_fixtures);
      case BackendKind::Scripted:
        break;
    }
    throw ConfigError("backend " + std::string(agents::to_string(env.config.backend)) +
                      " cannot be used for experiments");
  };
}

UnitEnv make_env(const RunConfig& config, gateway::Gateway* gateway) {
  UnitEnv env{config, gateway, nullptr};
  if (needs_gateway(config) && gateway == nullptr) throw ConfigError("this run needs a gateway");
  if (config.backend == BackendKind::Replay) {
    env.replay_fixtures =
        std::make_shared<agents::UtteranceFixtures>(agents::load_utterance_fixtures(config.replay_source));
  }
  return env;
}

ordered_json run_start_payload(const RunConfig& config, const RunUnit& unit) {
  ordered_json p{{"config", to_json(config)}, {"trial", unit.trial}};
  p["condition"] = unit.condition ? ordered_json(*unit.condition) : ordered_json(nullptr);
  p["log_path"] = unit.relative_log.generic_string();
  p["schema"] = {{"runlog", kRunLogVersion}, {"checkpoint", kCheckpointVersion}};
  return p;
}

std::uint64_t trial_seed(const RunConfig& config, int trial) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(trial));
}

void run_trait_groups_unit(const UnitEnv& env, const RunUnit& unit, RunLog& log) {
  const auto& config = env.config;
  const auto& conditions = trait_group_conditions();
  const auto it = std::find_if(conditions.begin(), conditions.end(),
                               [&](const Condition& c) { return c.label == unit.condition; });
  if (it == conditions.end()) throw ConfigError("unknown condition " + unit.condition.value_or(""));
  const auto condition_index = static_cast<std::uint64_t>(it - conditions.begin());
  const std::uint64_t condition_seed = derive_seed(trial_seed(config, unit.trial), condition_index);
  const auto factory = make_factory(env);

  log.emit("run", "run_start", run_start_payload(config, unit), 0);
  for (int rep = 0; rep < config.repetitions; ++rep) {
    const std::uint64_t round_seed = derive_seed(condition_seed, static_cast<std::uint64_t>(rep));
    Rng population_rng(derive_seed(round_seed, 0));
    std::vector<AgentProfile> roster;
    for (int seat = 0; seat < config.game.n_agents; ++seat) {
      AgentProfile p;
      p.id = static_cast<std::uint64_t>(rep * config.game.n_agents + seat + 1);
      p.name = seat_name(static_cast<std::size_t>(seat));
      const auto v = agents::sample_trait(it->vengefulness, population_rng);
      const auto b = agents::sample_trait(it->boldness, population_rng);
      p.persona = Traits{v, b};
      p.backend = config.backend;
      roster.push_back(std::move(p));
    }
    log.set_round(rep);
    log.emit("round", "round_start",
             ordered_json{{"repetition", rep},
                          {"seed", round_seed},
                          {"condition", it->label},
                          {"roster", roster_json(roster)}},
             population_rng.cursor());

    std::vector<std::unique_ptr<agents::AgentBackend>> backends;
    std::vector<engine::Participant> participants;
    for (std::size_t seat = 0; seat < roster.size(); ++seat) {
      backends.push_back(factory(roster[seat], derive_seed(round_seed, seat + 1)));
      participants.push_back({roster[seat].name, roster[seat].persona, backends.back().get()});
    }
    engine::GameConfig game = config.game;
    game.rng_seed = round_seed;
    engine::play_round(participants, game, log);
  }
  log.set_round(std::nullopt);
  log.emit("run", "run_end", ordered_json{{"rounds", config.repetitions}}, 0);
}

struct EvolutionState {
  bool started = false;
  int next_epoch = 0;
  std::uint64_t next_id = 1;
  std::int64_t round_counter = 0;
  std::vector<AgentProfile> population;
};

std::vector<AgentProfile> initial_population(const UnitEnv& env, std::uint64_t seed, RunLog& log) {
  const auto& config = env.config;
  Rng rng(derive_seed(seed, kInitialPopulationStream));
  std::vector<AgentProfile> population(evolution::kPopulationSize);
  if (config.experiment == Experiment::TraitEvolution) {
    for (auto& p : population) {
      const auto v = agents::sample_trait(TraitLevel::Uniform, rng);
      const auto b = agents::sample_trait(TraitLevel::Uniform, rng);
      p.persona = Traits{v, b};
    }
  } else {
    const auto pool = evolution::generate_persona_pool(*env.gateway, static_cast<std::size_t>(config.persona_pool_size));
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Partial Fisher-Yates: the first seven slots are a uniform draw without replacement.
    for (std::size_t i = 0; i < evolution::kPopulationSize; ++i) {
      const std::size_t j = i + rng.uniform_index(order.size() - i);
      std::swap(order[i], order[j]);
    }
    order.resize(evolution::kPopulationSize);
    for (std::size_t i = 0; i < population.size(); ++i) population[i].persona = agents::TextPersona{pool[order[i]]};
    log.emit("run", "persona_pool", ordered_json{{"pool", pool}, {"selected", order}}, rng.cursor());
  }
  for (std::size_t i = 0; i < population.size(); ++i) {
    population[i].id = i + 1;
    population[i].backend = config.backend;
  }
  evolution::assign_slot_names(population);
  return population;
}

// Called after each epoch with the updated state; returning false stops the
// trial before its run_end event.
using EpochHook = std::function<bool(const evolution::EpochRecord&, const EvolutionState&)>;

bool run_evolution_unit(const UnitEnv& env, const RunUnit& unit, RunLog& log, EvolutionState state,
                        const EpochHook& hook) {
  const auto& config = env.config;
  const std::uint64_t seed = trial_seed(config, unit.trial);
  if (!state.started) {
    log.emit("run", "run_start", run_start_payload(config, unit), 0);
    state.population = initial_population(env, seed, log);
    state.next_id = evolution::kPopulationSize + 1;
    state.started = true;
  }
  evolution::IdAllocator ids{state.next_id};
  evolution::EpochContext ctx;
  ctx.game = config.game;
  ctx.rounds_per_epoch = config.rounds_per_epoch;
  ctx.regime = config.experiment == Experiment::TraitEvolution ? evolution::Regime::Traits
                                                               : evolution::Regime::Personas;
  ctx.factory = make_factory(env);
  ctx.gateway = env.gateway;
  ctx.log = &log;
  ctx.round_counter = &state.round_counter;
  ctx.ids = &ids;

  for (int epoch = state.next_epoch; epoch < config.epochs; ++epoch) {
    ctx.epoch_seed = derive_seed(seed, static_cast<std::uint64_t>(epoch) + 1);
    auto record = evolution::run_epoch(epoch, state.population, ctx);
    state.population = record.offspring;
    state.next_epoch = epoch + 1;
    state.next_id = ids.next;
    if (hook && !hook(record, state)) return false;
  }
  log.emit("run", "run_end", ordered_json{{"epochs", config.epochs}, {"rounds", state.round_counter}}, 0);
  return true;
}

std::string metrics_row(const evolution::EpochRecord& r) {
  std::ostringstream row;
  row << r.epoch << ',';
  if (r.regime == evolution::Regime::Traits) {
    double v = 0.0;
    double b = 0.0;
    for (const auto& p : r.population) {
      const auto& t = std::get<Traits>(p.persona);
      v += t.vengefulness.value();
      b += t.boldness.value();
    }
    const double n = static_cast<double>(r.population.size());
    row << analysis::format_number(v / n) << ',' << analysis::format_number(b / n) << ',';
  } else {
    row << ",,";
  }
  double total = 0.0;
  for (const auto& [id, payoff] : r.payoffs) total += payoff;
  const double mean_payoff = total / static_cast<double>(r.payoffs.size()) / static_cast<double>(r.rounds);
  row << r.cheat_count << ',' << r.punish_count << ',' << analysis::format_number(mean_payoff) << ',';
  if (!r.embeddings.empty()) row << analysis::format_number(analysis::embedding_stats(r.embeddings).variance);
  row << '\n';
  return row.str();
}

constexpr const char* kMetricsHeader =
    "epoch,mean_vengefulness,mean_boldness,cheat_count,punish_count,mean_payoff,embedding_variance\n";

ordered_json checkpoint_json(const RunConfig& config, const RunUnit& unit, const EvolutionState& state,
                             std::uintmax_t runlog_bytes, std::uintmax_t metrics_bytes, bool complete) {
  return ordered_json{{"v", kCheckpointVersion},
                      {"trial", unit.trial},
                      {"complete", complete},
                      {"next_epoch", state.next_epoch},
                      {"next_id", state.next_id},
                      {"round_counter", state.round_counter},
                      {"population", roster_json(state.population)},
                      {"runlog_bytes", runlog_bytes},
                      {"metrics_bytes", metrics_bytes},
                      {"config", to_json(config)}};
}

void log_note(const ExecuteOptions& options, const std::string& text) {
  if (options.diagnostics != nullptr) *options.diagnostics << text << '\n';
}

void execute_evolution_unit(const UnitEnv& env, const RunUnit& unit, const fs::path& root,
                            const ExecuteOptions& options) {
  const auto& config = env.config;
  const fs::path log_path = root / unit.relative_log;
  const fs::path dir = log_path.parent_path();
  const fs::path checkpoint_path = dir / "checkpoint.json";
  const fs::path metrics_path = dir / "epoch_metrics.csv";
  fs::create_directories(dir);

  EvolutionState state;
  std::uintmax_t log_bytes = 0;
  std::uintmax_t metrics_bytes = 0;
  if (options.resume && fs::exists(checkpoint_path)) {
    const json cp = json::parse(read_file(checkpoint_path));
    if (cp.at("v").get<int>() != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
    if (cp.at("config").dump() != json(to_json(config)).dump()) {
      throw ConfigError(checkpoint_path.string() + " was written with a different config");
    }
    if (cp.at("complete").get<bool>()) {
      log_note(options, "trial " + std::to_string(unit.trial) + " already complete");
      return;
    }
    state.started = true;
    state.next_epoch = cp.at("next_epoch").get<int>();
    state.next_id = cp.at("next_id").get<std::uint64_t>();
    state.round_counter = cp.at("round_counter").get<std::int64_t>();
    for (const auto& p : cp.at("population")) state.population.push_back(agents::profile_from_json(p));
    log_bytes = cp.at("runlog_bytes").get<std::uintmax_t>();
    metrics_bytes = cp.at("metrics_bytes").get<std::uintmax_t>();
    // Drop anything written after the checkpoint, e.g. a half-finished epoch.
    fs::resize_file(log_path, log_bytes);
    fs::resize_file(metrics_path, metrics_bytes);
    log_note(options, "trial " + std::to_string(unit.trial) + " resuming at epoch " +
                          std::to_string(state.next_epoch));
  } else {
    std::ofstream(log_path, std::ios::binary | std::ios::trunc);
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    metrics << kMetricsHeader;
    metrics_bytes = std::char_traits<char>::length(kMetricsHeader);
  }

  std::ofstream log_out(log_path, std::ios::binary | std::ios::app);
  std::ofstream metrics_out(metrics_path, std::ios::binary | std::ios::app);
  if (!log_out || !metrics_out) throw std::runtime_error("cannot open outputs in " + dir.string());
  RunLog log(run_id_of(config, unit), log_out);

  int epochs_this_session = 0;
  const EpochHook hook = [&](const evolution::EpochRecord& record, const EvolutionState& s) {
    metrics_out << metrics_row(record);
    metrics_out.flush();
    log_out.flush();
    if (!log_out || !metrics_out) throw std::runtime_error("write failed in " + dir.string());
    log_bytes = fs::file_size(log_path);
    metrics_bytes = fs::file_size(metrics_path);
    write_atomic(checkpoint_path, checkpoint_json(config, unit, s, log_bytes, metrics_bytes, false).dump(2) + "\n");
    ++epochs_this_session;
    return !(options.halt_after_epochs && epochs_this_session >= *options.halt_after_epochs);
  };

  const bool complete = run_evolution_unit(env, unit, log, state, hook);
  log_out.flush();
  if (!complete) {
    log_note(options, "trial " + std::to_string(unit.trial) + " halted after epoch " +
                          std::to_string(epochs_this_session));
    return;
  }
  // Final checkpoint marks the trial done so --resume skips it.
  json cp = json::parse(read_file(checkpoint_path));
  cp["complete"] = true;
  cp["runlog_bytes"] = fs::file_size(log_path);
  write_atomic(checkpoint_path, cp.dump(2) + "\n");
}

}  // namespace

std::string_view to_string(Experiment experiment) { return kExperimentNames[static_cast<int>(experiment)]; }

Experiment parse_experiment(std::string_view text) {
  for (int i = 0; i < 3; ++i) {
    if (text == kExperimentNames[i]) return static_cast<Experiment>(i);
  }
  throw ConfigError("unknown experiment '" + std::string(text) +
                    "' (expected trait-groups, trait-evolution or persona-evolution)");
}

void RunConfig::validate() const {
  try {
    game.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (rounds_per_epoch < 1) throw ConfigError("rounds_per_epoch must be at least 1");
  if (out.empty()) throw ConfigError("out must not be empty");
  if (gateway.temperature < 0.0) throw ConfigError("temperature must be non-negative");
  if (gateway.stub_embedding_dim < 1) throw ConfigError("embedding_dim must be at least 1");
  if (backend == BackendKind::Scripted) throw ConfigError("the scripted backend is for tests only");
  if (backend == BackendKind::Replay && replay_source.empty()) {
    throw ConfigError("the replay backend needs replay_source");
  }
  if (is_evolution(experiment) && game.n_agents != static_cast<int>(evolution::kPopulationSize)) {
    throw ConfigError("evolution experiments need n_agents = 7");
  }
  if (experiment == Experiment::PersonaEvolution) {
    if (backend == BackendKind::Parametric) {
      throw ConfigError("persona-evolution needs the model or replay backend");
    }
    if (persona_pool_size < static_cast<int>(evolution::kPopulationSize)) {
      throw ConfigError("persona_pool_size must be at least 7");
    }
  }
}

RunConfig defaults_for(Experiment experiment) {
  RunConfig c;
  c.experiment = experiment;
  switch (experiment) {
    case Experiment::TraitGroups:
      c.game.max_discussion_turns = 21;
      c.repetitions = 10;
      break;
    case Experiment::TraitEvolution:
      c.game.max_discussion_turns = 7;
      c.epochs = 40;
      c.rounds_per_epoch = 21;
      break;
    case Experiment::PersonaEvolution:
      c.game.max_discussion_turns = 7;
      c.epochs = 40;
      c.rounds_per_epoch = 21;
      c.trials = 5;
      c.backend = BackendKind::Model;
      break;
  }
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json game = engine::to_json(c.game);
  game.erase("rng_seed");
  return ordered_json{{"experiment", to_string(c.experiment)},
                      {"seed", c.seed},
                      {"backend", agents::to_string(c.backend)},
                      {"metanorm", c.metanorm},
                      {"trials", c.trials},
                      {"repetitions", c.repetitions},
                      {"epochs", c.epochs},
                      {"rounds_per_epoch", c.rounds_per_epoch},
                      {"persona_pool_size", c.persona_pool_size},
                      {"replay_source", c.replay_source},
                      {"game", std::move(game)},
                      {"gateway", gateway_to_json(c.gateway)}};
}

RunConfig apply_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"experiment", "seed", "backend", "metanorm", "trials", "repetitions", "epochs",
                  "rounds_per_epoch", "persona_pool_size", "replay_source", "out", "game", "gateway"},
                 "");
  try {
    if (j.contains("experiment")) c.experiment = parse_experiment(j.at("experiment").get<std::string>());
    take(j, "seed", c.seed);
    if (j.contains("backend")) c.backend = agents::parse_backend_kind(j.at("backend").get<std::string>());
    take(j, "metanorm", c.metanorm);
    take(j, "trials", c.trials);
    take(j, "repetitions", c.repetitions);
    take(j, "epochs", c.epochs);
    take(j, "rounds_per_epoch", c.rounds_per_epoch);
    take(j, "persona_pool_size", c.persona_pool_size);
    take(j, "replay_source", c.replay_source);
    take(j, "out", c.out);
    if (j.contains("game")) {
      if (j.at("game").contains("rng_seed")) throw ConfigError("game.rng_seed is derived from seed");
      c.game = engine::game_config_from_json(j.at("game"), c.game);
    }
    if (j.contains("gateway")) c.gateway = gateway_from_json(j.at("gateway"), c.gateway);
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

const std::array<Condition, 4>& trait_group_conditions() {
  static const std::array<Condition, 4> kConditions{{
      {"lowV-lowB", TraitLevel::Low, TraitLevel::Low},
      {"lowV-highB", TraitLevel::Low, TraitLevel::High},
      {"highV-lowB", TraitLevel::High, TraitLevel::Low},
      {"highV-highB", TraitLevel::High, TraitLevel::High},
  }};
  return kConditions;
}

std::vector<RunUnit> units_of(const RunConfig& config) {
  std::vector<RunUnit> units;
  for (int trial = 0; trial < config.trials; ++trial) {
    const fs::path trial_dir = "trial_" + std::to_string(trial);
    if (config.experiment == Experiment::TraitGroups) {
      for (const auto& c : trait_group_conditions()) {
        units.push_back({trial, c.label, trial_dir / c.label / "runlog.jsonl"});
      }
    } else {
      units.push_back({trial, std::nullopt, trial_dir / "runlog.jsonl"});
    }
  }
  return units;
}

std::string run_id_of(const RunConfig& config, const RunUnit& unit) {
  std::string id = std::string(to_string(config.experiment)) + "-s" + std::to_string(config.seed) + "-t" +
                   std::to_string(unit.trial);
  if (unit.condition) id += "-" + *unit.condition;
  return id;
}

bool needs_gateway(const RunConfig& config) {
  return config.backend == BackendKind::Model || config.experiment == Experiment::PersonaEvolution;
}

std::unique_ptr<gateway::Gateway> make_gateway(const RunConfig& config, const fs::path& out_root,
                                               std::optional<gateway::Mode> mode_override) {
  if (!needs_gateway(config)) return nullptr;
  gateway::GatewayConfig g = config.gateway;
  if (mode_override) g.mode = *mode_override;
  if (g.fixture_dir.empty()) {
    g.fixture_dir = out_root / "fixtures";
  } else if (g.fixture_dir.is_relative()) {
    g.fixture_dir = out_root / g.fixture_dir;
  }
  auto gw = std::make_unique<gateway::Gateway>(std::move(g));
  if (gw->mode() == gateway::Mode::Stub) gw->set_stub_responder(agents::offline_responder);
  return gw;
}

void execute(const RunConfig& config, const ExecuteOptions& options) {
  config.validate();
  const fs::path root = config.out;
  fs::create_directories(root);
  auto gw = make_gateway(config, root);

  std::ofstream calls_out;
  if (gw && (gw->mode() == gateway::Mode::Live || gw->mode() == gateway::Mode::Record)) {
    calls_out.open(root / "gateway_calls.jsonl", std::ios::binary | std::ios::app);
    gw->set_call_observer([&calls_out](const gateway::CallRecord& r) {
      ordered_json line{{"kind", r.kind},       {"hash", r.hash},
                        {"mode", gateway::to_string(r.mode)},
                        {"attempts", r.attempts}, {"latency_ms", r.latency_ms}};
      line["prompt_tokens"] = r.prompt_tokens ? ordered_json(*r.prompt_tokens) : ordered_json(nullptr);
      line["completion_tokens"] = r.completion_tokens ? ordered_json(*r.completion_tokens) : ordered_json(nullptr);
      line["retries"] = r.retry_log;
      calls_out << line.dump() << '\n';
      calls_out.flush();
    });
  }

  write_atomic(root / "config.json", to_json(config).dump(2) + "\n");
  const UnitEnv env = make_env(config, gw.get());
  for (const auto& unit : units_of(config)) {
    if (is_evolution(config.experiment)) {
      execute_evolution_unit(env, unit, root, options);
      continue;
    }
    const fs::path log_path = root / unit.relative_log;
    fs::create_directories(log_path.parent_path());
    std::ofstream out(log_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + log_path.string());
    RunLog log(run_id_of(config, unit), out);
    run_trait_groups_unit(env, unit, log);
    if (!out.flush()) throw std::runtime_error("write failed: " + log_path.string());
  }
}

std::string regenerate_log(const RunConfig& config, const RunUnit& unit, gateway::Gateway* gw) {
  config.validate();
  const UnitEnv env = make_env(config, gw);
  std::ostringstream out;
  RunLog log(run_id_of(config, unit), out);
  if (is_evolution(config.experiment)) {
    run_evolution_unit(env, unit, log, EvolutionState{}, nullptr);
  } else {
    run_trait_groups_unit(env, unit, log);
  }
  return out.str();
}

ReplayOutcome replay_log(const fs::path& log_path) {
  const std::string recorded = read_file(log_path);
  const auto first_end = recorded.find('\n');
  const LogEvent header = parse_event(std::string_view(recorded).substr(0, first_end));
  if (header.type != "run_start") throw LogFormatError(log_path.string() + ":1: expected run_start");
  const auto& p = header.payload;
  const RunConfig config = apply_json(p.at("config"), RunConfig{});
  RunUnit unit;
  unit.trial = p.at("trial").get<int>();
  if (!p.at("condition").is_null()) unit.condition = p.at("condition").get<std::string>();
  unit.relative_log = p.at("log_path").get<std::string>();

  // The output root is the log's directory with the relative path peeled off.
  fs::path root = fs::absolute(log_path).lexically_normal();
  for (auto it = unit.relative_log.begin(); it != unit.relative_log.end(); ++it) root = root.parent_path();

  std::optional<gateway::Mode> mode;
  if (config.gateway.mode == gateway::Mode::Live || config.gateway.mode == gateway::Mode::Record) {
    mode = gateway::Mode::Replay;
  }
  auto gw = make_gateway(config, root, mode);

  ReplayOutcome outcome;
  outcome.regenerated = regenerate_log(config, unit, gw.get());
  std::istringstream a(recorded);
  std::istringstream b(outcome.regenerated);
  std::string la;
  std::string lb;
  for (std::size_t line = 1;; ++line) {
    const bool has_a = static_cast<bool>(std::getline(a, la));
    const bool has_b = static_cast<bool>(std::getline(b, lb));
    if (!has_a && !has_b) break;
    if (has_a != has_b || la != lb) {
      outcome.first_divergent_line = line;
      outcome.recorded_line = has_a ? la : "<end of log>";
      outcome.regenerated_line = has_b ? lb : "<end of log>";
      return outcome;
    }
  }
  // Line-wise equal; a missing final newline still counts as a difference.
  if (recorded != outcome.regenerated) {
    outcome.first_divergent_line = static_cast<std::size_t>(std::count(recorded.begin(), recorded.end(), '\n')) + 1;
    outcome.recorded_line = "<no trailing newline>";
    outcome.regenerated_line = "";
    return outcome;
  }
  outcome.identical = true;
  return outcome;
}

void print_transcript(std::string_view text, std::ostream& out) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const LogEvent e = parse_event(line);
    const auto& p = e.payload;
    if (e.type == "run_start") {
      out << "run " << e.run_id << '\n';
    } else if (e.type == "round_start") {
      out << "\n== round " << e.round.value_or(0);
      if (p.contains("epoch")) out << " (epoch " << p.at("epoch").get<int>() << ')';
      if (p.contains("condition")) out << " [" << p.at("condition").get<std::string>() << ']';
      out << " ==\n";
    } else if (e.type == "choice") {
      out << p.at("agent").get<std::string>() << ": " << p.at("utterance").get<std::string>() << '\n';
    } else if (e.type == "announcement") {
      out << "-- scores:";
      for (const auto& a : p.at("entries")) {
        out << ' ' << a.at("agent").get<std::string>() << '=' << std::fixed << std::setprecision(1)
            << a.at("announced_score").get<double>() << std::defaultfloat;
      }
      out << '\n';
    } else if (e.type == "turn") {
      out << '[' << p.at("turn_index").get<int>() << "] " << p.at("speaker").get<std::string>() << ": "
          << p.at("utterance").get<std::string>() << '\n';
    } else if (e.type == "fallback") {
      out << "   (fallback for " << p.at("agent").get<std::string>() << ": "
          << p.at("reason").get<std::string>() << ")\n";
    } else if (e.type == "ledger") {
      out << "-- payoffs:";
      for (const auto& a : p.at("entries")) {
        out << ' ' << a.at("agent").get<std::string>() << '=' << std::fixed << std::setprecision(1)
            << a.at("score").get<double>() << std::defaultfloat;
      }
      out << '\n';
    } else if (e.type == "epoch_end") {
      out << "-- epoch " << p.at("epoch").get<int>() << " done\n";
    }
  }
}

}  // namespace normsgame::experiment
