#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "normsgame/analysis.hpp"
#include "normsgame/experiment.hpp"
#include "normsgame/gateway.hpp"
#include "normsgame/runlog.hpp"

namespace normsgame::cli {

namespace fs = std::filesystem;
using experiment::ConfigError;
using experiment::Experiment;
using experiment::RunConfig;

namespace {

struct RunFlags {
  std::optional<std::string> experiment;
  std::optional<std::string> backend;
  std::optional<std::string> gateway_mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> rounds_per_epoch;
  std::optional<int> turns;
  std::optional<int> trials;
  std::optional<int> repetitions;
  std::optional<int> pool_size;
  std::optional<std::string> out;
  std::optional<std::string> config;
  std::optional<std::string> endpoint;
  std::optional<std::string> fixture_dir;
  std::optional<std::string> chat_model;
  std::optional<std::string> embedding_model;
  std::optional<std::string> replay_source;
  std::optional<bool> metanorm;
  bool resume = false;
  std::optional<int> halt_after;
};

void add_run_flags(CLI::App& cmd, RunFlags& f, bool evolve) {
  cmd.add_option("--experiment", f.experiment,
                 evolve ? "trait-evolution | persona-evolution" : "trait-groups");
  cmd.add_option("--backend", f.backend, "parametric | model | replay");
  cmd.add_option("--gateway-mode", f.gateway_mode, "live | record | replay | stub");
  cmd.add_option("--seed", f.seed, "master seed");
  cmd.add_option("--turns", f.turns, "discussion turns per round");
  cmd.add_option("--trials", f.trials, "independent trials");
  cmd.add_option("--out", f.out, "output directory");
  cmd.add_option("--config", f.config, "JSON config file; flags override it");
  cmd.add_option("--endpoint", f.endpoint, "chat/embedding service base URL");
  cmd.add_option("--fixture-dir", f.fixture_dir, "record/replay fixture directory");
  cmd.add_option("--chat-model", f.chat_model);
  cmd.add_option("--embedding-model", f.embedding_model);
  cmd.add_option("--replay-source", f.replay_source, "RunLog serving utterances to the replay backend");
  cmd.add_flag("--metanorm,!--no-metanorm", f.metanorm, "agents also punish those who let cheating pass");
  if (evolve) {
    cmd.add_option("--epochs", f.epochs);
    cmd.add_option("--rounds-per-epoch", f.rounds_per_epoch);
    cmd.add_option("--pool-size", f.pool_size, "initial persona pool size");
    cmd.add_flag("--resume", f.resume, "continue interrupted trials from their checkpoints");
    cmd.add_option("--halt-after", f.halt_after, "stop each trial after N epochs (testing)")
        ->check(CLI::PositiveNumber);
  } else {
    cmd.add_option("--repetitions", f.repetitions, "rounds per condition");
  }
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

// defaults < config file < flags
RunConfig resolve(const RunFlags& f, Experiment fallback) {
  nlohmann::json file = nlohmann::json::object();
  if (f.config) file = read_json_file(*f.config);
  Experiment exp = fallback;
  if (f.experiment) {
    exp = experiment::parse_experiment(*f.experiment);
  } else if (file.is_object() && file.contains("experiment")) {
    exp = experiment::parse_experiment(file.at("experiment").get<std::string>());
  }
  RunConfig c = experiment::apply_json(file, experiment::defaults_for(exp));
  c.experiment = exp;
  try {
    if (f.backend) c.backend = agents::parse_backend_kind(*f.backend);
    if (f.gateway_mode) c.gateway.mode = gateway::parse_mode(*f.gateway_mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (f.seed) c.seed = *f.seed;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.rounds_per_epoch) c.rounds_per_epoch = *f.rounds_per_epoch;
  if (f.turns) c.game.max_discussion_turns = *f.turns;
  if (f.trials) c.trials = *f.trials;
  if (f.repetitions) c.repetitions = *f.repetitions;
  if (f.pool_size) c.persona_pool_size = *f.pool_size;
  if (f.out) c.out = *f.out;
  if (f.endpoint) c.gateway.endpoint = *f.endpoint;
  if (f.fixture_dir) c.gateway.fixture_dir = *f.fixture_dir;
  if (f.chat_model) c.gateway.chat_model = *f.chat_model;
  if (f.embedding_model) c.gateway.embedding_model = *f.embedding_model;
  if (f.replay_source) c.replay_source = *f.replay_source;
  if (f.metanorm) c.metanorm = *f.metanorm;
  c.validate();
  return c;
}

void require_api_key(const RunConfig& c) {
  const auto mode = c.gateway.mode;
  if (!experiment::needs_gateway(c) || (mode != gateway::Mode::Live && mode != gateway::Mode::Record)) return;
  const char* key = std::getenv(c.gateway.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw ConfigError(std::string(gateway::to_string(mode)) + " mode needs an API key in the environment variable " +
                      c.gateway.api_key_env);
  }
}

int cmd_execute(const RunFlags& f, bool evolve, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve(f, evolve ? Experiment::TraitEvolution : Experiment::TraitGroups);
  if (evolve && c.experiment == Experiment::TraitGroups) {
    throw ConfigError("evolve runs trait-evolution or persona-evolution; use `run` for trait-groups");
  }
  if (!evolve && c.experiment != Experiment::TraitGroups) {
    throw ConfigError("run executes trait-groups; use `evolve` for " + std::string(to_string(c.experiment)));
  }
  require_api_key(c);
  experiment::ExecuteOptions options;
  options.resume = f.resume;
  options.halt_after_epochs = f.halt_after;
  options.diagnostics = &err;
  experiment::execute(c, options);
  out << "wrote " << experiment::units_of(c).size() << " run log(s) under " << c.out << '\n';
  return kOk;
}

bool is_runlog(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.size() >= 12 && name.compare(name.size() - 12, 12, "runlog.jsonl") == 0;
}

int cmd_analyze(const std::string& dir, const std::optional<std::string>& out_flag, std::ostream& out,
                std::ostream& err) {
  const fs::path root = dir;
  if (!fs::is_directory(root)) throw ConfigError("not a directory: " + dir);
  const fs::path out_dir = out_flag ? fs::path(*out_flag) : root / "analysis";
  const fs::path out_abs = fs::weakly_canonical(out_dir);

  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || !is_runlog(entry.path())) continue;
    const fs::path abs = fs::weakly_canonical(entry.path());
    const auto rel = abs.lexically_relative(out_abs);
    if (!rel.empty() && *rel.begin() != "..") continue;  // our own previous exports
    paths.push_back(entry.path());
  }
  if (paths.empty()) {
    err << "no logs found in " << dir << '\n';
    return kRuntime;
  }
  std::sort(paths.begin(), paths.end());

  std::vector<analysis::ParsedLog> logs;
  for (const auto& p : paths) {
    logs.push_back(analysis::read_runlog(p, p.lexically_relative(root).generic_string()));
    for (const auto& w : logs.back().warnings) err << "warning: " << w << '\n';
  }
  const auto summary = analysis::write_exports(logs, out_dir);
  for (const auto& w : summary.warnings) err << "warning: " << w << '\n';
  out << "analyzed " << logs.size() << " log(s); wrote " << summary.files.size() << " file(s) to "
      << out_dir.generic_string() << '\n';
  return kOk;
}

int cmd_replay(const std::string& log_path, bool quiet, std::ostream& out, std::ostream& err) {
  if (!fs::is_regular_file(log_path)) throw ConfigError("no such log: " + log_path);
  const auto outcome = experiment::replay_log(log_path);
  if (!quiet) experiment::print_transcript(outcome.regenerated, out);
  if (!outcome.identical) {
    err << "divergence at line " << outcome.first_divergent_line << " of " << log_path << '\n'
        << "  recorded:    " << outcome.recorded_line.substr(0, 400) << '\n'
        << "  regenerated: " << outcome.regenerated_line.substr(0, 400) << '\n';
    return kDivergence;
  }
  out << "replay identical: " << log_path << '\n';
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Norms Game simulator"};
  app.name("normsgame");
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "trait-group experiment: four trait conditions");
  add_run_flags(*run, run_flags, false);

  RunFlags evolve_flags;
  auto* evolve = app.add_subcommand("evolve", "trait or persona evolution over epochs");
  add_run_flags(*evolve, evolve_flags, true);

  std::string analyze_dir;
  std::optional<std::string> analyze_out;
  auto* analyze = app.add_subcommand("analyze", "export analysis tables from run logs");
  analyze->add_option("dir", analyze_dir, "directory searched for *runlog.jsonl")->required();
  analyze->add_option("--out", analyze_out, "export directory (default <dir>/analysis)");

  std::string replay_path;
  bool quiet = false;
  auto* replay = app.add_subcommand("replay", "re-execute a run log and compare bytes");
  replay->add_option("log", replay_path)->required();
  replay->add_flag("--quiet", quiet, "skip the transcript");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run `normsgame --help` for usage\n";
    return kUsage;
  }

  try {
    if (run->parsed()) return cmd_execute(run_flags, false, out, err);
    if (evolve->parsed()) return cmd_execute(evolve_flags, true, out, err);
    if (analyze->parsed()) return cmd_analyze(analyze_dir, analyze_out, out, err);
    if (replay->parsed()) return cmd_replay(replay_path, quiet, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace normsgame::cli
