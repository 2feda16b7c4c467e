#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "normsgame/agents.hpp"
#include "normsgame/engine.hpp"
#include "normsgame/gateway.hpp"

// Experiment drivers: trait groups, trait evolution and persona evolution.
//
// Output layout under RunConfig::out:
//   config.json                       validated config copy
//   trial_<k>/<condition>/runlog.jsonl   trait groups
//   trial_<k>/runlog.jsonl               evolution runs
//   trial_<k>/checkpoint.json            evolution runs, rewritten per epoch
//   trial_<k>/epoch_metrics.csv          evolution runs
//   fixtures/                            gateway record/replay store (default)
//   gateway_calls.jsonl                  live/record call accounting
namespace normsgame::experiment {

enum class Experiment { TraitGroups, TraitEvolution, PersonaEvolution };

std::string_view to_string(Experiment experiment);
Experiment parse_experiment(std::string_view text);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  Experiment experiment = Experiment::TraitGroups;
  engine::GameConfig game;  // rng_seed is unused; seeds derive from `seed`
  agents::BackendKind backend = agents::BackendKind::Parametric;
  bool metanorm = false;
  gateway::GatewayConfig gateway;
  int epochs = 40;
  int rounds_per_epoch = 1;
  int trials = 1;
  int repetitions = 10;
  int persona_pool_size = 14;
  std::string replay_source;  // RunLog serving utterances for the replay backend
  std::string out = "out";
  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
};

// Per-experiment defaults: 21 turns and 10 repetitions for trait groups;
// 40 epochs of 21 rounds of 7 turns for trait evolution; the same for
// persona evolution, over 5 trials.
RunConfig defaults_for(Experiment experiment);

// Leaves out `out`: where a run was written is not part of what it was, so
// logs compare equal across output directories.
nlohmann::ordered_json to_json(const RunConfig& config);

// Overlays the keys present in `j` on `base`. Unknown keys throw ConfigError.
RunConfig apply_json(const nlohmann::json& j, RunConfig base);

struct Condition {
  std::string label;
  agents::TraitLevel vengefulness;
  agents::TraitLevel boldness;
};

// lowV-lowB, lowV-highB, highV-lowB, highV-highB.
const std::array<Condition, 4>& trait_group_conditions();

// One RunLog's worth of work.
struct RunUnit {
  int trial = 0;
  std::optional<std::string> condition;
  std::filesystem::path relative_log;  // relative to the output root
};

std::vector<RunUnit> units_of(const RunConfig& config);
std::string run_id_of(const RunConfig& config, const RunUnit& unit);

// Gateway for the config, or null when the run needs none. A relative
// fixture_dir is resolved against `out_root`; an empty one means
// out_root/fixtures. STUB gateways answer with agents::offline_responder.
std::unique_ptr<gateway::Gateway> make_gateway(const RunConfig& config,
                                               const std::filesystem::path& out_root,
                                               std::optional<gateway::Mode> mode_override = {});

bool needs_gateway(const RunConfig& config);

struct ExecuteOptions {
  bool resume = false;
  // Stop every evolution trial after this many completed epochs, leaving a
  // checkpoint behind, as an interrupted run would.
  std::optional<int> halt_after_epochs;
  std::ostream* diagnostics = nullptr;
};

// Validates, writes config.json and runs every unit. Never writes outside
// config.out.
void execute(const RunConfig& config, const ExecuteOptions& options = {});

// Re-runs one unit in memory and returns its RunLog text. Writes nothing.
std::string regenerate_log(const RunConfig& config, const RunUnit& unit, gateway::Gateway* gateway);

struct ReplayOutcome {
  bool identical = false;
  std::size_t first_divergent_line = 0;  // 1-based; 0 when identical
  std::string recorded_line;
  std::string regenerated_line;
  std::string regenerated;
};

// Reads a RunLog, rebuilds its run from the run_start header and re-executes
// it with live/record gateways switched to REPLAY, then compares bytes.
ReplayOutcome replay_log(const std::filesystem::path& log_path);

// Human-readable transcript of a RunLog.
void print_transcript(std::string_view runlog_text, std::ostream& out);

}  // namespace normsgame::experiment
