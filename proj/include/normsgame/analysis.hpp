#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "normsgame/evolution.hpp"
#include "normsgame/gateway.hpp"

// Read-only analytics over RunLogs. Every export is a pure function of the
// log bytes.
namespace normsgame::analysis {

class NotFound : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct PunishEdge {
  std::string actor;
  std::string target;
};

// One completed round reconstructed from its events.
struct RoundView {
  std::int64_t round = 0;
  std::optional<int> epoch;
  std::string condition;
  std::vector<std::string> agents;
  std::vector<bool> cheated;
  std::vector<double> scores;
  std::vector<PunishEdge> punishes;  // in turn order
  int turns = 0;
  int fallbacks = 0;
};

struct ParsedLog {
  std::string name;  // display path
  std::string run_id;
  nlohmann::json run_start;  // payload of the run_start event, null if absent
  std::vector<RoundView> rounds;
  std::vector<evolution::EpochRecord> epochs;
  std::vector<std::string> warnings;
};

// Parses RunLog text. A malformed line in the middle is an error naming
// `name` and the line number; a malformed final line (an interrupted write)
// is dropped with a warning, as are rounds without a ledger event.
ParsedLog parse_runlog(std::string_view text, const std::string& name);
ParsedLog read_runlog(const std::filesystem::path& path, const std::string& name = {});

struct PunishCount {
  std::string log;
  std::int64_t round = 0;
  int count = 0;
};

// Per-round punish counts grouped by round condition ("all" when a round
// carries none).
std::map<std::string, std::vector<PunishCount>> punish_counts(std::span<const ParsedLog> logs);

struct NetworkNode {
  std::string name;
  bool cheated = false;
};

struct PunishmentNetwork {
  std::int64_t round = 0;
  std::vector<NetworkNode> nodes;                                  // roster order
  std::map<std::pair<std::string, std::string>, int> edges;        // (actor, target) -> multiplicity

  int total_multiplicity() const;
};

// Throws NotFound when the log has no such round.
PunishmentNetwork build_network(const ParsedLog& log, std::int64_t round);

// Cheaters red, everyone else light blue; edge labels carry multiplicity.
std::string to_dot(const PunishmentNetwork& network);
nlohmann::ordered_json to_json(const PunishmentNetwork& network);

struct TraitMetrics {
  int epoch = 0;
  double mean_vengefulness = 0.0;
  double mean_boldness = 0.0;
  double var_vengefulness = 0.0;  // population variance
  double var_boldness = 0.0;
  std::map<std::pair<int, int>, int> cells;  // (V, B) -> agents
};

// Throws evolution::WrongRegime for persona-regime records.
std::vector<TraitMetrics> trait_trajectory(std::span<const evolution::EpochRecord> records);

struct EmbeddingStats {
  std::vector<double> centroid;
  double variance = 0.0;  // mean squared distance to the centroid
};

// Throws evolution::ConfigurationError on mixed dimensionalities or an empty set.
EmbeddingStats embedding_stats(std::span<const std::vector<double>> vectors);

// Embeds each epoch's personas through the gateway, then as above.
std::vector<EmbeddingStats> embedding_stats(const std::vector<std::vector<std::string>>& personas_per_epoch,
                                            gateway::Gateway& gateway);

struct BehaviorRates {
  int epoch = 0;
  double cheat_rate = 0.0;   // cheating agents / 7, averaged over rounds
  double punish_rate = 0.0;  // punish events per discussion turn
};

std::vector<BehaviorRates> behavior_rates(std::span<const evolution::EpochRecord> records);

// One row of epoch_metrics.csv, recounted from the log's round events.
struct EpochMetricsRow {
  int epoch = 0;
  std::optional<double> mean_vengefulness;
  std::optional<double> mean_boldness;
  int rounds = 0;
  int cheat_count = 0;
  int punish_count = 0;
  int turn_count = 0;
  double cheat_rate = 0.0;
  double punish_rate = 0.0;
  double mean_payoff = 0.0;  // mean per-agent score per round
  std::optional<double> embedding_variance;
};

std::vector<EpochMetricsRow> epoch_metrics(const ParsedLog& log);

// Nine significant digits.
std::string format_number(double x);

struct ExportSummary {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

// Writes punish_counts.csv, epoch_metrics.csv and trait_cells.csv into
// `out_dir`, plus network_<round>.{dot,json} and embeddings_<epoch>.json
// under a subdirectory mirroring the directory part of each log's name.
ExportSummary write_exports(std::span<const ParsedLog> logs, const std::filesystem::path& out_dir);

}  // namespace normsgame::analysis
