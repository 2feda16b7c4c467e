#include "normsgame/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "normsgame/runlog.hpp"

namespace normsgame::analysis {

using evolution::EpochRecord;
using nlohmann::json;
using nlohmann::ordered_json;

ParsedLog parse_runlog(std::string_view text, const std::string& name) {
  ParsedLog log;
  log.name = name;

  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  std::size_t last_nonempty = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!lines[i].empty()) last_nonempty = i;
  }

  std::optional<RoundView> open;
  auto drop_open = [&](const char* why) {
    if (open) {
      log.warnings.push_back(name + ": round " + std::to_string(open->round) + " " + why +
                             "; skipped");
      open.reset();
    }
  };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    LogEvent event;
    try {
      event = parse_event(lines[i]);
    } catch (const LogFormatError& e) {
      const std::string where = name + ":" + std::to_string(i + 1);
      if (i == last_nonempty) {
        log.warnings.push_back(where + ": truncated final line ignored (" + e.what() + ")");
        break;
      }
      throw LogFormatError(where + ": " + e.what());
    }
    try {
      if (log.run_id.empty()) log.run_id = event.run_id;
      const auto& p = event.payload;
      if (event.type == "run_start") {
        log.run_start = p;
      } else if (event.type == "round_start") {
        drop_open("has no ledger");
        RoundView r;
        r.round = event.round.value_or(0);
        if (p.contains("epoch")) r.epoch = p.at("epoch").get<int>();
        if (p.contains("condition")) r.condition = p.at("condition").get<std::string>();
        for (const auto& a : p.at("roster")) r.agents.push_back(a.at("name").get<std::string>());
        r.cheated.assign(r.agents.size(), false);
        open = std::move(r);
      } else if (!open) {
        if (event.type == "epoch_end") log.epochs.push_back(evolution::epoch_record_from_json(p));
      } else if (event.type == "announcement") {
        const auto& entries = p.at("entries");
        for (std::size_t k = 0; k < entries.size() && k < open->cheated.size(); ++k) {
          open->cheated[k] = entries[k].at("cheated").get<bool>();
        }
      } else if (event.type == "turn") {
        ++open->turns;
        const auto& applied = p.at("punish_applied");
        if (!applied.is_null()) {
          open->punishes.push_back({p.at("speaker").get<std::string>(), applied.at("target").get<std::string>()});
        }
      } else if (event.type == "fallback") {
        ++open->fallbacks;
      } else if (event.type == "ledger") {
        for (const auto& e : p.at("entries")) open->scores.push_back(e.at("score").get<double>());
        log.rounds.push_back(std::move(*open));
        open.reset();
      } else if (event.type == "epoch_end") {
        drop_open("has no ledger");
        log.epochs.push_back(evolution::epoch_record_from_json(p));
      }
    } catch (const json::exception& e) {
      throw LogFormatError(name + ":" + std::to_string(i + 1) + ": bad " + event.type +
                           " payload: " + e.what());
    }
  }
  drop_open("is incomplete");
  return log;
}

ParsedLog read_runlog(const std::filesystem::path& path, const std::string& name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_runlog(buffer.str(), name.empty() ? path.string() : name);
}

std::map<std::string, std::vector<PunishCount>> punish_counts(std::span<const ParsedLog> logs) {
  std::map<std::string, std::vector<PunishCount>> out;
  for (const auto& log : logs) {
    for (const auto& r : log.rounds) {
      const std::string group = r.condition.empty() ? "all" : r.condition;
      out[group].push_back({log.name, r.round, static_cast<int>(r.punishes.size())});
    }
  }
  return out;
}

int PunishmentNetwork::total_multiplicity() const {
  int total = 0;
  for (const auto& [_, m] : edges) total += m;
  return total;
}

PunishmentNetwork build_network(const ParsedLog& log, std::int64_t round) {
  const auto it = std::find_if(log.rounds.begin(), log.rounds.end(),
                               [&](const RoundView& r) { return r.round == round; });
  if (it == log.rounds.end()) {
    throw NotFound("round " + std::to_string(round) + " not found in " + log.name);
  }
  PunishmentNetwork net;
  net.round = round;
  for (std::size_t k = 0; k < it->agents.size(); ++k) net.nodes.push_back({it->agents[k], it->cheated[k]});
  for (const auto& e : it->punishes) ++net.edges[{e.actor, e.target}];
  return net;
}

namespace {

// DOT quoted strings escape only the double quote.
std::string dot_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string to_dot(const PunishmentNetwork& net) {
  std::ostringstream out;
  out << "digraph punishment_round_" << net.round << " {\n";
  for (const auto& n : net.nodes) {
    out << "  " << dot_quote(n.name) << " [cheated=" << (n.cheated ? "true" : "false")
        << ", style=filled, fillcolor=" << (n.cheated ? "red" : "lightblue") << "];\n";
  }
  for (const auto& [edge, m] : net.edges) {
    out << "  " << dot_quote(edge.first) << " -> " << dot_quote(edge.second)
        << " [multiplicity=" << m << ", label=\"" << m << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

ordered_json to_json(const PunishmentNetwork& net) {
  ordered_json nodes = ordered_json::array();
  for (const auto& n : net.nodes) nodes.push_back(ordered_json{{"name", n.name}, {"cheated", n.cheated}});
  ordered_json edges = ordered_json::array();
  for (const auto& [edge, m] : net.edges) {
    edges.push_back(ordered_json{{"from", edge.first}, {"to", edge.second}, {"multiplicity", m}});
  }
  return ordered_json{{"round", net.round}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

std::vector<TraitMetrics> trait_trajectory(std::span<const EpochRecord> records) {
  std::vector<TraitMetrics> out;
  for (const auto& r : records) {
    if (r.regime != evolution::Regime::Traits) {
      throw evolution::WrongRegime("trait trajectory needs trait-regime epochs");
    }
    TraitMetrics m;
    m.epoch = r.epoch;
    std::vector<double> v;
    std::vector<double> b;
    for (const auto& p : r.population) {
      const auto* t = std::get_if<agents::Traits>(&p.persona);
      if (t == nullptr) throw evolution::WrongRegime("epoch " + std::to_string(r.epoch) + " has a text persona");
      v.push_back(t->vengefulness.value());
      b.push_back(t->boldness.value());
      ++m.cells[{t->vengefulness.value(), t->boldness.value()}];
    }
    const auto n = static_cast<double>(v.size());
    if (n > 0) {
      m.mean_vengefulness = std::accumulate(v.begin(), v.end(), 0.0) / n;
      m.mean_boldness = std::accumulate(b.begin(), b.end(), 0.0) / n;
      for (std::size_t k = 0; k < v.size(); ++k) {
        m.var_vengefulness += (v[k] - m.mean_vengefulness) * (v[k] - m.mean_vengefulness) / n;
        m.var_boldness += (b[k] - m.mean_boldness) * (b[k] - m.mean_boldness) / n;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

EmbeddingStats embedding_stats(std::span<const std::vector<double>> vectors) {
  if (vectors.empty()) throw evolution::ConfigurationError("no embeddings to summarize");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) {
      throw evolution::ConfigurationError("mixed embedding dimensionalities: " + std::to_string(dim) +
                                          " and " + std::to_string(v.size()));
    }
  }
  // Offsets from the first vector: less cancellation, and a set of equal
  // vectors comes out with exactly zero variance.
  const auto& origin = vectors.front();
  const auto n = static_cast<double>(vectors.size());
  std::vector<double> shift(dim, 0.0);
  for (const auto& v : vectors) {
    for (std::size_t k = 0; k < dim; ++k) shift[k] += v[k] - origin[k];
  }
  for (auto& x : shift) x /= n;
  EmbeddingStats s;
  s.centroid.resize(dim);
  for (std::size_t k = 0; k < dim; ++k) s.centroid[k] = origin[k] + shift[k];
  for (const auto& v : vectors) {
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = (v[k] - origin[k]) - shift[k];
      s.variance += d * d;
    }
  }
  s.variance /= n;
  return s;
}

std::vector<EmbeddingStats> embedding_stats(const std::vector<std::vector<std::string>>& personas_per_epoch,
                                            gateway::Gateway& gateway) {
  std::vector<EmbeddingStats> out;
  std::string model;
  for (const auto& personas : personas_per_epoch) {
    std::vector<std::vector<double>> vectors;
    for (const auto& text : personas) {
      auto e = gateway.embed(text);
      if (model.empty()) model = e.model;
      if (e.model != model) {
        throw evolution::ConfigurationError("embeddings from different models: " + model + " and " + e.model);
      }
      vectors.push_back(std::move(e.values));
    }
    out.push_back(embedding_stats(vectors));
  }
  return out;
}

std::vector<BehaviorRates> behavior_rates(std::span<const EpochRecord> records) {
  std::vector<BehaviorRates> out;
  for (const auto& r : records) {
    BehaviorRates b;
    b.epoch = r.epoch;
    const double agent_rounds = static_cast<double>(r.rounds) * static_cast<double>(r.population.size());
    b.cheat_rate = agent_rounds > 0 ? r.cheat_count / agent_rounds : 0.0;
    b.punish_rate = r.turn_count > 0 ? static_cast<double>(r.punish_count) / r.turn_count : 0.0;
    out.push_back(b);
  }
  return out;
}

std::vector<EpochMetricsRow> epoch_metrics(const ParsedLog& log) {
  std::vector<EpochMetricsRow> rows;
  for (const auto& record : log.epochs) {
    EpochMetricsRow row;
    row.epoch = record.epoch;
    double score_sum = 0.0;
    std::size_t score_count = 0;
    std::size_t agent_rounds = 0;
    for (const auto& r : log.rounds) {
      if (r.epoch != record.epoch) continue;
      ++row.rounds;
      row.cheat_count += static_cast<int>(std::count(r.cheated.begin(), r.cheated.end(), true));
      row.punish_count += static_cast<int>(r.punishes.size());
      row.turn_count += r.turns;
      agent_rounds += r.agents.size();
      for (double s : r.scores) score_sum += s;
      score_count += r.scores.size();
    }
    row.cheat_rate = agent_rounds > 0 ? static_cast<double>(row.cheat_count) / agent_rounds : 0.0;
    row.punish_rate = row.turn_count > 0 ? static_cast<double>(row.punish_count) / row.turn_count : 0.0;
    row.mean_payoff = score_count > 0 ? score_sum / static_cast<double>(score_count) : 0.0;
    if (record.regime == evolution::Regime::Traits) {
      const EpochRecord one[] = {record};
      const auto m = trait_trajectory(one).front();
      row.mean_vengefulness = m.mean_vengefulness;
      row.mean_boldness = m.mean_boldness;
    } else if (!record.embeddings.empty()) {
      row.embedding_variance = embedding_stats(record.embeddings).variance;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string opt(const std::optional<double>& x) { return x ? format_number(*x) : std::string(); }

void write_file(const std::filesystem::path& path, const std::string& content, ExportSummary& summary) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  summary.files.push_back(path);
}

std::string json_text(const ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

ExportSummary write_exports(std::span<const ParsedLog> logs, const std::filesystem::path& out_dir) {
  ExportSummary summary;
  for (const auto& log : logs) {
    summary.warnings.insert(summary.warnings.end(), log.warnings.begin(), log.warnings.end());
  }

  std::ostringstream counts;
  counts << "group,log,round,punish_count\n";
  for (const auto& [group, rows] : punish_counts(logs)) {
    for (const auto& r : rows) {
      counts << csv_field(group) << ',' << csv_field(r.log) << ',' << r.round << ',' << r.count << '\n';
    }
  }
  write_file(out_dir / "punish_counts.csv", counts.str(), summary);

  std::ostringstream metrics;
  metrics << "log,epoch,mean_vengefulness,mean_boldness,rounds,cheat_count,punish_count,turn_count,"
             "cheat_rate,punish_rate,mean_payoff,embedding_variance\n";
  std::ostringstream cells;
  cells << "log,epoch,vengefulness,boldness,count\n";
  for (const auto& log : logs) {
    for (const auto& row : epoch_metrics(log)) {
      metrics << csv_field(log.name) << ',' << row.epoch << ',' << opt(row.mean_vengefulness) << ','
              << opt(row.mean_boldness) << ',' << row.rounds << ',' << row.cheat_count << ','
              << row.punish_count << ',' << row.turn_count << ',' << format_number(row.cheat_rate)
              << ',' << format_number(row.punish_rate) << ',' << format_number(row.mean_payoff) << ','
              << opt(row.embedding_variance) << '\n';
    }
    std::vector<EpochRecord> trait_epochs;
    for (const auto& e : log.epochs) {
      if (e.regime == evolution::Regime::Traits) trait_epochs.push_back(e);
    }
    for (const auto& m : trait_trajectory(trait_epochs)) {
      for (const auto& [cell, count] : m.cells) {
        cells << csv_field(log.name) << ',' << m.epoch << ',' << cell.first << ',' << cell.second << ','
              << count << '\n';
      }
    }
  }
  write_file(out_dir / "epoch_metrics.csv", metrics.str(), summary);
  write_file(out_dir / "trait_cells.csv", cells.str(), summary);

  for (const auto& log : logs) {
    const auto sub = out_dir / std::filesystem::path(log.name).parent_path();
    for (const auto& r : log.rounds) {
      const auto net = build_network(log, r.round);
      const std::string stem = "network_" + std::to_string(r.round);
      write_file(sub / (stem + ".dot"), to_dot(net), summary);
      write_file(sub / (stem + ".json"), json_text(to_json(net)), summary);
    }
    for (const auto& e : log.epochs) {
      if (e.embeddings.empty()) continue;
      const auto stats = embedding_stats(e.embeddings);
      ordered_json j{{"epoch", e.epoch},
                     {"model", e.embedding_model},
                     {"vectors", e.embeddings},
                     {"centroid", stats.centroid},
                     {"variance", stats.variance}};
      write_file(sub / ("embeddings_" + std::to_string(e.epoch) + ".json"), json_text(j), summary);
    }
  }
  return summary;
}

}  // namespace normsgame::analysis
