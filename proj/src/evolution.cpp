#include "normsgame/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "normsgame/prompts.hpp"

namespace normsgame::evolution {

using agents::AgentProfile;
using agents::TextPersona;
using agents::Traits;
using agents::TraitScore;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Regime regime) {
  return regime == Regime::Traits ? "traits" : "personas";
}

Selection rank_and_select(std::span<const Payoff> payoffs) {
  if (payoffs.size() != kPopulationSize) {
    throw ConfigurationError("selection needs exactly 7 payoffs, got " +
                             std::to_string(payoffs.size()));
  }
  std::set<std::uint64_t> ids;
  for (const auto& [id, payoff] : payoffs) {
    if (!std::isfinite(payoff)) throw ConfigurationError("payoff of agent " + std::to_string(id) + " is not finite");
    if (!ids.insert(id).second) throw ConfigurationError("duplicate agent id " + std::to_string(id));
  }
  std::vector<Payoff> sorted(payoffs.begin(), payoffs.end());
  std::sort(sorted.begin(), sorted.end(), [](const Payoff& a, const Payoff& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Selection s;
  for (const auto& p : sorted) s.ranking.push_back(p.first);
  std::copy_n(s.ranking.begin(), 2, s.doubled.begin());
  std::copy_n(s.ranking.begin() + 2, 3, s.kept.begin());
  std::copy_n(s.ranking.begin() + 5, 2, s.eliminated.begin());
  return s;
}

Mutated mutate_trait(std::vector<AgentProfile> population, Rng& rng) {
  if (population.empty()) throw ConfigurationError("cannot mutate an empty population");
  for (const auto& p : population) {
    if (!std::holds_alternative<Traits>(p.persona)) {
      throw WrongRegime("trait mutation needs numeric-trait personas; " + p.name + " has text");
    }
  }
  Mutated out;
  const auto slot = static_cast<std::size_t>(rng.uniform_index(population.size()));
  const bool boldness = rng.uniform_index(2) == 1;
  auto& traits = std::get<Traits>(population[slot].persona);
  auto& field = boldness ? traits.boldness : traits.vengefulness;
  // Uniform over the six values other than the current one.
  int drawn = rng.uniform_int(TraitScore::kMin, TraitScore::kMax - 1);
  if (drawn >= field.value()) ++drawn;
  const TraitScore value(drawn);
  out.mutation = MutationRecord{population[slot].id, slot, boldness ? "boldness" : "vengefulness",
                                field.value(), value.value()};
  field = value;
  out.population = std::move(population);
  return out;
}

gateway::ModelRequest rephrase_request(std::string_view persona, std::string_view model,
                                       std::string_view correction) {
  gateway::ModelRequest request;
  request.model = std::string(model);
  request.messages.push_back({"system", std::string(prompts::get("rephrase.v1"))});
  request.messages.push_back({"user", std::string(persona)});
  if (!correction.empty()) request.messages.push_back({"user", std::string(correction)});
  return request;
}

namespace {

std::string clean_line(std::string text) {
  const auto first = text.find_first_not_of(" \t\r\n\"'");
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n\"'");
  text = text.substr(first, last - first + 1);
  std::replace(text.begin(), text.end(), '\n', ' ');
  std::replace(text.begin(), text.end(), '\r', ' ');
  return text;
}

}  // namespace

RephraseResult rephrase_persona(const TextPersona& persona, gateway::Gateway& gateway) {
  RephraseResult result;
  std::string correction;
  for (int attempt = 0; attempt <= engine::kMaxReprompts; ++attempt) {
    result.attempts = attempt + 1;
    std::string text;
    try {
      text = clean_line(gateway.complete(
          rephrase_request(persona.description, gateway.config().chat_model, correction)));
    } catch (const gateway::GatewayError& e) {
      result.text = persona.description;
      result.fallback = std::string("gateway failure: ") + e.what();
      return result;
    }
    const auto words = static_cast<int>(agents::word_count(text));
    if (words >= kRephraseMinWords && words <= kRephraseMaxWords) {
      result.text = std::move(text);
      return result;
    }
    correction = "Your description had " + std::to_string(words) +
                 " words. Use between 5 and 20 words, about 10.";
  }
  result.text = persona.description;
  result.fallback = "rephrasing length outside 5-20 words after " +
                    std::to_string(result.attempts) + " attempts";
  return result;
}

std::vector<std::string> generate_persona_pool(gateway::Gateway& gateway, std::size_t size) {
  std::vector<std::string> pool;
  for (std::size_t k = 0; k < size; ++k) {
    gateway::ModelRequest request;
    request.model = gateway.config().chat_model;
    request.temperature = gateway.config().temperature;
    request.messages.push_back({"system", std::string(prompts::get("persona_generate.v1"))});
    request.messages.push_back(
        {"user", "Personality " + std::to_string(k + 1) + " of " + std::to_string(size) + "."});
    auto text = clean_line(gateway.complete(request));
    if (agents::word_count(text) == 0) {
      throw gateway::GatewayError("persona generation returned an empty description");
    }
    pool.push_back(std::move(text));
  }
  return pool;
}

namespace {

ordered_json selection_json(const Selection& s) {
  return ordered_json{{"ranking", s.ranking},
                      {"doubled", s.doubled},
                      {"kept", s.kept},
                      {"eliminated", s.eliminated}};
}

ordered_json profiles_json(const std::vector<AgentProfile>& profiles) {
  ordered_json out = ordered_json::array();
  for (const auto& p : profiles) out.push_back(agents::profile_to_json(p));
  return out;
}

std::vector<AgentProfile> profiles_from(const json& j) {
  std::vector<AgentProfile> out;
  for (const auto& p : j) out.push_back(agents::profile_from_json(p));
  return out;
}

}  // namespace

ordered_json to_json(const EpochRecord& r) {
  ordered_json payoffs = ordered_json::array();
  for (const auto& [id, payoff] : r.payoffs) payoffs.push_back(ordered_json{{"id", id}, {"payoff", payoff}});
  ordered_json mutation = nullptr;
  if (r.mutation) {
    mutation = ordered_json{{"target_id", r.mutation->target_id},
                            {"slot", r.mutation->slot},
                            {"trait", r.mutation->trait},
                            {"old", r.mutation->old_value},
                            {"new", r.mutation->new_value}};
  }
  ordered_json rephrases = ordered_json::array();
  for (const auto& x : r.rephrases) {
    rephrases.push_back(ordered_json{{"parent_id", x.parent_id},
                                     {"child_id", x.child_id},
                                     {"before", x.before},
                                     {"after", x.after},
                                     {"attempts", x.attempts},
                                     {"fallback", x.fallback ? ordered_json(*x.fallback) : ordered_json(nullptr)}});
  }
  ordered_json j{{"epoch", r.epoch},
                 {"regime", to_string(r.regime)},
                 {"population", profiles_json(r.population)},
                 {"payoffs", std::move(payoffs)},
                 {"selection", selection_json(r.selection)},
                 {"mutation", std::move(mutation)},
                 {"rephrases", std::move(rephrases)},
                 {"offspring", profiles_json(r.offspring)},
                 {"rounds", r.rounds},
                 {"cheat_count", r.cheat_count},
                 {"punish_count", r.punish_count},
                 {"turn_count", r.turn_count},
                 {"fallback_count", r.fallback_count}};
  if (r.regime == Regime::Personas) {
    j["embedding_model"] = r.embedding_model;
    j["embeddings"] = r.embeddings;
  }
  return j;
}

EpochRecord epoch_record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  const auto regime = j.at("regime").get<std::string>();
  if (regime != "traits" && regime != "personas") throw std::invalid_argument("unknown regime '" + regime + "'");
  r.regime = regime == "traits" ? Regime::Traits : Regime::Personas;
  r.population = profiles_from(j.at("population"));
  for (const auto& p : j.at("payoffs")) {
    r.payoffs.emplace_back(p.at("id").get<std::uint64_t>(), p.at("payoff").get<double>());
  }
  const auto& s = j.at("selection");
  r.selection.ranking = s.at("ranking").get<std::vector<std::uint64_t>>();
  r.selection.doubled = s.at("doubled").get<std::array<std::uint64_t, 2>>();
  r.selection.kept = s.at("kept").get<std::array<std::uint64_t, 3>>();
  r.selection.eliminated = s.at("eliminated").get<std::array<std::uint64_t, 2>>();
  if (!j.at("mutation").is_null()) {
    const auto& m = j.at("mutation");
    r.mutation = MutationRecord{m.at("target_id").get<std::uint64_t>(), m.at("slot").get<std::size_t>(),
                                m.at("trait").get<std::string>(), m.at("old").get<int>(),
                                m.at("new").get<int>()};
  }
  for (const auto& x : j.at("rephrases")) {
    RephraseRecord rr;
    rr.parent_id = x.at("parent_id").get<std::uint64_t>();
    rr.child_id = x.at("child_id").get<std::uint64_t>();
    rr.before = x.at("before").get<std::string>();
    rr.after = x.at("after").get<std::string>();
    rr.attempts = x.at("attempts").get<int>();
    if (!x.at("fallback").is_null()) rr.fallback = x.at("fallback").get<std::string>();
    r.rephrases.push_back(std::move(rr));
  }
  r.offspring = profiles_from(j.at("offspring"));
  r.rounds = j.at("rounds").get<int>();
  r.cheat_count = j.at("cheat_count").get<int>();
  r.punish_count = j.at("punish_count").get<int>();
  r.turn_count = j.at("turn_count").get<int>();
  r.fallback_count = j.at("fallback_count").get<int>();
  if (j.contains("embeddings")) {
    r.embedding_model = j.at("embedding_model").get<std::string>();
    r.embeddings = j.at("embeddings").get<std::vector<std::vector<double>>>();
  }
  return r;
}

void assign_slot_names(std::vector<AgentProfile>& population) {
  for (std::size_t i = 0; i < population.size() && i < kSlotNames.size(); ++i) {
    population[i].name = kSlotNames[i];
  }
}

EpochRecord run_epoch(int epoch_index, const std::vector<AgentProfile>& population, EpochContext& ctx) {
  if (population.size() != kPopulationSize) {
    throw ConfigurationError("population must have exactly 7 agents, got " +
                             std::to_string(population.size()));
  }
  if (ctx.game.n_agents != static_cast<int>(kPopulationSize)) {
    throw ConfigurationError("evolution runs need n_agents = 7");
  }
  if (ctx.rounds_per_epoch < 1) throw ConfigurationError("rounds_per_epoch must be at least 1");
  if (!ctx.factory || ctx.log == nullptr || ctx.round_counter == nullptr || ctx.ids == nullptr) {
    throw ConfigurationError("epoch context is incomplete");
  }
  for (const auto& p : population) {
    const bool traits = std::holds_alternative<Traits>(p.persona);
    if (traits != (ctx.regime == Regime::Traits)) {
      throw WrongRegime("agent " + p.name + " does not match the " +
                        std::string(to_string(ctx.regime)) + " regime");
    }
  }
  if (ctx.regime == Regime::Personas && ctx.gateway == nullptr) {
    throw ConfigurationError("the persona regime needs a gateway");
  }
  agents::validate_profiles(population);

  EpochRecord record;
  record.epoch = epoch_index;
  record.regime = ctx.regime;
  record.population = population;
  std::map<std::uint64_t, double> totals;
  for (const auto& p : population) totals[p.id] = 0.0;

  for (int r = 0; r < ctx.rounds_per_epoch; ++r) {
    const std::uint64_t round_seed = derive_seed(ctx.epoch_seed, static_cast<std::uint64_t>(r));
    ctx.log->set_round((*ctx.round_counter)++);
    ordered_json start{{"epoch", epoch_index}, {"round_in_epoch", r}, {"seed", round_seed}};
    if (!ctx.round_label.empty()) start["condition"] = ctx.round_label;
    start["roster"] = profiles_json(population);
    ctx.log->emit("round", "round_start", std::move(start), 0);

    std::vector<std::unique_ptr<agents::AgentBackend>> backends;
    std::vector<engine::Participant> participants;
    for (std::size_t seat = 0; seat < population.size(); ++seat) {
      backends.push_back(ctx.factory(population[seat], derive_seed(round_seed, seat + 1)));
      participants.push_back({population[seat].name, population[seat].persona, backends.back().get()});
    }
    engine::GameConfig game = ctx.game;
    game.rng_seed = round_seed;
    const auto result = engine::play_round(participants, game, *ctx.log);

    for (std::size_t seat = 0; seat < population.size(); ++seat) {
      totals[population[seat].id] += result.ledger.entries[seat].score;
      if (result.test.entries[seat].cheated) ++record.cheat_count;
    }
    for (const auto& e : result.events) {
      if (e.punish_applied) ++record.punish_count;
    }
    record.turn_count += static_cast<int>(result.events.size());
    record.fallback_count += result.fallbacks;
    ++record.rounds;
  }
  ctx.log->set_round(std::nullopt);

  for (const auto& p : population) record.payoffs.emplace_back(p.id, totals[p.id]);
  record.selection = rank_and_select(record.payoffs);

  auto by_id = [&](std::uint64_t id) -> const AgentProfile& {
    return *std::find_if(population.begin(), population.end(),
                         [&](const AgentProfile& p) { return p.id == id; });
  };
  std::vector<AgentProfile> offspring;
  std::vector<bool> from_doubled;
  auto add_child = [&](const AgentProfile& parent, bool doubled) {
    AgentProfile child = parent;
    child.id = ctx.ids->allocate();
    child.parent_id = parent.id;
    offspring.push_back(std::move(child));
    from_doubled.push_back(doubled);
  };
  for (auto id : record.selection.doubled) {
    add_child(by_id(id), true);
    add_child(by_id(id), true);
  }
  for (auto id : record.selection.kept) add_child(by_id(id), false);
  assign_slot_names(offspring);

  std::uint64_t cursor = 0;
  if (ctx.regime == Regime::Traits) {
    Rng rng(derive_seed(ctx.epoch_seed, kMutationStream));
    auto mutated = mutate_trait(std::move(offspring), rng);
    offspring = std::move(mutated.population);
    record.mutation = mutated.mutation;
    cursor = rng.cursor();
  } else {
    for (std::size_t i = 0; i < offspring.size(); ++i) {
      if (!from_doubled[i]) continue;
      auto& persona = std::get<TextPersona>(offspring[i].persona);
      const auto rephrased = rephrase_persona(persona, *ctx.gateway);
      record.rephrases.push_back(RephraseRecord{*offspring[i].parent_id, offspring[i].id,
                                                persona.description, rephrased.text,
                                                rephrased.attempts, rephrased.fallback});
      persona.description = rephrased.text;
    }
    for (const auto& p : population) {
      auto v = ctx.gateway->embed(std::get<TextPersona>(p.persona).description);
      if (record.embedding_model.empty()) record.embedding_model = v.model;
      record.embeddings.push_back(std::move(v.values));
    }
  }
  record.offspring = std::move(offspring);
  ctx.log->emit("epoch", "epoch_end", to_json(record), cursor);
  return record;
}

}  // namespace normsgame::evolution
