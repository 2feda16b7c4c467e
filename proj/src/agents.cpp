#include "normsgame/agents.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "normsgame/prompts.hpp"

namespace normsgame::agents {

using nlohmann::json;
using nlohmann::ordered_json;
using protocol::Command;
using protocol::CommandKind;
using protocol::Phase;

TraitScore::TraitScore(int value) : value_(value) {
  if (value < kMin || value > kMax) {
    throw std::invalid_argument("trait score " + std::to_string(value) + " outside 1..7");
  }
}

std::size_t word_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::Parametric: return "parametric";
    case BackendKind::Scripted: return "scripted";
    case BackendKind::Replay: return "replay";
    case BackendKind::Model: return "model";
  }
  return "?";
}

BackendKind parse_backend_kind(std::string_view text) {
  if (text == "parametric") return BackendKind::Parametric;
  if (text == "scripted") return BackendKind::Scripted;
  if (text == "replay") return BackendKind::Replay;
  if (text == "model") return BackendKind::Model;
  throw std::invalid_argument("unknown backend '" + std::string(text) +
                              "' (expected parametric, scripted, replay or model)");
}

std::vector<std::string> validate_profiles(std::span<const AgentProfile> profiles) {
  std::vector<std::string> names;
  std::vector<std::string> warnings;
  for (const auto& p : profiles) {
    names.push_back(p.name);
    if (const auto* text = std::get_if<TextPersona>(&p.persona)) {
      const auto words = word_count(text->description);
      if (words == 0) throw std::invalid_argument("agent " + p.name + " has an empty persona");
      if (words > kPersonaSoftWordCap) {
        warnings.push_back("persona of " + p.name + " has " + std::to_string(words) +
                           " words (soft cap " + std::to_string(kPersonaSoftWordCap) + ")");
      }
    }
  }
  protocol::validate_roster(names);
  return warnings;
}

ordered_json persona_to_json(const Persona& persona) {
  if (const auto* t = std::get_if<Traits>(&persona)) {
    return ordered_json{{"kind", "traits"},
                        {"vengefulness", t->vengefulness.value()},
                        {"boldness", t->boldness.value()}};
  }
  return ordered_json{{"kind", "text"}, {"description", std::get<TextPersona>(persona).description}};
}

Persona persona_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "traits") {
    return Traits{TraitScore(j.at("vengefulness").get<int>()), TraitScore(j.at("boldness").get<int>())};
  }
  if (kind == "text") return TextPersona{j.at("description").get<std::string>()};
  throw std::invalid_argument("unknown persona kind '" + kind + "'");
}

ordered_json profile_to_json(const AgentProfile& profile) {
  ordered_json j{{"id", profile.id},
                 {"name", profile.name},
                 {"persona", persona_to_json(profile.persona)},
                 {"backend", to_string(profile.backend)}};
  j["parent_id"] = profile.parent_id ? ordered_json(*profile.parent_id) : ordered_json(nullptr);
  return j;
}

AgentProfile profile_from_json(const json& j) {
  AgentProfile p;
  p.id = j.at("id").get<std::uint64_t>();
  p.name = j.at("name").get<std::string>();
  p.persona = persona_from_json(j.at("persona"));
  p.backend = parse_backend_kind(j.at("backend").get<std::string>());
  if (j.contains("parent_id") && !j.at("parent_id").is_null()) {
    p.parent_id = j.at("parent_id").get<std::uint64_t>();
  }
  return p;
}

namespace {

std::string one_decimal(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", x);
  return buf;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

bool contains(const std::vector<std::string>& items, std::string_view x) {
  return std::find(items.begin(), items.end(), x) != items.end();
}

bool punished_by(const AgentContext& ctx, std::string_view actor, std::string_view target) {
  return std::any_of(ctx.punishments.begin(), ctx.punishments.end(), [&](const PunishmentRecord& p) {
    return p.actor == actor && p.target == target;
  });
}

std::string pick(const std::vector<std::string>& items, Rng& rng) {
  return items[rng.uniform_index(items.size())];
}

std::vector<std::string> others(const AgentContext& ctx) {
  std::vector<std::string> out;
  for (const auto& name : ctx.roster) {
    if (name != ctx.self_name) out.push_back(name);
  }
  return out;
}

}  // namespace

std::string serialize_context(const AgentContext& ctx) {
  std::ostringstream out;
  out << "Phase: " << protocol::to_string(ctx.phase) << '\n';
  out << "You are: " << ctx.self_name << '\n';
  out << "Players: " << join(ctx.roster, ", ") << '\n';
  if (ctx.phase == Phase::Discussion) {
    out << "Announced scores:\n";
    for (const auto& e : ctx.announcement) {
      out << "- " << e.name << ": " << one_decimal(e.score)
          << (e.cheated ? " (cheated)" : " (took the test)") << '\n';
    }
    out << "Discussion so far:";
    if (ctx.transcript.empty()) out << " nobody has spoken yet";
    out << '\n';
    for (std::size_t i = 0; i < ctx.transcript.size(); ++i) {
      out << "[" << (i + 1) << "] " << ctx.transcript[i].speaker << ": "
          << ctx.transcript[i].utterance << '\n';
    }
    out << "Punishments so far:";
    if (ctx.punishments.empty()) out << " none";
    out << '\n';
    for (const auto& p : ctx.punishments) out << "- " << p.actor << " punished " << p.target << '\n';
  }
  out << '\n' << protocol::protocol_instructions(ctx.phase, ctx.roster, ctx.self_name);
  if (ctx.correction) {
    out << "\nYour previous reply could not be used (attempt " << ctx.attempt + 1
        << "): " << *ctx.correction << '\n';
  }
  return out.str();
}

std::string context_hash(const AgentContext& context) {
  return gateway::sha256_hex(serialize_context(context));
}

Command parametric_test_decision(TraitScore boldness, Rng& rng) {
  return rng.bernoulli_ratio(static_cast<std::uint64_t>(boldness.value()), TraitScore::kMax)
             ? Command::cheat()
             : Command::test();
}

std::vector<std::string> unpunished_cheaters(const AgentContext& ctx) {
  std::vector<std::string> out;
  for (const auto& name : ctx.roster) {
    if (name == ctx.self_name) continue;
    const auto it = std::find_if(ctx.announcement.begin(), ctx.announcement.end(),
                                 [&](const AnnouncementEntry& e) { return e.name == name; });
    if (it == ctx.announcement.end() || !it->cheated) continue;
    if (punished_by(ctx, ctx.self_name, name)) continue;
    out.push_back(name);
  }
  return out;
}

std::vector<std::string> non_punishers(const AgentContext& ctx) {
  const bool anyone_cheated = std::any_of(ctx.announcement.begin(), ctx.announcement.end(),
                                          [](const AnnouncementEntry& e) { return e.cheated; });
  if (!anyone_cheated) return {};
  std::vector<std::string> spoke;
  std::vector<std::string> punishers;
  for (const auto& t : ctx.transcript) {
    spoke.push_back(t.speaker);
    if (t.command.kind == CommandKind::Punish) punishers.push_back(t.speaker);
  }
  std::vector<std::string> out;
  for (const auto& name : ctx.roster) {
    if (name == ctx.self_name || !contains(spoke, name) || contains(punishers, name)) continue;
    if (punished_by(ctx, ctx.self_name, name)) {
      const auto it = std::find_if(ctx.announcement.begin(), ctx.announcement.end(),
                                   [&](const AnnouncementEntry& e) { return e.name == name; });
      if (it != ctx.announcement.end() && it->cheated) continue;
    }
    out.push_back(name);
  }
  return out;
}

Command parametric_discussion_decision(TraitScore vengefulness, const AgentContext& ctx,
                                       bool metanorm, Rng& rng) {
  const auto v = static_cast<std::uint64_t>(vengefulness.value());
  const auto cheaters = unpunished_cheaters(ctx);
  if (!cheaters.empty()) {
    if (rng.bernoulli_ratio(v, TraitScore::kMax)) return Command::punish(pick(cheaters, rng));
  } else if (metanorm) {
    const auto shirkers = non_punishers(ctx);
    if (!shirkers.empty() && rng.bernoulli_ratio(v, TraitScore::kMax)) {
      return Command::punish(pick(shirkers, rng));
    }
  }
  return Command::next(pick(others(ctx), rng));
}

std::string ParametricAgent::respond(const AgentContext& context) {
  const Command c = context.phase == Phase::Test
                        ? parametric_test_decision(traits_.boldness, rng_)
                        : parametric_discussion_decision(traits_.vengefulness, context, metanorm_, rng_);
  return protocol::render_command(c);
}

std::string ScriptedAgent::respond(const AgentContext& context) {
  if (script_) return script_(context);
  if (cursor_ >= lines_.size()) throw BackendFailure("script exhausted");
  return lines_[cursor_++];
}

UtteranceFixtures load_utterance_fixtures(const std::string& runlog_path) {
  std::ifstream in(runlog_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + runlog_path);
  UtteranceFixtures fixtures;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json event = json::parse(line, nullptr, false);
    if (event.is_discarded() || !event.contains("payload")) continue;
    const auto& payload = event["payload"];
    if (!payload.is_object()) continue;
    const auto hash = payload.find("context_hash");
    const auto utterance = payload.find("utterance");
    if (hash != payload.end() && utterance != payload.end() && hash->is_string() && utterance->is_string()) {
      fixtures.emplace(hash->get<std::string>(), utterance->get<std::string>());
    }
  }
  return fixtures;
}

std::string ReplayAgent::respond(const AgentContext& context) {
  const auto hash = context_hash(context);
  const auto it = fixtures_->find(hash);
  if (it == fixtures_->end()) throw BackendFailure("no recorded utterance for context " + hash);
  return it->second;
}

std::string system_prompt(const AgentContext& ctx) {
  const std::string rules = prompts::render(
      prompts::get("game_rules.v1"),
      {{"base_mean", one_decimal(ctx.rules.base_mean)},
       {"cheat_bonus", std::to_string(ctx.rules.cheat_bonus)},
       {"punish_cost", std::to_string(ctx.rules.punish_cost)},
       {"punish_damage", std::to_string(ctx.rules.punish_damage)}});
  const std::string n = std::to_string(ctx.rules.n_agents);
  if (const auto* t = std::get_if<Traits>(&ctx.self_persona)) {
    return prompts::render(prompts::get("system_traits.v1"),
                           {{"name", ctx.self_name},
                            {"n_agents", n},
                            {"vengefulness", std::to_string(t->vengefulness.value())},
                            {"boldness", std::to_string(t->boldness.value())},
                            {"vengefulness_description", std::string(prompts::get("trait_vengefulness.v1"))},
                            {"boldness_description", std::string(prompts::get("trait_boldness.v1"))},
                            {"rules", rules}});
  }
  return prompts::render(prompts::get("system_persona.v1"),
                         {{"name", ctx.self_name},
                          {"n_agents", n},
                          {"persona", std::get<TextPersona>(ctx.self_persona).description},
                          {"rules", rules}});
}

gateway::ModelRequest build_model_request(const AgentContext& context, std::string model,
                                          double temperature) {
  gateway::ModelRequest request;
  request.model = std::move(model);
  request.temperature = temperature;
  request.messages.push_back({"system", system_prompt(context)});
  request.messages.push_back({"user", serialize_context(context)});
  return request;
}

std::string ModelAgent::respond(const AgentContext& context) {
  const auto request =
      build_model_request(context, gateway_.config().chat_model, gateway_.config().temperature);
  try {
    return gateway_.complete(request);
  } catch (const gateway::GatewayError& e) {
    throw BackendFailure(e.what());
  }
}

std::string_view to_string(TraitLevel level) {
  switch (level) {
    case TraitLevel::Low: return "low";
    case TraitLevel::High: return "high";
    case TraitLevel::Uniform: return "uniform";
  }
  return "?";
}

TraitScore sample_trait(TraitLevel level, Rng& rng) {
  switch (level) {
    case TraitLevel::Low: return TraitScore(rng.uniform_int(1, 3));
    case TraitLevel::High: return TraitScore(rng.uniform_int(5, 7));
    case TraitLevel::Uniform: break;
  }
  return TraitScore(rng.uniform_int(1, 7));
}

namespace {

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      break;
    }
    out.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find(", ", start);
    if (end == std::string_view::npos) end = text.size();
    out.emplace_back(text.substr(start, end - start));
    start = end + 2;
  }
  return out;
}

std::string strip_prefix(const std::string& line, std::string_view prefix) {
  return line.substr(prefix.size());
}

std::string offline_game_reply(const std::string& user, Rng& rng) {
  const auto lines = lines_of(user);
  if (lines.size() < 3) return "I pass.";
  const bool test_phase = lines[0] == "Phase: test";
  const std::string self = strip_prefix(lines[1], "You are: ");
  const auto roster = split_list(strip_prefix(lines[2], "Players: "));

  if (test_phase) {
    return rng.uniform_index(3) == 0 ? "Fortune favours the bold. <cheat/>"
                                     : "I will take the test honestly. <test/>";
  }

  std::vector<std::string> cheaters;
  std::vector<std::string> punished_by_me;
  bool in_scores = false;
  bool in_punishments = false;
  for (const auto& line : lines) {
    if (line == "Announced scores:") {
      in_scores = true;
      continue;
    }
    if (line.rfind("Discussion so far:", 0) == 0) in_scores = false;
    if (line.rfind("Punishments so far:", 0) == 0) {
      in_punishments = true;
      continue;
    }
    if (line.empty()) in_punishments = false;
    if (in_scores && line.size() > 2 && line.ends_with(" (cheated)")) {
      const auto colon = line.find(": ");
      if (colon != std::string::npos) cheaters.push_back(line.substr(2, colon - 2));
    }
    if (in_punishments && line.rfind("- " + self + " punished ", 0) == 0) {
      punished_by_me.push_back(line.substr(2 + self.size() + 10));
    }
  }
  std::vector<std::string> targets;
  for (const auto& c : cheaters) {
    if (c != self && !contains(punished_by_me, c)) targets.push_back(c);
  }
  if (!targets.empty() && rng.uniform_index(2) == 0) {
    const auto t = pick(targets, rng);
    return "Cheating cannot go unanswered, " + t + ". <punish>" + t + "</punish>";
  }
  std::vector<std::string> rest;
  for (const auto& name : roster) {
    if (name != self) rest.push_back(name);
  }
  if (rest.empty()) return "I pass.";
  const auto t = pick(rest, rng);
  return "Let us hear from " + t + ". <next>" + t + "</next>";
}

// Pairs of interchangeable words for offline rephrasing.
constexpr std::pair<std::string_view, std::string_view> kSynonyms[] = {
    {"honest", "truthful"},   {"cautious", "careful"},   {"bold", "daring"},
    {"punishes", "penalizes"}, {"cheaters", "liars"},     {"fair", "just"},
    {"loyal", "faithful"},    {"avoids", "shuns"},       {"rules", "norms"},
    {"risky", "reckless"},    {"calm", "composed"},      {"harsh", "stern"},
    {"forgiving", "lenient"}, {"clever", "shrewd"},      {"trusts", "believes"},
    {"always", "consistently"}, {"never", "rarely"},     {"strategic", "calculating"},
};

std::string offline_rephrase(const std::string& text, Rng& rng) {
  std::vector<std::string> words;
  std::istringstream in(text);
  for (std::string w; in >> w;) words.push_back(w);
  std::vector<std::pair<std::size_t, std::string_view>> swaps;
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (const auto& [a, b] : kSynonyms) {
      if (words[i] == a) swaps.emplace_back(i, b);
      if (words[i] == b) swaps.emplace_back(i, a);
    }
  }
  if (swaps.empty()) return text;
  const auto& [index, replacement] = swaps[rng.uniform_index(swaps.size())];
  words[index] = std::string(replacement);
  return join(words, " ");
}

constexpr std::string_view kTemperament[] = {"honest", "cautious", "bold", "calm", "clever",
                                             "loyal", "harsh", "forgiving", "strategic", "risky"};
constexpr std::string_view kRole[] = {"player", "competitor", "teammate", "negotiator", "rival"};
constexpr std::string_view kStance[] = {
    "who punishes cheaters without hesitation",
    "who avoids conflict and trusts others",
    "who bends rules when nobody is watching",
    "who defends allies and never forgives betrayal",
    "who always follows the rules and expects fairness",
    "who cheats when the reward looks worth it",
    "who punishes those who ignore cheating",
    "who keeps quiet and protects their own score",
};

std::string offline_persona(Rng& rng) {
  const auto a = kTemperament[rng.uniform_index(std::size(kTemperament))];
  auto b = kTemperament[rng.uniform_index(std::size(kTemperament))];
  if (b == a) b = kTemperament[(std::find(std::begin(kTemperament), std::end(kTemperament), a) -
                                std::begin(kTemperament) + 1) % std::size(kTemperament)];
  const auto role = kRole[rng.uniform_index(std::size(kRole))];
  const auto stance = kStance[rng.uniform_index(std::size(kStance))];
  const bool vowel = std::string_view("aeiou").find(a.front()) != std::string_view::npos;
  return std::string(vowel ? "An " : "A ") + std::string(a) + ", " + std::string(b) + " " +
         std::string(role) + " " + std::string(stance) + ".";
}

}  // namespace

std::string offline_responder(const gateway::ModelRequest& request) {
  if (request.messages.size() < 2) return {};
  const auto& system = request.messages.front().content;
  const auto& user = request.messages.back().content;
  const auto hash = gateway::request_hash(request);
  Rng rng(std::stoull(hash.substr(0, 16), nullptr, 16));
  if (system == prompts::get("rephrase.v1")) return offline_rephrase(user, rng);
  if (system == prompts::get("persona_generate.v1")) return offline_persona(rng);
  if (user.rfind("Phase: ", 0) == 0) return offline_game_reply(user, rng);
  return {};
}

}  // namespace normsgame::agents
