#include "normsgame/runlog.hpp"

namespace normsgame {

using nlohmann::json;
using nlohmann::ordered_json;

void RunLog::emit(std::string_view phase, std::string_view type, ordered_json payload,
                  std::uint64_t rng_cursor) {
  ordered_json line;
  line["v"] = kRunLogVersion;
  line["run_id"] = run_id_;
  line["round"] = round_ ? ordered_json(*round_) : ordered_json(nullptr);
  line["phase"] = phase;
  line["type"] = type;
  line["payload"] = std::move(payload);
  line["rng_cursor"] = rng_cursor;
  out_ << line.dump() << '\n';
  ++lines_;
}

LogEvent parse_event(std::string_view line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw LogFormatError("not a JSON object");
  try {
    LogEvent e;
    e.v = j.at("v").get<int>();
    if (e.v != kRunLogVersion) {
      throw LogFormatError("unsupported log version " + std::to_string(e.v));
    }
    e.run_id = j.at("run_id").get<std::string>();
    if (!j.at("round").is_null()) e.round = j.at("round").get<std::int64_t>();
    e.phase = j.at("phase").get<std::string>();
    e.type = j.at("type").get<std::string>();
    e.payload = j.at("payload");
    e.rng_cursor = j.at("rng_cursor").get<std::uint64_t>();
    return e;
  } catch (const json::exception& ex) {
    throw LogFormatError(std::string("missing or mistyped field: ") + ex.what());
  }
}

}  // namespace normsgame
