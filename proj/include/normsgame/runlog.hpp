#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

// Append-only JSON-lines event stream.
//
// One object per line, keys always in this order:
//   {"v":1,"run_id":...,"round":<int|null>,"phase":...,"type":...,
//    "payload":{...},"rng_cursor":<uint>}
// Lines end in '\n'; doubles use the shortest round-trip form, so two runs
// with equal inputs produce equal bytes and replay checks are a file diff.
namespace normsgame {

inline constexpr int kRunLogVersion = 1;

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void emit(std::string_view phase, std::string_view type, nlohmann::ordered_json payload,
                    std::uint64_t rng_cursor) = 0;
};

class RunLog final : public EventSink {
 public:
  RunLog(std::string run_id, std::ostream& out) : run_id_(std::move(run_id)), out_(out) {}

  // Round index stamped on subsequent events; nullopt for run-level events.
  void set_round(std::optional<std::int64_t> round) { round_ = round; }
  std::optional<std::int64_t> round() const { return round_; }

  void emit(std::string_view phase, std::string_view type, nlohmann::ordered_json payload,
            std::uint64_t rng_cursor) override;

  const std::string& run_id() const { return run_id_; }
  std::uint64_t lines_written() const { return lines_; }

 private:
  std::string run_id_;
  std::ostream& out_;
  std::optional<std::int64_t> round_;
  std::uint64_t lines_ = 0;
};

// Discards everything; useful for runs whose log is not wanted.
class NullSink final : public EventSink {
 public:
  void emit(std::string_view, std::string_view, nlohmann::ordered_json, std::uint64_t) override {}
};

struct LogEvent {
  int v = kRunLogVersion;
  std::string run_id;
  std::optional<std::int64_t> round;
  std::string phase;
  std::string type;
  nlohmann::json payload;
  std::uint64_t rng_cursor = 0;
};

class LogFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws LogFormatError when the line is not a valid event.
LogEvent parse_event(std::string_view line);

}  // namespace normsgame
