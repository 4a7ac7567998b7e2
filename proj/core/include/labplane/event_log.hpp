#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "labplane/types.hpp"

namespace labplane {

/// One state change. `kind` names the fact, `payload` carries everything
/// needed to re-apply it without consulting anything else.
struct Event {
  std::uint64_t sequence = 0;
  Timestamp timestamp = 0;
  std::string kind;
  nlohmann::json payload;

  bool operator==(const Event&) const = default;
};

void to_json(nlohmann::json& j, const Event& e);
void from_json(const nlohmann::json& j, Event& e);

/// Append-only, gapless event sequence starting at 1.
class EventLog {
 public:
  using Sink = std::function<void(const Event&)>;

  const Event& append(Timestamp timestamp, std::string kind, nlohmann::json payload);
  /// Appends an already-sequenced event (replay). Throws kDataLoss on a sequence gap.
  const Event& append(Event event);

  std::span<const Event> events() const noexcept { return events_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }
  std::uint64_t last_sequence() const noexcept { return events_.empty() ? 0 : events_.back().sequence; }

  /// Called after every append; used for write-through persistence.
  void set_sink(Sink sink) { sink_ = std::move(sink); }

 private:
  std::vector<Event> events_;
  Sink sink_;
};

/// One JSON object per line, newline-terminated.
std::string to_jsonl(const Event& event);
void write_jsonl(std::ostream& out, std::span<const Event> events);

struct LoadedLog {
  std::vector<Event> events;
  // A trailing line that did not parse (torn write); it is dropped.
  bool dropped_torn_tail = false;
};

/// Reads a line-delimited log. A malformed final line is treated as a torn
/// write and dropped; a malformed line anywhere else throws kDataLoss.
LoadedLog read_jsonl(std::istream& in);
LoadedLog read_jsonl_file(const std::string& path);

/// Appends each event to `path` as it is logged, flushing after every line.
EventLog::Sink file_sink(const std::string& path);

}  // namespace labplane
