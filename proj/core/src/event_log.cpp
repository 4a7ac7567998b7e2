#include "labplane/event_log.hpp"

#include <fstream>
#include <istream>
#include <memory>
#include <ostream>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {

void to_json(nlohmann::json& j, const Event& e) {
  j = nlohmann::json{
      {"sequence", e.sequence}, {"timestamp", e.timestamp}, {"kind", e.kind}, {"payload", e.payload}};
}

void from_json(const nlohmann::json& j, Event& e) {
  e.sequence = j.at("sequence").get<std::uint64_t>();
  e.timestamp = j.at("timestamp").get<double>();
  e.kind = j.at("kind").get<std::string>();
  e.payload = j.value("payload", nlohmann::json::object());
}

const Event& EventLog::append(Timestamp timestamp, std::string kind, nlohmann::json payload) {
  return append(Event{last_sequence() + 1, timestamp, std::move(kind), std::move(payload)});
}

const Event& EventLog::append(Event event) {
  if (event.sequence != last_sequence() + 1) {
    throw Error(ErrorCode::kDataLoss,
                fmt::format("event sequence gap: expected {}, got {}", last_sequence() + 1,
                            event.sequence),
                "sequence");
  }
  if (!events_.empty() && event.timestamp < events_.back().timestamp) {
    throw Error(ErrorCode::kDataLoss,
                fmt::format("event {} goes back in time", event.sequence), "timestamp");
  }
  events_.push_back(std::move(event));
  if (sink_) sink_(events_.back());
  return events_.back();
}

std::string to_jsonl(const Event& event) {
  std::string line = nlohmann::json(event).dump();
  line.push_back('\n');
  return line;
}

void write_jsonl(std::ostream& out, std::span<const Event> events) {
  for (const auto& e : events) out << to_jsonl(e);
}

LoadedLog read_jsonl(std::istream& in) {
  LoadedLog out;
  std::string line;
  std::size_t line_no = 0;
  bool pending_error = false;
  std::string pending_message;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (pending_error) {
      throw Error(ErrorCode::kDataLoss, pending_message);
    }
    try {
      out.events.push_back(nlohmann::json::parse(line).get<Event>());
    } catch (const nlohmann::json::exception& e) {
      pending_error = true;
      pending_message = fmt::format("malformed event on line {}: {}", line_no, e.what());
    }
  }
  out.dropped_torn_tail = pending_error;
  return out;
}

LoadedLog read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kNotFound, fmt::format("cannot open event log '{}'", path), "log");
  }
  return read_jsonl(in);
}

EventLog::Sink file_sink(const std::string& path) {
  auto out = std::make_shared<std::ofstream>(path, std::ios::app);
  if (!*out) {
    throw Error(ErrorCode::kFailedPrecondition, fmt::format("cannot open '{}' for append", path),
                "log");
  }
  return [out](const Event& e) {
    *out << to_jsonl(e);
    out->flush();
  };
}

}  // namespace labplane
