#include "labplane/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "labplane/error.hpp"
#include "labplane/simulation.hpp"
#include "labplane/state.hpp"

namespace labplane {

namespace ek = event_kind;
using nlohmann::json;

std::vector<IdleInterval> find_idle_intervals(std::span<const UtilSample> samples, const IdleRule& rule) {
  std::vector<UtilSample> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const UtilSample& a, const UtilSample& b) { return a.timestamp < b.timestamp; });

  std::vector<IdleInterval> out;
  std::size_t run_start = 0;
  std::size_t run_len = 0;
  auto close = [&](std::size_t last) {
    if (run_len >= rule.min_samples) {
      out.push_back({sorted[run_start].node_id, sorted[run_start].timestamp, sorted[last].timestamp + rule.period});
    }
    run_len = 0;
  };
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const bool idle = sorted[i].gpu_util_percent < rule.threshold_percent;
    const bool contiguous = i > 0 && std::abs(sorted[i].timestamp - sorted[i - 1].timestamp - rule.period) < 1e-6;
    if (run_len > 0 && (!idle || !contiguous)) close(i - 1);
    if (idle) {
      if (run_len == 0) run_start = i;
      ++run_len;
    }
  }
  if (run_len > 0) close(sorted.size() - 1);
  return out;
}

double mean_utilisation(std::span<const UtilSample> samples) {
  if (samples.empty()) throw Error(ErrorCode::kUndefinedMetric, "no utilisation samples in window", "window");
  double sum = 0;
  for (const auto& s : samples) sum += s.gpu_util_percent;
  return sum / static_cast<double>(samples.size()) / 100.0;
}

// ---------------------------------------------------------------------------

MetricsLedger MetricsLedger::from_events(std::span<const Event> events) {
  MetricsLedger m;
  std::map<std::string, Timestamp> requested;
  for (const auto& e : events) {
    m.horizon_ = e.timestamp;
    const auto& p = e.payload;
    if (e.kind == ek::kSampleTick) {
      const auto at = p.at("at").get<double>();
      for (const auto& s : p.at("samples")) {
        m.samples_.push_back({s.at("node_id").get<std::string>(), at, s.at("util").get<double>()});
      }
    } else if (e.kind == ek::kHealthReported) {
      const auto& r = p.at("report");
      m.health_.push_back({r.at("workspace_id").get<std::string>(), e.timestamp, r.at("reproducible").get<bool>()});
    } else if (e.kind == ek::kWorkspaceCreated) {
      const auto id = p.at("workspace_id").get<std::string>();
      requested[id] = e.timestamp;
      const auto owner = p.at("owner").get<std::string>();
      auto [it, fresh] = m.onboarding_.try_emplace(owner);
      if (fresh || std::isnan(it->second.first_workspace_at)) {
        it->second.researcher = owner;
        it->second.first_workspace_at = e.timestamp;
      }
    } else if (e.kind == ek::kWorkspaceRequeued) {
      requested[p.at("workspace_id").get<std::string>()] = e.timestamp;
    } else if (e.kind == ek::kWorkspaceRunning) {
      const auto id = p.at("workspace_id").get<std::string>();
      auto it = requested.find(id);
      if (it == requested.end()) continue;
      const auto cond = p.at("start_condition").get<StartCondition>();
      LatencyRecord rec{id, cond == StartCondition::kWarm ? LatencyCondition::kWarm : LatencyCondition::kCold,
                        e.timestamp - it->second, it->second, e.timestamp};
      requested.erase(it);
      m.first_latency_.try_emplace(id, rec);
      m.latencies_.push_back(std::move(rec));
    } else if (e.kind == ek::kPipelineCompleted) {
      const auto run = p.at("run").get<PipelineRun>();
      if (!run.succeeded()) continue;
      const auto started = p.at("started_at").get<double>();
      m.latencies_.push_back({p.at("pipeline_id").get<std::string>(), LatencyCondition::kPipeline, run.total,
                              started, e.timestamp});
    } else if (e.kind == ek::kJobCompleted) {
      if (p.at("exit_code").get<int>() != 0) continue;
      auto it = m.onboarding_.find(p.at("owner").get<std::string>());
      if (it != m.onboarding_.end() && !it->second.first_success_at) it->second.first_success_at = e.timestamp;
    } else if (e.kind == ek::kAssistedSet) {
      const auto r = p.at("researcher").get<std::string>();
      // The flag may be set before the first workspace exists.
      auto [it, fresh] = m.onboarding_.try_emplace(r);
      if (fresh) {
        it->second.researcher = r;
        it->second.first_workspace_at = std::numeric_limits<double>::quiet_NaN();
      }
      it->second.assisted = p.at("assisted").get<bool>();
    }
  }
  return m;
}

MetricsLedger MetricsLedger::from_samples(std::vector<UtilSample> samples) {
  MetricsLedger m;
  m.samples_ = std::move(samples);
  for (const auto& s : m.samples_) m.horizon_ = std::max(m.horizon_, s.timestamp);
  return m;
}

LatencyRecord MetricsLedger::deployment_latency(const std::string& workspace_id) const {
  auto it = first_latency_.find(workspace_id);
  if (it == first_latency_.end()) {
    throw Error(ErrorCode::kNotFound, fmt::format("workspace '{}' has not reached Running", workspace_id),
                "workspace_id");
  }
  return it->second;
}

std::vector<LatencyRecord> MetricsLedger::latency_records(const TimeWindow& window) const {
  std::vector<LatencyRecord> out;
  for (const auto& r : latencies_) {
    if (window.contains(r.ready_at)) out.push_back(r);
  }
  return out;
}

std::size_t MetricsLedger::health_report_count(const TimeWindow& window) const {
  return static_cast<std::size_t>(
      std::count_if(health_.begin(), health_.end(), [&](const HealthSample& h) { return window.contains(h.timestamp); }));
}

double MetricsLedger::reproducibility_rate(const TimeWindow& window) const {
  std::size_t total = 0;
  std::size_t pass = 0;
  for (const auto& h : health_) {
    if (!window.contains(h.timestamp)) continue;
    ++total;
    if (h.reproducible) ++pass;
  }
  if (total == 0) throw Error(ErrorCode::kUndefinedMetric, "no health reports in window", "window");
  return static_cast<double>(pass) / static_cast<double>(total);
}

OnboardingRecord MetricsLedger::onboarding_time(const std::string& researcher) const {
  auto it = onboarding_.find(researcher);
  if (it == onboarding_.end() || std::isnan(it->second.first_workspace_at)) {
    throw Error(ErrorCode::kNotFound, fmt::format("researcher '{}' has not created a workspace", researcher),
                "researcher");
  }
  return it->second;
}

std::vector<OnboardingRecord> MetricsLedger::onboarding_records() const {
  std::vector<OnboardingRecord> out;
  for (const auto& [r, rec] : onboarding_) {
    if (!std::isnan(rec.first_workspace_at)) out.push_back(rec);
  }
  return out;
}

std::vector<UtilSample> MetricsLedger::samples_for(const std::string& node_id, const TimeWindow& window) const {
  std::vector<UtilSample> out;
  for (const auto& s : samples_) {
    if (s.node_id == node_id && window.contains(s.timestamp)) out.push_back(s);
  }
  return out;
}

std::set<std::string> MetricsLedger::sampled_nodes() const {
  std::set<std::string> out;
  for (const auto& s : samples_) out.insert(s.node_id);
  return out;
}

double MetricsLedger::utilisation(const TimeWindow& window) const {
  std::vector<UtilSample> in;
  for (const auto& s : samples_) {
    if (window.contains(s.timestamp)) in.push_back(s);
  }
  return mean_utilisation(in);
}

std::vector<IdleInterval> MetricsLedger::idle_intervals(const std::string& node_id, const TimeWindow& window) const {
  if (!std::any_of(samples_.begin(), samples_.end(), [&](const UtilSample& s) { return s.node_id == node_id; })) {
    throw Error(ErrorCode::kNotFound, fmt::format("no utilisation samples for node '{}'", node_id), "node_id");
  }
  return find_idle_intervals(samples_for(node_id, window));
}

SummaryReport MetricsLedger::summary(const TimeWindow& window, const MetricTargets& targets) const {
  SummaryReport r;
  r.window = window;
  const auto records = latency_records(window);

  auto latency_line = [&](LatencyCondition cond, const char* name) {
    MetricLine line;
    line.metric = name;
    line.unit = "s";
    line.baseline = targets.latency_baseline;
    double sum = 0;
    double worst = 0;
    for (const auto& rec : records) {
      if (rec.condition != cond) continue;
      ++line.count;
      sum += rec.duration;
      worst = std::max(worst, rec.duration);
    }
    line.available = line.count > 0;
    if (!line.available) return std::pair{line, worst};
    line.value = sum / static_cast<double>(line.count);
    return std::pair{line, worst};
  };

  {
    auto [line, worst] = latency_line(LatencyCondition::kWarm, "deployment_latency_warm");
    line.target = fmt::format("<{} s (warm)", targets.warm_latency_target);
    line.note = "mean request-to-Running";
    if (line.available) line.met = *line.value < targets.warm_latency_target;
    r.warm_latency = line;
  }
  {
    auto [line, worst] = latency_line(LatencyCondition::kCold, "deployment_latency_cold");
    line.note = "mean request-to-Running; image pull + init";
    r.cold_latency = line;
  }
  {
    auto [line, worst] = latency_line(LatencyCondition::kPipeline, "deployment_latency_pipeline");
    line.target = fmt::format("<{} min (CI/CD)", targets.pipeline_latency_target / kMinute);
    if (line.available) {
      line.value = worst;
      line.met = worst < targets.pipeline_latency_target;
      line.note = "slowest successful run";
    }
    r.pipeline_latency = line;
  }

  r.reproducibility.metric = "reproducibility_rate";
  r.reproducibility.unit = "fraction";
  r.reproducibility.baseline = targets.reproducibility_baseline;
  r.reproducibility.target = fmt::format(">={:g}% of workspace starts", targets.reproducibility_target * 100);
  r.reproducibility.count = health_report_count(window);
  if (r.reproducibility.count > 0) {
    r.reproducibility.available = true;
    r.reproducibility.value = reproducibility_rate(window);
    r.reproducibility.met = *r.reproducibility.value >= targets.reproducibility_target;
  }

  r.onboarding.metric = "onboarding_time";
  r.onboarding.unit = "s";
  r.onboarding.baseline = targets.onboarding_baseline;
  r.onboarding.target = "To be established";
  double onboard_sum = 0;
  for (const auto& rec : onboarding_records()) {
    if (!window.contains(rec.first_workspace_at)) continue;
    if (rec.assisted) ++r.assisted_onboardings;
    if (auto d = rec.duration()) {
      ++r.onboarding.count;
      onboard_sum += *d;
    } else {
      ++r.pending_onboardings;
    }
  }
  if (r.onboarding.count > 0) {
    r.onboarding.available = true;
    r.onboarding.value = onboard_sum / static_cast<double>(r.onboarding.count);
  }
  r.onboarding.note = fmt::format("mean first workspace to first exit-0 job; {} assisted, {} pending",
                                  r.assisted_onboardings, r.pending_onboardings);

  r.utilisation.metric = "gpu_utilisation";
  r.utilisation.unit = "fraction";
  r.utilisation.baseline = targets.utilisation_baseline_text;
  r.utilisation.target = "To be established";
  for (const auto& s : samples_) {
    if (window.contains(s.timestamp)) ++r.utilisation.count;
  }
  if (r.utilisation.count > 0) {
    r.utilisation.available = true;
    r.utilisation.value = utilisation(window);
    r.utilisation_below_baseline = *r.utilisation.value < targets.utilisation_baseline;
    r.utilisation.note = *r.utilisation_below_baseline ? "below the dedicated-VM baseline"
                                                       : "at or above the dedicated-VM baseline";
  }
  for (const auto& node : sampled_nodes()) {
    for (const auto& iv : find_idle_intervals(samples_for(node, window))) {
      ++r.idle_intervals;
      r.idle_seconds += iv.duration();
    }
  }
  return r;
}

namespace {

std::string format_value(const MetricLine& m) {
  if (!m.available) return "unavailable";
  if (m.unit == "fraction") return fmt::format("{:.2f}%", *m.value * 100);
  if (*m.value >= 2 * kHour) return fmt::format("{:.2f} h", *m.value / kHour);
  return fmt::format("{:.1f} s", *m.value);
}

}  // namespace

std::string SummaryReport::to_text() const {
  std::string out = fmt::format("{:<30} {:>14} {:>7}  {:<32} {:<28} {}\n", "metric", "value", "n", "baseline",
                                "target", "met");
  for (const auto* m : lines()) {
    const char* met_text = !m->met ? "-" : (*m->met ? "yes" : "no");
    out += fmt::format("{:<30} {:>14} {:>7}  {:<32} {:<28} {}\n", m->metric, format_value(*m), m->count, m->baseline,
                       m->target.empty() ? "-" : m->target, met_text);
  }
  out += fmt::format("assisted onboardings: {}  pending onboardings: {}\n", assisted_onboardings,
                     pending_onboardings);
  out += fmt::format("idle intervals: {} ({:.1f} node-hours)\n", idle_intervals, idle_seconds / kHour);
  if (utilisation_below_baseline) {
    out += fmt::format("utilisation {} the 30% baseline\n", *utilisation_below_baseline ? "below" : "not below");
  }
  return out;
}

const char* to_string(LatencyCondition c) noexcept {
  switch (c) {
    case LatencyCondition::kCold: return "Cold";
    case LatencyCondition::kWarm: return "Warm";
    case LatencyCondition::kPipeline: return "Pipeline";
  }
  return "?";
}

namespace {
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
}  // namespace

void to_json(json& j, const UtilSample& s) {
  j = json{{"node_id", s.node_id}, {"timestamp", s.timestamp}, {"gpu_util_percent", s.gpu_util_percent}};
}

void to_json(json& j, const LatencyRecord& r) {
  j = json{{"workspace_id", r.workspace_id},
           {"condition", to_string(r.condition)},
           {"duration", r.duration},
           {"requested_at", r.requested_at},
           {"ready_at", r.ready_at}};
}

void to_json(json& j, const OnboardingRecord& r) {
  j = json{{"researcher", r.researcher},
           {"first_workspace_at", r.first_workspace_at},
           {"first_success_at", r.first_success_at},
           {"duration", r.duration()},
           {"assisted", r.assisted}};
}

void to_json(json& j, const IdleInterval& i) {
  j = json{{"node_id", i.node_id}, {"start", i.start}, {"end", i.end}};
}

void to_json(json& j, const TimeWindow& w) { j = json{{"from", finite_or_null(w.from)}, {"to", finite_or_null(w.to)}}; }

void to_json(json& j, const MetricLine& m) {
  j = json{{"metric", m.metric}, {"available", m.available}, {"value", m.value}, {"unit", m.unit},
           {"count", m.count},   {"baseline", m.baseline},   {"target", m.target.empty() ? json(nullptr) : json(m.target)},
           {"met", m.met},       {"note", m.note}};
}

void to_json(json& j, const SummaryReport& r) {
  j = json{{"window", r.window},
           {"deployment_latency", {{"warm", r.warm_latency}, {"cold", r.cold_latency}, {"pipeline", r.pipeline_latency}}},
           {"reproducibility_rate", r.reproducibility},
           {"onboarding_time", r.onboarding},
           {"gpu_utilisation", r.utilisation},
           {"assisted_onboardings", r.assisted_onboardings},
           {"pending_onboardings", r.pending_onboardings},
           {"idle_intervals", r.idle_intervals},
           {"idle_seconds", r.idle_seconds},
           {"utilisation_below_baseline", r.utilisation_below_baseline}};
}

// ---------------------------------------------------------------------------

void write_trace_csv(std::ostream& out, std::span<const UtilSample> samples) {
  out << "node_id,unix_seconds,util_percent\n";
  for (const auto& s : samples) out << fmt::format("{},{},{}\n", s.node_id, s.timestamp, s.gpu_util_percent);
}

namespace {
double parse_number(std::string_view text, std::size_t line, const char* field) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("trace line {}: bad {} '{}'", line, field, text), field);
  }
  return v;
}
}  // namespace

std::vector<UtilSample> read_trace_csv(std::istream& in) {
  std::vector<UtilSample> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty()) continue;
    std::string_view text(raw);
    const auto c1 = text.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : text.find(',', c1 + 1);
    if (c2 == std::string_view::npos || text.find(',', c2 + 1) != std::string_view::npos) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("trace line {}: expected 3 fields", line), "trace");
    }
    if (line == 1 && text.substr(0, c1) == "node_id") continue;
    UtilSample s;
    s.node_id = std::string(text.substr(0, c1));
    s.timestamp = parse_number(text.substr(c1 + 1, c2 - c1 - 1), line, "unix_seconds");
    s.gpu_util_percent = parse_number(text.substr(c2 + 1), line, "util_percent");
    if (s.node_id.empty() || s.gpu_util_percent < 0 || s.gpu_util_percent > 100) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("trace line {}: out-of-range record", line), "trace");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace labplane
