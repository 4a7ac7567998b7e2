#pragma once

#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "labplane/event_log.hpp"
#include "labplane/types.hpp"

namespace labplane {

/// One-minute GPU utilisation sample. The value covers (timestamp - 60 s, timestamp].
struct UtilSample {
  std::string node_id;
  Timestamp timestamp = 0;
  double gpu_util_percent = 0;

  bool operator==(const UtilSample&) const = default;
};

/// Closed time range [from, to].
struct TimeWindow {
  Timestamp from = -std::numeric_limits<double>::infinity();
  Timestamp to = std::numeric_limits<double>::infinity();

  bool contains(Timestamp t) const noexcept { return t >= from && t <= to; }
  static TimeWindow all() { return {}; }
  /// The trailing `length` seconds ending at `end`.
  static TimeWindow ending_at(Timestamp end, Seconds length) { return {end - length, end}; }
};

enum class LatencyCondition { kCold, kWarm, kPipeline };

struct LatencyRecord {
  std::string workspace_id;  // pipeline id for kPipeline
  LatencyCondition condition = LatencyCondition::kCold;
  Seconds duration = 0;
  Timestamp requested_at = 0;
  Timestamp ready_at = 0;

  bool operator==(const LatencyRecord&) const = default;
};

struct OnboardingRecord {
  std::string researcher;
  Timestamp first_workspace_at = 0;
  std::optional<Timestamp> first_success_at;
  bool assisted = false;

  std::optional<Seconds> duration() const {
    if (!first_success_at) return std::nullopt;
    return *first_success_at - first_workspace_at;
  }
  bool operator==(const OnboardingRecord&) const = default;
};

/// [start, end): `end` is the last idle sample's timestamp plus one period.
struct IdleInterval {
  std::string node_id;
  Timestamp start = 0;
  Timestamp end = 0;

  Seconds duration() const noexcept { return end - start; }
  bool operator==(const IdleInterval&) const = default;
};

struct IdleRule {
  double threshold_percent = 5.0;
  std::size_t min_samples = 30;
  Seconds period = kMinute;
};

/// Maximal runs of >= rule.min_samples consecutive samples below the threshold.
/// Samples must belong to one node; they are sorted here. A gap in the cadence
/// ends a run.
std::vector<IdleInterval> find_idle_intervals(std::span<const UtilSample> samples, const IdleRule& rule = {});

/// Unweighted mean of the samples divided by 100. Throws kUndefinedMetric when empty.
double mean_utilisation(std::span<const UtilSample> samples);

struct HealthSample {
  std::string workspace_id;
  Timestamp timestamp = 0;
  bool reproducible = false;
};

/// Targets and baselines for the summary. Organisational baselines are constants, not measurements.
struct MetricTargets {
  Seconds warm_latency_target = 20;
  Seconds pipeline_latency_target = 5 * kMinute;
  double reproducibility_target = 0.99;
  double utilisation_baseline = 0.30;
  std::string latency_baseline = "10-20 min (VM boot only)";
  std::string reproducibility_baseline = "Indeterminate (no enforcement)";
  std::string onboarding_baseline = "1-3 business days";
  std::string utilisation_baseline_text = "<30% (dedicated, unmanaged)";
};

struct MetricLine {
  std::string metric;
  bool available = false;
  std::optional<double> value;
  std::string unit;
  std::size_t count = 0;
  std::string baseline;
  std::string target;
  // Unset when there is no target or the metric is unavailable.
  std::optional<bool> met;
  std::string note;
};

/// The headline metrics over one window, each against its baseline and target.
struct SummaryReport {
  TimeWindow window;
  MetricLine warm_latency;
  MetricLine cold_latency;
  MetricLine pipeline_latency;
  MetricLine reproducibility;
  MetricLine onboarding;
  MetricLine utilisation;
  std::size_t assisted_onboardings = 0;
  std::size_t pending_onboardings = 0;
  std::size_t idle_intervals = 0;
  Seconds idle_seconds = 0;
  // Measured utilisation against the dedicated-VM baseline; unset when unavailable.
  std::optional<bool> utilisation_below_baseline;

  std::vector<const MetricLine*> lines() const {
    return {&warm_latency, &cold_latency, &pipeline_latency, &reproducibility, &onboarding, &utilisation};
  }
  std::string to_text() const;
};

void to_json(nlohmann::json& j, const UtilSample& s);
void to_json(nlohmann::json& j, const LatencyRecord& r);
void to_json(nlohmann::json& j, const OnboardingRecord& r);
void to_json(nlohmann::json& j, const IdleInterval& i);
void to_json(nlohmann::json& j, const MetricLine& m);
void to_json(nlohmann::json& j, const SummaryReport& r);
void to_json(nlohmann::json& j, const TimeWindow& w);
const char* to_string(LatencyCondition c) noexcept;

/// The metric inputs extracted from an event log. Every query is a pure
/// function of the events it was built from.
class MetricsLedger {
 public:
  static MetricsLedger from_events(std::span<const Event> events);
  /// For traces imported from CSV: only utilisation queries are meaningful.
  static MetricsLedger from_samples(std::vector<UtilSample> samples);

  /// Creation (or requeue) to the first Running that followed it.
  /// Throws kNotFound when the workspace never reached Running.
  LatencyRecord deployment_latency(const std::string& workspace_id) const;
  /// Every request-to-Running record, restarts and pipelines included.
  std::vector<LatencyRecord> latency_records(const TimeWindow& window = TimeWindow::all()) const;

  /// Throws kUndefinedMetric when no report falls in the window.
  double reproducibility_rate(const TimeWindow& window = TimeWindow::all()) const;
  std::size_t health_report_count(const TimeWindow& window = TimeWindow::all()) const;

  /// Throws kNotFound for a researcher who never created a workspace.
  OnboardingRecord onboarding_time(const std::string& researcher) const;
  std::vector<OnboardingRecord> onboarding_records() const;

  /// Throws kUndefinedMetric when no sample falls in the window.
  double utilisation(const TimeWindow& window = TimeWindow::all()) const;
  /// Throws kNotFound for a node with no samples.
  std::vector<IdleInterval> idle_intervals(const std::string& node_id,
                                           const TimeWindow& window = TimeWindow::all()) const;

  SummaryReport summary(const TimeWindow& window = TimeWindow::all(), const MetricTargets& targets = {}) const;

  const std::vector<UtilSample>& samples() const noexcept { return samples_; }
  std::vector<UtilSample> samples_for(const std::string& node_id, const TimeWindow& window = TimeWindow::all()) const;
  std::set<std::string> sampled_nodes() const;
  /// End of the history, i.e. the last event's timestamp.
  Timestamp horizon() const noexcept { return horizon_; }

 private:
  std::vector<UtilSample> samples_;
  std::vector<HealthSample> health_;
  std::vector<LatencyRecord> latencies_;
  std::map<std::string, LatencyRecord> first_latency_;
  std::map<std::string, OnboardingRecord> onboarding_;
  Timestamp horizon_ = 0;
};

// Sample traces as delimited text: node_id,unix_seconds,util_percent (header optional).
void write_trace_csv(std::ostream& out, std::span<const UtilSample> samples);
std::vector<UtilSample> read_trace_csv(std::istream& in);

}  // namespace labplane
