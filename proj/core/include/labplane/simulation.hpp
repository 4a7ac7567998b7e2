#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "labplane/types.hpp"

namespace labplane {

enum class ClockMode { kVirtual, kRealTime };

/// Simulated clock. Virtual time only moves on explicit advances and never goes back.
class SimClock {
 public:
  explicit SimClock(Timestamp start = 0, ClockMode mode = ClockMode::kVirtual)
      : now_(start), mode_(mode) {}

  Timestamp now() const noexcept { return now_; }
  ClockMode mode() const noexcept { return mode_; }
  void set_mode(ClockMode mode) noexcept { mode_ = mode; }

  /// Throws kFailedPrecondition in RealTime mode, kInvalidArgument for delta <= 0.
  Timestamp advance(Seconds delta);
  /// Moves to `t` (>= now) regardless of mode; used by the real-time ticker and replay.
  void move_to(Timestamp t);

 private:
  Timestamp now_;
  ClockMode mode_;
};

/// Bursty per-researcher workload: alternating burst and gap periods with
/// exponentially distributed lengths.
struct WorkloadProfile {
  Seconds burst_duration_mean = 4 * kHour;
  Seconds gap_duration_mean = 16 * kHour;
  double burst_util_mean = 80.0;
  // Per-job utilisation is uniform in burst_util_mean +- util_spread, clamped to [1, 100].
  double util_spread = 15.0;
  int jobs_per_burst = 4;
  double failure_probability = 0.1;
  std::uint64_t seed = 42;

  void validate() const;
  bool operator==(const WorkloadProfile&) const = default;
};

/// The shipped profile. Calibrated so that one researcher per dedicated node
/// averages well under 30% GPU utilisation; it is configuration, not measurement.
WorkloadProfile default_workload_profile();

struct JobSubmission {
  std::string job_id;
  std::string researcher;
  Timestamp submit_at = 0;
  Seconds duration = 0;
  double util_percent = 0;
  int exit_code = 0;

  bool operator==(const JobSubmission&) const = default;
};

/// Deterministic per (profile, researchers, horizon, start). Sorted by submit time.
std::vector<JobSubmission> generate_workload(const WorkloadProfile& profile,
                                             std::span<const std::string> researchers,
                                             Seconds horizon, Timestamp start = 0);

// ---------------------------------------------------------------------------
// CI/CD pipeline model

enum class PipelineStage { kLint, kQuality, kTest, kBuild, kPush, kDeployHelm, kDeployCrd };

std::string_view to_string(PipelineStage stage) noexcept;
PipelineStage pipeline_stage_from_string(std::string_view text);
bool is_validate_stage(PipelineStage stage) noexcept;
bool is_deploy_stage(PipelineStage stage) noexcept;

struct StageRange {
  Seconds min = 0;
  Seconds max = 0;

  bool operator==(const StageRange&) const = default;
};

enum class BuildCache { kHit, kMiss };

struct PipelineConfig {
  std::string project_name;
  std::vector<PipelineStage> stages;
  // Stages without an entry use default_stage_range().
  std::map<PipelineStage, StageRange> stage_duration_ranges;
  BuildCache cache = BuildCache::kHit;
  Seconds cache_miss_penalty = 120;
  std::map<PipelineStage, double> failure_probability;
  std::optional<PipelineStage> forced_failure;
  std::uint64_t seed = 0;

  /// Validate stages first, then build, push, and a single trailing deploy.
  void validate() const;
  StageRange range_for(PipelineStage stage) const;
  bool operator==(const PipelineConfig&) const = default;
};

/// Generic ranges: validate 60-90 s (split across the validate stages present),
/// build 45-90 s + push 15-30 s, deploy 60-90 s.
StageRange default_stage_range(PipelineStage stage, std::span<const PipelineStage> stages);

struct StageRecord {
  PipelineStage stage;
  Seconds duration = 0;

  bool operator==(const StageRecord&) const = default;
};

enum class PipelineStatus { kSucceeded, kFailed };

struct PipelineRun {
  std::string project_name;
  // Completed stages only.
  std::vector<StageRecord> stages;
  std::optional<PipelineStage> failed_stage;
  Seconds failed_stage_elapsed = 0;
  Seconds total = 0;
  PipelineStatus status = PipelineStatus::kSucceeded;
  std::uint64_t run_index = 0;

  bool succeeded() const noexcept { return status == PipelineStatus::kSucceeded; }
  bool operator==(const PipelineRun&) const = default;
};

/// Draws stage durations uniformly from the configured ranges and stops at the
/// first failing stage. Deterministic per (config.seed, run_index). The deploy
/// stage ends when the deployed unit reaches Running.
PipelineRun run_pipeline(const PipelineConfig& config, std::uint64_t run_index = 0);

/// Stage lists with per-stage ranges calibrated to land inside the measured
/// end-to-end windows (A: 3m21s-3m40s, B: 2m51s-3m51s, C: 4m00s-5m00s).
PipelineConfig project_a_pipeline();
PipelineConfig project_b_pipeline();
PipelineConfig project_c_pipeline();
std::map<std::string, PipelineConfig> default_pipelines();

NLOHMANN_JSON_SERIALIZE_ENUM(ClockMode, {
                                            {ClockMode::kVirtual, "Virtual"},
                                            {ClockMode::kRealTime, "RealTime"},
                                        })
NLOHMANN_JSON_SERIALIZE_ENUM(BuildCache, {
                                             {BuildCache::kHit, "Hit"},
                                             {BuildCache::kMiss, "Miss"},
                                         })
NLOHMANN_JSON_SERIALIZE_ENUM(PipelineStatus, {
                                                 {PipelineStatus::kSucceeded, "Succeeded"},
                                                 {PipelineStatus::kFailed, "Failed"},
                                             })

void to_json(nlohmann::json& j, const PipelineStage& s);
void from_json(const nlohmann::json& j, PipelineStage& s);
void to_json(nlohmann::json& j, const WorkloadProfile& p);
void from_json(const nlohmann::json& j, WorkloadProfile& p);
void to_json(nlohmann::json& j, const JobSubmission& s);
void from_json(const nlohmann::json& j, JobSubmission& s);
void to_json(nlohmann::json& j, const StageRange& r);
void from_json(const nlohmann::json& j, StageRange& r);
void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);
void to_json(nlohmann::json& j, const StageRecord& r);
void from_json(const nlohmann::json& j, StageRecord& r);
void to_json(nlohmann::json& j, const PipelineRun& r);
void from_json(const nlohmann::json& j, PipelineRun& r);

}  // namespace labplane
