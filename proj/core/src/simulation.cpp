#include "labplane/simulation.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <fmt/format.h>

#include "labplane/error.hpp"

namespace labplane {

Timestamp SimClock::advance(Seconds delta) {
  if (mode_ == ClockMode::kRealTime) {
    throw Error(ErrorCode::kFailedPrecondition, "clock is in RealTime mode; explicit advances are rejected",
                "mode");
  }
  if (!(delta > 0)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("clock advance must be positive, got {}", delta),
                "seconds");
  }
  now_ += delta;
  return now_;
}

void SimClock::move_to(Timestamp t) {
  if (t < now_) {
    throw Error(ErrorCode::kInvalidArgument, "clock never moves backwards", "timestamp");
  }
  now_ = t;
}

// ---------------------------------------------------------------------------

void WorkloadProfile::validate() const {
  if (!(burst_duration_mean > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "burst_duration_mean must be positive", "burst_duration_mean");
  }
  if (!(gap_duration_mean > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "gap_duration_mean must be positive", "gap_duration_mean");
  }
  if (!(burst_util_mean > 0 && burst_util_mean <= 100)) {
    throw Error(ErrorCode::kInvalidArgument, "burst_util_mean must be in (0, 100]", "burst_util_mean");
  }
  if (util_spread < 0) {
    throw Error(ErrorCode::kInvalidArgument, "util_spread must be non-negative", "util_spread");
  }
  if (jobs_per_burst < 0) {
    throw Error(ErrorCode::kInvalidArgument, "jobs_per_burst must be non-negative", "jobs_per_burst");
  }
  if (!(failure_probability >= 0 && failure_probability <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "failure_probability must be in [0, 1]",
                "failure_probability");
  }
}

WorkloadProfile default_workload_profile() { return WorkloadProfile{}; }

std::vector<JobSubmission> generate_workload(const WorkloadProfile& profile,
                                             std::span<const std::string> researchers,
                                             Seconds horizon, Timestamp start) {
  profile.validate();
  if (!(horizon > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "horizon must be positive", "horizon");
  }
  std::vector<JobSubmission> out;
  if (profile.jobs_per_burst == 0) return out;

  const Timestamp end = start + horizon;
  for (std::size_t r = 0; r < researchers.size(); ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(profile.seed),
                      static_cast<std::uint32_t>(profile.seed >> 32), static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    std::exponential_distribution<double> burst(1.0 / profile.burst_duration_mean);
    std::exponential_distribution<double> gap(1.0 / profile.gap_duration_mean);
    std::uniform_real_distribution<double> util(profile.burst_util_mean - profile.util_spread,
                                                profile.burst_util_mean + profile.util_spread);
    std::bernoulli_distribution fails(profile.failure_probability);

    int job_no = 0;
    // Researchers start mid-gap so bursts are not phase-aligned.
    Timestamp t = start + gap(rng);
    while (t < end) {
      const Seconds length = burst(rng);
      const Seconds per_job = length / profile.jobs_per_burst;
      for (int k = 0; k < profile.jobs_per_burst; ++k) {
        JobSubmission job;
        job.researcher = researchers[r];
        job.job_id = fmt::format("{}-j{}", researchers[r], job_no++);
        job.submit_at = t + k * per_job;
        job.duration = per_job;
        job.util_percent = std::clamp(util(rng), 1.0, 100.0);
        job.exit_code = fails(rng) ? 1 : 0;
        if (job.submit_at < end) out.push_back(std::move(job));
      }
      t += length + gap(rng);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const JobSubmission& a, const JobSubmission& b) {
    return a.submit_at < b.submit_at;
  });
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(PipelineStage stage) noexcept {
  switch (stage) {
    case PipelineStage::kLint: return "lint";
    case PipelineStage::kQuality: return "quality";
    case PipelineStage::kTest: return "test";
    case PipelineStage::kBuild: return "build";
    case PipelineStage::kPush: return "push";
    case PipelineStage::kDeployHelm: return "deploy-helm";
    case PipelineStage::kDeployCrd: return "deploy-crd";
  }
  return "?";
}

PipelineStage pipeline_stage_from_string(std::string_view text) {
  for (auto s : {PipelineStage::kLint, PipelineStage::kQuality, PipelineStage::kTest,
                 PipelineStage::kBuild, PipelineStage::kPush, PipelineStage::kDeployHelm,
                 PipelineStage::kDeployCrd}) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown pipeline stage '{}'", text), "stages");
}

bool is_validate_stage(PipelineStage stage) noexcept {
  return stage == PipelineStage::kLint || stage == PipelineStage::kQuality ||
         stage == PipelineStage::kTest;
}

bool is_deploy_stage(PipelineStage stage) noexcept {
  return stage == PipelineStage::kDeployHelm || stage == PipelineStage::kDeployCrd;
}

void PipelineConfig::validate() const {
  auto malformed = [&](std::string why) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("pipeline '{}' has a malformed stage order: {}", project_name, why), "stages");
  };
  if (stages.empty()) malformed("no stages");
  std::set<PipelineStage> seen;
  for (auto s : stages) {
    if (!seen.insert(s).second) malformed(fmt::format("stage '{}' repeated", to_string(s)));
  }
  auto pos = [&](auto pred) -> std::ptrdiff_t {
    auto it = std::find_if(stages.begin(), stages.end(), pred);
    return it == stages.end() ? -1 : it - stages.begin();
  };
  const auto build = pos([](PipelineStage s) { return s == PipelineStage::kBuild; });
  const auto push = pos([](PipelineStage s) { return s == PipelineStage::kPush; });
  const auto deploys = std::count_if(stages.begin(), stages.end(), is_deploy_stage);
  if (build < 0 || push < 0 || deploys != 1) malformed("requires build, push and exactly one deploy");
  if (!(build < push)) malformed("build must precede push");
  if (!is_deploy_stage(stages.back())) malformed("deploy must be the last stage");
  for (std::ptrdiff_t i = build; i < static_cast<std::ptrdiff_t>(stages.size()); ++i) {
    if (is_validate_stage(stages[i])) malformed("validation stages must run before build");
  }
  for (auto s : stages) {
    const auto r = range_for(s);
    if (r.min < 0 || r.max < r.min) {
      malformed(fmt::format("invalid duration range for '{}'", to_string(s)));
    }
  }
  for (const auto& [s, p] : failure_probability) {
    if (!(p >= 0 && p <= 1)) {
      throw Error(ErrorCode::kInvalidArgument, "stage failure probability must be in [0, 1]",
                  "failure_probability");
    }
  }
  if (cache_miss_penalty < 0) {
    throw Error(ErrorCode::kInvalidArgument, "cache_miss_penalty must be non-negative",
                "cache_miss_penalty");
  }
}

StageRange default_stage_range(PipelineStage stage, std::span<const PipelineStage> stages) {
  if (is_validate_stage(stage)) {
    const auto n = std::max<std::ptrdiff_t>(1, std::count_if(stages.begin(), stages.end(), is_validate_stage));
    return {60.0 / n, 90.0 / n};
  }
  switch (stage) {
    case PipelineStage::kBuild: return {45, 90};
    case PipelineStage::kPush: return {15, 30};
    default: return {60, 90};
  }
}

StageRange PipelineConfig::range_for(PipelineStage stage) const {
  auto it = stage_duration_ranges.find(stage);
  return it != stage_duration_ranges.end() ? it->second : default_stage_range(stage, stages);
}

PipelineRun run_pipeline(const PipelineConfig& config, std::uint64_t run_index) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(run_index), static_cast<std::uint32_t>(run_index >> 32)};
  std::mt19937_64 rng(seq);

  PipelineRun run;
  run.project_name = config.project_name;
  run.run_index = run_index;
  for (auto stage : config.stages) {
    const auto range = config.range_for(stage);
    Seconds duration = std::uniform_real_distribution<double>(range.min, range.max)(rng);
    if (stage == PipelineStage::kBuild && config.cache == BuildCache::kMiss) {
      duration += config.cache_miss_penalty;
    }
    bool failed = config.forced_failure == stage;
    if (auto p = config.failure_probability.find(stage); p != config.failure_probability.end()) {
      failed = std::bernoulli_distribution(p->second)(rng) || failed;
    }
    run.total += duration;
    if (failed) {
      run.status = PipelineStatus::kFailed;
      run.failed_stage = stage;
      run.failed_stage_elapsed = duration;
      break;
    }
    run.stages.push_back({stage, duration});
  }
  return run;
}

namespace {

PipelineConfig make_project(std::string name, std::vector<std::pair<PipelineStage, StageRange>> stages,
                            std::uint64_t seed) {
  PipelineConfig c;
  c.project_name = std::move(name);
  c.seed = seed;
  for (auto& [stage, range] : stages) {
    c.stages.push_back(stage);
    c.stage_duration_ranges[stage] = range;
  }
  return c;
}

}  // namespace

// Stage ranges sum to the measured window bounds: the minima add up to the
// lower bound and the maxima to the upper bound.
PipelineConfig project_a_pipeline() {
  using S = PipelineStage;
  return make_project("project-a",
                      {{S::kLint, {63, 68}}, {S::kBuild, {52, 58}}, {S::kPush, {14, 16}},
                       {S::kDeployHelm, {72, 78}}},
                      101);
}

PipelineConfig project_b_pipeline() {
  using S = PipelineStage;
  return make_project("project-b",
                      {{S::kQuality, {55, 70}}, {S::kBuild, {40, 60}}, {S::kPush, {12, 16}},
                       {S::kDeployHelm, {64, 85}}},
                      202);
}

PipelineConfig project_c_pipeline() {
  using S = PipelineStage;
  // Upper bound 299 s keeps every run strictly under five minutes.
  return make_project("project-c",
                      {{S::kLint, {30, 40}}, {S::kTest, {35, 45}}, {S::kBuild, {50, 70}},
                       {S::kPush, {15, 20}}, {S::kDeployCrd, {110, 124}}},
                      303);
}

std::map<std::string, PipelineConfig> default_pipelines() {
  std::map<std::string, PipelineConfig> out;
  for (auto c : {project_a_pipeline(), project_b_pipeline(), project_c_pipeline()}) {
    auto name = c.project_name;
    out.emplace(std::move(name), std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const PipelineStage& s) { j = std::string(to_string(s)); }
void from_json(const nlohmann::json& j, PipelineStage& s) {
  s = pipeline_stage_from_string(j.get<std::string>());
}

void to_json(nlohmann::json& j, const WorkloadProfile& p) {
  j = nlohmann::json{{"burst_duration_mean", p.burst_duration_mean},
                     {"gap_duration_mean", p.gap_duration_mean},
                     {"burst_util_mean", p.burst_util_mean},
                     {"util_spread", p.util_spread},
                     {"jobs_per_burst", p.jobs_per_burst},
                     {"failure_probability", p.failure_probability},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, WorkloadProfile& p) {
  p = WorkloadProfile{};
  p.burst_duration_mean = j.value("burst_duration_mean", p.burst_duration_mean);
  p.gap_duration_mean = j.value("gap_duration_mean", p.gap_duration_mean);
  p.burst_util_mean = j.value("burst_util_mean", p.burst_util_mean);
  p.util_spread = j.value("util_spread", p.util_spread);
  p.jobs_per_burst = j.value("jobs_per_burst", p.jobs_per_burst);
  p.failure_probability = j.value("failure_probability", p.failure_probability);
  p.seed = j.value("seed", p.seed);
}

void to_json(nlohmann::json& j, const JobSubmission& s) {
  j = nlohmann::json{{"job_id", s.job_id},     {"researcher", s.researcher},
                     {"submit_at", s.submit_at}, {"duration", s.duration},
                     {"util_percent", s.util_percent}, {"exit_code", s.exit_code}};
}

void from_json(const nlohmann::json& j, JobSubmission& s) {
  s.job_id = j.at("job_id").get<std::string>();
  s.researcher = j.at("researcher").get<std::string>();
  s.submit_at = j.at("submit_at").get<double>();
  s.duration = j.at("duration").get<double>();
  s.util_percent = j.at("util_percent").get<double>();
  s.exit_code = j.at("exit_code").get<int>();
}

void to_json(nlohmann::json& j, const StageRange& r) { j = nlohmann::json::array({r.min, r.max}); }
void from_json(const nlohmann::json& j, StageRange& r) {
  r.min = j.at(0).get<double>();
  r.max = j.at(1).get<double>();
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  nlohmann::json ranges = nlohmann::json::object();
  for (const auto& [s, r] : c.stage_duration_ranges) ranges[std::string(to_string(s))] = r;
  nlohmann::json failures = nlohmann::json::object();
  for (const auto& [s, p] : c.failure_probability) failures[std::string(to_string(s))] = p;
  j = nlohmann::json{{"project_name", c.project_name},
                     {"stages", c.stages},
                     {"stage_duration_ranges", ranges},
                     {"cache", c.cache},
                     {"cache_miss_penalty", c.cache_miss_penalty},
                     {"failure_probability", failures},
                     {"forced_failure", c.forced_failure},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c = PipelineConfig{};
  c.project_name = j.at("project_name").get<std::string>();
  c.stages = j.at("stages").get<std::vector<PipelineStage>>();
  if (j.contains("stage_duration_ranges")) {
    for (const auto& [k, v] : j.at("stage_duration_ranges").items()) {
      c.stage_duration_ranges[pipeline_stage_from_string(k)] = v.get<StageRange>();
    }
  }
  if (j.contains("cache")) c.cache = j.at("cache").get<BuildCache>();
  c.cache_miss_penalty = j.value("cache_miss_penalty", c.cache_miss_penalty);
  if (j.contains("failure_probability")) {
    for (const auto& [k, v] : j.at("failure_probability").items()) {
      c.failure_probability[pipeline_stage_from_string(k)] = v.get<double>();
    }
  }
  if (j.contains("forced_failure")) {
    c.forced_failure = j.at("forced_failure").get<std::optional<PipelineStage>>();
  }
  c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const StageRecord& r) {
  j = nlohmann::json{{"stage", r.stage}, {"duration", r.duration}};
}

void from_json(const nlohmann::json& j, StageRecord& r) {
  r.stage = j.at("stage").get<PipelineStage>();
  r.duration = j.at("duration").get<double>();
}

void to_json(nlohmann::json& j, const PipelineRun& r) {
  j = nlohmann::json{{"project_name", r.project_name},
                     {"stages", r.stages},
                     {"failed_stage", r.failed_stage},
                     {"failed_stage_elapsed", r.failed_stage_elapsed},
                     {"total", r.total},
                     {"status", r.status},
                     {"run_index", r.run_index}};
}

void from_json(const nlohmann::json& j, PipelineRun& r) {
  r.project_name = j.at("project_name").get<std::string>();
  r.stages = j.at("stages").get<std::vector<StageRecord>>();
  r.failed_stage = j.at("failed_stage").get<std::optional<PipelineStage>>();
  r.failed_stage_elapsed = j.at("failed_stage_elapsed").get<double>();
  r.total = j.at("total").get<double>();
  r.status = j.at("status").get<PipelineStatus>();
  r.run_index = j.at("run_index").get<std::uint64_t>();
}

}  // namespace labplane
