#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cohrt/events.hpp"
#include "cohrt/types.hpp"

namespace cohrt::metrics {

struct activity_interval {
    agent_id agent;
    time_ms start = 0;
    time_ms end = 0;

    bool operator==(const activity_interval&) const = default;
};

struct metrics_options {
    /// Width given to instantaneous puzzle moves so they count as activity.
    time_ms min_activity_ms = 500;
};

class malformed_log : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class insufficient_data : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class unknown_agent : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct session_window {
    time_ms start = 0;
    time_ms end = 0;
    time_ms duration() const { return end - start; }
};

/// Throws malformed_log unless the log opens with SessionStart, closes with
/// SessionEnd and is time-ordered.
session_window window_of(const session_log& log);

/// The robot plus every configured participant, from the SessionStart config.
std::vector<agent_id> team_of(const session_log& log);

/// ActionStart/ActionEnd pairs per agent in FIFO order, plus widened puzzle
/// moves. Open actions are closed at SessionEnd and reported in `warnings`.
std::vector<activity_interval> extract_intervals(const session_log& log,
                                                 const metrics_options& opts = {},
                                                 std::vector<std::string>* warnings = nullptr);

/// Clips to the window and merges each agent's overlapping intervals.
std::vector<activity_interval> normalize(std::vector<activity_interval> intervals, const session_window& window);

/// Measure of the union of `agent`'s intervals.
time_ms active_time(const std::vector<activity_interval>& normalized, const agent_id& agent);

/// Measure of the time during which every agent in `team` is active.
time_ms all_active_time(const std::vector<activity_interval>& normalized, const std::vector<agent_id>& team);

/// For each interval end, the gap to the earliest start by another agent at or
/// after the interval's own start; overlaps clip to zero.
std::vector<time_ms> functional_delays(const std::vector<activity_interval>& normalized);

/// Gaps between consecutive starts that change agent (the first start anchors).
std::vector<time_ms> cross_agent_start_gaps(const std::vector<activity_interval>& normalized);

time_ms task_completion_time(const session_log& log);
time_ms idle_time(const session_log& log, const agent_id& agent, const metrics_options& opts = {});
double concurrent_activity(const session_log& log, const metrics_options& opts = {});

struct delay_summary {
    std::vector<time_ms> delays;
    std::optional<double> mean;
    std::optional<double> median;
};

/// An empty list with no summary when fewer than two agents ever act.
delay_summary functional_delay(const session_log& log, const metrics_options& opts = {});

struct rhythm_summary {
    double cv = 0.0;
    std::vector<time_ms> intervals;
};

/// Coefficient of variation (population stddev / mean) of cross-agent
/// inter-start gaps. Throws insufficient_data below three anchored starts.
rhythm_summary rhythm(const session_log& log, const metrics_options& opts = {});
rhythm_summary rhythm_of_gaps(const std::vector<time_ms>& gaps);

struct agent_idle {
    time_ms idle_ms = 0;
    time_ms active_ms = 0;
    double idle_fraction = 0.0;
    /// Split at the participant's StartTask; the robot reports everything after.
    time_ms idle_before_start_ms = 0;
    time_ms idle_after_start_ms = 0;
};

struct fluency_report {
    time_ms task_completion_ms = 0;
    std::map<std::string, agent_idle> idle;
    double concurrent_activity_fraction = 0.0;
    std::map<std::string, double> pairwise_overlap_fraction;
    delay_summary functional_delays;
    std::optional<rhythm_summary> rhythm;
    std::vector<std::string> warnings;
};

fluency_report compute_report(const session_log& log, const metrics_options& opts = {});

enum class report_format { table, csv, lines };

std::string format_report(const fluency_report& report, report_format format);

} // namespace cohrt::metrics
