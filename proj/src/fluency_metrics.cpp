#include "cohrt/fluency_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace cohrt::metrics {
namespace {

bool sort_by_start(const activity_interval& a, const activity_interval& b) {
    if (a.start != b.start) return a.start < b.start;
    if (a.agent != b.agent) return a.agent < b.agent;
    return a.end < b.end;
}

std::optional<time_ms> start_task_time(const session_log& log, const participant_id& pid) {
    for (const auto& e : log) {
        if (const auto* s = std::get_if<ev::start_task>(&e.payload); s != nullptr && s->pid == pid) {
            return e.ts;
        }
    }
    return std::nullopt;
}

time_ms measure_within(const std::vector<activity_interval>& normalized, const agent_id& agent, time_ms from, time_ms to) {
    time_ms total = 0;
    for (const auto& iv : normalized) {
        if (iv.agent != agent) continue;
        const auto s = std::max(iv.start, from);
        const auto e = std::min(iv.end, to);
        if (e > s) total += e - s;
    }
    return total;
}

std::string fmt_double(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

} // namespace

session_window window_of(const session_log& log) {
    if (log.empty() || log.front().kind() != event_kind::session_start) {
        throw malformed_log("MalformedLog: log must begin with SessionStart");
    }
    if (log.back().kind() != event_kind::session_end) {
        throw malformed_log("MalformedLog: log must end with SessionEnd");
    }
    for (std::size_t i = 1; i < log.size(); ++i) {
        if (log[i].ts < log[i - 1].ts) {
            throw malformed_log("MalformedLog: timestamps decrease at entry " + std::to_string(i));
        }
    }
    return session_window{log.front().ts, log.back().ts};
}

std::vector<agent_id> team_of(const session_log& log) {
    if (log.empty()) throw malformed_log("MalformedLog: empty log");
    const auto* start = std::get_if<ev::session_start>(&log.front().payload);
    if (start == nullptr) throw malformed_log("MalformedLog: log must begin with SessionStart");
    std::vector<agent_id> team{agent_id::robot()};
    for (const auto& p : start->config.participants) team.push_back(agent_id::human(p));
    return team;
}

std::vector<activity_interval> extract_intervals(const session_log& log,
                                                 const metrics_options& opts,
                                                 std::vector<std::string>* warnings) {
    const auto window = window_of(log);
    std::map<agent_id, std::deque<time_ms>> open;
    std::vector<activity_interval> out;
    for (const auto& e : log) {
        switch (e.kind()) {
        case event_kind::action_start:
            open[e.agent].push_back(e.ts);
            break;
        case event_kind::action_end: {
            auto& q = open[e.agent];
            if (q.empty()) {
                throw malformed_log("MalformedLog: ActionEnd without ActionStart for " + e.agent.str() + " at " +
                                    std::to_string(e.ts));
            }
            out.push_back(activity_interval{e.agent, q.front(), e.ts});
            q.pop_front();
            break;
        }
        case event_kind::puzzle_move:
            out.push_back(activity_interval{e.agent, e.ts, std::min(e.ts + opts.min_activity_ms, window.end)});
            break;
        default:
            break;
        }
    }
    for (auto& [agent, q] : open) {
        for (auto start : q) {
            if (warnings != nullptr) {
                warnings->push_back("unclosed action of " + agent.str() + " from " + std::to_string(start) +
                                    " closed at SessionEnd");
            }
            out.push_back(activity_interval{agent, start, window.end});
        }
    }
    return out;
}

std::vector<activity_interval> normalize(std::vector<activity_interval> intervals, const session_window& window) {
    for (auto& iv : intervals) {
        iv.start = std::clamp(iv.start, window.start, window.end);
        iv.end = std::clamp(iv.end, window.start, window.end);
    }
    std::sort(intervals.begin(), intervals.end(), [](const auto& a, const auto& b) {
        if (a.agent != b.agent) return a.agent < b.agent;
        return a.start < b.start;
    });
    std::vector<activity_interval> merged;
    for (const auto& iv : intervals) {
        if (!merged.empty() && merged.back().agent == iv.agent && iv.start <= merged.back().end) {
            merged.back().end = std::max(merged.back().end, iv.end);
        } else {
            merged.push_back(iv);
        }
    }
    std::sort(merged.begin(), merged.end(), sort_by_start);
    return merged;
}

time_ms active_time(const std::vector<activity_interval>& normalized, const agent_id& agent) {
    time_ms total = 0;
    for (const auto& iv : normalized) {
        if (iv.agent == agent) total += iv.end - iv.start;
    }
    return total;
}

time_ms all_active_time(const std::vector<activity_interval>& normalized, const std::vector<agent_id>& team) {
    if (team.empty()) return 0;
    std::vector<std::pair<time_ms, int>> edges;
    for (const auto& iv : normalized) {
        if (std::find(team.begin(), team.end(), iv.agent) == team.end() || iv.end <= iv.start) continue;
        edges.emplace_back(iv.start, +1);
        edges.emplace_back(iv.end, -1);
    }
    std::sort(edges.begin(), edges.end());
    time_ms total = 0;
    int active = 0;
    const int needed = static_cast<int>(team.size());
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (i > 0 && active == needed) {
            total += edges[i].first - edges[i - 1].first;
        }
        active += edges[i].second;
    }
    return total;
}

std::vector<time_ms> functional_delays(const std::vector<activity_interval>& normalized) {
    std::vector<activity_interval> sorted = normalized;
    std::sort(sorted.begin(), sorted.end(), sort_by_start);
    std::vector<time_ms> delays;
    for (const auto& iv : sorted) {
        auto it = std::lower_bound(sorted.begin(), sorted.end(), iv.start,
                                   [](const activity_interval& a, time_ms t) { return a.start < t; });
        for (; it != sorted.end(); ++it) {
            if (it->agent != iv.agent) {
                delays.push_back(std::max<time_ms>(0, it->start - iv.end));
                break;
            }
        }
    }
    return delays;
}

std::vector<time_ms> cross_agent_start_gaps(const std::vector<activity_interval>& normalized) {
    std::vector<activity_interval> sorted = normalized;
    std::sort(sorted.begin(), sorted.end(), sort_by_start);
    std::vector<time_ms> anchors;
    const agent_id* previous = nullptr;
    for (const auto& iv : sorted) {
        if (previous == nullptr || *previous != iv.agent) {
            anchors.push_back(iv.start);
        }
        previous = &iv.agent;
    }
    std::vector<time_ms> gaps;
    for (std::size_t i = 1; i < anchors.size(); ++i) {
        gaps.push_back(anchors[i] - anchors[i - 1]);
    }
    return gaps;
}

time_ms task_completion_time(const session_log& log) { return window_of(log).duration(); }

time_ms idle_time(const session_log& log, const agent_id& agent, const metrics_options& opts) {
    const auto team = team_of(log);
    if (std::find(team.begin(), team.end(), agent) == team.end()) {
        throw unknown_agent("UnknownAgent: " + agent.str());
    }
    const auto window = window_of(log);
    const auto normalized = normalize(extract_intervals(log, opts), window);
    return window.duration() - active_time(normalized, agent);
}

double concurrent_activity(const session_log& log, const metrics_options& opts) {
    const auto team = team_of(log);
    if (team.size() < 2) throw malformed_log("MalformedLog: concurrent activity needs at least two agents");
    const auto window = window_of(log);
    if (window.duration() == 0) return 0.0;
    const auto normalized = normalize(extract_intervals(log, opts), window);
    return static_cast<double>(all_active_time(normalized, team)) / static_cast<double>(window.duration());
}

delay_summary functional_delay(const session_log& log, const metrics_options& opts) {
    const auto window = window_of(log);
    const auto normalized = normalize(extract_intervals(log, opts), window);
    std::set<agent_id> agents;
    for (const auto& iv : normalized) agents.insert(iv.agent);
    delay_summary out;
    if (agents.size() < 2) return out;
    out.delays = functional_delays(normalized);
    if (out.delays.empty()) return out;
    out.mean = std::accumulate(out.delays.begin(), out.delays.end(), 0.0) / static_cast<double>(out.delays.size());
    auto sorted = out.delays;
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    out.median = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                            : (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2])) / 2.0;
    return out;
}

rhythm_summary rhythm_of_gaps(const std::vector<time_ms>& gaps) {
    if (gaps.size() < 2) {
        throw insufficient_data("InsufficientData: rhythm needs at least three cross-agent starts");
    }
    const double n = static_cast<double>(gaps.size());
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / n;
    double var = 0.0;
    for (auto g : gaps) var += (static_cast<double>(g) - mean) * (static_cast<double>(g) - mean);
    var /= n;
    rhythm_summary out;
    out.intervals = gaps;
    out.cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
    return out;
}

rhythm_summary rhythm(const session_log& log, const metrics_options& opts) {
    const auto window = window_of(log);
    return rhythm_of_gaps(cross_agent_start_gaps(normalize(extract_intervals(log, opts), window)));
}

fluency_report compute_report(const session_log& log, const metrics_options& opts) {
    fluency_report report;
    const auto window = window_of(log);
    const auto team = team_of(log);
    const auto normalized = normalize(extract_intervals(log, opts, &report.warnings), window);
    const auto duration = window.duration();
    report.task_completion_ms = duration;

    for (const auto& agent : team) {
        agent_idle idle;
        idle.active_ms = active_time(normalized, agent);
        idle.idle_ms = duration - idle.active_ms;
        idle.idle_fraction = duration > 0 ? static_cast<double>(idle.idle_ms) / static_cast<double>(duration) : 0.0;
        time_ms split = window.start;
        if (agent.is_human()) {
            split = start_task_time(log, agent.pid).value_or(window.end);
        }
        const auto before = split - window.start;
        idle.idle_before_start_ms = before - measure_within(normalized, agent, window.start, split);
        idle.idle_after_start_ms = (window.end - split) - measure_within(normalized, agent, split, window.end);
        report.idle[agent.str()] = idle;
    }

    if (duration > 0) {
        report.concurrent_activity_fraction =
            static_cast<double>(all_active_time(normalized, team)) / static_cast<double>(duration);
        for (std::size_t i = 0; i < team.size(); ++i) {
            for (std::size_t j = i + 1; j < team.size(); ++j) {
                const auto both = all_active_time(normalized, {team[i], team[j]});
                report.pairwise_overlap_fraction[team[i].str() + "+" + team[j].str()] =
                    static_cast<double>(both) / static_cast<double>(duration);
            }
        }
    }
    report.functional_delays = functional_delay(log, opts);
    try {
        report.rhythm = rhythm(log, opts);
    } catch (const insufficient_data& e) {
        report.warnings.push_back(e.what());
    }
    return report;
}

std::string format_report(const fluency_report& r, report_format format) {
    std::vector<std::pair<std::string, std::string>> rows;
    rows.emplace_back("task_completion_ms", std::to_string(r.task_completion_ms));
    for (const auto& [agent, idle] : r.idle) {
        rows.emplace_back("idle_ms[" + agent + "]", std::to_string(idle.idle_ms));
        rows.emplace_back("active_ms[" + agent + "]", std::to_string(idle.active_ms));
        rows.emplace_back("idle_fraction[" + agent + "]", fmt_double(idle.idle_fraction));
        rows.emplace_back("idle_before_start_ms[" + agent + "]", std::to_string(idle.idle_before_start_ms));
        rows.emplace_back("idle_after_start_ms[" + agent + "]", std::to_string(idle.idle_after_start_ms));
    }
    rows.emplace_back("concurrent_activity_fraction", fmt_double(r.concurrent_activity_fraction));
    for (const auto& [pair, frac] : r.pairwise_overlap_fraction) {
        rows.emplace_back("pairwise_overlap_fraction[" + pair + "]", fmt_double(frac));
    }
    rows.emplace_back("functional_delay_count", std::to_string(r.functional_delays.delays.size()));
    rows.emplace_back("functional_delay_mean_ms",
                      r.functional_delays.mean ? fmt_double(*r.functional_delays.mean, 1) : std::string("n/a"));
    rows.emplace_back("functional_delay_median_ms",
                      r.functional_delays.median ? fmt_double(*r.functional_delays.median, 1) : std::string("n/a"));
    rows.emplace_back("rhythm_cv", r.rhythm ? fmt_double(r.rhythm->cv) : std::string("n/a"));
    rows.emplace_back("rhythm_interval_count", r.rhythm ? std::to_string(r.rhythm->intervals.size()) : std::string("0"));

    std::ostringstream os;
    switch (format) {
    case report_format::csv:
        os << "metric,value\n";
        for (const auto& [k, v] : rows) os << '"' << k << "\"," << v << '\n';
        break;
    case report_format::lines:
        for (const auto& [k, v] : rows) os << k << '=' << v << '\n';
        break;
    case report_format::table: {
        std::size_t width = 0;
        for (const auto& [k, v] : rows) width = std::max(width, k.size());
        for (const auto& [k, v] : rows) os << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
        break;
    }
    }
    for (const auto& w : r.warnings) {
        if (format == report_format::table) os << "warning: " << w << '\n';
    }
    return os.str();
}

} // namespace cohrt::metrics
