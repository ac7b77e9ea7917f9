#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cohrt/agent.hpp"
#include "cohrt/config.hpp"
#include "cohrt/coordination.hpp"
#include "cohrt/fluency_metrics.hpp"
#include "cohrt/robot_agent.hpp"
#include "cohrt/world_model.hpp"

namespace cohrt::sim {

/// Virtual-time event queue. Ties run in insertion order, so a run is a pure
/// function of what was scheduled.
class event_scheduler final : public server::session_clock {
public:
    time_ms now_ms() const override { return now_; }

    void at(time_ms t, std::function<void()> fn);
    void after(time_ms delay, std::function<void()> fn) { at(now_ + delay, std::move(fn)); }

    /// Runs the earliest event; false when the queue is empty.
    bool step();
    bool empty() const { return queue_.empty(); }
    std::optional<time_ms> next_time() const;
    std::uint64_t executed() const { return executed_; }

private:
    struct entry {
        time_ms t;
        std::uint64_t order;
        std::function<void()> fn;
    };
    struct later {
        bool operator()(const entry& a, const entry& b) const {
            return a.t != b.t ? a.t > b.t : a.order > b.order;
        }
    };
    std::priority_queue<entry, std::vector<entry>, later> queue_;
    time_ms now_ = 0;
    std::uint64_t next_order_ = 0;
    std::uint64_t executed_ = 0;
};

/// In-process connection between one agent and the coordinator. Every message
/// is encoded to a frame and decoded on the other side, delivered through the
/// scheduler with zero latency.
class sim_link final : public agents::agent_host {
public:
    sim_link(event_scheduler& sched, server::coordinator& coord, agents::protocol_agent& agent);

    void connect();
    void disconnect();
    bool connected() const { return connected_; }

    time_ms now_ms() const override { return sched_.now_ms(); }
    void send(protocol::payload body) override;
    void schedule(time_ms delay, std::function<void()> fn) override;

private:
    event_scheduler& sched_;
    server::coordinator& coord_;
    agents::protocol_agent& agent_;
    server::connection_id conn_ = 0;
    bool connected_ = false;
    /// Bumped on disconnect so timers and deliveries of a dead link are dropped.
    std::uint64_t generation_ = 0;
    std::uint64_t out_seq_ = 0;
};

/// Physical truth of the table: piles, stacks and what the camera could see.
class ground_truth {
public:
    explicit ground_truth(const task_config& config);

    /// Moves a block from wherever it is onto the top of `stack`.
    void place(const block_id& block, const participant_id& stack);
    const std::vector<block_id>& stack(const participant_id& pid) const { return stacks_.at(pid); }
    const std::map<participant_id, std::vector<block_id>>& stacks() const { return stacks_; }
    std::vector<block_id> pile(const inventory_id& id) const;

    /// Tag poses of every block not in `hidden`; stacked blocks sit at base + slot * height.
    protocol::msg::detection_frame frame(const std::set<block_id>& hidden = {}) const;

private:
    task_config config_;
    std::map<participant_id, std::vector<block_id>> stacks_;
    std::set<block_id> off_pile_;
};

struct perception_options {
    time_ms frame_interval_ms = 500;
    double noise_sigma_m = 0.0;
    /// Chance per frame that a stack hides some of its non-top blocks.
    double occlusion_probability = 0.0;
    std::size_t max_occluded = 2;
};

/// Publishes ground truth (with optional noise and occlusion) as DetectionFrames.
class perception_emitter final : public agents::protocol_agent {
public:
    perception_emitter(const ground_truth& truth, perception_options options, std::uint64_t seed);

    protocol::msg::hello hello() const override;
    void on_connected() override;
    void on_message(const protocol::message& m) override;

    protocol::msg::detection_frame observe();

private:
    void emit();

    const ground_truth& truth_;
    perception_options options_;
    std::mt19937_64 rng_;
    bool over_ = false;
};

struct uniform_ms {
    time_ms lo = 0;
    time_ms hi = 0;
    bool operator==(const uniform_ms&) const = default;
};

struct scripted_profile {
    participant_id pid;
    uniform_ms start_delay{500, 2000};
    uniform_ms think{800, 2500};
    uniform_ms reaction{300, 1200};
    /// Walk to the block station and back.
    uniform_ms fetch_round_trip{6000, 12000};
    std::uint64_t seed = 0;
};

/// A human participant following fixed behavior: start, solve the puzzle in a
/// random order, then claim and fetch the next needed block whenever the own
/// stack has no block in flight.
class scripted_human final : public agents::protocol_agent {
public:
    scripted_human(scripted_profile profile, ground_truth& truth);

    protocol::msg::hello hello() const override;
    void on_connected() override;
    void on_message(const protocol::message& m) override;
    void on_disconnected() override;

    const scripted_profile& profile() const { return profile_; }
    int blocks_placed() const { return blocks_placed_; }
    int moves_sent() const { return moves_sent_; }

private:
    time_ms sample(const uniform_ms& u);
    void step();
    void wait_then(const uniform_ms& u, std::function<void()> fn);
    std::optional<protocol::msg::puzzle_move> next_move();
    std::optional<block_id> wanted_block() const;

    scripted_profile profile_;
    ground_truth& truth_;
    std::mt19937_64 rng_;
    std::optional<task_config> config_;
    std::optional<world_state> world_;
    bool timer_ = false;
    bool start_sent_ = false;
    std::optional<puzzle_record> move_sent_on_;
    std::optional<block_id> claim_pending_;
    std::optional<block_id> holding_;
    bool over_ = false;
    int blocks_placed_ = 0;
    int moves_sent_ = 0;
};

/// Robot arm effect in the simulator: the block lands on the true stack.
class truth_actuator final : public robot::actuator {
public:
    explicit truth_actuator(ground_truth& truth) : truth_(truth) {}
    void place(const block_id& block, const participant_id& stack, const vec3&) override { truth_.place(block, stack); }

private:
    ground_truth& truth_;
};

struct disconnect_fault {
    participant_id pid;
    time_ms at_ms = 0;
    std::optional<time_ms> reconnect_after_ms;
    bool operator==(const disconnect_fault&) const = default;
};

struct fault_schedule {
    std::vector<disconnect_fault> disconnects;
    /// 1-based robot actions that fail right after the pick.
    std::set<int> robot_fault_after_pick;
    bool operator==(const fault_schedule&) const = default;
};

/// Parses `disconnect:<pid>@<ms>[+<reconnect_ms>]` and `robot_fault_after_pick:<k>`.
/// Throws std::invalid_argument on anything else.
fault_schedule parse_faults(const std::vector<std::string>& specs);

struct scenario_options {
    std::uint64_t seed = 42;
    fault_schedule faults;
    /// Virtual time after which the run is abandoned.
    time_ms timeout_ms = 60 * 60 * 1000;
    bool real_time = false;
    bool abort_on_client_loss = false;
    std::optional<std::filesystem::path> log_path;
    perception_options perception;
    std::map<participant_id, scripted_profile> profiles;
};

struct scenario_result {
    std::optional<std::filesystem::path> log_path;
    session_log log;
    std::optional<metrics::fluency_report> report;
    server::session_status status = server::session_status::running;
    bool timed_out = false;
    std::map<participant_id, int> contributions;
    /// Largest difference between robot contribution counts at any point.
    int max_contribution_gap = 0;
    world_state final_state;
    std::vector<std::string> diagnostics;
    std::uint64_t events_executed = 0;
};

/// Runs one session under the virtual clock; the options' seed overrides the config's.
scenario_result run_session(task_config config, const scenario_options& options);

/// Loads a scenario file (config plus optional "profiles") and runs it.
scenario_result run_scenario(const std::filesystem::path& config_path,
                             std::uint64_t seed,
                             const fault_schedule& faults,
                             scenario_options options = {});

/// Default profiles for every participant, overridden by a scenario's "profiles" object.
std::map<participant_id, scripted_profile> load_profiles(const std::filesystem::path& config_path,
                                                         const task_config& config,
                                                         std::uint64_t seed);

class replay_divergence : public std::runtime_error {
public:
    replay_divergence(std::size_t index, const std::string& what)
        : std::runtime_error(what), index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

/// Folds the state-changing events over the session the log's SessionStart
/// describes. Throws replay_divergence on the first illegal event.
world_state replay(const session_log& log);
world_state replay_file(const std::filesystem::path& path);

/// Robot-placed blocks per stack, counted from StackPlaced events.
std::map<participant_id, int> robot_contributions(const session_log& log);
/// Largest |difference| of robot contribution counts over the course of the log.
int max_contribution_gap(const session_log& log);

} // namespace cohrt::sim
