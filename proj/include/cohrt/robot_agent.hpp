#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>

#include "cohrt/agent.hpp"
#include "cohrt/config.hpp"
#include "cohrt/result.hpp"
#include "cohrt/world_model.hpp"

namespace cohrt::robot {

enum class action_phase : std::uint8_t { requesting, picking, placing, confirming };

struct active_action {
    block_id block;
    participant_id beneficiary;
    action_phase phase = action_phase::requesting;
    /// Stack height when the action was chosen; the plan is stale if it moved.
    std::size_t expected_height = 0;
};

struct policy_state {
    std::map<participant_id, int> contributed;
    participant_id next_beneficiary;
    std::optional<active_action> active;
};

struct stack_for {
    participant_id beneficiary;
    block_id block;
    bool operator==(const stack_for&) const = default;
};
struct idle {
    std::string reason;
};
struct stop {
    std::string reason;
};
using action = std::variant<stack_for, idle, stop>;

/// Pluggable collaboration strategy keyed by TaskConfig::robot_policy.
class collaboration_policy {
public:
    virtual ~collaboration_policy() = default;
    virtual std::string name() const = 0;
    virtual action select(const world_state& world, const policy_state& ps) const = 0;
};

/// Unclaimed blocks a tied participant must still need before the robot moves
/// someone else ahead of them.
inline constexpr std::size_t k_rebalance_reserve = 2;

/// Alternates beneficiaries and keeps per-participant robot contributions within
/// one of each other. Stops once a participant tied for the lowest count has a
/// complete stack, since equal effort can no longer be restored.
class alternating_equal_policy final : public collaboration_policy {
public:
    std::string name() const override { return "alternating_equal"; }
    action select(const world_state& world, const policy_state& ps) const override;
};

/// Throws std::invalid_argument for unknown policy ids.
std::unique_ptr<collaboration_policy> make_policy(const std::string& id);

/// Fresh policy state: zero contributions, first participant preferred.
policy_state initial_policy_state(const task_config& config);

action select_action(const world_state& world, const policy_state& ps);

/// The robot-accessible block that would serve `pid` next, if one can be claimed now.
std::optional<block_id> claimable_for(const world_state& world, const participant_id& pid);

struct waypoint_plan {
    vec3 fetch;
    vec3 lift;
    vec3 transfer;
    vec3 place;
    std::size_t stack_height = 0;
};

struct stale_state {
    std::size_t expected_height = 0;
    std::size_t actual_height = 0;
};

inline constexpr double k_lift_clearance_m = 0.15;

/// Four-waypoint pick-and-place plan; place height follows the current stack.
result<waypoint_plan, stale_state> plan_waypoints(const world_state& world,
                                                  const stack_for& target,
                                                  std::size_t expected_height);

/// Physical effect of a placement. The simulator backs it with ground truth.
class actuator {
public:
    virtual ~actuator() = default;
    virtual void place(const block_id& block, const participant_id& stack, const vec3& at) = 0;
};

class null_actuator final : public actuator {
public:
    void place(const block_id&, const participant_id&, const vec3&) override {}
};

struct robot_options {
    std::optional<time_ms> pick_ms;
    std::optional<time_ms> place_ms;
    /// Delay between a state change and the resulting decision.
    time_ms decide_ms = 0;
    /// 1-based robot action numbers that fail right after the pick.
    std::set<int> fault_after_pick;
};

/// The simulated robot teammate as a protocol client.
class robot_agent final : public agents::protocol_agent {
public:
    robot_agent(std::unique_ptr<collaboration_policy> policy, actuator& arm, robot_options options = {});

    protocol::msg::hello hello() const override;
    void on_message(const protocol::message& m) override;
    void on_disconnected() override;

    const policy_state& state() const { return ps_; }
    bool stopped() const { return stopped_; }
    const std::optional<std::string>& stop_reason() const { return stop_reason_; }
    int actions_started() const { return actions_started_; }
    int stale_replans() const { return stale_replans_; }

private:
    void request_decision();
    void decide();
    void on_grant(const protocol::msg::allocation_response& r);
    void execute(const waypoint_plan& plan);
    void on_state(world_state world);

    std::unique_ptr<collaboration_policy> policy_;
    actuator& arm_;
    robot_options options_;
    std::optional<world_state> world_;
    policy_state ps_;
    bool decision_pending_ = false;
    bool stopped_ = false;
    bool session_over_ = false;
    std::optional<std::string> stop_reason_;
    int actions_started_ = 0;
    int stale_replans_ = 0;
};

} // namespace cohrt::robot
