#include "cohrt/robot_agent.hpp"

#include <algorithm>
#include <stdexcept>

namespace cohrt::robot {

namespace msg = protocol::msg;

namespace {

std::size_t index_of(const std::vector<participant_id>& v, const participant_id& p) {
    auto it = std::find(v.begin(), v.end(), p);
    return it == v.end() ? 0 : static_cast<std::size_t>(it - v.begin());
}

/// Blocks of `pid`'s stack neither placed nor in flight.
std::size_t unclaimed_remaining(const world_state& world, const participant_id& pid) {
    const auto& stack = world.stacks.at(pid);
    const auto in_flight = working_blocks_for(world, pid).size();
    const auto left = stack.pattern.size() - stack.placed.size();
    return left > in_flight ? left - in_flight : 0;
}

/// Helping `p` puts it one ahead of every other participant tied with it. Only
/// do so while each of them still has enough blocks left that the robot can
/// catch them up before their own human finishes the stack.
template <typename Tied>
bool can_rebalance(const world_state& world, const std::vector<participant_id>& participants, const participant_id& p, Tied tied) {
    for (const auto& q : participants) {
        if (q == p || !tied(q)) continue;
        if (unclaimed_remaining(world, q) < k_rebalance_reserve) return false;
    }
    return true;
}

} // namespace

std::optional<block_id> claimable_for(const world_state& world, const participant_id& pid) {
    auto phase = world.phases.find(pid);
    if (phase == world.phases.end() || phase->second != participant_phase::stacking) return std::nullopt;
    const auto& stack = world.stacks.at(pid);
    auto needed = stack.next_needed();
    if (!needed || !working_blocks_for(world, pid).empty()) return std::nullopt;
    for (const auto& inv : world.config.inventories) {
        if (inv.supplies != pid) continue;
        if (std::find(inv.access.begin(), inv.access.end(), agent_id::robot()) == inv.access.end()) continue;
        auto top = topmost_unstacked(world, inv.id);
        if (top && world.blocks.at(*top).col == *needed) {
            return top;
        }
    }
    return std::nullopt;
}

action alternating_equal_policy::select(const world_state& world, const policy_state& ps) const {
    const auto& participants = world.config.participants;
    auto count = [&](const participant_id& p) {
        auto it = ps.contributed.find(p);
        return it == ps.contributed.end() ? 0 : it->second;
    };
    int lowest = count(participants.front());
    for (const auto& p : participants) lowest = std::min(lowest, count(p));

    for (const auto& p : participants) {
        if (count(p) == lowest && world.stacks.at(p).state == stack_state::complete) {
            return stop{"equal effort limit: " + p + " has a complete stack with " + std::to_string(lowest) +
                        " robot blocks; further help would exceed equal contribution"};
        }
    }

    bool anyone_stacking = false;
    const auto start = index_of(participants, ps.next_beneficiary);
    for (std::size_t k = 0; k < participants.size(); ++k) {
        const auto& p = participants[(start + k) % participants.size()];
        if (world.phases.at(p) == participant_phase::stacking) anyone_stacking = true;
        // Only participants at the lowest count may receive the next block.
        if (count(p) != lowest) continue;
        if (!can_rebalance(world, participants, p, [&](const participant_id& q) { return count(q) == lowest; })) continue;
        if (auto block = claimable_for(world, p)) {
            return stack_for{p, *block};
        }
    }
    return idle{anyone_stacking ? "no claimable block for an eligible participant" : "no participant is stacking"};
}

std::unique_ptr<collaboration_policy> make_policy(const std::string& id) {
    if (id == "alternating_equal") {
        return std::make_unique<alternating_equal_policy>();
    }
    throw std::invalid_argument("unknown robot policy '" + id + "'");
}

policy_state initial_policy_state(const task_config& config) {
    policy_state ps;
    for (const auto& p : config.participants) ps.contributed[p] = 0;
    if (!config.participants.empty()) ps.next_beneficiary = config.participants.front();
    return ps;
}

action select_action(const world_state& world, const policy_state& ps) {
    return alternating_equal_policy{}.select(world, ps);
}

result<waypoint_plan, stale_state> plan_waypoints(const world_state& world,
                                                  const stack_for& target,
                                                  std::size_t expected_height) {
    const auto height = world.stacks.at(target.beneficiary).placed.size();
    if (height != expected_height) {
        return stale_state{expected_height, height};
    }
    const auto& geo = world.config.geometry;
    const auto& block = world.blocks.at(target.block);
    const auto* inv = world.config.find_inventory(block.inventory);
    const vec3 origin = geo.inventory_origins.count(block.inventory) ? geo.inventory_origins.at(block.inventory) : vec3{};
    const auto pile = inv != nullptr ? inv->blocks.size() : block.depth + 1;

    waypoint_plan plan;
    plan.stack_height = height;
    // Depth 0 is the top of the pile, so it sits highest.
    plan.fetch = vec3{origin.x, origin.y, origin.z + static_cast<double>(pile - 1 - block.depth) * geo.block_height_m};
    plan.lift = vec3{plan.fetch.x, plan.fetch.y, plan.fetch.z + k_lift_clearance_m};
    const auto& base = geo.stack_bases.at(target.beneficiary);
    plan.place = vec3{base.x, base.y, base.z + static_cast<double>(height) * geo.block_height_m};
    plan.transfer = vec3{plan.place.x, plan.place.y, plan.place.z + k_lift_clearance_m};
    return plan;
}

robot_agent::robot_agent(std::unique_ptr<collaboration_policy> policy, actuator& arm, robot_options options)
    : policy_(std::move(policy)), arm_(arm), options_(std::move(options)) {}

msg::hello robot_agent::hello() const { return msg::hello{protocol::k_version, "robot", ""}; }

void robot_agent::on_disconnected() { decision_pending_ = false; }

void robot_agent::on_message(const protocol::message& m) {
    if (const auto* push = std::get_if<msg::config_push>(&m.body)) {
        if (!world_) {
            ps_ = initial_policy_state(push->config);
        }
        world_state w;
        w.config = push->config;
        world_ = std::move(w);
    } else if (const auto* update = std::get_if<msg::state_update>(&m.body)) {
        if (!world_) return;
        world_state w;
        static_cast<world_snapshot&>(w) = update->state;
        w.config = world_->config;
        on_state(std::move(w));
    } else if (const auto* r = std::get_if<msg::allocation_response>(&m.body)) {
        if (!ps_.active || ps_.active->phase != action_phase::requesting || ps_.active->block != r->block) return;
        if (r->granted) {
            on_grant(*r);
        } else {
            ps_.active.reset();
            request_decision();
        }
    } else if (std::holds_alternative<msg::session_end>(m.body)) {
        session_over_ = true;
    }
}

void robot_agent::on_state(world_state world) {
    world_ = std::move(world);
    if (ps_.active && ps_.active->phase != action_phase::requesting) {
        const auto& b = world_->blocks.at(ps_.active->block);
        if (b.state == manipulation_state::stacked && ps_.active->phase == action_phase::confirming) {
            const auto& participants = world_->config.participants;
            ++ps_.contributed[ps_.active->beneficiary];
            ps_.next_beneficiary =
                participants[(index_of(participants, ps_.active->beneficiary) + 1) % participants.size()];
            ps_.active.reset();
        } else if (b.state == manipulation_state::unstacked) {
            // Claim expired on the server.
            ps_.active.reset();
        }
    }
    request_decision();
}

void robot_agent::request_decision() {
    if (stopped_ || session_over_ || ps_.active || decision_pending_ || !world_) return;
    decision_pending_ = true;
    host().schedule(options_.decide_ms, [this] {
        decision_pending_ = false;
        decide();
    });
}

void robot_agent::decide() {
    if (stopped_ || session_over_ || ps_.active || !world_) return;
    auto next = policy_->select(*world_, ps_);
    if (const auto* target = std::get_if<stack_for>(&next)) {
        ps_.active = active_action{target->block, target->beneficiary, action_phase::requesting,
                                   world_->stacks.at(target->beneficiary).placed.size()};
        host().send(msg::allocation_request{target->block});
    } else if (const auto* s = std::get_if<stop>(&next)) {
        stopped_ = true;
        stop_reason_ = s->reason;
        host().send(msg::agent_status{"stopped", s->reason, ps_.contributed});
    }
}

void robot_agent::on_grant(const msg::allocation_response& r) {
    auto& act = *ps_.active;
    const stack_for target{act.beneficiary, r.block};
    auto plan = plan_waypoints(*world_, target, act.expected_height);
    if (!plan) {
        ++stale_replans_;
        const auto& stack = world_->stacks.at(act.beneficiary);
        if (stack.next_needed() != world_->blocks.at(r.block).col) {
            host().send(msg::release_block{r.block});
            ps_.active.reset();
            request_decision();
            return;
        }
        act.expected_height = plan.error().actual_height;
        plan = plan_waypoints(*world_, target, act.expected_height);
    }
    execute(*plan);
}

void robot_agent::execute(const waypoint_plan& plan) {
    const int number = ++actions_started_;
    auto& act = *ps_.active;
    act.phase = action_phase::picking;
    const auto block = act.block;
    host().send(msg::action_start{"stack", block});

    const auto& timing = world_->config.timing;
    const auto pick = options_.pick_ms.value_or(timing.robot_pick_ms);
    const auto place = options_.place_ms.value_or(timing.robot_place_ms);
    host().schedule(pick, [this, number, plan, block, place] {
        if (session_over_ || !ps_.active || ps_.active->block != block) return;
        if (options_.fault_after_pick.contains(number)) {
            host().send(msg::release_block{block});
            host().send(msg::action_end{"stack", block, false});
            ps_.active.reset();
            request_decision();
            return;
        }
        ps_.active->phase = action_phase::placing;
        host().schedule(place, [this, plan, block] {
            if (session_over_ || !ps_.active || ps_.active->block != block) return;
            arm_.place(block, ps_.active->beneficiary, plan.place);
            ps_.active->phase = action_phase::confirming;
            host().send(msg::action_end{"stack", block, true});
        });
    });
}

} // namespace cohrt::robot
