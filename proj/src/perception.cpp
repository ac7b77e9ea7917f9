#include "cohrt/perception.hpp"

#include <cmath>
#include <utility>

namespace cohrt::perception {
namespace {

double planar_distance(const vec3& a, const vec3& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::vector<std::optional<block_id>> merge_prefix(const stack_record& stack,
                                                  std::vector<std::optional<block_id>> slots,
                                                  const stack_history& history) {
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) continue;
        slots[i] = i < stack.placed.size() ? std::optional<block_id>(stack.placed[i]) : history.last_seen(stack.owner, i);
    }
    // A fully occluded top leaves the observed column shorter than what is known.
    for (std::size_t i = slots.size(); i < stack.placed.size(); ++i) {
        slots.push_back(stack.placed[i]);
    }
    return slots;
}

} // namespace

std::string_view to_string(perception_failure f) {
    switch (f) {
    case perception_failure::unknown_tag:
        return "UnknownTag";
    case perception_failure::ambiguous_assignment:
        return "AmbiguousAssignment";
    case perception_failure::slot_collision:
        return "SlotCollision";
    case perception_failure::inconsistent_history:
        return "InconsistentHistory";
    }
    return "Unknown";
}

observation_result infer_stacks(const protocol::msg::detection_frame& frame,
                                const std::map<block_id, block_spec>& catalog,
                                const geometry_spec& geometry) {
    std::map<int, block_id> by_tag;
    for (const auto& [id, spec] : catalog) {
        by_tag.emplace(spec.tag_id, id);
    }

    const double h = geometry.block_height_m;
    std::map<participant_id, std::map<std::size_t, block_id>> columns;
    for (const auto& [stack, base] : geometry.stack_bases) {
        columns[stack];
    }

    for (const auto& det : frame.detections) {
        auto tag = by_tag.find(det.tag_id);
        if (tag == by_tag.end()) {
            return perception_error{perception_failure::unknown_tag, "tag " + std::to_string(det.tag_id)};
        }
        const participant_id* owner = nullptr;
        for (const auto& [stack, base] : geometry.stack_bases) {
            if (planar_distance(det.position, base) > geometry.assign_radius_m) continue;
            if (owner != nullptr) {
                return perception_error{perception_failure::ambiguous_assignment,
                                        "tag " + std::to_string(det.tag_id) + " near " + *owner + " and " + stack};
            }
            owner = &stack;
        }
        if (owner == nullptr) {
            continue;
        }
        // Rounding gives each slot a half-block margin either side.
        const double level = (det.position.z - geometry.stack_bases.at(*owner).z) / h;
        if (level < -0.5) {
            continue;
        }
        const auto slot = static_cast<std::size_t>(std::llround(level));
        auto [it, inserted] = columns[*owner].emplace(slot, tag->second);
        if (!inserted) {
            return perception_error{perception_failure::slot_collision,
                                    *owner + " slot " + std::to_string(slot) + " holds " + it->second + " and " +
                                        tag->second};
        }
    }

    std::vector<stack_observation> out;
    for (auto& [stack, column] : columns) {
        stack_observation obs;
        obs.stack = stack;
        if (!column.empty()) {
            obs.slots.assign(column.rbegin()->first + 1, std::nullopt);
            for (auto& [slot, id] : column) {
                obs.slots[slot] = id;
            }
        }
        for (const auto& s : obs.slots) {
            if (!s) obs.level = confidence::history_assisted;
        }
        out.push_back(std::move(obs));
    }
    return out;
}

void stack_history::push(const stack_observation& obs) {
    auto& q = frames_[obs.stack];
    q.push_back(obs.slots);
    while (q.size() > depth_) {
        q.pop_front();
    }
}

std::optional<block_id> stack_history::last_seen(const participant_id& stack, std::size_t slot) const {
    auto it = frames_.find(stack);
    if (it == frames_.end()) return std::nullopt;
    for (auto f = it->second.rbegin(); f != it->second.rend(); ++f) {
        if (slot < f->size() && (*f)[slot]) {
            return (*f)[slot];
        }
    }
    return std::nullopt;
}

std::size_t stack_history::size(const participant_id& stack) const {
    auto it = frames_.find(stack);
    return it == frames_.end() ? 0 : it->second.size();
}

reconcile_result reconcile(const world_state& prev,
                           const std::vector<stack_observation>& obs,
                           stack_history& history) {
    reconcile_output out;
    world_state working = prev;
    std::map<block_id, participant_id> seen_on;

    for (const auto& o : obs) {
        auto st = prev.stacks.find(o.stack);
        if (st == prev.stacks.end()) continue;
        auto slots = merge_prefix(st->second, o.slots, history);

        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (!slots[i]) continue;
            auto [it, fresh] = seen_on.emplace(*slots[i], o.stack);
            if (!fresh) {
                return perception_error{perception_failure::inconsistent_history,
                                        *slots[i] + " appears twice after merging history"};
            }
        }

        const auto& placed = st->second.placed;
        bool contradicted = false;
        for (std::size_t i = 0; i < placed.size() && i < slots.size(); ++i) {
            if (slots[i] && *slots[i] != placed[i]) {
                out.mismatches.push_back(
                    ev::mismatch{*slots[i], o.stack, i, "observed where " + placed[i] + " is stacked"});
                contradicted = true;
                break;
            }
        }

        for (std::size_t i = placed.size(); !contradicted && i < slots.size(); ++i) {
            if (!slots[i]) break;
            const auto& id = *slots[i];
            auto b = working.blocks.find(id);
            if (b == working.blocks.end()) {
                out.mismatches.push_back(ev::mismatch{id, o.stack, i, "unknown block"});
                break;
            }
            session_event placed_event{0, b->second.manipulator, ev::stack_placed{id, o.stack}};
            auto next = apply_transition(working, placed_event);
            if (!next) {
                out.mismatches.push_back(ev::mismatch{id, o.stack, i, std::string(to_string(next.error().code)) +
                                                                          ": " + next.error().detail});
                break;
            }
            working = std::move(next).value();
            out.events.push_back(std::move(placed_event));
        }
        out.stacks[o.stack] = std::move(slots);
    }

    for (const auto& o : obs) {
        history.push(o);
    }
    return out;
}

reconcile_result state_observer::observe(const world_state& state, const protocol::msg::detection_frame& frame) {
    auto obs = infer_stacks(frame, state.config.blocks, state.config.geometry);
    if (!obs) {
        return obs.error();
    }
    auto out = reconcile(state, *obs, history_);
    if (!out) {
        return out;
    }
    std::vector<ev::mismatch> fresh;
    for (auto& m : out->mismatches) {
        if (reported_.emplace(m.stack, m.slot, m.block).second) {
            fresh.push_back(std::move(m));
        }
    }
    out->mismatches = std::move(fresh);
    return out;
}

} // namespace cohrt::perception
