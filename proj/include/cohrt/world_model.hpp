#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cohrt/config.hpp"
#include "cohrt/events.hpp"
#include "cohrt/result.hpp"
#include "cohrt/types.hpp"

namespace cohrt {

enum class manipulation_state : std::uint8_t { unstacked, working, stacked };
enum class stack_state : std::uint8_t { incomplete, complete };
enum class participant_phase : std::uint8_t { awaiting_start, puzzling, stacking, done };

std::string_view to_string(manipulation_state s);
std::string_view to_string(stack_state s);
std::string_view to_string(participant_phase p);
std::optional<manipulation_state> manipulation_state_from_string(std::string_view s);
std::optional<stack_state> stack_state_from_string(std::string_view s);
std::optional<participant_phase> participant_phase_from_string(std::string_view s);

struct block_record {
    block_id id;
    int tag_id = 0;
    color col = color::red;
    manipulation_state state = manipulation_state::unstacked;
    /// Holder while Working; the placer once Stacked; none while Unstacked.
    agent_id manipulator;
    inventory_id inventory;
    std::size_t depth = 0;
    std::optional<std::size_t> stack_slot;
    /// Grant time of the current claim; drives the abandonment timeout.
    time_ms working_since = 0;

    bool operator==(const block_record&) const = default;
};

struct stack_record {
    participant_id owner;
    std::vector<color> pattern;
    std::vector<block_id> placed;
    stack_state state = stack_state::incomplete;

    std::optional<color> next_needed() const {
        if (placed.size() >= pattern.size()) return std::nullopt;
        return pattern[placed.size()];
    }
    bool operator==(const stack_record&) const = default;
};

struct puzzle_record {
    int rows = 0;
    int cols = 0;
    std::vector<std::optional<piece_id>> grid;
    std::vector<std::optional<piece_id>> tray;
    bool solved = false;

    bool operator==(const puzzle_record&) const = default;
};

/// Everything a client needs to render the session; the StateUpdate body.
struct world_snapshot {
    std::map<block_id, block_record> blocks;
    std::map<participant_id, stack_record> stacks;
    std::map<participant_id, puzzle_record> puzzles;
    std::map<participant_id, participant_phase> phases;
    time_ms clock_ms = 0;

    bool operator==(const world_snapshot&) const = default;
};

struct world_state : world_snapshot {
    task_config config;

    bool operator==(const world_state&) const = default;
};

enum class world_error_code : std::uint8_t {
    illegal_transition,
    not_topmost,
    wrong_phase,
    pattern_mismatch,
    unknown_block,
    unknown_participant,
    no_access,
    not_holder,
    empty_source,
    invalid_slot,
    unsupported_event,
};

std::string_view to_string(world_error_code c);

struct world_error {
    world_error_code code = world_error_code::illegal_transition;
    std::string detail;

    bool operator==(const world_error&) const = default;
};

using transition_result = result<world_state, world_error>;

class unknown_inventory : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Fresh session: every block Unstacked, stacks empty, pieces in the tray.
/// Throws config_error when the config breaks an invariant.
world_state new_session(const task_config& config);

/// The least-deep Unstacked block of a pile, or nullopt when none remain.
std::optional<block_id> topmost_unstacked(const world_state& state, const inventory_id& inventory);

/// Why `agent` may not claim `block` right now; nullopt when the claim is grantable.
std::optional<deny_reason> check_claim(const world_state& state, const agent_id& agent, const block_id& block);

/// Pure successor function for the state-changing event kinds.
transition_result apply_transition(const world_state& state, const session_event& event);

/// Moves a puzzle piece; an occupied destination swaps with the source.
transition_result move_piece(const world_state& state,
                             const participant_id& pid,
                             const puzzle_source& source,
                             std::size_t to_slot);

bool is_session_done(const world_state& state);

/// Working blocks currently committed to `pid`'s stack.
std::vector<block_id> working_blocks_for(const world_state& state, const participant_id& pid);

json to_json(const world_snapshot& snap);
world_snapshot snapshot_from_json(const json& j);

} // namespace cohrt
