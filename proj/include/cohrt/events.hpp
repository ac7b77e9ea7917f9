#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cohrt/config.hpp"
#include "cohrt/types.hpp"

namespace cohrt {

enum class deny_reason : std::uint8_t { already_claimed, not_topmost, wrong_phase, unknown_block, no_access };

enum class release_reason : std::uint8_t { explicit_release, timeout, fault };

std::string_view to_string(deny_reason r);
std::optional<deny_reason> deny_reason_from_string(std::string_view s);
std::string_view to_string(release_reason r);
std::optional<release_reason> release_reason_from_string(std::string_view s);

/// Where a puzzle piece is taken from: a tray slot or a grid slot.
struct puzzle_source {
    bool from_tray = true;
    std::size_t index = 0;

    bool operator==(const puzzle_source&) const = default;
};

/// Session-log payloads. The event kind is the alternative held.
namespace ev {

struct session_start {
    task_config config;
    bool operator==(const session_start&) const = default;
};
struct start_task {
    participant_id pid;
    bool operator==(const start_task&) const = default;
};
struct allocate {
    block_id block;
    std::uint64_t receipt_order = 0;
    bool operator==(const allocate&) const = default;
};
struct allocation_denied {
    block_id block;
    std::uint64_t receipt_order = 0;
    deny_reason reason = deny_reason::already_claimed;
    bool operator==(const allocation_denied&) const = default;
};
struct release {
    block_id block;
    release_reason reason = release_reason::explicit_release;
    bool operator==(const release&) const = default;
};
struct stack_placed {
    block_id block;
    participant_id stack;
    bool operator==(const stack_placed&) const = default;
};
struct mismatch {
    block_id block;
    participant_id stack;
    std::size_t slot = 0;
    std::string detail;
    bool operator==(const mismatch&) const = default;
};
struct puzzle_move {
    participant_id pid;
    puzzle_source source;
    std::size_t to_slot = 0;
    bool operator==(const puzzle_move&) const = default;
};
struct action_start {
    std::string action;
    std::optional<block_id> block;
    bool operator==(const action_start&) const = default;
};
struct action_end {
    std::string action;
    std::optional<block_id> block;
    bool ok = true;
    bool operator==(const action_end&) const = default;
};
struct client_joined {
    std::string role;
    bool operator==(const client_joined&) const = default;
};
struct client_lost {
    bool operator==(const client_lost&) const = default;
};
struct agent_status {
    std::string status;
    std::string reason;
    std::map<participant_id, int> contributed;
    bool operator==(const agent_status&) const = default;
};
struct session_end {
    std::string status;
    bool done = false;
    bool operator==(const session_end&) const = default;
};

} // namespace ev

using event_payload = std::variant<ev::session_start,
                                   ev::start_task,
                                   ev::allocate,
                                   ev::allocation_denied,
                                   ev::release,
                                   ev::stack_placed,
                                   ev::mismatch,
                                   ev::puzzle_move,
                                   ev::action_start,
                                   ev::action_end,
                                   ev::client_joined,
                                   ev::client_lost,
                                   ev::agent_status,
                                   ev::session_end>;

enum class event_kind : std::uint8_t {
    session_start,
    start_task,
    allocate,
    allocation_denied,
    release,
    stack_placed,
    mismatch,
    puzzle_move,
    action_start,
    action_end,
    client_joined,
    client_lost,
    agent_status,
    session_end,
};

std::string_view to_string(event_kind k);
std::optional<event_kind> event_kind_from_string(std::string_view s);

/// Kinds that mutate WorldState when folded through apply_transition.
bool is_state_changing(event_kind k);

struct session_event {
    time_ms ts = 0;
    agent_id agent;
    event_payload payload;

    event_kind kind() const { return static_cast<event_kind>(payload.index()); }

    bool operator==(const session_event&) const = default;
};

using session_log = std::vector<session_event>;

} // namespace cohrt
