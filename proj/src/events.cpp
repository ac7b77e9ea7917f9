#include "cohrt/events.hpp"

#include <array>
#include <utility>

namespace cohrt {
namespace {

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E value) {
    for (const auto& [e, name] : table) {
        if (e == value) {
            return name;
        }
    }
    return "unknown";
}

template <typename E, std::size_t N>
std::optional<E> value_of(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s) {
    for (const auto& [e, name] : table) {
        if (name == s) {
            return e;
        }
    }
    return std::nullopt;
}

constexpr std::array<std::pair<deny_reason, std::string_view>, 5> k_deny{{
    {deny_reason::already_claimed, "AlreadyClaimed"},
    {deny_reason::not_topmost, "NotTopmost"},
    {deny_reason::wrong_phase, "WrongPhase"},
    {deny_reason::unknown_block, "UnknownBlock"},
    {deny_reason::no_access, "NoAccess"},
}};

constexpr std::array<std::pair<release_reason, std::string_view>, 3> k_release{{
    {release_reason::explicit_release, "explicit"},
    {release_reason::timeout, "timeout"},
    {release_reason::fault, "fault"},
}};

constexpr std::array<std::pair<event_kind, std::string_view>, 14> k_events{{
    {event_kind::session_start, "SessionStart"},
    {event_kind::start_task, "StartTask"},
    {event_kind::allocate, "Allocate"},
    {event_kind::allocation_denied, "AllocationDenied"},
    {event_kind::release, "Release"},
    {event_kind::stack_placed, "StackPlaced"},
    {event_kind::mismatch, "Mismatch"},
    {event_kind::puzzle_move, "PuzzleMove"},
    {event_kind::action_start, "ActionStart"},
    {event_kind::action_end, "ActionEnd"},
    {event_kind::client_joined, "ClientJoined"},
    {event_kind::client_lost, "ClientLost"},
    {event_kind::agent_status, "AgentStatus"},
    {event_kind::session_end, "SessionEnd"},
}};

} // namespace

std::string_view to_string(deny_reason r) { return name_of(k_deny, r); }
std::optional<deny_reason> deny_reason_from_string(std::string_view s) { return value_of(k_deny, s); }
std::string_view to_string(release_reason r) { return name_of(k_release, r); }
std::optional<release_reason> release_reason_from_string(std::string_view s) { return value_of(k_release, s); }
std::string_view to_string(event_kind k) { return name_of(k_events, k); }
std::optional<event_kind> event_kind_from_string(std::string_view s) { return value_of(k_events, s); }

bool is_state_changing(event_kind k) {
    switch (k) {
    case event_kind::start_task:
    case event_kind::allocate:
    case event_kind::release:
    case event_kind::stack_placed:
    case event_kind::puzzle_move:
        return true;
    default:
        return false;
    }
}

} // namespace cohrt
