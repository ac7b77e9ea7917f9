#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace cohrt {

using block_id = std::string;
using participant_id = std::string;
using inventory_id = std::string;
using piece_id = std::string;

/// Milliseconds since the session epoch.
using time_ms = std::int64_t;

enum class color : std::uint8_t {
    red,
    orange,
    yellow,
    green,
    blue,
    purple,
    pink,
    brown,
    black,
    white,
    gray,
    cyan,
};

std::string_view to_string(color c);
std::optional<color> color_from_string(std::string_view s);

enum class agent_kind : std::uint8_t { none, server, robot, human, perception, observer };

/// Identity of a session participant on the wire and in the log.
///
/// Textual form: "robot", "server", "perception", "observer", "none",
/// or "human:<pid>" for participants.
struct agent_id {
    agent_kind kind = agent_kind::none;
    participant_id pid;

    static agent_id none() { return {}; }
    static agent_id server() { return {agent_kind::server, {}}; }
    static agent_id robot() { return {agent_kind::robot, {}}; }
    static agent_id perception() { return {agent_kind::perception, {}}; }
    static agent_id observer() { return {agent_kind::observer, {}}; }
    static agent_id human(participant_id p) { return {agent_kind::human, std::move(p)}; }

    bool is_human() const { return kind == agent_kind::human; }
    bool is_robot() const { return kind == agent_kind::robot; }

    std::string str() const;
    static std::optional<agent_id> parse(std::string_view s);

    auto operator<=>(const agent_id&) const = default;
};

} // namespace cohrt
