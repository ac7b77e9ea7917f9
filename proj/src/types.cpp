#include "cohrt/types.hpp"

#include <array>
#include <utility>

namespace cohrt {
namespace {

constexpr std::array<std::pair<color, std::string_view>, 12> k_colors{{
    {color::red, "red"},
    {color::orange, "orange"},
    {color::yellow, "yellow"},
    {color::green, "green"},
    {color::blue, "blue"},
    {color::purple, "purple"},
    {color::pink, "pink"},
    {color::brown, "brown"},
    {color::black, "black"},
    {color::white, "white"},
    {color::gray, "gray"},
    {color::cyan, "cyan"},
}};

constexpr std::string_view k_human_prefix = "human:";

} // namespace

std::string_view to_string(color c) {
    for (const auto& [value, name] : k_colors) {
        if (value == c) {
            return name;
        }
    }
    return "unknown";
}

std::optional<color> color_from_string(std::string_view s) {
    for (const auto& [value, name] : k_colors) {
        if (name == s) {
            return value;
        }
    }
    return std::nullopt;
}

std::string agent_id::str() const {
    switch (kind) {
    case agent_kind::none:
        return "none";
    case agent_kind::server:
        return "server";
    case agent_kind::robot:
        return "robot";
    case agent_kind::perception:
        return "perception";
    case agent_kind::observer:
        return "observer";
    case agent_kind::human:
        return std::string(k_human_prefix) + pid;
    }
    return "none";
}

std::optional<agent_id> agent_id::parse(std::string_view s) {
    if (s == "none") return agent_id::none();
    if (s == "server") return agent_id::server();
    if (s == "robot") return agent_id::robot();
    if (s == "perception") return agent_id::perception();
    if (s == "observer") return agent_id::observer();
    if (s.starts_with(k_human_prefix) && s.size() > k_human_prefix.size()) {
        return agent_id::human(std::string(s.substr(k_human_prefix.size())));
    }
    return std::nullopt;
}

} // namespace cohrt
