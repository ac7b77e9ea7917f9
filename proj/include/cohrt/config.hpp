#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cohrt/types.hpp"

namespace cohrt {

/// Insertion-ordered JSON; every serialized artifact keeps a fixed field order.
using json = nlohmann::ordered_json;

struct vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const vec3&) const = default;
};

struct puzzle_spec {
    int rows = 0;
    int cols = 0;
    std::string image_id;
    /// solution[slot] is the piece that belongs in that slot (row-major).
    std::vector<piece_id> solution;

    std::size_t slot_count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    bool operator==(const puzzle_spec&) const = default;
};

struct stack_spec {
    std::vector<color> pattern;

    bool operator==(const stack_spec&) const = default;
};

/// An ordered pile of blocks feeding one participant's stack. Index 0 is the top.
struct inventory_spec {
    inventory_id id;
    participant_id supplies;
    std::vector<agent_id> access;
    std::vector<block_id> blocks;

    bool operator==(const inventory_spec&) const = default;
};

struct block_spec {
    int tag_id = 0;
    color col = color::red;

    bool operator==(const block_spec&) const = default;
};

struct timing_spec {
    time_ms robot_pick_ms = 2000;
    time_ms robot_place_ms = 3000;
    /// Working blocks older than this are released by the server.
    time_ms work_timeout_ms = 60000;
    /// Session aborts if no detection frame arrives within this window; 0 disables.
    time_ms perception_watchdog_ms = 10000;

    bool operator==(const timing_spec&) const = default;
};

/// Stack-station layout used by perception and the robot planner (meters).
struct geometry_spec {
    double block_height_m = 0.04;
    double assign_radius_m = 0.08;
    std::size_t history_depth = 30;
    std::map<participant_id, vec3> stack_bases;
    std::map<inventory_id, vec3> inventory_origins;

    bool operator==(const geometry_spec&) const = default;
};

struct task_config {
    std::vector<participant_id> participants;
    std::map<participant_id, puzzle_spec> puzzles;
    std::map<participant_id, stack_spec> stacks;
    std::vector<inventory_spec> inventories;
    std::map<block_id, block_spec> blocks;
    std::string robot_policy = "alternating_equal";
    timing_spec timing;
    geometry_spec geometry;
    std::uint64_t seed = 0;

    const inventory_spec* find_inventory(const inventory_id& id) const;
    bool has_participant(const participant_id& pid) const;

    bool operator==(const task_config&) const = default;
};

class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Throws config_error naming the first violated invariant.
void validate(const task_config& config);

json to_json(const task_config& config);
/// Parses and fills geometry defaults; does not validate.
task_config config_from_json(const json& j);
/// Loads `path`, or `path` + ".json" when the bare path does not exist.
task_config load_config(const std::filesystem::path& path);

json to_json(const vec3& v);
vec3 vec3_from_json(const json& j);

} // namespace cohrt
