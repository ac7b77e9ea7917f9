#include "cohrt/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace cohrt {
namespace {

[[noreturn]] void fail(const std::string& what) { throw config_error("ConfigInvalid: " + what); }

color parse_color(const json& j) {
    const auto name = j.get<std::string>();
    auto c = color_from_string(name);
    if (!c) {
        fail("unknown color '" + name + "'");
    }
    return *c;
}

agent_id parse_agent(const json& j) {
    const auto text = j.get<std::string>();
    auto a = agent_id::parse(text);
    if (!a) {
        fail("unknown agent '" + text + "'");
    }
    return *a;
}

constexpr double k_base_spacing_m = 0.3;
constexpr double k_inventory_offset_m = 0.4;

void fill_geometry_defaults(task_config& config) {
    auto& geo = config.geometry;
    for (std::size_t i = 0; i < config.participants.size(); ++i) {
        const auto& pid = config.participants[i];
        if (!geo.stack_bases.contains(pid)) {
            geo.stack_bases[pid] = vec3{k_base_spacing_m * static_cast<double>(i), 0.0, 0.0};
        }
    }
    for (std::size_t i = 0; i < config.inventories.size(); ++i) {
        const auto& id = config.inventories[i].id;
        if (!geo.inventory_origins.contains(id)) {
            geo.inventory_origins[id] = vec3{k_base_spacing_m * static_cast<double>(i), k_inventory_offset_m, 0.0};
        }
    }
}

} // namespace

const inventory_spec* task_config::find_inventory(const inventory_id& id) const {
    auto it = std::find_if(inventories.begin(), inventories.end(), [&](const auto& inv) { return inv.id == id; });
    return it == inventories.end() ? nullptr : &*it;
}

bool task_config::has_participant(const participant_id& pid) const {
    return std::find(participants.begin(), participants.end(), pid) != participants.end();
}

void validate(const task_config& config) {
    if (config.participants.empty()) {
        fail("at least one participant is required");
    }
    std::set<participant_id> pids;
    for (const auto& pid : config.participants) {
        if (pid.empty()) {
            fail("participant id must be non-empty");
        }
        if (!pids.insert(pid).second) {
            fail("duplicate participant '" + pid + "'");
        }
    }
    if (config.puzzles.size() != pids.size() || config.stacks.size() != pids.size()) {
        fail("every participant needs exactly one puzzle and one stack");
    }

    for (const auto& pid : config.participants) {
        auto pz = config.puzzles.find(pid);
        if (pz == config.puzzles.end()) {
            fail("missing puzzle for '" + pid + "'");
        }
        const auto& puzzle = pz->second;
        if (puzzle.rows <= 0 || puzzle.cols <= 0) {
            fail("puzzle dimensions must be positive for '" + pid + "'");
        }
        if (puzzle.solution.size() != puzzle.slot_count()) {
            fail("puzzle solution for '" + pid + "' must cover rows*cols slots");
        }
        std::set<piece_id> pieces(puzzle.solution.begin(), puzzle.solution.end());
        if (pieces.size() != puzzle.solution.size()) {
            fail("puzzle pieces for '" + pid + "' must be distinct");
        }

        auto st = config.stacks.find(pid);
        if (st == config.stacks.end()) {
            fail("missing stack for '" + pid + "'");
        }
        const auto& pattern = st->second.pattern;
        if (pattern.empty()) {
            fail("stack pattern for '" + pid + "' is empty");
        }
        std::set<color> seen(pattern.begin(), pattern.end());
        if (seen.size() != pattern.size()) {
            fail("stack pattern for '" + pid + "' repeats a color");
        }
    }

    std::set<int> tags;
    for (const auto& [id, spec] : config.blocks) {
        if (id.empty()) {
            fail("block id must be non-empty");
        }
        if (!tags.insert(spec.tag_id).second) {
            fail("duplicate tag id " + std::to_string(spec.tag_id));
        }
    }

    std::set<inventory_id> inventory_ids;
    std::set<block_id> placed_blocks;
    std::map<participant_id, std::set<color>> supplied_colors;
    for (const auto& inv : config.inventories) {
        if (!inventory_ids.insert(inv.id).second) {
            fail("duplicate inventory '" + inv.id + "'");
        }
        if (!pids.contains(inv.supplies)) {
            fail("inventory '" + inv.id + "' supplies unknown participant '" + inv.supplies + "'");
        }
        for (const auto& agent : inv.access) {
            if (agent.is_robot()) {
                continue;
            }
            // A participant may only draw from piles that feed their own stack.
            if (!agent.is_human() || agent.pid != inv.supplies) {
                fail("inventory '" + inv.id + "' grants access to " + agent.str() + " which does not own its stack");
            }
        }
        for (const auto& b : inv.blocks) {
            auto it = config.blocks.find(b);
            if (it == config.blocks.end()) {
                fail("inventory '" + inv.id + "' lists unknown block '" + b + "'");
            }
            if (!placed_blocks.insert(b).second) {
                fail("block '" + b + "' appears in more than one inventory slot");
            }
            supplied_colors[inv.supplies].insert(it->second.col);
        }
    }
    if (placed_blocks.size() != config.blocks.size()) {
        fail("every catalog block must sit in exactly one inventory");
    }
    for (const auto& [pid, stack] : config.stacks) {
        for (auto c : stack.pattern) {
            if (!supplied_colors[pid].contains(c)) {
                fail("color " + std::string(to_string(c)) + " of '" + pid + "' stack is missing from its inventories");
            }
        }
    }

    const auto& t = config.timing;
    if (t.robot_pick_ms < 0 || t.robot_place_ms < 0 || t.work_timeout_ms <= 0 || t.perception_watchdog_ms < 0) {
        fail("timing values must be non-negative (work timeout positive)");
    }
    const auto& g = config.geometry;
    if (!(g.block_height_m > 0.0) || !(g.assign_radius_m > 0.0) || g.history_depth == 0) {
        fail("geometry block height, radius and history depth must be positive");
    }
    for (const auto& pid : config.participants) {
        if (!g.stack_bases.contains(pid)) {
            fail("missing stack base position for '" + pid + "'");
        }
    }
}

json to_json(const vec3& v) { return json::array({v.x, v.y, v.z}); }

vec3 vec3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw config_error("ConfigInvalid: position must be a 3-element array");
    }
    return vec3{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const task_config& config) {
    json j;
    j["participants"] = config.participants;

    json puzzles = json::object();
    for (const auto& [pid, p] : config.puzzles) {
        puzzles[pid] = json{{"rows", p.rows}, {"cols", p.cols}, {"image_id", p.image_id}, {"solution", p.solution}};
    }
    j["puzzles"] = std::move(puzzles);

    json stacks = json::object();
    for (const auto& [pid, s] : config.stacks) {
        json pattern = json::array();
        for (auto c : s.pattern) {
            pattern.push_back(std::string(to_string(c)));
        }
        stacks[pid] = json{{"pattern", std::move(pattern)}};
    }
    j["stacks"] = std::move(stacks);

    json inventories = json::array();
    for (const auto& inv : config.inventories) {
        json access = json::array();
        for (const auto& a : inv.access) {
            access.push_back(a.str());
        }
        inventories.push_back(
            json{{"id", inv.id}, {"supplies", inv.supplies}, {"access", std::move(access)}, {"blocks", inv.blocks}});
    }
    j["inventories"] = std::move(inventories);

    json blocks = json::object();
    for (const auto& [id, b] : config.blocks) {
        blocks[id] = json{{"tag_id", b.tag_id}, {"color", std::string(to_string(b.col))}};
    }
    j["blocks"] = std::move(blocks);

    j["robot_policy"] = config.robot_policy;
    j["timing"] = json{{"robot_pick_ms", config.timing.robot_pick_ms},
                       {"robot_place_ms", config.timing.robot_place_ms},
                       {"work_timeout_ms", config.timing.work_timeout_ms},
                       {"perception_watchdog_ms", config.timing.perception_watchdog_ms}};

    json bases = json::object();
    for (const auto& [pid, pos] : config.geometry.stack_bases) {
        bases[pid] = to_json(pos);
    }
    json origins = json::object();
    for (const auto& [id, pos] : config.geometry.inventory_origins) {
        origins[id] = to_json(pos);
    }
    j["geometry"] = json{{"block_height_m", config.geometry.block_height_m},
                         {"assign_radius_m", config.geometry.assign_radius_m},
                         {"history_depth", config.geometry.history_depth},
                         {"stack_bases", std::move(bases)},
                         {"inventory_origins", std::move(origins)}};
    j["seed"] = config.seed;
    return j;
}

task_config config_from_json(const json& j) {
    task_config config;
    try {
        if (!j.is_object()) {
            fail("config must be an object");
        }
        config.participants = j.at("participants").get<std::vector<participant_id>>();

        for (const auto& [pid, p] : j.at("puzzles").items()) {
            puzzle_spec spec;
            spec.rows = p.at("rows").get<int>();
            spec.cols = p.at("cols").get<int>();
            spec.image_id = p.value("image_id", std::string{});
            spec.solution = p.at("solution").get<std::vector<piece_id>>();
            config.puzzles[pid] = std::move(spec);
        }
        for (const auto& [pid, s] : j.at("stacks").items()) {
            stack_spec spec;
            for (const auto& c : s.at("pattern")) {
                spec.pattern.push_back(parse_color(c));
            }
            config.stacks[pid] = std::move(spec);
        }
        for (const auto& inv : j.at("inventories")) {
            inventory_spec spec;
            spec.id = inv.at("id").get<std::string>();
            spec.supplies = inv.at("supplies").get<std::string>();
            for (const auto& a : inv.at("access")) {
                spec.access.push_back(parse_agent(a));
            }
            spec.blocks = inv.at("blocks").get<std::vector<block_id>>();
            config.inventories.push_back(std::move(spec));
        }
        for (const auto& [id, b] : j.at("blocks").items()) {
            config.blocks[id] = block_spec{b.at("tag_id").get<int>(), parse_color(b.at("color"))};
        }
        config.robot_policy = j.value("robot_policy", std::string("alternating_equal"));
        if (j.contains("timing")) {
            const auto& t = j.at("timing");
            config.timing.robot_pick_ms = t.value("robot_pick_ms", config.timing.robot_pick_ms);
            config.timing.robot_place_ms = t.value("robot_place_ms", config.timing.robot_place_ms);
            config.timing.work_timeout_ms = t.value("work_timeout_ms", config.timing.work_timeout_ms);
            config.timing.perception_watchdog_ms =
                t.value("perception_watchdog_ms", config.timing.perception_watchdog_ms);
        }
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            config.geometry.block_height_m = g.value("block_height_m", config.geometry.block_height_m);
            config.geometry.assign_radius_m = g.value("assign_radius_m", config.geometry.assign_radius_m);
            config.geometry.history_depth = g.value("history_depth", config.geometry.history_depth);
            if (g.contains("stack_bases")) {
                for (const auto& [pid, pos] : g.at("stack_bases").items()) {
                    config.geometry.stack_bases[pid] = vec3_from_json(pos);
                }
            }
            if (g.contains("inventory_origins")) {
                for (const auto& [id, pos] : g.at("inventory_origins").items()) {
                    config.geometry.inventory_origins[id] = vec3_from_json(pos);
                }
            }
        }
        config.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        fail(std::string("malformed config: ") + e.what());
    }
    fill_geometry_defaults(config);
    return config;
}

task_config load_config(const std::filesystem::path& path) {
    auto resolved = path;
    if (!std::filesystem::exists(resolved)) {
        resolved += ".json";
    }
    std::ifstream in(resolved);
    if (!in) {
        throw config_error("cannot open config file " + path.string());
    }
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw config_error("config file " + resolved.string() + " is not valid JSON");
    }
    return config_from_json(j);
}

} // namespace cohrt
