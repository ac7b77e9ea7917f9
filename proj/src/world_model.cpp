#include "cohrt/world_model.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace cohrt {
namespace {

template <typename E, std::size_t N>
using name_table = std::array<std::pair<E, std::string_view>, N>;

constexpr name_table<manipulation_state, 3> k_manip{{
    {manipulation_state::unstacked, "unstacked"},
    {manipulation_state::working, "working"},
    {manipulation_state::stacked, "stacked"},
}};
constexpr name_table<stack_state, 2> k_stack{{
    {stack_state::incomplete, "incomplete"},
    {stack_state::complete, "complete"},
}};
constexpr name_table<participant_phase, 4> k_phase{{
    {participant_phase::awaiting_start, "awaiting_start"},
    {participant_phase::puzzling, "puzzling"},
    {participant_phase::stacking, "stacking"},
    {participant_phase::done, "done"},
}};
constexpr name_table<world_error_code, 11> k_errors{{
    {world_error_code::illegal_transition, "IllegalTransition"},
    {world_error_code::not_topmost, "NotTopmost"},
    {world_error_code::wrong_phase, "WrongPhase"},
    {world_error_code::pattern_mismatch, "PatternMismatch"},
    {world_error_code::unknown_block, "UnknownBlock"},
    {world_error_code::unknown_participant, "UnknownParticipant"},
    {world_error_code::no_access, "NoAccess"},
    {world_error_code::not_holder, "NotHolder"},
    {world_error_code::empty_source, "EmptySource"},
    {world_error_code::invalid_slot, "InvalidSlot"},
    {world_error_code::unsupported_event, "UnsupportedEvent"},
}};

template <typename E, std::size_t N>
std::string_view lookup(const name_table<E, N>& t, E v) {
    for (const auto& [e, n] : t) {
        if (e == v) return n;
    }
    return "unknown";
}

template <typename E, std::size_t N>
std::optional<E> reverse(const name_table<E, N>& t, std::string_view s) {
    for (const auto& [e, n] : t) {
        if (n == s) return e;
    }
    return std::nullopt;
}

world_error err(world_error_code code, std::string detail) { return world_error{code, std::move(detail)}; }

bool puzzle_matches(const puzzle_record& puzzle, const puzzle_spec& spec) {
    for (std::size_t s = 0; s < spec.solution.size(); ++s) {
        if (!puzzle.grid[s] || *puzzle.grid[s] != spec.solution[s]) {
            return false;
        }
    }
    return true;
}

bool has_access(const inventory_spec& inv, const agent_id& agent) {
    return std::find(inv.access.begin(), inv.access.end(), agent) != inv.access.end();
}

void maybe_finish(world_state& state, const participant_id& pid) {
    auto& phase = state.phases.at(pid);
    if (phase == participant_phase::stacking && state.puzzles.at(pid).solved &&
        state.stacks.at(pid).state == stack_state::complete) {
        phase = participant_phase::done;
    }
}

transition_result apply_start(const world_state& state, const session_event& e, const ev::start_task& p) {
    if (!state.config.has_participant(p.pid)) {
        return err(world_error_code::unknown_participant, p.pid);
    }
    if (e.agent != agent_id::human(p.pid)) {
        return err(world_error_code::no_access, e.agent.str() + " cannot start the task for " + p.pid);
    }
    if (state.phases.at(p.pid) != participant_phase::awaiting_start) {
        return err(world_error_code::wrong_phase, p.pid + " already started");
    }
    world_state next = state;
    next.phases[p.pid] = participant_phase::puzzling;
    return next;
}

transition_result apply_allocate(const world_state& state, const session_event& e, const ev::allocate& p) {
    if (auto denied = check_claim(state, e.agent, p.block)) {
        switch (*denied) {
        case deny_reason::already_claimed:
            return err(world_error_code::illegal_transition,
                       p.block + " is " + std::string(to_string(state.blocks.at(p.block).state)));
        case deny_reason::not_topmost:
            return err(world_error_code::not_topmost, p.block);
        case deny_reason::wrong_phase:
            return err(world_error_code::wrong_phase, p.block);
        case deny_reason::unknown_block:
            return err(world_error_code::unknown_block, p.block);
        case deny_reason::no_access:
            return err(world_error_code::no_access, e.agent.str() + " -> " + p.block);
        }
    }
    world_state next = state;
    auto& b = next.blocks.at(p.block);
    b.state = manipulation_state::working;
    b.manipulator = e.agent;
    b.working_since = e.ts;
    return next;
}

transition_result apply_release(const world_state& state, const session_event& e, const ev::release& p) {
    auto it = state.blocks.find(p.block);
    if (it == state.blocks.end()) {
        return err(world_error_code::unknown_block, p.block);
    }
    if (it->second.state != manipulation_state::working) {
        return err(world_error_code::illegal_transition, p.block + " is not working");
    }
    // Server-issued releases (timeout, fault) are still attributed to the holder.
    if (it->second.manipulator != e.agent) {
        return err(world_error_code::not_holder, e.agent.str() + " does not hold " + p.block);
    }
    world_state next = state;
    auto& b = next.blocks.at(p.block);
    b.state = manipulation_state::unstacked;
    b.manipulator = agent_id::none();
    b.working_since = 0;
    return next;
}

transition_result apply_placed(const world_state& state, const session_event& e, const ev::stack_placed& p) {
    auto it = state.blocks.find(p.block);
    if (it == state.blocks.end()) {
        return err(world_error_code::unknown_block, p.block);
    }
    const auto& block = it->second;
    if (block.state != manipulation_state::working) {
        return err(world_error_code::illegal_transition,
                   p.block + " is " + std::string(to_string(block.state)) + ", cannot be stacked");
    }
    // Placements are attributed to whoever holds the block.
    if (block.manipulator != e.agent) {
        return err(world_error_code::not_holder, e.agent.str() + " does not hold " + p.block);
    }
    auto st = state.stacks.find(p.stack);
    if (st == state.stacks.end()) {
        return err(world_error_code::unknown_participant, p.stack);
    }
    const auto* inv = state.config.find_inventory(block.inventory);
    if (inv == nullptr || inv->supplies != p.stack) {
        return err(world_error_code::pattern_mismatch, p.block + " does not belong to stack " + p.stack);
    }
    auto needed = st->second.next_needed();
    if (!needed || *needed != block.col) {
        return err(world_error_code::pattern_mismatch,
                   p.block + " (" + std::string(to_string(block.col)) + ") is not the next color of " + p.stack);
    }
    world_state next = state;
    auto& stack = next.stacks.at(p.stack);
    auto& b = next.blocks.at(p.block);
    b.state = manipulation_state::stacked;
    b.stack_slot = stack.placed.size();
    b.working_since = 0;
    stack.placed.push_back(p.block);
    if (stack.placed.size() == stack.pattern.size()) {
        stack.state = stack_state::complete;
    }
    maybe_finish(next, p.stack);
    return next;
}

} // namespace

std::string_view to_string(manipulation_state s) { return lookup(k_manip, s); }
std::string_view to_string(stack_state s) { return lookup(k_stack, s); }
std::string_view to_string(participant_phase p) { return lookup(k_phase, p); }
std::string_view to_string(world_error_code c) { return lookup(k_errors, c); }
std::optional<manipulation_state> manipulation_state_from_string(std::string_view s) { return reverse(k_manip, s); }
std::optional<stack_state> stack_state_from_string(std::string_view s) { return reverse(k_stack, s); }
std::optional<participant_phase> participant_phase_from_string(std::string_view s) { return reverse(k_phase, s); }

world_state new_session(const task_config& config) {
    validate(config);
    world_state state;
    state.config = config;

    for (const auto& inv : config.inventories) {
        for (std::size_t depth = 0; depth < inv.blocks.size(); ++depth) {
            const auto& id = inv.blocks[depth];
            const auto& spec = config.blocks.at(id);
            block_record rec;
            rec.id = id;
            rec.tag_id = spec.tag_id;
            rec.col = spec.col;
            rec.inventory = inv.id;
            rec.depth = depth;
            state.blocks.emplace(id, std::move(rec));
        }
    }
    for (const auto& pid : config.participants) {
        stack_record stack;
        stack.owner = pid;
        stack.pattern = config.stacks.at(pid).pattern;
        state.stacks.emplace(pid, std::move(stack));

        const auto& spec = config.puzzles.at(pid);
        puzzle_record puzzle;
        puzzle.rows = spec.rows;
        puzzle.cols = spec.cols;
        puzzle.grid.assign(spec.slot_count(), std::nullopt);
        std::vector<piece_id> pieces = spec.solution;
        std::sort(pieces.begin(), pieces.end());
        puzzle.tray.assign(pieces.begin(), pieces.end());
        state.puzzles.emplace(pid, std::move(puzzle));

        state.phases.emplace(pid, participant_phase::awaiting_start);
    }
    return state;
}

std::optional<block_id> topmost_unstacked(const world_state& state, const inventory_id& inventory) {
    const auto* inv = state.config.find_inventory(inventory);
    if (inv == nullptr) {
        throw unknown_inventory("UnknownInventory: " + inventory);
    }
    // Inventory lists are ordered by depth, so the first Unstacked entry is the topmost.
    for (const auto& id : inv->blocks) {
        if (state.blocks.at(id).state == manipulation_state::unstacked) {
            return id;
        }
    }
    return std::nullopt;
}

std::optional<deny_reason> check_claim(const world_state& state, const agent_id& agent, const block_id& block) {
    auto it = state.blocks.find(block);
    if (it == state.blocks.end()) {
        return deny_reason::unknown_block;
    }
    if (it->second.state != manipulation_state::unstacked) {
        return deny_reason::already_claimed;
    }
    const auto* inv = state.config.find_inventory(it->second.inventory);
    if (inv == nullptr || !has_access(*inv, agent)) {
        return deny_reason::no_access;
    }
    if (state.phases.at(inv->supplies) != participant_phase::stacking) {
        return deny_reason::wrong_phase;
    }
    if (topmost_unstacked(state, inv->id) != block) {
        return deny_reason::not_topmost;
    }
    return std::nullopt;
}

transition_result apply_transition(const world_state& state, const session_event& event) {
    auto out = std::visit(
        [&](const auto& p) -> transition_result {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ev::start_task>) {
                return apply_start(state, event, p);
            } else if constexpr (std::is_same_v<T, ev::allocate>) {
                return apply_allocate(state, event, p);
            } else if constexpr (std::is_same_v<T, ev::release>) {
                return apply_release(state, event, p);
            } else if constexpr (std::is_same_v<T, ev::stack_placed>) {
                return apply_placed(state, event, p);
            } else if constexpr (std::is_same_v<T, ev::puzzle_move>) {
                if (event.agent != agent_id::human(p.pid)) {
                    return err(world_error_code::no_access, event.agent.str() + " cannot move pieces of " + p.pid);
                }
                return move_piece(state, p.pid, p.source, p.to_slot);
            } else {
                return err(world_error_code::unsupported_event, std::string(to_string(event.kind())));
            }
        },
        event.payload);
    if (out) {
        out->clock_ms = std::max(out->clock_ms, event.ts);
    }
    return out;
}

transition_result move_piece(const world_state& state,
                             const participant_id& pid,
                             const puzzle_source& source,
                             std::size_t to_slot) {
    auto pz = state.puzzles.find(pid);
    if (pz == state.puzzles.end()) {
        return err(world_error_code::unknown_participant, pid);
    }
    if (state.phases.at(pid) != participant_phase::puzzling) {
        return err(world_error_code::wrong_phase, pid + " is " + std::string(to_string(state.phases.at(pid))));
    }
    const auto& puzzle = pz->second;
    const auto& src_area = source.from_tray ? puzzle.tray : puzzle.grid;
    if (to_slot >= puzzle.grid.size() || source.index >= src_area.size()) {
        return err(world_error_code::invalid_slot, "slot out of range");
    }
    if (!src_area[source.index]) {
        return err(world_error_code::empty_source, source.from_tray ? "empty tray slot" : "empty grid slot");
    }

    world_state next = state;
    auto& p = next.puzzles.at(pid);
    auto& src = source.from_tray ? p.tray[source.index] : p.grid[source.index];
    std::swap(src, p.grid[to_slot]);
    p.solved = puzzle_matches(p, state.config.puzzles.at(pid));
    if (p.solved) {
        next.phases[pid] = participant_phase::stacking;
        maybe_finish(next, pid);
    }
    return next;
}

bool is_session_done(const world_state& state) {
    return std::all_of(state.puzzles.begin(), state.puzzles.end(), [](const auto& kv) { return kv.second.solved; }) &&
           std::all_of(state.stacks.begin(), state.stacks.end(),
                       [](const auto& kv) { return kv.second.state == stack_state::complete; });
}

std::vector<block_id> working_blocks_for(const world_state& state, const participant_id& pid) {
    std::vector<block_id> out;
    for (const auto& [id, b] : state.blocks) {
        if (b.state != manipulation_state::working) continue;
        const auto* inv = state.config.find_inventory(b.inventory);
        if (inv != nullptr && inv->supplies == pid) {
            out.push_back(id);
        }
    }
    return out;
}

json to_json(const world_snapshot& snap) {
    json blocks = json::array();
    for (const auto& [id, b] : snap.blocks) {
        json jb{{"id", b.id},
                {"tag_id", b.tag_id},
                {"color", std::string(to_string(b.col))},
                {"state", std::string(to_string(b.state))},
                {"manipulator", b.manipulator.str()},
                {"inventory", b.inventory},
                {"depth", b.depth}};
        jb["stack_slot"] = b.stack_slot ? json(*b.stack_slot) : json(nullptr);
        jb["working_since"] = b.working_since;
        blocks.push_back(std::move(jb));
    }
    json stacks = json::object();
    for (const auto& [pid, s] : snap.stacks) {
        json pattern = json::array();
        for (auto c : s.pattern) pattern.push_back(std::string(to_string(c)));
        stacks[pid] = json{{"pattern", std::move(pattern)}, {"placed", s.placed}, {"state", std::string(to_string(s.state))}};
    }
    auto slots = [](const std::vector<std::optional<piece_id>>& v) {
        json a = json::array();
        for (const auto& cell : v) a.push_back(cell ? json(*cell) : json(nullptr));
        return a;
    };
    json puzzles = json::object();
    for (const auto& [pid, p] : snap.puzzles) {
        puzzles[pid] = json{{"rows", p.rows}, {"cols", p.cols}, {"grid", slots(p.grid)}, {"tray", slots(p.tray)},
                            {"solved", p.solved}};
    }
    json phases = json::object();
    for (const auto& [pid, ph] : snap.phases) phases[pid] = std::string(to_string(ph));
    return json{{"clock_ms", snap.clock_ms},
                {"phases", std::move(phases)},
                {"puzzles", std::move(puzzles)},
                {"stacks", std::move(stacks)},
                {"blocks", std::move(blocks)}};
}

world_snapshot snapshot_from_json(const json& j) {
    auto require = [](auto opt, const std::string& what) {
        if (!opt) throw std::invalid_argument("bad value for " + what);
        return *opt;
    };
    auto slots = [](const json& a) {
        std::vector<std::optional<piece_id>> v;
        for (const auto& cell : a) {
            v.push_back(cell.is_null() ? std::nullopt : std::optional<piece_id>(cell.get<std::string>()));
        }
        return v;
    };
    world_snapshot snap;
    snap.clock_ms = j.at("clock_ms").get<time_ms>();
    for (const auto& [pid, ph] : j.at("phases").items()) {
        snap.phases[pid] = require(participant_phase_from_string(ph.get<std::string>()), "phase");
    }
    for (const auto& [pid, p] : j.at("puzzles").items()) {
        puzzle_record rec;
        rec.rows = p.at("rows").get<int>();
        rec.cols = p.at("cols").get<int>();
        rec.grid = slots(p.at("grid"));
        rec.tray = slots(p.at("tray"));
        rec.solved = p.at("solved").get<bool>();
        snap.puzzles[pid] = std::move(rec);
    }
    for (const auto& [pid, s] : j.at("stacks").items()) {
        stack_record rec;
        rec.owner = pid;
        for (const auto& c : s.at("pattern")) rec.pattern.push_back(require(color_from_string(c.get<std::string>()), "color"));
        rec.placed = s.at("placed").get<std::vector<block_id>>();
        rec.state = require(stack_state_from_string(s.at("state").get<std::string>()), "stack state");
        snap.stacks[pid] = std::move(rec);
    }
    for (const auto& b : j.at("blocks")) {
        block_record rec;
        rec.id = b.at("id").get<std::string>();
        rec.tag_id = b.at("tag_id").get<int>();
        rec.col = require(color_from_string(b.at("color").get<std::string>()), "color");
        rec.state = require(manipulation_state_from_string(b.at("state").get<std::string>()), "block state");
        rec.manipulator = require(agent_id::parse(b.at("manipulator").get<std::string>()), "manipulator");
        rec.inventory = b.at("inventory").get<std::string>();
        rec.depth = b.at("depth").get<std::size_t>();
        if (!b.at("stack_slot").is_null()) rec.stack_slot = b.at("stack_slot").get<std::size_t>();
        rec.working_since = b.at("working_since").get<time_ms>();
        auto id = rec.id;
        snap.blocks[id] = std::move(rec);
    }
    return snap;
}

} // namespace cohrt
