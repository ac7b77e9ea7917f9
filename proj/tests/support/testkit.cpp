#include "testkit.hpp"

#include "cohrt/perception.hpp"

#include <algorithm>
#include <barrier>
#include <memory>
#include <thread>
#include <set>
#include <stdexcept>

namespace cohrt::testkit {

namespace msg = protocol::msg;

std::string source_dir() { return COHRT_SOURCE_DIR; }
std::string reference_path() { return source_dir() + "/scenarios/paper_reference.json"; }
task_config reference_config() { return load_config(reference_path()); }

task_config small_config(std::size_t participants, std::size_t stack, int rows, int cols) {
    if (stack > 12) throw std::invalid_argument("at most 12 distinct colors");
    task_config c;
    int tag = 1;
    for (std::size_t i = 0; i < participants; ++i) {
        const auto pid = "P" + std::to_string(i + 1);
        c.participants.push_back(pid);
        puzzle_spec p{rows, cols, "img", {}};
        for (int s = 0; s < rows * cols; ++s) p.solution.push_back(pid + "_p" + std::to_string(s));
        // Solution order differs from sorted order so the tray is not pre-solved.
        std::reverse(p.solution.begin(), p.solution.end());
        c.puzzles[pid] = p;
        inventory_spec inv{"pile_" + pid, pid, {agent_id::human(pid), agent_id::robot()}, {}};
        for (std::size_t k = 0; k < stack; ++k) {
            // Rotate colors so stacks differ.
            const auto col = static_cast<color>((k + i) % 12);
            c.stacks[pid].pattern.push_back(col);
            const auto id = pid + "_b" + std::to_string(k);
            c.blocks[id] = block_spec{tag++, col};
            inv.blocks.push_back(id);
        }
        c.inventories.push_back(inv);
        c.geometry.stack_bases[pid] = vec3{0.3 * static_cast<double>(i), 0.0, 0.0};
        c.geometry.inventory_origins[inv.id] = vec3{0.3 * static_cast<double>(i), 0.4, 0.0};
    }
    validate(c);
    return c;
}

world_state must(const world_state& s, const session_event& e) {
    auto next = apply_transition(s, e);
    if (!next) throw std::logic_error("fixture transition rejected: " + next.error().detail);
    return std::move(next).value();
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> solving_moves(const puzzle_spec& spec) {
    auto sorted = spec.solution;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::pair<std::size_t, std::size_t>> moves;
    for (std::size_t slot = 0; slot < spec.solution.size(); ++slot) {
        const auto idx = static_cast<std::size_t>(std::find(sorted.begin(), sorted.end(), spec.solution[slot]) - sorted.begin());
        moves.emplace_back(idx, slot);
    }
    return moves;
}

} // namespace

world_state to_stacking(world_state s, const participant_id& pid) {
    const auto who = agent_id::human(pid);
    s = must(s, session_event{s.clock_ms, who, ev::start_task{pid}});
    for (auto [tray, slot] : solving_moves(s.config.puzzles.at(pid))) {
        s = must(s, session_event{s.clock_ms, who, ev::puzzle_move{pid, puzzle_source{true, tray}, slot}});
    }
    return s;
}

void drive_to_stacking(server::coordinator& coord, server::connection_id conn, const task_config& config,
                       const participant_id& pid, std::uint64_t& seq) {
    coord.receive(conn, protocol::make_message(msg::start_task{pid}, ++seq));
    for (auto [tray, slot] : solving_moves(config.puzzles.at(pid))) {
        coord.receive(conn, protocol::make_message(msg::puzzle_move{puzzle_source{true, tray}, slot}, ++seq));
    }
}

server::connection_id connect_as(server::coordinator& coord, const std::string& role, const participant_id& pid,
                                 std::vector<std::string>* frames, std::uint64_t& seq) {
    server::client_sink sink;
    sink.send = [frames](const std::string& f) {
        if (frames) frames->push_back(f);
        return true;
    };
    sink.close = [] {};
    auto conn = coord.connect(std::move(sink));
    coord.receive(conn, protocol::make_message(msg::hello{protocol::k_version, role, pid}, ++seq));
    return conn;
}

race_tally allocation_race(const task_config& config, std::size_t requesters, std::size_t trials) {
    race_tally tally;
    const auto target = config.find_inventory("pile_P1")->blocks.front();
    server::manual_clock clock;
    std::unique_ptr<server::coordinator> coord;
    std::vector<std::optional<msg::allocation_response>> responses(requesters);
    std::barrier start(static_cast<std::ptrdiff_t>(requesters + 1));
    std::barrier done(static_cast<std::ptrdiff_t>(requesters + 1));
    bool stop = false;

    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < requesters; ++i) {
        pool.emplace_back([&, i] {
            const auto who = i % 2 == 0 ? agent_id::robot() : agent_id::human("P1");
            while (true) {
                start.arrive_and_wait();
                if (stop) return;
                responses[i] = coord->request_allocation(who, target);
                done.arrive_and_wait();
            }
        });
    }

    for (std::size_t t = 0; t < trials; ++t) {
        coord = std::make_unique<server::coordinator>(config, clock);
        std::uint64_t seq = 0;
        auto conn = connect_as(*coord, "human", "P1", nullptr, seq);
        drive_to_stacking(*coord, conn, config, "P1", seq);
        const auto before = coord->state();
        std::fill(responses.begin(), responses.end(), std::nullopt);

        start.arrive_and_wait();
        done.arrive_and_wait();

        std::size_t granted = 0;
        std::set<std::uint64_t> orders;
        for (const auto& r : responses) {
            if (!r) {
                tally.violations.push_back("missing response");
                continue;
            }
            orders.insert(r->receipt_order);
            if (r->granted) {
                ++granted;
            } else if (r->reason != deny_reason::already_claimed) {
                tally.violations.push_back("denied for " + std::string(r->reason ? to_string(*r->reason) : "nothing"));
            }
        }
        tally.grants += granted;
        tally.denials += requesters - granted;
        tally.exact_one_grant += granted == 1 ? 1 : 0;
        if (orders.size() != requesters) tally.violations.push_back("receipt orders not unique");

        const auto after = coord->state();
        if (auto v = check_invariants(after)) tally.violations.push_back(v->what);
        const auto& b = after.blocks.at(target);
        if (b.state != manipulation_state::working) tally.violations.push_back("block not working after the race");
        for (const auto& [id, rec] : after.blocks) {
            if (id != target && !(rec == before.blocks.at(id))) tally.violations.push_back("bystander block changed");
        }
        // The log must agree: one Allocate and the rest AllocationDenied.
        std::size_t logged_grants = 0, logged_denials = 0;
        for (const auto& e : coord->log()) {
            logged_grants += e.kind() == event_kind::allocate;
            logged_denials += e.kind() == event_kind::allocation_denied;
        }
        if (logged_grants != granted || logged_denials != requesters - granted) {
            tally.violations.push_back("log disagrees with responses");
        }
        ++tally.trials;
    }
    stop = true;
    start.arrive_and_wait();
    for (auto& th : pool) th.join();
    return tally;
}

// ---------------------------------------------------------------- replay

namespace {

std::vector<std::pair<std::string, session_event>> variants_of(const session_event& e, const task_config& cfg) {
    std::vector<std::pair<std::string, session_event>> out;
    auto other_block = [&](const block_id& b) {
        auto it = cfg.blocks.upper_bound(b);
        return it == cfg.blocks.end() ? cfg.blocks.begin()->first : it->first;
    };
    auto other_pid = [&](const participant_id& p) {
        auto it = std::find(cfg.participants.begin(), cfg.participants.end(), p);
        if (it == cfg.participants.end() || ++it == cfg.participants.end()) return cfg.participants.front() == p ? std::string("nobody") : cfg.participants.front();
        return *it;
    };
    auto with = [&](std::string what, auto mutate_fn) {
        session_event m = e;
        mutate_fn(m);
        if (!(m == e)) out.emplace_back(std::move(what), std::move(m));
    };
    // Agent retarget.
    with("agent", [&](session_event& m) {
        if (m.agent.is_robot()) m.agent = agent_id::human(cfg.participants.front());
        else if (m.agent.is_human()) m.agent = agent_id::robot();
        else m.agent = agent_id::robot();
    });
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ev::allocate> || std::is_same_v<T, ev::release>) {
                with("block", [&](session_event& m) { std::get<T>(m.payload).block = other_block(p.block); });
            } else if constexpr (std::is_same_v<T, ev::stack_placed>) {
                with("block", [&](session_event& m) { std::get<T>(m.payload).block = other_block(p.block); });
                with("stack", [&](session_event& m) { std::get<T>(m.payload).stack = other_pid(p.stack); });
            } else if constexpr (std::is_same_v<T, ev::start_task>) {
                with("pid", [&](session_event& m) { std::get<T>(m.payload).pid = other_pid(p.pid); });
            } else if constexpr (std::is_same_v<T, ev::puzzle_move>) {
                const auto slots = cfg.puzzles.at(p.pid).slot_count();
                with("to_slot", [&](session_event& m) { std::get<T>(m.payload).to_slot = (p.to_slot + 1) % slots; });
                with("source", [&](session_event& m) { std::get<T>(m.payload).source.index = (p.source.index + 1) % slots; });
                with("source_area", [&](session_event& m) { std::get<T>(m.payload).source.from_tray = !p.source.from_tray; });
            }
        },
        e.payload);
    return out;
}

} // namespace

mutation_report single_event_mutations(const session_log& log, const world_state& recorded_final) {
    mutation_report r;
    const auto* start = log.empty() ? nullptr : std::get_if<ev::session_start>(&log.front().payload);
    if (start == nullptr) {
        r.missed.push_back("log has no SessionStart");
        return r;
    }
    auto check = [&](const std::string& what, const session_log& mutated) {
        ++r.tried;
        bool detected = false;
        try {
            detected = !(sim::replay(mutated) == recorded_final);
        } catch (const sim::replay_divergence&) {
            detected = true;
        }
        if (detected) ++r.detected;
        else r.missed.push_back(what);
    };
    for (std::size_t i = 1; i < log.size(); ++i) {
        const auto& e = log[i];
        if (!is_state_changing(e.kind())) continue;
        const auto where = std::string(to_string(e.kind())) + "@" + std::to_string(i);
        auto mutated = log;
        mutated.erase(mutated.begin() + static_cast<std::ptrdiff_t>(i));
        check("delete " + where, mutated);
        mutated = log;
        mutated.insert(mutated.begin() + static_cast<std::ptrdiff_t>(i), e);
        check("duplicate " + where, mutated);
        for (auto& [what, variant] : variants_of(e, start->config)) {
            mutated = log;
            mutated[i] = variant;
            check(what + " " + where, mutated);
        }
    }
    return r;
}

// ---------------------------------------------------------------- protocol

std::string random_text(rng_t& rng, std::size_t max_len) {
    static const std::vector<std::string> alphabet = {
        "a", "b", "z", "P", "1", "7", "_", "-", " ", ":", "\"", "\\", "/", "\t", "{", "}", "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\xa4\x96"};
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::string out;
    for (auto n = len(rng); n > 0; --n) out += alphabet[pick(rng)];
    return out;
}

namespace {

bool coin(rng_t& rng) { return std::bernoulli_distribution(0.5)(rng); }

template <typename T>
T uniform(rng_t& rng, T lo, T hi) {
    return std::uniform_int_distribution<T>(lo, hi)(rng);
}

agent_id random_agent(rng_t& rng) {
    switch (uniform(rng, 0, 4)) {
    case 0: return agent_id::robot();
    case 1: return agent_id::server();
    case 2: return agent_id::observer();
    case 3: return agent_id::perception();
    default: return agent_id::human("P" + std::to_string(uniform(rng, 1, 9)));
    }
}

} // namespace

protocol::message random_message(rng_t& rng, const task_config& config) {
    protocol::payload body;
    switch (uniform<std::size_t>(rng, 0, std::variant_size_v<protocol::payload> - 1)) {
    case 0: body = msg::hello{coin(rng) ? protocol::k_version : uniform(rng, -5, 50), random_text(rng), random_text(rng)}; break;
    case 1: body = msg::config_push{config, random_agent(rng)}; break;
    case 2: body = msg::start_task{random_text(rng)}; break;
    case 3: body = msg::allocation_request{random_text(rng)}; break;
    case 4: {
        msg::allocation_response r{random_text(rng), coin(rng), std::nullopt, uniform<std::uint64_t>(rng, 0, UINT64_MAX)};
        if (!r.granted) r.reason = static_cast<deny_reason>(uniform(rng, 0, 4));
        body = r;
        break;
    }
    case 5: body = msg::release_block{random_text(rng)}; break;
    case 6: body = msg::puzzle_move{puzzle_source{coin(rng), uniform<std::size_t>(rng, 0, 100)}, uniform<std::size_t>(rng, 0, 100)}; break;
    case 7: {
        auto w = new_session(config);
        for (int i = uniform(rng, 0, 30); i > 0; --i) {
            auto next = apply_transition(w, random_event(rng, w, w.clock_ms + uniform<time_ms>(rng, 0, 3000)));
            if (next) w = std::move(next).value();
        }
        body = msg::state_update{static_cast<const world_snapshot&>(w)};
        break;
    }
    case 8: {
        msg::detection_frame f;
        std::uniform_real_distribution<double> pos(-2.0, 2.0);
        for (int i = uniform(rng, 0, 16); i > 0; --i) {
            f.detections.push_back(msg::detection{uniform(rng, -100, 1000), vec3{pos(rng), pos(rng), pos(rng)}, random_text(rng)});
        }
        body = f;
        break;
    }
    case 9: body = msg::action_start{random_text(rng), coin(rng) ? std::optional<block_id>(random_text(rng)) : std::nullopt}; break;
    case 10: body = msg::action_end{random_text(rng), coin(rng) ? std::optional<block_id>(random_text(rng)) : std::nullopt, coin(rng)}; break;
    case 11: body = msg::session_end{random_text(rng), coin(rng)}; break;
    case 12: body = msg::error{random_text(rng), random_text(rng, 40)}; break;
    case 13: body = msg::heartbeat{}; break;
    default: {
        msg::agent_status s{random_text(rng), random_text(rng, 30), {}};
        for (int i = uniform(rng, 0, 3); i > 0; --i) s.contributed[random_text(rng)] = uniform(rng, -3, 10);
        body = s;
        break;
    }
    }
    return protocol::message{static_cast<protocol::message_kind>(body.index()), uniform<std::uint64_t>(rng, 0, UINT64_MAX),
                             uniform<time_ms>(rng, INT64_MIN, INT64_MAX), std::move(body)};
}

std::string mutate(std::string frame, rng_t& rng, int max_edits) {
    static const std::string interesting = "{}[]\":,\\\n0123456789-.eEtfn \x00\xff\xc3";
    for (int edits = uniform(rng, 1, max_edits); edits > 0; --edits) {
        const auto n = frame.size();
        const auto at = n == 0 ? 0 : uniform<std::size_t>(rng, 0, n - 1);
        switch (uniform(rng, 0, 6)) {
        case 0:
            if (n) frame[at] = static_cast<char>(frame[at] ^ (1 << uniform(rng, 0, 7)));
            break;
        case 1: frame.insert(frame.begin() + static_cast<std::ptrdiff_t>(at), interesting[uniform<std::size_t>(rng, 0, interesting.size() - 1)]); break;
        case 2:
            if (n) frame.erase(at, 1);
            break;
        case 3: frame.resize(at); break;
        case 4:
            if (n) frame[at] = static_cast<char>(uniform(rng, 0, 255));
            break;
        case 5: {
            // Duplicate a slice somewhere else.
            if (!n) break;
            const auto len = uniform<std::size_t>(rng, 1, std::min<std::size_t>(16, n - at));
            const auto slice = frame.substr(at, len);
            frame.insert(uniform<std::size_t>(rng, 0, frame.size()), slice);
            break;
        }
        default:
            if (n) frame[at] = interesting[uniform<std::size_t>(rng, 0, interesting.size() - 1)];
            break;
        }
    }
    return frame;
}

// ---------------------------------------------------------------- world model

session_event random_event(rng_t& rng, const world_state& s, time_ms ts) {
    const auto& cfg = s.config;
    auto any_pid = [&] {
        return coin(rng) || cfg.participants.empty() ? cfg.participants.at(uniform<std::size_t>(rng, 0, cfg.participants.size() - 1))
                                                    : std::string("nobody");
    };
    auto actor = [&] {
        return uniform(rng, 0, 2) == 0 ? agent_id::robot() : agent_id::human(cfg.participants.at(uniform<std::size_t>(rng, 0, cfg.participants.size() - 1)));
    };
    auto any_block = [&] {
        if (uniform(rng, 0, 9) == 0) return std::string("no_such_block");
        auto it = cfg.blocks.begin();
        std::advance(it, uniform<std::size_t>(rng, 0, cfg.blocks.size() - 1));
        return it->first;
    };
    // Plausible candidates make deep sequences reachable.
    auto plausible_block = [&]() -> std::optional<block_id> {
        const auto& inv = cfg.inventories.at(uniform<std::size_t>(rng, 0, cfg.inventories.size() - 1));
        return topmost_unstacked(s, inv.id);
    };
    auto working_block = [&]() -> std::optional<block_id> {
        std::vector<block_id> w;
        for (const auto& [id, b] : s.blocks) {
            if (b.state == manipulation_state::working) w.push_back(id);
        }
        if (w.empty()) return std::nullopt;
        return w[uniform<std::size_t>(rng, 0, w.size() - 1)];
    };

    switch (uniform(rng, 0, 9)) {
    case 0: {
        const auto pid = any_pid();
        return {ts, coin(rng) ? agent_id::human(pid) : actor(), ev::start_task{pid}};
    }
    case 1:
    case 2: {
        auto b = coin(rng) ? plausible_block() : std::optional<block_id>(any_block());
        return {ts, actor(), ev::allocate{b.value_or(any_block()), uniform<std::uint64_t>(rng, 1, 1000)}};
    }
    case 3: {
        auto b = working_block().value_or(any_block());
        const auto reason = static_cast<release_reason>(uniform(rng, 0, 2));
        agent_id who = actor();
        if (coin(rng) && s.blocks.contains(b)) who = s.blocks.at(b).manipulator;
        return {ts, who, ev::release{b, reason}};
    }
    case 4:
    case 5: {
        auto b = working_block().value_or(any_block());
        participant_id stack = any_pid();
        if (coin(rng) && s.blocks.contains(b)) {
            if (const auto* inv = cfg.find_inventory(s.blocks.at(b).inventory)) stack = inv->supplies;
        }
        agent_id who = s.blocks.contains(b) ? s.blocks.at(b).manipulator : actor();
        return {ts, who, ev::stack_placed{b, stack}};
    }
    default: {
        const auto pid = any_pid();
        std::size_t slots = 1;
        if (auto it = cfg.puzzles.find(pid); it != cfg.puzzles.end()) slots = it->second.slot_count();
        if (coin(rng) && cfg.puzzles.contains(pid) && s.puzzles.contains(pid)) {
            // A move that places a missing piece correctly.
            const auto& spec = cfg.puzzles.at(pid);
            const auto& p = s.puzzles.at(pid);
            for (std::size_t slot = 0; slot < spec.solution.size(); ++slot) {
                if (p.grid[slot] == spec.solution[slot]) continue;
                for (std::size_t t = 0; t < p.tray.size(); ++t) {
                    if (p.tray[t] == spec.solution[slot]) return {ts, agent_id::human(pid), ev::puzzle_move{pid, {true, t}, slot}};
                }
                for (std::size_t g = 0; g < p.grid.size(); ++g) {
                    if (p.grid[g] == spec.solution[slot]) return {ts, agent_id::human(pid), ev::puzzle_move{pid, {false, g}, slot}};
                }
            }
        }
        return {ts, coin(rng) ? agent_id::human(pid) : actor(),
                ev::puzzle_move{pid, puzzle_source{coin(rng), uniform<std::size_t>(rng, 0, slots)}, uniform<std::size_t>(rng, 0, slots)}};
    }
    }
}

std::optional<property_violation> check_invariants(const world_state& s) {
    const auto& cfg = s.config;
    // Conservation: every catalog block exactly once, in exactly one state.
    if (s.blocks.size() != cfg.blocks.size()) return property_violation{"block count changed"};
    std::multiset<block_id> stacked_ids;
    for (const auto& [pid, st] : s.stacks) {
        stacked_ids.insert(st.placed.begin(), st.placed.end());
        // Prefix property.
        if (st.placed.size() > st.pattern.size()) return property_violation{"stack " + pid + " overflows"};
        for (std::size_t i = 0; i < st.placed.size(); ++i) {
            if (s.blocks.at(st.placed[i]).col != st.pattern[i]) return property_violation{"stack " + pid + " not a prefix"};
            if (s.blocks.at(st.placed[i]).stack_slot != i) return property_violation{"slot index disagrees"};
        }
        const bool full = st.placed.size() == st.pattern.size();
        if (full != (st.state == stack_state::complete)) return property_violation{"stack state disagrees with length"};
    }
    std::size_t n_stacked = 0;
    for (const auto& [id, b] : s.blocks) {
        if (!cfg.blocks.contains(id)) return property_violation{"unknown block " + id};
        switch (b.state) {
        case manipulation_state::unstacked:
            if (b.manipulator != agent_id::none()) return property_violation{"unstacked block has a manipulator"};
            break;
        case manipulation_state::working:
            if (b.manipulator == agent_id::none()) return property_violation{"working block without manipulator"};
            break;
        case manipulation_state::stacked:
            ++n_stacked;
            if (stacked_ids.count(id) != 1) return property_violation{"stacked block " + id + " not on exactly one stack"};
            break;
        }
    }
    if (n_stacked != stacked_ids.size()) return property_violation{"stack lists hold non-stacked blocks"};
    // Puzzle pieces conserved.
    for (const auto& [pid, p] : s.puzzles) {
        std::multiset<piece_id> have;
        for (const auto& c : p.grid) if (c) have.insert(*c);
        for (const auto& c : p.tray) if (c) have.insert(*c);
        const auto& sol = cfg.puzzles.at(pid).solution;
        if (have != std::multiset<piece_id>(sol.begin(), sol.end())) return property_violation{"puzzle pieces not conserved for " + pid};
        bool solved = true;
        for (std::size_t i = 0; i < sol.size(); ++i) solved = solved && p.grid[i] == sol[i];
        if (solved != p.solved) return property_violation{"solved flag wrong for " + pid};
    }
    for (const auto& [pid, ph] : s.phases) {
        if ((ph == participant_phase::stacking || ph == participant_phase::done) && !s.puzzles.at(pid).solved) {
            return property_violation{pid + " stacking with an unsolved puzzle"};
        }
    }
    return std::nullopt;
}

std::optional<property_violation> check_step(const world_state& prev, const session_event& e, const world_state& next) {
    if (auto v = check_invariants(next)) return v;
    int changed = 0;
    for (const auto& [id, b] : next.blocks) {
        const auto& before = prev.blocks.at(id);
        if (before.state == b.state) {
            if (before.manipulator != b.manipulator) return property_violation{"manipulator changed without a state edge"};
            continue;
        }
        ++changed;
        using ms = manipulation_state;
        const auto edge = std::pair{before.state, b.state};
        const auto k = e.kind();
        const bool ok = (edge == std::pair{ms::unstacked, ms::working} && k == event_kind::allocate) ||
                        (edge == std::pair{ms::working, ms::stacked} && k == event_kind::stack_placed) ||
                        (edge == std::pair{ms::working, ms::unstacked} && k == event_kind::release);
        if (!ok) return property_violation{"illegal edge for " + id + ": " + std::string(to_string(before.state)) + " -> " + std::string(to_string(b.state))};
        if (k == event_kind::allocate) {
            // Topmost rule, against a linear scan of the pile.
            const auto& inv = *prev.config.find_inventory(before.inventory);
            for (const auto& other : inv.blocks) {
                if (other == id) break;
                if (prev.blocks.at(other).state == ms::unstacked) return property_violation{"granted " + id + " below unstacked " + other};
            }
        }
    }
    if (changed > 1) return property_violation{"one event changed several blocks"};
    for (const auto& [pid, ph] : next.phases) {
        if (static_cast<int>(ph) < static_cast<int>(prev.phases.at(pid))) return property_violation{"phase of " + pid + " went backwards"};
    }
    for (const auto& [pid, st] : next.stacks) {
        const auto& before = prev.stacks.at(pid).placed;
        if (st.placed.size() < before.size() || !std::equal(before.begin(), before.end(), st.placed.begin())) {
            return property_violation{"stack " + pid + " is not append-only"};
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- metrics

generated_log random_metrics_log(rng_t& rng, time_ms min_activity_ms) {
    generated_log g;
    g.start = uniform<time_ms>(rng, 0, 5000);
    g.end = g.start + uniform<time_ms>(rng, 1000, 60000);
    task_config cfg = small_config(2, 1, 1, 1);
    const std::vector<agent_id> agents{agent_id::robot(), agent_id::human("P1"), agent_id::human("P2")};

    std::vector<session_event> body;
    for (const auto& a : agents) {
        // Starts and ends both increase, so FIFO pairing recovers these intervals.
        time_ms t = g.start + uniform<time_ms>(rng, 0, 3000);
        time_ms last_end = g.start;
        const int n = uniform(rng, 0, 8);
        for (int i = 0; i < n && t < g.end; ++i) {
            const time_ms s = t;
            time_ms e = std::max(last_end, s) + uniform<time_ms>(rng, 1, 8000);
            const bool unclosed = i == n - 1 && uniform(rng, 0, 5) == 0;
            if (e > g.end || unclosed) {
                body.push_back({s, a, ev::action_start{"act", std::nullopt}});
                g.intervals.push_back({a, s, g.end});
                last_end = g.end;
                break;
            }
            body.push_back({s, a, ev::action_start{"act", std::nullopt}});
            body.push_back({e, a, ev::action_end{"act", std::nullopt, true}});
            g.intervals.push_back({a, s, e});
            last_end = e;
            // Next start may overlap the previous action (same agent).
            t = s + uniform<time_ms>(rng, 1, 9000);
        }
        if (a.is_human()) {
            for (int i = uniform(rng, 0, 6); i > 0; --i) {
                const auto at = uniform<time_ms>(rng, g.start, g.end);
                body.push_back({at, a, ev::puzzle_move{a.pid, puzzle_source{true, 0}, 0}});
                g.intervals.push_back({a, at, std::min(at + min_activity_ms, g.end)});
            }
            if (coin(rng)) body.push_back({uniform<time_ms>(rng, g.start, g.end), a, ev::start_task{a.pid}});
        }
    }
    // Stable by time; an End never precedes its own Start because e > s.
    std::stable_sort(body.begin(), body.end(), [](const auto& x, const auto& y) { return x.ts < y.ts; });
    g.log.push_back({g.start, agent_id::server(), ev::session_start{cfg}});
    g.log.insert(g.log.end(), body.begin(), body.end());
    g.log.push_back({g.end, agent_id::server(), ev::session_end{"success", true}});
    return g;
}

sweep_result brute_force_sweep(const std::vector<metrics::activity_interval>& intervals,
                               const std::vector<agent_id>& team,
                               time_ms start,
                               time_ms end) {
    sweep_result r;
    const auto n = static_cast<std::size_t>(end - start);
    std::map<agent_id, std::vector<char>> grid;
    for (const auto& a : team) grid[a].assign(n, 0);
    for (const auto& iv : intervals) {
        auto& g = grid[iv.agent];
        if (g.empty()) g.assign(n, 0);
        for (time_ms t = std::max(iv.start, start); t < std::min(iv.end, end); ++t) g[static_cast<std::size_t>(t - start)] = 1;
    }
    for (const auto& [a, g] : grid) r.active[a] = std::count(g.begin(), g.end(), 1);
    for (std::size_t t = 0; t < n; ++t) {
        bool all = !team.empty();
        for (const auto& a : team) all = all && grid[a][t];
        r.all_active += all ? 1 : 0;
    }
    // Maximal runs per agent are the normalized intervals.
    std::vector<metrics::activity_interval> runs;
    for (const auto& [a, g] : grid) {
        for (std::size_t t = 0; t < n;) {
            if (!g[t]) {
                ++t;
                continue;
            }
            auto u = t;
            while (u < n && g[u]) ++u;
            runs.push_back({a, start + static_cast<time_ms>(t), start + static_cast<time_ms>(u)});
            t = u;
        }
    }
    for (const auto& i : runs) {
        std::optional<time_ms> best;
        for (const auto& j : runs) {
            if (j.agent == i.agent || j.start < i.start) continue;
            if (!best || j.start < *best) best = j.start;
        }
        if (best) r.functional_delays.push_back(std::max<time_ms>(0, *best - i.end));
    }
    std::sort(r.functional_delays.begin(), r.functional_delays.end());
    return r;
}

// ---------------------------------------------------------------- perception

scene random_scene(rng_t& rng, const task_config& config, double sigma_m, std::size_t max_hidden, double hide_probability) {
    scene sc;
    sc.initial = new_session(config);
    for (const auto& p : config.participants) sc.initial = to_stacking(sc.initial, p);

    std::map<participant_id, std::vector<block_id>> truth;
    for (const auto& p : config.participants) truth[p] = {};
    std::map<participant_id, std::size_t> target;
    for (const auto& p : config.participants) target[p] = uniform<std::size_t>(rng, 0, config.stacks.at(p).pattern.size());

    const auto& geo = config.geometry;
    std::normal_distribution<double> noise(0.0, sigma_m);
    auto emit = [&](std::vector<session_event> claims) {
        scene_frame f;
        f.truth = truth;
        std::set<block_id> hidden;
        for (const auto& [pid, blocks] : truth) {
            if (blocks.size() < 2 || !std::bernoulli_distribution(hide_probability)(rng)) continue;
            std::vector<block_id> below(blocks.begin(), blocks.end() - 1);
            std::shuffle(below.begin(), below.end(), rng);
            const auto k = uniform<std::size_t>(rng, 1, std::min(max_hidden, below.size()));
            hidden.insert(below.begin(), below.begin() + static_cast<std::ptrdiff_t>(k));
        }
        f.hidden.assign(hidden.begin(), hidden.end());
        for (const auto& [pid, blocks] : truth) {
            const auto& base = geo.stack_bases.at(pid);
            for (std::size_t i = 0; i < blocks.size(); ++i) {
                if (hidden.contains(blocks[i])) continue;
                f.frame.detections.push_back(msg::detection{
                    config.blocks.at(blocks[i]).tag_id,
                    vec3{base.x + noise(rng), base.y + noise(rng), base.z + static_cast<double>(i) * geo.block_height_m + noise(rng)},
                    "cam"});
            }
        }
        std::shuffle(f.frame.detections.begin(), f.frame.detections.end(), rng);
        f.claims = std::move(claims);
        sc.frames.push_back(std::move(f));
    };

    std::uint64_t receipt = 0;
    emit({});
    while (true) {
        std::vector<participant_id> open;
        for (const auto& p : config.participants) {
            if (truth[p].size() < target[p]) open.push_back(p);
        }
        if (open.empty()) break;
        const auto pid = open[uniform<std::size_t>(rng, 0, open.size() - 1)];
        const auto& inv = *std::find_if(config.inventories.begin(), config.inventories.end(),
                                        [&](const auto& i) { return i.supplies == pid; });
        const auto b = inv.blocks.at(truth[pid].size());
        truth[pid].push_back(b);
        emit({session_event{0, agent_id::human(pid), ev::allocate{b, ++receipt}}});
        for (int k = uniform(rng, 0, 3); k > 0; --k) emit({});
    }
    return sc;
}

scene_tally score_scene(const scene& sc, std::size_t depth) {
    scene_tally t;
    auto state = sc.initial;
    perception::stack_history history(depth);
    std::map<block_id, std::size_t> last_seen;
    for (std::size_t i = 0; i < sc.frames.size(); ++i) {
        const auto& f = sc.frames[i];
        ++t.frames;
        t.occluded_frames += f.hidden.empty() ? 0 : 1;
        for (const auto& c : f.claims) state = must(state, c);
        for (const auto& [pid, blocks] : f.truth) {
            for (const auto& b : blocks) {
                if (std::find(f.hidden.begin(), f.hidden.end(), b) == f.hidden.end()) last_seen[b] = i;
            }
        }
        auto obs = perception::infer_stacks(f.frame, state.config.blocks, state.config.geometry);
        if (!obs) {
            ++t.errors;
            continue;
        }
        auto out = perception::reconcile(state, *obs, history);
        if (!out) {
            ++t.errors;
            continue;
        }
        for (const auto& e : out->events) {
            auto next = apply_transition(state, e);
            if (!next) {
                ++t.errors;
                break;
            }
            state = std::move(next).value();
        }
        bool eligible = true, exact = true, prefix = true;
        for (const auto& [pid, blocks] : f.truth) {
            const auto& placed = state.stacks.at(pid).placed;
            for (const auto& b : blocks) {
                auto it = last_seen.find(b);
                eligible = eligible && it != last_seen.end() && i - it->second < depth;
            }
            exact = exact && placed == blocks;
            prefix = prefix && placed.size() <= blocks.size() && std::equal(placed.begin(), placed.end(), blocks.begin());
        }
        t.wrong += prefix ? 0 : 1;
        if (eligible) {
            ++t.eligible;
            t.eligible_exact += exact ? 1 : 0;
        }
    }
    return t;
}

} // namespace cohrt::testkit
